//! CSV outputs. Every file has a header row and a fixed column order;
//! numbers use fixed decimals so equal runs give byte-identical files.

use std::io::Write;

use csv::Writer;

use crate::scenario::{SweepOutput, TransientRun};
use crate::sim::RunOutput;

pub type CsvResult = Result<(), csv::Error>;

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn opt3(x: Option<f64>) -> String {
    x.map(f3).unwrap_or_default()
}

pub const FRAME_HEADER: [&str; 9] =
    ["ue_id", "frame_index", "gen_ms", "size_bits", "enqueue_ms", "delivered_ms", "decoded_ms", "quality_db", "late_ms"];

/// Per-frame log. Undelivered frames leave the delivery columns empty and
/// report lateness up to the end of the run.
pub fn write_frames<W: Write>(w: W, out: &RunOutput, frame_interval_ms: f64, playout_offset_ms: f64) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(FRAME_HEADER)?;
    let horizon = out.end_ms;
    for frames in &out.frames {
        let decoded: Vec<Option<f64>> = frames.iter().map(|f| f.decoded_ms).collect();
        let first_gen = frames.first().map_or(0.0, |f| f.gen_ms);
        let play = crate::metrics::playout(&decoded, first_gen, frame_interval_ms, playout_offset_ms, horizon);
        for (f, late) in frames.iter().zip(&play.late_ms) {
            wr.write_record([
                f.ue_id.to_string(),
                f.frame_index.to_string(),
                f3(f.gen_ms),
                f.size_bits.to_string(),
                f3(f.enqueue_ms),
                opt3(f.delivered_ms),
                opt3(f.decoded_ms),
                f3(f.quality_db),
                f3(*late),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub const ALLOCATION_HEADER: [&str; 7] =
    ["timestamp_ms", "ue_id", "se", "g_n", "rbgs_allocated", "bitrate_mbps", "satisfied"];

/// UX controller decisions; `g_n` is empty when the target is unreachable.
pub fn write_allocation_log<W: Write>(w: W, out: &RunOutput) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(ALLOCATION_HEADER)?;
    for r in &out.allocation_log {
        wr.write_record([
            f3(r.timestamp_ms),
            r.ue_id.to_string(),
            f4(r.se),
            r.g_n.map(|g| g.to_string()).unwrap_or_default(),
            r.rbgs_allocated.to_string(),
            f4(r.bitrate_mbps),
            r.satisfied.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub const CONTROLLER_HEADER: [&str; 6] = ["timestamp_ms", "ue_id", "controller", "trigger", "value", "new_rate_mbps"];

pub fn write_controller_log<W: Write>(w: W, out: &RunOutput) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(CONTROLLER_HEADER)?;
    for r in &out.controller_log {
        wr.write_record([
            f3(r.timestamp_ms),
            r.ue_id.to_string(),
            r.controller.as_str().to_string(),
            r.trigger.as_str().to_string(),
            f4(r.value),
            f4(r.new_rate_mbps),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub const RUN_SUMMARY_HEADER: [&str; 7] =
    ["ue_id", "algorithm", "avg_bitrate_mbps", "pct_frames_at_target", "msd_ms", "p99_delay_ms", "satisfied"];

pub fn write_run_summary<W: Write>(w: W, outs: &[RunOutput]) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(RUN_SUMMARY_HEADER)?;
    for out in outs {
        for u in &out.metrics.ues {
            wr.write_record([
                u.ue_id.to_string(),
                out.algorithm.as_str().to_string(),
                f4(u.avg_bitrate_mbps),
                f3(100.0 * u.quality_fraction),
                f3(u.msd_ms),
                f3(u.p99_delay_ms),
                u.satisfied.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 5] = ["algorithm", "n_ues", "satisfaction_ratio", "avg_bitrate_mbps", "p99_delay_ms"];

pub fn write_sweep_summary<W: Write>(w: W, sweep: &SweepOutput) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(SWEEP_HEADER)?;
    for p in &sweep.points {
        wr.write_record([
            p.algorithm.as_str().to_string(),
            p.n_ues.to_string(),
            f4(p.satisfaction_ratio),
            f4(p.avg_bitrate_mbps),
            f3(p.p99_delay_ms),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_sweep_runs<W: Write>(w: W, sweep: &SweepOutput) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record([
        "algorithm",
        "n_ues",
        "replication",
        "seed",
        "satisfaction_ratio",
        "avg_bitrate_mbps",
        "p99_delay_ms",
        "max_msd_ms",
    ])?;
    for r in &sweep.runs {
        wr.write_record([
            r.algorithm.as_str().to_string(),
            r.n_ues.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            f4(r.satisfaction_ratio),
            f4(r.avg_bitrate_mbps),
            f3(r.p99_delay_ms),
            f3(r.max_msd_ms),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_capacity<W: Write>(w: W, sweep: &SweepOutput) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(["algorithm", "qoe_capacity", "threshold"])?;
    for (a, c) in &sweep.capacity {
        wr.write_record([a.as_str().to_string(), c.to_string(), f3(sweep.threshold)])?;
    }
    wr.flush()?;
    Ok(())
}

pub const TRANSIENT_HEADER: [&str; 6] =
    ["time_ms", "sinr_db", "source_bitrate_mbps", "frame_delay_ms", "displayed_quality_db", "stalled"];

pub fn write_transient<W: Write>(w: W, run: &TransientRun) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record(TRANSIENT_HEADER)?;
    for s in &run.series {
        wr.write_record([
            f3(s.time_ms),
            f3(s.sinr_db),
            f4(s.source_bitrate_mbps),
            opt3(s.frame_delay_ms),
            opt3(s.displayed_quality_db),
            u8::from(s.stalled).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_transient_summary<W: Write>(w: W, runs: &[TransientRun]) -> CsvResult {
    let mut wr = Writer::from_writer(w);
    wr.write_record([
        "algorithm",
        "drop_time_ms",
        "first_feedback_ms",
        "first_rate_change_ms",
        "first_decrease_ms",
        "adaptation_ms",
        "msd_ms",
        "stall_episodes",
    ])?;
    for r in runs {
        wr.write_record([
            r.output.algorithm.as_str().to_string(),
            f3(r.drop_time_ms),
            opt3(r.first_feedback_ms),
            opt3(r.first_rate_change_ms),
            opt3(r.first_decrease_ms),
            opt3(r.adaptation_ms()),
            f3(r.msd_ms),
            r.stall_episodes.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Algorithm, ScenarioConfig};
    use crate::scenario::{run_single, Inputs};
    use crate::sim::RunOptions;

    fn output(alg: Algorithm) -> RunOutput {
        let mut cfg = ScenarioConfig::default();
        cfg.sim.n_ues = 2;
        cfg.sim.duration_s = 0.5;
        let inputs = Inputs::load(&cfg).unwrap();
        run_single(&cfg, &inputs, alg, &RunOptions::default()).unwrap()
    }

    fn lines(buf: &[u8]) -> Vec<String> {
        String::from_utf8(buf.to_vec()).unwrap().lines().map(str::to_owned).collect()
    }

    #[test]
    fn frame_log_has_header_and_one_row_per_frame() {
        let out = output(Algorithm::MaxCap);
        let mut buf = Vec::new();
        write_frames(&mut buf, &out, 1000.0 / 60.0, 10.0).unwrap();
        let rows = lines(&buf);
        assert_eq!(rows[0], FRAME_HEADER.join(","));
        assert_eq!(rows.len() - 1, out.frames.iter().map(Vec::len).sum::<usize>());
        // fixed three decimals on gen_ms
        assert!(rows[1].split(',').nth(2).unwrap().split('.').nth(1).unwrap().len() == 3);
    }

    #[test]
    fn logs_are_byte_identical_across_runs() {
        for alg in [Algorithm::MaxMin, Algorithm::Prague] {
            let render = |out: &RunOutput| {
                let mut buf = Vec::new();
                write_allocation_log(&mut buf, out).unwrap();
                write_controller_log(&mut buf, out).unwrap();
                write_run_summary(&mut buf, std::slice::from_ref(out)).unwrap();
                buf
            };
            assert_eq!(render(&output(alg)), render(&output(alg)));
        }
    }

    #[test]
    fn controller_log_columns() {
        let out = output(Algorithm::Rtt);
        let mut buf = Vec::new();
        write_controller_log(&mut buf, &out).unwrap();
        let rows = lines(&buf);
        assert_eq!(rows[0], CONTROLLER_HEADER.join(","));
        assert!(rows.len() > 1);
        assert!(rows[1..].iter().all(|r| r.split(',').nth(2) == Some("rtt") && r.split(',').nth(3) == Some("rtt_report")));
    }
}
