//! Experiment orchestration: builds per-UE inputs from a scenario config
//! and runs single scenarios, UE-count sweeps and the step-drop transient.
//!
//! Random inputs are keyed by (replication, UE index), never by UE count
//! or algorithm, so every algorithm and every sweep point sees the same
//! channels, scenes and frame phases for a given UE.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Algorithm, ChannelConfig, ConfigError, ScenarioConfig};
use crate::metrics::{percentile, playout, SweepResult};
use crate::phy::{synthesize_trace, PhyError, SinrTrace, TraceKind};
use crate::qb_model::{QbError, SceneLibrary, SceneProcess, SceneTimeline};
use crate::rng::{derive, stream};
use crate::sim::{run, RunOptions, RunOutput, SimConfig, SimError, UeSetup};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scene model: {0}")]
    Scene(#[from] QbError),
    #[error("channel model: {0}")]
    Channel(#[from] PhyError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Loaded inputs shared by all runs of a scenario.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub library: SceneLibrary,
    pub traces: Vec<SinrTrace>,
}

impl Inputs {
    pub fn load(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        Ok(Inputs { library: cfg.scene_library()?, traces: cfg.trace_files()? })
    }
}

/// Seed of replication `rep` of a sweep.
pub fn replication_seed(base: u64, rep: u32) -> u64 {
    derive(base, u64::from(rep), "replication")
}

fn trace_samples(horizon_ms: f64, period_ms: f64) -> usize {
    (horizon_ms / period_ms).ceil() as usize + 1
}

/// SINR trace of UE `index` under the configured channel model.
pub fn ue_trace(cfg: &ScenarioConfig, inputs: &Inputs, index: u32, ue_seed: u64, horizon_ms: f64) -> Result<SinrTrace, ScenarioError> {
    let trace = match &cfg.channel {
        ChannelConfig::Constant { sinr_db } => {
            synthesize_trace(&TraceKind::Constant { sinr_db: *sinr_db }, horizon_ms.max(1.0), 2, ue_seed)?
        }
        ChannelConfig::StepDrop { before_db, after_db, drop_time_ms } => step_trace(*before_db, *after_db, *drop_time_ms, horizon_ms)?,
        ChannelConfig::RandomWalk { mean_db, std_db, coherence_ms, min_db, max_db, sample_period_ms } => {
            let kind = TraceKind::RandomWalk {
                mean_db: *mean_db,
                std_db: *std_db,
                correlation: (-sample_period_ms / coherence_ms).exp(),
                min_db: *min_db,
                max_db: *max_db,
            };
            synthesize_trace(&kind, *sample_period_ms, trace_samples(horizon_ms, *sample_period_ms), ue_seed)?
        }
        ChannelConfig::Ensemble(e) => {
            let mut rng = stream(ue_seed, 0, "placement");
            let indoor = rng.random::<f64>() < e.indoor_fraction;
            let ([lo, hi], std_db) = if indoor { (e.indoor_mean_db, e.indoor_std_db) } else { (e.outdoor_mean_db, e.outdoor_std_db) };
            let mean_db = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let kind = TraceKind::RandomWalk {
                mean_db,
                std_db,
                correlation: (-e.sample_period_ms / e.coherence_ms).exp(),
                min_db: e.min_db,
                max_db: e.max_db,
            };
            synthesize_trace(&kind, e.sample_period_ms, trace_samples(horizon_ms, e.sample_period_ms), ue_seed)?
        }
        ChannelConfig::File { .. } => {
            let n = inputs.traces.len();
            if n == 0 {
                return Err(ScenarioError::Config(ConfigError::Invalid {
                    field: "channel.paths".into(),
                    line: None,
                    msg: "no trace files loaded".into(),
                }));
            }
            inputs.traces[index as usize % n].clone()
        }
    };
    Ok(trace)
}

/// Step trace sampled at 1 ms so the drop lands on its exact instant.
pub fn step_trace(before_db: f64, after_db: f64, drop_time_ms: f64, horizon_ms: f64) -> Result<SinrTrace, PhyError> {
    synthesize_trace(&TraceKind::StepDrop { before_db, after_db, drop_time_ms }, 1.0, trace_samples(horizon_ms, 1.0), 0)
}

/// Per-UE inputs of a cell with `n_ues` UEs, drawn from `run_seed`.
pub fn build_ues(cfg: &ScenarioConfig, inputs: &Inputs, n_ues: u32, run_seed: u64) -> Result<Vec<UeSetup>, ScenarioError> {
    let horizon_ms = cfg.sim.duration_s * 1000.0 + cfg.sim.drain_grace_ms;
    let interval = 1000.0 / cfg.sim.fps;
    (0..n_ues)
        .map(|i| {
            let ue_seed = derive(run_seed, u64::from(i), "ue");
            let trace = ue_trace(cfg, inputs, i, ue_seed, horizon_ms)?;
            let scenes = SceneProcess {
                library: inputs.library.clone(),
                mean_duration: cfg.scenes.mean_duration_s,
                rng_seed: ue_seed,
            }
            .sample_timeline(horizon_ms / 1000.0)?;
            let frame_phase_ms = stream(ue_seed, 0, "phase").random_range(0.0..interval);
            Ok(UeSetup { ue_id: i, trace, scenes, frame_phase_ms, seed: ue_seed })
        })
        .collect()
}

/// One run of the configured cell (`sim.n_ues`, `sim.seed`).
pub fn run_single(cfg: &ScenarioConfig, inputs: &Inputs, algorithm: Algorithm, opts: &RunOptions) -> Result<RunOutput, ScenarioError> {
    let ues = build_ues(cfg, inputs, cfg.sim.n_ues, cfg.sim.seed)?;
    Ok(run(&SimConfig::from_scenario(cfg), &ues, algorithm, opts)?)
}

/// Summary of one sweep run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub algorithm: Algorithm,
    pub n_ues: u32,
    pub replication: u32,
    pub seed: u64,
    pub satisfaction_ratio: f64,
    pub avg_bitrate_mbps: f64,
    pub p99_delay_ms: f64,
    pub max_msd_ms: f64,
}

/// One sweep point of one algorithm, aggregated over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub n_ues: u32,
    pub satisfaction_ratio: f64,
    pub avg_bitrate_mbps: f64,
    /// p99 over the frames of every UE in every replication.
    pub p99_delay_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub runs: Vec<SweepRun>,
    pub points: Vec<SweepPoint>,
    pub results: BTreeMap<Algorithm, SweepResult>,
    pub capacity: BTreeMap<Algorithm, u32>,
    pub threshold: f64,
}

impl SweepOutput {
    pub fn point(&self, algorithm: Algorithm, n_ues: u32) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.algorithm == algorithm && p.n_ues == n_ues)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, ScenarioError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| ScenarioError::Pool(e.to_string()))
}

/// One sweep run with its pooled frame delays and per-UE bitrates.
type RunSamples = (SweepRun, Vec<f64>, Vec<f64>);

/// Runs every algorithm × UE count × replication. `jobs = 0` uses all cores.
pub fn sweep(cfg: &ScenarioConfig, inputs: &Inputs, algorithms: &[Algorithm], jobs: usize) -> Result<SweepOutput, ScenarioError> {
    let w = &cfg.sweep;
    let sim = SimConfig::from_scenario(cfg);
    let mut tasks = Vec::new();
    for &a in algorithms {
        for n in w.from..=w.to {
            for r in 0..w.replications {
                tasks.push((a, n, r));
            }
        }
    }
    let opts = RunOptions { record_logs: false, check_invariants: false };
    let results: Vec<Result<RunSamples, ScenarioError>> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(a, n, r)| {
                let seed = replication_seed(cfg.sim.seed, r);
                let ues = build_ues(cfg, inputs, n, seed)?;
                let out = run(&sim, &ues, a, &opts)?;
                let horizon = out.end_ms.max(sim.duration_ms());
                let delays: Vec<f64> =
                    out.frames.iter().flatten().map(|f| f.decoded_ms.unwrap_or(horizon) - f.gen_ms).collect();
                let bitrates: Vec<f64> = out.metrics.ues.iter().map(|u| u.avg_bitrate_mbps).collect();
                let m = &out.metrics;
                Ok((
                    SweepRun {
                        algorithm: a,
                        n_ues: n,
                        replication: r,
                        seed,
                        satisfaction_ratio: m.satisfaction_ratio(),
                        avg_bitrate_mbps: m.mean_bitrate_mbps(),
                        p99_delay_ms: percentile(&delays, 99.0).unwrap_or(0.0),
                        max_msd_ms: m.ues.iter().map(|u| u.msd_ms).fold(0.0, f64::max),
                    },
                    delays,
                    bitrates,
                ))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    let mut pooled: BTreeMap<(Algorithm, u32), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut sweep_results: BTreeMap<Algorithm, SweepResult> = BTreeMap::new();
    for res in results {
        let (run, delays, bitrates) = res?;
        let e = pooled.entry((run.algorithm, run.n_ues)).or_default();
        e.0.extend(delays);
        e.1.extend(bitrates);
        sweep_results.entry(run.algorithm).or_default().insert(run.n_ues, run.satisfaction_ratio);
        runs.push(run);
    }
    let mut points = Vec::new();
    for &a in algorithms {
        for n in w.from..=w.to {
            let (delays, bitrates) = pooled.get(&(a, n)).cloned().unwrap_or_default();
            points.push(SweepPoint {
                algorithm: a,
                n_ues: n,
                satisfaction_ratio: sweep_results.get(&a).and_then(|s| s.ratio(n, w.aggregate)).unwrap_or(0.0),
                avg_bitrate_mbps: if bitrates.is_empty() { 0.0 } else { bitrates.iter().sum::<f64>() / bitrates.len() as f64 },
                p99_delay_ms: percentile(&delays, 99.0).unwrap_or(0.0),
            });
        }
    }
    let capacity = algorithms
        .iter()
        .map(|&a| (a, sweep_results.get(&a).map_or(0, |s| s.qoe_capacity(w.capacity_threshold, w.aggregate))))
        .collect();
    Ok(SweepOutput { runs, points, results: sweep_results, capacity, threshold: w.capacity_threshold })
}

/// One row of a transient time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientSample {
    pub time_ms: f64,
    pub sinr_db: f64,
    pub source_bitrate_mbps: f64,
    /// End-to-end delay of the latest frame generated by this time.
    pub frame_delay_ms: Option<f64>,
    /// Quality of the frame on screen, if any has been shown.
    pub displayed_quality_db: Option<f64>,
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct TransientRun {
    pub output: RunOutput,
    pub series: Vec<TransientSample>,
    pub drop_time_ms: f64,
    /// First source-rate change after the drop.
    pub first_rate_change_ms: Option<f64>,
    /// First source-rate decrease after the drop.
    pub first_decrease_ms: Option<f64>,
    /// Arrival of the first controller input reflecting the post-drop
    /// channel: an allocation decision for UX-aware control, an RTT report
    /// or ECN echo otherwise.
    pub first_feedback_ms: Option<f64>,
    pub msd_ms: f64,
    pub stall_episodes: usize,
}

impl TransientRun {
    /// Time from the drop to the first rate decrease.
    pub fn adaptation_ms(&self) -> Option<f64> {
        self.first_decrease_ms.map(|t| t - self.drop_time_ms)
    }
}

/// Single-UE step-drop experiment under each algorithm, all on the same
/// trace, scene and seed.
pub fn transient(cfg: &ScenarioConfig, inputs: &Inputs, algorithms: &[Algorithm]) -> Result<Vec<TransientRun>, ScenarioError> {
    let t = &cfg.transient;
    let mut c = cfg.clone();
    c.sim.n_ues = 1;
    c.sim.duration_s = t.duration_s;
    let horizon_ms = t.duration_s * 1000.0 + c.sim.drain_grace_ms;
    let ue_seed = derive(c.sim.seed, 0, "ue");
    let scene = inputs
        .library
        .get(t.scene_id)
        .cloned()
        .ok_or(QbError::InvalidProcess(format!("transient.scene_id {} not in the scene library", t.scene_id)))?;
    let ue = UeSetup {
        ue_id: 0,
        trace: step_trace(t.before_db, t.after_db, t.drop_time_ms, horizon_ms)?,
        scenes: SceneTimeline::constant(scene, horizon_ms / 1000.0),
        frame_phase_ms: stream(ue_seed, 0, "phase").random_range(0.0..1000.0 / c.sim.fps),
        seed: ue_seed,
    };
    let sim = SimConfig::from_scenario(&c);
    let opts = RunOptions { record_logs: true, check_invariants: true };
    algorithms
        .par_iter()
        .map(|&a| {
            let out = run(&sim, std::slice::from_ref(&ue), a, &opts)?;
            Ok(summarize_transient(&sim, &ue, out, t.drop_time_ms, t.bin_ms))
        })
        .collect()
}

fn summarize_transient(sim: &SimConfig, ue: &UeSetup, out: RunOutput, drop_ms: f64, bin_ms: f64) -> TransientRun {
    let rates = &out.rate_changes[0];
    let frames = &out.frames[0];
    let first_rate_change_ms = rates.iter().map(|r| r.0).find(|&x| x > drop_ms);
    let first_decrease_ms = rates.windows(2).find(|w| w[1].0 > drop_ms && w[1].1 < w[0].1).map(|w| w[1].0);
    // UX decisions read the channel at their own timestamp; baseline inputs
    // summarise an interval ending at `observed`, so one ending exactly at
    // the drop holds no post-drop information.
    let ux = out.algorithm.is_ux_aware();
    let first_feedback_ms = out.feedback_log[0]
        .iter()
        .find(|&&(_, observed)| if ux { observed >= drop_ms } else { observed > drop_ms })
        .map(|&(arrival, _)| arrival);

    let horizon = out.end_ms.max(sim.duration_ms());
    let decoded: Vec<Option<f64>> = frames.iter().map(|f| f.decoded_ms).collect();
    let first_gen = frames.first().map_or(0.0, |f| f.gen_ms);
    let play = playout(&decoded, first_gen, sim.frame_interval_ms(), sim.params.playout_offset_ms, horizon);
    let shown: Vec<f64> = play
        .display_ms
        .iter()
        .zip(&decoded)
        .map(|(&s, d)| d.map_or(f64::INFINITY, |d| s.max(d)))
        .collect();

    let mut series = Vec::new();
    let (mut ri, mut fi, mut si, mut ei) = (0usize, 0usize, 0usize, 0usize);
    let n_bins = (sim.duration_ms() / bin_ms).floor() as usize;
    for b in 0..n_bins {
        let t = b as f64 * bin_ms;
        while ri + 1 < rates.len() && rates[ri + 1].0 <= t {
            ri += 1;
        }
        while fi < frames.len() && frames[fi].gen_ms <= t {
            fi += 1;
        }
        while si < shown.len() && shown[si] <= t {
            si += 1;
        }
        while ei < play.episodes.len() && play.episodes[ei].end_ms <= t {
            ei += 1;
        }
        let stalled = play.episodes.get(ei).is_some_and(|e| e.start_ms <= t && t < e.end_ms);
        series.push(TransientSample {
            time_ms: t,
            sinr_db: ue.trace.at(t),
            source_bitrate_mbps: rates.get(ri).map_or(0.0, |r| r.1),
            frame_delay_ms: fi.checked_sub(1).map(|i| frames[i].decoded_ms.unwrap_or(horizon) - frames[i].gen_ms),
            displayed_quality_db: si.checked_sub(1).map(|i| frames[i].quality_db),
            stalled,
        });
    }
    TransientRun {
        msd_ms: play.msd_ms(),
        stall_episodes: play.episodes.len(),
        output: out,
        series,
        drop_time_ms: drop_ms,
        first_rate_change_ms,
        first_decrease_ms,
        first_feedback_ms,
    }
}
