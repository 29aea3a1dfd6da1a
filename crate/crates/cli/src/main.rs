//! `uxrate`: runs single scenarios, UE-count sweeps and the step-drop
//! transient, writing CSV logs, summaries and SVG charts.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including unreadable
//! config or trace files), 1 for failures while running or writing outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uxrate_core::config::{parse_algorithms, Algorithm, ConfigError, ScenarioConfig};
use uxrate_core::report;
use uxrate_core::scenario::{self, Inputs, ScenarioError, SweepOutput, TransientRun};
use uxrate_core::sim::{RunOptions, SimConfig};
use uxrate_core::svg::{line_chart, Series};

#[derive(Parser)]
#[command(name = "uxrate", version, about = "QoE-aware rate allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one cell under each selected algorithm.
    Run(Common),
    /// Sweep the number of UEs per cell and compute QoE capacity.
    Sweep(Common),
    /// Single-UE step-drop experiment.
    Transient(Common),
    /// Parse and validate a configuration, then print the effective values.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Debug)]
struct AlgorithmList(Vec<Algorithm>);

fn parse_list(s: &str) -> Result<AlgorithmList, String> {
    parse_algorithms(s).map(AlgorithmList)
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "UXRATE_OUT_DIR", default_value = "uxrate-out")]
    out: PathBuf,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Comma-separated subset of max_cap, max_min, rtt, prague.
    #[arg(long, value_parser = parse_list)]
    algorithms: Option<AlgorithmList>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load(config: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    match config {
        Some(p) => Ok(ScenarioConfig::load(p)?),
        None => Ok(ScenarioConfig::from_toml("", Path::new("."))?),
    }
}

fn prepare(c: &Common) -> Result<(ScenarioConfig, Inputs), Failure> {
    let mut cfg = load(c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.sim.seed = seed;
    }
    if let Some(AlgorithmList(a)) = &c.algorithms {
        cfg.output.algorithms = a.clone();
    }
    let inputs = Inputs::load(&cfg)?;
    fs::create_dir_all(&c.out).map_err(|e| io_err(&c.out, e))?;
    let echo = c.out.join("effective_config.toml");
    fs::write(&echo, cfg.to_toml()).map_err(|e| io_err(&echo, e))?;
    Ok((cfg, inputs))
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), Failure> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| io_err(&path, e))?;
    Ok((BufWriter::new(f), path))
}

fn write_csv<F>(dir: &Path, name: &str, f: F) -> Result<(), Failure>
where
    F: FnOnce(BufWriter<File>) -> report::CsvResult,
{
    let (w, path) = create(dir, name)?;
    f(w).map_err(|e| io_err(&path, e))
}

fn write_svg(dir: &Path, name: &str, svg: String) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, svg).map_err(|e| io_err(&path, e))
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let (cfg, inputs) = prepare(c)?;
    let sim = SimConfig::from_scenario(&cfg);
    let opts = RunOptions { record_logs: true, check_invariants: false };
    let mut outs = Vec::new();
    for &a in &cfg.output.algorithms {
        let out = scenario::run_single(&cfg, &inputs, a, &opts)?;
        write_csv(&c.out, &format!("frames_{a}.csv"), |w| {
            report::write_frames(w, &out, sim.frame_interval_ms(), sim.params.playout_offset_ms)
        })?;
        if a.is_ux_aware() {
            write_csv(&c.out, &format!("allocation_log_{a}.csv"), |w| report::write_allocation_log(w, &out))?;
        } else {
            write_csv(&c.out, &format!("controller_log_{a}.csv"), |w| report::write_controller_log(w, &out))?;
        }
        println!(
            "{a}: {} UEs, satisfaction {:.3}, mean bitrate {:.2} Mbps",
            out.metrics.ues.len(),
            out.metrics.satisfaction_ratio(),
            out.metrics.mean_bitrate_mbps()
        );
        outs.push(out);
    }
    write_csv(&c.out, "run_summary.csv", |w| report::write_run_summary(w, &outs))
}

fn sweep_charts(dir: &Path, s: &SweepOutput, algorithms: &[Algorithm]) -> Result<(), Failure> {
    let series = |f: &dyn Fn(&scenario::SweepPoint) -> f64| -> Vec<Series> {
        algorithms
            .iter()
            .map(|&a| Series {
                name: a.to_string(),
                points: s.points.iter().filter(|p| p.algorithm == a).map(|p| (f64::from(p.n_ues), f(p))).collect(),
                markers: true,
            })
            .collect()
    };
    write_svg(dir, "satisfaction.svg", line_chart("Satisfied UEs", "UEs per cell", "ratio", &series(&|p| p.satisfaction_ratio)))?;
    write_svg(dir, "bitrate.svg", line_chart("Mean source bitrate", "UEs per cell", "Mbps", &series(&|p| p.avg_bitrate_mbps)))?;
    write_svg(dir, "p99_delay.svg", line_chart("p99 frame delay", "UEs per cell", "ms", &series(&|p| p.p99_delay_ms)))
}

fn cmd_sweep(c: &Common) -> Result<(), Failure> {
    let (cfg, inputs) = prepare(c)?;
    let algorithms = cfg.output.algorithms.clone();
    let s = scenario::sweep(&cfg, &inputs, &algorithms, c.jobs)?;
    write_csv(&c.out, "sweep_summary.csv", |w| report::write_sweep_summary(w, &s))?;
    write_csv(&c.out, "sweep_runs.csv", |w| report::write_sweep_runs(w, &s))?;
    write_csv(&c.out, "capacity.csv", |w| report::write_capacity(w, &s))?;
    if cfg.output.charts {
        sweep_charts(&c.out, &s, &algorithms)?;
    }
    println!("{} runs", s.runs.len());
    for (a, cap) in &s.capacity {
        println!("{a}: qoe_capacity {cap}");
    }
    Ok(())
}

fn transient_charts(dir: &Path, runs: &[TransientRun]) -> Result<(), Failure> {
    let series = |f: &dyn Fn(&scenario::TransientSample) -> Option<f64>| -> Vec<Series> {
        runs.iter()
            .map(|r| Series {
                name: r.output.algorithm.to_string(),
                points: r.series.iter().filter_map(|s| f(s).map(|v| (s.time_ms / 1000.0, v))).collect(),
                markers: false,
            })
            .collect()
    };
    write_svg(dir, "transient_bitrate.svg", line_chart("Source bitrate", "time (s)", "Mbps", &series(&|s| Some(s.source_bitrate_mbps))))?;
    write_svg(dir, "transient_delay.svg", line_chart("Frame delay", "time (s)", "ms", &series(&|s| s.frame_delay_ms)))?;
    write_svg(dir, "transient_quality.svg", line_chart("Displayed quality", "time (s)", "PSNR (dB)", &series(&|s| s.displayed_quality_db)))
}

fn cmd_transient(c: &Common) -> Result<(), Failure> {
    let (cfg, inputs) = prepare(c)?;
    let runs = scenario::transient(&cfg, &inputs, &cfg.output.algorithms)?;
    for r in &runs {
        let a = r.output.algorithm;
        write_csv(&c.out, &format!("transient_{a}.csv"), |w| report::write_transient(w, r))?;
        println!(
            "{a}: adaptation {} ms, MSD {:.1} ms, {} stall episodes",
            r.adaptation_ms().map_or("-".into(), |v| format!("{v:.1}")),
            r.msd_ms,
            r.stall_episodes
        );
    }
    write_csv(&c.out, "transient_summary.csv", |w| report::write_transient_summary(w, &runs))?;
    if cfg.output.charts {
        transient_charts(&c.out, &runs)?;
    }
    Ok(())
}

fn cmd_validate(config: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(config)?;
    Inputs::load(&cfg)?;
    print!("{}", cfg.to_toml());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Transient(c) => cmd_transient(c),
        Command::ValidateConfig { config } => cmd_validate(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
