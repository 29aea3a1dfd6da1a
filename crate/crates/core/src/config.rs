//! Scenario configuration: TOML sections per module, defaults for every
//! field, validation with line-level diagnostics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocators::{MaxCapOptions, MaxMinConfig, UxAlgorithm};
use crate::baselines::{L4sConfig, PragueConfig, RttConfig};
use crate::metrics::{Aggregate, SatisfactionCriteria};
use crate::phy::{LinkAbstractionConfig, SinrTrace, SlotConfig};
use crate::qb_model::SceneLibrary;
use crate::RateBounds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{}field `{field}`: {msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { field: String, line: Option<usize>, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

/// The four rate controllers compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    MaxCap,
    MaxMin,
    Rtt,
    Prague,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::MaxCap, Algorithm::MaxMin, Algorithm::Rtt, Algorithm::Prague];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::MaxCap => "max_cap",
            Algorithm::MaxMin => "max_min",
            Algorithm::Rtt => "rtt",
            Algorithm::Prague => "prague",
        }
    }

    pub fn is_ux_aware(self) -> bool {
        matches!(self, Algorithm::MaxCap | Algorithm::MaxMin)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "max_cap" | "maxcap" => Ok(Algorithm::MaxCap),
            "max_min" | "maxmin" => Ok(Algorithm::MaxMin),
            "rtt" => Ok(Algorithm::Rtt),
            "prague" | "l4s" => Ok(Algorithm::Prague),
            other => Err(format!("unknown algorithm `{other}` (expected max_cap, max_min, rtt or prague)")),
        }
    }
}

/// Parses a comma-separated algorithm list.
pub fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>, String> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let a: Algorithm = part.parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err("empty algorithm list".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub n_ues: u32,
    pub duration_s: f64,
    pub seed: u64,
    pub fps: f64,
    pub encode_delay_ms: f64,
    pub backhaul_delay_ms: f64,
    pub decode_delay_ms: f64,
    /// Uplink wait added to the backhaul delay on the feedback path.
    pub uplink_wait_ms: Option<f64>,
    pub playout_offset_ms: f64,
    pub harq_delay_slots: u32,
    /// Relative std of frame sizes; 0 keeps sizes at rate/fps.
    pub frame_size_jitter: f64,
    /// Extra simulated time after the last frame so queues can drain.
    pub drain_grace_ms: f64,
    /// Packet size for ECN marking and RTT sampling.
    pub packet_bits: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            n_ues: 6,
            duration_s: 30.0,
            seed: 1,
            fps: 60.0,
            encode_delay_ms: 1.0,
            backhaul_delay_ms: 1.0,
            decode_delay_ms: 1.0,
            uplink_wait_ms: None,
            playout_offset_ms: 10.0,
            harq_delay_slots: 4,
            frame_size_jitter: 0.0,
            drain_grace_ms: 1000.0,
            packet_bits: 12_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub r_min_mbps: f64,
    pub r_max_mbps: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { r_min_mbps: RateBounds::TABLE.min, r_max_mbps: RateBounds::TABLE.max }
    }
}

impl SourceConfig {
    pub fn bounds(&self) -> RateBounds {
        RateBounds { min: self.r_min_mbps, max: self.r_max_mbps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenesConfig {
    /// CSV scene library; the built-in four scenes when absent.
    pub library: Option<PathBuf>,
    pub mean_duration_s: f64,
}

impl Default for ScenesConfig {
    fn default() -> Self {
        ScenesConfig { library: None, mean_duration_s: 3.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UxConfig {
    pub t_win_ms: f64,
    pub period_ms: f64,
    pub signaling_delay_ms: f64,
    pub target_db: f64,
    pub d_stall_ms: f64,
    pub q_min_db: f64,
    pub q_max_db: f64,
    pub tolerance_db: f64,
    pub strict_admission: bool,
    pub round_robin_remainder: bool,
    /// Feed the allocator `SE · (1 − target BLER)` so allocations account
    /// for HARQ retransmissions.
    pub bler_aware_se: bool,
    /// RBGs per window withheld from the allocator as queueing headroom.
    pub rbg_reserve: u32,
}

impl Default for UxConfig {
    fn default() -> Self {
        UxConfig {
            t_win_ms: 15.0,
            period_ms: 33.0,
            signaling_delay_ms: 1.0,
            target_db: 35.0,
            d_stall_ms: 50.0,
            q_min_db: 30.0,
            q_max_db: 40.0,
            tolerance_db: 0.5,
            strict_admission: false,
            round_robin_remainder: false,
            bler_aware_se: true,
            rbg_reserve: 8,
        }
    }
}

impl UxConfig {
    pub fn maxmin(&self) -> MaxMinConfig {
        MaxMinConfig { q_min: self.q_min_db, q_max: self.q_max_db, tolerance: self.tolerance_db }
    }

    pub fn maxcap(&self) -> MaxCapOptions {
        MaxCapOptions { strict_admission: self.strict_admission, round_robin_remainder: self.round_robin_remainder }
    }

    pub fn algorithm(&self, alg: Algorithm) -> Option<UxAlgorithm> {
        match alg {
            Algorithm::MaxCap => Some(UxAlgorithm::MaxCap(self.maxcap())),
            Algorithm::MaxMin => Some(UxAlgorithm::MaxMin(self.maxmin())),
            _ => None,
        }
    }

    pub fn criteria(&self) -> SatisfactionCriteria {
        SatisfactionCriteria { target_db: self.target_db, d_stall_ms: self.d_stall_ms, ..Default::default() }
    }
}

/// Per-UE SINR population used when no traces are supplied.
///
/// Each UE is indoor with probability `indoor_fraction`, otherwise outdoor.
/// Its mean SINR is uniform over the class range and it fluctuates around
/// that mean as a Gauss–Markov process with the class std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub sample_period_ms: f64,
    pub indoor_fraction: f64,
    pub indoor_mean_db: [f64; 2],
    pub indoor_std_db: f64,
    pub outdoor_mean_db: [f64; 2],
    pub outdoor_std_db: f64,
    /// Correlation time of the fluctuation (1/e decay).
    pub coherence_ms: f64,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            sample_period_ms: 10.0,
            indoor_fraction: 0.5,
            indoor_mean_db: [5.0, 22.0],
            indoor_std_db: 2.0,
            outdoor_mean_db: [15.0, 30.0],
            outdoor_std_db: 4.0,
            coherence_ms: 1000.0,
            min_db: -10.0,
            max_db: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelConfig {
    Ensemble(EnsembleConfig),
    Constant {
        sinr_db: f64,
    },
    RandomWalk {
        mean_db: f64,
        std_db: f64,
        coherence_ms: f64,
        #[serde(default = "default_min_db")]
        min_db: f64,
        #[serde(default = "default_max_db")]
        max_db: f64,
        #[serde(default = "default_sample_period")]
        sample_period_ms: f64,
    },
    StepDrop {
        before_db: f64,
        after_db: f64,
        drop_time_ms: f64,
    },
    /// One trace file per UE, reused cyclically when there are more UEs.
    File {
        paths: Vec<PathBuf>,
    },
}

fn default_min_db() -> f64 {
    -10.0
}
fn default_max_db() -> f64 {
    30.0
}
fn default_sample_period() -> f64 {
    10.0
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig::Ensemble(EnsembleConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub from: u32,
    pub to: u32,
    pub replications: u32,
    pub capacity_threshold: f64,
    pub aggregate: Aggregate,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { from: 1, to: 10, replications: 10, capacity_threshold: 0.9, aggregate: Aggregate::Mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientConfig {
    pub duration_s: f64,
    pub before_db: f64,
    pub after_db: f64,
    pub drop_time_ms: f64,
    /// Scene held for the whole run; a switching scene would blur the
    /// response to the drop.
    pub scene_id: u32,
    /// Resolution of the exported time series.
    pub bin_ms: f64,
}

impl Default for TransientConfig {
    fn default() -> Self {
        TransientConfig { duration_s: 10.0, before_db: 25.0, after_db: 0.0, drop_time_ms: 5000.0, scene_id: 4, bin_ms: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub algorithms: Vec<Algorithm>,
    /// Write per-frame and controller logs for every sweep run.
    pub sweep_logs: bool,
    pub charts: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { algorithms: Algorithm::ALL.to_vec(), sweep_logs: false, charts: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimParams,
    pub slot: SlotConfig,
    pub link: LinkAbstractionConfig,
    pub source: SourceConfig,
    pub scenes: ScenesConfig,
    pub ux: UxConfig,
    pub rtt: RttConfig,
    pub l4s: L4sConfig,
    pub prague: PragueConfig,
    pub channel: ChannelConfig,
    pub sweep: SweepConfig,
    pub transient: TransientConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    /// Parses and validates TOML text. Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate().map_err(|e| match e {
            ConfigError::Invalid { field, line: None, msg } => {
                let line = locate(text, &field);
                ConfigError::Invalid { field, line, msg }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), msg: e.to_string() })?;
        // Absolute base so the echoed effective config stays valid elsewhere.
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = parent.canonicalize().unwrap_or_else(|_| parent.to_path_buf());
        Self::from_toml(&text, &base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = self.scenes.library.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let ChannelConfig::File { paths } = &mut self.channel {
            for p in paths.iter_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn feedback_delay_ms(&self) -> f64 {
        self.sim.backhaul_delay_ms + self.sim.uplink_wait_ms.unwrap_or_else(|| self.slot.pattern_duration_ms())
    }

    pub fn criteria(&self) -> SatisfactionCriteria {
        self.ux.criteria()
    }

    pub fn scene_library(&self) -> Result<SceneLibrary, ConfigError> {
        match &self.scenes.library {
            None => Ok(SceneLibrary::default_library()),
            Some(p) => SceneLibrary::load(p).map_err(|e| ConfigError::Invalid {
                field: "scenes.library".into(),
                line: None,
                msg: e.to_string(),
            }),
        }
    }

    /// Loads the configured trace files; a missing file is a config error
    /// naming the path.
    pub fn trace_files(&self) -> Result<Vec<SinrTrace>, ConfigError> {
        match &self.channel {
            ChannelConfig::File { paths } => paths
                .iter()
                .map(|p| SinrTrace::load(p).map_err(|e| ConfigError::Io { path: p.clone(), msg: e.to_string() }))
                .collect(),
            _ => Ok(Vec::new()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        check(s.duration_s > 0.0 && s.duration_s.is_finite(), "sim.duration_s", "must be > 0")?;
        check(s.fps > 0.0 && s.fps.is_finite(), "sim.fps", "must be > 0")?;
        for (name, v) in [
            ("sim.encode_delay_ms", s.encode_delay_ms),
            ("sim.backhaul_delay_ms", s.backhaul_delay_ms),
            ("sim.decode_delay_ms", s.decode_delay_ms),
            ("sim.playout_offset_ms", s.playout_offset_ms),
            ("sim.drain_grace_ms", s.drain_grace_ms),
            ("sim.uplink_wait_ms", s.uplink_wait_ms.unwrap_or(0.0)),
        ] {
            check(v >= 0.0 && v.is_finite(), name, "must be >= 0")?;
        }
        check((0.0..0.5).contains(&s.frame_size_jitter), "sim.frame_size_jitter", "must be in [0, 0.5)")?;
        check(s.packet_bits > 0, "sim.packet_bits", "must be > 0")?;

        self.slot.validate().map_err(|e| invalid("slot", e))?;
        if self.slot.rbgs_in_slot(0) == 0 && crate::phy::rbg_budget(self.slot.pattern_duration_ms(), &self.slot) == 0 {
            return Err(invalid("slot.pattern", "pattern has no downlink capacity"));
        }
        self.link.validate().map_err(|e| invalid("link", e))?;

        let b = &self.source;
        check(b.r_min_mbps > 0.0, "source.r_min_mbps", "must be > 0")?;
        check(b.r_min_mbps < b.r_max_mbps, "source.r_min_mbps", "must be below source.r_max_mbps")?;
        check(self.scenes.mean_duration_s > 0.0, "scenes.mean_duration_s", "must be > 0")?;

        let u = &self.ux;
        check(u.t_win_ms > 0.0, "ux.t_win_ms", "must be > 0")?;
        check(crate::phy::rbg_budget(u.t_win_ms, &self.slot) > 0, "ux.t_win_ms", "window holds no downlink RBGs")?;
        check(u.rbg_reserve < crate::phy::rbg_budget(u.t_win_ms, &self.slot), "ux.rbg_reserve", "must leave at least one RBG per window")?;
        check(u.period_ms > 0.0, "ux.period_ms", "must be > 0")?;
        check(u.signaling_delay_ms >= 0.0, "ux.signaling_delay_ms", "must be >= 0")?;
        check(u.d_stall_ms > 0.0, "ux.d_stall_ms", "must be > 0")?;
        check(u.q_min_db < u.q_max_db, "ux.q_min_db", "must be below ux.q_max_db")?;
        check(u.tolerance_db > 0.0, "ux.tolerance_db", "must be > 0")?;

        self.rtt.validate().map_err(|e| invalid("rtt", e))?;
        self.l4s.validate().map_err(|e| invalid("l4s", e))?;
        self.prague.validate().map_err(|e| invalid("prague", e))?;

        match &self.channel {
            ChannelConfig::Ensemble(e) => {
                check(e.sample_period_ms > 0.0, "channel.sample_period_ms", "must be > 0")?;
                check((0.0..=1.0).contains(&e.indoor_fraction), "channel.indoor_fraction", "must be in [0, 1]")?;
                check(e.indoor_mean_db[0] <= e.indoor_mean_db[1], "channel.indoor_mean_db", "range must be ordered")?;
                check(e.outdoor_mean_db[0] <= e.outdoor_mean_db[1], "channel.outdoor_mean_db", "range must be ordered")?;
                check(e.indoor_std_db >= 0.0, "channel.indoor_std_db", "must be >= 0")?;
                check(e.outdoor_std_db >= 0.0, "channel.outdoor_std_db", "must be >= 0")?;
                check(e.coherence_ms > 0.0, "channel.coherence_ms", "must be > 0")?;
                check(e.min_db <= e.max_db, "channel.min_db", "must not exceed channel.max_db")?;
            }
            ChannelConfig::RandomWalk { std_db, coherence_ms, min_db, max_db, sample_period_ms, .. } => {
                check(*std_db >= 0.0, "channel.std_db", "must be >= 0")?;
                check(*coherence_ms > 0.0, "channel.coherence_ms", "must be > 0")?;
                check(min_db <= max_db, "channel.min_db", "must not exceed channel.max_db")?;
                check(*sample_period_ms > 0.0, "channel.sample_period_ms", "must be > 0")?;
            }
            ChannelConfig::StepDrop { drop_time_ms, .. } => {
                check(*drop_time_ms >= 0.0, "channel.drop_time_ms", "must be >= 0")?;
            }
            ChannelConfig::Constant { .. } => {}
            ChannelConfig::File { paths } => {
                check(!paths.is_empty(), "channel.paths", "needs at least one trace file")?;
                for p in paths {
                    if !p.is_file() {
                        return Err(ConfigError::Io { path: p.clone(), msg: "trace file not found".into() });
                    }
                }
            }
        }
        if let Some(p) = &self.scenes.library {
            if !p.is_file() {
                return Err(ConfigError::Io { path: p.clone(), msg: "scene library not found".into() });
            }
        }

        let w = &self.sweep;
        check(w.from >= 1, "sweep.from", "must be >= 1")?;
        check(w.from <= w.to, "sweep.from", "sweep range is empty (from > to)")?;
        check(w.replications >= 1, "sweep.replications", "must be >= 1")?;
        check((0.0..=1.0).contains(&w.capacity_threshold), "sweep.capacity_threshold", "must be in [0, 1]")?;

        let t = &self.transient;
        check(t.duration_s > 0.0, "transient.duration_s", "must be > 0")?;
        check(
            t.drop_time_ms >= 0.0 && t.drop_time_ms < t.duration_s * 1000.0,
            "transient.drop_time_ms",
            "must fall inside the run",
        )?;
        check(t.bin_ms > 0.0, "transient.bin_ms", "must be > 0")?;
        check(!self.output.algorithms.is_empty(), "output.algorithms", "must list at least one algorithm")?;
        Ok(())
    }
}

fn check(ok: bool, field: &str, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field: field.into(), line: None, msg: msg.into() })
    }
}

/// Wraps a module validation error, lifting the field it names into the
/// dotted path when the message starts with one.
fn invalid(section: &str, err: impl fmt::Display) -> ConfigError {
    let msg = err.to_string();
    let field = msg
        .split(|c: char| c == ':' || c.is_whitespace())
        .find(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase() || c == '_' || c.is_ascii_digit()) && w.contains('_'))
        .map(|w| format!("{section}.{w}"))
        .unwrap_or_else(|| section.to_string());
    ConfigError::Invalid { field, line: None, msg }
}

/// 1-based line where `section.key` is set, or where the section starts.
pub fn locate(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.split_once('.').unwrap_or((dotted, ""));
    let mut in_section = false;
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            in_section = name == section;
            if in_section {
                header = Some(i + 1);
            }
            continue;
        }
        if in_section && !key.is_empty() {
            let lhs = line.split('=').next().unwrap_or("").trim();
            if line.contains('=') && lhs == key {
                return Some(i + 1);
            }
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::from_toml(text, Path::new("."))
    }

    #[test]
    fn empty_config_is_the_default_setup() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.sim.fps, 60.0);
        assert_eq!(cfg.ux.t_win_ms, 15.0);
        assert_eq!(cfg.rtt.alpha_up, 1.1);
        assert_eq!(cfg.l4s.beta_high_ms, 17.0);
        assert_eq!(cfg.source.bounds(), RateBounds::TABLE);
        assert_eq!(cfg.feedback_delay_ms(), 3.5);
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ScenarioConfig::default();
        cfg.sim.n_ues = 3;
        cfg.channel = ChannelConfig::StepDrop { before_db: 20.0, after_db: 2.0, drop_time_ms: 1000.0 };
        cfg.output.algorithms = vec![Algorithm::Rtt];
        let back = parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let ens = parse(&ScenarioConfig::default().to_toml()).unwrap();
        assert_eq!(ens, ScenarioConfig::default());
    }

    #[test]
    fn inverted_thresholds_name_field_and_line() {
        let text = "[sim]\nn_ues = 2\n\n[rtt]\nbeta_low_ms = 12.0\nbeta_high_ms = 10.0\n";
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rtt.beta_low_ms"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");

        let l4s = parse("[l4s]\nbeta_high_ms = 2.0\n").unwrap_err().to_string();
        assert!(l4s.contains("l4s.beta_low_ms"), "{l4s}");
    }

    #[test]
    fn unknown_keys_and_bad_types_report_lines() {
        let err = parse("[ux]\nt_win = 15\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse("[sim]\nfps = \"sixty\"\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn missing_trace_file_names_path() {
        let err = parse("[channel]\nkind = \"file\"\npaths = [\"/nonexistent/ue0.trace\"]\n").unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/ue0.trace"));
    }

    #[test]
    fn empty_sweep_range_rejected() {
        let err = parse("[sweep]\nfrom = 5\nto = 3\n").unwrap_err().to_string();
        assert!(err.contains("sweep.from") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn algorithm_names() {
        assert_eq!(parse_algorithms("maxcap, max-min,RTT,prague").unwrap(), Algorithm::ALL.to_vec());
        assert_eq!(parse_algorithms("rtt,rtt").unwrap(), vec![Algorithm::Rtt]);
        assert!(parse_algorithms("bbr").is_err());
        assert!(parse_algorithms("").is_err());
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
    }

    #[test]
    fn locate_finds_key_or_header() {
        let text = "# c\n[ux]\n  q_min_db = 41\n[sim]\nfps=1\n";
        assert_eq!(locate(text, "ux.q_min_db"), Some(3));
        assert_eq!(locate(text, "sim.fps"), Some(5));
        assert_eq!(locate(text, "sim.seed"), Some(4));
        assert_eq!(locate(text, "rtt.window_ms"), None);
    }
}
