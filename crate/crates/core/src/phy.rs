//! Link abstraction: SINR traces, SINR→SE mapping, bits per RBG and TDD
//! slot arithmetic.
//!
//! Transport block sizes are approximated by resource-element counting:
//! `floor(SE · PRBs/RBG · 12 subcarriers · data symbols · (1 − overhead))`.

use std::fmt;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;

const SUBCARRIERS_PER_PRB: f64 = 12.0;

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("invalid slot configuration: {0}")]
    Slot(String),
    #[error("invalid link configuration: {0}")]
    Link(String),
    #[error("invalid trace parameters: {0}")]
    Trace(String),
    #[error("trace file {path}: {msg}")]
    TraceFile { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Downlink,
    Special,
    Uplink,
}

/// TDD numerology and pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlotConfig {
    pub scs_khz: u32,
    /// Cyclic slot pattern over {D, S, U}.
    pub pattern: String,
    pub rbgs_per_slot: u32,
    /// Fraction of a slot's RBGs usable for downlink data in S slots.
    /// 0 leaves S slots out of both the budget and the scheduler.
    pub special_slot_weight: f64,
}

impl Default for SlotConfig {
    fn default() -> Self {
        SlotConfig { scs_khz: 30, pattern: "DDDSU".into(), rbgs_per_slot: 4, special_slot_weight: 0.0 }
    }
}

impl SlotConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.scs_khz == 0 || !self.scs_khz.is_multiple_of(15) {
            return Err(PhyError::Slot(format!("scs_khz must be a positive multiple of 15, got {}", self.scs_khz)));
        }
        if self.pattern.is_empty() {
            return Err(PhyError::Slot("pattern must not be empty".into()));
        }
        if let Some(c) = self.pattern.chars().find(|c| !matches!(c, 'D' | 'S' | 'U')) {
            return Err(PhyError::Slot(format!("pattern contains '{c}', expected only D, S, U")));
        }
        if self.rbgs_per_slot == 0 {
            return Err(PhyError::Slot("rbgs_per_slot must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.special_slot_weight) {
            return Err(PhyError::Slot(format!(
                "special_slot_weight must be in [0, 1], got {}",
                self.special_slot_weight
            )));
        }
        Ok(())
    }

    pub fn slot_duration_ms(&self) -> f64 {
        1.0 / (f64::from(self.scs_khz) / 15.0)
    }

    pub fn pattern_duration_ms(&self) -> f64 {
        self.slot_duration_ms() * self.pattern.len() as f64
    }

    /// Kind of the `index`-th slot since time zero.
    pub fn slot_kind(&self, index: u64) -> SlotKind {
        let b = self.pattern.as_bytes()[(index % self.pattern.len() as u64) as usize];
        match b {
            b'D' => SlotKind::Downlink,
            b'S' => SlotKind::Special,
            _ => SlotKind::Uplink,
        }
    }

    /// Downlink RBGs available in the `index`-th slot.
    pub fn rbgs_in_slot(&self, index: u64) -> u32 {
        match self.slot_kind(index) {
            SlotKind::Downlink => self.rbgs_per_slot,
            SlotKind::Special => (self.special_slot_weight * f64::from(self.rbgs_per_slot)).floor() as u32,
            SlotKind::Uplink => 0,
        }
    }

    /// Number of whole slots fitting in `t_win_ms`.
    pub fn slots_in_window(&self, t_win_ms: f64) -> u64 {
        // tolerate 15 / 0.5 landing a hair under 30
        (t_win_ms / self.slot_duration_ms() + 1e-9).floor().max(0.0) as u64
    }
}

/// Count of D slots among the whole slots of a window starting at a
/// pattern boundary. S and U slots are excluded.
pub fn dl_slots_in_window(t_win_ms: f64, slot: &SlotConfig) -> u64 {
    let n = slot.slots_in_window(t_win_ms);
    let per_cycle = slot.pattern.bytes().filter(|&b| b == b'D').count() as u64;
    let len = slot.pattern.len() as u64;
    let full = n / len;
    let partial = (0..n % len).filter(|&i| slot.slot_kind(i) == SlotKind::Downlink).count() as u64;
    full * per_cycle + partial
}

/// RBGs available for downlink data in a window of `t_win_ms`.
pub fn rbg_budget(t_win_ms: f64, slot: &SlotConfig) -> u32 {
    let n = slot.slots_in_window(t_win_ms);
    let d = dl_slots_in_window(t_win_ms, slot) as u32 * slot.rbgs_per_slot;
    if slot.special_slot_weight == 0.0 {
        return d;
    }
    let s: u32 = (0..n).filter(|&i| slot.slot_kind(i) == SlotKind::Special).map(|i| slot.rbgs_in_slot(i)).sum();
    d + s
}

/// Parameters of the SINR → SE → bits-per-RBG chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkAbstractionConfig {
    /// Spectral efficiency cap (bits/s/Hz).
    pub se_max: f64,
    /// Fraction of Shannon capacity achieved.
    pub attenuation: f64,
    pub prb_per_rbg: u32,
    pub data_symbols_per_slot: u32,
    /// Fraction of resource elements lost to headers and signaling.
    pub overhead_fraction: f64,
    pub target_bler: f64,
}

impl Default for LinkAbstractionConfig {
    fn default() -> Self {
        LinkAbstractionConfig {
            se_max: 7.4,
            attenuation: 0.75,
            prb_per_rbg: 68,
            data_symbols_per_slot: 12,
            overhead_fraction: 0.14,
            target_bler: 0.10,
        }
    }
}

impl LinkAbstractionConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return Err(PhyError::Link(format!("attenuation must be in (0, 1], got {}", self.attenuation)));
        }
        if !(0.0..1.0).contains(&self.overhead_fraction) {
            return Err(PhyError::Link(format!("overhead_fraction must be in [0, 1), got {}", self.overhead_fraction)));
        }
        if !(0.0..=1.0).contains(&self.target_bler) {
            return Err(PhyError::Link(format!("target_bler must be in [0, 1], got {}", self.target_bler)));
        }
        if !(self.se_max > 0.0 && self.se_max.is_finite()) {
            return Err(PhyError::Link(format!("se_max must be > 0, got {}", self.se_max)));
        }
        if self.prb_per_rbg == 0 || self.data_symbols_per_slot == 0 {
            return Err(PhyError::Link("prb_per_rbg and data_symbols_per_slot must be >= 1".into()));
        }
        Ok(())
    }
}

/// Attenuated Shannon mapping, capped at `se_max` and floored at zero.
pub fn sinr_to_se(sinr_db: f64, cfg: &LinkAbstractionConfig) -> f64 {
    let linear = 10f64.powf(sinr_db / 10.0);
    let se = cfg.attenuation * (1.0 + linear).log2();
    if se.is_nan() {
        return 0.0;
    }
    se.min(cfg.se_max).max(0.0)
}

/// Application bits one RBG carries at spectral efficiency `se`.
pub fn bits_per_rbg(se: f64, cfg: &LinkAbstractionConfig) -> u64 {
    let res = f64::from(cfg.prb_per_rbg) * SUBCARRIERS_PER_PRB * f64::from(cfg.data_symbols_per_slot);
    let bits = se.max(0.0) * res * (1.0 - cfg.overhead_fraction);
    bits.floor() as u64
}

/// SINR samples with zero-order hold between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrTrace {
    sample_period_ms: f64,
    samples: Vec<f64>,
}

impl SinrTrace {
    pub fn new(sample_period_ms: f64, samples: Vec<f64>) -> Result<Self, PhyError> {
        if !(sample_period_ms > 0.0 && sample_period_ms.is_finite()) {
            return Err(PhyError::Trace(format!("sample_period must be > 0, got {sample_period_ms}")));
        }
        if samples.is_empty() {
            return Err(PhyError::Trace("trace needs at least one sample".into()));
        }
        if samples.iter().any(|s| s.is_nan()) {
            return Err(PhyError::Trace("trace contains NaN".into()));
        }
        Ok(SinrTrace { sample_period_ms, samples })
    }

    pub fn sample_period_ms(&self) -> f64 {
        self.sample_period_ms
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration_ms(&self) -> f64 {
        self.sample_period_ms * self.samples.len() as f64
    }

    /// SINR (dB) at `t_ms`; holds the last sample past the end.
    pub fn at(&self, t_ms: f64) -> f64 {
        let i = (t_ms.max(0.0) / self.sample_period_ms).floor() as usize;
        self.samples[i.min(self.samples.len() - 1)]
    }

    /// Parses the text format: a `sample_period_ms=<v>` header (a bare
    /// number is also accepted) followed by one dB value per line. Blank
    /// lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, PhyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| PhyError::Trace("missing header line".into()))?;
        let value = header
            .strip_prefix("sample_period_ms")
            .map(|rest| rest.trim_start_matches(|c: char| c == '=' || c == ':' || c.is_whitespace()))
            .unwrap_or(header);
        let period: f64 = value
            .parse()
            .map_err(|_| PhyError::Trace(format!("line {hline}: bad header '{header}'")))?;
        let mut samples = Vec::new();
        for (n, l) in lines {
            let v: f64 = l.parse().map_err(|_| PhyError::Trace(format!("line {n}: bad SINR value '{l}'")))?;
            samples.push(v);
        }
        SinrTrace::new(period, samples)
    }

    pub fn load(path: &Path) -> Result<Self, PhyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PhyError::TraceFile { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text).map_err(|e| PhyError::TraceFile { path: path.display().to_string(), msg: e.to_string() })
    }
}

impl fmt::Display for SinrTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sample_period_ms={}", self.sample_period_ms)?;
        for s in &self.samples {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Synthetic trace families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceKind {
    Constant {
        sinr_db: f64,
    },
    /// Stationary Gauss–Markov process around `mean_db`, clipped to
    /// `[min_db, max_db]`.
    RandomWalk {
        mean_db: f64,
        std_db: f64,
        /// Sample-to-sample correlation in [0, 1).
        correlation: f64,
        min_db: f64,
        max_db: f64,
    },
    StepDrop {
        before_db: f64,
        after_db: f64,
        drop_time_ms: f64,
    },
}

/// Builds `n_samples` samples of the given kind.
pub fn synthesize_trace(kind: &TraceKind, sample_period_ms: f64, n_samples: usize, seed: u64) -> Result<SinrTrace, PhyError> {
    if n_samples == 0 {
        return Err(PhyError::Trace("n_samples must be >= 1".into()));
    }
    let samples = match *kind {
        TraceKind::Constant { sinr_db } => vec![sinr_db; n_samples],
        TraceKind::StepDrop { before_db, after_db, drop_time_ms } => {
            if !(drop_time_ms >= 0.0) {
                return Err(PhyError::Trace(format!("drop_time_ms must be >= 0, got {drop_time_ms}")));
            }
            (0..n_samples)
                .map(|k| if (k as f64) * sample_period_ms < drop_time_ms { before_db } else { after_db })
                .collect()
        }
        TraceKind::RandomWalk { mean_db, std_db, correlation, min_db, max_db } => {
            if !(std_db >= 0.0) || !(0.0..1.0).contains(&correlation) || min_db > max_db {
                return Err(PhyError::Trace(format!(
                    "random walk needs std_db >= 0, correlation in [0, 1), min_db <= max_db; got {std_db}, {correlation}, [{min_db}, {max_db}]"
                )));
            }
            let mut rng: ChaCha8Rng = stream(seed, 0, "sinr");
            let innov = std_db * (1.0 - correlation * correlation).sqrt();
            let z0: f64 = StandardNormal.sample(&mut rng);
            let mut dev = std_db * z0;
            let mut out = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                out.push((mean_db + dev).clamp(min_db, max_db));
                let z: f64 = StandardNormal.sample(&mut rng);
                dev = correlation * dev + innov * z;
            }
            out
        }
    };
    SinrTrace::new(sample_period_ms, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link() -> LinkAbstractionConfig {
        LinkAbstractionConfig::default()
    }

    #[test]
    fn se_mapping() {
        assert_eq!(sinr_to_se(-400.0, &link()), 0.0);
        assert_eq!(sinr_to_se(f64::NEG_INFINITY, &link()), 0.0);
        assert!((sinr_to_se(0.0, &link()) - 0.75).abs() < 1e-12);
        assert_eq!(sinr_to_se(40.0, &link()), 7.4);
    }

    #[test]
    fn bits_per_rbg_values() {
        assert_eq!(bits_per_rbg(0.0, &link()), 0);
        // 4 * 68 * 12 * 12 * 0.86 = 33684.48
        assert_eq!(bits_per_rbg(4.0, &link()), 33_684);
        let mut prev = 0;
        for i in 0..=740 {
            let b = bits_per_rbg(f64::from(i) / 100.0, &link());
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn slot_duration() {
        let s = SlotConfig::default();
        assert_eq!(s.slot_duration_ms(), 0.5);
        assert_eq!(SlotConfig { scs_khz: 15, ..s.clone() }.slot_duration_ms(), 1.0);
        assert_eq!(SlotConfig { scs_khz: 120, ..s }.slot_duration_ms(), 0.125);
    }

    #[test]
    fn dl_slot_counts() {
        let s = SlotConfig::default();
        assert_eq!(dl_slots_in_window(15.0, &s), 18);
        assert_eq!(dl_slots_in_window(2.5, &s), 3);
        assert_eq!(dl_slots_in_window(0.4, &s), 0);
        let all_d = SlotConfig { pattern: "D".into(), ..s };
        assert_eq!(dl_slots_in_window(5.0, &all_d), 10);
    }

    #[test]
    fn budgets() {
        let s = SlotConfig::default();
        assert_eq!(rbg_budget(15.0, &s), 72);
        assert_eq!(rbg_budget(2.5, &s), 12);
        let none = SlotConfig { pattern: "SU".into(), ..s.clone() };
        assert_eq!(rbg_budget(15.0, &none), 0);
        // half-weight S slots: 6 S slots * 2 RBGs on top of 72
        let half = SlotConfig { special_slot_weight: 0.5, ..s };
        assert_eq!(rbg_budget(15.0, &half), 84);
    }

    /// Enumerates slot start times explicitly instead of counting per cycle.
    fn enumerate_budget(t_win: f64, s: &SlotConfig) -> (u64, u32) {
        let d = s.slot_duration_ms();
        let (mut dl, mut rbgs) = (0u64, 0u32);
        let mut k = 0u64;
        while (k as f64 + 1.0) * d <= t_win + 1e-9 {
            if s.pattern.as_bytes()[(k as usize) % s.pattern.len()] == b'D' {
                dl += 1;
                rbgs += s.rbgs_per_slot;
            }
            k += 1;
        }
        (dl, rbgs)
    }

    #[test]
    fn budget_matches_enumeration_for_all_rotations() {
        let base = "DDDSU";
        for rot in 0..base.len() {
            let pattern = format!("{}{}", &base[rot..], &base[..rot]);
            let s = SlotConfig { pattern, ..SlotConfig::default() };
            for half_ms in 1..=100 {
                let t = f64::from(half_ms) * 0.5;
                let (dl, rbgs) = enumerate_budget(t, &s);
                assert_eq!(dl_slots_in_window(t, &s), dl, "{} t={t}", s.pattern);
                assert_eq!(rbg_budget(t, &s), rbgs, "{} t={t}", s.pattern);
            }
        }
    }

    #[test]
    fn slot_validation() {
        assert!(SlotConfig::default().validate().is_ok());
        assert!(SlotConfig { pattern: "DDX".into(), ..Default::default() }.validate().is_err());
        assert!(SlotConfig { pattern: String::new(), ..Default::default() }.validate().is_err());
        assert!(SlotConfig { rbgs_per_slot: 0, ..Default::default() }.validate().is_err());
        assert!(SlotConfig { scs_khz: 20, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn link_validation() {
        assert!(link().validate().is_ok());
        assert!(LinkAbstractionConfig { attenuation: 0.0, ..link() }.validate().is_err());
        assert!(LinkAbstractionConfig { overhead_fraction: 1.0, ..link() }.validate().is_err());
        assert!(LinkAbstractionConfig { target_bler: 1.5, ..link() }.validate().is_err());
    }

    #[test]
    fn per_rbg_rate_is_linear_in_window_capacity() {
        // g RBGs per window sustain g * bits / t_win
        let bits = bits_per_rbg(4.0, &link()) as f64;
        let t_win_s = 0.015;
        for g in 1..10u32 {
            let sustained = f64::from(g) * bits / t_win_s;
            assert!((sustained - f64::from(g) * (bits / t_win_s)).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_trace() {
        let t = synthesize_trace(&TraceKind::Constant { sinr_db: 20.0 }, 10.0, 10, 0).unwrap();
        assert_eq!(t.samples(), &[20.0; 10]);
    }

    #[test]
    fn step_drop_trace() {
        let kind = TraceKind::StepDrop { before_db: 25.0, after_db: 5.0, drop_time_ms: 5000.0 };
        let t = synthesize_trace(&kind, 10.0, 1000, 0).unwrap();
        assert_eq!(t.at(4999.0), 25.0);
        assert_eq!(t.at(4990.0), 25.0);
        assert_eq!(t.at(5000.0), 5.0);
        assert_eq!(t.at(9000.0), 5.0);
        assert!(t.samples()[..500].iter().all(|&s| s == 25.0));
        assert!(t.samples()[500..].iter().all(|&s| s == 5.0));
    }

    #[test]
    fn random_walk_is_deterministic_and_bounded() {
        let kind = TraceKind::RandomWalk { mean_db: 12.0, std_db: 4.0, correlation: 0.99, min_db: 0.0, max_db: 25.0 };
        let a = synthesize_trace(&kind, 10.0, 3000, 7).unwrap();
        let b = synthesize_trace(&kind, 10.0, 3000, 7).unwrap();
        let c = synthesize_trace(&kind, 10.0, 3000, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.samples().iter().all(|&s| (0.0..=25.0).contains(&s)));
    }

    #[test]
    fn invalid_trace_params() {
        let bad = TraceKind::RandomWalk { mean_db: 0.0, std_db: -1.0, correlation: 0.5, min_db: 0.0, max_db: 1.0 };
        assert!(synthesize_trace(&bad, 10.0, 10, 0).is_err());
        assert!(synthesize_trace(&TraceKind::Constant { sinr_db: 1.0 }, 10.0, 0, 0).is_err());
        assert!(synthesize_trace(&TraceKind::Constant { sinr_db: 1.0 }, 0.0, 5, 0).is_err());
    }

    #[test]
    fn trace_hold_and_parse() {
        let t = SinrTrace::parse("# measured\nsample_period_ms=10\n1.5\n# gap\n\n2.5\n-3\n").unwrap();
        assert_eq!(t.samples(), &[1.5, 2.5, -3.0]);
        assert_eq!(t.at(0.0), 1.5);
        assert_eq!(t.at(19.9), 2.5);
        assert_eq!(t.at(1e6), -3.0);
        assert_eq!(SinrTrace::parse("5\n1\n").unwrap().sample_period_ms(), 5.0);
        assert!(SinrTrace::parse("sample_period_ms=10\nabc\n").is_err());
        assert!(SinrTrace::parse("sample_period_ms=10\n").is_err());
        let again = SinrTrace::parse(&t.to_string()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn trace_load_reports_path() {
        let err = SinrTrace::load(Path::new("/nonexistent/trace.txt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.txt"));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn se_and_bits_are_monotone(a in -30.0..60.0f64, b in -30.0..60.0f64) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let (se_lo, se_hi) = (sinr_to_se(lo, &link()), sinr_to_se(hi, &link()));
                prop_assert!(se_lo <= se_hi);
                prop_assert!(bits_per_rbg(se_lo, &link()) <= bits_per_rbg(se_hi, &link()));
            }

            #[test]
            fn random_walk_traces_stay_bounded(seed in any::<u64>(), std in 0.0..10.0f64, rho in 0.0..0.999f64) {
                let kind = TraceKind::RandomWalk { mean_db: 10.0, std_db: std, correlation: rho, min_db: -5.0, max_db: 25.0 };
                let t = synthesize_trace(&kind, 10.0, 200, seed).unwrap();
                prop_assert!(t.samples().iter().all(|s| (-5.0..=25.0).contains(s)));
            }
        }
    }
}
