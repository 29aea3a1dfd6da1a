//! Conventional end-to-end rate control used for comparison: an OTT
//! controller driven by client RTT reports, and Prague congestion control
//! reacting to L4S ECN marks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::RateBounds;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> BaselineError {
    BaselineError::Invalid { field, msg: msg.into() }
}

/// What caused a baseline rate change, as written to the controller log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    RttReport,
    Marks,
    Loss,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::RttReport => "rtt_report",
            Trigger::Marks => "marks",
            Trigger::Loss => "loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RttConfig {
    pub report_period_ms: f64,
    pub window_ms: f64,
    pub alpha_up: f64,
    pub alpha_down: f64,
    pub beta_low_ms: f64,
    pub beta_high_ms: f64,
}

impl Default for RttConfig {
    fn default() -> Self {
        RttConfig {
            report_period_ms: 50.0,
            window_ms: 100.0,
            alpha_up: 1.1,
            alpha_down: 0.9,
            beta_low_ms: 8.0,
            beta_high_ms: 10.0,
        }
    }
}

impl RttConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.report_period_ms > 0.0) {
            return Err(invalid("report_period_ms", "must be > 0"));
        }
        if !(self.window_ms > 0.0) {
            return Err(invalid("window_ms", "must be > 0"));
        }
        if !(self.alpha_up > 1.0) {
            return Err(invalid("alpha_up", format!("must be > 1, got {}", self.alpha_up)));
        }
        if !(self.alpha_down > 0.0 && self.alpha_down < 1.0) {
            return Err(invalid("alpha_down", format!("must be in (0, 1), got {}", self.alpha_down)));
        }
        if !(self.beta_low_ms < self.beta_high_ms) {
            return Err(invalid(
                "beta_low_ms",
                format!("must be below beta_high_ms ({} >= {})", self.beta_low_ms, self.beta_high_ms),
            ));
        }
        Ok(())
    }
}

/// OTT rate controller reacting to periodic average-RTT reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RttController {
    pub cfg: RttConfig,
    pub bounds: RateBounds,
    pub rate: f64,
}

impl RttController {
    pub fn new(cfg: RttConfig, bounds: RateBounds, initial_rate: f64) -> Self {
        RttController { cfg, bounds, rate: bounds.clamp(initial_rate) }
    }

    /// Initial rate drawn uniformly from the rate bounds.
    pub fn with_random_rate<R: Rng>(cfg: RttConfig, bounds: RateBounds, rng: &mut R) -> Self {
        let r = rng.random_range(bounds.min..=bounds.max);
        Self::new(cfg, bounds, r)
    }

    /// Applies one report and returns the new rate.
    pub fn on_report(&mut self, avg_rtt_ms: f64) -> f64 {
        self.rate = rtt_update(self.rate, avg_rtt_ms, &self.cfg, self.bounds);
        self.rate
    }
}

pub fn rtt_update(rate: f64, avg_rtt_ms: f64, cfg: &RttConfig, bounds: RateBounds) -> f64 {
    let next = if avg_rtt_ms < cfg.beta_low_ms {
        rate * cfg.alpha_up
    } else if avg_rtt_ms > cfg.beta_high_ms {
        rate * cfg.alpha_down
    } else {
        rate
    };
    bounds.clamp(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L4sConfig {
    pub beta_low_ms: f64,
    pub beta_high_ms: f64,
}

impl Default for L4sConfig {
    fn default() -> Self {
        L4sConfig { beta_low_ms: 4.0, beta_high_ms: 17.0 }
    }
}

impl L4sConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.beta_low_ms >= 0.0) {
            return Err(invalid("beta_low_ms", "must be >= 0"));
        }
        if !(self.beta_low_ms < self.beta_high_ms) {
            return Err(invalid(
                "beta_low_ms",
                format!("must be below beta_high_ms ({} >= {})", self.beta_low_ms, self.beta_high_ms),
            ));
        }
        Ok(())
    }
}

/// Linear marking ramp between the two queueing-delay thresholds.
pub fn marking_probability(queue_delay_ms: f64, cfg: &L4sConfig) -> f64 {
    ((queue_delay_ms - cfg.beta_low_ms) / (cfg.beta_high_ms - cfg.beta_low_ms)).clamp(0.0, 1.0)
}

pub fn mark_packet<R: Rng>(rng: &mut R, queue_delay_ms: f64, cfg: &L4sConfig) -> bool {
    let p = marking_probability(queue_delay_ms, cfg);
    // draw unconditionally so the stream position does not depend on delay
    let u: f64 = rng.random();
    u < p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PragueConfig {
    /// Rate increase per RTT with no marks (Mbps).
    pub additive_step_mbps: f64,
    pub ewma_gain: f64,
    /// Initial marked fraction estimate.
    pub initial_m_ecn: f64,
}

impl Default for PragueConfig {
    fn default() -> Self {
        PragueConfig { additive_step_mbps: 0.5, ewma_gain: 1.0 / 16.0, initial_m_ecn: 1.0 }
    }
}

impl PragueConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.additive_step_mbps >= 0.0) {
            return Err(invalid("additive_step_mbps", "must be >= 0"));
        }
        if !(self.ewma_gain > 0.0 && self.ewma_gain <= 1.0) {
            return Err(invalid("ewma_gain", format!("must be in (0, 1], got {}", self.ewma_gain)));
        }
        if !(0.0..=1.0).contains(&self.initial_m_ecn) {
            return Err(invalid("initial_m_ecn", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One batch of ECN echo feedback for a flow.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AckBatch {
    pub acked: u64,
    pub marked: u64,
    pub lost: u64,
}

/// Rate-based Prague sender.
#[derive(Debug, Clone, PartialEq)]
pub struct PragueState {
    pub cfg: PragueConfig,
    pub bounds: RateBounds,
    pub rate: f64,
    pub m_ecn: f64,
    pub last_md_ms: f64,
    last_update_ms: f64,
    last_ewma_ms: f64,
    acc_acked: u64,
    acc_marked: u64,
}

impl PragueState {
    pub fn new(cfg: PragueConfig, bounds: RateBounds, initial_rate: f64, now_ms: f64) -> Self {
        PragueState {
            m_ecn: cfg.initial_m_ecn,
            cfg,
            bounds,
            rate: bounds.clamp(initial_rate),
            last_md_ms: f64::NEG_INFINITY,
            last_update_ms: now_ms,
            last_ewma_ms: now_ms,
            acc_acked: 0,
            acc_marked: 0,
        }
    }

    pub fn with_random_rate<R: Rng>(cfg: PragueConfig, bounds: RateBounds, now_ms: f64, rng: &mut R) -> Self {
        let r = rng.random_range(bounds.min..=bounds.max);
        Self::new(cfg, bounds, r, now_ms)
    }

    /// Processes one feedback batch. Returns the trigger when the rate was
    /// cut, `None` for an additive increase or no change.
    pub fn on_feedback(&mut self, batch: AckBatch, now_ms: f64, rtt_ms: f64) -> Option<Trigger> {
        self.acc_acked += batch.acked;
        self.acc_marked += batch.marked;
        if now_ms - self.last_ewma_ms >= rtt_ms && self.acc_acked > 0 {
            let frac = self.acc_marked as f64 / self.acc_acked as f64;
            self.m_ecn = ((1.0 - self.cfg.ewma_gain) * self.m_ecn + self.cfg.ewma_gain * frac).clamp(0.0, 1.0);
            self.acc_acked = 0;
            self.acc_marked = 0;
            self.last_ewma_ms = now_ms;
        }

        let md_allowed = now_ms - self.last_md_ms >= rtt_ms;
        let elapsed = (now_ms - self.last_update_ms).max(0.0);
        self.last_update_ms = now_ms;
        let trigger = if batch.lost > 0 && md_allowed {
            self.rate /= 2.0;
            self.last_md_ms = now_ms;
            Some(Trigger::Loss)
        } else if batch.marked > 0 && md_allowed {
            self.rate *= 1.0 - self.m_ecn / 2.0;
            self.last_md_ms = now_ms;
            Some(Trigger::Marks)
        } else {
            if batch.acked > 0 && rtt_ms > 0.0 {
                let unmarked = batch.acked.saturating_sub(batch.marked) as f64 / batch.acked as f64;
                self.rate += self.cfg.additive_step_mbps * unmarked * (elapsed / rtt_ms);
            }
            None
        };
        self.rate = self.bounds.clamp(self.rate);
        trigger
    }
}

/// Convenience wrapper matching the functional form of the update.
pub fn prague_on_feedback(state: &PragueState, batch: AckBatch, now_ms: f64, rtt_ms: f64) -> PragueState {
    let mut next = state.clone();
    next.on_feedback(batch, now_ms, rtt_ms);
    next
}
