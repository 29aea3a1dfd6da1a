//! QoE-aware rate allocation for real-time media over a cellular downlink.
//!
//! The crate has two halves. The allocation half ([`qb_model`], [`phy`],
//! [`allocators`]) turns per-UE quality–bitrate curves and spectral
//! efficiencies into source bitrates, either maximising the number of UEs
//! meeting a PSNR target (MaxCap) or maximising the minimum quality (MaxMin).
//! The simulation half ([`sim`], [`baselines`], [`metrics`], [`scenario`])
//! runs those controllers, plus RTT-feedback and L4S/Prague baselines, in a
//! slot-level discrete-event model of one TDD cell with a proportional-fair
//! scheduler and HARQ, and scores the result by UE satisfaction.

// Validation writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocators;
pub mod baselines;
pub mod config;
pub mod metrics;
pub mod phy;
pub mod qb_model;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod svg;

use serde::{Deserialize, Serialize};

pub use allocators::{maxcap_allocate, maxmin_allocate, AllocationInput, AllocationOutput, MaxMinConfig, UeSnapshot};
pub use config::ScenarioConfig;
pub use metrics::RunMetrics;
pub use qb_model::{QbCurve, QualityCurve, RequiredRate, Scene, SceneLibrary};
pub use sim::{run, Algorithm, RunOutput, SimConfig};

/// Allowed source bitrate range in Mbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub min: f64,
    pub max: f64,
}

impl RateBounds {
    /// 1–50 Mbps.
    pub const TABLE: RateBounds = RateBounds { min: 1.0, max: 50.0 };

    pub fn clamp(&self, rate: f64) -> f64 {
        rate.clamp(self.min, self.max)
    }
}

impl Default for RateBounds {
    fn default() -> Self {
        Self::TABLE
    }
}
