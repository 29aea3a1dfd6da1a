//! UX rate controller: QoE-capacity (MaxCap) and max-min QoE (MaxMin)
//! allocation of the RBGs in one allocation window.
//!
//! Both algorithms work in RBG units. For UE `n` with per-RBG rate
//! `R'_n = T(SE_n) / T_win`, the RBGs needed to reach quality `q` are
//! `g_n(q) = ceil(Q_n^{-1}(q) / R'_n)`; an allocation of `g` RBGs becomes
//! the source bitrate `min(g · R'_n, R_max)`.

use serde::{Deserialize, Serialize};

use crate::phy::{bits_per_rbg, LinkAbstractionConfig};
use crate::qb_model::{QbCurve, QualityCurve, RequiredRate};
use crate::RateBounds;

/// Tolerance used when comparing achieved and target qualities.
const Q_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UeSnapshot<C = QbCurve> {
    pub ue_id: u32,
    /// Spectral efficiency (bits/s/Hz).
    pub se: f64,
    pub curve: C,
    /// QoE target (dB).
    pub target_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationInput<C = QbCurve> {
    pub ues: Vec<UeSnapshot<C>>,
    pub t_win_ms: f64,
    pub n_rbg: u32,
    pub rate_bounds: RateBounds,
    pub link: LinkAbstractionConfig,
}

/// RBGs a UE needs to reach some quality level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RbgNeed {
    Rbgs(u32),
    Infeasible,
}

impl RbgNeed {
    pub fn rbgs(self) -> Option<u32> {
        match self {
            RbgNeed::Rbgs(g) => Some(g),
            RbgNeed::Infeasible => None,
        }
    }

    fn sort_key(self) -> u64 {
        self.rbgs().map_or(u64::MAX, u64::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// MaxCap with every UE's need fitting the budget.
    UnderBudget,
    /// MaxCap admitting the smallest needs first.
    OverBudget,
    /// MaxMin converged on a common quality level.
    Level,
    /// MaxMin could not reach `q_min` for everyone; minimum-rate allocations.
    Floor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeAllocation {
    pub ue_id: u32,
    /// The allocator's `g_n`: at the UE's target for MaxCap, at the
    /// converged level for MaxMin.
    pub need: RbgNeed,
    pub per_rbg_rate_mbps: f64,
    pub rbgs: u32,
    /// Sustainable source bitrate, capped at `R_max`; may be below `R_min`.
    pub bitrate_mbps: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOutput {
    /// One entry per input UE, in input order.
    pub ues: Vec<UeAllocation>,
    pub total_rbgs_used: u32,
    pub mode: AllocationMode,
    /// Common quality level MaxMin converged to.
    pub level_db: Option<f64>,
    /// Bisection iterations MaxMin ran.
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaxCapOptions {
    /// Admit UE `M` only while the cumulative need stays strictly below the
    /// budget, instead of at-or-below.
    pub strict_admission: bool,
    /// Hand the RBGs left over by the equal split out one by one instead of
    /// discarding them.
    pub round_robin_remainder: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMinConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub tolerance: f64,
}

impl Default for MaxMinConfig {
    fn default() -> Self {
        MaxMinConfig { q_min: 30.0, q_max: 40.0, tolerance: 0.5 }
    }
}

impl MaxMinConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.q_min < self.q_max) {
            return Err(format!("q_min ({}) must be below q_max ({})", self.q_min, self.q_max));
        }
        if !(self.tolerance > 0.0) {
            return Err(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        Ok(())
    }

    /// Upper bound on bisection iterations, `ceil(log2((q_max - q_min) / tolerance))`.
    pub fn max_iterations(&self) -> u32 {
        ((self.q_max - self.q_min) / self.tolerance).log2().ceil().max(0.0) as u32
    }
}

/// Achievable rate per RBG in Mbps, `T(SE) / T_win`.
pub fn per_rbg_rate(se: f64, t_win_ms: f64, link: &LinkAbstractionConfig) -> f64 {
    // bits per ms is kbit/s; /1000 gives Mbit/s
    bits_per_rbg(se, link) as f64 / t_win_ms / 1000.0
}

/// RBGs needed to carry `required` at `per_rbg_rate_mbps` per RBG.
pub fn rbgs_for_rate(required: RequiredRate, per_rbg_rate_mbps: f64) -> RbgNeed {
    match required {
        RequiredRate::Infeasible => RbgNeed::Infeasible,
        _ if per_rbg_rate_mbps <= 0.0 => RbgNeed::Infeasible,
        RequiredRate::Feasible(rate) => {
            let x = rate / per_rbg_rate_mbps;
            // absorb rounding noise on exact multiples
            let g = (x - 1e-9).ceil().max(0.0);
            if g > f64::from(u32::MAX) {
                RbgNeed::Infeasible
            } else {
                RbgNeed::Rbgs(g as u32)
            }
        }
    }
}

/// `g_n = ceil(Q_n^{-1}(γ_n) / R'_n)`.
pub fn min_rbgs<C: QualityCurve>(ue: &UeSnapshot<C>, t_win_ms: f64, bounds: RateBounds, link: &LinkAbstractionConfig) -> RbgNeed {
    let r = per_rbg_rate(ue.se, t_win_ms, link);
    rbgs_for_rate(ue.curve.required_rate(ue.target_db, bounds), r)
}

/// One UE reduced to what the RBG-level algorithms need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub ue_id: u32,
    pub need: RbgNeed,
    pub per_rbg_rate_mbps: f64,
}

/// RBG split chosen by MaxCap, before rate conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxCapSplit {
    pub rbgs: Vec<u32>,
    pub admitted: Vec<bool>,
    pub mode: AllocationMode,
}

/// MaxCap on needs alone. UEs with an infeasible need are never admitted;
/// UEs that cannot use RBGs at all (zero per-RBG rate) get none of the
/// residual.
pub fn maxcap_split(demands: &[Demand], n_rbg: u32, opts: MaxCapOptions) -> MaxCapSplit {
    let n = demands.len();
    let mut rbgs = vec![0u32; n];
    let mut admitted = vec![false; n];
    if n == 0 {
        return MaxCapSplit { rbgs, admitted, mode: AllocationMode::UnderBudget };
    }
    let all_feasible = demands.iter().all(|d| d.need.rbgs().is_some());
    let total: u64 = demands.iter().map(|d| d.need.sort_key()).fold(0u64, u64::saturating_add);

    if all_feasible && total <= u64::from(n_rbg) {
        let surplus = n_rbg - total as u32;
        let share = surplus / n as u32;
        let mut leftover = surplus - share * n as u32;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (demands[i].need.sort_key(), demands[i].ue_id));
        for &i in &order {
            let mut extra = share;
            if opts.round_robin_remainder && leftover > 0 {
                extra += 1;
                leftover -= 1;
            }
            rbgs[i] = demands[i].need.rbgs().unwrap_or(0) + extra;
            admitted[i] = true;
        }
        return MaxCapSplit { rbgs, admitted, mode: AllocationMode::UnderBudget };
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (demands[i].need.sort_key(), demands[i].ue_id));
    let mut used: u32 = 0;
    for &i in &order {
        let Some(g) = demands[i].need.rbgs() else { break };
        let after = u64::from(used) + u64::from(g);
        let fits = if opts.strict_admission { after < u64::from(n_rbg) } else { after <= u64::from(n_rbg) };
        if !fits {
            break;
        }
        used = after as u32;
        rbgs[i] = g;
        admitted[i] = true;
    }
    let rest: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| !admitted[i] && demands[i].per_rbg_rate_mbps > 0.0)
        .collect();
    if !rest.is_empty() {
        let residual = n_rbg - used;
        let share = residual / rest.len() as u32;
        let mut leftover = residual - share * rest.len() as u32;
        for &i in &rest {
            let mut extra = share;
            if opts.round_robin_remainder && leftover > 0 {
                extra += 1;
                leftover -= 1;
            }
            rbgs[i] = extra;
        }
    }
    MaxCapSplit { rbgs, admitted, mode: AllocationMode::OverBudget }
}

fn finish<C: QualityCurve>(
    input: &AllocationInput<C>,
    rates: &[f64],
    needs: &[RbgNeed],
    rbgs: &[u32],
    mode: AllocationMode,
    level_db: Option<f64>,
    iterations: u32,
) -> AllocationOutput {
    let bounds = input.rate_bounds;
    let ues = input
        .ues
        .iter()
        .enumerate()
        .map(|(i, ue)| {
            let bitrate = (f64::from(rbgs[i]) * rates[i]).min(bounds.max);
            let satisfied = bitrate >= bounds.min && ue.curve.quality(bitrate) >= ue.target_db - Q_EPS;
            UeAllocation {
                ue_id: ue.ue_id,
                need: needs[i],
                per_rbg_rate_mbps: rates[i],
                rbgs: rbgs[i],
                bitrate_mbps: bitrate,
                satisfied,
            }
        })
        .collect();
    AllocationOutput { ues, total_rbgs_used: rbgs.iter().sum(), mode, level_db, iterations }
}

/// Rate allocation maximising the number of UEs at their QoE target.
pub fn maxcap_allocate<C: QualityCurve>(input: &AllocationInput<C>) -> AllocationOutput {
    maxcap_allocate_with(input, MaxCapOptions::default())
}

pub fn maxcap_allocate_with<C: QualityCurve>(input: &AllocationInput<C>, opts: MaxCapOptions) -> AllocationOutput {
    let rates: Vec<f64> = input.ues.iter().map(|u| per_rbg_rate(u.se, input.t_win_ms, &input.link)).collect();
    let needs: Vec<RbgNeed> = input
        .ues
        .iter()
        .zip(&rates)
        .map(|(u, &r)| rbgs_for_rate(u.curve.required_rate(u.target_db, input.rate_bounds), r))
        .collect();
    let demands: Vec<Demand> = input
        .ues
        .iter()
        .zip(needs.iter().zip(&rates))
        .map(|(u, (&need, &r))| Demand { ue_id: u.ue_id, need, per_rbg_rate_mbps: r })
        .collect();
    let split = maxcap_split(&demands, input.n_rbg, opts);
    finish(input, &rates, &needs, &split.rbgs, split.mode, None, 0)
}

/// RBGs each UE needs for common level `q`. Unreachable levels cost the
/// UE its `R_max` allocation; UEs without capacity cost nothing.
fn needs_at_level<C: QualityCurve>(input: &AllocationInput<C>, rates: &[f64], q: f64) -> Vec<u32> {
    input
        .ues
        .iter()
        .zip(rates)
        .map(|(u, &r)| {
            if r <= 0.0 {
                return 0;
            }
            let req = u.curve.required_rate(q, input.rate_bounds).rate().unwrap_or(input.rate_bounds.max);
            rbgs_for_rate(RequiredRate::Feasible(req), r).rbgs().unwrap_or(u32::MAX)
        })
        .collect()
}

fn total(g: &[u32]) -> u64 {
    g.iter().map(|&x| u64::from(x)).sum()
}

/// Rate allocation maximising the minimum QoE by bisection on a common
/// quality level.
///
/// The loop halves `[q_min, q_max]` until its width is at most the
/// tolerance, stopping early when a midpoint uses the budget exactly. The
/// final RBGs are taken at the highest level known to fit. Both ends are
/// checked first: a fitting `q_max` is used as is, and if even `q_min`
/// does not fit, every UE gets the RBGs for `R_min`, smallest first, until
/// the budget runs out.
pub fn maxmin_allocate<C: QualityCurve>(input: &AllocationInput<C>, cfg: &MaxMinConfig) -> AllocationOutput {
    let rates: Vec<f64> = input.ues.iter().map(|u| per_rbg_rate(u.se, input.t_win_ms, &input.link)).collect();
    let n_rbg = u64::from(input.n_rbg);

    let at_floor = needs_at_level(input, &rates, cfg.q_min);
    if total(&at_floor) > n_rbg {
        return maxmin_floor(input, &rates);
    }
    // Midpoints never reach q_max, so a fitting ceiling is taken directly.
    let at_ceiling = needs_at_level(input, &rates, cfg.q_max);
    if total(&at_ceiling) <= n_rbg {
        let needs: Vec<RbgNeed> = at_ceiling.iter().map(|&x| RbgNeed::Rbgs(x)).collect();
        return finish(input, &rates, &needs, &at_ceiling, AllocationMode::Level, Some(cfg.q_max), 0);
    }

    let (mut lo, mut hi) = (cfg.q_min, cfg.q_max);
    let mut level = None;
    let mut iterations = 0;
    while hi - lo > cfg.tolerance {
        iterations += 1;
        let mid = 0.5 * (hi + lo);
        let used = total(&needs_at_level(input, &rates, mid));
        if used > n_rbg {
            hi = mid;
        } else if used < n_rbg {
            lo = mid;
        } else {
            level = Some(mid);
            break;
        }
    }
    let level = level.unwrap_or(lo);
    let g = needs_at_level(input, &rates, level);
    let needs: Vec<RbgNeed> = g.iter().map(|&x| RbgNeed::Rbgs(x)).collect();
    finish(input, &rates, &needs, &g, AllocationMode::Level, Some(level), iterations)
}

fn maxmin_floor<C: QualityCurve>(input: &AllocationInput<C>, rates: &[f64]) -> AllocationOutput {
    let needs: Vec<RbgNeed> = rates
        .iter()
        .map(|&r| rbgs_for_rate(RequiredRate::Feasible(input.rate_bounds.min), r))
        .collect();
    let mut order: Vec<usize> = (0..input.ues.len()).collect();
    order.sort_by_key(|&i| (needs[i].sort_key(), input.ues[i].ue_id));
    let mut left = input.n_rbg;
    let mut rbgs = vec![0u32; input.ues.len()];
    for i in order {
        if let Some(g) = needs[i].rbgs() {
            rbgs[i] = g.min(left);
            left -= rbgs[i];
        }
    }
    finish(input, rates, &needs, &rbgs, AllocationMode::Floor, None, 0)
}

/// Which allocator a UX rate controller runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UxAlgorithm {
    MaxCap(MaxCapOptions),
    MaxMin(MaxMinConfig),
}

/// Periodic UX rate controller for one cell.
#[derive(Debug, Clone)]
pub struct UxController {
    pub algorithm: UxAlgorithm,
    pub period_ms: f64,
    pub signaling_delay_ms: f64,
    pub t_win_ms: f64,
    pub n_rbg: u32,
    pub rate_bounds: RateBounds,
    pub link: LinkAbstractionConfig,
}

/// One controller decision and when the servers see it.
#[derive(Debug, Clone, PartialEq)]
pub struct Publication {
    pub decided_ms: f64,
    pub publish_ms: f64,
    pub output: AllocationOutput,
}

impl UxController {
    pub fn allocate(&self, ues: Vec<UeSnapshot>) -> AllocationOutput {
        let input = AllocationInput {
            ues,
            t_win_ms: self.t_win_ms,
            n_rbg: self.n_rbg,
            rate_bounds: self.rate_bounds,
            link: self.link.clone(),
        };
        match &self.algorithm {
            UxAlgorithm::MaxCap(opts) => maxcap_allocate_with(&input, *opts),
            UxAlgorithm::MaxMin(cfg) => maxmin_allocate(&input, cfg),
        }
    }

    /// Decision instants `k · period` strictly before `duration_ms`.
    pub fn decision_times(&self, duration_ms: f64) -> impl Iterator<Item = f64> + '_ {
        (0u64..)
            .map(move |k| k as f64 * self.period_ms)
            .take_while(move |&t| t < duration_ms)
    }
}

/// Runs the controller over `[0, duration_ms)`, pulling a snapshot of the
/// cell at every decision instant.
pub fn run_controller<F>(ctrl: &UxController, duration_ms: f64, mut snapshot: F) -> Vec<Publication>
where
    F: FnMut(f64) -> Vec<UeSnapshot>,
{
    ctrl.decision_times(duration_ms)
        .map(|t| Publication {
            decided_ms: t,
            publish_ms: t + ctrl.signaling_delay_ms,
            output: ctrl.allocate(snapshot(t)),
        })
        .collect()
}
