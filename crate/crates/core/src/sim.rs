//! Slot-level discrete-event model of one TDD cell.
//!
//! Each UE has a video source at the application server, a FIFO at the
//! gNB and a playout client. Frames reach the gNB after the encode and
//! backhaul delays and are drained as a bit stream, one transport block per
//! RBG, by a proportional-fair scheduler. Transport blocks fail with the
//! target BLER and are retransmitted a fixed number of slots later; the
//! client releases bits in order, so a frame is delivered once it and every
//! earlier bit have arrived. The source rate comes from either the UX
//! controller (MaxCap/MaxMin) or an end-to-end baseline (RTT/Prague)
//! driven by delayed client feedback.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::allocators::{RbgNeed, UeSnapshot, UxController};
use crate::baselines::{mark_packet, AckBatch, L4sConfig, PragueConfig, PragueState, RttConfig, RttController};
use crate::config::{ScenarioConfig, SimParams, UxConfig};
use crate::metrics::{ue_metrics, PlayoutParams, RunMetrics};
use crate::phy::{bits_per_rbg, rbg_budget, sinr_to_se, LinkAbstractionConfig, SinrTrace, SlotConfig};
use crate::qb_model::{QualityCurve, SceneTimeline};
use crate::rng::stream;
use crate::RateBounds;

pub use crate::config::Algorithm;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Setup(String),
}

/// Everything one run needs besides the per-UE inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: SimParams,
    pub slot: SlotConfig,
    pub link: LinkAbstractionConfig,
    pub bounds: RateBounds,
    pub ux: UxConfig,
    pub rtt: RttConfig,
    pub l4s: L4sConfig,
    pub prague: PragueConfig,
    /// Client-to-server delay of RTT reports and ECN echoes.
    pub feedback_delay_ms: f64,
}

impl SimConfig {
    pub fn from_scenario(cfg: &ScenarioConfig) -> Self {
        SimConfig {
            params: cfg.sim.clone(),
            slot: cfg.slot.clone(),
            link: cfg.link.clone(),
            bounds: cfg.source.bounds(),
            ux: cfg.ux.clone(),
            rtt: cfg.rtt.clone(),
            l4s: cfg.l4s.clone(),
            prague: cfg.prague.clone(),
            feedback_delay_ms: cfg.feedback_delay_ms(),
        }
    }

    pub fn duration_ms(&self) -> f64 {
        self.params.duration_s * 1000.0
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.params.fps
    }

    fn check(&self) -> Result<(), SimError> {
        self.slot.validate().map_err(|e| SimError::Setup(e.to_string()))?;
        self.link.validate().map_err(|e| SimError::Setup(e.to_string()))?;
        if rbg_budget(self.slot.pattern_duration_ms(), &self.slot) == 0 {
            return Err(SimError::Setup(format!("slot pattern {} has no downlink RBGs", self.slot.pattern)));
        }
        if rbg_budget(self.ux.t_win_ms, &self.slot) == 0 {
            return Err(SimError::Setup(format!("allocation window of {} ms holds no downlink RBGs", self.ux.t_win_ms)));
        }
        if !(self.params.fps > 0.0) || !(self.params.duration_s >= 0.0) {
            return Err(SimError::Setup("fps must be > 0 and duration >= 0".into()));
        }
        if self.params.packet_bits == 0 {
            return Err(SimError::Setup("packet_bits must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-UE inputs of a run.
#[derive(Debug, Clone)]
pub struct UeSetup {
    pub ue_id: u32,
    pub trace: SinrTrace,
    pub scenes: SceneTimeline,
    /// Offset of the first frame within the frame interval.
    pub frame_phase_ms: f64,
    /// Root of the UE's random streams (HARQ, ECN, jitter, initial rate).
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Keep per-frame, allocation and controller logs.
    pub record_logs: bool,
    /// Check bit conservation and work conservation after every slot.
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_logs: true, check_invariants: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub ue_id: u32,
    pub frame_index: u64,
    pub gen_ms: f64,
    pub size_bits: u64,
    pub enqueue_ms: f64,
    pub delivered_ms: Option<f64>,
    pub decoded_ms: Option<f64>,
    pub encoding_rate_mbps: f64,
    pub quality_db: f64,
    stream_start: u64,
}

impl Frame {
    fn stream_end(&self) -> u64 {
        self.stream_start + self.size_bits
    }

    pub fn delay_ms(&self) -> Option<f64> {
        self.decoded_ms.map(|d| d - self.gen_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRow {
    pub timestamp_ms: f64,
    pub ue_id: u32,
    /// SE the allocator was given.
    pub se: f64,
    pub g_n: Option<u32>,
    pub rbgs_allocated: u32,
    pub bitrate_mbps: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRow {
    pub timestamp_ms: f64,
    pub ue_id: u32,
    pub controller: Algorithm,
    pub trigger: crate::baselines::Trigger,
    pub value: f64,
    pub new_rate_mbps: f64,
}

/// Counters from the per-slot invariant checks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InvariantReport {
    pub slots_checked: u64,
    pub allocations_checked: u64,
    /// Allocator outputs exceeding the window budget, or slots assigning
    /// more RBGs than they hold.
    pub budget_violations: u64,
    pub conservation_violations: u64,
    pub work_conservation_violations: u64,
    pub causality_violations: u64,
    pub transport_blocks: u64,
    pub failed_blocks: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub algorithm: Algorithm,
    /// Frames per UE, in UE order.
    pub frames: Vec<Vec<Frame>>,
    pub allocation_log: Vec<AllocationRow>,
    pub controller_log: Vec<ControllerRow>,
    /// Source rate changes per UE as `(time_ms, rate_mbps)`.
    pub rate_changes: Vec<Vec<(f64, f64)>>,
    /// Controller inputs per UE as `(arrival_ms, observed_until_ms)`: when
    /// the input reached the rate controller and the latest instant whose
    /// network state it reflects.
    pub feedback_log: Vec<Vec<(f64, f64)>>,
    /// RBGs assigned to each UE over the run, retransmissions included.
    pub rbgs_assigned: Vec<u64>,
    pub metrics: RunMetrics,
    pub invariants: InvariantReport,
    /// Simulated time at which the run stopped.
    pub end_ms: f64,
}

#[derive(Debug, Clone)]
enum Event {
    Slot(u64),
    FrameGen { ue: usize, k: u64 },
    FrameArrival { ue: usize, frame: usize },
    Feedback { ue: usize, batch: AckBatch, rtt_ms: f64, observed_ms: f64 },
    ReportTick { ue: usize },
    RttReport { ue: usize, avg_rtt_ms: f64, observed_ms: f64 },
    Publish(Vec<f64>),
    Allocate,
}

impl Event {
    /// Tie-break order at equal times.
    fn priority(&self) -> u8 {
        match self {
            Event::Slot(_) => 0,
            Event::FrameGen { .. } => 1,
            Event::FrameArrival { .. } => 2,
            Event::Feedback { .. } | Event::ReportTick { .. } | Event::RttReport { .. } | Event::Publish(_) => 3,
            Event::Allocate => 4,
        }
    }
}

struct Scheduled {
    t: f64,
    prio: u8,
    seq: u64,
    ev: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.prio.cmp(&other.prio)).then(self.seq.cmp(&other.seq))
    }
}

/// Time-ordered event queue with deterministic tie-breaking.
#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, t: f64, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled { t, prio: ev.priority(), seq: self.seq, ev }));
    }

    fn pop(&mut self) -> Option<(f64, Event)> {
        self.heap.pop().map(|Reverse(s)| (s.t, s.ev))
    }
}

#[derive(Debug, Clone, Copy)]
struct HarqBlock {
    start: u64,
    end: u64,
    ready_slot: u64,
}

enum RateControl {
    Ux,
    Rtt { ctl: RttController, samples: VecDeque<(f64, f64)> },
    Prague { state: PragueState, srtt: Option<f64> },
}

struct Flow<'a> {
    ue_id: u32,
    trace: &'a SinrTrace,
    scenes: &'a SceneTimeline,
    phase_ms: f64,
    frames: Vec<Frame>,
    generated_bits: u64,
    arrived_bits: u64,
    send_ptr: u64,
    harq: VecDeque<HarqBlock>,
    in_flight_bits: u64,
    delivered_bits: u64,
    delivered_prefix: u64,
    /// Delivered ranges beyond the in-order prefix.
    out_of_order: BTreeMap<u64, u64>,
    next_frame: usize,
    next_packet: usize,
    next_packet_end: u64,
    ewma_bits: f64,
    source_rate: f64,
    control: RateControl,
    harq_rng: ChaCha8Rng,
    ecn_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    rate_changes: Vec<(f64, f64)>,
    feedback_log: Vec<(f64, f64)>,
}

impl Flow<'_> {
    fn backlog_ready(&self, slot: u64) -> bool {
        self.send_ptr < self.arrived_bits || self.harq.front().is_some_and(|b| b.ready_slot <= slot)
    }

    fn set_rate(&mut self, t: f64, rate: f64, record: bool) {
        if rate != self.source_rate {
            self.source_rate = rate;
            if record {
                self.rate_changes.push((t, rate));
            }
        }
    }

    fn deliver(&mut self, start: u64, end: u64) {
        self.delivered_bits += end - start;
        if start == self.delivered_prefix {
            self.delivered_prefix = end;
            while let Some(e) = self.out_of_order.remove(&self.delivered_prefix) {
                self.delivered_prefix = e;
            }
        } else {
            self.out_of_order.insert(start, end);
        }
    }

    fn fully_delivered(&self) -> bool {
        self.delivered_prefix == self.generated_bits && self.next_frame == self.frames.len()
    }
}

/// Runs one cell under `algorithm`.
pub fn run(cfg: &SimConfig, ues: &[UeSetup], algorithm: Algorithm, opts: &RunOptions) -> Result<RunOutput, SimError> {
    cfg.check()?;
    let p = &cfg.params;
    let duration = cfg.duration_ms();
    let horizon = duration + p.drain_grace_ms;
    let slot_ms = cfg.slot.slot_duration_ms();
    let frame_interval = cfg.frame_interval_ms();
    let bler = cfg.link.target_bler;
    let fb = cfg.feedback_delay_ms;

    let mut flows: Vec<Flow> = ues
        .iter()
        .map(|u| {
            let mut init = stream(u.seed, 0, "init_rate");
            let control = match algorithm {
                Algorithm::MaxCap | Algorithm::MaxMin => RateControl::Ux,
                Algorithm::Rtt => RateControl::Rtt {
                    ctl: RttController::with_random_rate(cfg.rtt.clone(), cfg.bounds, &mut init),
                    samples: VecDeque::new(),
                },
                Algorithm::Prague => RateControl::Prague {
                    state: PragueState::with_random_rate(cfg.prague.clone(), cfg.bounds, 0.0, &mut init),
                    srtt: None,
                },
            };
            let source_rate = match &control {
                RateControl::Ux => cfg.bounds.min,
                RateControl::Rtt { ctl, .. } => ctl.rate,
                RateControl::Prague { state, .. } => state.rate,
            };
            Flow {
                ue_id: u.ue_id,
                trace: &u.trace,
                scenes: &u.scenes,
                phase_ms: u.frame_phase_ms.rem_euclid(frame_interval),
                frames: Vec::new(),
                generated_bits: 0,
                arrived_bits: 0,
                send_ptr: 0,
                harq: VecDeque::new(),
                in_flight_bits: 0,
                delivered_bits: 0,
                delivered_prefix: 0,
                out_of_order: BTreeMap::new(),
                next_frame: 0,
                next_packet: 0,
                next_packet_end: 0,
                ewma_bits: 1.0,
                source_rate,
                control,
                harq_rng: stream(u.seed, 0, "harq"),
                ecn_rng: stream(u.seed, 0, "ecn"),
                jitter_rng: stream(u.seed, 0, "jitter"),
                rate_changes: vec![(0.0, source_rate)],
                feedback_log: Vec::new(),
            }
        })
        .collect();

    let ux_ctl = cfg.ux.algorithm(algorithm).map(|a| UxController {
        algorithm: a,
        period_ms: cfg.ux.period_ms,
        signaling_delay_ms: cfg.ux.signaling_delay_ms,
        t_win_ms: cfg.ux.t_win_ms,
        n_rbg: rbg_budget(cfg.ux.t_win_ms, &cfg.slot).saturating_sub(cfg.ux.rbg_reserve),
        rate_bounds: cfg.bounds,
        link: cfg.link.clone(),
    });

    let mut q = EventQueue::default();
    let mut allocation_log = Vec::new();
    let mut controller_log = Vec::new();
    let mut inv = InvariantReport::default();

    if !flows.is_empty() && duration > 0.0 {
        q.push(0.0, Event::Slot(0));
        for (i, f) in flows.iter().enumerate() {
            if f.phase_ms < duration {
                q.push(f.phase_ms, Event::FrameGen { ue: i, k: 0 });
            }
            if matches!(f.control, RateControl::Rtt { .. }) && cfg.rtt.report_period_ms < duration {
                q.push(cfg.rtt.report_period_ms, Event::ReportTick { ue: i });
            }
        }
        if ux_ctl.is_some() {
            q.push(0.0, Event::Allocate);
        }
    }

    let mut end_ms = 0.0;
    let mut served = vec![0u64; flows.len()];
    let mut rbgs_assigned = vec![0u64; flows.len()];
    let mut batches: Vec<(AckBatch, f64)> = vec![(AckBatch::default(), 0.0); flows.len()];
    while let Some((t, ev)) = q.pop() {
        end_ms = t;
        match ev {
            Event::Slot(idx) => {
                let n_rbg = cfg.slot.rbgs_in_slot(idx);
                if n_rbg > 0 {
                    let bits: Vec<u64> = flows
                        .iter()
                        .map(|f| bits_per_rbg(sinr_to_se(f.trace.at(t), &cfg.link), &cfg.link))
                        .collect();
                    served.iter_mut().for_each(|s| *s = 0);
                    let mut ok_blocks: Vec<(usize, u64, u64)> = Vec::new();
                    let mut used = 0;
                    for _ in 0..n_rbg {
                        let mut best: Option<(usize, f64)> = None;
                        for (i, f) in flows.iter().enumerate() {
                            if bits[i] == 0 || !f.backlog_ready(idx) {
                                continue;
                            }
                            let metric = bits[i] as f64 / f.ewma_bits;
                            if best.is_none_or(|(_, m)| metric > m) {
                                best = Some((i, metric));
                            }
                        }
                        let Some((i, _)) = best else { break };
                        used += 1;
                        rbgs_assigned[i] += 1;
                        let f = &mut flows[i];
                        let (start, end, retx) = match f.harq.front() {
                            Some(b) if b.ready_slot <= idx => {
                                let b = f.harq.pop_front().expect("front exists");
                                (b.start, b.end, true)
                            }
                            _ => {
                                let size = bits[i].min(f.arrived_bits - f.send_ptr);
                                let s = f.send_ptr;
                                f.send_ptr += size;
                                (s, s + size, false)
                            }
                        };
                        let size = end - start;
                        served[i] += size;
                        inv.transport_blocks += 1;
                        let failed = f.harq_rng.random::<f64>() < bler;
                        if failed {
                            inv.failed_blocks += 1;
                            if !retx {
                                f.in_flight_bits += size;
                            }
                            f.harq.push_back(HarqBlock { start, end, ready_slot: idx + u64::from(p.harq_delay_slots) });
                        } else {
                            if retx {
                                f.in_flight_bits -= size;
                            }
                            ok_blocks.push((i, start, end));
                        }
                    }
                    if opts.check_invariants && used > n_rbg {
                        inv.budget_violations += 1;
                    }
                    if opts.check_invariants && used < n_rbg {
                        let starving = flows.iter().enumerate().any(|(i, f)| bits[i] > 0 && f.backlog_ready(idx));
                        if starving {
                            inv.work_conservation_violations += 1;
                        }
                    }
                    for (f, &s) in flows.iter_mut().zip(&served) {
                        f.ewma_bits = (1.0 - PF_GAIN) * f.ewma_bits + PF_GAIN * s as f64;
                        // keep the metric finite for flows that were never served
                        f.ewma_bits = f.ewma_bits.max(1e-9);
                    }
                    let t_end = t + slot_ms;
                    let mut touched = vec![false; flows.len()];
                    for &(i, s, e) in &ok_blocks {
                        flows[i].deliver(s, e);
                        touched[i] = true;
                    }
                    for (i, f) in flows.iter_mut().enumerate() {
                        if !touched[i] {
                            continue;
                        }
                        complete_deliveries(f, t, t_end, cfg, &mut batches[i]);
                        if let RateControl::Prague { .. } = f.control {
                            let (batch, rtt_sum) = std::mem::take(&mut batches[i]);
                            if batch.acked > 0 {
                                q.push(
                                    t_end + fb,
                                    Event::Feedback { ue: i, batch, rtt_ms: rtt_sum / batch.acked as f64, observed_ms: t_end },
                                );
                            }
                        }
                    }
                }
                if opts.check_invariants {
                    inv.slots_checked += 1;
                    for f in &flows {
                        let queued = f.arrived_bits - f.send_ptr;
                        let pending: u64 = f.harq.iter().map(|b| b.end - b.start).sum();
                        let ooo: u64 = f.out_of_order.iter().map(|(s, e)| e - s).sum();
                        if f.arrived_bits != queued + f.in_flight_bits + f.delivered_bits
                            || pending != f.in_flight_bits
                            || f.delivered_bits != f.delivered_prefix + ooo
                        {
                            inv.conservation_violations += 1;
                        }
                    }
                }
                let next = t + slot_ms;
                let done = t >= duration && flows.iter().all(Flow::fully_delivered);
                if next < horizon && !done {
                    q.push(next, Event::Slot(idx + 1));
                }
            }
            Event::FrameGen { ue, k } => {
                let f = &mut flows[ue];
                let rate = cfg.bounds.clamp(f.source_rate);
                let nominal = rate * 1e6 / p.fps;
                let scale = if p.frame_size_jitter > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut f.jitter_rng);
                    1.0 + p.frame_size_jitter * z.clamp(-2.0, 2.0)
                } else {
                    1.0
                };
                let size = ((nominal * scale).round() as u64).max(1);
                let curve = f.scenes.scene_at_clamped(t / 1000.0).curve;
                let frame = Frame {
                    ue_id: f.ue_id,
                    frame_index: k,
                    gen_ms: t,
                    size_bits: size,
                    enqueue_ms: t + p.encode_delay_ms + p.backhaul_delay_ms,
                    delivered_ms: None,
                    decoded_ms: None,
                    encoding_rate_mbps: rate,
                    quality_db: curve.quality(rate),
                    stream_start: f.generated_bits,
                };
                if f.next_packet == f.frames.len() {
                    f.next_packet_end = f.generated_bits + size.min(p.packet_bits);
                }
                f.generated_bits += size;
                q.push(frame.enqueue_ms, Event::FrameArrival { ue, frame: f.frames.len() });
                f.frames.push(frame);
                let next = f.phase_ms + (k + 1) as f64 * frame_interval;
                if next < duration {
                    q.push(next, Event::FrameGen { ue, k: k + 1 });
                }
            }
            Event::FrameArrival { ue, frame } => {
                let f = &mut flows[ue];
                let fr = &f.frames[frame];
                if opts.check_invariants && !(fr.gen_ms <= fr.enqueue_ms && (fr.enqueue_ms - t).abs() < 1e-9) {
                    inv.causality_violations += 1;
                }
                f.arrived_bits = f.arrived_bits.max(fr.stream_end());
            }
            Event::Feedback { ue, batch, rtt_ms, observed_ms } => {
                let f = &mut flows[ue];
                if opts.record_logs {
                    f.feedback_log.push((t, observed_ms));
                }
                if let RateControl::Prague { state, srtt } = &mut f.control {
                    let s = match *srtt {
                        None => rtt_ms,
                        Some(s) => 0.875 * s + 0.125 * rtt_ms,
                    };
                    *srtt = Some(s);
                    let trig = state.on_feedback(batch, t, s);
                    let (rate, m) = (state.rate, state.m_ecn);
                    if let Some(trigger) = trig {
                        if opts.record_logs {
                            let value = match trigger {
                                crate::baselines::Trigger::Loss => batch.lost as f64,
                                _ => m,
                            };
                            controller_log.push(ControllerRow {
                                timestamp_ms: t,
                                ue_id: f.ue_id,
                                controller: algorithm,
                                trigger,
                                value,
                                new_rate_mbps: rate,
                            });
                        }
                    }
                    f.set_rate(t, rate, opts.record_logs);
                }
            }
            Event::ReportTick { ue } => {
                let f = &mut flows[ue];
                let window = cfg.rtt.window_ms;
                let avg = if let RateControl::Rtt { samples, .. } = &mut f.control {
                    while samples.front().is_some_and(|&(d, _)| d <= t - window) {
                        samples.pop_front();
                    }
                    let (sum, n) = samples
                        .iter()
                        .filter(|&&(d, _)| d <= t)
                        .fold((0.0, 0usize), |(s, n), &(_, r)| (s + r, n + 1));
                    if n > 0 {
                        Some(sum / n as f64)
                    } else {
                        // nothing acknowledged: the oldest outstanding packet
                        // has been waiting at least this long
                        f.frames
                            .get(f.next_frame)
                            .map(|fr| fr.gen_ms + p.encode_delay_ms)
                            .filter(|&sent| sent <= t)
                            .map(|sent| t + fb - sent)
                    }
                } else {
                    None
                };
                if let Some(avg_rtt_ms) = avg {
                    q.push(t + fb, Event::RttReport { ue, avg_rtt_ms, observed_ms: t });
                }
                let next = t + cfg.rtt.report_period_ms;
                if next < duration {
                    q.push(next, Event::ReportTick { ue });
                }
            }
            Event::RttReport { ue, avg_rtt_ms, observed_ms } => {
                let f = &mut flows[ue];
                if opts.record_logs {
                    f.feedback_log.push((t, observed_ms));
                }
                if let RateControl::Rtt { ctl, .. } = &mut f.control {
                    let rate = ctl.on_report(avg_rtt_ms);
                    if opts.record_logs {
                        controller_log.push(ControllerRow {
                            timestamp_ms: t,
                            ue_id: f.ue_id,
                            controller: algorithm,
                            trigger: crate::baselines::Trigger::RttReport,
                            value: avg_rtt_ms,
                            new_rate_mbps: rate,
                        });
                    }
                    f.set_rate(t, rate, opts.record_logs);
                }
            }
            Event::Allocate => {
                let ctl = ux_ctl.as_ref().expect("allocation only scheduled for UX algorithms");
                let factor = if cfg.ux.bler_aware_se { 1.0 - bler } else { 1.0 };
                let snaps: Vec<UeSnapshot> = flows
                    .iter()
                    .map(|f| UeSnapshot {
                        ue_id: f.ue_id,
                        se: sinr_to_se(f.trace.at(t), &cfg.link) * factor,
                        curve: f.scenes.scene_at_clamped(t / 1000.0).curve,
                        target_db: cfg.ux.target_db,
                    })
                    .collect();
                let out = ctl.allocate(snaps.clone());
                if opts.check_invariants {
                    inv.allocations_checked += 1;
                    let total: u32 = out.ues.iter().map(|a| a.rbgs).sum();
                    if total > ctl.n_rbg || total != out.total_rbgs_used {
                        inv.budget_violations += 1;
                    }
                }
                if opts.record_logs {
                    for f in flows.iter_mut() {
                        f.feedback_log.push((t, t));
                    }
                    for (s, a) in snaps.iter().zip(&out.ues) {
                        allocation_log.push(AllocationRow {
                            timestamp_ms: t,
                            ue_id: a.ue_id,
                            se: s.se,
                            g_n: match a.need {
                                RbgNeed::Rbgs(g) => Some(g),
                                RbgNeed::Infeasible => None,
                            },
                            rbgs_allocated: a.rbgs,
                            bitrate_mbps: a.bitrate_mbps,
                            satisfied: a.satisfied,
                        });
                    }
                }
                let rates = out.ues.iter().map(|a| cfg.bounds.clamp(a.bitrate_mbps)).collect();
                q.push(t + ctl.signaling_delay_ms, Event::Publish(rates));
                let next = t + ctl.period_ms;
                if next < duration {
                    q.push(next, Event::Allocate);
                }
            }
            Event::Publish(rates) => {
                for (f, r) in flows.iter_mut().zip(rates) {
                    f.set_rate(t, r, opts.record_logs);
                }
            }
        }
    }

    let metrics_horizon = if flows.iter().all(Flow::fully_delivered) { end_ms.max(duration) } else { horizon };
    let pp = PlayoutParams {
        frame_interval_ms: frame_interval,
        playout_offset_ms: p.playout_offset_ms,
        horizon_ms: metrics_horizon,
        duration_ms: duration.max(1e-9),
    };
    let crit = cfg.ux.criteria();
    let metrics = RunMetrics { ues: flows.iter().map(|f| ue_metrics(f.ue_id, &f.frames, &crit, &pp)).collect() };
    if opts.check_invariants {
        for f in &flows {
            for fr in &f.frames {
                let ordered = match (fr.delivered_ms, fr.decoded_ms) {
                    (Some(d), Some(x)) => fr.gen_ms <= fr.enqueue_ms && fr.enqueue_ms <= d && d <= x,
                    (None, None) => true,
                    _ => false,
                };
                if !ordered {
                    inv.causality_violations += 1;
                }
            }
        }
    }
    let record = opts.record_logs;
    Ok(RunOutput {
        algorithm,
        rate_changes: flows.iter_mut().map(|f| if record { std::mem::take(&mut f.rate_changes) } else { Vec::new() }).collect(),
        rbgs_assigned,
        feedback_log: flows.iter_mut().map(|f| std::mem::take(&mut f.feedback_log)).collect(),
        frames: flows.into_iter().map(|f| f.frames).collect(),
        allocation_log,
        controller_log,
        metrics,
        invariants: inv,
        end_ms,
    })
}

/// Smoothing gain of the PF throughput average, per slot.
const PF_GAIN: f64 = 0.01;

/// Releases packets and frames covered by the in-order prefix.
fn complete_deliveries(f: &mut Flow, slot_start: f64, t_end: f64, cfg: &SimConfig, batch: &mut (AckBatch, f64)) {
    let p = &cfg.params;
    let fb = cfg.feedback_delay_ms;
    let wants_packets = !matches!(f.control, RateControl::Ux);
    if wants_packets {
        while f.next_packet < f.frames.len() && f.next_packet_end <= f.delivered_prefix {
            let fr = &f.frames[f.next_packet];
            let rtt = t_end + fb - (fr.gen_ms + p.encode_delay_ms);
            match &mut f.control {
                RateControl::Prague { .. } => {
                    let marked = mark_packet(&mut f.ecn_rng, slot_start - fr.enqueue_ms, &cfg.l4s);
                    batch.0.acked += 1;
                    batch.0.marked += u64::from(marked);
                    batch.1 += rtt;
                }
                RateControl::Rtt { samples, .. } => samples.push_back((t_end, rtt)),
                RateControl::Ux => {}
            }
            let end = fr.stream_end();
            if f.next_packet_end >= end {
                f.next_packet += 1;
                // a frame not generated yet arms its first packet on generation
                if let Some(n) = f.frames.get(f.next_packet) {
                    f.next_packet_end = n.stream_start + n.size_bits.min(p.packet_bits);
                }
            } else {
                f.next_packet_end = (f.next_packet_end + p.packet_bits).min(end);
            }
        }
    }
    while f.next_frame < f.frames.len() && f.frames[f.next_frame].stream_end() <= f.delivered_prefix {
        let fr = &mut f.frames[f.next_frame];
        fr.delivered_ms = Some(t_end);
        fr.decoded_ms = Some(t_end + p.decode_delay_ms);
        f.next_frame += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{synthesize_trace, TraceKind};
    use crate::qb_model::SceneLibrary;

    fn config(duration_s: f64) -> SimConfig {
        let mut sc = ScenarioConfig::default();
        sc.sim.duration_s = duration_s;
        sc.sim.drain_grace_ms = 500.0;
        SimConfig::from_scenario(&sc)
    }

    fn ue(ue_id: u32, sinr_db: f64, scene_id: u32, seed: u64) -> UeSetup {
        let scene = SceneLibrary::default_library().get(scene_id).unwrap().clone();
        UeSetup {
            ue_id,
            trace: synthesize_trace(&TraceKind::Constant { sinr_db }, 1000.0, 2, 0).unwrap(),
            scenes: SceneTimeline::constant(scene, 1000.0),
            frame_phase_ms: 0.0,
            seed,
        }
    }

    fn checked() -> RunOptions {
        RunOptions { record_logs: true, check_invariants: true }
    }

    #[test]
    fn queue_orders_by_time_then_priority_then_insertion() {
        let mut q = EventQueue::default();
        q.push(1.0, Event::Allocate);
        q.push(1.0, Event::ReportTick { ue: 7 });
        q.push(1.0, Event::Slot(3));
        q.push(0.5, Event::ReportTick { ue: 1 });
        q.push(1.0, Event::ReportTick { ue: 8 });
        let order: Vec<String> = std::iter::from_fn(|| q.pop()).map(|(t, e)| format!("{t}:{e:?}")).collect();
        assert_eq!(
            order,
            [
                "0.5:ReportTick { ue: 1 }",
                "1:Slot(3)",
                "1:ReportTick { ue: 7 }",
                "1:ReportTick { ue: 8 }",
                "1:Allocate"
            ]
        );
    }

    #[test]
    fn frame_size_follows_rate_and_fps() {
        let mut cfg = config(0.2);
        cfg.bounds = RateBounds { min: 30.0, max: 30.0 };
        let out = run(&cfg, &[ue(0, 25.0, 4, 1)], Algorithm::Rtt, &checked()).unwrap();
        assert!(out.frames[0].iter().all(|f| f.size_bits == 500_000));

        cfg.bounds = RateBounds { min: 1.0, max: 1.0 };
        let out = run(&cfg, &[ue(0, 25.0, 4, 1)], Algorithm::Rtt, &checked()).unwrap();
        for f in &out.frames[0] {
            assert_eq!(f.size_bits, 16_667);
            assert!((f.enqueue_ms - f.gen_ms - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unloaded_frame_delay_is_sum_of_fixed_delays() {
        let mut cfg = config(1.0);
        cfg.bounds = RateBounds { min: 1.0, max: 1.0 };
        cfg.link.target_bler = 0.0;
        let out = run(&cfg, &[ue(0, 20.0, 4, 1)], Algorithm::Rtt, &checked()).unwrap();
        // encode + backhaul + wait for a D slot (at most the S and U slots) + air + decode
        for f in &out.frames[0] {
            let d = f.delay_ms().unwrap();
            assert!((3.5 - 1e-9..=5.0 + 1e-9).contains(&d), "delay {d}");
        }
        // arrivals during a D slot wait less than one slot
        let min = out.frames[0].iter().filter_map(Frame::delay_ms).fold(f64::INFINITY, f64::min);
        assert!(min < 4.0, "min delay {min}");
    }

    #[test]
    fn bler_one_delivers_nothing() {
        let mut cfg = config(0.3);
        cfg.link.target_bler = 1.0;
        let out = run(&cfg, &[ue(0, 20.0, 4, 1)], Algorithm::MaxCap, &checked()).unwrap();
        assert!(!out.frames[0].is_empty());
        assert!(out.frames[0].iter().all(|f| f.delivered_ms.is_none()));
        assert_eq!(out.invariants.failed_blocks, out.invariants.transport_blocks);
        assert_eq!(out.invariants.conservation_violations, 0);
    }

    #[test]
    fn no_ues_completes_immediately() {
        let out = run(&config(5.0), &[], Algorithm::Prague, &checked()).unwrap();
        assert!(out.metrics.ues.is_empty());
        assert_eq!(out.end_ms, 0.0);
        assert_eq!(out.invariants.slots_checked, 0);
    }

    #[test]
    fn pf_splits_symmetric_backlogged_flows_evenly() {
        // 5 s of slots, both sources far above the cell capacity at 0 dB
        let mut cfg = config(5.0);
        cfg.bounds = RateBounds { min: 50.0, max: 50.0 };
        cfg.params.drain_grace_ms = 0.0;
        let ues = [ue(0, 0.0, 1, 1), ue(1, 0.0, 1, 2)];
        let out = run(&cfg, &ues, Algorithm::Rtt, &checked()).unwrap();
        let [a, b] = [out.rbgs_assigned[0] as f64, out.rbgs_assigned[1] as f64];
        assert!(a + b > 10_000.0);
        assert!((a / (a + b) - 0.5).abs() < 0.02, "{a} vs {b}");
        assert_eq!(out.invariants.work_conservation_violations, 0);
    }

    #[test]
    fn single_ue_with_ample_capacity_is_pinned_at_max_rate() {
        let cfg = config(3.0);
        let out = run(&cfg, &[ue(0, 25.0, 1, 3)], Algorithm::MaxCap, &checked()).unwrap();
        let rates = &out.rate_changes[0];
        assert_eq!(rates.last().unwrap().1, cfg.bounds.max);
        // after the first publication every frame is encoded at R_max
        assert!(out.frames[0].iter().filter(|f| f.gen_ms > 2.0).all(|f| f.encoding_rate_mbps == cfg.bounds.max));
        assert_eq!(out.metrics.ues[0].stall_episodes, 0);
        assert!(out.metrics.ues[0].satisfied);
    }

    #[test]
    fn static_ux_cell_delay_is_bounded_by_one_window() {
        let mut cfg = config(4.0);
        cfg.link.target_bler = 0.0;
        let ues = [ue(0, 8.0, 1, 1), ue(1, 14.0, 2, 2), ue(2, 20.0, 3, 3), ue(3, 5.0, 4, 4)];
        for alg in [Algorithm::MaxCap, Algorithm::MaxMin] {
            let out = run(&cfg, &ues, alg, &checked()).unwrap();
            let bound = cfg.params.encode_delay_ms
                + cfg.params.backhaul_delay_ms
                + cfg.ux.t_win_ms
                + cfg.slot.pattern_duration_ms()
                + cfg.params.decode_delay_ms;
            for f in out.frames.iter().flatten().filter(|f| f.gen_ms > 100.0) {
                assert!(f.delay_ms().unwrap() <= bound, "{alg}: delay {:?} > {bound}", f.delay_ms());
            }
        }
    }

    #[test]
    fn frames_decode_in_order_and_invariants_hold() {
        let cfg = config(3.0);
        let ues: Vec<UeSetup> = (0..4).map(|i| ue(i, 3.0 + 4.0 * i as f64, 1 + i % 4, 10 + u64::from(i))).collect();
        for alg in Algorithm::ALL {
            let out = run(&cfg, &ues, alg, &checked()).unwrap();
            let inv = out.invariants;
            assert_eq!(inv.conservation_violations, 0, "{alg}");
            assert_eq!(inv.work_conservation_violations, 0, "{alg}");
            assert_eq!(inv.causality_violations, 0, "{alg}");
            assert_eq!(inv.budget_violations, 0, "{alg}");
            assert!(inv.slots_checked > 0);
            for frames in &out.frames {
                let decoded: Vec<f64> = frames.iter().filter_map(|f| f.decoded_ms).collect();
                assert!(decoded.windows(2).all(|w| w[0] <= w[1]), "{alg}");
            }
        }
    }

    #[test]
    fn same_inputs_give_identical_runs() {
        let cfg = config(2.0);
        let ues: Vec<UeSetup> = (0..3).map(|i| ue(i, 2.0 + 6.0 * i as f64, 1 + i, 40 + u64::from(i))).collect();
        for alg in Algorithm::ALL {
            let a = run(&cfg, &ues, alg, &RunOptions::default()).unwrap();
            let b = run(&cfg, &ues, alg, &RunOptions::default()).unwrap();
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.controller_log, b.controller_log);
            assert_eq!(a.allocation_log, b.allocation_log);
        }
    }

    #[test]
    fn rejects_patterns_without_downlink() {
        let mut cfg = config(1.0);
        cfg.slot.pattern = "UUUUU".into();
        assert!(matches!(run(&cfg, &[], Algorithm::Rtt, &checked()), Err(SimError::Setup(_))));
    }
}
