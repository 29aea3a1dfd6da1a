//! Evaluation quantities: playout stalls, UE satisfaction, delay
//! percentiles and QoE capacity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Frame;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("percentile of an empty set")]
    Empty,
    #[error("percentile rank {0} outside [0, 100]")]
    Rank(f64),
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(MetricsError::Rank(p));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallEpisode {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl StallEpisode {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Playout {
    /// Scheduled display time per frame.
    pub display_ms: Vec<f64>,
    /// How long past its display time each frame decoded; censored frames
    /// count up to the horizon.
    pub late_ms: Vec<f64>,
    pub episodes: Vec<StallEpisode>,
}

impl Playout {
    /// Maximum stall duration, 0 without stalls.
    pub fn msd_ms(&self) -> f64 {
        self.episodes.iter().map(StallEpisode::duration_ms).fold(0.0, f64::max)
    }
}

/// Zero-buffer playout: frame `i` is due at
/// `decode(frame 0) + offset + i · frame_interval`. A frame missing its
/// slot freezes the display until it decodes; overlapping freezes merge
/// into one episode. Undecoded frames freeze the display until `horizon_ms`.
///
/// `decoded` is indexed by frame number. If frame 0 never decodes, the
/// whole span from `first_gen_ms` to the horizon is one episode.
pub fn playout(
    decoded: &[Option<f64>],
    first_gen_ms: f64,
    frame_interval_ms: f64,
    playout_offset_ms: f64,
    horizon_ms: f64,
) -> Playout {
    let n = decoded.len();
    let Some(Some(first)) = decoded.first().copied() else {
        let episodes = if n == 0 || horizon_ms <= first_gen_ms {
            Vec::new()
        } else {
            vec![StallEpisode { start_ms: first_gen_ms, end_ms: horizon_ms }]
        };
        return Playout {
            display_ms: vec![f64::INFINITY; n],
            late_ms: vec![(horizon_ms - first_gen_ms).max(0.0); n],
            episodes,
        };
    };
    let base = first + playout_offset_ms;
    let mut display = Vec::with_capacity(n);
    let mut late = Vec::with_capacity(n);
    let mut episodes: Vec<StallEpisode> = Vec::new();
    for (i, d) in decoded.iter().enumerate() {
        let due = base + i as f64 * frame_interval_ms;
        display.push(due);
        if due >= horizon_ms {
            late.push(0.0);
            continue;
        }
        let end = d.unwrap_or(horizon_ms).min(horizon_ms);
        late.push((end - due).max(0.0));
        if end <= due {
            continue;
        }
        match episodes.last_mut() {
            Some(last) if due <= last.end_ms => last.end_ms = last.end_ms.max(end),
            _ => episodes.push(StallEpisode { start_ms: due, end_ms: end }),
        }
    }
    Playout { display_ms: display, late_ms: late, episodes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionCriteria {
    pub target_db: f64,
    /// Fraction of frames that must reach the target (strictly exceeded).
    pub min_fraction: f64,
    /// Stall bound (MSD must be strictly below).
    pub d_stall_ms: f64,
}

impl Default for SatisfactionCriteria {
    fn default() -> Self {
        SatisfactionCriteria { target_db: 35.0, min_fraction: 0.95, d_stall_ms: 50.0 }
    }
}

pub fn quality_fraction(qualities: &[f64], target_db: f64) -> f64 {
    if qualities.is_empty() {
        return 0.0;
    }
    qualities.iter().filter(|&&q| q >= target_db).count() as f64 / qualities.len() as f64
}

pub fn ue_satisfied(quality_fraction: f64, msd_ms: f64, crit: &SatisfactionCriteria) -> bool {
    quality_fraction > crit.min_fraction && msd_ms < crit.d_stall_ms
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeMetrics {
    pub ue_id: u32,
    pub n_frames: usize,
    pub avg_bitrate_mbps: f64,
    pub quality_fraction: f64,
    pub msd_ms: f64,
    pub p99_delay_ms: f64,
    pub mean_delay_ms: f64,
    pub stall_episodes: usize,
    pub stall_freq_hz: f64,
    pub satisfied: bool,
}

/// Playout parameters shared by every UE in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayoutParams {
    pub frame_interval_ms: f64,
    pub playout_offset_ms: f64,
    /// End of observation; undecoded frames are censored here.
    pub horizon_ms: f64,
    /// Length of the measured period, for stall frequency.
    pub duration_ms: f64,
}

/// Per-UE metrics from that UE's frames, in frame-index order.
pub fn ue_metrics(ue_id: u32, frames: &[Frame], crit: &SatisfactionCriteria, pp: &PlayoutParams) -> UeMetrics {
    if frames.is_empty() {
        return UeMetrics {
            ue_id,
            n_frames: 0,
            avg_bitrate_mbps: 0.0,
            quality_fraction: 0.0,
            msd_ms: 0.0,
            p99_delay_ms: 0.0,
            mean_delay_ms: 0.0,
            stall_episodes: 0,
            stall_freq_hz: 0.0,
            satisfied: false,
        };
    }
    let decoded: Vec<Option<f64>> = frames.iter().map(|f| f.decoded_ms).collect();
    let play = playout(&decoded, frames[0].gen_ms, pp.frame_interval_ms, pp.playout_offset_ms, pp.horizon_ms);
    let qualities: Vec<f64> = frames.iter().map(|f| f.quality_db).collect();
    let delays: Vec<f64> = frames.iter().map(|f| f.decoded_ms.unwrap_or(pp.horizon_ms) - f.gen_ms).collect();
    let n = frames.len() as f64;
    let qf = quality_fraction(&qualities, crit.target_db);
    let msd = play.msd_ms();
    UeMetrics {
        ue_id,
        n_frames: frames.len(),
        avg_bitrate_mbps: frames.iter().map(|f| f.encoding_rate_mbps).sum::<f64>() / n,
        quality_fraction: qf,
        msd_ms: msd,
        p99_delay_ms: percentile(&delays, 99.0).unwrap_or(0.0),
        mean_delay_ms: delays.iter().sum::<f64>() / n,
        stall_episodes: play.episodes.len(),
        stall_freq_hz: play.episodes.len() as f64 / (pp.duration_ms / 1000.0),
        satisfied: ue_satisfied(qf, msd, crit),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub ues: Vec<UeMetrics>,
}

impl RunMetrics {
    /// Fraction of satisfied UEs; 0 for an empty cell.
    pub fn satisfaction_ratio(&self) -> f64 {
        if self.ues.is_empty() {
            return 0.0;
        }
        self.ues.iter().filter(|u| u.satisfied).count() as f64 / self.ues.len() as f64
    }

    pub fn mean_bitrate_mbps(&self) -> f64 {
        mean(self.ues.iter().map(|u| u.avg_bitrate_mbps))
    }

    pub fn mean_p99_delay_ms(&self) -> f64 {
        mean(self.ues.iter().map(|u| u.p99_delay_ms))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// How replications of a sweep point are combined into one ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    Worst,
}

/// Per-replication satisfaction ratios keyed by UE count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub points: BTreeMap<u32, Vec<f64>>,
}

impl SweepResult {
    pub fn insert(&mut self, n_ues: u32, ratio: f64) {
        self.points.entry(n_ues).or_default().push(ratio);
    }

    pub fn ratio(&self, n_ues: u32, agg: Aggregate) -> Option<f64> {
        let v = self.points.get(&n_ues)?;
        if v.is_empty() {
            return None;
        }
        Some(match agg {
            Aggregate::Mean => v.iter().sum::<f64>() / v.len() as f64,
            Aggregate::Worst => v.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    /// Largest UE count whose aggregated ratio reaches `threshold`, 0 if none.
    pub fn qoe_capacity(&self, threshold: f64, agg: Aggregate) -> u32 {
        self.points
            .keys()
            .rev()
            .copied()
            .find(|&n| self.ratio(n, agg).is_some_and(|r| r >= threshold))
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), Ok(99.0));
        assert_eq!(percentile(&v, 100.0), Ok(100.0));
        assert_eq!(percentile(&v, 0.0), Ok(1.0));
        assert_eq!(percentile(&[7.5], 42.0), Ok(7.5));
        assert_eq!(percentile(&[], 50.0), Err(MetricsError::Empty));
        assert_eq!(percentile(&[1.0], 101.0), Err(MetricsError::Rank(101.0)));
    }

    fn on_time(n: usize, interval: f64) -> Vec<Option<f64>> {
        (0..n).map(|i| Some(5.0 + i as f64 * interval)).collect()
    }

    #[test]
    fn playout_all_on_time() {
        let p = playout(&on_time(60, 16.0), 0.0, 16.0, 10.0, 2000.0);
        assert!(p.episodes.is_empty());
        assert_eq!(p.msd_ms(), 0.0);
        assert!(p.late_ms.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn playout_single_late_frame() {
        let mut d = on_time(60, 16.0);
        // frame 20 due at 5 + 10 + 320 = 335; decodes 30 ms late
        d[20] = Some(365.0);
        let p = playout(&d, 0.0, 16.0, 10.0, 2000.0);
        assert_eq!(p.episodes.len(), 1);
        assert_eq!(p.msd_ms(), 30.0);
        assert_eq!(p.late_ms[20], 30.0);
    }

    #[test]
    fn playout_exactly_d_stall_is_unsatisfied() {
        let mut d = on_time(60, 16.0);
        d[10] = Some(5.0 + 10.0 + 160.0 + 50.0);
        let p = playout(&d, 0.0, 16.0, 10.0, 2000.0);
        assert_eq!(p.msd_ms(), 50.0);
        assert!(!ue_satisfied(1.0, p.msd_ms(), &SatisfactionCriteria::default()));
        assert!(ue_satisfied(1.0, 49.9, &SatisfactionCriteria::default()));
    }

    #[test]
    fn playout_merges_overlapping_freezes() {
        let mut d = on_time(10, 10.0);
        // due times 15, 25, 35, ...; frames 3 and 4 decode at 60 and 62
        d[3] = Some(60.0);
        d[4] = Some(62.0);
        let p = playout(&d, 0.0, 10.0, 10.0, 1000.0);
        assert_eq!(p.episodes, vec![StallEpisode { start_ms: 45.0, end_ms: 62.0 }]);
    }

    #[test]
    fn playout_censors_at_horizon() {
        let mut d = on_time(10, 10.0);
        d[8] = None;
        d[9] = None;
        let p = playout(&d, 0.0, 10.0, 10.0, 200.0);
        // frame 8 due at 95
        assert_eq!(p.episodes, vec![StallEpisode { start_ms: 95.0, end_ms: 200.0 }]);
        let p = playout(&[None, Some(3.0)], 1.0, 10.0, 10.0, 101.0);
        assert_eq!(p.msd_ms(), 100.0);
    }

    #[test]
    fn satisfaction_examples() {
        let crit = SatisfactionCriteria::default();
        let q = vec![36.0; 100];
        assert!(ue_satisfied(quality_fraction(&q, 35.0), 0.0, &crit));
        let mut q94 = vec![36.0; 94];
        q94.extend(vec![30.0; 6]);
        assert!(!ue_satisfied(quality_fraction(&q94, 35.0), 0.0, &crit));
        // exactly 95% is not more than 95%
        let mut q95 = vec![36.0; 95];
        q95.extend(vec![30.0; 5]);
        assert!(!ue_satisfied(quality_fraction(&q95, 35.0), 0.0, &crit));
        assert!(!ue_satisfied(1.0, 60.0, &crit));
    }

    #[test]
    fn capacity_examples() {
        let mut s = SweepResult::default();
        s.insert(1, 1.0);
        s.insert(2, 0.95);
        s.insert(3, 0.85);
        assert_eq!(s.qoe_capacity(0.9, Aggregate::Mean), 2);
        let mut all = SweepResult::default();
        for n in 1..=10 {
            all.insert(n, 0.92);
        }
        assert_eq!(all.qoe_capacity(0.9, Aggregate::Mean), 10);
        let mut none = SweepResult::default();
        none.insert(1, 0.5);
        assert_eq!(none.qoe_capacity(0.9, Aggregate::Mean), 0);
    }

    #[test]
    fn capacity_aggregates() {
        let mut s = SweepResult::default();
        s.insert(1, 1.0);
        s.insert(2, 1.0);
        s.insert(2, 0.5);
        assert_eq!(s.ratio(2, Aggregate::Mean), Some(0.75));
        assert_eq!(s.ratio(2, Aggregate::Worst), Some(0.5));
        assert_eq!(s.qoe_capacity(0.7, Aggregate::Mean), 2);
        assert_eq!(s.qoe_capacity(0.7, Aggregate::Worst), 1);
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_oracle(v in prop::collection::vec(-1e3f64..1e3, 1..300), p in 0.0f64..=100.0) {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            // nearest rank: smallest x with #{y <= x} >= p% of n
            let need = p / 100.0 * s.len() as f64;
            let oracle = s.iter().copied().find(|&x| s.iter().filter(|&&y| y <= x).count() as f64 >= need).unwrap();
            prop_assert_eq!(percentile(&v, p).unwrap(), oracle);
        }

        #[test]
        fn percentile_monotone_in_rank(v in prop::collection::vec(-1e3f64..1e3, 1..100), a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
        }

        #[test]
        fn satisfaction_is_monotone(
            late in prop::collection::vec(0.0f64..80.0, 5..60),
            q in prop::collection::vec(25.0f64..45.0, 5..60),
            idx in 0usize..60,
            improve in 0.0f64..80.0,
        ) {
            let crit = SatisfactionCriteria::default();
            let n = late.len();
            let decode = |l: &[f64]| -> Vec<Option<f64>> {
                // frame 0 anchors the display clock and decodes on time
                (0..n).map(|i| Some(if i == 0 { 0.0 } else { 10.0 + i as f64 * 16.0 + l[i] })).collect()
            };
            let base_play = playout(&decode(&late), 0.0, 16.0, 10.0, 1e6);
            let base = ue_satisfied(quality_fraction(&q, 35.0), base_play.msd_ms(), &crit);

            let mut late2 = late.clone();
            let i = 1 + idx % (n - 1);
            late2[i] = (late2[i] - improve).max(0.0);
            let mut q2 = q.clone();
            let j = idx % q.len();
            q2[j] += improve;
            let play2 = playout(&decode(&late2), 0.0, 16.0, 10.0, 1e6);
            let better = ue_satisfied(quality_fraction(&q2, 35.0), play2.msd_ms(), &crit);
            prop_assert!(!base || better);
        }

        #[test]
        fn capacity_non_increasing_in_threshold(
            ratios in prop::collection::vec(0.0f64..=1.0, 1..12),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let mut s = SweepResult::default();
            for (i, r) in ratios.iter().enumerate() {
                s.insert(i as u32 + 1, *r);
            }
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(s.qoe_capacity(hi, Aggregate::Mean) <= s.qoe_capacity(lo, Aggregate::Mean));
        }
    }
}
