//! Quality–bitrate curves and the per-UE scene process.
//!
//! A [`QbCurve`] maps an encoding bitrate (Mbps) to a PSNR (dB) using a
//! clamped logarithmic law:
//!
//! ```text
//! q(r) = clamp(q_ref + slope * log2(r / r_ref), q_floor, q_ceil)
//! ```
//!
//! Each UE watches a sequence of scenes whose curves differ in complexity;
//! the sequence is drawn by [`SceneProcess::sample_timeline`].

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;
use crate::RateBounds;

#[derive(Debug, Error, PartialEq)]
pub enum QbError {
    #[error("rate {rate} Mbps outside allowed range [{min}, {max}]")]
    RateOutOfRange { rate: f64, min: f64, max: f64 },
    #[error("time {t} s outside timeline [0, {horizon})")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("scene library is empty")]
    EmptyLibrary,
    #[error("duplicate scene id {0}")]
    DuplicateScene(u32),
    #[error("invalid scene process: {0}")]
    InvalidProcess(String),
    #[error("scene library {path}: {msg}")]
    Library { path: String, msg: String },
}

/// Clamped log-rate quality curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QbCurve {
    /// PSNR (dB) at `r_ref`.
    pub q_ref: f64,
    /// Reference bitrate (Mbps).
    pub r_ref: f64,
    /// dB gained per doubling of the bitrate.
    pub slope: f64,
    pub q_floor: f64,
    pub q_ceil: f64,
}

/// Outcome of inverting a curve at a quality target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RequiredRate {
    /// Minimum admissible rate reaching the target.
    Feasible(f64),
    /// Target lies above the curve's value at the maximum allowed rate.
    Infeasible,
}

impl RequiredRate {
    pub fn rate(self) -> Option<f64> {
        match self {
            RequiredRate::Feasible(r) => Some(r),
            RequiredRate::Infeasible => None,
        }
    }
}

/// Anything the allocators can ask "how good at this rate" and "how much
/// rate for this quality".
pub trait QualityCurve {
    /// Quality at `rate_mbps`, without domain checks.
    fn quality(&self, rate_mbps: f64) -> f64;
    /// Smallest rate in `bounds` reaching `target_db`.
    fn required_rate(&self, target_db: f64, bounds: RateBounds) -> RequiredRate;
}

impl QbCurve {
    pub fn new(q_ref: f64, r_ref: f64, slope: f64, q_floor: f64, q_ceil: f64) -> Result<Self, QbError> {
        let c = QbCurve { q_ref, r_ref, slope, q_floor, q_ceil };
        c.validate()?;
        Ok(c)
    }

    /// Curve passing through `(rate, q)` with the given slope and limits.
    pub fn anchored(rate: f64, q: f64, slope: f64, q_floor: f64, q_ceil: f64) -> Result<Self, QbError> {
        Self::new(q, rate, slope, q_floor, q_ceil)
    }

    pub fn validate(&self) -> Result<(), QbError> {
        let finite = [self.q_ref, self.r_ref, self.slope, self.q_floor, self.q_ceil]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(QbError::InvalidCurve("non-finite field".into()));
        }
        if self.slope <= 0.0 {
            return Err(QbError::InvalidCurve(format!("slope must be > 0, got {}", self.slope)));
        }
        if self.r_ref <= 0.0 {
            return Err(QbError::InvalidCurve(format!("r_ref must be > 0, got {}", self.r_ref)));
        }
        if self.q_floor >= self.q_ceil {
            return Err(QbError::InvalidCurve(format!(
                "q_floor ({}) must be below q_ceil ({})",
                self.q_floor, self.q_ceil
            )));
        }
        Ok(())
    }

    /// PSNR at `rate`, which must lie inside `bounds`.
    pub fn evaluate(&self, rate: f64, bounds: RateBounds) -> Result<f64, QbError> {
        if !(rate >= bounds.min && rate <= bounds.max) {
            return Err(QbError::RateOutOfRange { rate, min: bounds.min, max: bounds.max });
        }
        Ok(self.quality(rate))
    }

    /// Minimum rate in `bounds` whose quality reaches `target`.
    pub fn invert(&self, target: f64, bounds: RateBounds) -> RequiredRate {
        if target <= self.quality(bounds.min) {
            return RequiredRate::Feasible(bounds.min);
        }
        if target > self.quality(bounds.max) {
            return RequiredRate::Infeasible;
        }
        // target sits on the unclamped part: q_floor < target <= q_ceil
        let r = self.r_ref * ((target - self.q_ref) / self.slope).exp2();
        // guard against rounding pushing the closed form just under the target
        let r = if self.quality(r) < target { next_up(r) } else { r };
        RequiredRate::Feasible(r.clamp(bounds.min, bounds.max))
    }
}

impl QualityCurve for QbCurve {
    fn quality(&self, rate_mbps: f64) -> f64 {
        let q = self.q_ref + self.slope * (rate_mbps / self.r_ref).log2();
        q.clamp(self.q_floor, self.q_ceil)
    }

    fn required_rate(&self, target_db: f64, bounds: RateBounds) -> RequiredRate {
        self.invert(target_db, bounds)
    }
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u32,
    pub curve: QbCurve,
    pub complexity_label: String,
}

/// Ordered collection of scenes with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLibrary {
    scenes: Vec<Scene>,
}

impl SceneLibrary {
    pub fn new(scenes: Vec<Scene>) -> Result<Self, QbError> {
        if scenes.is_empty() {
            return Err(QbError::EmptyLibrary);
        }
        let mut ids: Vec<u32> = scenes.iter().map(|s| s.scene_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(QbError::DuplicateScene(w[0]));
        }
        for s in &scenes {
            s.curve.validate()?;
        }
        Ok(SceneLibrary { scenes })
    }

    /// Four scenes needing 3, 8, 13 and 19 Mbps for 35 dB. The 19 and 3 Mbps
    /// anchors are the complex and simple cloud-game scenes; the middle two
    /// interpolate. Complex content gets a steeper curve.
    pub fn default_library() -> Self {
        let spec = [
            (1, 19.0, 4.0, "complex"),
            (2, 3.0, 3.0, "simple"),
            (3, 8.0, 3.3, "moderate"),
            (4, 13.0, 3.6, "busy"),
        ];
        let scenes = spec
            .iter()
            .map(|&(id, rate, slope, label)| Scene {
                scene_id: id,
                curve: QbCurve::anchored(rate, 35.0, slope, 20.0, 48.0).expect("valid default curve"),
                complexity_label: label.to_string(),
            })
            .collect();
        SceneLibrary::new(scenes).expect("valid default library")
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn get(&self, scene_id: u32) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    /// Reads a CSV scene library.
    ///
    /// Columns: `scene_id,label,q_ref_db,r_ref_mbps,slope_db_per_doubling,q_floor_db,q_ceil_db`.
    /// Lines starting with `#` are ignored.
    pub fn load(path: &Path) -> Result<Self, QbError> {
        let err = |msg: String| QbError::Library { path: path.display().to_string(), msg };
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| err(e.to_string()))?;
        let mut scenes = Vec::new();
        for rec in rdr.deserialize::<SceneRecord>() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let curve = QbCurve::new(rec.q_ref_db, rec.r_ref_mbps, rec.slope_db_per_doubling, rec.q_floor_db, rec.q_ceil_db)
                .map_err(|e| err(format!("scene {}: {e}", rec.scene_id)))?;
            scenes.push(Scene { scene_id: rec.scene_id, curve, complexity_label: rec.label });
        }
        SceneLibrary::new(scenes).map_err(|e| err(e.to_string()))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.scenes {
            wtr.serialize(SceneRecord {
                scene_id: s.scene_id,
                label: s.complexity_label.clone(),
                q_ref_db: s.curve.q_ref,
                r_ref_mbps: s.curve.r_ref,
                slope_db_per_doubling: s.curve.slope,
                q_floor_db: s.curve.q_floor,
                q_ceil_db: s.curve.q_ceil,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    scene_id: u32,
    label: String,
    q_ref_db: f64,
    r_ref_mbps: f64,
    slope_db_per_doubling: f64,
    q_floor_db: f64,
    q_ceil_db: f64,
}

/// Scene switching process of one UE.
#[derive(Debug, Clone)]
pub struct SceneProcess {
    pub library: SceneLibrary,
    /// Mean scene duration in seconds.
    pub mean_duration: f64,
    pub rng_seed: u64,
}

/// One scene segment, active on `[start, next.start)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSegment {
    pub start: f64,
    pub scene: Scene,
}

/// Contiguous scene segments tiling `[0, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTimeline {
    segments: Vec<SceneSegment>,
    horizon: f64,
}

impl SceneProcess {
    /// Draws segments with i.i.d. exponential durations. The first scene is
    /// uniform over the library and each switch moves to a different scene,
    /// uniformly.
    pub fn sample_timeline(&self, horizon: f64) -> Result<SceneTimeline, QbError> {
        if self.library.is_empty() {
            return Err(QbError::EmptyLibrary);
        }
        if !(self.mean_duration > 0.0 && self.mean_duration.is_finite()) {
            return Err(QbError::InvalidProcess(format!("mean_duration must be > 0, got {}", self.mean_duration)));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(QbError::InvalidProcess(format!("horizon must be > 0, got {horizon}")));
        }
        let scenes = self.library.scenes();
        let mut rng: ChaCha8Rng = stream(self.rng_seed, 0, "scene");
        let mut idx = rng.random_range(0..scenes.len());
        if scenes.len() == 1 {
            return Ok(SceneTimeline {
                segments: vec![SceneSegment { start: 0.0, scene: scenes[0].clone() }],
                horizon,
            });
        }
        let exp = Exp::new(1.0 / self.mean_duration).expect("positive rate");
        let mut segments = vec![SceneSegment { start: 0.0, scene: scenes[idx].clone() }];
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t >= horizon {
                break;
            }
            // a zero-length draw would break strict ordering
            if t <= segments.last().map(|s| s.start).unwrap_or(0.0) {
                continue;
            }
            let step = rng.random_range(1..scenes.len());
            idx = (idx + step) % scenes.len();
            segments.push(SceneSegment { start: t, scene: scenes[idx].clone() });
        }
        Ok(SceneTimeline { segments, horizon })
    }
}

impl SceneTimeline {
    /// Timeline holding one scene for the whole horizon.
    pub fn constant(scene: Scene, horizon: f64) -> Self {
        SceneTimeline { segments: vec![SceneSegment { start: 0.0, scene }], horizon }
    }

    pub fn segments(&self) -> &[SceneSegment] {
        &self.segments
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Segment active at `t` seconds. Segments are half-open.
    pub fn segment_at(&self, t: f64) -> Result<&SceneSegment, QbError> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(QbError::TimeOutOfRange { t, horizon: self.horizon });
        }
        let i = self.segments.partition_point(|s| s.start <= t);
        Ok(&self.segments[i - 1])
    }

    pub fn curve_at(&self, t: f64) -> Result<QbCurve, QbError> {
        self.segment_at(t).map(|s| s.scene.curve)
    }

    /// Like [`curve_at`](Self::curve_at) but holds the last scene past the horizon.
    pub fn scene_at_clamped(&self, t: f64) -> &Scene {
        let i = self.segments.partition_point(|s| s.start <= t.max(0.0));
        &self.segments[i.max(1) - 1].scene
    }
}
