//! Domain types shared across the tracker, metrics, I/O and harness.

use std::fmt;

use crate::error::{Error, Result};
use crate::motion::KalmanState;

/// Axis-aligned box in MOT layout: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        let b = BoundingBox {
            left,
            top,
            width,
            height,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.left, self.top, self.width, self.height]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("bounding box"));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "width and height must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    /// (center-x, center-y, aspect = w/h, height)
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width / self.height, self.height]
    }

    pub fn from_xyah(xyah: [f64; 4]) -> Self {
        let [cx, cy, a, h] = xyah;
        let w = a * h;
        BoundingBox {
            left: cx - w / 2.0,
            top: cy - h / 2.0,
            width: w,
            height: h,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            left: self.left + dx,
            top: self.top + dy,
            ..*self
        }
    }
}

/// Embedding vector. Every vector that enters the tracker is unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps `values` as-is after checking they are finite and non-empty.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ZeroVector);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector(values))
    }

    /// Wraps `values` scaled to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(values)?;
        let n = v.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        v.0.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// One face observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u32,
    pub det_id: i64,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub quality: Option<f64>,
    pub bio: FeatureVector,
    pub app: FeatureVector,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidConfidence(self.confidence));
        }
        if let Some(q) = self.quality {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidArgument(format!(
                    "(frame {}, det {}) quality {q} out of [0,1]",
                    self.frame_id, self.det_id
                )));
            }
        }
        Ok(())
    }
}

/// All detections of one frame. `detections` may be empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub frame_id: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Deleted,
}

impl TrackState {
    pub fn can_transition_to(self, next: TrackState) -> bool {
        use TrackState::*;
        matches!(
            (self, next),
            (Tentative, Confirmed) | (Tentative, Deleted) | (Confirmed, Deleted)
        ) || self == next
    }
}

/// A result row buffered while its track is still tentative.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingRow {
    pub frame: u32,
    pub det_id: i64,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u64,
    pub state: TrackState,
    pub kalman: KalmanState,
    pub bio_mem: FeatureVector,
    pub app_mem: FeatureVector,
    pub hits: u32,
    /// Frames since the last successful match; this is the cascade age.
    pub time_since_update: u32,
    pub created_frame: u32,
    /// (frame, det_id) of the detection that last updated this track.
    pub last_detection: (u32, i64),
    pub(crate) pending: Vec<PendingRow>,
}

impl Track {
    pub fn is_confirmed(&self) -> bool {
        self.state == TrackState::Confirmed
    }

    pub fn is_tentative(&self) -> bool {
        self.state == TrackState::Tentative
    }

    pub(crate) fn set_state(&mut self, next: TrackState) {
        debug_assert!(
            self.state.can_transition_to(next),
            "illegal transition {:?} -> {:?}",
            self.state,
            next
        );
        if self.state.can_transition_to(next) {
            self.state = next;
        }
    }
}

/// How the biometric/appearance weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSetting {
    Fixed(f64),
    /// Per-detection weight from the normalized face-quality score.
    DynamicQuality,
}

impl fmt::Display for LambdaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSetting::Fixed(v) => write!(f, "{v}"),
            LambdaSetting::DynamicQuality => f.write_str("dynamic_quality"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Biometric weight in the feature cost; `1 - lambda` goes to appearance.
    pub lambda: LambdaSetting,
    /// Weight of the feature cost against the position cost.
    pub beta: f64,
    /// General cost threshold; entries above it are rejected.
    pub theta: f64,
    /// Mahalanobis gate (squared distance, 4 DoF).
    pub theta_pos: f64,
    /// EMA momentum for the feature memories.
    pub alpha_ema: f64,
    pub n_init: u32,
    pub n_max: u32,
    pub min_iou: f64,
    pub use_cascade: bool,
    pub use_iou_fallback: bool,
    /// Use the raw Mahalanobis distance as position cost instead of `d / theta_pos`.
    pub position_cost_raw: bool,
    /// Offer every unmatched confirmed track to the IoU fallback, not only age-1 ones.
    pub fallback_all_unmatched: bool,
    /// Emit predicted boxes for confirmed tracks that coast through a frame.
    pub emit_predictions: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            lambda: LambdaSetting::Fixed(0.1),
            beta: 0.98,
            theta: 0.2,
            theta_pos: crate::motion::CHI2_095_4DOF,
            alpha_ema: 0.9,
            n_init: 1,
            n_max: 100,
            min_iou: 0.3,
            use_cascade: true,
            use_iou_fallback: true,
            position_cost_raw: false,
            fallback_all_unmatched: false,
            emit_predictions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl TrackerConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = LambdaSetting::Fixed(lambda);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// Returns every violated range constraint.
    pub fn validate(&self) -> std::result::Result<(), Vec<ConfigViolation>> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &'static str, message: String| {
            if !ok {
                out.push(ConfigViolation { field, message });
            }
        };
        let unit = |v: f64| (0.0..=1.0).contains(&v);

        if let LambdaSetting::Fixed(l) = self.lambda {
            check(unit(l), "lambda", "lambda out of [0,1]".into());
        }
        check(unit(self.beta), "beta", "beta out of [0,1]".into());
        check(self.theta > 0.0, "theta", "theta must be > 0".into());
        check(self.theta_pos > 0.0, "theta_pos", "theta_pos must be > 0".into());
        check(unit(self.alpha_ema), "alpha_ema", "alpha_ema out of [0,1]".into());
        check(self.n_init >= 1, "n_init", "n_init must be ≥ 1".into());
        check(self.n_max >= 1, "n_max", "n_max must be ≥ 1".into());
        check(unit(self.min_iou), "min_iou", "min_iou out of [0,1]".into());

        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

/// Free-function form of [`TrackerConfig::validate`].
pub fn validate_config(cfg: &TrackerConfig) -> std::result::Result<(), Vec<ConfigViolation>> {
    cfg.validate()
}

/// Dense `rows x cols` cost matrix with an infeasible sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub const INFEASIBLE: f64 = f64::INFINITY;

    pub fn new(rows: usize, cols: usize) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from row vectors. Non-finite entries become infeasible.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged cost matrix");
        let data = rows
            .iter()
            .flatten()
            .map(|&v| if v.is_finite() { v } else { Self::INFEASIBLE })
            .collect();
        CostMatrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = if v.is_finite() { v } else { Self::INFEASIBLE };
    }

    #[inline]
    pub fn is_feasible(&self, r: usize, c: usize) -> bool {
        self.get(r, c).is_finite()
    }

    pub fn feasible_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut t = CostMatrix::new(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    /// Largest finite entry, if any.
    pub fn max_finite(&self) -> Option<f64> {
        self.data
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }
}
