//! Track-detection cost construction and the staged matching built on it:
//! fused feature cost, Mahalanobis gate, position fusion, cost threshold,
//! the age-ordered matching cascade and the IoU fallback.

use crate::assignment::{solve_assignment_counted, MatchResult};
use crate::error::{Error, Result};
use crate::model::{BoundingBox, CostMatrix, Detection, FeatureVector, LambdaSetting, Track, TrackerConfig};
use crate::motion::iou;

/// Biometric weight per detection column.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    Fixed(f64),
    PerDetection(Vec<f64>),
}

impl LambdaSpec {
    pub fn validate(&self, n_dets: usize) -> Result<()> {
        let check = |v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidLambda(v))
            }
        };
        match self {
            LambdaSpec::Fixed(v) => check(*v),
            LambdaSpec::PerDetection(vs) => {
                if vs.len() != n_dets {
                    return Err(Error::LambdaLength {
                        expected: n_dets,
                        found: vs.len(),
                    });
                }
                vs.iter().try_for_each(|&v| check(v))
            }
        }
    }

    pub fn weight(&self, det: usize) -> f64 {
        match self {
            LambdaSpec::Fixed(v) => *v,
            LambdaSpec::PerDetection(vs) => vs[det],
        }
    }

    /// Expands to one weight per detection.
    pub fn resolve(&self, n_dets: usize) -> Vec<f64> {
        (0..n_dets).map(|j| self.weight(j)).collect()
    }
}

/// Cosine distance `1 - cos(a, b)`, in [0, 2].
pub fn cosine_cost(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - a.dot(b) / (na * nb)).clamp(0.0, 2.0))
}

/// Work counters for one association pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Cost-matrix entries evaluated (feature, Mahalanobis and IoU).
    pub cost_evaluations: u64,
    /// Inner relaxation steps of the assignment solver.
    pub solver_steps: u64,
}

impl Counters {
    pub fn total(&self) -> u64 {
        self.cost_evaluations + self.solver_steps
    }
}

/// One track-detection feature comparison, recorded for score analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSample {
    pub frame: u32,
    pub track_id: u64,
    /// Detection that last updated the track before this comparison.
    pub track_source: (u32, i64),
    pub det_id: i64,
    pub bio: f64,
    pub app: f64,
    /// Lambda-weighted combination of `bio` and `app`, before any gate.
    pub fused: f64,
}

fn feature_costs(
    tracks: &[&Track],
    dets: &[&Detection],
    lambda: &LambdaSpec,
    counters: &mut Counters,
    mut trace: Option<&mut Vec<CostSample>>,
) -> Result<CostMatrix> {
    lambda.validate(dets.len())?;
    let mut c = CostMatrix::new(tracks.len(), dets.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            let bio = cosine_cost(&t.bio_mem, &d.bio)?;
            let app = cosine_cost(&t.app_mem, &d.app)?;
            let l = lambda.weight(j);
            let fused = l * bio + (1.0 - l) * app;
            c.set(i, j, fused);
            counters.cost_evaluations += 1;
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(CostSample {
                    frame: d.frame_id,
                    track_id: t.track_id,
                    track_source: t.last_detection,
                    det_id: d.det_id,
                    bio,
                    app,
                    fused,
                });
            }
        }
    }
    Ok(c)
}

/// Lambda-weighted biometric/appearance cost matrix.
pub fn build_feature_cost(tracks: &[&Track], dets: &[&Detection], lambda: &LambdaSpec) -> Result<CostMatrix> {
    feature_costs(tracks, dets, lambda, &mut Counters::default(), None)
}

/// Squared Mahalanobis distance of every detection to every (predicted) track.
pub fn position_distances(tracks: &[&Track], dets: &[&Detection]) -> Result<CostMatrix> {
    position_distances_counted(tracks, dets, &mut Counters::default())
}

fn position_distances_counted(
    tracks: &[&Track],
    dets: &[&Detection],
    counters: &mut Counters,
) -> Result<CostMatrix> {
    let mut d = CostMatrix::new(tracks.len(), dets.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, det) in dets.iter().enumerate() {
            d.set(i, j, t.kalman.mahalanobis(&det.bbox)?);
            counters.cost_evaluations += 1;
        }
    }
    Ok(d)
}

/// Marks entries whose position distance exceeds `theta_pos` infeasible.
pub fn gate_with_distances(c: &CostMatrix, dist: &CostMatrix, theta_pos: f64) -> CostMatrix {
    let mut out = c.clone();
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if dist.get(i, j) > theta_pos {
                out.set(i, j, CostMatrix::INFEASIBLE);
            }
        }
    }
    out
}

/// `beta * C + (1 - beta) * pos` on feasible entries, where `pos` is
/// `d / theta_pos` or the raw distance when `raw` is set.
pub fn fuse_with_distances(c: &CostMatrix, dist: &CostMatrix, beta: f64, theta_pos: f64, raw: bool) -> CostMatrix {
    let mut out = c.clone();
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if !c.is_feasible(i, j) {
                continue;
            }
            let d = dist.get(i, j);
            let pos = if raw { d } else { d / theta_pos };
            out.set(i, j, beta * c.get(i, j) + (1.0 - beta) * pos);
        }
    }
    out
}

pub fn gate_by_position(c: &CostMatrix, tracks: &[&Track], dets: &[&Detection], theta_pos: f64) -> Result<CostMatrix> {
    Ok(gate_with_distances(c, &position_distances(tracks, dets)?, theta_pos))
}

pub fn fuse_position_cost(
    c: &CostMatrix,
    tracks: &[&Track],
    dets: &[&Detection],
    beta: f64,
    theta_pos: f64,
) -> Result<CostMatrix> {
    Ok(fuse_with_distances(c, &position_distances(tracks, dets)?, beta, theta_pos, false))
}

/// Entries strictly above `theta` become infeasible.
pub fn apply_theta(c: &CostMatrix, theta: f64) -> CostMatrix {
    let mut out = c.clone();
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if c.get(i, j) > theta {
                out.set(i, j, CostMatrix::INFEASIBLE);
            }
        }
    }
    out
}

/// Borrowed view of one frame's association problem. Track and detection
/// indices everywhere refer to positions in `tracks` and `dets`.
pub struct Associator<'a> {
    pub tracks: &'a [Track],
    pub dets: &'a [Detection],
    /// Biometric weight per detection, aligned with `dets`.
    pub lambdas: &'a [f64],
    pub cfg: &'a TrackerConfig,
    pub counters: Counters,
    pub trace: Option<&'a mut Vec<CostSample>>,
}

impl<'a> Associator<'a> {
    pub fn new(tracks: &'a [Track], dets: &'a [Detection], lambdas: &'a [f64], cfg: &'a TrackerConfig) -> Self {
        assert_eq!(lambdas.len(), dets.len());
        Associator {
            tracks,
            dets,
            lambdas,
            cfg,
            counters: Counters::default(),
            trace: None,
        }
    }

    /// Final gated and thresholded cost between the given tracks and detections.
    pub fn full_cost(&mut self, track_idx: &[usize], det_idx: &[usize]) -> Result<CostMatrix> {
        let tracks: Vec<&Track> = track_idx.iter().map(|&i| &self.tracks[i]).collect();
        let dets: Vec<&Detection> = det_idx.iter().map(|&j| &self.dets[j]).collect();
        let lambda = LambdaSpec::PerDetection(det_idx.iter().map(|&j| self.lambdas[j]).collect());
        let c = feature_costs(&tracks, &dets, &lambda, &mut self.counters, self.trace.as_deref_mut())?;
        let dist = position_distances_counted(&tracks, &dets, &mut self.counters)?;
        let c = gate_with_distances(&c, &dist, self.cfg.theta_pos);
        let c = fuse_with_distances(&c, &dist, self.cfg.beta, self.cfg.theta_pos, self.cfg.position_cost_raw);
        Ok(apply_theta(&c, self.cfg.theta))
    }

    /// One feature-cost assignment between the given tracks and detections.
    pub fn solve(&mut self, track_idx: &[usize], det_idx: &[usize]) -> Result<MatchResult> {
        if track_idx.is_empty() || det_idx.is_empty() {
            return Ok(MatchResult::unmatched(track_idx.iter().copied(), det_idx.iter().copied()));
        }
        let c = self.full_cost(track_idx, det_idx)?;
        let m = solve_assignment_counted(&c, &mut self.counters.solver_steps);
        Ok(m.remap(track_idx, det_idx))
    }

    /// Age-ordered matching: tracks unmatched for exactly one frame go first,
    /// then age 2, and so on up to `n_max`. Each level only sees detections
    /// left over by earlier levels.
    pub fn matching_cascade(&mut self, track_idx: &[usize], det_idx: &[usize]) -> Result<MatchResult> {
        let mut remaining: Vec<usize> = det_idx.to_vec();
        let mut matches = Vec::new();
        let max_age = track_idx
            .iter()
            .map(|&i| self.tracks[i].time_since_update)
            .max()
            .unwrap_or(0)
            .min(self.cfg.n_max);
        for age in 1..=max_age {
            if remaining.is_empty() {
                break;
            }
            let level: Vec<usize> = track_idx
                .iter()
                .copied()
                .filter(|&i| self.tracks[i].time_since_update == age)
                .collect();
            if level.is_empty() {
                continue;
            }
            let m = self.solve(&level, &remaining)?;
            matches.extend(m.matches);
            remaining = m.unmatched_detections;
        }
        let matched: Vec<usize> = matches.iter().map(|&(t, _)| t).collect();
        Ok(MatchResult {
            matches,
            unmatched_tracks: track_idx.iter().copied().filter(|t| !matched.contains(t)).collect(),
            unmatched_detections: remaining,
        })
    }

    /// Assignment on `1 - IoU(predicted box, detection box)`; pairs with IoU
    /// below `min_iou` are infeasible.
    pub fn iou_fallback(&mut self, track_idx: &[usize], det_idx: &[usize]) -> MatchResult {
        let predicted: Vec<_> = track_idx.iter().map(|&i| self.tracks[i].kalman.to_box()).collect();
        let boxes: Vec<_> = det_idx.iter().map(|&j| self.dets[j].bbox).collect();
        iou_assign(&predicted, &boxes, self.cfg.min_iou, &mut self.counters).remap(track_idx, det_idx)
    }
}

fn iou_assign(
    tracks: &[BoundingBox],
    dets: &[BoundingBox],
    min_iou: f64,
    counters: &mut Counters,
) -> MatchResult {
    let mut c = CostMatrix::new(tracks.len(), dets.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            let o = iou(t, d);
            counters.cost_evaluations += 1;
            c.set(i, j, if o < min_iou { CostMatrix::INFEASIBLE } else { 1.0 - o });
        }
    }
    solve_assignment_counted(&c, &mut counters.solver_steps)
}

fn resolve_cfg_lambda(cfg: &TrackerConfig, dets: &[Detection]) -> Result<Vec<f64>> {
    match cfg.lambda {
        LambdaSetting::Fixed(v) => Ok(vec![v; dets.len()]),
        LambdaSetting::DynamicQuality => dets
            .iter()
            .map(|d| {
                d.quality.ok_or(Error::MissingQuality {
                    frame: d.frame_id,
                    det_id: d.det_id,
                })
            })
            .collect(),
    }
}

/// Runs the matching cascade over the confirmed tracks in `tracks` against
/// all of `dets`. Tracks must already carry predicted Kalman states.
pub fn matching_cascade(tracks: &[Track], dets: &[Detection], cfg: &TrackerConfig) -> Result<MatchResult> {
    let lambdas = resolve_cfg_lambda(cfg, dets)?;
    let confirmed: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].is_confirmed()).collect();
    let all: Vec<usize> = (0..dets.len()).collect();
    Associator::new(tracks, dets, &lambdas, cfg).matching_cascade(&confirmed, &all)
}

/// IoU matching between every candidate track and every detection given.
pub fn iou_fallback(tracks: &[Track], dets: &[Detection], min_iou: f64) -> MatchResult {
    let predicted: Vec<_> = tracks.iter().map(|t| t.kalman.to_box()).collect();
    let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
    iou_assign(&predicted, &boxes, min_iou, &mut Counters::default())
}
