//! Per-frame tracking loop: predict, cascade, fallback, lifecycle and
//! feature-memory updates.

use crate::association::{Associator, CostSample, Counters, LambdaSpec};
use crate::error::{Error, Result};
use crate::formats::{Mot20Row, SequenceRecord};
use crate::model::{BoundingBox, Detection, FeatureVector, Frame, LambdaSetting, PendingRow, Track, TrackState, TrackerConfig};
use crate::motion::KalmanState;

/// Raw EMA step `alpha * mem + (1 - alpha) * obs`, without normalization.
pub fn ema_blend(mem: &[f64], obs: &[f64], alpha: f64) -> Vec<f64> {
    mem.iter().zip(obs).map(|(m, o)| alpha * m + (1.0 - alpha) * o).collect()
}

/// EMA step followed by re-normalization to unit length.
pub fn ema_update(mem: &FeatureVector, obs: &FeatureVector, alpha: f64) -> Result<FeatureVector> {
    if mem.dim() != obs.dim() {
        return Err(Error::DimMismatch {
            expected: mem.dim(),
            found: obs.dim(),
        });
    }
    FeatureVector::normalized(ema_blend(mem.as_slice(), obs.as_slice(), alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub track_id: u64,
    pub det_id: i64,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameOutput {
    pub frame_id: u32,
    /// Detections assigned to confirmed tracks in this frame.
    pub assignments: Vec<Assignment>,
    /// Earlier rows of tracks confirmed in this frame.
    pub backfilled: Vec<Mot20Row>,
    /// Predicted boxes of coasting confirmed tracks (only with `emit_predictions`).
    pub coasted: Vec<Mot20Row>,
    pub new_track_ids: Vec<u64>,
    pub deleted_track_ids: Vec<u64>,
    pub counters: Counters,
    /// Matches made by the IoU fallback stage.
    pub fallback_matches: usize,
}

impl FrameOutput {
    /// All result rows produced by this step.
    pub fn rows(&self) -> impl Iterator<Item = Mot20Row> + '_ {
        self.assignments
            .iter()
            .map(move |a| Mot20Row::result(self.frame_id, a.track_id, a.bbox, a.confidence))
            .chain(self.backfilled.iter().cloned())
            .chain(self.coasted.iter().cloned())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub frames: usize,
    pub detections: usize,
    pub matches: usize,
    pub fallback_matches: usize,
    pub counters: Counters,
}

impl RunStats {
    /// Share of all detections that were matched by the IoU fallback.
    pub fn fallback_fraction(&self) -> f64 {
        if self.detections == 0 {
            0.0
        } else {
            self.fallback_matches as f64 / self.detections as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerEngine {
    tracks: Vec<Track>,
    next_track_id: u64,
    cfg: TrackerConfig,
    frame_count: u64,
    last_frame: Option<u32>,
    dims: Option<(usize, usize)>,
    quality_scale: f64,
    trace: Option<Vec<CostSample>>,
    stats: RunStats,
}

impl TrackerEngine {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        Ok(TrackerEngine {
            tracks: Vec::new(),
            next_track_id: 1,
            cfg,
            frame_count: 0,
            last_frame: None,
            dims: None,
            quality_scale: 1.0,
            trace: None,
            stats: RunStats::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    /// Divisor applied to quality scores when lambda is quality-driven.
    pub fn set_quality_scale(&mut self, max_quality: f64) {
        self.quality_scale = if max_quality > 0.0 { max_quality } else { 1.0 };
    }

    /// Starts recording every feature comparison for score analysis.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<CostSample> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Lambda for `dets` under the configured setting.
    pub fn lambda_for(&self, dets: &[Detection]) -> Result<LambdaSpec> {
        match self.cfg.lambda {
            LambdaSetting::Fixed(v) => Ok(LambdaSpec::Fixed(v)),
            LambdaSetting::DynamicQuality => dets
                .iter()
                .map(|d| {
                    d.quality
                        .map(|q| (q / self.quality_scale).clamp(0.0, 1.0))
                        .ok_or(Error::MissingQuality {
                            frame: d.frame_id,
                            det_id: d.det_id,
                        })
                })
                .collect::<Result<Vec<_>>>()
                .map(LambdaSpec::PerDetection),
        }
    }

    pub fn step(&mut self, frame_id: u32, dets: &[Detection]) -> Result<FrameOutput> {
        let lambda = self.lambda_for(dets)?;
        self.step_with_lambda(frame_id, dets, &lambda)
    }

    fn check_input(&mut self, frame_id: u32, dets: &[Detection], lambda: &LambdaSpec) -> Result<()> {
        if let Some(prev) = self.last_frame {
            if frame_id <= prev {
                return Err(Error::FrameOrder {
                    previous: prev,
                    found: frame_id,
                });
            }
        }
        for d in dets {
            if d.frame_id != frame_id {
                return Err(Error::FrameMismatch {
                    frame: d.frame_id,
                    det_id: d.det_id,
                    expected: frame_id,
                });
            }
            d.validate()?;
            let (bio, app) = *self.dims.get_or_insert((d.bio.dim(), d.app.dim()));
            for (expected, found) in [(bio, d.bio.dim()), (app, d.app.dim())] {
                if expected != found {
                    return Err(Error::DimMismatch { expected, found });
                }
            }
        }
        lambda.validate(dets.len())
    }

    /// Processes one frame with an explicit per-detection lambda.
    pub fn step_with_lambda(&mut self, frame_id: u32, dets: &[Detection], lambda: &LambdaSpec) -> Result<FrameOutput> {
        self.check_input(frame_id, dets, lambda)?;
        self.last_frame = Some(frame_id);
        self.frame_count += 1;

        for t in &mut self.tracks {
            t.kalman = t.kalman.predict();
            t.time_since_update += 1;
        }

        let lambdas = lambda.resolve(dets.len());
        let cfg = &self.cfg;
        let all_dets: Vec<usize> = (0..dets.len()).collect();
        let confirmed: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].is_confirmed() && self.tracks[i].time_since_update <= cfg.n_max)
            .collect();
        let tentative: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].is_tentative()).collect();

        let mut assoc = Associator::new(&self.tracks, dets, &lambdas, cfg);
        assoc.trace = self.trace.as_mut();
        let primary = if cfg.use_cascade {
            assoc.matching_cascade(&confirmed, &all_dets)?
        } else {
            assoc.solve(&confirmed, &all_dets)?
        };

        let (secondary, fallback_matches) = if cfg.use_iou_fallback {
            let mut candidates: Vec<usize> = primary
                .unmatched_tracks
                .iter()
                .copied()
                .filter(|&i| cfg.fallback_all_unmatched || self.tracks[i].time_since_update == 1)
                .chain(tentative.iter().copied())
                .collect();
            candidates.sort_unstable();
            let m = assoc.iou_fallback(&candidates, &primary.unmatched_detections);
            let n = m.matches.len();
            (m, n)
        } else {
            // Without the IoU stage tentative tracks still need a way to be
            // confirmed, so they get a feature-cost pass of their own.
            (assoc.solve(&tentative, &primary.unmatched_detections)?, 0)
        };
        let counters = assoc.counters;

        let mut matched_det = vec![false; dets.len()];
        let mut matched_track = vec![false; self.tracks.len()];
        let mut out = FrameOutput {
            frame_id,
            counters,
            fallback_matches,
            ..Default::default()
        };

        for &(ti, dj) in primary.matches.iter().chain(&secondary.matches) {
            matched_det[dj] = true;
            matched_track[ti] = true;
            let det = &dets[dj];
            let t = &mut self.tracks[ti];
            t.kalman = t.kalman.update_nsa(&det.bbox, det.confidence)?;
            t.bio_mem = ema_update(&t.bio_mem, &det.bio, cfg.alpha_ema)?;
            t.app_mem = ema_update(&t.app_mem, &det.app, cfg.alpha_ema)?;
            t.time_since_update = 0;
            t.hits += 1;
            t.last_detection = (frame_id, det.det_id);
            if t.is_tentative() {
                t.pending.push(PendingRow {
                    frame: frame_id,
                    det_id: det.det_id,
                    bbox: det.bbox,
                    confidence: det.confidence,
                });
                if t.hits > cfg.n_init {
                    t.set_state(TrackState::Confirmed);
                    let id = t.track_id;
                    let mut pending = std::mem::take(&mut t.pending);
                    // The current frame's row goes out as an assignment.
                    pending.pop();
                    out.backfilled
                        .extend(pending.into_iter().map(|p| Mot20Row::result(p.frame, id, p.bbox, p.confidence)));
                }
            }
            if t.is_confirmed() {
                out.assignments.push(Assignment {
                    track_id: t.track_id,
                    det_id: det.det_id,
                    bbox: det.bbox,
                    confidence: det.confidence,
                });
            }
        }

        for (ti, t) in self.tracks.iter_mut().enumerate() {
            if matched_track[ti] {
                continue;
            }
            if t.is_tentative() || t.time_since_update > cfg.n_max {
                t.set_state(TrackState::Deleted);
                out.deleted_track_ids.push(t.track_id);
            } else if cfg.emit_predictions {
                out.coasted.push(Mot20Row::result(frame_id, t.track_id, t.kalman.to_box(), 0.0));
            }
        }
        self.tracks.retain(|t| t.state != TrackState::Deleted);

        for (dj, det) in dets.iter().enumerate() {
            if matched_det[dj] {
                continue;
            }
            let id = self.next_track_id;
            self.next_track_id += 1;
            self.tracks.push(Track {
                track_id: id,
                state: TrackState::Tentative,
                kalman: KalmanState::initiate(&det.bbox)?,
                bio_mem: det.bio.clone(),
                app_mem: det.app.clone(),
                hits: 1,
                time_since_update: 0,
                created_frame: frame_id,
                last_detection: (frame_id, det.det_id),
                pending: vec![PendingRow {
                    frame: frame_id,
                    det_id: det.det_id,
                    bbox: det.bbox,
                    confidence: det.confidence,
                }],
            });
            out.new_track_ids.push(id);
        }

        out.assignments.sort_by_key(|a| a.track_id);
        self.stats.frames += 1;
        self.stats.detections += dets.len();
        self.stats.matches += primary.matches.len() + secondary.matches.len();
        self.stats.fallback_matches += fallback_matches;
        self.stats.counters.cost_evaluations += counters.cost_evaluations;
        self.stats.counters.solver_steps += counters.solver_steps;
        Ok(out)
    }
}

/// Everything a sequence run produces.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub record: SequenceRecord,
    pub stats: RunStats,
    pub trace: Vec<CostSample>,
}

/// Largest quality score over all detections; errors if any is missing.
pub fn max_quality(frames: &[Frame]) -> Result<f64> {
    frames
        .iter()
        .flat_map(|f| &f.detections)
        .try_fold(0.0f64, |m, d| {
            d.quality.map(|q| m.max(q)).ok_or(Error::MissingQuality {
                frame: d.frame_id,
                det_id: d.det_id,
            })
        })
}

/// Runs the engine over a whole sequence and returns the canonical result rows.
pub fn run_sequence(engine: &mut TrackerEngine, frames: &[Frame]) -> Result<SequenceRecord> {
    Ok(run_sequence_detailed(engine, frames)?.record)
}

pub fn run_sequence_detailed(engine: &mut TrackerEngine, frames: &[Frame]) -> Result<RunOutput> {
    if engine.cfg.lambda == LambdaSetting::DynamicQuality {
        let m = max_quality(frames)?;
        engine.set_quality_scale(m);
    }
    let mut rows = Vec::new();
    for f in frames {
        rows.extend(engine.step(f.frame_id, &f.detections)?.rows());
    }
    let mut record = SequenceRecord { rows };
    record.sort_canonical();
    Ok(RunOutput {
        record,
        stats: engine.stats(),
        trace: engine.take_trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::normalized(v.to_vec()).unwrap()
    }

    fn det(frame: u32, id: i64, l: f64, t: f64, f: &[f64]) -> Detection {
        Detection {
            frame_id: frame,
            det_id: id,
            bbox: BoundingBox::new(l, t, 40.0, 80.0).unwrap(),
            confidence: 0.9,
            quality: Some(0.8),
            bio: fv(f),
            app: fv(f),
        }
    }

    #[test]
    fn ema_cases() {
        let m = fv(&[1.0, 0.0]);
        let o = fv(&[0.0, 1.0]);
        let u = ema_update(&m, &o, 0.9).unwrap();
        let n = (0.81f64 + 0.01).sqrt();
        assert!((u.as_slice()[0] - 0.9 / n).abs() < 1e-12);
        assert!((u.as_slice()[1] - 0.1 / n).abs() < 1e-12);
        assert!((u.as_slice()[0] - 0.99388).abs() < 1e-5);
        assert!((u.as_slice()[1] - 0.11043).abs() < 1e-5);
        assert_eq!(ema_update(&m, &o, 1.0).unwrap(), m);
        assert_eq!(ema_update(&m, &o, 0.0).unwrap(), o);
        let anti = fv(&[-1.0, 0.0]);
        assert!(matches!(ema_update(&m, &anti, 0.5), Err(Error::ZeroVector)));
    }

    #[test]
    fn cold_start_creates_tentative_tracks_without_output() {
        let mut e = TrackerEngine::new(TrackerConfig::default()).unwrap();
        let dets: Vec<_> = (0..3)
            .map(|i| det(1, i, 100.0 * i as f64, 0.0, &[1.0, i as f64, 0.0]))
            .collect();
        let out = e.step(1, &dets).unwrap();
        assert!(out.assignments.is_empty());
        assert_eq!(out.new_track_ids, vec![1, 2, 3]);
        assert!(e.tracks().iter().all(|t| t.is_tentative()));
    }

    #[test]
    fn confirmation_backfills_first_row() {
        let mut e = TrackerEngine::new(TrackerConfig::default()).unwrap();
        let f = [1.0, 0.0];
        e.step(1, &[det(1, 0, 10.0, 10.0, &f)]).unwrap();
        let out = e.step(2, &[det(2, 0, 11.0, 10.0, &f)]).unwrap();
        assert_eq!(out.assignments.len(), 1);
        assert_eq!(out.backfilled.len(), 1);
        assert_eq!(out.backfilled[0].frame, 1);
        assert_eq!(out.backfilled[0].id, 1);
        assert!(e.tracks()[0].is_confirmed());
        assert_eq!(e.tracks()[0].time_since_update, 0);
    }

    #[test]
    fn unmatched_tentative_is_deleted() {
        let mut e = TrackerEngine::new(TrackerConfig::default()).unwrap();
        e.step(1, &[det(1, 0, 10.0, 10.0, &[1.0, 0.0])]).unwrap();
        let out = e.step(2, &[]).unwrap();
        assert_eq!(out.deleted_track_ids, vec![1]);
        assert!(e.tracks().is_empty());
    }

    #[test]
    fn frame_order_enforced() {
        let mut e = TrackerEngine::new(TrackerConfig::default()).unwrap();
        e.step(5, &[]).unwrap();
        assert!(matches!(e.step(5, &[]), Err(Error::FrameOrder { .. })));
        assert!(matches!(
            e.step(6, &[det(7, 0, 0.0, 0.0, &[1.0])]),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut e = TrackerEngine::new(TrackerConfig::default()).unwrap();
        e.step(1, &[det(1, 0, 0.0, 0.0, &[1.0, 0.0])]).unwrap();
        assert!(matches!(
            e.step(2, &[det(2, 0, 0.0, 0.0, &[1.0, 0.0, 0.0])]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn dynamic_quality_requires_scores() {
        let cfg = TrackerConfig {
            lambda: LambdaSetting::DynamicQuality,
            ..Default::default()
        };
        let mut e = TrackerEngine::new(cfg).unwrap();
        let mut d = det(1, 0, 0.0, 0.0, &[1.0, 0.0]);
        d.quality = None;
        assert!(matches!(e.step(1, &[d]), Err(Error::MissingQuality { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrackerConfig::default().with_lambda(-0.5);
        assert!(matches!(TrackerEngine::new(cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn emit_predictions_produces_coasted_rows() {
        let cfg = TrackerConfig {
            emit_predictions: true,
            ..Default::default()
        };
        let mut e = TrackerEngine::new(cfg).unwrap();
        let f = [1.0, 0.0];
        e.step(1, &[det(1, 0, 10.0, 10.0, &f)]).unwrap();
        e.step(2, &[det(2, 0, 10.0, 10.0, &f)]).unwrap();
        let out = e.step(3, &[]).unwrap();
        assert_eq!(out.coasted.len(), 1);
        assert_eq!(out.coasted[0].id, 1);
    }

    proptest! {
        #[test]
        fn ema_memory_stays_unit(
            a in prop::collection::vec(-1.0..1.0f64, 8),
            b in prop::collection::vec(-1.0..1.0f64, 8),
            alpha in 0.0..1.0f64,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let m = fv(&a);
            let o = fv(&b);
            if let Ok(u) = ema_update(&m, &o, alpha) {
                prop_assert!((u.norm() - 1.0).abs() < 1e-9);
            }
        }

        /// Random hit/miss sequences never produce an illegal state change.
        #[test]
        fn lifecycle_transitions_are_legal(events in prop::collection::vec(any::<bool>(), 1..60)) {
            let cfg = TrackerConfig { n_max: 3, ..Default::default() };
            let mut e = TrackerEngine::new(cfg).unwrap();
            let f = [1.0, 0.0];
            let mut last: Option<TrackState> = None;
            for (k, hit) in events.iter().enumerate() {
                let frame = k as u32 + 1;
                let dets = if *hit { vec![det(frame, 0, 50.0, 50.0, &f)] } else { vec![] };
                let out = e.step(frame, &dets).unwrap();
                let now = e.tracks().iter().find(|t| t.track_id == 1).map(|t| t.state);
                let now = match (now, out.deleted_track_ids.contains(&1)) {
                    (Some(s), _) => Some(s),
                    (None, true) => Some(TrackState::Deleted),
                    (None, false) => last.filter(|s| *s == TrackState::Deleted),
                };
                if let (Some(prev), Some(next)) = (last, now) {
                    prop_assert!(prev.can_transition_to(next), "{:?} -> {:?}", prev, next);
                }
                if now.is_some() {
                    last = now;
                }
                let ids: Vec<_> = e.tracks().iter().map(|t| t.track_id).collect();
                let mut sorted = ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), ids.len());
            }
        }
    }
}
