//! Parameter studies over one sequence: fixed-lambda sweeps, quality-driven
//! lambda, a per-frame local lambda grid search, theta x lambda grids and
//! component ablations. Results render as CSV tables.
//!
//! Independent parameter points run on scoped threads; output order always
//! follows the input order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::association::LambdaSpec;
use crate::error::{Error, Result};
use crate::formats::{Mot20Row, SequenceRecord};
use crate::metrics::{evaluate, match_frame, AssocCounts, FramePairing, MetricsReport};
use crate::model::{Frame, LambdaSetting, TrackerConfig};
use crate::tracker::{run_sequence_detailed, TrackerEngine};

/// One tracker run and its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub label: String,
    pub lambda: LambdaSetting,
    pub theta: f64,
    pub use_cascade: bool,
    pub use_iou_fallback: bool,
    pub report: MetricsReport,
    /// Share of detections matched by the IoU fallback.
    pub fallback_fraction: f64,
}

/// A sequence with its ground truth, a base config and the localization
/// threshold used for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Study<'a> {
    pub frames: &'a [Frame],
    pub gt: &'a SequenceRecord,
    pub base: &'a TrackerConfig,
    pub alpha: f64,
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda list".into()));
    }
    match lambdas.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&v) => Err(Error::InvalidLambda(v)),
        None => Ok(()),
    }
}

/// Maps `f` over `items` on scoped threads, preserving order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = if cfg!(target_arch = "wasm32") {
        1
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len())
    };
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

impl<'a> Study<'a> {
    pub fn new(frames: &'a [Frame], gt: &'a SequenceRecord, base: &'a TrackerConfig) -> Self {
        Study {
            frames,
            gt,
            base,
            alpha: crate::metrics::DEFAULT_ALPHA,
        }
    }

    /// Runs and evaluates one configuration.
    pub fn run(&self, label: impl Into<String>, cfg: TrackerConfig) -> Result<RunRow> {
        let mut engine = TrackerEngine::new(cfg.clone())?;
        let out = run_sequence_detailed(&mut engine, self.frames)?;
        Ok(RunRow {
            label: label.into(),
            lambda: cfg.lambda,
            theta: cfg.theta,
            use_cascade: cfg.use_cascade,
            use_iou_fallback: cfg.use_iou_fallback,
            report: evaluate(self.gt, &out.record, self.alpha)?,
            fallback_fraction: out.stats.fallback_fraction(),
        })
    }

    fn run_all(&self, cfgs: Vec<(String, TrackerConfig)>) -> Result<Vec<RunRow>> {
        par_map(&cfgs, |(label, cfg)| self.run(label.clone(), cfg.clone()))
            .into_iter()
            .collect()
    }

    /// One run per lambda value.
    pub fn sweep_fixed_lambda(&self, lambdas: &[f64]) -> Result<Vec<RunRow>> {
        check_lambdas(lambdas)?;
        self.run_all(
            lambdas
                .iter()
                .map(|&l| (format!("lambda={l}"), self.base.clone().with_lambda(l)))
                .collect(),
        )
    }

    /// Lambda per detection from its quality score divided by the largest
    /// quality in the sequence.
    pub fn run_dynamic_quality(&self) -> Result<RunRow> {
        let cfg = TrackerConfig {
            lambda: LambdaSetting::DynamicQuality,
            ..self.base.clone()
        };
        self.run("dynamic_quality", cfg)
    }

    /// Full cross product, theta-major.
    pub fn theta_lambda_grid(&self, thetas: &[f64], lambdas: &[f64]) -> Result<ThetaLambdaGrid> {
        check_lambdas(lambdas)?;
        if thetas.is_empty() {
            return Err(Error::InvalidArgument("empty theta list".into()));
        }
        let mut cfgs = Vec::new();
        for &t in thetas {
            for &l in lambdas {
                cfgs.push((
                    format!("theta={t},lambda={l}"),
                    self.base.clone().with_theta(t).with_lambda(l),
                ));
            }
        }
        Ok(ThetaLambdaGrid {
            rows: self.run_all(cfgs)?,
        })
    }

    /// Full pipeline, no cascade, no IoU fallback, and neither.
    pub fn ablation_suite(&self) -> Result<Vec<RunRow>> {
        let variant = |label: &str, cascade: bool, iou: bool| {
            (
                label.to_string(),
                TrackerConfig {
                    use_cascade: cascade,
                    use_iou_fallback: iou,
                    ..self.base.clone()
                },
            )
        };
        self.run_all(vec![
            variant("full", true, true),
            variant("no_cascade", false, true),
            variant("no_iou", true, false),
            variant("neither", false, false),
        ])
    }

    /// Greedy per-frame search over per-detection lambda combinations. For
    /// each frame every combination is tried on a copy of the engine, scored
    /// by AssA over the frames seen so far, and the first best one is kept.
    pub fn local_lambda_grid_search(&self, options: &[f64], max_dets_per_frame: usize) -> Result<GridSearch> {
        check_lambdas(options)?;
        for f in self.frames {
            if f.detections.len() > max_dets_per_frame {
                return Err(Error::TooManyDetections {
                    frame: f.frame_id,
                    count: f.detections.len(),
                    max: max_dets_per_frame,
                });
            }
        }
        let mut gt_by_frame: BTreeMap<u32, Vec<&Mot20Row>> = BTreeMap::new();
        for r in &self.gt.rows {
            gt_by_frame.entry(r.frame).or_default().push(r);
        }
        let mut state = SearchState {
            engine: TrackerEngine::new(self.base.clone())?,
            rows: BTreeMap::new(),
            pairings: BTreeMap::new(),
            counts: AssocCounts::default(),
        };
        let mut result = GridSearch::default();
        for frame in self.frames {
            // GT-only frames count towards the prefix as well.
            let combos = combinations(options, frame.detections.len());
            let score = |lambdas: &Vec<f64>| -> Result<(f64, SearchState)> {
                let mut next = state.clone();
                next.step(frame, lambdas, &gt_by_frame, self.alpha)?;
                Ok((next.counts.scores().assa, next))
            };
            let scored: Vec<Result<f64>> = par_map(&combos, |c| score(c).map(|(a, _)| a));
            let mut best: Option<(usize, f64)> = None;
            for (k, s) in scored.into_iter().enumerate() {
                let s = s?;
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((k, s));
                }
            }
            let (k, assa) = best.expect("at least one combination");
            state = score(&combos[k])?.1;
            for (d, &l) in frame.detections.iter().zip(&combos[k]) {
                result.chosen.push((frame.frame_id, d.det_id, l));
            }
            result.assa_trace.push((frame.frame_id, assa));
        }
        let mut record = SequenceRecord {
            rows: state.rows.into_values().flatten().collect(),
        };
        record.sort_canonical();
        result.report = Some(evaluate(self.gt, &record, self.alpha)?);
        result.record = record;
        Ok(result)
    }
}

/// Committed tracker state during the grid search, with the prefix
/// pairings needed to re-score frames touched by backfilled rows.
#[derive(Clone)]
struct SearchState {
    engine: TrackerEngine,
    rows: BTreeMap<u32, Vec<Mot20Row>>,
    pairings: BTreeMap<u32, FramePairing>,
    counts: AssocCounts,
}

impl SearchState {
    fn step(
        &mut self,
        frame: &Frame,
        lambdas: &[f64],
        gt: &BTreeMap<u32, Vec<&Mot20Row>>,
        alpha: f64,
    ) -> Result<()> {
        let out = self
            .engine
            .step_with_lambda(frame.frame_id, &frame.detections, &LambdaSpec::PerDetection(lambdas.to_vec()))?;
        let mut touched = vec![frame.frame_id];
        for r in out.rows() {
            touched.push(r.frame);
            self.rows.entry(r.frame).or_default().push(r);
        }
        touched.sort_unstable();
        touched.dedup();
        for f in touched {
            if let Some(old) = self.pairings.remove(&f) {
                self.counts.remove(&old);
            }
            let g: Vec<&Mot20Row> = gt.get(&f).cloned().unwrap_or_default();
            let p: Vec<&Mot20Row> = self.rows.get(&f).map(|v| v.iter().collect()).unwrap_or_default();
            let pairing = match_frame(f, &g, &p, alpha);
            self.counts.add(&pairing);
            self.pairings.insert(f, pairing);
        }
        Ok(())
    }
}

/// All `options^n` assignments, first option first, last detection varying fastest.
fn combinations(options: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(n)];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |&o| {
                    let mut v = prefix.clone();
                    v.push(o);
                    v
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct GridSearch {
    /// `(frame, det_id, lambda)` for every detection.
    pub chosen: Vec<(u32, i64, f64)>,
    /// Best prefix AssA after each frame.
    pub assa_trace: Vec<(u32, f64)>,
    pub record: SequenceRecord,
    pub report: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default)]
pub struct ThetaLambdaGrid {
    pub rows: Vec<RunRow>,
}

impl ThetaLambdaGrid {
    fn best_by(&self, key: impl Fn(&RunRow) -> f64, maximize: bool) -> Option<&RunRow> {
        let mut best: Option<&RunRow> = None;
        for r in &self.rows {
            let better = match best {
                None => true,
                Some(b) if maximize => key(r) > key(b),
                Some(b) => key(r) < key(b),
            };
            if better {
                best = Some(r);
            }
        }
        best
    }

    pub fn best_assa(&self) -> Option<&RunRow> {
        self.best_by(|r| r.report.hota.assa, true)
    }

    pub fn best_idf1(&self) -> Option<&RunRow> {
        self.best_by(|r| r.report.idf1, true)
    }

    pub fn best_idsw(&self) -> Option<&RunRow> {
        self.best_by(|r| r.report.idsw_norm, false)
    }

    /// `(theta, AssRe, AssPr)` with theta ascending, for one lambda.
    pub fn recall_precision_trace(&self, lambda: f64) -> Vec<(f64, f64, f64)> {
        let mut v: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.lambda == LambdaSetting::Fixed(lambda))
            .map(|r| (r.theta, r.report.hota.assre, r.report.hota.asspr))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list; `inf`
/// is accepted as a value.
pub fn parse_value_list(s: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::InvalidArgument(format!("value list '{s}': {m}"));
    let num = |t: &str| -> Result<f64> {
        let v: f64 = t.trim().parse().map_err(|_| bad(&format!("'{}' is not a number", t.trim())))?;
        if v.is_nan() {
            return Err(bad("NaN"));
        }
        Ok(v)
    };
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if !(h > 0.0 && h.is_finite() && a.is_finite() && b.is_finite() && b >= a) {
                return Err(bad("range needs finite start ≤ stop and step > 0"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            (0..=n).map(|i| ((a + i as f64 * h) * 1e9).round() / 1e9).collect()
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<f64>>>()?,
        _ => return Err(bad("expected start:stop:step or a comma list")),
    };
    if values.is_empty() {
        return Err(bad("no values"));
    }
    Ok(values)
}

const RUN_HEADER: &str =
    "label,lambda,theta,use_cascade,use_iou_fallback,HOTA,DetA,AssA,AssRe,AssPr,IDF1,MOTA,IDSW,IDSW_norm,fallback_fraction";

fn run_line(out: &mut String, r: &RunRow) {
    let m = &r.report;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6}",
        r.label,
        r.lambda,
        r.theta,
        r.use_cascade,
        r.use_iou_fallback,
        m.hota.hota,
        m.hota.deta,
        m.hota.assa,
        m.hota.assre,
        m.hota.asspr,
        m.idf1,
        m.mota,
        m.idsw,
        m.idsw_norm,
        r.fallback_fraction,
    );
}

/// One CSV line per run.
pub fn runs_csv(rows: &[RunRow]) -> String {
    let mut out = format!("{RUN_HEADER}\n");
    for r in rows {
        run_line(&mut out, r);
    }
    out
}

/// Grid table followed by best cells as `best,metric,theta,lambda,value`.
pub fn grid_csv(grid: &ThetaLambdaGrid) -> String {
    let mut out = runs_csv(&grid.rows);
    out.push_str("\nbest,metric,theta,lambda,value\n");
    for (name, row, value) in [
        ("AssA", grid.best_assa(), grid.best_assa().map(|r| r.report.hota.assa)),
        ("IDF1", grid.best_idf1(), grid.best_idf1().map(|r| r.report.idf1)),
        ("IDSW_norm", grid.best_idsw(), grid.best_idsw().map(|r| r.report.idsw_norm)),
    ] {
        if let (Some(r), Some(v)) = (row, value) {
            let _ = writeln!(out, "best,{name},{},{},{v:.6}", r.theta, r.lambda);
        }
    }
    out
}

/// `lambda,theta,AssRe,AssPr` for every lambda in the grid.
pub fn recall_precision_csv(grid: &ThetaLambdaGrid) -> String {
    let mut out = String::from("lambda,theta,AssRe,AssPr\n");
    let mut lambdas: Vec<f64> = grid
        .rows
        .iter()
        .filter_map(|r| match r.lambda {
            LambdaSetting::Fixed(l) => Some(l),
            LambdaSetting::DynamicQuality => None,
        })
        .collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    for l in lambdas {
        for (t, re, pr) in grid.recall_precision_trace(l) {
            let _ = writeln!(out, "{l},{t},{re:.6},{pr:.6}");
        }
    }
    out
}

/// `frame,det_id,lambda` rows followed by `frame,AssA` rows.
pub fn grid_search_csv(g: &GridSearch) -> String {
    let mut out = String::from("frame,det_id,lambda\n");
    for (f, d, l) in &g.chosen {
        let _ = writeln!(out, "{f},{d},{l}");
    }
    out.push_str("\nframe,AssA\n");
    for (f, a) in &g.assa_trace {
        let _ = writeln!(out, "{f},{a:.6}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, ScenarioSpec};

    #[test]
    fn value_lists() {
        let v = parse_value_list("0:1:0.1").unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[3], 0.3);
        assert_eq!(v[10], 1.0);
        assert_eq!(parse_value_list("0.025, 0.2,inf").unwrap(), vec![0.025, 0.2, f64::INFINITY]);
        assert!(parse_value_list("1:0:0.1").is_err());
        assert!(parse_value_list("a,b").is_err());
        assert!(parse_value_list("0:1").is_err());
    }

    #[test]
    fn combination_order() {
        let c = combinations(&[1.0, 0.5], 2);
        assert_eq!(c, vec![vec![1.0, 1.0], vec![1.0, 0.5], vec![0.5, 1.0], vec![0.5, 0.5]]);
        assert_eq!(combinations(&[0.1], 0), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<usize> = (0..37).collect();
        assert_eq!(par_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    fn small() -> crate::synth::Scenario {
        generate(&ScenarioSpec {
            identities: 3,
            frames: 120,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn sweep_rows_and_grid_shape() {
        let s = small();
        let cfg = TrackerConfig::default();
        let study = Study::new(&s.frames, &s.gt, &cfg);
        assert_eq!(study.sweep_fixed_lambda(&[0.0, 0.5, 1.0]).unwrap().len(), 3);
        assert!(study.sweep_fixed_lambda(&[1.5]).is_err());
        let g = study.theta_lambda_grid(&[0.1, 0.2, 0.6], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(g.rows.len(), 9);
        assert!(g.best_assa().is_some());
        assert_eq!(g.recall_precision_trace(0.5).len(), 3);
        let csv = grid_csv(&g);
        assert!(csv.contains("best,AssA,"));
    }

    #[test]
    fn singleton_grid_equals_fixed_run() {
        let s = small();
        let cfg = TrackerConfig::default();
        let study = Study::new(&s.frames, &s.gt, &cfg);
        let g = study.local_lambda_grid_search(&[0.1], 8).unwrap();
        let fixed = study.run("fixed", cfg.clone().with_lambda(0.1)).unwrap();
        assert_eq!(g.report.unwrap(), fixed.report);
        assert!(g.chosen.iter().all(|c| c.2 == 0.1));
        assert!(study.local_lambda_grid_search(&[0.1], 0).is_err());
    }

    #[test]
    fn ablation_has_four_rows() {
        let s = small();
        let cfg = TrackerConfig::default();
        let rows = Study::new(&s.frames, &s.gt, &cfg).ablation_suite().unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.fallback_fraction));
        }
        assert_eq!(rows[2].fallback_fraction, 0.0);
    }
}
