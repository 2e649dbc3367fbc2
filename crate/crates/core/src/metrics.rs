//! Tracking metrics: MOTA, normalized IDSW, IDF1 and the HOTA family
//! (DetA, AssA, AssRe, AssPr), plus genuine/imposter score distributions.
//!
//! Every metric is computed from an [`EvalPairing`], the per-frame
//! one-to-one matching between ground truth and predicted boxes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::assignment::solve_assignment;
use crate::association::CostSample;
use crate::error::{Error, Result};
use crate::formats::{Mot20Row, SequenceRecord};
use crate::model::{CostMatrix, Frame};
use crate::motion::iou;

/// Localization threshold used for all reported metrics.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// TP pairs, missed GT ids and unmatched prediction ids of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FramePairing {
    pub frame: u32,
    /// `(gt_id, pred_id)`.
    pub matches: Vec<(i64, i64)>,
    pub fn_ids: Vec<i64>,
    pub fp_ids: Vec<i64>,
}

impl FramePairing {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalPairing {
    pub frames: Vec<FramePairing>,
}

impl EvalPairing {
    pub fn tp(&self) -> usize {
        self.frames.iter().map(|f| f.matches.len()).sum()
    }

    pub fn fn_count(&self) -> usize {
        self.frames.iter().map(|f| f.fn_ids.len()).sum()
    }

    pub fn fp_count(&self) -> usize {
        self.frames.iter().map(|f| f.fp_ids.len()).sum()
    }

    /// Number of non-ignored GT boxes.
    pub fn gt_count(&self) -> usize {
        self.tp() + self.fn_count()
    }

    /// Number of prediction boxes that count as TP or FP.
    pub fn pred_count(&self) -> usize {
        self.tp() + self.fp_count()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must be in (0, 1], got {alpha}")))
    }
}

/// Maximum-cardinality, maximum-IoU matching between `gt` and `pred` among
/// pairs with IoU ≥ alpha; returns `(gt index, pred index)` pairs.
fn max_iou_matching(gt: &[&Mot20Row], pred: &[&Mot20Row], alpha: f64) -> Vec<(usize, usize)> {
    let mut c = CostMatrix::filled(gt.len(), pred.len(), CostMatrix::INFEASIBLE);
    for (i, g) in gt.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            let v = iou(&g.bbox(), &p.bbox());
            if v >= alpha {
                c.set(i, j, 1.0 - v);
            }
        }
    }
    solve_assignment(&c).matches
}

/// Matches one frame. Ignore-flagged GT rows take no part in TP matching;
/// predictions left over that overlap an ignored row by at least `alpha`
/// are dropped instead of being counted as FP.
pub fn match_frame(frame: u32, gt: &[&Mot20Row], pred: &[&Mot20Row], alpha: f64) -> FramePairing {
    let (ignored, targets): (Vec<&Mot20Row>, Vec<&Mot20Row>) = gt.iter().copied().partition(|r| r.is_ignored());
    let matched = max_iou_matching(&targets, pred, alpha);
    let mut gt_used = vec![false; targets.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut matches = Vec::with_capacity(matched.len());
    for &(i, j) in &matched {
        gt_used[i] = true;
        pred_used[j] = true;
        matches.push((targets[i].id, pred[j].id));
    }
    let leftover: Vec<usize> = (0..pred.len()).filter(|&j| !pred_used[j]).collect();
    if !ignored.is_empty() && !leftover.is_empty() {
        let rest: Vec<&Mot20Row> = leftover.iter().map(|&j| pred[j]).collect();
        for (_, k) in max_iou_matching(&ignored, &rest, alpha) {
            pred_used[leftover[k]] = true;
        }
    }
    FramePairing {
        frame,
        matches,
        fn_ids: (0..targets.len()).filter(|&i| !gt_used[i]).map(|i| targets[i].id).collect(),
        fp_ids: (0..pred.len()).filter(|&j| !pred_used[j]).map(|j| pred[j].id).collect(),
    }
}

/// Matches every frame that has GT or predictions, frames ascending.
pub fn pair_sequence(gt: &SequenceRecord, res: &SequenceRecord, alpha: f64) -> Result<EvalPairing> {
    check_alpha(alpha)?;
    let mut by_frame: BTreeMap<u32, (Vec<&Mot20Row>, Vec<&Mot20Row>)> = BTreeMap::new();
    for r in &gt.rows {
        by_frame.entry(r.frame).or_default().0.push(r);
    }
    for r in &res.rows {
        by_frame.entry(r.frame).or_default().1.push(r);
    }
    Ok(EvalPairing {
        frames: by_frame
            .into_iter()
            .map(|(f, (g, p))| match_frame(f, &g, &p, alpha))
            .collect(),
    })
}

/// Identity switches per frame: a GT id whose matched prediction id differs
/// from the one it was last matched to.
pub fn id_switches_per_frame(p: &EvalPairing) -> Vec<usize> {
    let mut last: HashMap<i64, i64> = HashMap::new();
    p.frames
        .iter()
        .map(|f| {
            let mut n = 0;
            for &(g, pr) in &f.matches {
                if let Some(prev) = last.insert(g, pr) {
                    if prev != pr {
                        n += 1;
                    }
                }
            }
            n
        })
        .collect()
}

pub fn count_id_switches(p: &EvalPairing) -> usize {
    id_switches_per_frame(p).iter().sum()
}

fn require_gt(gt_count: usize) -> Result<f64> {
    if gt_count == 0 {
        Err(Error::InvalidArgument("ground truth has no target boxes".into()))
    } else {
        Ok(gt_count as f64)
    }
}

/// `1 - (FP + FN + IDSW) / |GT|`.
pub fn mota(p: &EvalPairing, gt_count: usize) -> Result<f64> {
    let n = require_gt(gt_count)?;
    let errors = p.fp_count() + p.fn_count() + count_id_switches(p);
    Ok(1.0 - errors as f64 / n)
}

pub fn idsw_norm(p: &EvalPairing, gt_count: usize) -> Result<f64> {
    Ok(count_id_switches(p) as f64 / require_gt(gt_count)?)
}

/// Identity-level counts behind IDF1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdScores {
    pub idtp: usize,
    pub idfn: usize,
    pub idfp: usize,
    pub idf1: f64,
}

/// Global one-to-one GT-id/prediction-id mapping maximizing IDTP, where a
/// pair's weight is the number of frames in which it is a TP.
pub fn id_scores(p: &EvalPairing) -> IdScores {
    let (gt_n, pred_n) = (p.gt_count(), p.pred_count());
    let mut co: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for f in &p.frames {
        for &m in &f.matches {
            *co.entry(m).or_default() += 1;
        }
    }
    let gts: Vec<i64> = co.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
    let preds: Vec<i64> = co.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
    let mut idtp = 0;
    if !co.is_empty() {
        let max = *co.values().max().expect("non-empty") as f64;
        let gi: HashMap<i64, usize> = gts.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let pi: HashMap<i64, usize> = preds.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        // All entries feasible: the solver maximizes the sum of co-occurrences.
        let mut c = CostMatrix::filled(gts.len(), preds.len(), max);
        for (&(g, q), &n) in &co {
            c.set(gi[&g], pi[&q], max - n as f64);
        }
        for (r, k) in solve_assignment(&c).matches {
            idtp += co.get(&(gts[r], preds[k])).copied().unwrap_or(0);
        }
    }
    let denom = gt_n + pred_n;
    IdScores {
        idtp,
        idfn: gt_n - idtp,
        idfp: pred_n - idtp,
        idf1: if denom == 0 { 0.0 } else { 2.0 * idtp as f64 / denom as f64 },
    }
}

pub fn idf1(p: &EvalPairing) -> f64 {
    id_scores(p).idf1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotaScores {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub assre: f64,
    pub asspr: f64,
}

/// Running association counts. Frames can be added and removed, which lets
/// the grid search re-score a prefix without replaying it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssocCounts {
    pairs: BTreeMap<(i64, i64), u64>,
    gt: HashMap<i64, u64>,
    pred: HashMap<i64, u64>,
    tp: u64,
    fn_: u64,
    fp: u64,
}

fn bump<K: std::hash::Hash + Eq + Copy>(m: &mut HashMap<K, u64>, k: K, add: bool) {
    let e = m.entry(k).or_default();
    if add {
        *e += 1;
    } else {
        *e -= 1;
        if *e == 0 {
            m.remove(&k);
        }
    }
}

impl AssocCounts {
    pub fn from_pairing(p: &EvalPairing) -> Self {
        let mut a = AssocCounts::default();
        for f in &p.frames {
            a.add(f);
        }
        a
    }

    pub fn add(&mut self, f: &FramePairing) {
        self.apply(f, true)
    }

    /// Undoes an earlier [`add`](Self::add) of the same frame.
    pub fn remove(&mut self, f: &FramePairing) {
        self.apply(f, false)
    }

    fn apply(&mut self, f: &FramePairing, add: bool) {
        let n = |x: &mut u64, k: usize| {
            if add {
                *x += k as u64
            } else {
                *x -= k as u64
            }
        };
        n(&mut self.tp, f.matches.len());
        n(&mut self.fn_, f.fn_ids.len());
        n(&mut self.fp, f.fp_ids.len());
        for &(g, p) in &f.matches {
            let e = self.pairs.entry((g, p)).or_default();
            if add {
                *e += 1;
            } else {
                *e -= 1;
                if *e == 0 {
                    self.pairs.remove(&(g, p));
                }
            }
            bump(&mut self.gt, g, add);
            bump(&mut self.pred, p, add);
        }
        for &g in &f.fn_ids {
            bump(&mut self.gt, g, add);
        }
        for &p in &f.fp_ids {
            bump(&mut self.pred, p, add);
        }
    }

    pub fn scores(&self) -> HotaScores {
        let det_denom = self.tp + self.fn_ + self.fp;
        let deta = if det_denom == 0 { 0.0 } else { self.tp as f64 / det_denom as f64 };
        let (mut re, mut pr) = (0.0, 0.0);
        // Every TP of pair (g, p) shares TPA = n, FNA = |g| - n, FPA = |p| - n.
        for (&(g, p), &n) in &self.pairs {
            let n = n as f64;
            re += n * n / self.gt[&g] as f64;
            pr += n * n / self.pred[&p] as f64;
        }
        let (assre, asspr) = if self.tp == 0 {
            (0.0, 0.0)
        } else {
            (re / self.tp as f64, pr / self.tp as f64)
        };
        let assa = jaccard(assre, asspr);
        HotaScores {
            hota: (deta * assa).sqrt(),
            deta,
            assa,
            assre,
            asspr,
        }
    }
}

/// `re * pr / (re + pr - re * pr)`, 0 when both are 0.
pub fn jaccard(re: f64, pr: f64) -> f64 {
    let d = re + pr - re * pr;
    if d <= 0.0 {
        0.0
    } else {
        re * pr / d
    }
}

pub fn hota_family(p: &EvalPairing) -> HotaScores {
    AssocCounts::from_pairing(p).scores()
}

/// Full metric set of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub alpha: f64,
    pub gt_count: usize,
    pub pred_count: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub idsw: usize,
    pub mota: f64,
    pub idsw_norm: f64,
    pub idf1: f64,
    pub hota: HotaScores,
}

impl MetricsReport {
    /// `(name, value)` pairs in report order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("HOTA", self.hota.hota),
            ("DetA", self.hota.deta),
            ("AssA", self.hota.assa),
            ("AssRe", self.hota.assre),
            ("AssPr", self.hota.asspr),
            ("IDF1", self.idf1),
            ("MOTA", self.mota),
            ("IDSW", self.idsw as f64),
            ("IDSW_norm", self.idsw_norm),
            ("TP", self.tp as f64),
            ("FP", self.fp as f64),
            ("FN", self.fn_count as f64),
            ("GT", self.gt_count as f64),
            ("alpha", self.alpha),
        ]
    }
}

pub fn evaluate_pairing(p: &EvalPairing, alpha: f64) -> Result<MetricsReport> {
    let gt_count = p.gt_count();
    Ok(MetricsReport {
        alpha,
        gt_count,
        pred_count: p.pred_count(),
        tp: p.tp(),
        fp: p.fp_count(),
        fn_count: p.fn_count(),
        idsw: count_id_switches(p),
        mota: mota(p, gt_count)?,
        idsw_norm: idsw_norm(p, gt_count)?,
        idf1: idf1(p),
        hota: hota_family(p),
    })
}

pub fn evaluate(gt: &SequenceRecord, res: &SequenceRecord, alpha: f64) -> Result<MetricsReport> {
    evaluate_pairing(&pair_sequence(gt, res, alpha)?, alpha)
}

/// Which cost a score distribution is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Bio,
    App,
    Fused,
}

impl ScoreSource {
    pub fn pick(self, s: &CostSample) -> f64 {
        match self {
            ScoreSource::Bio => s.bio,
            ScoreSource::App => s.app,
            ScoreSource::Fused => s.fused,
        }
    }
}

/// Cosine costs between tracks and detections of the same identity
/// (genuine) and of different identities (imposter).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreDistributions {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

impl ScoreDistributions {
    pub fn genuine_mean(&self) -> f64 {
        mean(&self.genuine)
    }

    pub fn imposter_mean(&self) -> f64 {
        mean(&self.imposter)
    }

    pub fn genuine_std(&self) -> f64 {
        std_dev(&self.genuine)
    }

    pub fn imposter_std(&self) -> f64 {
        std_dev(&self.imposter)
    }
}

/// GT identity of every detection, by per-frame max-IoU matching against
/// the non-ignored GT rows. Unmatched detections are absent from the map.
pub fn annotate_gt_ids(frames: &[Frame], gt: &SequenceRecord, alpha: f64) -> Result<HashMap<(u32, i64), i64>> {
    check_alpha(alpha)?;
    let mut gt_by_frame: HashMap<u32, Vec<&Mot20Row>> = HashMap::new();
    for r in gt.rows.iter().filter(|r| !r.is_ignored()) {
        gt_by_frame.entry(r.frame).or_default().push(r);
    }
    let mut out = HashMap::new();
    for f in frames {
        let Some(g) = gt_by_frame.get(&f.frame_id) else { continue };
        let rows: Vec<Mot20Row> = f
            .detections
            .iter()
            .map(|d| Mot20Row::result(f.frame_id, 0, d.bbox, d.confidence))
            .collect();
        let refs: Vec<&Mot20Row> = rows.iter().collect();
        for (gi, di) in max_iou_matching(g, &refs, alpha) {
            out.insert((f.frame_id, f.detections[di].det_id), g[gi].id);
        }
    }
    Ok(out)
}

/// Splits every traced track/detection cost into genuine or imposter. A
/// track's identity is the GT id of the detection it was last updated with.
pub fn score_distributions(
    trace: &[CostSample],
    gt_ids: &HashMap<(u32, i64), i64>,
    source: ScoreSource,
) -> Result<ScoreDistributions> {
    let lookup = |frame: u32, det_id: i64| {
        gt_ids
            .get(&(frame, det_id))
            .copied()
            .ok_or(Error::MissingGtId { frame, det_id })
    };
    let mut d = ScoreDistributions::default();
    for s in trace {
        let track_gt = lookup(s.track_source.0, s.track_source.1)?;
        let det_gt = lookup(s.frame, s.det_id)?;
        let v = source.pick(s);
        if track_gt == det_gt {
            d.genuine.push(v);
        } else {
            d.imposter.push(v);
        }
    }
    Ok(d)
}

/// Genuine and imposter histograms on shared bins, each normalized to sum 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistograms {
    /// Upper end of the binned range; bins are `hi / bins` wide from 0.
    pub hi: f64,
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

/// Bins both distributions over `[0, max(2, max value)]`.
pub fn score_histograms(d: &ScoreDistributions, bins: usize) -> Result<ScoreHistograms> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be ≥ 1".into()));
    }
    if d.genuine.is_empty() || d.imposter.is_empty() {
        return Err(Error::InvalidArgument("both score lists must be non-empty".into()));
    }
    if d.genuine.iter().chain(&d.imposter).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("scores must be finite and non-negative".into()));
    }
    let hi = d.genuine.iter().chain(&d.imposter).fold(2.0f64, |m, &v| m.max(v));
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in v {
            let b = ((x / hi) * bins as f64) as usize;
            h[b.min(bins - 1)] += 1.0;
        }
        let n = v.len() as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    };
    Ok(ScoreHistograms {
        hi,
        genuine: hist(&d.genuine),
        imposter: hist(&d.imposter),
    })
}

/// Overlap of the two normalized histograms: `sum(min) / sum(max)` across bins.
pub fn distribution_iou(d: &ScoreDistributions, bins: usize) -> Result<f64> {
    let h = score_histograms(d, bins)?;
    let (mut lo, mut up) = (0.0, 0.0);
    for (a, b) in h.genuine.iter().zip(&h.imposter) {
        lo += a.min(*b);
        up += a.max(*b);
    }
    Ok(lo / up)
}
