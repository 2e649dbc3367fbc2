//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the crate's solvers or metric code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use faceqsort::formats::Mot20Row;
use faceqsort::model::CostMatrix;
use faceqsort::SequenceRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Enumerates every partial one-to-one matching over feasible entries and
/// returns `(cardinality, cost)` of the best: most pairs first, then least
/// cost. Costs are summed in row order.
pub fn brute_force_assignment(c: &CostMatrix) -> (usize, f64) {
    fn rec(c: &CostMatrix, row: usize, used: &mut Vec<bool>, n: usize, cost: f64, best: &mut (usize, f64)) {
        if row == c.rows() {
            if n > best.0 || (n == best.0 && cost < best.1) {
                *best = (n, cost);
            }
            return;
        }
        rec(c, row + 1, used, n, cost, best);
        for k in 0..c.cols() {
            if !used[k] && c.is_feasible(row, k) {
                used[k] = true;
                rec(c, row + 1, used, n + 1, cost + c.get(row, k), best);
                used[k] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    rec(c, 0, &mut vec![false; c.cols()], 0, 0.0, &mut best);
    best
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, integer: bool) -> CostMatrix {
    let mut c = CostMatrix::filled(rows, cols, CostMatrix::INFEASIBLE);
    for r in 0..rows {
        for k in 0..cols {
            if rng.random::<f64>() < 0.25 {
                continue;
            }
            let v = if integer {
                rng.random_range(0..20) as f64
            } else {
                rng.random::<f64>()
            };
            c.set(r, k, v);
        }
    }
    c
}

fn overlap(a: &Mot20Row, b: &Mot20Row) -> f64 {
    let iw = ((a.left + a.width).min(b.left + b.width) - a.left.max(b.left)).max(0.0);
    let ih = ((a.top + a.height).min(b.top + b.height) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.width * a.height + b.width * b.height - inter)
}

/// Best matching by (cardinality desc, total IoU desc) over pairs with
/// IoU ≥ alpha, by exhaustive search. The flag is set when another matching
/// ties with it, in which case any optimal choice is a valid pairing.
fn brute_match(gt: &[&Mot20Row], pred: &[&Mot20Row], alpha: f64) -> (Vec<(usize, usize)>, bool) {
    struct Best {
        len: usize,
        score: f64,
        pairs: Vec<(usize, usize)>,
        ties: usize,
    }
    fn rec(w: &[Vec<Option<f64>>], i: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, score: f64, best: &mut Best) {
        if i == w.len() {
            if cur.len() > best.len || (cur.len() == best.len && score > best.score + 1e-12) {
                *best = Best { len: cur.len(), score, pairs: cur.clone(), ties: 1 };
            } else if cur.len() == best.len && (score - best.score).abs() <= 1e-12 {
                best.ties += 1;
            }
            return;
        }
        rec(w, i + 1, used, cur, score, best);
        for j in 0..used.len() {
            if let (false, Some(v)) = (used[j], w[i][j]) {
                used[j] = true;
                cur.push((i, j));
                rec(w, i + 1, used, cur, score + v, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let w: Vec<Vec<Option<f64>>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .map(|p| Some(overlap(g, p)).filter(|v| *v >= alpha))
                .collect()
        })
        .collect();
    let mut best = Best { len: 0, score: f64::NEG_INFINITY, pairs: Vec::new(), ties: 0 };
    rec(&w, 0, &mut vec![false; pred.len()], &mut Vec::new(), 0.0, &mut best);
    (best.pairs, best.ties > 1)
}

/// Per-frame outcome computed by the reference.
#[derive(Debug, Clone, Default)]
pub struct RefFrame {
    pub tp: Vec<(i64, i64)>,
    pub fn_ids: Vec<i64>,
    pub fp_ids: Vec<i64>,
    /// More than one optimal matching exists; identity metrics then depend
    /// on which one the evaluator happens to pick.
    pub ambiguous: bool,
}

pub fn any_ambiguous(frames: &[RefFrame]) -> bool {
    frames.iter().any(|f| f.ambiguous)
}

pub fn reference_pairing(gt: &SequenceRecord, res: &SequenceRecord, alpha: f64) -> Vec<RefFrame> {
    let frames: BTreeSet<u32> = gt.rows.iter().chain(&res.rows).map(|r| r.frame).collect();
    frames
        .into_iter()
        .map(|f| {
            let targets: Vec<&Mot20Row> = gt.rows.iter().filter(|r| r.frame == f && r.conf != 0.0).collect();
            let ignored: Vec<&Mot20Row> = gt.rows.iter().filter(|r| r.frame == f && r.conf == 0.0).collect();
            let preds: Vec<&Mot20Row> = res.rows.iter().filter(|r| r.frame == f).collect();
            let (m, ambiguous) = brute_match(&targets, &preds, alpha);
            let mut out = RefFrame { ambiguous, ..RefFrame::default() };
            let matched_g: BTreeSet<usize> = m.iter().map(|x| x.0).collect();
            let matched_p: BTreeSet<usize> = m.iter().map(|x| x.1).collect();
            out.tp = m.iter().map(|&(i, j)| (targets[i].id, preds[j].id)).collect();
            out.fn_ids = (0..targets.len()).filter(|i| !matched_g.contains(i)).map(|i| targets[i].id).collect();
            let rest: Vec<usize> = (0..preds.len()).filter(|j| !matched_p.contains(j)).collect();
            let rest_rows: Vec<&Mot20Row> = rest.iter().map(|&j| preds[j]).collect();
            let dropped: BTreeSet<usize> = brute_match(&ignored, &rest_rows, alpha).0.iter().map(|x| rest[x.1]).collect();
            out.fp_ids = rest.iter().filter(|j| !dropped.contains(j)).map(|&j| preds[j].id).collect();
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct RefMetrics {
    pub mota: f64,
    pub idsw_norm: f64,
    pub idf1: f64,
    pub deta: f64,
    pub assa: f64,
    pub assre: f64,
    pub asspr: f64,
    pub hota: f64,
}

/// All metrics by direct definition: per-TP association counts by full
/// scans and IDF1 by trying every injective GT-to-prediction id mapping.
pub fn reference_metrics(frames: &[RefFrame]) -> RefMetrics {
    let tp: usize = frames.iter().map(|f| f.tp.len()).sum();
    let fnc: usize = frames.iter().map(|f| f.fn_ids.len()).sum();
    let fpc: usize = frames.iter().map(|f| f.fp_ids.len()).sum();
    let gt_total = tp + fnc;

    let mut idsw = 0;
    let mut last: BTreeMap<i64, i64> = BTreeMap::new();
    for f in frames {
        for &(g, p) in &f.tp {
            if let Some(&q) = last.get(&g) {
                if q != p {
                    idsw += 1;
                }
            }
            last.insert(g, p);
        }
    }
    let mota = 1.0 - (fnc + fpc + idsw) as f64 / gt_total as f64;
    let idsw_norm = idsw as f64 / gt_total as f64;

    let gt_ids: Vec<i64> = frames
        .iter()
        .flat_map(|f| f.tp.iter().map(|x| x.0).chain(f.fn_ids.iter().copied()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pred_ids: Vec<i64> = frames
        .iter()
        .flat_map(|f| f.tp.iter().map(|x| x.1).chain(f.fp_ids.iter().copied()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let co = |g: i64, p: i64| frames.iter().map(|f| f.tp.iter().filter(|&&x| x == (g, p)).count()).sum::<usize>();
    fn best_map(gi: usize, gt: &[i64], pred: &[i64], used: &mut Vec<bool>, co: &dyn Fn(i64, i64) -> usize) -> usize {
        if gi == gt.len() {
            return 0;
        }
        let mut best = best_map(gi + 1, gt, pred, used, co);
        for k in 0..pred.len() {
            if !used[k] {
                used[k] = true;
                best = best.max(co(gt[gi], pred[k]) + best_map(gi + 1, gt, pred, used, co));
                used[k] = false;
            }
        }
        best
    }
    let idtp = best_map(0, &gt_ids, &pred_ids, &mut vec![false; pred_ids.len()], &co);
    let denom = gt_total + tp + fpc;
    let idf1 = if denom == 0 { 0.0 } else { 2.0 * idtp as f64 / denom as f64 };

    let gt_presence = |g: i64| frames.iter().filter(|f| f.tp.iter().any(|x| x.0 == g) || f.fn_ids.contains(&g)).count();
    let pred_presence = |p: i64| frames.iter().filter(|f| f.tp.iter().any(|x| x.1 == p) || f.fp_ids.contains(&p)).count();
    let (mut re, mut pr) = (0.0, 0.0);
    for f in frames {
        for &(g, p) in &f.tp {
            let tpa = co(g, p) as f64;
            let fna = gt_presence(g) as f64 - tpa;
            let fpa = pred_presence(p) as f64 - tpa;
            re += tpa / (tpa + fna);
            pr += tpa / (tpa + fpa);
        }
    }
    let (assre, asspr) = if tp == 0 { (0.0, 0.0) } else { (re / tp as f64, pr / tp as f64) };
    let assa = if assre + asspr - assre * asspr > 0.0 {
        assre * asspr / (assre + asspr - assre * asspr)
    } else {
        0.0
    };
    let det_denom = tp + fnc + fpc;
    let deta = if det_denom == 0 { 0.0 } else { tp as f64 / det_denom as f64 };
    RefMetrics {
        mota,
        idsw_norm,
        idf1,
        deta,
        assa,
        assre,
        asspr,
        hota: (deta * assa).sqrt(),
    }
}

pub fn row(frame: u32, id: i64, l: f64, t: f64, w: f64, h: f64, conf: f64) -> Mot20Row {
    Mot20Row {
        frame,
        id,
        left: l,
        top: t,
        width: w,
        height: h,
        conf,
        class: 1,
        visibility: 1.0,
    }
}

/// Random GT/prediction pair: ≤ 4 objects per frame, ≤ 6 frames, drifting
/// boxes on a small canvas so that overlaps, misses, merges and switches
/// all occur.
pub fn micro_scenario(seed: u64) -> (SequenceRecord, SequenceRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..=6u32);
    let objects = rng.random_range(1..=4usize);
    let mut pos: Vec<(f64, f64)> = (0..objects)
        .map(|_| (rng.random_range(0.0..40.0), rng.random_range(0.0..20.0)))
        .collect();
    let ignore_obj = if rng.random::<f64>() < 0.3 { Some(rng.random_range(0..objects)) } else { None };
    let mut gt = Vec::new();
    let mut res = Vec::new();
    for f in 1..=frames {
        let mut preds_here = 0;
        for (o, p) in pos.iter_mut().enumerate() {
            p.0 += rng.random_range(-4.0..4.0);
            p.1 += rng.random_range(-4.0..4.0);
            let conf = if Some(o) == ignore_obj { 0.0 } else { 1.0 };
            if rng.random::<f64>() < 0.9 {
                gt.push(row(f, o as i64 + 1, p.0, p.1, 10.0, 10.0, conf));
            }
            if rng.random::<f64>() < 0.8 && preds_here < 4 {
                preds_here += 1;
                // Small id pool so switches and merges happen.
                let id = if rng.random::<f64>() < 0.75 { 10 + o as i64 } else { rng.random_range(10..14) };
                res.push(row(
                    f,
                    id,
                    p.0 + rng.random_range(-3.0..3.0),
                    p.1 + rng.random_range(-3.0..3.0),
                    rng.random_range(8.0..12.0),
                    rng.random_range(8.0..12.0),
                    1.0,
                ));
            }
        }
        if preds_here < 4 && rng.random::<f64>() < 0.3 {
            res.push(row(f, rng.random_range(10..16), rng.random_range(0.0..40.0), rng.random_range(0.0..20.0), 10.0, 10.0, 1.0));
        }
    }
    // A prediction id appears at most once per frame.
    let mut seen = BTreeSet::new();
    res.retain(|r| seen.insert((r.frame, r.id)));
    (SequenceRecord { rows: gt }, SequenceRecord { rows: res })
}

/// One GT track over 10 frames, predicted as two tracks of 5 frames each.
pub fn split_track() -> (SequenceRecord, SequenceRecord) {
    let gt = (1..=10).map(|f| row(f, 1, 0.0, 0.0, 10.0, 10.0, 1.0)).collect();
    let res = (1..=10)
        .map(|f| row(f, if f <= 5 { 7 } else { 8 }, 0.0, 0.0, 10.0, 10.0, 1.0))
        .collect();
    (SequenceRecord { rows: gt }, SequenceRecord { rows: res })
}
