//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::{any_ambiguous, brute_force_assignment, micro_scenario, random_matrix, reference_metrics, reference_pairing, split_track};
use faceqsort::formats::{format_results, parse_mot20_str};
use faceqsort::harness::Study;
use faceqsort::metrics::{annotate_gt_ids, distribution_iou, evaluate, score_distributions, ScoreSource, DEFAULT_ALPHA};
use faceqsort::motion::chi2_gate_095_4dof;
use faceqsort::synth::{expected_separation, generate, ScenarioSpec};
use faceqsort::tracker::{ema_blend, run_sequence_detailed};
use faceqsort::{
    solve_assignment, BoundingBox, Detection, FeatureVector, Mot20Row, SequenceRecord, TrackState,
    TrackerConfig, TrackerEngine,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn assignment_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for n in 2..=6 {
        for i in 0..1000 {
            let c = random_matrix(&mut rng, n, n, i % 2 == 0);
            let mut m = solve_assignment(&c).matches;
            m.sort_unstable();
            let got: f64 = m.iter().map(|&(r, k)| c.get(r, k)).sum();
            let (card, want) = brute_force_assignment(&c);
            if m.len() != card || got != want {
                return Err(format!("{n}x{n} matrix #{i}: {} pairs cost {got}, optimum {card} pairs cost {want}", m.len()));
            }
            checked += 1;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), format!("{checked} matrices, exact cost, {t:.2?}"))
}

fn gate_constant() -> Outcome {
    let g = chi2_gate_095_4dof();
    ensure((g - 9.4877).abs() <= 1e-3, format!("gate {g}"))
}

fn ema_contract() -> Outcome {
    let m0 = [0.6, -0.8, 0.0];
    let obs = [0.0, 0.6, 0.8];
    let mut worst = 0.0f64;
    for alpha in [0.0, 0.5, 0.9, 1.0] {
        let mut m = m0.to_vec();
        for k in 1..=60 {
            m = ema_blend(&m, &obs, alpha);
            let a = f64::powi(alpha, k);
            for d in 0..3 {
                worst = worst.max((m[d] - (a * m0[d] + (1.0 - a) * obs[d])).abs());
            }
        }
    }
    ensure(worst <= 1e-9, format!("max deviation {worst:.2e}"))
}

fn metrics_oracle() -> Outcome {
    let mut seed = 0;
    let mut cases = Vec::new();
    while cases.len() < 50 {
        let (gt, res) = micro_scenario(seed);
        seed += 1;
        // Tied optimal matchings make the identity metrics a matter of
        // tie-breaking, so those scenes say nothing about correctness.
        if gt.rows.iter().any(|r| r.conf != 0.0) && !any_ambiguous(&reference_pairing(&gt, &res, 0.5)) {
            cases.push((gt, res));
        }
    }
    cases.push(split_track());
    for (i, (gt, res)) in cases.iter().enumerate() {
        let got = evaluate(gt, res, 0.5).map_err(|e| format!("case {i}: {e}"))?;
        let want = reference_metrics(&reference_pairing(gt, res, 0.5));
        let pairs = [
            ("MOTA", got.mota, want.mota),
            ("IDSW_norm", got.idsw_norm, want.idsw_norm),
            ("IDF1", got.idf1, want.idf1),
            ("DetA", got.hota.deta, want.deta),
            ("AssA", got.hota.assa, want.assa),
            ("AssRe", got.hota.assre, want.assre),
            ("AssPr", got.hota.asspr, want.asspr),
            ("HOTA", got.hota.hota, want.hota),
        ];
        for (name, a, b) in pairs {
            if (a - b).abs() > 1e-9 {
                return Err(format!("case {i}: {name} {a} vs reference {b}"));
            }
        }
    }
    let (gt, res) = split_track();
    let r = evaluate(&gt, &res, 0.5).map_err(|e| e.to_string())?;
    ensure(
        (r.idf1 - 0.5).abs() < 1e-9 && (r.hota.assa - 0.5).abs() < 1e-9,
        format!("{} cases agree; split track IDF1 {} AssA {}", cases.len(), r.idf1, r.hota.assa),
    )
}

fn fusion_trend() -> Outcome {
    let start = Instant::now();
    let s = generate(&ScenarioSpec::default()).map_err(|e| e.to_string())?;
    let base = TrackerConfig::default();
    let rows = Study::new(&s.frames, &s.gt, &base)
        .sweep_fixed_lambda(&[0.0, 0.1, 1.0])
        .map_err(|e| e.to_string())?;
    let (l0, l01, l1) = (&rows[0].report, &rows[1].report, &rows[2].report);
    let t = start.elapsed();
    ensure(
        l01.hota.assa > l1.hota.assa && l01.idf1 > l1.idf1 && l0.idsw_norm <= l1.idsw_norm && t < Duration::from_secs(60),
        format!(
            "AssA {:.4} vs {:.4}, IDF1 {:.4} vs {:.4} (lambda 0.1 vs 1); IDSW_norm {:.5} vs {:.5} (lambda 0 vs 1); {t:.2?}",
            l01.hota.assa, l1.hota.assa, l01.idf1, l1.idf1, l0.idsw_norm, l1.idsw_norm
        ),
    )
}

fn theta_precision_trend() -> Outcome {
    let spec = ScenarioSpec::calibrated(0);
    let sep = expected_separation(&spec).map_err(|e| e.to_string())?;
    let s = generate(&spec).map_err(|e| e.to_string())?;
    let base = TrackerConfig::default().with_lambda(1.0);
    let grid = Study::new(&s.frames, &s.gt, &base)
        .theta_lambda_grid(&[0.05, 0.6], &[1.0])
        .map_err(|e| e.to_string())?;
    let trace = grid.recall_precision_trace(1.0);
    let (lo, hi) = (trace[0].2, trace[1].2);

    let mut engine = TrackerEngine::new(base.with_theta(0.6)).map_err(|e| e.to_string())?;
    engine.enable_trace();
    let out = run_sequence_detailed(&mut engine, &s.frames).map_err(|e| e.to_string())?;
    let ids = annotate_gt_ids(&s.frames, &s.gt, DEFAULT_ALPHA).map_err(|e| e.to_string())?;
    let d = score_distributions(&out.trace, &ids, ScoreSource::Bio).map_err(|e| e.to_string())?;
    let overlap = distribution_iou(&d, 100).map_err(|e| e.to_string())?;
    ensure(
        lo >= hi && overlap <= 0.10,
        format!(
            "AssPr {lo:.4} at theta 0.05 vs {hi:.4} at 0.6; distribution IoU {overlap:.4}; expected costs {:.3}/{:.3}",
            sep.bio.genuine, sep.bio.imposter
        ),
    )
}

fn ablation_direction() -> Outcome {
    let s = generate(&ScenarioSpec::default()).map_err(|e| e.to_string())?;
    let base = TrackerConfig::default();
    let rows = Study::new(&s.frames, &s.gt, &base).ablation_suite().map_err(|e| e.to_string())?;
    let a: Vec<f64> = rows.iter().map(|r| r.report.hota.assa).collect();
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.label, r.report.hota.assa))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(a[0] >= a[1] && a[0] >= a[2] && a[3] == min, format!("AssA {detail}"))
}

fn det(frame: u32, id: i64, left: f64, feature: &[f64]) -> Detection {
    let f = FeatureVector::normalized(feature.to_vec()).expect("non-zero feature");
    Detection {
        frame_id: frame,
        det_id: id,
        bbox: BoundingBox::new(left, 100.0, 40.0, 50.0).expect("valid box"),
        confidence: 0.9,
        quality: Some(0.9),
        bio: f.clone(),
        app: f,
    }
}

fn lifecycle() -> Outcome {
    let cfg = TrackerConfig::default();
    let n_max = cfg.n_max;
    let mut e = TrackerEngine::new(cfg.clone()).map_err(|e| e.to_string())?;
    let f = [1.0, 0.0, 0.0];
    e.step(1, &[det(1, 0, 100.0, &f)]).map_err(|e| e.to_string())?;
    e.step(2, &[det(2, 0, 101.0, &f)]).map_err(|e| e.to_string())?;
    let id = match e.tracks() {
        [t] if t.state == TrackState::Confirmed => t.track_id,
        other => return Err(format!("expected one confirmed track, got {}", other.len())),
    };
    let alive = |e: &TrackerEngine| e.tracks().iter().any(|t| t.track_id == id);
    for k in 1..=n_max {
        e.step(2 + k, &[]).map_err(|e| e.to_string())?;
        if !alive(&e) {
            return Err(format!("confirmed track deleted after {k} misses"));
        }
    }
    e.step(3 + n_max, &[]).map_err(|e| e.to_string())?;
    if alive(&e) {
        return Err(format!("confirmed track alive after {} misses", n_max + 1));
    }

    let mut e = TrackerEngine::new(cfg).map_err(|e| e.to_string())?;
    e.step(1, &[det(1, 0, 100.0, &f)]).map_err(|e| e.to_string())?;
    let tentative = e.tracks().iter().all(|t| t.state == TrackState::Tentative);
    e.step(2, &[]).map_err(|e| e.to_string())?;
    ensure(
        tentative && e.tracks().is_empty(),
        format!("confirmed track survives {n_max} misses and is deleted on miss {}; tentative deleted on first miss", n_max + 1),
    )
}

fn format_fidelity() -> Outcome {
    let s = generate(&ScenarioSpec {
        identities: 4,
        frames: 200,
        ..ScenarioSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let mut engine = TrackerEngine::new(TrackerConfig::default()).map_err(|e| e.to_string())?;
    let res = run_sequence_detailed(&mut engine, &s.frames).map_err(|e| e.to_string())?.record;
    let text = format_results(&res);
    let lines = text.lines().count();
    if let Some(bad) = text.lines().find(|l| l.split(',').count() != 9) {
        return Err(format!("row with {} fields: {bad}", bad.split(',').count()));
    }
    let origin = std::path::Path::new("<memory>");
    let once = parse_mot20_str(&text, origin).map_err(|e| e.to_string())?;
    let again = format_results(&once);
    let twice = parse_mot20_str(&again, origin).map_err(|e| e.to_string())?;
    if again != text || once != twice {
        return Err("parse/write is not a fixed point".into());
    }

    let row = |id: i64, left: f64, conf: f64| Mot20Row {
        frame: 1,
        id,
        left,
        top: 0.0,
        width: 10.0,
        height: 10.0,
        conf,
        class: 1,
        visibility: 1.0,
    };
    let gt = SequenceRecord {
        rows: vec![row(1, 0.0, 1.0), row(2, 100.0, 0.0)],
    };
    let pred = SequenceRecord {
        rows: vec![row(7, 100.0, 1.0)],
    };
    let r = evaluate(&gt, &pred, 0.5).map_err(|e| e.to_string())?;
    ensure(
        r.tp == 0 && r.fp == 0 && r.gt_count == 1,
        format!("{lines} rows of 9 fields, round trip stable, ignored GT takes no TP"),
    )
}

/// Engine with `tracks` confirmed tracks, ready to take a frame.
fn warm_engine(rng: &mut ChaCha8Rng, tracks: usize) -> (TrackerEngine, Vec<Vec<f64>>) {
    let feats: Vec<Vec<f64>> = (0..tracks)
        .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut e = TrackerEngine::new(TrackerConfig::default()).expect("default config");
    for f in 1..=3 {
        let dets: Vec<Detection> = (0..tracks)
            .map(|i| det(f, i as i64, 60.0 * i as f64 + f as f64, &feats[i]))
            .collect();
        e.step(f, &dets).expect("warm-up step");
    }
    (e, feats)
}

fn determinism_and_complexity() -> Outcome {
    let run = || -> Result<String, String> {
        let s = generate(&ScenarioSpec::default()).map_err(|e| e.to_string())?;
        let mut engine = TrackerEngine::new(TrackerConfig::default()).map_err(|e| e.to_string())?;
        let out = run_sequence_detailed(&mut engine, &s.frames).map_err(|e| e.to_string())?;
        Ok(format_results(&out.record))
    };
    if run()? != run()? {
        return Err("two runs differ".into());
    }

    const C: f64 = 8.0;
    let sizes = [5usize, 10, 20, 40];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for &phi in &sizes {
        for &psi in &sizes {
            let (mut e, feats) = warm_engine(&mut rng, phi);
            let before = e.stats().counters.total();
            let dets: Vec<Detection> = (0..psi)
                .map(|j| det(4, j as i64, 60.0 * (j % phi) as f64 + 4.0 + (j / phi) as f64 * 7.0, &feats[j % phi]))
                .collect();
            e.step(4, &dets).map_err(|e| e.to_string())?;
            let ops = (e.stats().counters.total() - before) as f64;
            worst = worst.max(ops / (phi * phi * psi) as f64);
        }
    }
    ensure(
        worst <= C,
        format!("byte-identical reruns; max ops/(|tracks|^2 |dets|) = {worst:.3} <= {C}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("assignment optimality", assignment_optimality),
        ("gate constant", gate_constant),
        ("EMA contract", ema_contract),
        ("metrics oracle equivalence", metrics_oracle),
        ("fusion trend", fusion_trend),
        ("theta/AssPr trend", theta_precision_trend),
        ("ablation direction", ablation_direction),
        ("lifecycle conformance", lifecycle),
        ("format fidelity", format_fidelity),
        ("determinism and complexity", determinism_and_complexity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
