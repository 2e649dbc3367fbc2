use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faceqsort::formats::{
    format_gt, format_metrics_report, parse_bundle, parse_config, parse_gt, write_bundle,
    write_results, write_text,
};
use faceqsort::harness::{grid_csv, grid_search_csv, parse_value_list, recall_precision_csv, runs_csv, Study};
use faceqsort::metrics::{
    annotate_gt_ids, distribution_iou, evaluate, score_distributions, score_histograms, ScoreSource,
    DEFAULT_ALPHA,
};
use faceqsort::synth::{expected_separation, generate, ScenarioSpec};
use faceqsort::tracker::run_sequence_detailed;
use faceqsort::{Error, Frame, Result, TrackerConfig, TrackerEngine};

#[derive(Parser)]
#[command(name = "faceqsort", version, about = "Multi-face tracking with fused face and appearance embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a detection bundle and write MOT20 result rows.
    Track {
        #[arg(long)]
        dets: PathBuf,
        /// key=value tracker config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a result file against MOT20 ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        res: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// IoU needed for a detection-level match.
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Generate a synthetic queue scenario: detection bundle plus gt.txt.
    Synth(SynthArgs),
    /// Parameter studies: lambda sweeps, theta x lambda grids, ablations and
    /// the per-frame lambda grid search.
    Sweep(SweepArgs),
    /// Genuine/imposter cost distributions seen by the tracker.
    Scores {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    /// Per-dimension noise of the face embeddings.
    #[arg(long)]
    bio_noise: Option<f64>,
    #[arg(long)]
    app_noise: Option<f64>,
    /// Expected cosine similarity between two people's face anchors.
    #[arg(long)]
    bio_correlation: Option<f64>,
    #[arg(long)]
    app_correlation: Option<f64>,
    #[arg(long)]
    occlusion_rate: Option<f64>,
    #[arg(long)]
    occlusion_mean: Option<f64>,
    /// Keep face noise flat around occlusions.
    #[arg(long)]
    no_degrade: bool,
    /// Detector confidences are drawn uniformly from `LO,HI`.
    #[arg(long, value_parser = parse_range)]
    conf_range: Option<(f64, f64)>,
    #[arg(long)]
    hard_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    group_correlation: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    /// Walk the loop clockwise.
    #[arg(long)]
    clockwise: bool,
    /// Start from face noise tuned to mean costs of about 0.27 / 0.87.
    #[arg(long, conflicts_with = "noiseless")]
    calibrated: bool,
    /// Start from a scenario with no noise and no occlusions.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// `start:stop:step` or a comma list.
    #[arg(long, default_value = "0:1:0.1")]
    lambdas: String,
    /// Run the full theta x lambda grid over these thetas.
    #[arg(long)]
    thetas: Option<String>,
    /// Add a run with lambda taken from the detections' quality scores.
    #[arg(long)]
    dynamic: bool,
    /// Add the four cascade / IoU-fallback ablation rows.
    #[arg(long)]
    ablation: bool,
    /// Per-frame lambda grid search over these options, in this order.
    #[arg(long, requires = "max_dets")]
    grid_options: Option<String>,
    #[arg(long)]
    max_dets: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}"));
    Ok((num(lo)?, num(hi)?))
}

fn load_config(path: Option<&Path>) -> Result<TrackerConfig> {
    path.map_or_else(|| Ok(TrackerConfig::default()), parse_config)
}

fn track(dets: &Path, config: Option<&Path>, out: &Path) -> Result<String> {
    let cfg = load_config(config)?;
    let frames = parse_bundle(dets)?;
    let mut engine = TrackerEngine::new(cfg)?;
    let run = run_sequence_detailed(&mut engine, &frames)?;
    write_results(&run.record, out)?;
    Ok(format!(
        "{} frames, {} result rows, {:.1}% of detections matched by IoU fallback",
        frames.len(),
        run.record.rows.len(),
        100.0 * run.stats.fallback_fraction()
    ))
}

fn sequence_name(res: &Path) -> String {
    res.file_stem().map_or_else(|| "sequence".into(), |s| s.to_string_lossy().into_owned())
}

fn eval(gt: &Path, res: &Path, out: &Path, alpha: f64) -> Result<String> {
    let report = evaluate(&parse_gt(gt)?, &parse_gt(res)?, alpha)?;
    let name = sequence_name(res);
    let entries: Vec<(String, String, f64)> = report
        .entries()
        .into_iter()
        .map(|(m, v)| (name.clone(), m.to_string(), v))
        .collect();
    write_text(out, &format_metrics_report(&entries))?;
    Ok(format!(
        "HOTA {:.4} AssA {:.4} IDF1 {:.4} MOTA {:.4} IDSW {}",
        report.hota.hota, report.hota.assa, report.idf1, report.mota, report.idsw
    ))
}

fn synth(a: &SynthArgs) -> Result<String> {
    let mut spec = if a.calibrated {
        ScenarioSpec::calibrated(a.seed)
    } else if a.noiseless {
        ScenarioSpec::noiseless(a.seed, 12, 2000)
    } else {
        ScenarioSpec {
            seed: a.seed,
            ..ScenarioSpec::default()
        }
    };
    macro_rules! set {
        ($($arg:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = a.$arg { spec.$field = v; })*
        };
    }
    set!(
        identities => identities,
        frames => frames,
        dim => feature_dim,
        bio_noise => genuine_noise_bio,
        app_noise => genuine_noise_app,
        bio_correlation => anchor_correlation_bio,
        app_correlation => anchor_correlation_app,
        occlusion_rate => occlusion_rate,
        occlusion_mean => occlusion_duration_mean,
        hard_rate => hard_detection_rate,
        group_size => app_group_size,
        group_correlation => app_group_correlation,
        jitter => box_jitter,
        conf_range => det_conf_range,
    );
    if a.no_degrade {
        spec.degrade_bio_during_occlusion_margin = false;
    }
    if a.clockwise {
        spec.looped = false;
    }
    let s = generate(&spec)?;
    write_bundle(&a.out, &s.frames)?;
    write_text(a.out.join("gt.txt"), &format_gt(&s.gt))?;
    let mut msg = format!(
        "{} frames, {} detections, {} gt rows, {} occlusions",
        s.frames.len(),
        s.detection_count(),
        s.gt.rows.len(),
        s.occlusions.len()
    );
    if spec.feature_dim >= 8 {
        let e = expected_separation(&spec)?;
        let _ = write!(
            msg,
            "; expected face costs {:.3} genuine / {:.3} imposter",
            e.bio.genuine, e.bio.imposter
        );
    }
    Ok(msg)
}

fn sweep(a: &SweepArgs) -> Result<String> {
    let base = load_config(a.config.as_deref())?;
    let frames = parse_bundle(&a.dets)?;
    let gt = parse_gt(&a.gt)?;
    let study = Study {
        alpha: a.alpha,
        ..Study::new(&frames, &gt, &base)
    };
    let lambdas = parse_value_list(&a.lambdas)?;
    let mut sections = Vec::new();
    if let Some(t) = &a.thetas {
        let grid = study.theta_lambda_grid(&parse_value_list(t)?, &lambdas)?;
        sections.push(grid_csv(&grid));
        sections.push(recall_precision_csv(&grid));
    } else {
        let mut rows = study.sweep_fixed_lambda(&lambdas)?;
        if a.dynamic {
            rows.push(study.run_dynamic_quality()?);
        }
        sections.push(runs_csv(&rows));
    }
    if a.dynamic && a.thetas.is_some() {
        sections.push(runs_csv(&[study.run_dynamic_quality()?]));
    }
    if a.ablation {
        sections.push(runs_csv(&study.ablation_suite()?));
    }
    if let Some(opts) = &a.grid_options {
        let max = a.max_dets.ok_or_else(|| Error::InvalidArgument("--grid-options needs --max-dets".into()))?;
        let g = study.local_lambda_grid_search(&parse_value_list(opts)?, max)?;
        let mut text = grid_search_csv(&g);
        if let Some(r) = &g.report {
            text.push_str("\nmetric,value\n");
            for (m, v) in r.entries() {
                let _ = writeln!(text, "{m},{v:.6}");
            }
        }
        sections.push(text);
    }
    write_text(&a.out, &sections.join("\n"))?;
    Ok(format!("{} section(s) written", sections.len()))
}

fn scores(dets: &Path, gt: &Path, out: &Path, config: Option<&Path>, bins: usize, alpha: f64) -> Result<String> {
    let cfg = load_config(config)?;
    let frames: Vec<Frame> = parse_bundle(dets)?;
    let gt = parse_gt(gt)?;
    let mut engine = TrackerEngine::new(cfg)?;
    engine.enable_trace();
    let run = run_sequence_detailed(&mut engine, &frames)?;
    let ids = annotate_gt_ids(&frames, &gt, alpha)?;
    let mut summary = String::from(
        "source,genuine_count,genuine_mean,genuine_std,imposter_count,imposter_mean,imposter_std,distribution_iou\n",
    );
    let mut hist = String::from("source,bin_lo,bin_hi,genuine,imposter\n");
    let mut msg = Vec::new();
    for (name, src) in [("bio", ScoreSource::Bio), ("app", ScoreSource::App), ("fused", ScoreSource::Fused)] {
        let d = score_distributions(&run.trace, &ids, src)?;
        let overlap = distribution_iou(&d, bins)?;
        let _ = writeln!(
            summary,
            "{name},{},{:.6},{:.6},{},{:.6},{:.6},{overlap:.6}",
            d.genuine.len(),
            d.genuine_mean(),
            d.genuine_std(),
            d.imposter.len(),
            d.imposter_mean(),
            d.imposter_std()
        );
        let h = score_histograms(&d, bins)?;
        let w = h.hi / bins as f64;
        for (k, (g, i)) in h.genuine.iter().zip(&h.imposter).enumerate() {
            let _ = writeln!(hist, "{name},{:.6},{:.6},{g:.6},{i:.6}", k as f64 * w, (k + 1) as f64 * w);
        }
        msg.push(format!("{name} IoU {overlap:.4}"));
    }
    write_text(out, &format!("{summary}\n{hist}"))?;
    Ok(msg.join(", "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Track { dets, config, out } => track(dets, config.as_deref(), out),
        Command::Eval { gt, res, out, alpha } => eval(gt, res, out, *alpha),
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => sweep(a),
        Command::Scores {
            dets,
            gt,
            out,
            config,
            bins,
            alpha,
        } => scores(dets, gt, out, config.as_deref(), *bins, *alpha),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
