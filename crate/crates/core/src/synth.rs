//! Synthetic queue scenarios: identities walk looped elliptic paths through a
//! gate near the bottom of a 1920x1080 image, disappear for part of every
//! loop, and are occasionally occluded on the way. Each detection carries a
//! noisy biometric and appearance embedding drawn around per-identity
//! anchors.
//!
//! Everything is a pure function of [`ScenarioSpec`], including its seed.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

use crate::association::cosine_cost;
use crate::error::{Error, Result};
use crate::formats::{Mot20Row, SequenceRecord};
use crate::model::{BoundingBox, Detection, FeatureVector, Frame};
use crate::motion::iou;

pub const IMAGE_WIDTH: f64 = 1920.0;
pub const IMAGE_HEIGHT: f64 = 1080.0;
/// Where every path passes through (x, y of the box centre).
pub const GATE: (f64, f64) = (960.0, 980.0);
const FAR_HEIGHT: f64 = 40.0;
const NEAR_HEIGHT: f64 = 150.0;
/// Frames on each side of an occlusion with degraded biometric features.
pub const DEGRADE_MARGIN: u32 = 5;
const DEGRADE_FACTOR: f64 = 3.0;
const QUALITY_GOOD: f64 = 0.9;
const QUALITY_DEGRADED: f64 = 0.3;
const QUALITY_NOISE: f64 = 0.05;
pub const HARD_FACTOR: f64 = 4.0;

/// Minimum spacing in frames between gate events of different people.
const ENTRY_GAP: i64 = 3;
const ENTRY_TRIES: usize = 1000;
const START_OVERLAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub identities: usize,
    pub frames: u32,
    pub feature_dim: usize,
    /// Per-dimension std of the biometric observation noise.
    pub genuine_noise_bio: f64,
    pub genuine_noise_app: f64,
    /// Expected cosine similarity between two identities' biometric anchors.
    pub anchor_correlation_bio: f64,
    pub anchor_correlation_app: f64,
    /// Probability that an occlusion starts in a visible frame.
    pub occlusion_rate: f64,
    pub occlusion_duration_mean: f64,
    pub degrade_bio_during_occlusion_margin: bool,
    pub det_conf_range: (f64, f64),
    /// Counterclockwise paths when set, clockwise otherwise.
    pub looped: bool,
    /// Std of box jitter as a fraction of box height.
    pub box_jitter: f64,
    /// Probability that a detection is a hard one (blurred or partly
    /// covered face) whose embeddings both get `HARD_FACTOR` times the noise.
    pub hard_detection_rate: f64,
    /// Identities per look-alike group; members share part of their
    /// appearance anchor. 1 disables grouping.
    pub app_group_size: usize,
    /// Extra anchor correlation between appearance anchors of one group.
    pub app_group_correlation: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            identities: 12,
            frames: 2000,
            feature_dim: 64,
            genuine_noise_bio: 0.05,
            genuine_noise_app: 0.06,
            anchor_correlation_bio: 0.1,
            anchor_correlation_app: 0.5,
            occlusion_rate: 0.01,
            occlusion_duration_mean: 40.0,
            degrade_bio_during_occlusion_margin: true,
            det_conf_range: (0.5, 0.95),
            looped: true,
            box_jitter: 0.02,
            hard_detection_rate: 0.03,
            app_group_size: 2,
            app_group_correlation: 0.3,
        }
    }
}

impl ScenarioSpec {
    /// No occlusions, no noise of any kind and no look-alike groups.
    pub fn noiseless(seed: u64, identities: usize, frames: u32) -> Self {
        ScenarioSpec {
            seed,
            identities,
            frames,
            genuine_noise_bio: 0.0,
            genuine_noise_app: 0.0,
            occlusion_rate: 0.0,
            degrade_bio_during_occlusion_margin: false,
            box_jitter: 0.0,
            hard_detection_rate: 0.0,
            app_group_size: 1,
            ..Default::default()
        }
    }

    /// Biometric noise and anchor correlation chosen so that mean genuine
    /// and imposter costs land near 0.27 and 0.87.
    pub fn calibrated(seed: u64) -> Self {
        let (sigma, rho) = calibrate(0.27, 0.87, 64);
        ScenarioSpec {
            seed,
            genuine_noise_bio: sigma,
            anchor_correlation_bio: rho,
            degrade_bio_during_occlusion_margin: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.identities == 0 {
            bad.push("identities must be ≥ 1");
        }
        if self.feature_dim == 0 {
            bad.push("feature_dim must be ≥ 1");
        }
        for v in [self.genuine_noise_bio, self.genuine_noise_app, self.box_jitter] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push("noise levels must be finite and ≥ 0");
            }
        }
        for v in [self.anchor_correlation_bio, self.anchor_correlation_app + self.app_group_correlation] {
            if !(0.0..1.0).contains(&v) || self.app_group_correlation < 0.0 {
                bad.push("anchor correlations must be ≥ 0 and sum below 1");
            }
        }
        if self.app_group_size == 0 {
            bad.push("app_group_size must be ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.hard_detection_rate) {
            bad.push("hard_detection_rate must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            bad.push("occlusion_rate must be in [0, 1]");
        }
        if !(self.occlusion_duration_mean >= 1.0 && self.occlusion_duration_mean.is_finite()) {
            bad.push("occlusion_duration_mean must be ≥ 1");
        }
        let (lo, hi) = self.det_conf_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            bad.push("det_conf_range must satisfy 0 ≤ lo ≤ hi ≤ 1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            bad.dedup();
            Err(Error::InvalidArgument(bad.join("; ")))
        }
    }
}

/// `(sigma, rho)` such that an observation's expected cosine cost to its own
/// anchor is `genuine` and to another identity's anchor is `imposter`.
/// Uses `|noise|² ≈ dim·σ²` and near-orthogonal random directions.
pub fn calibrate(genuine: f64, imposter: f64, dim: usize) -> (f64, f64) {
    let c = 1.0 - genuine;
    let sigma = ((1.0 / (c * c) - 1.0) / dim as f64).sqrt();
    let rho = (1.0 - imposter) / c;
    (sigma, rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPair {
    pub bio: FeatureVector,
    pub app: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    pub identity: usize,
    pub start: u32,
    /// Duration drawn by the sampler.
    pub duration: u32,
    /// Frames actually hidden; shorter when the visible arc ends first.
    pub applied: u32,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub gt: SequenceRecord,
    pub frames: Vec<Frame>,
    pub anchors: Vec<AnchorPair>,
    /// GT id of every detection.
    pub det_gt: HashMap<(u32, i64), i64>,
    pub occlusions: Vec<Occlusion>,
}

impl Scenario {
    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn mix(parts: &[(&[f64], f64)]) -> FeatureVector {
    let dim = parts[0].0.len();
    let v = (0..dim).map(|k| parts.iter().map(|(p, w)| w.sqrt() * p[k]).sum()).collect();
    FeatureVector::normalized(v).expect("random directions are non-zero")
}

fn observe(rng: &mut ChaCha8Rng, anchor: &FeatureVector, sigma: f64) -> FeatureVector {
    if sigma == 0.0 {
        return anchor.clone();
    }
    let v = anchor
        .as_slice()
        .iter()
        .map(|a| a + sigma * normal(rng))
        .collect();
    FeatureVector::normalized(v).unwrap_or_else(|_| anchor.clone())
}

/// Anchors sharing a common direction (weight `rho`) and, within groups of
/// `group` consecutive identities, a group direction (weight `gamma`).
fn anchors(rng: &mut ChaCha8Rng, n: usize, dim: usize, rho: f64, group: usize, gamma: f64) -> Vec<FeatureVector> {
    let common = unit(gaussian_vec(rng, dim));
    let groups: Vec<Vec<f64>> = (0..n.div_ceil(group)).map(|_| unit(gaussian_vec(rng, dim))).collect();
    (0..n)
        .map(|i| {
            let own = unit(gaussian_vec(rng, dim));
            mix(&[(&common, rho), (&groups[i / group], gamma), (&own, 1.0 - rho - gamma)])
        })
        .collect()
}

/// One identity's looped path: `visible` frames walking an ellipse that
/// starts and ends at the gate, then `hidden` frames out of view. Walking
/// speed is constant in face heights per frame, so far-away faces move
/// fewer pixels than near ones.
#[derive(Debug, Clone)]
struct Path {
    rx: f64,
    ry: f64,
    visible: u32,
    hidden: u32,
    offset: u32,
    sway: f64,
    sway_period: f64,
    direction: f64,
    /// Cumulative perspective arc length at `ARC_STEPS + 1` evenly spaced
    /// angles, normalized to end at 1.
    arc: Vec<f64>,
}

const ARC_STEPS: usize = 1024;

fn face_height(y: f64) -> f64 {
    let depth = ((y - (GATE.1 - 2.0 * 430.0)) / (2.0 * 430.0)).clamp(0.0, 1.0);
    FAR_HEIGHT + (NEAR_HEIGHT - FAR_HEIGHT) * depth
}

impl Path {
    fn sample(rng: &mut ChaCha8Rng, looped: bool) -> Self {
        let visible = rng.random_range(250..400);
        let mut p = Path {
            rx: rng.random_range(300.0..800.0),
            ry: rng.random_range(300.0..430.0),
            visible,
            hidden: rng.random_range(150..300),
            offset: rng.random_range(0..visible / 2),
            sway: rng.random_range(5.0..25.0),
            sway_period: rng.random_range(40.0..120.0),
            direction: if looped { 1.0 } else { -1.0 },
            arc: Vec::new(),
        };
        let step = std::f64::consts::TAU / ARC_STEPS as f64;
        let mut arc = vec![0.0; ARC_STEPS + 1];
        let mut prev = p.point(0.0);
        for k in 1..=ARC_STEPS {
            let cur = p.point(k as f64 * step);
            let len = (cur.0 - prev.0).hypot(cur.1 - prev.1);
            arc[k] = arc[k - 1] + len / face_height(0.5 * (cur.1 + prev.1));
            prev = cur;
        }
        let total = arc[ARC_STEPS];
        arc.iter_mut().for_each(|v| *v /= total);
        p.arc = arc;
        p
    }

    /// Ellipse point at angle `theta`, without sway.
    fn point(&self, theta: f64) -> (f64, f64) {
        let cy = GATE.1 - self.ry;
        (
            GATE.0 + self.direction * self.rx * theta.sin(),
            cy + self.ry * theta.cos(),
        )
    }

    /// Angle reached after walking fraction `u` of the perspective arc.
    fn angle(&self, u: f64) -> f64 {
        let k = self.arc.partition_point(|&v| v < u).clamp(1, ARC_STEPS);
        let (lo, hi) = (self.arc[k - 1], self.arc[k]);
        let t = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
        std::f64::consts::TAU * ((k - 1) as f64 + t) / ARC_STEPS as f64
    }

    /// `(loop index from 0, position in the visible arc)` or `None` when hidden.
    fn phase(&self, frame: u32) -> (u32, Option<u32>) {
        let t = frame - 1 + self.offset;
        let period = self.visible + self.hidden;
        let (lap, pos) = (t / period, t % period);
        (lap, (pos < self.visible).then_some(pos))
    }

    /// Frames at which a visible arc starts at the gate. The arc in progress
    /// at frame 1 counts with its virtual start, which may be ≤ 0.
    fn entries(&self, frames: u32) -> impl Iterator<Item = i64> + '_ {
        let period = (self.visible + self.hidden) as i64;
        let first = 1 - self.offset as i64;
        (0..)
            .map(move |k| first + k * period)
            .take_while(move |&e| e <= frames as i64)
    }

    /// Last visible frame of every arc.
    fn exits(&self, frames: u32) -> impl Iterator<Item = i64> + '_ {
        let visible = self.visible as i64;
        self.entries(frames).map(move |e| e + visible - 1)
    }

    fn bbox(&self, frame: u32, pos: u32) -> BoundingBox {
        let theta = self.angle(pos as f64 / self.visible as f64);
        let (x, y) = self.point(theta);
        let h = face_height(y);
        let sway = self.sway * h / NEAR_HEIGHT
            * (std::f64::consts::TAU * frame as f64 / self.sway_period).sin()
            * theta.sin().abs();
        let x = x + sway;
        let w = 0.8 * h;
        let left = (x - w / 2.0).clamp(0.0, IMAGE_WIDTH - w);
        let top = (y - h / 2.0).clamp(0.0, IMAGE_HEIGHT - h);
        BoundingBox {
            left,
            top,
            width: w,
            height: h,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct OcclusionState {
    /// Frames left in the current occlusion.
    remaining: u32,
    current: Option<usize>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Samples one path per identity. Two people cannot pass through the gate
/// together, so a path is redrawn (up to `ENTRY_TRIES` times) while one of
/// its entries falls within `ENTRY_GAP` frames of an accepted entry, shortly
/// after an accepted exit or in the last frames of the sequence (too late to
/// ever be confirmed), or one of its exits shortly precedes an accepted entry.
/// Starting positions in frame 1 may not overlap either.
fn sample_paths(rng: &mut ChaCha8Rng, n: usize, frames: u32, looped: bool) -> Vec<Path> {
    let mut paths: Vec<Path> = Vec::with_capacity(n);
    let (mut entries, mut exits): (Vec<i64>, Vec<i64>) = (Vec::new(), Vec::new());
    let follows = |entry: i64, exit: i64| (1..=ENTRY_GAP).contains(&(entry - exit));
    for _ in 0..n {
        let mut path = Path::sample(rng, looped);
        for _ in 1..ENTRY_TRIES {
            let clash = path.entries(frames).any(|e| {
                e > frames as i64 - ENTRY_GAP
                    || entries.iter().any(|t| (t - e).abs() < ENTRY_GAP)
                    || exits.iter().any(|&x| follows(e, x))
            }) || path.exits(frames).any(|x| entries.iter().any(|&e| follows(e, x)))
                || paths.iter().any(|p| iou(&p.bbox(1, p.offset), &path.bbox(1, path.offset)) > START_OVERLAP);
            if !clash {
                break;
            }
            path = Path::sample(rng, looped);
        }
        entries.extend(path.entries(frames));
        exits.extend(path.exits(frames));
        paths.push(path);
    }
    paths
}

/// GT track id: `person * 100 + lap`, persons and laps counted from 1.
pub fn gt_track_id(identity: usize, lap: u32) -> i64 {
    (identity as i64 + 1) * 100 + lap as i64 + 1
}

/// Generates the scenario described by `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.identities;
    let bio = anchors(&mut rng, n, spec.feature_dim, spec.anchor_correlation_bio, 1, 0.0);
    let app = anchors(
        &mut rng,
        n,
        spec.feature_dim,
        spec.anchor_correlation_app,
        spec.app_group_size,
        spec.app_group_correlation,
    );
    let paths = sample_paths(&mut rng, n, spec.frames, spec.looped);
    let geometric = Geometric::new(1.0 / spec.occlusion_duration_mean)
        .map_err(|e| Error::InvalidArgument(format!("occlusion duration: {e}")))?;

    // Pass 1: visibility and occlusion per identity and frame.
    let frames = spec.frames as usize;
    let mut shown = vec![vec![None::<(u32, u32)>; frames]; n];
    let mut occluded = vec![vec![false; frames]; n];
    let mut occlusions = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let mut st = OcclusionState::default();
        for f in 1..=spec.frames {
            let idx = f as usize - 1;
            let (lap, pos) = path.phase(f);
            let Some(pos) = pos else {
                st.remaining = 0;
                st.current = None;
                continue;
            };
            if st.remaining == 0 && rng.random::<f64>() < spec.occlusion_rate {
                let duration = 1 + geometric.sample(&mut rng) as u32;
                st.remaining = duration;
                st.current = Some(occlusions.len());
                occlusions.push(Occlusion {
                    identity: i,
                    start: f,
                    duration,
                    applied: 0,
                });
            }
            if st.remaining > 0 {
                st.remaining -= 1;
                occluded[i][idx] = true;
                if let Some(k) = st.current {
                    occlusions[k].applied += 1;
                }
            } else {
                shown[i][idx] = Some((lap, pos));
            }
        }
    }
    let degraded = |i: usize, idx: usize| -> bool {
        if !spec.degrade_bio_during_occlusion_margin {
            return false;
        }
        let m = DEGRADE_MARGIN as usize;
        let lo = idx.saturating_sub(m);
        let hi = (idx + m).min(frames - 1);
        (lo..=hi).any(|k| occluded[i][k])
    };

    // Pass 2: GT rows and detections.
    let mut gt = Vec::new();
    let mut out = Vec::with_capacity(frames);
    let mut det_gt = HashMap::new();
    let (clo, chi) = spec.det_conf_range;
    for f in 1..=spec.frames {
        let idx = f as usize - 1;
        let mut visible: Vec<(usize, i64, BoundingBox)> = Vec::new();
        for (i, path) in paths.iter().enumerate() {
            if let Some((lap, pos)) = shown[i][idx] {
                let b = path.bbox(f, pos);
                let b = BoundingBox {
                    left: round2(b.left),
                    top: round2(b.top),
                    width: round2(b.width),
                    height: round2(b.height),
                };
                let id = gt_track_id(i, lap);
                gt.push(Mot20Row {
                    frame: f,
                    id,
                    left: b.left,
                    top: b.top,
                    width: b.width,
                    height: b.height,
                    conf: 1.0,
                    class: 1,
                    visibility: 1.0,
                });
                visible.push((i, id, b));
            }
        }
        let mut det_ids: Vec<i64> = (0..visible.len() as i64).collect();
        det_ids.shuffle(&mut rng);
        let mut dets = Vec::with_capacity(visible.len());
        for ((i, id, b), det_id) in visible.into_iter().zip(det_ids) {
            let s = spec.box_jitter * b.height;
            let mut jitter = || if s > 0.0 { s * normal(&mut rng) } else { 0.0 };
            let (dx, dy, dw, dh) = (jitter(), jitter(), jitter(), jitter());
            let bbox = BoundingBox {
                left: round2(b.left + dx),
                top: round2(b.top + dy),
                width: round2((b.width + dw).max(1.0)),
                height: round2((b.height + dh).max(1.0)),
            };
            let bad = degraded(i, idx);
            let hard = if rng.random::<f64>() < spec.hard_detection_rate { HARD_FACTOR } else { 1.0 };
            let sigma_bio = hard * spec.genuine_noise_bio * if bad { DEGRADE_FACTOR } else { 1.0 };
            let base_q = if bad || hard > 1.0 { QUALITY_DEGRADED } else { QUALITY_GOOD };
            let q: f64 = base_q + QUALITY_NOISE * normal(&mut rng);
            let conf = if chi > clo { rng.random_range(clo..=chi) } else { clo };
            let det = Detection {
                frame_id: f,
                det_id,
                bbox,
                confidence: (conf * 1e4).round() / 1e4,
                quality: Some((q.clamp(0.05, 1.0) * 1e4).round() / 1e4),
                bio: observe(&mut rng, &bio[i], sigma_bio),
                app: observe(&mut rng, &app[i], hard * spec.genuine_noise_app),
            };
            det_gt.insert((f, det_id), id);
            dets.push(det);
        }
        dets.sort_by_key(|d| d.det_id);
        out.push(Frame {
            frame_id: f,
            detections: dets,
        });
    }
    let mut gt = SequenceRecord { rows: gt };
    gt.sort_canonical();
    Ok(Scenario {
        spec: spec.clone(),
        gt,
        frames: out,
        anchors: bio.into_iter().zip(app).map(|(bio, app)| AnchorPair { bio, app }).collect(),
        det_gt,
        occlusions,
    })
}

/// Expected costs of an observation against its own anchor (genuine) and
/// another identity's anchor (imposter), for one feature type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub genuine: f64,
    pub imposter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedSeparation {
    pub bio: Separation,
    pub app: Separation,
}

pub const SEPARATION_SAMPLES: usize = 10_000;

fn separation(rng: &mut ChaCha8Rng, dim: usize, sigma: f64, rho: f64) -> Separation {
    let (mut g, mut i) = (0.0, 0.0);
    for _ in 0..SEPARATION_SAMPLES {
        let pair = anchors(rng, 2, dim, rho, 1, 0.0);
        let obs = observe(rng, &pair[0], sigma);
        g += cosine_cost(&obs, &pair[0]).expect("same dimension");
        i += cosine_cost(&obs, &pair[1]).expect("same dimension");
    }
    let n = SEPARATION_SAMPLES as f64;
    Separation {
        genuine: g / n,
        imposter: i / n,
    }
}

/// Monte-Carlo estimate over fresh anchor pairs drawn like [`generate`] draws them.
pub fn expected_separation(spec: &ScenarioSpec) -> Result<ExpectedSeparation> {
    if spec.feature_dim < 8 {
        return Err(Error::InvalidArgument("feature_dim must be ≥ 8".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5e9a_7a71_0000_0001);
    Ok(ExpectedSeparation {
        bio: separation(&mut rng, spec.feature_dim, spec.genuine_noise_bio, spec.anchor_correlation_bio),
        app: separation(&mut rng, spec.feature_dim, spec.genuine_noise_app, spec.anchor_correlation_app),
    })
}
