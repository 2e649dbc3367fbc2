//! MOT20 ground-truth/result files, detection bundles with embedding
//! sidecars, the key=value tracker config, and metric reports.
//!
//! Bundle layout (one directory):
//!
//! ```text
//! detections.csv   # frames=N            (optional, declares trailing empty frames)
//!                  frame,det_id,left,top,width,height,conf,quality
//! bio.csv          # dim=D
//!                  frame,det_id,v1,...,vD
//! app.csv          same layout as bio.csv
//! ```
//!
//! `quality` may be left empty. Embeddings are L2-normalized on load.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, FeatureVector, Frame, LambdaSetting, TrackerConfig};

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const BIO_FILE: &str = "bio.csv";
pub const APP_FILE: &str = "app.csv";

/// One line of a MOT20 file:
/// `frame,id,left,top,width,height,conf,class,visibility`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mot20Row {
    pub frame: u32,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    /// Detector confidence for results; target flag (1) / ignore (0) for GT.
    pub conf: f64,
    pub class: i32,
    pub visibility: f64,
}

impl Mot20Row {
    pub fn result(frame: u32, track_id: u64, b: BoundingBox, conf: f64) -> Self {
        Mot20Row {
            frame,
            id: track_id as i64,
            left: b.left,
            top: b.top,
            width: b.width,
            height: b.height,
            conf,
            class: 1,
            visibility: -1.0,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            left: self.left,
            top: self.top,
            width: self.width,
            height: self.height,
        }
    }

    /// GT rows with conf 0 are flagged "ignore".
    pub fn is_ignored(&self) -> bool {
        self.conf == 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceRecord {
    pub rows: Vec<Mot20Row>,
}

impl SequenceRecord {
    /// Sorts by (frame, id), then by the remaining fields.
    pub fn sort_canonical(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.frame, a.id)
                .cmp(&(b.frame, b.id))
                .then(a.left.total_cmp(&b.left))
                .then(a.top.total_cmp(&b.top))
                .then(a.width.total_cmp(&b.width))
                .then(a.height.total_cmp(&b.height))
                .then(a.conf.total_cmp(&b.conf))
        });
    }

    pub fn max_frame(&self) -> u32 {
        self.rows.iter().map(|r| r.frame).max().unwrap_or(0)
    }

    /// Rows grouped per frame, frames ascending.
    pub fn by_frame(&self) -> Vec<(u32, Vec<&Mot20Row>)> {
        let mut map: std::collections::BTreeMap<u32, Vec<&Mot20Row>> = Default::default();
        for r in &self.rows {
            map.entry(r.frame).or_default().push(r);
        }
        map.into_iter().collect()
    }

    /// Rows with `frame <= last`.
    pub fn prefix(&self, last: u32) -> SequenceRecord {
        SequenceRecord {
            rows: self.rows.iter().filter(|r| r.frame <= last).cloned().collect(),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{what}: '{}' is not a number", field.trim())))
}

fn finite(path: &Path, line: usize, v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(path, line, format!("{what} is not finite")))
    }
}

/// Parses MOT20 text. `origin` is only used in error messages.
pub fn parse_mot20_str(text: &str, origin: &Path) -> Result<SequenceRecord> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::parse(origin, ln, format!("expected 9 values, found {}", f.len())));
        }
        let frame: i64 = num(origin, ln, f[0], "frame")?;
        if frame < 1 || frame > u32::MAX as i64 {
            return Err(Error::parse(origin, ln, format!("frame must be ≥ 1, got {frame}")));
        }
        let mut reals = [0.0; 4];
        for (k, name) in ["bb_left", "bb_top", "bb_width", "bb_height"].iter().enumerate() {
            reals[k] = finite(origin, ln, num(origin, ln, f[2 + k], name)?, name)?;
        }
        if reals[2] <= 0.0 || reals[3] <= 0.0 {
            return Err(Error::parse(origin, ln, "box width and height must be positive"));
        }
        rows.push(Mot20Row {
            frame: frame as u32,
            id: num(origin, ln, f[1], "id")?,
            left: reals[0],
            top: reals[1],
            width: reals[2],
            height: reals[3],
            conf: finite(origin, ln, num(origin, ln, f[6], "conf")?, "conf")?,
            class: num(origin, ln, f[7], "class")?,
            visibility: finite(origin, ln, num(origin, ln, f[8], "visibility")?, "visibility")?,
        });
    }
    Ok(SequenceRecord { rows })
}

/// Reads a MOT20 ground-truth (or result) file.
pub fn parse_gt(path: impl AsRef<Path>) -> Result<SequenceRecord> {
    let path = path.as_ref();
    parse_mot20_str(&read(path)?, path)
}

/// Renders result rows as `frame,id,left,top,width,height,conf,1,-1`,
/// sorted by (frame, id), two decimals, one row per line.
pub fn format_results(record: &SequenceRecord) -> String {
    let mut rec = record.clone();
    rec.sort_canonical();
    let mut out = String::new();
    for r in &rec.rows {
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},1,-1",
            r.frame, r.id, r.left, r.top, r.width, r.height, r.conf
        );
    }
    out
}

pub fn write_results(record: &SequenceRecord, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_results(record))
}

/// Renders ground truth rows verbatim in MOT20 layout.
pub fn format_gt(record: &SequenceRecord) -> String {
    let mut out = String::new();
    for r in &record.rows {
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2},{:.2},{},{},{:.2}",
            r.frame, r.id, r.left, r.top, r.width, r.height, r.conf, r.class, r.visibility
        );
    }
    out
}

struct RawDetection {
    frame: u32,
    det_id: i64,
    bbox: BoundingBox,
    conf: f64,
    quality: Option<f64>,
}

fn parse_detections(path: &Path) -> Result<(Vec<RawDetection>, u32)> {
    let text = read(path)?;
    let mut out = Vec::new();
    let mut declared_frames = 0;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("frames=") {
                declared_frames = num(path, ln, v, "frames")?;
            }
            continue;
        }
        if line.starts_with("frame") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::parse(path, ln, format!("expected 8 values, found {}", f.len())));
        }
        let frame: u32 = num(path, ln, f[0], "frame")?;
        if frame == 0 {
            return Err(Error::parse(path, ln, "frame must be ≥ 1"));
        }
        let mut b = [0.0; 4];
        for k in 0..4 {
            b[k] = finite(path, ln, num(path, ln, f[2 + k], "box")?, "box")?;
        }
        let bbox = BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| Error::parse(path, ln, e.to_string()))?;
        let conf = finite(path, ln, num(path, ln, f[6], "conf")?, "conf")?;
        let quality = match f[7].trim() {
            "" => None,
            q => Some(finite(path, ln, num(path, ln, q, "quality")?, "quality")?),
        };
        out.push(RawDetection {
            frame,
            det_id: num(path, ln, f[1], "det_id")?,
            bbox,
            conf,
            quality,
        });
    }
    Ok((out, declared_frames))
}

fn parse_sidecar(path: &Path) -> Result<HashMap<(u32, i64), Vec<f64>>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let dim: usize = match lines.next() {
        Some((_, first)) => {
            let v = first
                .trim()
                .strip_prefix('#')
                .and_then(|s| s.trim().strip_prefix("dim="))
                .ok_or_else(|| Error::parse(path, 1, "first line must be '# dim=D'"))?;
            num(path, 1, v, "dim")?
        }
        None => return Err(Error::parse(path, 1, "empty embedding file")),
    };
    if dim == 0 {
        return Err(Error::parse(path, 1, "dim must be positive"));
    }
    let mut map = HashMap::new();
    for (i, line) in lines {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 2 {
            return Err(Error::parse(
                path,
                ln,
                format!("dim mismatch: expected {} values, found {}", dim + 2, f.len()),
            ));
        }
        let key = (num(path, ln, f[0], "frame")?, num(path, ln, f[1], "det_id")?);
        let values = f[2..]
            .iter()
            .map(|v| finite(path, ln, num(path, ln, v, "embedding")?, "embedding value"))
            .collect::<Result<Vec<f64>>>()?;
        if map.insert(key, values).is_some() {
            return Err(Error::parse(
                path,
                ln,
                format!("duplicate embedding for (frame {}, det {})", key.0, key.1),
            ));
        }
    }
    Ok(map)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Loads a detection bundle and joins it with both embedding sidecars.
/// Returns one [`Frame`] per frame id from 1 to the last frame, including
/// frames without detections.
pub fn parse_bundle(dir: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    let det_path = dir.join(DETECTIONS_FILE);
    let (raw, declared) = parse_detections(&det_path)?;
    let mut sidecars = Vec::new();
    for name in [BIO_FILE, APP_FILE] {
        let p = dir.join(name);
        sidecars.push((parse_sidecar(&p)?, p));
    }

    let last = raw.iter().map(|d| d.frame).max().unwrap_or(0).max(declared);
    let mut frames: Vec<Frame> = (1..=last)
        .map(|f| Frame {
            frame_id: f,
            detections: Vec::new(),
        })
        .collect();

    let mut seen = std::collections::HashSet::new();
    for d in raw {
        let key = (d.frame, d.det_id);
        if !seen.insert(key) {
            return Err(Error::parse(
                &det_path,
                0,
                format!("duplicate detection (frame {}, det {})", d.frame, d.det_id),
            ));
        }
        let mut feats = Vec::with_capacity(2);
        for (map, p) in sidecars.iter_mut() {
            let v = map.remove(&key).ok_or_else(|| Error::MissingEmbedding {
                frame: d.frame,
                det_id: d.det_id,
                file: file_name(p),
            })?;
            let fv = FeatureVector::normalized(v).map_err(|e| {
                Error::InvalidArgument(format!(
                    "(frame {}, det {}) in {}: {e}",
                    d.frame,
                    d.det_id,
                    file_name(p)
                ))
            })?;
            feats.push(fv);
        }
        let app = feats.pop().expect("two sidecars");
        let bio = feats.pop().expect("two sidecars");
        let det = Detection {
            frame_id: d.frame,
            det_id: d.det_id,
            bbox: d.bbox,
            confidence: d.conf,
            quality: d.quality,
            bio,
            app,
        };
        det.validate()?;
        frames[d.frame as usize - 1].detections.push(det);
    }
    for (map, p) in &sidecars {
        if let Some(&(frame, det_id)) = map.keys().min() {
            return Err(Error::InvalidArgument(format!(
                "{} has an embedding for unknown detection (frame {frame}, det {det_id})",
                file_name(p)
            )));
        }
    }
    Ok(frames)
}

/// Writes a bundle in the layout [`parse_bundle`] reads.
pub fn write_bundle(dir: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let last = frames.iter().map(|f| f.frame_id).max().unwrap_or(0);
    let mut dets = format!("# frames={last}\nframe,det_id,left,top,width,height,conf,quality\n");
    let dims = frames
        .iter()
        .flat_map(|f| &f.detections)
        .next()
        .map_or((0, 0), |d| (d.bio.dim(), d.app.dim()));
    let mut bio = format!("# dim={}\n", dims.0);
    let mut app = format!("# dim={}\n", dims.1);
    for d in frames.iter().flat_map(|f| &f.detections) {
        let q = d.quality.map(|q| format!("{q:.4}")).unwrap_or_default();
        let b = d.bbox;
        let _ = writeln!(
            dets,
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.4},{q}",
            d.frame_id, d.det_id, b.left, b.top, b.width, b.height, d.confidence
        );
        for (out, v) in [(&mut bio, &d.bio), (&mut app, &d.app)] {
            let _ = write!(out, "{},{}", d.frame_id, d.det_id);
            for x in v.as_slice() {
                let _ = write!(out, ",{x:.6}");
            }
            out.push('\n');
        }
    }
    write(&dir.join(DETECTIONS_FILE), &dets)?;
    write(&dir.join(BIO_FILE), &bio)?;
    write(&dir.join(APP_FILE), &app)
}

const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "beta",
    "theta",
    "theta_pos",
    "alpha_ema",
    "n_init",
    "n_max",
    "min_iou",
    "use_cascade",
    "use_iou_fallback",
    "position_cost_raw",
    "fallback_all_unmatched",
    "emit_predictions",
];

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Parses `key=value` lines on top of the defaults. Blank lines and `#`
/// comments are skipped; unknown keys and out-of-range values are errors.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<TrackerConfig> {
    let mut cfg = TrackerConfig::default();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, ln, "expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        let real = || -> Result<f64> {
            let v: f64 = num(origin, ln, value, key)?;
            if v.is_nan() {
                return Err(Error::parse(origin, ln, format!("{key} is NaN")));
            }
            Ok(v)
        };
        let int = || -> Result<u32> { num(origin, ln, value, key) };
        let flag = || parse_bool(value).ok_or_else(|| Error::parse(origin, ln, format!("{key}: expected true/false")));
        match key {
            "lambda" => {
                cfg.lambda = if value == "dynamic_quality" {
                    LambdaSetting::DynamicQuality
                } else {
                    LambdaSetting::Fixed(real()?)
                }
            }
            "beta" => cfg.beta = real()?,
            "theta" => cfg.theta = real()?,
            "theta_pos" => cfg.theta_pos = real()?,
            "alpha_ema" => cfg.alpha_ema = real()?,
            "n_init" => cfg.n_init = int()?,
            "n_max" => cfg.n_max = int()?,
            "min_iou" => cfg.min_iou = real()?,
            "use_cascade" => cfg.use_cascade = flag()?,
            "use_iou_fallback" => cfg.use_iou_fallback = flag()?,
            "position_cost_raw" => cfg.position_cost_raw = flag()?,
            "fallback_all_unmatched" => cfg.fallback_all_unmatched = flag()?,
            "emit_predictions" => cfg.emit_predictions = flag()?,
            other => {
                return Err(Error::parse(
                    origin,
                    ln,
                    format!("unknown key '{other}' (known: {})", CONFIG_KEYS.join(", ")),
                ))
            }
        }
    }
    cfg.validate().map_err(Error::InvalidConfig)?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<TrackerConfig> {
    let path = path.as_ref();
    parse_config_str(&read(path)?, path)
}

/// Renders every key; `parse_config_str` reads it back unchanged.
pub fn format_config(cfg: &TrackerConfig) -> String {
    format!(
        "lambda={}\nbeta={}\ntheta={}\ntheta_pos={}\nalpha_ema={}\nn_init={}\nn_max={}\nmin_iou={}\n\
         use_cascade={}\nuse_iou_fallback={}\nposition_cost_raw={}\nfallback_all_unmatched={}\nemit_predictions={}\n",
        cfg.lambda,
        cfg.beta,
        cfg.theta,
        cfg.theta_pos,
        cfg.alpha_ema,
        cfg.n_init,
        cfg.n_max,
        cfg.min_iou,
        cfg.use_cascade,
        cfg.use_iou_fallback,
        cfg.position_cost_raw,
        cfg.fallback_all_unmatched,
        cfg.emit_predictions,
    )
}

/// `sequence,metric,value` rows with a header line.
pub fn format_metrics_report(entries: &[(String, String, f64)]) -> String {
    let mut out = String::from("sequence,metric,value\n");
    for (seq, metric, value) in entries {
        let _ = writeln!(out, "{seq},{metric},{value:.6}");
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path: PathBuf = path.as_ref().into();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(&path, text)
}
