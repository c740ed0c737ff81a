//! PCK evaluation, keypoint-pair datasets and warp-confusion measurement.
//!
//! Keypoints are in image pixels. A pixel `(x, y)` of a `W x H` image sits
//! at normalized `(2x/(W-1) - 1, 2y/(H-1) - 1)`, the same frame the feature
//! grids use, so predicted transforms apply to keypoints directly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::correlation::{correlate, FeatureMap};
use crate::error::{Error, FormatError, Result};
use crate::features::{dsmf, extract, DescriptorConfig, Image};
use crate::geometry::{GeometricTransform, GridShape, Point};
use crate::losses::CoordinateSample;
use crate::regressor::{predict, RegressorWeights};

/// Fraction of keypoints whose error is at most `tau * max(box_w, box_h)`.
pub fn pck(warped: &[Point], gt: &[Point], box_wh: [f64; 2], tau: f64) -> Result<f64> {
    if warped.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} warped keypoints against {} ground-truth keypoints",
            warped.len(),
            gt.len()
        )));
    }
    if warped.is_empty() {
        return Err(Error::Contract("pck needs at least one keypoint".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(correct(warped, gt, box_wh, tau) as f64 / warped.len() as f64)
}

fn correct(warped: &[Point], gt: &[Point], box_wh: [f64; 2], tau: f64) -> usize {
    let threshold = tau * box_wh[0].max(box_wh[1]);
    warped
        .iter()
        .zip(gt)
        .filter(|(w, g)| (w[0] - g[0]).hypot(w[1] - g[1]) <= threshold)
        .count()
}

/// One annotated image pair. Boxes are `(x, y, w, h)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointPairRecord {
    pub source: String,
    pub target: String,
    pub class: String,
    pub source_box: [f64; 4],
    pub target_box: [f64; 4],
    /// `(source, target)` keypoint pairs.
    pub keypoints: Vec<(Point, Point)>,
}

impl KeypointPairRecord {
    pub fn validate(&self) -> Result<()> {
        if self.keypoints.is_empty() {
            return Err(Error::Contract(format!(
                "{} -> {}: no keypoints",
                self.source, self.target
            )));
        }
        for b in [self.source_box, self.target_box] {
            if !(b[2] > 0.0 && b[3] > 0.0) {
                return Err(Error::Contract(format!(
                    "{} -> {}: box {b:?} has no extent",
                    self.source, self.target
                )));
            }
        }
        Ok(())
    }
}

fn fmt_box(b: &[f64; 4]) -> String {
    format!("{},{},{},{}", b[0], b[1], b[2], b[3])
}

/// `src TAB dst TAB class TAB x,y,w,h TAB x,y,w,h TAB k TAB x1 y1 x1* y1* ...`
pub fn write_dataset(records: &[KeypointPairRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let kps: Vec<String> = r
            .keypoints
            .iter()
            .map(|(s, t)| format!("{} {} {} {}", s[0], s[1], t[0], t[1]))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.source,
            r.target,
            r.class,
            fmt_box(&r.source_box),
            fmt_box(&r.target_box),
            r.keypoints.len(),
            kps.join(" ")
        )
        .expect("string write");
    }
    out
}

fn text_err(line: usize, detail: impl Into<String>) -> FormatError {
    FormatError::Text {
        line,
        detail: detail.into(),
    }
}

fn parse_f64(s: &str, line: usize, what: &str) -> std::result::Result<f64, FormatError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| text_err(line, format!("bad {what} {s:?}")))
}

fn parse_box(s: &str, line: usize) -> std::result::Result<[f64; 4], FormatError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(text_err(line, format!("box {s:?} needs x,y,w,h")));
    }
    let mut b = [0.0; 4];
    for (o, p) in b.iter_mut().zip(parts) {
        *o = parse_f64(p, line, "box value")?;
    }
    Ok(b)
}

/// Parses the dataset TSV; blank lines and `#` comments are skipped.
pub fn parse_dataset(text: &str) -> std::result::Result<Vec<KeypointPairRecord>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 7 {
            return Err(text_err(
                line,
                format!("expected 7 tab-separated fields, got {}", cols.len()),
            ));
        }
        let k: usize = cols[5]
            .trim()
            .parse()
            .map_err(|_| text_err(line, format!("bad keypoint count {:?}", cols[5])))?;
        let coords = cols[6]
            .split_whitespace()
            .map(|v| parse_f64(v, line, "coordinate"))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if k == 0 || coords.len() != 4 * k {
            return Err(text_err(
                line,
                format!("{k} keypoints need {} coordinates, got {}", 4 * k, coords.len()),
            ));
        }
        let record = KeypointPairRecord {
            source: cols[0].to_owned(),
            target: cols[1].to_owned(),
            class: cols[2].to_owned(),
            source_box: parse_box(cols[3], line)?,
            target_box: parse_box(cols[4], line)?,
            keypoints: coords.chunks(4).map(|c| ([c[0], c[1]], [c[2], c[3]])).collect(),
        };
        record.validate().map_err(|e| text_err(line, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<KeypointPairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text).map_err(|e| Error::format(path, e))
}

pub fn save_dataset(records: &[KeypointPairRecord], path: &Path) -> Result<()> {
    std::fs::write(path, write_dataset(records)).map_err(|e| Error::io(path, e))
}

pub const PASCAL_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Converts a PF-PASCAL pair CSV (`source_image,target_image,class,XA,YA,XB,YB`,
/// coordinate lists separated by `;`) into dataset records.
///
/// Numeric classes `1..=20` map to the PASCAL VOC names. `boxes` supplies
/// object boxes by image path; images it does not know fall back to the
/// bounding box of their keypoints.
pub fn convert_pf_pascal_csv(
    text: &str,
    boxes: impl Fn(&str) -> Option<[f64; 4]>,
) -> std::result::Result<Vec<KeypointPairRecord>, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| text_err(1, "empty CSV"))?;
    let header: Vec<String> = split_csv(header).into_iter().map(|h| h.trim().to_owned()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| text_err(1, format!("missing column {name}")))
    };
    let idx = [
        col("source_image")?,
        col("target_image")?,
        col("class")?,
        col("XA")?,
        col("YA")?,
        col("XB")?,
        col("YB")?,
    ];
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let f = split_csv(raw);
        let get = |k: usize| {
            f.get(idx[k])
                .map(|s| s.trim())
                .ok_or_else(|| text_err(line, "short row"))
        };
        let list = |k: usize| -> std::result::Result<Vec<f64>, FormatError> {
            get(k)?
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|v| parse_f64(v, line, "coordinate"))
                .collect()
        };
        let (xa, ya, xb, yb) = (list(3)?, list(4)?, list(5)?, list(6)?);
        let n = xa.len();
        if n == 0 || ya.len() != n || xb.len() != n || yb.len() != n {
            return Err(text_err(line, "coordinate lists differ in length or are empty"));
        }
        let class = get(2)?;
        let class = match class.parse::<usize>() {
            Ok(c) if (1..=20).contains(&c) => PASCAL_CLASSES[c - 1].to_owned(),
            _ => class.to_owned(),
        };
        let keypoints: Vec<(Point, Point)> = (0..n).map(|k| ([xa[k], ya[k]], [xb[k], yb[k]])).collect();
        let extent = |pts: Vec<Point>| {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for p in pts {
                (x0, y0, x1, y1) = (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1]));
            }
            [x0, y0, (x1 - x0).max(1.0), (y1 - y0).max(1.0)]
        };
        let (source, target) = (get(0)?.to_owned(), get(1)?.to_owned());
        out.push(KeypointPairRecord {
            source_box: boxes(&source).unwrap_or_else(|| extent(keypoints.iter().map(|k| k.0).collect())),
            target_box: boxes(&target).unwrap_or_else(|| extent(keypoints.iter().map(|k| k.1).collect())),
            source,
            target,
            class,
            keypoints,
        });
    }
    Ok(out)
}

/// Supplies feature maps and image sizes by image id.
pub trait FeatureSource: Sync {
    fn features(&self, id: &str) -> Result<FeatureMap>;
    /// `(width, height)` in pixels.
    fn image_size(&self, id: &str) -> Result<(usize, usize)>;
}

/// Extracts the built-in descriptor from images under `root`.
#[derive(Clone, Debug)]
pub struct DescriptorSource {
    pub root: PathBuf,
    pub config: DescriptorConfig,
}

impl FeatureSource for DescriptorSource {
    fn features(&self, id: &str) -> Result<FeatureMap> {
        extract(&Image::load(&self.root.join(id))?, &self.config)
    }

    fn image_size(&self, id: &str) -> Result<(usize, usize)> {
        Image::probe_size(&self.root.join(id))
    }
}

/// Reads `<id>.dsmf` sidecars next to the images under `root`.
#[derive(Clone, Debug)]
pub struct SidecarSource {
    pub root: PathBuf,
}

impl SidecarSource {
    pub fn sidecar(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.dsmf"))
    }
}

impl FeatureSource for SidecarSource {
    fn features(&self, id: &str) -> Result<FeatureMap> {
        let path = self.sidecar(id);
        if !path.exists() {
            return Err(Error::MissingFeatures(id.to_owned()));
        }
        dsmf::load_features(&path)
    }

    fn image_size(&self, id: &str) -> Result<(usize, usize)> {
        Image::probe_size(&self.root.join(id))
    }
}

/// Features held in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    pub entries: HashMap<String, (FeatureMap, (usize, usize))>,
}

impl MemorySource {
    pub fn insert(&mut self, id: impl Into<String>, features: FeatureMap, size: (usize, usize)) {
        self.entries.insert(id.into(), (features, size));
    }

    fn entry(&self, id: &str) -> Result<&(FeatureMap, (usize, usize))> {
        self.entries
            .get(id)
            .ok_or_else(|| Error::MissingFeatures(id.to_owned()))
    }
}

impl FeatureSource for MemorySource {
    fn features(&self, id: &str) -> Result<FeatureMap> {
        Ok(self.entry(id)?.0.clone())
    }

    fn image_size(&self, id: &str) -> Result<(usize, usize)> {
        Ok(self.entry(id)?.1)
    }
}

/// Which image's box sets the PCK threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoxSide {
    Source,
    #[default]
    Target,
}

/// Maps a pixel of a `size = (w, h)` image through `t` into a `(w', h')` image.
pub fn warp_keypoint(t: &GeometricTransform, p: Point, from: (usize, usize), to: (usize, usize)) -> Point {
    let a = GridShape::new(from.1, from.0);
    let b = GridShape::new(to.1, to.0);
    b.norm_to_grid(t.apply(a.grid_to_norm(p)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPck {
    pub class: String,
    pub pck: f64,
    pub keypoints: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PckReport {
    pub tau: f64,
    /// Keypoint-weighted over the whole set.
    pub mean: f64,
    /// Unweighted mean of the per-class values.
    pub class_mean: f64,
    pub keypoints: usize,
    /// Sorted by class name.
    pub per_class: Vec<ClassPck>,
}

impl PckReport {
    /// `tau TAB class TAB pck TAB keypoints` rows, with `mean` and
    /// `class_mean` pseudo-classes first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}\tmean\t{}\t{}", self.tau, self.mean, self.keypoints).expect("string write");
        writeln!(out, "{}\tclass_mean\t{}\t{}", self.tau, self.class_mean, self.keypoints).expect("string write");
        for c in &self.per_class {
            writeln!(out, "{}\t{}\t{}\t{}", self.tau, c.class, c.pck, c.keypoints).expect("string write");
        }
        out
    }
}

impl fmt::Display for PckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PCK @ tau = {}", self.tau)?;
        for c in &self.per_class {
            writeln!(f, "  {:<14} {:>6.2}  ({} kp)", c.class, 100.0 * c.pck, c.keypoints)?;
        }
        writeln!(
            f,
            "  {:<14} {:>6.2}  ({} kp)",
            "mean",
            100.0 * self.mean,
            self.keypoints
        )?;
        write!(f, "  {:<14} {:>6.2}", "class mean", 100.0 * self.class_mean)
    }
}

/// Parses the rows written by [`PckReport::to_tsv`] back into
/// `(tau, class, pck)` triples.
pub fn parse_report_tsv(text: &str) -> std::result::Result<Vec<(f64, String, f64)>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let c: Vec<&str> = l.split('\t').collect();
            if c.len() != 4 {
                return Err(text_err(i + 1, "expected 4 fields"));
            }
            Ok((
                parse_f64(c[0], i + 1, "tau")?,
                c[1].to_owned(),
                parse_f64(c[2], i + 1, "pck")?,
            ))
        })
        .collect()
}

/// Per-record warped keypoints with their ground truth and threshold box.
struct Scored {
    class: String,
    warped: Vec<Point>,
    gt: Vec<Point>,
    box_wh: [f64; 2],
}

/// PCK of `weights` over `records` at every `tau`.
pub fn evaluate_pairs(
    records: &[KeypointPairRecord],
    weights: &RegressorWeights,
    taus: &[f64],
    source: &dyn FeatureSource,
    side: BoxSide,
) -> Result<Vec<PckReport>> {
    evaluate_with(records, taus, side, |r| {
        let (fa, fb) = (source.features(&r.source)?, source.features(&r.target)?);
        let t = predict(&correlate(&fa, &fb)?, &fa, &fb, weights)?;
        Ok((t, source.image_size(&r.source)?, source.image_size(&r.target)?))
    })
}

/// PCK for transforms produced by `predict_one`, which returns the
/// transform and the source and target image sizes.
pub fn evaluate_with(
    records: &[KeypointPairRecord],
    taus: &[f64],
    side: BoxSide,
    predict_one: impl Fn(&KeypointPairRecord) -> Result<(GeometricTransform, (usize, usize), (usize, usize))> + Sync + Send,
) -> Result<Vec<PckReport>> {
    if records.is_empty() {
        return Err(Error::Contract("evaluation needs at least one record".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::Config(format!("tau must be positive, got {t}")));
    }
    let scored = crate::par::map(records, |r| -> Result<Scored> {
        r.validate()?;
        let (t, from, to) = predict_one(r)?;
        let b = match side {
            BoxSide::Source => r.source_box,
            BoxSide::Target => r.target_box,
        };
        Ok(Scored {
            class: r.class.clone(),
            warped: r
                .keypoints
                .iter()
                .map(|(s, _)| warp_keypoint(&t, *s, from, to))
                .collect(),
            gt: r.keypoints.iter().map(|(_, g)| *g).collect(),
            box_wh: [b[2], b[3]],
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(taus.iter().map(|&tau| report(&scored, tau)).collect())
}

fn report(scored: &[Scored], tau: f64) -> PckReport {
    let mut by_class: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in scored {
        let e = by_class.entry(&s.class).or_default();
        e.0 += correct(&s.warped, &s.gt, s.box_wh, tau);
        e.1 += s.gt.len();
    }
    let per_class: Vec<ClassPck> = by_class
        .into_iter()
        .map(|(class, (hit, n))| ClassPck {
            class: class.to_owned(),
            pck: hit as f64 / n as f64,
            keypoints: n,
        })
        .collect();
    let keypoints: usize = per_class.iter().map(|c| c.keypoints).sum();
    let hits: f64 = per_class.iter().map(|c| c.pck * c.keypoints as f64).sum();
    PckReport {
        tau,
        mean: hits / keypoints as f64,
        class_mean: per_class.iter().map(|c| c.pck).sum::<f64>() / per_class.len() as f64,
        keypoints,
        per_class,
    }
}

/// Per-cell binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub shape: GridShape,
    pub values: Vec<bool>,
}

impl BinaryMask {
    /// Evaluates `f` at each cell's normalized position.
    pub fn from_fn(shape: GridShape, f: impl Fn(Point) -> bool) -> Self {
        Self {
            shape,
            values: shape.points().into_iter().map(f).collect(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.shape.w + col]
    }

    pub fn fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v).count() as f64 / self.values.len() as f64
    }
}

/// Mis-warp rates between foreground and background.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WarpConfusion {
    /// Source foreground cells landing on target background.
    pub fg_to_bg: f64,
    /// Source background cells landing on target foreground.
    pub bg_to_fg: f64,
}

/// Maps each source cell through `t` to the nearest target cell; cells
/// landing off the grid count as background.
pub fn warp_confusion(t: &GeometricTransform, source: &BinaryMask, target: &BinaryMask) -> Result<WarpConfusion> {
    if source.values.len() != source.shape.cells() || target.values.len() != target.shape.cells() {
        return Err(Error::Shape("mask values do not match their grid".into()));
    }
    if source.shape != target.shape {
        return Err(Error::Shape(format!(
            "source mask {}x{} against target mask {}x{}",
            source.shape.h, source.shape.w, target.shape.h, target.shape.w
        )));
    }
    let g = target.shape;
    let (mut fg, mut fg_bad, mut bg, mut bg_bad) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..source.shape.h {
        for j in 0..source.shape.w {
            let [x, y] = g.norm_to_grid(t.apply(source.shape.cell_to_norm(i, j)));
            let (c, r) = (x.round(), y.round());
            let lands_fg =
                c >= 0.0 && r >= 0.0 && (c as usize) < g.w && (r as usize) < g.h && target.get(r as usize, c as usize);
            if source.get(i, j) {
                fg += 1;
                fg_bad += usize::from(!lands_fg);
            } else {
                bg += 1;
                bg_bad += usize::from(lands_fg);
            }
        }
    }
    let rate = |bad: usize, n: usize| if n == 0 { 0.0 } else { bad as f64 / n as f64 };
    Ok(WarpConfusion {
        fg_to_bg: rate(fg_bad, fg),
        bg_to_fg: rate(bg_bad, bg),
    })
}

/// Mean `||T_BA(T_AB(p)) - p||` over the sample's source points.
pub fn forward_backward_error(t_ab: &GeometricTransform, t_ba: &GeometricTransform, sample: &CoordinateSample) -> f64 {
    let total: f64 = sample
        .a
        .iter()
        .map(|&p| {
            let r = t_ba.apply(t_ab.apply(p));
            (r[0] - p[0]).hypot(r[1] - p[1])
        })
        .sum();
    total / sample.a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AffineParams;

    #[test]
    fn pck_basics() {
        let gt = [[10.0, 10.0], [20.0, 5.0]];
        assert_eq!(pck(&gt, &gt, [50.0, 30.0], 0.1).unwrap(), 1.0);
        let far: Vec<Point> = gt.iter().map(|p| [p[0] + 10.0, p[1]]).collect();
        assert_eq!(pck(&far, &gt, [50.0, 30.0], 0.1).unwrap(), 0.0);
        // exactly on the threshold counts
        let edge: Vec<Point> = gt.iter().map(|p| [p[0] + 5.0, p[1]]).collect();
        assert_eq!(pck(&edge, &gt, [50.0, 30.0], 0.1).unwrap(), 1.0);
        assert!(pck(&gt[..1], &gt, [1.0, 1.0], 0.1).is_err());
    }

    fn record() -> KeypointPairRecord {
        KeypointPairRecord {
            source: "a b.ppm".into(),
            target: "c.ppm".into(),
            class: "cat".into(),
            source_box: [1.5, 2.0, 30.0, 40.25],
            target_box: [0.0, 0.0, 64.0, 64.0],
            keypoints: vec![([1.0, 2.0], [3.0, 4.0]), ([0.1, 0.2], [1e-7, 63.0])],
        }
    }

    #[test]
    fn dataset_roundtrip() {
        let rs = vec![record(), record()];
        assert_eq!(parse_dataset(&write_dataset(&rs)).unwrap(), rs);
        assert!(matches!(
            parse_dataset("a\tb\n"),
            Err(FormatError::Text { line: 1, .. })
        ));
    }

    #[test]
    fn pascal_csv() {
        let csv = "source_image,target_image,class,XA,YA,XB,YB\na.jpg,b.jpg,8,1;2,3;4,5;6,7;9\n";
        let r = convert_pf_pascal_csv(csv, |_| None).unwrap();
        assert_eq!(r[0].class, "cat");
        assert_eq!(r[0].keypoints, vec![([1.0, 3.0], [5.0, 7.0]), ([2.0, 4.0], [6.0, 9.0])]);
        assert_eq!(r[0].target_box, [5.0, 7.0, 1.0, 2.0]);
    }

    #[test]
    fn empty_records_rejected() {
        let r = evaluate_with(&[], &[0.1], BoxSide::Target, |_| unreachable!());
        assert!(r.is_err());
    }

    #[test]
    fn identity_warp_confusion() {
        let g = GridShape::new(4, 4);
        let m = BinaryMask::from_fn(g, |p| p[0] < 0.0);
        let c = warp_confusion(&GeometricTransform::identity(), &m, &m).unwrap();
        assert_eq!(c, WarpConfusion::default());
        let shift = GeometricTransform::Affine(AffineParams::translation(5.0, 0.0));
        assert_eq!(warp_confusion(&shift, &m, &m).unwrap().fg_to_bg, 1.0);
    }
}
