//! Snake gate detection.
//!
//! Random probes that land on the target color start a vertical walk along
//! a gate side bar, then horizontal walks along the top and bottom bars from
//! the two vertical endpoints. Candidates that span at least the minimum
//! length are boxed, their corners refined within small patches, and scored by
//! the fraction of target pixels along the refined polygon outline.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Pixel;
use crate::corpus::CorpusItem;
use crate::imaging::{classify_pixel, ColorBounds, ColorMask, GateLabel, Image};

/// Integer pixel `(x, y)`.
pub type PixelI = (i64, i64);

/// Target-color oracle used by the searches.
pub trait TargetTest {
    fn is_target(&self, x: i64, y: i64) -> bool;
}

impl TargetTest for ColorMask {
    #[inline]
    fn is_target(&self, x: i64, y: i64) -> bool {
        self.at(x, y)
    }
}

/// Classifies pixels on demand.
pub struct Classifier<'a> {
    pub img: &'a Image,
    pub bounds: &'a ColorBounds,
}

impl TargetTest for Classifier<'_> {
    #[inline]
    fn is_target(&self, x: i64, y: i64) -> bool {
        classify_pixel(self.img, x, y, self.bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Keep the best detection inside each merge radius.
    #[default]
    Radius,
    /// Keep only the single highest-fitness detection in the frame.
    BestOnly,
}

/// Corner estimate used by the last refinement pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CornerEstimate {
    /// Centroid of the target pixels in the patch. Biased toward the inside
    /// of the L that two bars form at a corner.
    Centroid,
    /// Count-weighted center of the densest columns and rows in the patch,
    /// which lie on the vertical and horizontal bars.
    #[default]
    BarProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxShape {
    /// Bounding box grown to a square on its longer side.
    #[default]
    Square,
    /// Plain axis-aligned bounding box.
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Minimum length threshold in pixels.
    pub sigma_l: f64,
    /// Color fitness threshold.
    pub sigma_cf: f64,
    pub max_samples: usize,
    pub seed: u64,
    pub refine_patch_frac: f64,
    /// Coarse-to-fine refinement passes per corner.
    pub refine_iterations: usize,
    pub corner_estimate: CornerEstimate,
    pub min_patch_px: f64,
    pub merge_radius_frac: f64,
    pub merge: MergeMode,
    pub box_shape: BoxShape,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            sigma_l: 25.0,
            sigma_cf: 0.5,
            max_samples: 512,
            seed: 0,
            refine_patch_frac: 0.4,
            refine_iterations: 2,
            corner_estimate: CornerEstimate::BarProfile,
            min_patch_px: 5.0,
            merge_radius_frac: 0.1,
            merge: MergeMode::Radius,
            box_shape: BoxShape::Square,
        }
    }
}

impl DetectorParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.sigma_l >= 1.0) {
            out.push(format!("detector.sigma_l must be >= 1 (got {})", self.sigma_l));
        }
        if !(0.0..=1.0).contains(&self.sigma_cf) {
            out.push(format!("detector.sigma_cf must lie in [0, 1] (got {})", self.sigma_cf));
        }
        if self.max_samples < 1 {
            out.push("detector.max_samples must be >= 1".into());
        }
        if !(self.refine_patch_frac > 0.0) {
            out.push("detector.refine_patch_frac must be > 0".into());
        }
        if !(self.merge_radius_frac >= 0.0) {
            out.push("detector.merge_radius_frac must be >= 0".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDetection {
    /// Snake endpoints P1 (top), P2 (bottom), P3 (from P1), P4 (from P2).
    pub raw: [Pixel; 4],
    /// Minimal box corners: top-left, top-right, bottom-left, bottom-right.
    pub square: [Pixel; 4],
    /// Refined corners in the same order as `square`.
    pub refined: [Pixel; 4],
    pub cf: f64,
}

impl GateDetection {
    /// Raw endpoints arranged top-left, top-right, bottom-left, bottom-right.
    pub fn raw_ordered(&self) -> [Pixel; 4] {
        let [p1, p2, p3, p4] = self.raw;
        let (tl, tr) = if p1.x <= p3.x { (p1, p3) } else { (p3, p1) };
        let (bl, br) = if p2.x <= p4.x { (p2, p4) } else { (p4, p2) };
        [tl, tr, bl, br]
    }

    pub fn centroid(&self) -> Pixel {
        self.refined.iter().sum::<Pixel>() / 4.0
    }

    /// Mean of the box width and height.
    pub fn size(&self) -> f64 {
        let w = self.square[1].x - self.square[0].x;
        let h = self.square[2].y - self.square[0].y;
        0.5 * (w + h)
    }
}

fn to_pixel(p: PixelI) -> Pixel {
    Pixel::new(p.0 as f64, p.1 as f64)
}

fn dist(a: PixelI, b: PixelI) -> f64 {
    ((a.0 - b.0) as f64).hypot((a.1 - b.1) as f64)
}

/// Walk from `p` in vertical direction `dy` preferring straight, then left,
/// then right diagonal neighbors.
fn walk_vertical<T: TargetTest>(t: &T, mut p: PixelI, dy: i64) -> PixelI {
    loop {
        let y = p.1 + dy;
        if t.is_target(p.0, y) {
            p.1 = y;
        } else if t.is_target(p.0 - 1, y) {
            p = (p.0 - 1, y);
        } else if t.is_target(p.0 + 1, y) {
            p = (p.0 + 1, y);
        } else {
            return p;
        }
    }
}

/// Horizontal mirror of [`walk_vertical`]: straight, then up, then down.
fn walk_horizontal<T: TargetTest>(t: &T, mut p: PixelI, dx: i64) -> PixelI {
    loop {
        let x = p.0 + dx;
        if t.is_target(x, p.1) {
            p.0 = x;
        } else if t.is_target(x, p.1 - 1) {
            p = (x, p.1 - 1);
        } else if t.is_target(x, p.1 + 1) {
            p = (x, p.1 + 1);
        } else {
            return p;
        }
    }
}

/// Top and bottom ends of the target-colored run through `p0`.
pub fn search_up_down<T: TargetTest>(t: &T, p0: PixelI) -> (PixelI, PixelI) {
    (walk_vertical(t, p0, -1), walk_vertical(t, p0, 1))
}

/// Left and right ends of the target-colored run through `p0`.
pub fn search_left_right<T: TargetTest>(t: &T, p0: PixelI) -> (PixelI, PixelI) {
    (walk_horizontal(t, p0, -1), walk_horizontal(t, p0, 1))
}

fn farther(from: PixelI, (a, b): (PixelI, PixelI)) -> PixelI {
    if dist(from, b) > dist(from, a) {
        b
    } else {
        a
    }
}

/// Box around the four snake endpoints, corners TL, TR, BL, BR.
pub fn minimal_square(points: &[PixelI; 4], shape: BoxShape) -> [Pixel; 4] {
    let xmin = points.iter().map(|p| p.0).min().unwrap() as f64;
    let xmax = points.iter().map(|p| p.0).max().unwrap() as f64;
    let ymin = points.iter().map(|p| p.1).min().unwrap() as f64;
    let ymax = points.iter().map(|p| p.1).max().unwrap() as f64;
    let (mut x0, mut x1, mut y0, mut y1) = (xmin, xmax, ymin, ymax);
    if shape == BoxShape::Square {
        let w = xmax - xmin;
        let h = ymax - ymin;
        if w < h {
            let grow = 0.5 * (h - w);
            x0 -= grow;
            x1 += grow;
        } else {
            let grow = 0.5 * (w - h);
            y0 -= grow;
            y1 += grow;
        }
    }
    [
        Pixel::new(x0, y0),
        Pixel::new(x1, y0),
        Pixel::new(x0, y1),
        Pixel::new(x1, y1),
    ]
}

/// Move each box corner to the target pixels in a square patch around it;
/// a corner whose patch holds no target pixel is kept as is. Each further
/// pass halves the patch and re-centres it on the previous estimate, so a
/// coarse first patch can reach a corner the box misses. Early passes use
/// the centroid; the last uses `params.corner_estimate`, and a bar profile
/// reuses the patch size of the pass before it.
pub fn refine_corners<T: TargetTest>(
    t: &T,
    square: &[Pixel; 4],
    params: &DetectorParams,
) -> [Pixel; 4] {
    let w = square[1].x - square[0].x;
    let h = square[2].y - square[0].y;
    let patch = (params.refine_patch_frac * w.max(h)).max(params.min_patch_px);
    let half = (0.5 * patch).floor();
    square.map(|s| {
        let mut c = s;
        let mut half = half;
        let mut prev = half;
        let passes = params.refine_iterations.max(1);
        for pass in 0..passes {
            // the profile needs the full bar width, so it keeps the previous patch size
            let next = match params.corner_estimate {
                CornerEstimate::BarProfile if pass + 1 == passes => patch_profile_corner(t, &c, prev),
                _ => patch_centroid(t, &c, half),
            };
            if let Some(next) = next {
                c = next;
            }
            prev = half;
            half = (0.5 * half).floor().max((0.5 * params.min_patch_px).floor());
        }
        c
    })
}

fn patch_centroid<T: TargetTest>(t: &T, center: &Pixel, half: f64) -> Option<Pixel> {
    let (x0, x1) = ((center.x - half).ceil() as i64, (center.x + half).floor() as i64);
    let (y0, y1) = ((center.y - half).ceil() as i64, (center.y + half).floor() as i64);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if t.is_target(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| Pixel::new(sx / n as f64, sy / n as f64))
}

fn patch_profile_corner<T: TargetTest>(t: &T, center: &Pixel, half: f64) -> Option<Pixel> {
    let (x0, x1) = ((center.x - half).ceil() as i64, (center.x + half).floor() as i64);
    let (y0, y1) = ((center.y - half).ceil() as i64, (center.y + half).floor() as i64);
    let mut cols = vec![0usize; (x1 - x0 + 1).max(0) as usize];
    let mut rows = vec![0usize; (y1 - y0 + 1).max(0) as usize];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if t.is_target(x, y) {
                cols[(x - x0) as usize] += 1;
                rows[(y - y0) as usize] += 1;
            }
        }
    }
    let peak_center = |counts: &[usize], origin: i64| -> Option<f64> {
        let max = *counts.iter().max()?;
        if max == 0 {
            return None;
        }
        let floor = 0.75 * max as f64;
        let (mut s, mut n) = (0.0, 0.0);
        for (i, &c) in counts.iter().enumerate() {
            if c as f64 >= floor {
                s += c as f64 * (origin + i as i64) as f64;
                n += c as f64;
            }
        }
        Some(s / n)
    };
    Some(Pixel::new(peak_center(&cols, x0)?, peak_center(&rows, y0)?))
}

/// Integer line from `a` toward `b` by error-accumulator stepping, excluding `b`.
pub fn raster_line(a: PixelI, b: PixelI) -> Vec<PixelI> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    while (x, y) != b {
        out.push((x, y));
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Pixels on the closed outline TL -> TR -> BR -> BL -> TL, each vertex once.
pub fn polygon_outline(corners: &[Pixel; 4]) -> Vec<PixelI> {
    let r = corners.map(|p| (p.x.round() as i64, p.y.round() as i64));
    let ring = [r[0], r[1], r[3], r[2]];
    (0..4)
        .flat_map(|i| raster_line(ring[i], ring[(i + 1) % 4]))
        .collect()
}

fn polygon_area(corners: &[Pixel; 4]) -> f64 {
    let ring = [corners[0], corners[1], corners[3], corners[2]];
    0.5 * (0..4)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % 4]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .abs()
}

/// Fraction of outline pixels classified as target; 0 for a degenerate polygon.
pub fn color_fitness<T: TargetTest>(t: &T, corners: &[Pixel; 4]) -> f64 {
    if polygon_area(corners) < 1.0 {
        return 0.0;
    }
    let outline = polygon_outline(corners);
    if outline.is_empty() {
        return 0.0;
    }
    let hits = outline.iter().filter(|p| t.is_target(p.0, p.1)).count();
    hits as f64 / outline.len() as f64
}

fn merge(mut dets: Vec<GateDetection>, params: &DetectorParams, width: u32) -> Vec<GateDetection> {
    // stable sort keeps probe order among equal fitness
    dets.sort_by(|a, b| b.cf.total_cmp(&a.cf));
    match params.merge {
        MergeMode::BestOnly => {
            dets.truncate(1);
            dets
        }
        MergeMode::Radius => {
            let radius = params.merge_radius_frac * width as f64;
            let mut kept: Vec<GateDetection> = Vec::new();
            for d in dets {
                let c = d.centroid();
                if kept.iter().all(|k| (k.centroid() - c).norm() > radius) {
                    kept.push(d);
                }
            }
            kept
        }
    }
}

/// Run snake gate detection on one frame. Deterministic in `params.seed`.
pub fn snake_gate_detect(
    img: &Image,
    params: &DetectorParams,
    bounds: &ColorBounds,
) -> Vec<GateDetection> {
    snake_gate_detect_mask(&ColorMask::new(img, bounds), params)
}

pub fn snake_gate_detect_mask(mask: &ColorMask, params: &DetectorParams) -> Vec<GateDetection> {
    if mask.width == 0 || mask.height == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut found = Vec::new();
    for _ in 0..params.max_samples {
        let p0 = (
            rng.random_range(0..mask.width as i64),
            rng.random_range(0..mask.height as i64),
        );
        if !mask.is_target(p0.0, p0.1) {
            continue;
        }
        let (p1, p2) = search_up_down(mask, p0);
        if dist(p1, p2) <= params.sigma_l {
            continue;
        }
        let p3 = farther(p1, search_left_right(mask, p1));
        let p4 = farther(p2, search_left_right(mask, p2));
        if !(dist(p1, p3) > params.sigma_l || dist(p2, p4) > params.sigma_l) {
            continue;
        }
        let raw = [p1, p2, p3, p4];
        let square = minimal_square(&raw, params.box_shape);
        let refined = refine_corners(mask, &square, params);
        let cf = color_fitness(mask, &refined);
        if cf > params.sigma_cf {
            found.push(GateDetection {
                raw: raw.map(to_pixel),
                square,
                refined,
                cf,
            });
        }
    }
    merge(found, params, mask.width)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    /// Moving-average window (columns).
    pub window: usize,
    /// Minimum distance between the two bar peaks (px).
    pub min_peak_separation: f64,
    /// Minimum smoothed count for a column to qualify as a peak.
    pub peak_min_count: f64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            window: 5,
            min_peak_separation: 16.0,
            peak_min_count: 10.0,
        }
    }
}

impl HistogramParams {
    /// Separation set to a quarter of the gate width seen from 1.5 m.
    pub fn for_camera(fx: f64, gate_side: f64) -> Self {
        Self {
            min_peak_separation: fx * gate_side / 1.5 / 4.0,
            ..Self::default()
        }
    }
}

/// Smoothed per-column count of target pixels.
pub fn column_histogram(mask: &ColorMask, window: usize) -> Vec<f64> {
    let w = mask.width as usize;
    let mut counts = vec![0.0; w];
    for (i, &m) in mask.mask.iter().enumerate() {
        if m {
            counts[i % w] += 1.0;
        }
    }
    let half = window.max(1) / 2;
    (0..w)
        .map(|c| {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(w - 1);
            counts[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Local maxima of a 1-D signal as `(column, height)`; plateaus report their center.
fn local_peaks(s: &[f64]) -> Vec<(f64, f64)> {
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let left = if i == 0 { f64::NEG_INFINITY } else { s[i - 1] };
        let right = if j + 1 == s.len() { f64::NEG_INFINITY } else { s[j + 1] };
        if s[i] > left && s[i] > right {
            peaks.push((0.5 * (i + j) as f64, s[i]));
        }
        i = j + 1;
    }
    peaks
}

/// Columns of the two side bars from the two dominant histogram peaks.
pub fn histogram_side_detect(
    img: &Image,
    bounds: &ColorBounds,
    params: &HistogramParams,
) -> Option<(f64, f64)> {
    histogram_side_detect_mask(&ColorMask::new(img, bounds), params)
}

pub fn histogram_side_detect_mask(mask: &ColorMask, params: &HistogramParams) -> Option<(f64, f64)> {
    if mask.width == 0 {
        return None;
    }
    let mut peaks: Vec<(f64, f64)> = local_peaks(&column_histogram(mask, params.window))
        .into_iter()
        .filter(|p| p.1 >= params.peak_min_count)
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let first = *peaks.first()?;
    let second = peaks
        .iter()
        .skip(1)
        .find(|p| (p.0 - first.0).abs() >= params.min_peak_separation)?;
    Some((first.0.min(second.0), first.0.max(second.0)))
}

/// Outcome of matching one frame's detections against its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    /// One flag per labeled gate, in label order.
    pub matched: Vec<bool>,
    pub false_positives: usize,
    /// Unmatched detections lying on a gate cut by the frame border; these
    /// count neither way.
    pub ignored: usize,
}

fn inside_label_box(p: &Pixel, l: &GateLabel) -> bool {
    let xs = l.corners.iter().map(|c| c.px.x);
    let ys = l.corners.iter().map(|c| c.px.y);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    (x0..=x1).contains(&p.x) && (y0..=y1).contains(&p.y)
}

/// Greedy matching: detections in fitness order each claim the nearest
/// unmatched gate (by worst corner distance) when every corner lies within
/// `match_tol` pixels. Leftover detections on a partly visible gate are
/// ignored rather than counted as false positives.
pub fn match_detections(dets: &[GateDetection], labels: &[GateLabel], match_tol: f64) -> ImageEval {
    let mut order: Vec<&GateDetection> = dets.iter().collect();
    order.sort_by(|a, b| b.cf.total_cmp(&a.cf));
    let mut matched = vec![false; labels.len()];
    let mut fps = 0;
    let mut ignored = 0;
    for d in order {
        let best = labels
            .iter()
            .enumerate()
            .filter(|(i, _)| !matched[*i])
            .map(|(i, l)| {
                let worst = (0..4)
                    .map(|k| (d.refined[k] - l.corners[k].px).norm())
                    .fold(0.0, f64::max);
                (i, worst)
            })
            .filter(|(_, w)| w.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, w)) if w <= match_tol => matched[i] = true,
            _ if labels
                .iter()
                .any(|l| !l.fully_visible() && inside_label_box(&d.centroid(), l)) =>
            {
                ignored += 1
            }
            _ => fps += 1,
        }
    }
    ImageEval {
        matched,
        false_positives: fps,
        ignored,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocRow {
    pub sigma_l: f64,
    pub sigma_cf: f64,
    /// `None` when the corpus holds no labeled gate.
    pub tpr: Option<f64>,
    pub fp_per_image: f64,
}

pub const ROC_CSV_HEADER: &str = "sigma_L,sigma_cf,tpr,fp_per_image";

/// Frame seed for a given repeat and image index.
pub fn frame_seed(base: u64, repeat: usize, image: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((repeat as u64) << 32)
        ^ image as u64
}

/// Per-image evaluations for every repeat, in corpus order.
pub fn evaluate_corpus(
    corpus: &[CorpusItem],
    params: &DetectorParams,
    bounds: &ColorBounds,
    repeats: usize,
    match_tol: f64,
) -> Vec<Vec<ImageEval>> {
    let masks: Vec<ColorMask> = corpus
        .par_iter()
        .map(|item| ColorMask::new(&item.image, bounds))
        .collect();
    (0..repeats)
        .map(|r| {
            masks
                .par_iter()
                .zip(corpus)
                .enumerate()
                .map(|(i, (mask, item))| {
                    let p = DetectorParams {
                        seed: frame_seed(params.seed, r, i),
                        ..*params
                    };
                    match_detections(&snake_gate_detect_mask(mask, &p), &item.labels, match_tol)
                })
                .collect()
        })
        .collect()
}

/// Sweep `sigma_ls x sigma_cfs` over the corpus, averaging `repeats` runs
/// with distinct seeds.
pub fn evaluate_roc(
    corpus: &[CorpusItem],
    sigma_ls: &[f64],
    sigma_cfs: &[f64],
    repeats: usize,
    base: &DetectorParams,
    bounds: &ColorBounds,
    match_tol: f64,
) -> Vec<RocRow> {
    let mut rows = Vec::new();
    for &sl in sigma_ls {
        for &scf in sigma_cfs {
            let params = DetectorParams {
                sigma_l: sl,
                sigma_cf: scf,
                ..*base
            };
            let evals = evaluate_corpus(corpus, &params, bounds, repeats, match_tol);
            let (mut tp, mut total, mut fps) = (0usize, 0usize, 0usize);
            for run in &evals {
                for e in run {
                    tp += e.matched.iter().filter(|m| **m).count();
                    total += e.matched.len();
                    fps += e.false_positives;
                }
            }
            let frames = (corpus.len() * repeats).max(1);
            rows.push(RocRow {
                sigma_l: sl,
                sigma_cf: scf,
                tpr: (total > 0).then(|| tp as f64 / total as f64),
                fp_per_image: fps as f64 / frames as f64,
            });
        }
    }
    rows
}

pub fn write_roc_csv<W: Write>(rows: &[RocRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{ROC_CSV_HEADER}")?;
    for r in rows {
        let tpr = r.tpr.map_or_else(|| "NaN".to_string(), |t| format!("{t:.6}"));
        writeln!(w, "{},{},{},{:.6}", r.sigma_l, r.sigma_cf, tpr, r.fp_per_image)?;
    }
    Ok(())
}

/// Hit count for clean gates within one distance bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub gates: usize,
    pub hits: usize,
}

impl DistanceBin {
    pub fn tpr(&self) -> Option<f64> {
        (self.gates > 0).then(|| self.hits as f64 / self.gates as f64)
    }
}

pub const DISTANCE_CSV_HEADER: &str = "distance_lo,distance_hi,gates,hits,tpr";

/// Detection rate on clean gates (every corner in frame, no glare), binned
/// by camera distance over `edges`. Gates outside the edges are skipped.
/// `evals` holds one evaluation list per repeat, as from [`evaluate_corpus`].
pub fn clean_tpr_by_distance(
    corpus: &[CorpusItem],
    evals: &[Vec<ImageEval>],
    edges: &[f64],
) -> Vec<DistanceBin> {
    let mut bins: Vec<DistanceBin> = edges
        .windows(2)
        .map(|w| DistanceBin {
            lo: w[0],
            hi: w[1],
            gates: 0,
            hits: 0,
        })
        .collect();
    for run in evals {
        for (item, e) in corpus.iter().zip(run) {
            for (label, &hit) in item.labels.iter().zip(&e.matched) {
                let Some(meta) = item.gate_meta(label.gate_id) else {
                    continue;
                };
                if !label.fully_visible() || meta.glare {
                    continue;
                }
                if let Some(b) = bins
                    .iter_mut()
                    .find(|b| meta.distance >= b.lo && meta.distance < b.hi)
                {
                    b.gates += 1;
                    b.hits += hit as usize;
                }
            }
        }
    }
    bins
}

pub fn write_distance_csv<W: Write>(bins: &[DistanceBin], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{DISTANCE_CSV_HEADER}")?;
    for b in bins {
        let tpr = b.tpr().map_or_else(|| "NaN".to_string(), |t| format!("{t:.6}"));
        writeln!(w, "{},{},{},{},{}", b.lo, b.hi, b.gates, b.hits, tpr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Boolean grid target oracle for hand-built shapes.
    struct Grid {
        w: i64,
        h: i64,
        cells: Vec<bool>,
    }

    impl Grid {
        fn new(w: i64, h: i64) -> Self {
            Self {
                w,
                h,
                cells: vec![false; (w * h) as usize],
            }
        }
        fn set(&mut self, x: i64, y: i64) {
            self.cells[(y * self.w + x) as usize] = true;
        }
    }

    impl TargetTest for Grid {
        fn is_target(&self, x: i64, y: i64) -> bool {
            x >= 0 && y >= 0 && x < self.w && y < self.h && self.cells[(y * self.w + x) as usize]
        }
    }

    #[test]
    fn isolated_pixel_is_its_own_endpoint() {
        let mut g = Grid::new(20, 20);
        g.set(5, 5);
        assert_eq!(search_up_down(&g, (5, 5)), ((5, 5), (5, 5)));
        assert_eq!(search_left_right(&g, (5, 5)), ((5, 5), (5, 5)));
    }

    #[test]
    fn vertical_strip() {
        let mut g = Grid::new(20, 60);
        for y in 10..=40 {
            g.set(7, y);
        }
        assert_eq!(search_up_down(&g, (7, 25)), ((7, 10), (7, 40)));
    }

    #[test]
    fn horizontal_strip() {
        let mut g = Grid::new(40, 20);
        for x in 3..=30 {
            g.set(x, 12);
        }
        assert_eq!(search_left_right(&g, (15, 12)), ((3, 12), (30, 12)));
    }

    #[test]
    fn diagonal_strip_is_followed() {
        // (2,2) (3,3) (4,4) (5,5) (6,6): down steps take the down-right branch
        let mut g = Grid::new(10, 10);
        for i in 2..=6 {
            g.set(i, i);
        }
        assert_eq!(search_up_down(&g, (4, 4)), ((2, 2), (6, 6)));
    }

    #[test]
    fn l_shape_followed_while_forward_neighbor_exists() {
        // horizontal run (2..=4, 5) then a step up to (5, 4) and (6, 4), then a
        // vertical drop at column 6 that has no forward neighbor
        let mut g = Grid::new(12, 12);
        for (x, y) in [(2, 5), (3, 5), (4, 5), (5, 4), (6, 4), (6, 5)] {
            g.set(x, y);
        }
        // from (6,4) straight right (7,4), up-right (7,3), down-right (7,5) are empty
        assert_eq!(search_left_right(&g, (2, 5)).1, (6, 4));
    }

    #[test]
    fn searches_stop_at_image_border() {
        let mut g = Grid::new(5, 5);
        for y in 0..5 {
            g.set(2, y);
        }
        assert_eq!(search_up_down(&g, (2, 2)), ((2, 0), (2, 4)));
    }

    #[test]
    fn refine_full_patch_keeps_corner() {
        let mut g = Grid::new(100, 100);
        for y in 0..100 {
            for x in 0..100 {
                g.set(x, y);
            }
        }
        let sq = [
            Pixel::new(20.0, 20.0),
            Pixel::new(70.0, 20.0),
            Pixel::new(20.0, 70.0),
            Pixel::new(70.0, 70.0),
        ];
        let r = refine_corners(&g, &sq, &DetectorParams::default());
        assert_eq!(r, sq);
    }

    #[test]
    fn refine_shifts_toward_target_half() {
        let mut g = Grid::new(100, 100);
        for y in 0..100 {
            for x in 0..20 {
                g.set(x, y);
            }
        }
        let sq = [
            Pixel::new(20.0, 20.0),
            Pixel::new(70.0, 20.0),
            Pixel::new(20.0, 70.0),
            Pixel::new(70.0, 70.0),
        ];
        let r = refine_corners(&g, &sq, &DetectorParams::default());
        assert!(r[0].x < 20.0);
        assert_eq!(r[1], sq[1], "empty patch keeps the corner");
    }

    /// Square outline with 6 px bars whose centerlines meet at (30, 30), (70, 70).
    fn outlined_square() -> Grid {
        let mut g = Grid::new(100, 100);
        for y in 27..=73 {
            for x in 27..=73 {
                let on_bar = x <= 32 || x >= 68 || y <= 32 || y >= 68;
                if on_bar {
                    g.set(x, y);
                }
            }
        }
        g
    }

    #[test]
    fn bar_profile_lands_on_centerline_corner() {
        let g = outlined_square();
        let sq = [
            Pixel::new(27.0, 27.0),
            Pixel::new(73.0, 27.0),
            Pixel::new(27.0, 73.0),
            Pixel::new(73.0, 73.0),
        ];
        let truth = [(29.5, 29.5), (70.5, 29.5), (29.5, 70.5), (70.5, 70.5)];
        let profile = refine_corners(&g, &sq, &DetectorParams::default());
        let centroid = refine_corners(
            &g,
            &sq,
            &DetectorParams {
                corner_estimate: CornerEstimate::Centroid,
                ..DetectorParams::default()
            },
        );
        for ((p, c), (tx, ty)) in profile.iter().zip(&centroid).zip(truth) {
            let t = Pixel::new(tx, ty);
            assert!((p - t).norm() < 0.5, "{p:?} vs {t:?}");
            assert!((c - t).norm() > (p - t).norm(), "centroid {c:?} should sit inside the L");
        }
    }

    #[test]
    fn raster_line_is_connected_and_excludes_end() {
        let l = raster_line((0, 0), (7, 3));
        assert_eq!(l.len(), 7);
        assert_eq!(l[0], (0, 0));
        for w in l.windows(2) {
            assert!((w[1].0 - w[0].0).abs() <= 1 && (w[1].1 - w[0].1).abs() <= 1);
        }
        assert!(raster_line((3, 3), (3, 3)).is_empty());
    }

    fn frame(g: &mut Grid, x0: i64, y0: i64, x1: i64, y1: i64, bottom: bool) {
        for y in y0..=y1 {
            g.set(x0, y);
            g.set(x1, y);
        }
        for x in x0..=x1 {
            g.set(x, y0);
            if bottom {
                g.set(x, y1);
            }
        }
    }

    #[test]
    fn fitness_full_frame_and_background() {
        let mut g = Grid::new(60, 60);
        frame(&mut g, 10, 10, 50, 50, true);
        let poly = [
            Pixel::new(10.0, 10.0),
            Pixel::new(50.0, 10.0),
            Pixel::new(10.0, 50.0),
            Pixel::new(50.0, 50.0),
        ];
        assert_eq!(color_fitness(&g, &poly), 1.0);
        assert_eq!(color_fitness(&Grid::new(60, 60), &poly), 0.0);
    }

    #[test]
    fn fitness_missing_bottom_edge() {
        let mut g = Grid::new(60, 60);
        frame(&mut g, 10, 10, 50, 50, false);
        let poly = [
            Pixel::new(10.0, 10.0),
            Pixel::new(50.0, 10.0),
            Pixel::new(10.0, 50.0),
            Pixel::new(50.0, 50.0),
        ];
        // oracle: 160 outline pixels, the bottom edge contributes 40 of them
        // of which only its start vertex (50, 50) lies on the right bar
        let outline = polygon_outline(&poly);
        assert_eq!(outline.len(), 160);
        let expected = (160.0 - 39.0) / 160.0;
        let cf = color_fitness(&g, &poly);
        assert!((cf - expected).abs() < 1e-12);
        assert!((cf - 0.75).abs() <= 0.05);
    }

    #[test]
    fn fitness_degenerate_polygon_is_zero() {
        let mut g = Grid::new(20, 20);
        for x in 0..20 {
            g.set(x, 5);
        }
        let p = Pixel::new(3.0, 5.0);
        let q = Pixel::new(15.0, 5.0);
        assert_eq!(color_fitness(&g, &[p, q, p, q]), 0.0);
    }

    #[test]
    fn minimal_square_grows_short_side() {
        let sq = minimal_square(&[(10, 0), (10, 40), (30, 0), (30, 40)], BoxShape::Square);
        assert_eq!(sq[0], Pixel::new(0.0, 0.0));
        assert_eq!(sq[3], Pixel::new(40.0, 40.0));
        let rect = minimal_square(&[(10, 0), (10, 40), (30, 0), (30, 40)], BoxShape::Rectangle);
        assert_eq!(rect[0], Pixel::new(10.0, 0.0));
    }

    fn bar_image(cols: &[i64], w: u32, h: u32) -> Image {
        let b = ColorBounds::default();
        let mut img = Image::filled(w, h, [90, 90, 90]);
        for &c in cols {
            img.fill_rect(c - 2, 40, c + 3, 200, b.midpoint_rgb());
        }
        img
    }

    #[test]
    fn histogram_two_bars() {
        let img = bar_image(&[30, 120], 160, 350);
        let (l, r) =
            histogram_side_detect(&img, &ColorBounds::default(), &HistogramParams::default())
                .unwrap();
        assert!((l - 30.0).abs() <= 2.0 && (r - 120.0).abs() <= 2.0, "{l} {r}");
    }

    #[test]
    fn histogram_needs_two_peaks() {
        let b = ColorBounds::default();
        let p = HistogramParams::default();
        assert!(histogram_side_detect(&bar_image(&[], 160, 350), &b, &p).is_none());
        assert!(histogram_side_detect(&bar_image(&[70], 160, 350), &b, &p).is_none());
    }

    #[test]
    fn blank_image_has_no_detection() {
        let img = Image::filled(160, 350, [90, 90, 90]);
        assert!(snake_gate_detect(&img, &DetectorParams::default(), &ColorBounds::default())
            .is_empty());
    }

    #[test]
    fn small_blob_is_rejected() {
        let b = ColorBounds::default();
        let mut img = Image::filled(160, 350, [90, 90, 90]);
        img.fill_rect(60, 100, 65, 105, b.midpoint_rgb());
        let params = DetectorParams {
            max_samples: 20_000,
            ..DetectorParams::default()
        };
        assert!(snake_gate_detect(&img, &params, &b).is_empty());
    }

    #[test]
    fn roc_csv_flags_undefined_tpr() {
        let rows = vec![RocRow {
            sigma_l: 25.0,
            sigma_cf: 0.5,
            tpr: None,
            fp_per_image: 0.0,
        }];
        let mut out = Vec::new();
        write_roc_csv(&rows, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "sigma_L,sigma_cf,tpr,fp_per_image\n25,0.5,NaN,0.000000\n");
    }
}
