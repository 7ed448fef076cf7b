//! Deterministic generator of cephalogram-like test scenes: a dark
//! radiograph background with a soft head profile, a bright near-vertical
//! calibrated ruler with minor (1 mm) and major (5 mm) marks, optional
//! tag / sticker / stain interference, an illumination gradient and
//! Gaussian noise. Every scene carries exact ground-truth annotations, so
//! the generator doubles as the annotator for training and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::save_png;
use crate::seed::mix;

/// Corner-to-corner length of the ruler body along its edge, millimeters.
pub const BODY_MM: f64 = 50.0;
/// Distance between the first and the tenth major mark, millimeters.
pub const SPAN_MM: f64 = 45.0;
/// End marks sit this far inside the body ends.
pub const INSET_MM: f64 = 2.5;
/// Bar width, millimeters.
pub const WIDTH_MM: f64 = 4.0;

const MAJOR_STROKE_MM: f64 = 0.5;
const MINOR_STROKE_MM: f64 = 0.35;
/// Mark lengths as fractions of the bar width.
const MAJOR_EXTENT: f64 = 0.60;
const MINOR_EXTENT: f64 = 0.18;

const BG: f64 = 26.0;
const RULER: f64 = 206.0;
const MARK: f64 = 66.0;
const TAG: f64 = 232.0;
const STICKER: f64 = 238.0;
const STAIN: f64 = 96.0;

const LAYOUT_TAG: u64 = 0x4c41_594f;
const NOISE_TAG: u64 = 0x4e4f_4953;
const CORPUS_TAG: u64 = 0x434f_5250;
const SCENE_TAG: u64 = 0x5343_454e;

/// Everything needed to render one scene. Placement of the interference
/// elements is drawn deterministically from `seed`, independent of the
/// noise stream, so toggling the flags leaves the rest of the scene
/// byte-identical.
#[derive(Debug, Clone)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Millimeters per pixel in this image.
    pub pmr_mm_per_px: f64,
    /// Incline of the ruler's long edge (Hough angle convention; 0 is
    /// vertical, positive leans the top to the right).
    pub incline_deg: f64,
    /// Lower-left corner of the ruler body.
    pub lower_corner: (f64, f64),
    pub tag: bool,
    pub sticker: bool,
    pub stain: bool,
    pub illumination_amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneParams {
    /// Same physical scene rendered at `factor` times the resolution.
    pub fn scaled(&self, factor: f64) -> SceneParams {
        SceneParams {
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
            pmr_mm_per_px: self.pmr_mm_per_px / factor,
            lower_corner: (self.lower_corner.0 * factor, self.lower_corner.1 * factor),
            ..self.clone()
        }
    }

    fn body_px(&self) -> f64 {
        BODY_MM / self.pmr_mm_per_px
    }

    fn width_px(&self) -> f64 {
        WIDTH_MM / self.pmr_mm_per_px
    }
}

/// Exact scene annotations; plays the role of the manual annotator.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Upper-left body corner.
    pub upper: (f64, f64),
    /// Lower-left body corner.
    pub lower: (f64, f64),
    /// Major mark positions on the left edge, lowest (loc1) first.
    pub majors: Vec<(f64, f64)>,
    /// Minor mark positions on the left edge.
    pub minors: Vec<(f64, f64)>,
    pub pmr_true: f64,
    pub scale_width_px: f64,
}

impl GroundTruth {
    pub fn loc1(&self) -> (f64, f64) {
        self.majors[0]
    }

    pub fn loc10(&self) -> (f64, f64) {
        self.majors[9]
    }
}

struct InterferenceLayout {
    // tag: along-axis anchor (fraction of body), gap and width in bar
    // widths, height as fraction of body
    tag_u: f64,
    tag_gap: f64,
    tag_w: f64,
    tag_h: f64,
    // sticker: disc in ruler coordinates
    sticker_gap_index: usize,
    sticker_jitter: f64,
    sticker_v: f64,
    sticker_r: f64,
    // stains: (gap index, jitter within gap, u sigma px)
    stains: Vec<(usize, f64, f64)>,
}

fn draw_layout(seed: u64) -> InterferenceLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, LAYOUT_TAG, 0));
    let tag_u = rng.random_range(0.70..0.88);
    let tag_gap = rng.random_range(0.5..0.9);
    let tag_w = rng.random_range(0.7..1.1);
    let tag_h = rng.random_range(0.10..0.16);
    let sticker_gap_index = rng.random_range(2..7usize);
    let sticker_jitter = rng.random_range(-0.08..0.08);
    let sticker_v = rng.random_range(0.70..1.00);
    let sticker_r = rng.random_range(0.22..0.35);
    let n_stains = rng.random_range(1..3usize);
    let mut stains = Vec::new();
    for _ in 0..n_stains {
        let gap = rng.random_range(1..8usize);
        let jitter = rng.random_range(-0.20..0.20);
        let sigma = rng.random_range(1.8..3.0);
        stains.push((gap, jitter, sigma));
    }
    InterferenceLayout {
        tag_u,
        tag_gap,
        tag_w,
        tag_h,
        sticker_gap_index,
        sticker_jitter,
        sticker_v,
        sticker_r,
        stains,
    }
}

// 1-px linear anti-aliasing ramp for the interval [lo, hi].
#[inline]
fn interval_cov(t: f64, lo: f64, hi: f64) -> f64 {
    ((t - lo).min(hi - t) + 0.5).clamp(0.0, 1.0)
}

/// Renders a scene and returns the image together with its ground truth.
pub fn generate_image(params: &SceneParams) -> Result<(GrayImage, GroundTruth)> {
    let w = params.width;
    let h = params.height;
    if w < 64 || h < 64 {
        return Err(Error::InvalidParam(format!("scene {w}x{h} too small")));
    }
    let pmr = params.pmr_mm_per_px;
    if pmr <= 0.0 {
        return Err(Error::InvalidParam("pmr must be positive".into()));
    }
    let body = params.body_px();
    let bar_w = params.width_px();
    let mm = 1.0 / pmr;
    let theta = params.incline_deg.to_radians();
    // unit vector along the edge pointing up, and unit normal pointing
    // into the bar (rightward)
    let axis = (theta.sin(), -theta.cos());
    let normal = (theta.cos(), theta.sin());
    let lower = params.lower_corner;
    let point_at = |u: f64, v: f64| -> (f64, f64) {
        (
            lower.0 + u * axis.0 + v * normal.0,
            lower.1 + u * axis.1 + v * normal.1,
        )
    };

    // the scale itself (with tracing slack) must be inside the image
    for (u, v) in [
        (-14.0, -2.0),
        (body + 14.0, -2.0),
        (-14.0, bar_w + 2.0),
        (body + 14.0, bar_w + 2.0),
    ] {
        let p = point_at(u, v);
        if p.0 < 0.0 || p.1 < 0.0 || p.0 >= w as f64 || p.1 >= h as f64 {
            return Err(Error::InvalidParam(format!(
                "scale out of bounds at ({:.1}, {:.1}) in {w}x{h} scene",
                p.0, p.1
            )));
        }
    }

    let layout = draw_layout(params.seed);
    let inset = INSET_MM * mm;

    // background: base + two soft gaussians (head profile) + vertical
    // illumination gradient; all separable so rows/columns precompute
    let mid = point_at(body * 0.5, bar_w * 0.5);
    let blob1 = (mid.0 + 0.22 * w as f64, mid.1 + 0.03 * h as f64);
    let sig1 = 0.20 * w as f64;
    let blob2 = (mid.0 + 0.12 * w as f64, mid.1 + 0.20 * h as f64);
    let sig2 = 0.11 * w as f64;
    let gauss_axis = |n: usize, c: f64, sig: f64| -> Vec<f64> {
        (0..n)
            .map(|i| (-((i as f64 - c) * (i as f64 - c)) / (2.0 * sig * sig)).exp())
            .collect()
    };
    let b1x = gauss_axis(w, blob1.0, sig1);
    let b1y = gauss_axis(h, blob1.1, sig1);
    let b2x = gauss_axis(w, blob2.0, sig2);
    let b2y = gauss_axis(h, blob2.1, sig2);
    let illum: Vec<f64> = (0..h)
        .map(|y| params.illumination_amplitude * (2.0 * y as f64 / (h - 1) as f64 - 1.0))
        .collect();

    let mut img = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = BG + 58.0 * b1x[x] * b1y[y] + 30.0 * b2x[x] * b2y[y] + illum[y];
            img.set(x, y, v as f32);
        }
    }

    // ruler bar with marks, stain, sticker, tag — rendered only inside a
    // bounding box around the affected area
    let gap_px = 5.0 * mm;
    let major_stroke = MAJOR_STROKE_MM * mm;
    let minor_stroke = MINOR_STROKE_MM * mm;
    let sticker_u = inset + (layout.sticker_gap_index as f64 + 0.5 + layout.sticker_jitter) * gap_px;
    let sticker_v = layout.sticker_v * bar_w;
    let sticker_r = layout.sticker_r * bar_w;
    let tag_center = point_at(
        layout.tag_u * body,
        -(layout.tag_gap + 0.5 * layout.tag_w) * bar_w,
    );
    let tag_half_w = 0.5 * layout.tag_w * bar_w;
    let tag_half_h = 0.5 * layout.tag_h * body;
    let stains: Vec<(f64, f64)> = layout
        .stains
        .iter()
        .map(|&(gap, jitter, sigma)| (inset + (gap as f64 + 0.5 + jitter) * gap_px, sigma))
        .collect();

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut include = |p: (f64, f64)| {
        x_min = x_min.min(p.0);
        x_max = x_max.max(p.0);
        y_min = y_min.min(p.1);
        y_max = y_max.max(p.1);
    };
    for (u, v) in [
        (0.0, 0.0),
        (body, 0.0),
        (0.0, bar_w),
        (body, bar_w),
        (sticker_u, sticker_v + sticker_r + 2.0),
    ] {
        include(point_at(u, v));
    }
    if params.tag {
        include((tag_center.0 - tag_half_w, tag_center.1 - tag_half_h));
        include((tag_center.0 + tag_half_w, tag_center.1 + tag_half_h));
    }
    let x0 = (x_min - 4.0).floor().max(0.0) as usize;
    let y0 = (y_min - 4.0).floor().max(0.0) as usize;
    let x1 = ((x_max + 4.0).ceil() as usize).min(w - 1);
    let y1 = ((y_max + 4.0).ceil() as usize).min(h - 1);

    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - lower.0;
            let dy = y as f64 - lower.1;
            let u = dx * axis.0 + dy * axis.1;
            let v = dx * normal.0 + dy * normal.1;
            let mut out = img.get(x, y) as f64;

            let bar_cov = interval_cov(u, 0.0, body) * interval_cov(v, 0.0, bar_w);
            if bar_cov > 0.0 {
                let mut val = RULER + illum[y];
                // nearest mark tick (1 mm raster, majors at multiples of 5)
                let j = ((u - inset) / mm).round();
                if (0.0..=44.0).contains(&j) {
                    let idx = j as i64;
                    let u_m = inset + j * mm;
                    let (extent, stroke) = if idx % 5 == 0 {
                        (MAJOR_EXTENT, major_stroke)
                    } else {
                        (MINOR_EXTENT, minor_stroke)
                    };
                    let cu = (0.5 * stroke - (u - u_m).abs() + 0.5).clamp(0.0, 1.0);
                    let cv = (extent * bar_w - v + 0.5).clamp(0.0, 1.0);
                    let tick = cu * cv;
                    val += (MARK + illum[y] - val) * tick;
                }
                if params.stain {
                    for &(u_s, sigma) in &stains {
                        let du = (u - u_s) / sigma;
                        let dv = (v - 0.38 * bar_w) / (0.30 * bar_w);
                        let d = (du * du + dv * dv).sqrt();
                        let cov = ((1.2 - d) * 2.5).clamp(0.0, 1.0);
                        val += (STAIN + illum[y] - val) * cov;
                    }
                }
                out += (val - out) * bar_cov;
            }

            if params.sticker {
                let d = ((u - sticker_u).powi(2) + (v - sticker_v).powi(2)).sqrt();
                let cov = (sticker_r - d + 0.5).clamp(0.0, 1.0);
                out += (STICKER + illum[y] - out) * cov;
            }
            if params.tag {
                let cov = interval_cov(x as f64, tag_center.0 - tag_half_w, tag_center.0 + tag_half_w)
                    * interval_cov(y as f64, tag_center.1 - tag_half_h, tag_center.1 + tag_half_h);
                out += (TAG + illum[y] - out) * cov;
            }
            img.set(x, y, out as f32);
        }
    }

    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, NOISE_TAG, 0));
        let normal = Normal::new(0.0f32, params.noise_sigma as f32)
            .map_err(|e| Error::InvalidParam(format!("noise sigma: {e}")))?;
        for y in 0..h {
            for x in 0..w {
                let v = img.get(x, y) + normal.sample(&mut rng);
                img.set(x, y, v.clamp(0.0, 255.0));
            }
        }
    }

    let majors: Vec<(f64, f64)> = (0..10)
        .map(|k| point_at(inset + k as f64 * gap_px, 0.0))
        .collect();
    let minors: Vec<(f64, f64)> = (1..45)
        .filter(|j| j % 5 != 0)
        .map(|j| point_at(inset + j as f64 * mm, 0.0))
        .collect();
    let truth = GroundTruth {
        upper: point_at(body, 0.0),
        lower,
        majors,
        minors,
        pmr_true: pmr,
        scale_width_px: bar_w,
    };
    Ok((img, truth))
}

/// Ranges from which corpus scenes are drawn.
#[derive(Debug, Clone)]
pub struct CorpusRanges {
    pub width_px: (usize, usize),
    pub aspect: (f64, f64),
    pub pmr: (f64, f64),
    pub incline_deg: (f64, f64),
    pub interference_prob: f64,
    pub noise_sigma: (f64, f64),
    pub illumination: (f64, f64),
}

impl Default for CorpusRanges {
    fn default() -> Self {
        CorpusRanges {
            width_px: (758, 2690),
            aspect: (1.20, 1.35),
            pmr: (0.07, 0.12),
            incline_deg: (-3.0, 3.0),
            interference_prob: 0.3,
            noise_sigma: (1.0, 3.5),
            illumination: (0.0, 22.0),
        }
    }
}

/// Draws `n` scene parameter sets; images are rendered on demand via
/// [`generate_image`].
pub fn draw_corpus(n: usize, seed: u64, ranges: &CorpusRanges) -> Vec<(String, SceneParams)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, CORPUS_TAG, i as u64));
            let width = rng.random_range(ranges.width_px.0..=ranges.width_px.1);
            let aspect = rng.random_range(ranges.aspect.0..ranges.aspect.1);
            let height = (width as f64 * aspect).round() as usize;
            // the body (with top/bottom placement margins) must fit the frame
            let pmr_floor = BODY_MM / (0.58 * height as f64);
            let pmr_lo = ranges.pmr.0.max(pmr_floor);
            let pmr_hi = ranges.pmr.1.max(pmr_lo + 1e-6);
            let pmr = rng.random_range(pmr_lo..pmr_hi);
            let incline = rng.random_range(ranges.incline_deg.0..ranges.incline_deg.1);
            let x = rng.random_range(0.13..0.19) * width as f64;
            let y = rng.random_range(0.62..0.70) * height as f64;
            let tag = rng.random_bool(ranges.interference_prob);
            let sticker = rng.random_bool(ranges.interference_prob);
            let stain = rng.random_bool(ranges.interference_prob);
            let illumination = rng.random_range(ranges.illumination.0..=ranges.illumination.1);
            let noise = rng.random_range(ranges.noise_sigma.0..=ranges.noise_sigma.1);
            let params = SceneParams {
                width,
                height,
                pmr_mm_per_px: pmr,
                incline_deg: incline,
                lower_corner: (x, y),
                tag,
                sticker,
                stain,
                illumination_amplitude: illumination,
                noise_sigma: noise,
                seed: mix(seed, SCENE_TAG, i as u64),
            };
            (format!("img{i:04}"), params)
        })
        .collect()
}

/// Per-image annotation row, mirroring the manual protocol: the two body
/// corners and the first/tenth major mark, in original image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: String,
    pub upper: (f64, f64),
    pub lower: (f64, f64),
    pub loc1: (f64, f64),
    pub loc10: (f64, f64),
    pub pmr_true: f64,
    pub incline_deg: f64,
}

impl Annotation {
    pub fn from_truth(id: &str, truth: &GroundTruth, incline_deg: f64) -> Self {
        Annotation {
            id: id.to_string(),
            upper: truth.upper,
            lower: truth.lower,
            loc1: truth.loc1(),
            loc10: truth.loc10(),
            pmr_true: truth.pmr_true,
            incline_deg,
        }
    }

    /// Annotated calibration length in pixels.
    pub fn mark_span_px(&self) -> f64 {
        let dx = self.loc1.0 - self.loc10.0;
        let dy = self.loc1.1 - self.loc10.1;
        (dx * dx + dy * dy).sqrt()
    }
}

const ANNOTATION_HEADER: &str =
    "id,upper_x,upper_y,lower_x,lower_y,loc1_x,loc1_y,loc10_x,loc10_y,pmr_true,incline_deg";

pub fn write_annotations(annotations: &[Annotation], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(ANNOTATION_HEADER);
    out.push('\n');
    for a in annotations {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.id,
            a.upper.0,
            a.upper.1,
            a.lower.0,
            a.lower.1,
            a.loc1.0,
            a.loc1.1,
            a.loc10.0,
            a.loc10.1,
            a.pmr_true,
            a.incline_deg
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim() == ANNOTATION_HEADER => {}
        _ => return Err(Error::Format("bad annotations header".into())),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Format(format!(
                "annotations line {}: expected 11 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("annotations line {}: bad number", lineno + 2)))
        };
        out.push(Annotation {
            id: fields[0].trim().to_string(),
            upper: (num(1)?, num(2)?),
            lower: (num(3)?, num(4)?),
            loc1: (num(5)?, num(6)?),
            loc10: (num(7)?, num(8)?),
            pmr_true: num(9)?,
            incline_deg: num(10)?,
        });
    }
    Ok(out)
}

/// Writes `n` rendered scenes plus `annotations.csv` and a train/test
/// `split.csv` (first half train) into `dir`.
pub fn generate_corpus(
    dir: &Path,
    n: usize,
    seed: u64,
    ranges: &CorpusRanges,
) -> Result<Vec<Annotation>> {
    if n == 0 {
        return Err(Error::InvalidParam("corpus size must be at least 1".into()));
    }
    fs::create_dir_all(dir)?;
    let drawn = draw_corpus(n, seed, ranges);
    let mut annotations = Vec::with_capacity(n);
    let mut split = String::from("id,split\n");
    for (i, (id, params)) in drawn.iter().enumerate() {
        let (img, truth) = generate_image(params)?;
        save_png(&img, &dir.join(format!("{id}.png")))?;
        annotations.push(Annotation::from_truth(id, &truth, params.incline_deg));
        let part = if i < n.div_ceil(2) { "train" } else { "test" };
        writeln!(split, "{id},{part}").expect("string write");
    }
    write_annotations(&annotations, &dir.join("annotations.csv"))?;
    fs::write(dir.join("split.csv"), split)?;
    Ok(annotations)
}

/// Scene behind the bundled reference ROI: clean, vertical, noise-free, at
/// the normalization width so no resampling is involved.
pub fn reference_scene() -> SceneParams {
    SceneParams {
        width: 1960,
        height: 2450,
        pmr_mm_per_px: 0.095,
        incline_deg: 0.0,
        lower_corner: (320.0, 1650.0),
        tag: false,
        sticker: false,
        stain: false,
        illumination_amplitude: 0.0,
        noise_sigma: 0.0,
        seed: 0x5245_4631,
    }
}

/// Renders the reference ROI: the scene above cropped around the corners
/// with the detector's ROI margins and preprocessed the same way, plus the
/// corner/width annotation in ROI coordinates.
pub fn make_reference() -> Result<(GrayImage, crate::corner::ReferenceAnnotation)> {
    let params = reference_scene();
    let (img, truth) = generate_image(&params)?;
    let w_px = truth.scale_width_px;
    let l_p = ((truth.upper.0 - truth.lower.0).powi(2) + (truth.upper.1 - truth.lower.1).powi(2))
        .sqrt();
    let margin_x = 1.5 * w_px;
    let margin_y = 0.15 * l_p;
    let x0 = (truth.upper.0.min(truth.lower.0) - margin_x).floor() as i64;
    let y0 = (truth.upper.1.min(truth.lower.1) - margin_y).floor() as i64;
    let x1 = (truth.upper.0.max(truth.lower.0) + w_px * 1.5).ceil() as i64;
    let y1 = (truth.upper.1.max(truth.lower.1) + margin_y).ceil() as i64;
    let rect = crate::image::CropRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    let (roi, offset) = crate::image::crop(&img, rect)?;
    let roi = crate::image::preprocess_roi(&roi, 0.75)?;
    let ann = crate::corner::ReferenceAnnotation {
        upper: (truth.upper.0 - offset.0 as f64, truth.upper.1 - offset.1 as f64),
        lower: (truth.lower.0 - offset.0 as f64, truth.lower.1 - offset.1 as f64),
        scale_width_px: w_px,
    };
    Ok((roi, ann))
}

/// Reads the split manifest; returns (train ids, test ids).
pub fn read_split(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match line.trim().split_once(',') {
            Some((id, "train")) => train.push(id.to_string()),
            Some((id, "test")) => test.push(id.to_string()),
            _ => return Err(Error::Format(format!("bad split line: {line}"))),
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_params() -> SceneParams {
        SceneParams {
            width: 900,
            height: 1100,
            pmr_mm_per_px: 0.1,
            incline_deg: 1.5,
            lower_corner: (150.0, 760.0),
            tag: true,
            sticker: true,
            stain: true,
            illumination_amplitude: 12.0,
            noise_sigma: 2.0,
            seed: 99,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = base_params();
        let (a, _) = generate_image(&p).unwrap();
        let (b, _) = generate_image(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mark_span_matches_pmr() {
        let p = base_params();
        let (_, truth) = generate_image(&p).unwrap();
        let dx = truth.loc1().0 - truth.loc10().0;
        let dy = truth.loc1().1 - truth.loc10().1;
        let span = (dx * dx + dy * dy).sqrt();
        assert!((span * truth.pmr_true - SPAN_MM).abs() < 0.5 * truth.pmr_true);
        assert_eq!(truth.majors.len(), 10);
        assert_eq!(truth.minors.len(), 36);
    }

    #[test]
    fn clean_scene_edge_at_ground_truth() {
        let mut p = base_params();
        p.tag = false;
        p.sticker = false;
        p.stain = false;
        p.noise_sigma = 0.0;
        p.illumination_amplitude = 0.0;
        let (img, truth) = generate_image(&p).unwrap();
        let theta = p.incline_deg.to_radians();
        // walk a few rows between the corners; the max left-to-right step
        // must sit within 1 px of the true edge line
        for frac in [0.2, 0.5, 0.8] {
            let y = truth.lower.1 + (truth.upper.1 - truth.lower.1) * frac;
            let x_true = truth.lower.0 + (y - truth.lower.1) * -theta.tan();
            let yi = y.round() as usize;
            let mut best_x = 0usize;
            let mut best_step = f32::NEG_INFINITY;
            for x in 1..img.width() - 1 {
                let step = img.get(x + 1, yi) - img.get(x - 1, yi);
                if step > best_step {
                    best_step = step;
                    best_x = x;
                }
            }
            assert!(
                (best_x as f64 - x_true).abs() <= 1.0,
                "edge at {best_x}, expected {x_true:.1}"
            );
        }
    }

    #[test]
    fn interference_flags_leave_rest_identical() {
        let with = base_params();
        let mut without = base_params();
        without.tag = false;
        without.sticker = false;
        without.stain = false;
        let (a, _) = generate_image(&with).unwrap();
        let (b, _) = generate_image(&without).unwrap();
        // far away from the ruler, the two renders are byte-identical
        let x = 700;
        for y in 0..a.height() {
            assert_eq!(a.get(x, y), b.get(x, y));
        }
    }

    #[test]
    fn out_of_bounds_scale_errors() {
        let mut p = base_params();
        p.lower_corner = (150.0, 300.0); // body extends above the frame
        assert!(generate_image(&p).is_err());
    }

    #[test]
    fn corpus_draws_within_ranges() {
        let ranges = CorpusRanges::default();
        let drawn = draw_corpus(16, 5, &ranges);
        assert_eq!(drawn.len(), 16);
        for (_, p) in &drawn {
            assert!(p.pmr_mm_per_px >= ranges.pmr.0 && p.pmr_mm_per_px <= ranges.pmr.1);
            assert!(p.incline_deg >= -3.0 && p.incline_deg <= 3.0);
            assert!(p.width >= 758 && p.width <= 2690);
        }
    }

    #[test]
    fn corpus_files_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let ranges = CorpusRanges {
            width_px: (300, 400),
            pmr: (0.28, 0.33),
            ..CorpusRanges::default()
        };
        let ann = generate_corpus(dir.path(), 5, 11, &ranges).unwrap();
        assert_eq!(ann.len(), 5);
        let read_back = read_annotations(&dir.path().join("annotations.csv")).unwrap();
        assert_eq!(read_back, ann);
        let (train, test) = read_split(&dir.path().join("split.csv")).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(test.len(), 2);
        for id in train.iter().chain(&test) {
            assert!(dir.path().join(format!("{id}.png")).exists());
        }
        // no leakage
        assert!(train.iter().all(|id| !test.contains(id)));
    }

    #[test]
    fn corpus_regeneration_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ranges = CorpusRanges {
            width_px: (300, 360),
            pmr: (0.3, 0.34),
            ..CorpusRanges::default()
        };
        generate_corpus(dir_a.path(), 3, 21, &ranges).unwrap();
        generate_corpus(dir_b.path(), 3, 21, &ranges).unwrap();
        for id in ["img0000", "img0001", "img0002"] {
            let a = std::fs::read(dir_a.path().join(format!("{id}.png"))).unwrap();
            let b = std::fs::read(dir_b.path().join(format!("{id}.png"))).unwrap();
            assert_eq!(a, b);
        }
    }
}
