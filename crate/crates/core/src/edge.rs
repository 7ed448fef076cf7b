//! Scale edge detection inside the ROI.
//!
//! The scale's long left edge is the strongest dark-to-bright vertical
//! transition: grayscale erosion suppresses thin bright artifacts, a
//! horizontal Sobel responds positively at the left edge, an adaptive
//! threshold is lowered until a connected component spans enough of the
//! expected scale length, and a near-vertical Hough transform yields the
//! line; among strong lines the leftmost is the scale edge.

use crate::error::{Error, Result};
use crate::image::{convolve_sobel_gx, gray_erode, GrayImage, SignedImage, StructuringElement};

/// Hough angle step, degrees.
const THETA_STEP_DEG: f64 = 0.25;
/// Threshold decay per binarization round.
const TH_DECAY: f32 = 0.8;
/// Give up once the threshold falls below this intensity.
const TH_FLOOR: f32 = 2.0;
/// Lines keep competing for "leftmost" only above this fraction of the best
/// vote count.
const VOTE_KEEP_FRACTION: f64 = 0.5;

/// Binary raster; `true` pixels vote in the Hough transform.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "bit buffer of length {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 8-bit rendering for debug dumps.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            if self.get(x, y) {
                255.0
            } else {
                0.0
            }
        })
    }
}

/// Line in Hough normal form `r = x cos(theta) + y sin(theta)`; theta = 0 is
/// the vertical line `x = r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughLine {
    pub r: f64,
    pub theta_deg: f64,
    pub votes: u32,
}

impl HoughLine {
    /// x coordinate of the line at a given y.
    pub fn x_at(&self, y: f64) -> f64 {
        let t = self.theta_deg.to_radians();
        (self.r - y * t.sin()) / t.cos()
    }
}

/// Outcome of the scale-edge search.
#[derive(Debug, Clone)]
pub struct EdgeResult {
    pub line: HoughLine,
    /// Incline relative to vertical, degrees (the Hough theta).
    pub incline_deg: f64,
    /// Final adaptive threshold.
    pub threshold_used: f32,
    /// Largest connected-component y-extent at that threshold, pixels.
    pub longest_extent: f64,
}

/// Result of adaptive binarization.
#[derive(Debug, Clone)]
pub struct BinarizeOutcome {
    pub image: BinaryImage,
    pub threshold: f32,
    pub longest_extent: f64,
}

// Largest bounding-box height over 8-connected components.
fn longest_y_extent(bin: &BinaryImage) -> usize {
    let w = bin.width;
    let h = bin.height;
    let mut visited = vec![false; w * h];
    let mut best = 0usize;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !bin.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut y_min = start / w;
        let mut y_max = y_min;
        while let Some(idx) = stack.pop() {
            let x = idx % w;
            let y = idx / w;
            y_min = y_min.min(y);
            y_max = y_max.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if bin.bits[nidx] && !visited[nidx] {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        best = best.max(y_max - y_min + 1);
    }
    best
}

/// Binarizes the gradient at a threshold starting from half its maximum,
/// lowering it by x0.8 until the longest component's y-extent exceeds
/// `0.6 * l_p`. Errors once the threshold falls below the floor.
pub fn adaptive_binarize(grad: &SignedImage, l_p: f64) -> Result<BinarizeOutcome> {
    if l_p <= 0.0 {
        return Err(Error::InvalidParam("expected scale length must be positive".into()));
    }
    let max = grad.max();
    if !(max > 0.0) {
        return Err(Error::EdgeNotFound {
            threshold_floor: TH_FLOOR,
        });
    }
    let needed = 0.6 * l_p;
    let mut th = max * 0.5;
    loop {
        let bits: Vec<bool> = grad.samples().iter().map(|&v| v > th).collect();
        let bin = BinaryImage::from_bits(grad.width(), grad.height(), bits)?;
        let extent = longest_y_extent(&bin) as f64;
        if extent > needed {
            return Ok(BinarizeOutcome {
                image: bin,
                threshold: th,
                longest_extent: extent,
            });
        }
        th *= TH_DECAY;
        if th < TH_FLOOR {
            return Err(Error::EdgeNotFound {
                threshold_floor: TH_FLOOR,
            });
        }
    }
}

/// Near-vertical Hough transform: theta spans +-`theta_half_window_deg`
/// around vertical in 0.25 degree steps, r in 1 px bins; returns up to
/// `top_k` local maxima (3x3 non-maximum suppression) sorted by votes.
pub fn hough_lines(bin: &BinaryImage, theta_half_window_deg: f64, top_k: usize) -> Vec<HoughLine> {
    if theta_half_window_deg < 0.0 || theta_half_window_deg > 45.0 {
        return Vec::new();
    }
    let n_theta = (2.0 * theta_half_window_deg / THETA_STEP_DEG).round() as usize + 1;
    let diag = ((bin.width * bin.width + bin.height * bin.height) as f64).sqrt().ceil() as i64;
    let n_r = (2 * diag + 1) as usize;
    let thetas: Vec<f64> = (0..n_theta)
        .map(|i| -theta_half_window_deg + i as f64 * THETA_STEP_DEG)
        .collect();
    let trig: Vec<(f64, f64)> = thetas.iter().map(|t| t.to_radians().sin_cos()).collect();

    let mut acc = vec![0u32; n_theta * n_r];
    for y in 0..bin.height {
        for x in 0..bin.width {
            if !bin.get(x, y) {
                continue;
            }
            for (ti, (sin, cos)) in trig.iter().enumerate() {
                let r = x as f64 * cos + y as f64 * sin;
                let ri = (r.round() as i64 + diag) as usize;
                acc[ti * n_r + ri] += 1;
            }
        }
    }

    let mut lines = Vec::new();
    for ti in 0..n_theta {
        for ri in 0..n_r {
            let votes = acc[ti * n_r + ri];
            if votes == 0 {
                continue;
            }
            // 3x3 non-maximum suppression in accumulator space; ties go to
            // the lexicographically first bin
            let mut is_max = true;
            'nms: for dt in -1i64..=1 {
                for dr in -1i64..=1 {
                    if dt == 0 && dr == 0 {
                        continue;
                    }
                    let nt = ti as i64 + dt;
                    let nr = ri as i64 + dr;
                    if nt < 0 || nr < 0 || nt >= n_theta as i64 || nr >= n_r as i64 {
                        continue;
                    }
                    let other = acc[nt as usize * n_r + nr as usize];
                    if other > votes || (other == votes && (nt, nr) < (ti as i64, ri as i64)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                lines.push(HoughLine {
                    r: (ri as i64 - diag) as f64,
                    theta_deg: thetas[ti],
                    votes,
                });
            }
        }
    }
    lines.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.r.partial_cmp(&b.r).unwrap())
            .then(a.theta_deg.partial_cmp(&b.theta_deg).unwrap())
    });
    lines.truncate(top_k);
    lines
}

/// Picks the leftmost line (smallest x at the vertical midline `mid_y`)
/// among those with at least half the best vote count.
pub fn select_scale_edge(lines: &[HoughLine], mid_y: f64) -> Result<HoughLine> {
    if lines.is_empty() {
        return Err(Error::EdgeNotFound {
            threshold_floor: TH_FLOOR,
        });
    }
    let best = lines.iter().map(|l| l.votes).max().unwrap() as f64;
    lines
        .iter()
        .filter(|l| l.votes as f64 >= VOTE_KEEP_FRACTION * best)
        .min_by(|a, b| a.x_at(mid_y).partial_cmp(&b.x_at(mid_y)).unwrap())
        .copied()
        .ok_or(Error::EdgeNotFound {
            threshold_floor: TH_FLOOR,
        })
}

/// Edge-detection tuning knobs.
#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub theta_half_window_deg: f64,
    pub top_k: usize,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            theta_half_window_deg: 10.0,
            top_k: 8,
        }
    }
}

/// Full edge search on a preprocessed ROI: erosion, Sobel, adaptive
/// binarization, Hough, leftmost selection.
pub fn detect_edge(roi: &GrayImage, l_p: f64, cfg: &EdgeConfig) -> Result<EdgeResult> {
    let (outcome, lines) = detect_edge_stages(roi, l_p, cfg)?;
    let line = select_scale_edge(&lines, (roi.height() - 1) as f64 / 2.0)?;
    Ok(EdgeResult {
        line,
        incline_deg: line.theta_deg,
        threshold_used: outcome.threshold,
        longest_extent: outcome.longest_extent,
    })
}

/// The intermediate stages of `detect_edge`, exposed for debug dumps.
pub fn detect_edge_stages(
    roi: &GrayImage,
    l_p: f64,
    cfg: &EdgeConfig,
) -> Result<(BinarizeOutcome, Vec<HoughLine>)> {
    let eroded = gray_erode(roi, &StructuringElement::square(3)?)?;
    let grad = convolve_sobel_gx(&eroded)?;
    let outcome = adaptive_binarize(&grad, l_p)?;
    let lines = hough_lines(&outcome.image, cfg.theta_half_window_deg, cfg.top_k);
    Ok((outcome, lines))
}
