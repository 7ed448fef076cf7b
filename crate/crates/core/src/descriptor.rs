//! 128-dimensional SIFT-style descriptor of an oriented, sized image patch.
//!
//! Unlike full SIFT there is no keypoint detection: the caller supplies the
//! patch center, half-width `W` and orientation from prior coarse detection,
//! and only the descriptor itself is computed. The patch is resampled into a
//! fixed 16x16 canonical grid regardless of `W`, which makes descriptors of
//! the same object at different scales directly comparable.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Canonical resample grid side (16x16 samples -> 4x4 cells of 4x4).
const GRID: usize = 16;
/// Spatial histogram cells per side.
const CELLS: usize = 4;
/// Orientation histogram bins.
const BINS: usize = 8;
/// Descriptor length.
pub const DESCRIPTOR_LEN: usize = CELLS * CELLS * BINS;
/// Per-component clamp applied after the first normalization.
const CLAMP: f32 = 0.2;

/// An oriented, sized patch: center, half-width `W` (patch spans `2W+1`
/// source pixels) and the assigned principal direction in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub center: (f64, f64),
    pub half_width: u32,
    pub orientation_deg: f64,
}

impl PatchSpec {
    pub fn new(center: (f64, f64), half_width: u32, orientation_deg: f64) -> Result<Self> {
        if half_width < 4 {
            return Err(Error::InvalidParam(format!(
                "patch half-width must be at least 4, got {half_width}"
            )));
        }
        Ok(Self {
            center,
            half_width,
            orientation_deg,
        })
    }
}

/// 128-dimensional non-negative feature vector, unit Euclidean norm (or
/// all-zero for a perfectly flat patch).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor {
    values: Vec<f32>,
}

impl PatchDescriptor {
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != DESCRIPTOR_LEN {
            return Err(Error::Dimension(format!(
                "descriptor must have {DESCRIPTOR_LEN} components, got {}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Squared Euclidean distance to another descriptor.
    pub fn distance_sq(&self, other: &PatchDescriptor) -> f64 {
        distance_sq_slices(&self.values, &other.values)
    }
}

/// Squared Euclidean distance between two descriptors.
pub fn descriptor_distance(a: &PatchDescriptor, b: &PatchDescriptor) -> f64 {
    a.distance_sq(b)
}

/// Squared Euclidean distance between raw component slices; errors on a
/// length mismatch.
pub fn descriptor_distance_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "descriptor lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(distance_sq_slices(a, b))
}

#[inline]
fn distance_sq_slices(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// Distance from the patch center to the farthest canonical sample point,
/// in source pixels, for an axis-aligned patch. Rotated patches reach at
/// most `sqrt(2)` times this along either axis.
pub fn sample_extent(half_width: u32) -> f64 {
    // one extra ring of samples feeds the central differences
    (GRID as f64 / 2.0 + 0.5) * step(half_width)
}

#[inline]
fn step(half_width: u32) -> f64 {
    (2.0 * half_width as f64 + 1.0) / GRID as f64
}

/// Computes the descriptor of the given patch.
///
/// The patch is resampled into a canonical grid aligned to the orientation,
/// gradients are taken by central differences on that grid (so directions
/// are automatically relative to the orientation), and a Gaussian-weighted
/// 4x4 x 8 histogram is accumulated with trilinear interpolation, then
/// normalized with the standard 0.2 illumination clamp.
pub fn describe_patch(image: &GrayImage, spec: &PatchSpec) -> Result<PatchDescriptor> {
    let mut values = vec![0.0f32; DESCRIPTOR_LEN];
    describe_patch_into(image, spec, &mut values)?;
    PatchDescriptor::from_values(values)
}

pub(crate) fn describe_patch_into(
    image: &GrayImage,
    spec: &PatchSpec,
    out: &mut [f32],
) -> Result<()> {
    debug_assert_eq!(out.len(), DESCRIPTOR_LEN);
    if spec.half_width < 4 {
        return Err(Error::InvalidParam(format!(
            "patch half-width must be at least 4, got {}",
            spec.half_width
        )));
    }
    let step = step(spec.half_width);
    let rad = spec.orientation_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let (cx, cy) = spec.center;
    let half = (GRID as f64 - 1.0) / 2.0; // grid center in sample indices

    // All sample points lie in the convex hull of the four extreme corners,
    // and the valid bilinear domain is convex, so checking the corners
    // suffices for the bounds contract.
    let reach = sample_extent(spec.half_width);
    for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let u = su * reach;
        let v = sv * reach;
        let x = cx + u * cos - v * sin;
        let y = cy + u * sin + v * cos;
        if x < 0.0 || y < 0.0 || x > (image.width() - 1) as f64 || y > (image.height() - 1) as f64 {
            return Err(Error::OutOfBounds(format!(
                "patch at ({cx:.1}, {cy:.1}) W={} orientation {:.1} leaves the image",
                spec.half_width, spec.orientation_deg
            )));
        }
    }

    // canonical resample, one extra ring for the central differences
    const SIDE: usize = GRID + 2;
    let mut samples = [0.0f32; SIDE * SIDE];
    for r in 0..SIDE {
        let v = (r as f64 - 1.0 - half) * step;
        for c in 0..SIDE {
            let u = (c as f64 - 1.0 - half) * step;
            let x = cx + u * cos - v * sin;
            let y = cy + u * sin + v * cos;
            samples[r * SIDE + c] = image.sample_bilinear(x, y).unwrap_or(0.0);
        }
    }

    out.fill(0.0);
    let sigma = GRID as f64 / 2.0;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let bin_per_rad = BINS as f64 / std::f64::consts::TAU;
    for r in 0..GRID {
        for c in 0..GRID {
            let gx = samples[(r + 1) * SIDE + c + 2] - samples[(r + 1) * SIDE + c];
            let gy = samples[(r + 2) * SIDE + c + 1] - samples[r * SIDE + c + 1];
            let mag = ((gx * gx + gy * gy) as f64).sqrt();
            if mag == 0.0 {
                continue;
            }
            let dr = r as f64 - half;
            let dc = c as f64 - half;
            let weight = mag * (-(dr * dr + dc * dc) * inv_two_sigma_sq).exp();

            let angle = (gy as f64).atan2(gx as f64);
            let ob = (angle * bin_per_rad).rem_euclid(BINS as f64);
            let o0 = ob.floor() as usize % BINS;
            let fo = ob - ob.floor();

            let rc = (r as f64 + 0.5) * CELLS as f64 / GRID as f64 - 0.5;
            let cc = (c as f64 + 0.5) * CELLS as f64 / GRID as f64 - 0.5;
            let r0 = rc.floor();
            let c0 = cc.floor();
            let fr = rc - r0;
            let fc = cc - c0;

            for (ri, wr) in [(r0 as isize, 1.0 - fr), (r0 as isize + 1, fr)] {
                if !(0..CELLS as isize).contains(&ri) {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - fc), (c0 as isize + 1, fc)] {
                    if !(0..CELLS as isize).contains(&ci) {
                        continue;
                    }
                    let cell = (ri as usize * CELLS + ci as usize) * BINS;
                    let w_spatial = weight * wr * wc;
                    out[cell + o0] += (w_spatial * (1.0 - fo)) as f32;
                    out[cell + (o0 + 1) % BINS] += (w_spatial * fo) as f32;
                }
            }
        }
    }

    // normalize, clamp, renormalize; a flat patch stays all-zero
    let norm = out.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        let inv = (1.0 / norm) as f32;
        for v in out.iter_mut() {
            *v = (*v * inv).min(CLAMP);
        }
        let norm2 = out.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm2 > 0.0 {
            let inv2 = (1.0 / norm2) as f32;
            for v in out.iter_mut() {
                *v *= inv2;
            }
        }
    }
    Ok(())
}
