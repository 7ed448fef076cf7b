//! Grayscale image container and the pixel-level primitives used by every
//! later stage: Sobel convolution, grayscale morphology, contrast/gamma
//! preprocessing, bilinear resize, rotation with bidirectional coordinate
//! mapping, and cropping.
//!
//! Intensities are stored as `f32`, nominally in `[0, 255]`. All operations
//! are pure functions of their inputs; images are immutable in practice and
//! safe to share across threads.

use crate::error::{Error, Result};

/// 2-D grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    /// All-zero image of the given size.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    /// Wraps an existing row-major pixel buffer.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "pixel buffer of length {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x] = value;
    }

    /// Pixel access with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[yc * self.width + xc]
    }

    /// Bilinear sample at sub-pixel coordinates; `None` outside
    /// `[0, w-1] x [0, h-1]` (with a small tolerance for rounding noise).
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        const EPS: f64 = 1e-9;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x < -EPS || y < -EPS || x > max_x + EPS || y > max_y + EPS {
            return None;
        }
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let top = p00 + (p10 - p00) * fx;
        let bot = p01 + (p11 - p01) * fx;
        Some(top + (bot - top) * fy)
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Signed-valued raster, e.g. a gradient response.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedImage {
    width: usize,
    height: usize,
    samples: Vec<f32>,
}

impl SignedImage {
    pub fn from_samples(width: usize, height: usize, samples: Vec<f32>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::Dimension(format!(
                "sample buffer of length {} does not match {width}x{height}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.samples[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.samples.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Flat structuring element. 1-D elements (for signals) have `height == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
}

impl StructuringElement {
    /// 1-D flat element of odd length.
    pub fn line(length: usize) -> Result<Self> {
        if length == 0 || length % 2 == 0 {
            return Err(Error::Dimension(format!(
                "structuring element length must be odd and positive, got {length}"
            )));
        }
        Ok(Self {
            width: length,
            height: 1,
        })
    }

    /// Square flat element of odd side.
    pub fn square(side: usize) -> Result<Self> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::Dimension(format!(
                "structuring element side must be odd and positive, got {side}"
            )));
        }
        Ok(Self {
            width: side,
            height: side,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn half_width(&self) -> usize {
        self.width / 2
    }

    pub fn half_height(&self) -> usize {
        self.height / 2
    }
}

/// Rotation about a fixed center with forward and backward point mapping.
///
/// Positive angles rotate the +x axis toward +y; in a y-down raster this is
/// the sense that maps a line of Hough angle `theta` to vertical when the
/// image is rotated by `-theta`.
#[derive(Debug, Clone, Copy)]
pub struct RotationMap {
    angle_deg: f64,
    center: (f64, f64),
    sin: f64,
    cos: f64,
}

impl RotationMap {
    pub fn new(angle_deg: f64, center: (f64, f64)) -> Self {
        let rad = angle_deg.to_radians();
        Self {
            angle_deg,
            center,
            sin: rad.sin(),
            cos: rad.cos(),
        }
    }

    pub fn identity(center: (f64, f64)) -> Self {
        Self::new(0.0, center)
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    /// Maps a source point into the rotated frame.
    pub fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        let dx = p.0 - self.center.0;
        let dy = p.1 - self.center.1;
        (
            self.center.0 + dx * self.cos - dy * self.sin,
            self.center.1 + dx * self.sin + dy * self.cos,
        )
    }

    /// Maps a rotated-frame point back into the source frame.
    pub fn backward(&self, q: (f64, f64)) -> (f64, f64) {
        let dx = q.0 - self.center.0;
        let dy = q.1 - self.center.1;
        (
            self.center.0 + dx * self.cos + dy * self.sin,
            self.center.1 - dx * self.sin + dy * self.cos,
        )
    }
}

/// Axis-aligned crop rectangle; may extend past the image and is clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

impl CropRect {
    pub fn new(x: i64, y: i64, width: i64, height: i64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }
}

/// Horizontal-response 3x3 Sobel, computed as cross-correlation with
/// edge-replication padding. Positive response where intensity increases
/// left to right.
pub fn convolve_sobel_gx(image: &GrayImage) -> Result<SignedImage> {
    if image.width() < 3 || image.height() < 3 {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than 3x3 kernel",
            image.width(),
            image.height()
        )));
    }
    const KERNEL: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let w = image.width();
    let h = image.height();
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let xi = x as isize;
            let yi = y as isize;
            let mut acc = 0.0f32;
            for (ky, row) in KERNEL.iter().enumerate() {
                for (kx, &kv) in row.iter().enumerate() {
                    acc += kv * image.get_clamped(xi + kx as isize - 1, yi + ky as isize - 1);
                }
            }
            out[y * w + x] = acc;
        }
    }
    SignedImage::from_samples(w, h, out)
}

/// Grayscale erosion: each output pixel is the minimum of the input under the
/// element footprint, with edge replication.
pub fn gray_erode(image: &GrayImage, se: &StructuringElement) -> Result<GrayImage> {
    if se.width() % 2 == 0 || se.height() % 2 == 0 {
        return Err(Error::Dimension("structuring element must be odd".into()));
    }
    let w = image.width();
    let h = image.height();
    let hw = se.half_width() as isize;
    let hh = se.half_height() as isize;
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::INFINITY;
            for dy in -hh..=hh {
                for dx in -hw..=hw {
                    m = m.min(image.get_clamped(x as isize + dx, y as isize + dy));
                }
            }
            out.set(x, y, m);
        }
    }
    Ok(out)
}

// 1-D sliding-window max/min with window clamped at the array ends. Used on
// replication-padded buffers so the compound closing matches the result on
// the edge-extended signal.
fn window_filter(input: &[f32], radius: usize, fold: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    let n = input.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let mut acc = input[lo];
        for &v in &input[lo + 1..=hi] {
            acc = fold(acc, v);
        }
        out.push(acc);
    }
    out
}

fn check_line_se(signal: &[f32], se: &StructuringElement) -> Result<usize> {
    if se.height() != 1 {
        return Err(Error::Dimension(
            "signal morphology needs a 1-D structuring element".into(),
        ));
    }
    if se.width() > signal.len() {
        return Err(Error::Dimension(format!(
            "element length {} exceeds signal length {}",
            se.width(),
            signal.len()
        )));
    }
    Ok(se.half_width())
}

/// 1-D grayscale closing (max filter then min filter) with edge replication.
pub fn close_signal(signal: &[f32], se: &StructuringElement) -> Result<Vec<f32>> {
    let r = check_line_se(signal, se)?;
    let mut padded = Vec::with_capacity(signal.len() + 2 * r);
    padded.extend(std::iter::repeat(signal[0]).take(r));
    padded.extend_from_slice(signal);
    padded.extend(std::iter::repeat(*signal.last().unwrap()).take(r));
    let dilated = window_filter(&padded, r, f32::max);
    let eroded = window_filter(&dilated, r, f32::min);
    Ok(eroded[r..r + signal.len()].to_vec())
}

/// Black top-hat: closing minus input. Highlights dark features narrower
/// than the element; elementwise non-negative.
pub fn black_tophat(signal: &[f32], se: &StructuringElement) -> Result<Vec<f32>> {
    let closed = close_signal(signal, se)?;
    Ok(closed
        .iter()
        .zip(signal)
        .map(|(c, s)| (c - s).max(0.0))
        .collect())
}

/// Linear contrast stretch to `[0, 255]` followed by gamma correction
/// `out = 255 * (in/255)^gamma`. A flat image is returned unchanged.
pub fn preprocess_roi(image: &GrayImage, gamma: f64) -> Result<GrayImage> {
    if gamma <= 0.0 {
        return Err(Error::InvalidParam(format!("gamma must be positive, got {gamma}")));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in image.pixels() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Ok(image.clone());
    }
    let span = (hi - lo) as f64;
    let pixels = image
        .pixels()
        .iter()
        .map(|&v| {
            let stretched = (v as f64 - lo as f64) * 255.0 / span;
            (255.0 * (stretched / 255.0).powf(gamma)) as f32
        })
        .collect();
    GrayImage::from_pixels(image.width(), image.height(), pixels)
}

/// Bilinear resample to the given width, preserving aspect ratio.
pub fn resize_to_width(image: &GrayImage, target_width: usize) -> Result<GrayImage> {
    if target_width == 0 {
        return Err(Error::InvalidParam("target width must be positive".into()));
    }
    if target_width == image.width() {
        return Ok(image.clone());
    }
    let target_height = ((image.height() as f64 * target_width as f64 / image.width() as f64)
        .round() as usize)
        .max(1);
    resize_exact(image, target_width, target_height)
}

/// Bilinear resample to exact dimensions.
pub fn resize_exact(image: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidParam("resize target must be positive".into()));
    }
    let sx = image.width() as f64 / out_w as f64;
    let sy = image.height() as f64 / out_h as f64;
    let max_x = (image.width() - 1) as f64;
    let max_y = (image.height() - 1) as f64;
    let mut out = GrayImage::new(out_w, out_h);
    for yo in 0..out_h {
        let ys = ((yo as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        for xo in 0..out_w {
            let xs = ((xo as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let v = image.sample_bilinear(xs, ys).unwrap_or(0.0);
            out.set(xo, yo, v);
        }
    }
    Ok(out)
}

/// Bilinear rotation about the map's center; pixels sampled from outside the
/// source are filled with 0. The output has the source dimensions.
pub fn rotate(image: &GrayImage, map: &RotationMap) -> Result<GrayImage> {
    if map.angle_deg().abs() > 45.0 {
        return Err(Error::InvalidParam(format!(
            "rotation angle {} exceeds 45 degrees",
            map.angle_deg()
        )));
    }
    let w = image.width();
    let h = image.height();
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let src = map.backward((x as f64, y as f64));
            if let Some(v) = image.sample_bilinear(src.0, src.1) {
                out.set(x, y, v);
            }
        }
    }
    Ok(out)
}

/// Crops the rectangle (clamped to image bounds) and returns the sub-image
/// plus the offset that maps crop coordinates back to full-image ones.
pub fn crop(image: &GrayImage, rect: CropRect) -> Result<(GrayImage, (usize, usize))> {
    let x0 = rect.x.max(0);
    let y0 = rect.y.max(0);
    let x1 = (rect.x + rect.width).min(image.width() as i64);
    let y1 = (rect.y + rect.height).min(image.height() as i64);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::EmptyRegion);
    }
    let (x0, y0, x1, y1) = (x0 as usize, y0 as usize, x1 as usize, y1 as usize);
    let mut out = GrayImage::new(x1 - x0, y1 - y0);
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(x - x0, y - y0, image.get(x, y));
        }
    }
    Ok((out, (x0, y0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    // Brute-force cross-correlation with the Eq.-style 3x3 kernel, used as
    // the independent oracle for convolve_sobel_gx.
    pub(crate) fn sobel_gx_brute(image: &GrayImage) -> Vec<f32> {
        let kernel: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let mut out = vec![0.0; image.width() * image.height()];
        for y in 0..image.height() {
            for x in 0..image.width() {
                let mut acc = 0.0;
                for (ky, row) in kernel.iter().enumerate() {
                    for (kx, &kv) in row.iter().enumerate() {
                        acc += kv
                            * image.get_clamped(
                                x as isize + kx as isize - 1,
                                y as isize + ky as isize - 1,
                            );
                    }
                }
                out[y * image.width() + x] = acc;
            }
        }
        out
    }

    fn erode_brute(image: &GrayImage, side: usize) -> Vec<f32> {
        let r = (side / 2) as isize;
        let mut out = vec![0.0; image.width() * image.height()];
        for y in 0..image.height() {
            for x in 0..image.width() {
                let mut m = f32::INFINITY;
                for dy in -r..=r {
                    for dx in -r..=r {
                        m = m.min(image.get_clamped(x as isize + dx, y as isize + dy));
                    }
                }
                out[y * image.width() + x] = m;
            }
        }
        out
    }

    // Closing on the explicitly edge-replicated signal, double loop.
    pub(crate) fn close_brute(signal: &[f32], len: usize) -> Vec<f32> {
        let r = len / 2;
        let n = signal.len();
        let ext = |i: isize| -> f32 { signal[i.clamp(0, n as isize - 1) as usize] };
        let dil = |i: isize| -> f32 {
            let mut m = f32::NEG_INFINITY;
            for k in i - r as isize..=i + r as isize {
                m = m.max(ext(k));
            }
            m
        };
        (0..n as isize)
            .map(|i| {
                let mut m = f32::INFINITY;
                for k in i - r as isize..=i + r as isize {
                    m = m.min(dil(k));
                }
                m
            })
            .collect()
    }

    fn random_image(rng: &mut StdRng, w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| rng.random_range(0.0..255.0f32))
    }

    #[test]
    fn sobel_constant_image_is_zero() {
        let img = GrayImage::from_fn(8, 6, |_, _| 128.0);
        let g = convolve_sobel_gx(&img).unwrap();
        assert!(g.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_step_columns_give_40() {
        // Columns [0, 0, 10, 10]: response 40 at the two columns adjacent to
        // the step, 0 elsewhere (computed with the brute-force oracle).
        let img = GrayImage::from_fn(4, 4, |x, _| if x >= 2 { 10.0 } else { 0.0 });
        let g = convolve_sobel_gx(&img).unwrap();
        let brute = sobel_gx_brute(&img);
        assert_eq!(g.samples(), &brute[..]);
        for y in 0..4 {
            assert_eq!(g.get(0, y), 0.0);
            assert_eq!(g.get(1, y), 40.0);
            assert_eq!(g.get(2, y), 40.0);
            assert_eq!(g.get(3, y), 0.0);
        }
    }

    #[test]
    fn sobel_mirror_is_negated() {
        let mut rng = StdRng::seed_from_u64(7);
        let img = random_image(&mut rng, 9, 7);
        let mirrored = GrayImage::from_fn(9, 7, |x, y| img.get(8 - x, y));
        let g = convolve_sobel_gx(&img).unwrap();
        let gm = convolve_sobel_gx(&mirrored).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                // summation order differs at mirrored positions, so allow
                // float rounding noise
                assert!((g.get(x, y) + gm.get(8 - x, y)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn sobel_matches_brute_force_on_random_images() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let img = random_image(&mut rng, 16, 16);
            let g = convolve_sobel_gx(&img).unwrap();
            assert_eq!(g.samples(), &sobel_gx_brute(&img)[..]);
        }
    }

    #[test]
    fn sobel_rejects_small_images() {
        let img = GrayImage::new(2, 5);
        assert!(matches!(convolve_sobel_gx(&img), Err(Error::Dimension(_))));
    }

    #[test]
    fn erode_constant_unchanged() {
        let img = GrayImage::from_fn(6, 6, |_, _| 42.0);
        let se = StructuringElement::square(3).unwrap();
        assert_eq!(gray_erode(&img, &se).unwrap(), img);
    }

    #[test]
    fn erode_removes_isolated_bright_pixel() {
        let mut img = GrayImage::new(7, 7);
        img.set(3, 3, 255.0);
        let se = StructuringElement::square(3).unwrap();
        let out = gray_erode(&img, &se).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn erode_thins_stripe_to_one_pixel() {
        let img = GrayImage::from_fn(9, 9, |x, _| if (3..6).contains(&x) { 200.0 } else { 0.0 });
        let se = StructuringElement::square(3).unwrap();
        let out = gray_erode(&img, &se).unwrap();
        assert_eq!(out.pixels(), &erode_brute(&img, 3)[..]);
        for y in 0..9 {
            assert_eq!(out.get(4, y), 200.0);
            assert_eq!(out.get(3, y), 0.0);
            assert_eq!(out.get(5, y), 0.0);
        }
    }

    #[test]
    fn erode_matches_brute_force_on_random_images() {
        let mut rng = StdRng::seed_from_u64(13);
        for &side in &[3usize, 5] {
            let se = StructuringElement::square(side).unwrap();
            for _ in 0..10 {
                let img = random_image(&mut rng, 16, 16);
                let out = gray_erode(&img, &se).unwrap();
                assert_eq!(out.pixels(), &erode_brute(&img, side)[..]);
            }
        }
    }

    #[test]
    fn tophat_constant_signal_is_zero() {
        let s = vec![9.0; 12];
        let se = StructuringElement::line(3).unwrap();
        assert!(black_tophat(&s, &se).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tophat_isolated_dip() {
        let s = [10.0, 10.0, 2.0, 10.0, 10.0];
        let se = StructuringElement::line(3).unwrap();
        let th = black_tophat(&s, &se).unwrap();
        assert_eq!(th, vec![0.0, 0.0, 8.0, 0.0, 0.0]);
        // agrees with the brute-force closing oracle
        let closed = close_signal(&s, &se).unwrap();
        assert_eq!(closed, close_brute(&s, 3));
    }

    #[test]
    fn tophat_monotone_ramp_is_zero() {
        let s: Vec<f32> = (0..20).map(|i| i as f32 * 3.0).collect();
        let se = StructuringElement::line(5).unwrap();
        let closed = close_signal(&s, &se).unwrap();
        assert_eq!(closed, close_brute(&s, 5));
        let th = black_tophat(&s, &se).unwrap();
        assert!(th.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tophat_rejects_long_element() {
        let s = vec![1.0; 3];
        let se = StructuringElement::line(5).unwrap();
        assert!(matches!(black_tophat(&s, &se), Err(Error::Dimension(_))));
    }

    #[test]
    fn closing_matches_brute_force_on_random_signals() {
        let mut rng = StdRng::seed_from_u64(17);
        for &len in &[3usize, 5, 9] {
            let se = StructuringElement::line(len).unwrap();
            for _ in 0..20 {
                let s: Vec<f32> = (0..32).map(|_| rng.random_range(0.0..100.0f32)).collect();
                assert_eq!(close_signal(&s, &se).unwrap(), close_brute(&s, len));
            }
        }
    }

    #[test]
    fn preprocess_identity_when_full_span_gamma_one() {
        let img = GrayImage::from_fn(16, 2, |x, y| (x * 17 + y) as f32 % 256.0);
        let mut img = img;
        img.set(0, 0, 0.0);
        img.set(1, 0, 255.0);
        let out = preprocess_roi(&img, 1.0).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn preprocess_endpoints_fixed() {
        let img = GrayImage::from_pixels(2, 1, vec![0.0, 255.0]).unwrap();
        for gamma in [0.4, 1.0, 2.2] {
            let out = preprocess_roi(&img, gamma).unwrap();
            assert!(out.get(0, 0).abs() < 1e-4);
            assert!((out.get(1, 0) - 255.0).abs() < 1e-3);
        }
    }

    #[test]
    fn preprocess_midgray_gamma_two() {
        // 255 * (128/255)^2 = 64.2509...
        let img = GrayImage::from_pixels(3, 1, vec![0.0, 128.0, 255.0]).unwrap();
        let out = preprocess_roi(&img, 2.0).unwrap();
        assert!((out.get(1, 0) - 64.2509804).abs() < 1e-3);
    }

    #[test]
    fn preprocess_flat_image_unchanged() {
        let img = GrayImage::from_fn(4, 4, |_, _| 77.0);
        assert_eq!(preprocess_roi(&img, 2.0).unwrap(), img);
    }

    #[test]
    fn resize_noop_at_target_width() {
        let img = GrayImage::from_fn(10, 20, |x, y| (x + y) as f32);
        let out = resize_to_width(&img, 10).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_preserves_aspect() {
        let img = GrayImage::new(100, 200);
        let out = resize_to_width(&img, 50).unwrap();
        assert_eq!((out.width(), out.height()), (50, 100));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::from_fn(37, 53, |_, _| 93.0);
        for target in [11, 80] {
            let out = resize_to_width(&img, target).unwrap();
            assert!(out.pixels().iter().all(|&v| (v - 93.0).abs() < 1e-4));
        }
    }

    #[test]
    fn resize_preserves_mean_on_smooth_images() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..5 {
            // smooth image: bilinear upsample of a coarse random grid
            let coarse = random_image(&mut rng, 8, 8);
            let img = resize_exact(&coarse, 64, 64).unwrap();
            let out = resize_to_width(&img, 40).unwrap();
            assert!((out.mean() - img.mean()).abs() <= 1.0);
        }
    }

    #[test]
    fn rotate_zero_angle_is_identity() {
        let img = GrayImage::from_fn(12, 9, |x, y| (3 * x + y) as f32);
        let map = RotationMap::new(0.0, (5.5, 4.0));
        assert_eq!(rotate(&img, &map).unwrap(), img);
        let p = (3.2, 7.1);
        let q = map.forward(p);
        assert!((q.0 - p.0).abs() < 1e-12 && (q.1 - p.1).abs() < 1e-12);
    }

    #[test]
    fn rotation_map_round_trip() {
        let map = RotationMap::new(17.3, (40.0, 25.0));
        for p in [(0.0, 0.0), (13.7, 88.2), (-5.0, 3.0)] {
            let back = map.backward(map.forward(p));
            assert!((back.0 - p.0).hypot(back.1 - p.1) < 0.5);
        }
    }

    #[test]
    fn rotate_stripe_matches_mapped_samples() {
        // vertical bright stripe; after rotation, sampling along the mapped
        // line must reproduce the stripe intensity
        let img = GrayImage::from_fn(64, 64, |x, _| if (30..34).contains(&x) { 200.0 } else { 20.0 });
        let map = RotationMap::new(9.0, (31.5, 31.5));
        let rot = rotate(&img, &map).unwrap();
        for y in 12..52 {
            let q = map.forward((31.5, y as f64));
            let v = rot.sample_bilinear(q.0, q.1).unwrap();
            assert!((v - 200.0).abs() < 12.0, "y={y} v={v}");
        }
    }

    #[test]
    fn rotate_round_trip_interior_error_small() {
        let mut rng = StdRng::seed_from_u64(29);
        let coarse = random_image(&mut rng, 8, 8);
        let img = resize_exact(&coarse, 64, 64).unwrap();
        let map = RotationMap::new(7.0, (31.5, 31.5));
        let inv = RotationMap::new(-7.0, (31.5, 31.5));
        let back = rotate(&rotate(&img, &map).unwrap(), &inv).unwrap();
        let mut err = 0.0f64;
        let mut n = 0usize;
        for y in 10..54 {
            for x in 10..54 {
                err += (back.get(x, y) - img.get(x, y)).abs() as f64;
                n += 1;
            }
        }
        assert!(err / n as f64 <= 2.0, "mae {}", err / n as f64);
    }

    #[test]
    fn crop_full_image_identity() {
        let img = GrayImage::from_fn(10, 8, |x, y| (x * y) as f32);
        let (out, off) = crop(&img, CropRect::new(0, 0, 10, 8)).unwrap();
        assert_eq!(out, img);
        assert_eq!(off, (0, 0));
    }

    #[test]
    fn crop_interior_maps_pixels() {
        let img = GrayImage::from_fn(30, 30, |x, y| (x + 100 * y) as f32);
        let (out, off) = crop(&img, CropRect::new(5, 5, 10, 10)).unwrap();
        assert_eq!(off, (5, 5));
        assert_eq!((out.width(), out.height()), (10, 10));
        assert_eq!(out.get(0, 0), img.get(5, 5));
        assert_eq!(out.get(9, 9), img.get(14, 14));
    }

    #[test]
    fn crop_clamps_past_border() {
        let img = GrayImage::from_fn(20, 20, |x, _| x as f32);
        let (out, off) = crop(&img, CropRect::new(15, 3, 10, 5)).unwrap();
        assert_eq!(off, (15, 3));
        assert_eq!((out.width(), out.height()), (5, 5));
    }

    #[test]
    fn crop_outside_errors() {
        let img = GrayImage::new(20, 20);
        assert!(matches!(
            crop(&img, CropRect::new(25, 0, 5, 5)),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn from_pixels_validates_length() {
        assert!(GrayImage::from_pixels(4, 4, vec![0.0; 15]).is_err());
    }
}
