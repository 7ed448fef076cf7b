//! cephscale — calibrated-ruler detection and pixel-to-millimeter
//! calibration for lateral cephalograms.
//!
//! A physical ruler with 5 mm major marks is imaged next to the patient's
//! head; recovering its mark positions yields the pixel-millimeter ratio
//! (PMR) needed to convert landmark distances into real lengths. The
//! pipeline stages are:
//!
//! 1. **voting** – coarse scale-corner localization by regression-tree
//!    voting over SIFT-style patch descriptors, coarse-to-fine.
//! 2. **edge** – left scale edge inside the cropped ROI: grayscale
//!    erosion, horizontal Sobel, adaptive binarization, Hough transform.
//! 3. **corner** – corner refinement by descriptor matching against a
//!    reference ROI, with patch size and orientation assigned from the
//!    coarse detection.
//! 4. **marks** – column tracing, black top-hat mark extraction,
//!    major-mark gating and interval-based stain filtering.
//! 5. **pipeline** – orchestration, coordinate mapping back to the
//!    original image, and PMR computation.
//!
//! A deterministic synthetic-scene generator (`synth`) stands in for
//! clinical data, and `eval` computes the benchmark metrics (MPE, MRE,
//! SDR).

pub mod corner;
pub mod descriptor;
pub mod edge;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod marks;
pub mod pipeline;
pub mod synth;
pub mod voting;

pub use error::{Error, Result};
pub use image::{GrayImage, RotationMap, SignedImage, StructuringElement};

pub(crate) mod seed {
    /// splitmix64 step, used to derive independent RNG streams from one
    /// base seed plus a couple of tag words.
    pub(crate) fn mix(base: u64, a: u64, b: u64) -> u64 {
        let mut z = base ^ a.rotate_left(17) ^ b.rotate_left(41);
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// FNV-1a over an id string; stable across runs and platforms.
    pub(crate) fn fnv1a(s: &str) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in s.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}
