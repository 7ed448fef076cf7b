//! Coarse scale-corner localization by regression-tree voting.
//!
//! CART regression trees map patch descriptors to displacement votes toward
//! a scale corner. Prediction runs coarse to fine over downscaled copies of
//! the image: the first stage samples patches over the whole frame, later
//! stages sample in a neighborhood of the previous estimate, and each stage
//! averages `center + predicted displacement` over its patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptor::{self, describe_patch_into, PatchDescriptor, PatchSpec, DESCRIPTOR_LEN};
use crate::error::{Error, Result};
use crate::image::{resize_to_width, GrayImage};
use crate::seed::mix;

const SAMPLE_TAG: u64 = 0x5341_4d50;
const FOREST_TAG: u64 = 0x464f_5253;

/// Displacement vote from a patch center toward the corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: u16,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        dx: f64,
        dy: f64,
        count: u32,
    },
}

/// Binary regression tree over descriptor components; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("tree has no nodes".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Routes a descriptor to its leaf: `value < threshold` goes left.
    pub fn predict(&self, v: &[f32]) -> Displacement {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if v[*feature as usize] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { dx, dy, .. } => return Displacement { dx: *dx, dy: *dy },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Mean displacement over a forest; errors on an empty forest.
pub fn predict_displacement(forest: &[RegressionTree], v: &[f32]) -> Result<Displacement> {
    if forest.is_empty() {
        return Err(Error::Training("empty forest".into()));
    }
    let mut dx = 0.0;
    let mut dy = 0.0;
    for tree in forest {
        let d = tree.predict(v);
        dx += d.dx;
        dy += d.dy;
    }
    let n = forest.len() as f64;
    Ok(Displacement {
        dx: dx / n,
        dy: dy / n,
    })
}

/// Voting over predicted displacements: `L = sum(p_i + d_i) / m`.
pub fn vote_location(
    patch_centers: &[(f64, f64)],
    displacements: &[Displacement],
) -> Result<(f64, f64)> {
    if patch_centers.is_empty() || patch_centers.len() != displacements.len() {
        return Err(Error::Dimension(format!(
            "{} centers vs {} displacements",
            patch_centers.len(),
            displacements.len()
        )));
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (p, d) in patch_centers.iter().zip(displacements) {
        sx += p.0 + d.dx;
        sy += p.1 + d.dy;
    }
    let m = patch_centers.len() as f64;
    Ok((sx / m, sy / m))
}

// ── Exact CART fitting ────────────────────────────────────────────────────

struct FeatureMatrix {
    n: usize,
    data: Vec<f32>, // row-major n x DESCRIPTOR_LEN
}

impl FeatureMatrix {
    fn row(&self, i: u32) -> &[f32] {
        &self.data[i as usize * DESCRIPTOR_LEN..][..DESCRIPTOR_LEN]
    }

    fn value(&self, i: u32, f: usize) -> f32 {
        self.data[i as usize * DESCRIPTOR_LEN + f]
    }
}

// Per-feature sorted views of the working sample multiset. All features hold
// the same multiset over any node range; splits partition every feature's
// arrays in tandem, which keeps them sorted without re-sorting per node.
struct SortedFeatures {
    idx: Vec<Vec<u32>>,
    val: Vec<Vec<f32>>,
    tdx: Vec<Vec<f32>>,
    tdy: Vec<Vec<f32>>,
}

impl SortedFeatures {
    fn build(feats: &FeatureMatrix, targets: &[Displacement], samples: &[u32]) -> Self {
        let n = samples.len();
        let mut idx = Vec::with_capacity(DESCRIPTOR_LEN);
        let mut val = Vec::with_capacity(DESCRIPTOR_LEN);
        let mut tdx = Vec::with_capacity(DESCRIPTOR_LEN);
        let mut tdy = Vec::with_capacity(DESCRIPTOR_LEN);
        for f in 0..DESCRIPTOR_LEN {
            let mut order: Vec<u32> = samples.to_vec();
            order.sort_unstable_by(|&a, &b| {
                feats
                    .value(a, f)
                    .partial_cmp(&feats.value(b, f))
                    .expect("descriptor values are finite")
                    .then(a.cmp(&b))
            });
            let mut fv = Vec::with_capacity(n);
            let mut fx = Vec::with_capacity(n);
            let mut fy = Vec::with_capacity(n);
            for &i in &order {
                fv.push(feats.value(i, f));
                fx.push(targets[i as usize].dx as f32);
                fy.push(targets[i as usize].dy as f32);
            }
            idx.push(order);
            val.push(fv);
            tdx.push(fx);
            tdy.push(fy);
        }
        Self { idx, val, tdx, tdy }
    }
}

struct BestSplit {
    cost: f64,
    feature: usize,
    threshold: f32,
    n_left: usize,
}

struct TreeBuilder<'a> {
    feats: &'a FeatureMatrix,
    targets: &'a [Displacement],
    sorted: SortedFeatures,
    goes_left: Vec<bool>,
    scratch_idx: Vec<u32>,
    scratch_val: Vec<f32>,
    scratch_tdx: Vec<f32>,
    scratch_tdy: Vec<f32>,
    nodes: Vec<Node>,
    max_depth: usize,
    min_leaf: usize,
}

impl TreeBuilder<'_> {
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> u32 {
        let n = hi - lo;
        // node statistics from the exact f64 targets; the f32 copies in the
        // sorted arrays only drive the split scan
        let (mut sx, mut sy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for k in lo..hi {
            let t = self.targets[self.sorted.idx[0][k] as usize];
            sx += t.dx;
            sy += t.dy;
            sxx += t.dx * t.dx;
            syy += t.dy * t.dy;
        }
        let nf = n as f64;
        let node_sse = (sxx - sx * sx / nf) + (syy - sy * sy / nf);

        let mut best: Option<BestSplit> = None;
        if depth < self.max_depth && n >= 2 * self.min_leaf && node_sse > 1e-9 {
            for f in 0..DESCRIPTOR_LEN {
                let vals = &self.sorted.val[f][lo..hi];
                let tdx = &self.sorted.tdx[f][lo..hi];
                let tdy = &self.sorted.tdy[f][lo..hi];
                let (mut lsx, mut lsy, mut lsxx, mut lsyy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
                for k in 1..n {
                    let dx = tdx[k - 1] as f64;
                    let dy = tdy[k - 1] as f64;
                    lsx += dx;
                    lsy += dy;
                    lsxx += dx * dx;
                    lsyy += dy * dy;
                    if k < self.min_leaf || n - k < self.min_leaf {
                        continue;
                    }
                    let va = vals[k - 1];
                    let vb = vals[k];
                    if !(va < vb) {
                        continue;
                    }
                    let thr = 0.5 * (va + vb);
                    // the midpoint must strictly separate the two values,
                    // so routing reproduces the training partition exactly
                    if !(va < thr && thr <= vb) {
                        continue;
                    }
                    let kl = k as f64;
                    let kr = (n - k) as f64;
                    let cost = (lsxx - lsx * lsx / kl) + (lsyy - lsy * lsy / kl)
                        + ((sxx - lsxx) - (sx - lsx) * (sx - lsx) / kr)
                        + ((syy - lsyy) - (sy - lsy) * (sy - lsy) / kr);
                    if best.as_ref().is_none_or(|b| cost < b.cost) {
                        best = Some(BestSplit {
                            cost,
                            feature: f,
                            threshold: thr,
                            n_left: k,
                        });
                    }
                }
            }
        }

        let Some(split) = best else {
            self.nodes.push(Node::Leaf {
                dx: sx / nf,
                dy: sy / nf,
                count: n as u32,
            });
            return (self.nodes.len() - 1) as u32;
        };

        // predicate per base sample, then stable-partition every feature
        for (i, flag) in self.goes_left.iter_mut().enumerate() {
            *flag = self.feats.value(i as u32, split.feature) < split.threshold;
        }
        for f in 0..DESCRIPTOR_LEN {
            let mut l = 0usize;
            let mut r = split.n_left;
            for k in lo..hi {
                let sample = self.sorted.idx[f][k];
                let slot = if self.goes_left[sample as usize] { &mut l } else { &mut r };
                self.scratch_idx[*slot] = sample;
                self.scratch_val[*slot] = self.sorted.val[f][k];
                self.scratch_tdx[*slot] = self.sorted.tdx[f][k];
                self.scratch_tdy[*slot] = self.sorted.tdy[f][k];
                *slot += 1;
            }
            debug_assert_eq!(l, split.n_left);
            debug_assert_eq!(r, n);
            self.sorted.idx[f][lo..hi].copy_from_slice(&self.scratch_idx[..n]);
            self.sorted.val[f][lo..hi].copy_from_slice(&self.scratch_val[..n]);
            self.sorted.tdx[f][lo..hi].copy_from_slice(&self.scratch_tdx[..n]);
            self.sorted.tdy[f][lo..hi].copy_from_slice(&self.scratch_tdy[..n]);
        }

        let slot = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature as u16,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let mid = lo + split.n_left;
        let left = self.build(lo, mid, depth + 1);
        let right = self.build(mid, hi, depth + 1);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[slot]
        {
            *l = left;
            *r = right;
        }
        slot as u32
    }
}

fn fit_tree(
    feats: &FeatureMatrix,
    targets: &[Displacement],
    samples: &[u32],
    max_depth: usize,
    min_leaf: usize,
) -> RegressionTree {
    let n = samples.len();
    let mut builder = TreeBuilder {
        feats,
        targets,
        sorted: SortedFeatures::build(feats, targets, samples),
        goes_left: vec![false; feats.n],
        scratch_idx: vec![0; n],
        scratch_val: vec![0.0; n],
        scratch_tdx: vec![0.0; n],
        scratch_tdy: vec![0.0; n],
        nodes: Vec::new(),
        max_depth,
        min_leaf,
    };
    builder.build(0, n, 0);
    RegressionTree {
        nodes: builder.nodes,
    }
}

/// Greedy exact CART over (descriptor, displacement) pairs: each split
/// minimizes the summed left/right squared deviation of dx and dy, with
/// candidate thresholds at midpoints of adjacent distinct feature values.
pub fn train_tree(
    samples: &[(PatchDescriptor, Displacement)],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    if samples.is_empty() {
        return Err(Error::Training("cannot train a tree on zero samples".into()));
    }
    if min_leaf == 0 {
        return Err(Error::InvalidParam("min_leaf must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(samples.len() * DESCRIPTOR_LEN);
    let mut targets = Vec::with_capacity(samples.len());
    for (d, t) in samples {
        data.extend_from_slice(d.values());
        targets.push(*t);
    }
    let feats = FeatureMatrix {
        n: samples.len(),
        data,
    };
    let indices: Vec<u32> = (0..samples.len() as u32).collect();
    Ok(fit_tree(&feats, &targets, &indices, max_depth, min_leaf))
}

// ── Multiscale predictor ──────────────────────────────────────────────────

/// Parameters of one prediction stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub scale: f64,
    pub n_patches: usize,
    pub patch_half_width: u32,
    /// Sampling neighborhood of the previous estimate, in full-resolution
    /// pixels; unused at the first stage, which samples the whole image.
    pub search_radius: f64,
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stages: Vec<StageConfig>,
    pub trees_per_stage: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub normalize_width: usize,
}

impl TrainConfig {
    /// The fast two-scale configuration used by the pipeline.
    pub fn two_scale() -> Self {
        TrainConfig {
            stages: vec![
                StageConfig {
                    scale: 0.125,
                    n_patches: 300,
                    patch_half_width: 12,
                    search_radius: 0.0,
                },
                StageConfig {
                    scale: 0.25,
                    n_patches: 200,
                    patch_half_width: 12,
                    search_radius: 80.0,
                },
            ],
            trees_per_stage: 8,
            max_depth: 12,
            min_leaf: 5,
            normalize_width: 1960,
        }
    }

    /// The four-scale baseline (0.125, 0.25, 0.5, 1.0).
    pub fn four_scale() -> Self {
        let mut cfg = Self::two_scale();
        cfg.stages.push(StageConfig {
            scale: 0.5,
            n_patches: 150,
            patch_half_width: 12,
            search_radius: 50.0,
        });
        cfg.stages.push(StageConfig {
            scale: 1.0,
            n_patches: 100,
            patch_half_width: 12,
            search_radius: 30.0,
        });
        cfg
    }
}

/// One trained stage: a forest plus its sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub scale: f64,
    pub forest: Vec<RegressionTree>,
    pub patch_half_width: u32,
    pub n_patches: usize,
    pub search_radius: f64,
}

/// Ordered coarse-to-fine stages targeting one corner point.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerPredictor {
    stages: Vec<StageModel>,
}

impl CornerPredictor {
    pub fn from_stages(stages: Vec<StageModel>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Training("predictor needs at least one stage".into()));
        }
        for pair in stages.windows(2) {
            if pair[1].scale <= pair[0].scale {
                return Err(Error::Format("stage scales must be strictly increasing".into()));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[StageModel] {
        &self.stages
    }

    /// Truncated copy using only the first `n` stages.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::from_stages(self.stages.iter().take(n).cloned().collect())
    }

    /// Runs the coarse-to-fine prediction on a normalized image and returns
    /// the corner estimate in that image's coordinates.
    pub fn predict(&self, image: &GrayImage, seed: u64) -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut estimate: Option<(f64, f64)> = None;
        let mut buf = vec![0.0f32; DESCRIPTOR_LEN];
        for stage in &self.stages {
            if stage.forest.is_empty() {
                return Err(Error::Training("stage has an empty forest".into()));
            }
            let target_w = ((image.width() as f64 * stage.scale).round() as usize).max(32);
            let scaled = resize_to_width(image, target_w)?;
            let fx = scaled.width() as f64 / image.width() as f64;
            let fy = scaled.height() as f64 / image.height() as f64;
            let anchor = estimate.map(|(ex, ey)| ((ex * fx, ey * fy), stage.search_radius * fx));
            let centers = sample_patch_centers(
                scaled.width(),
                scaled.height(),
                stage.patch_half_width,
                stage.n_patches,
                anchor,
                &mut rng,
            );
            let mut displacements = Vec::with_capacity(centers.len());
            for &c in &centers {
                let spec = PatchSpec::new(c, stage.patch_half_width, 0.0)?;
                describe_patch_into(&scaled, &spec, &mut buf)?;
                displacements.push(predict_displacement(&stage.forest, &buf)?);
            }
            let (lx, ly) = vote_location(&centers, &displacements)?;
            estimate = Some((lx / fx, ly / fy));
        }
        estimate.ok_or_else(|| Error::Training("predictor has no stages".into()))
    }
}

/// The two per-corner predictors plus the width images are normalized to.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorPair {
    pub upper: CornerPredictor,
    pub lower: CornerPredictor,
    pub normalize_width: usize,
}

/// Uniformly samples patch centers within the region where the descriptor
/// footprint fits; either over the whole image or within a square
/// neighborhood of an anchor.
pub fn sample_patch_centers(
    width: usize,
    height: usize,
    half_width: u32,
    n: usize,
    anchor: Option<((f64, f64), f64)>,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let margin = descriptor::sample_extent(half_width) + 1.0;
    let (mut x_lo, mut x_hi) = (margin, width as f64 - 1.0 - margin);
    let (mut y_lo, mut y_hi) = (margin, height as f64 - 1.0 - margin);
    if let Some(((ax, ay), radius)) = anchor {
        x_lo = x_lo.max(ax - radius);
        x_hi = x_hi.min(ax + radius);
        y_lo = y_lo.max(ay - radius);
        y_hi = y_hi.min(ay + radius);
    }
    // degenerate ranges collapse to the feasible center
    if x_hi < x_lo {
        let c = ((width as f64 - 1.0) / 2.0).clamp(margin, (width as f64 - 1.0 - margin).max(margin));
        x_lo = c;
        x_hi = c;
    }
    if y_hi < y_lo {
        let c =
            ((height as f64 - 1.0) / 2.0).clamp(margin, (height as f64 - 1.0 - margin).max(margin));
        y_lo = c;
        y_hi = c;
    }
    (0..n)
        .map(|_| {
            let x = if x_hi > x_lo { rng.random_range(x_lo..x_hi) } else { x_lo };
            let y = if y_hi > y_lo { rng.random_range(y_lo..y_hi) } else { y_lo };
            (x, y)
        })
        .collect()
}

// ── Training ──────────────────────────────────────────────────────────────

/// Which corner a predictor targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CornerTarget {
    Upper,
    Lower,
}

impl CornerTarget {
    fn tag(self) -> u64 {
        match self {
            CornerTarget::Upper => 1,
            CornerTarget::Lower => 2,
        }
    }
}

/// Per-image training annotation in original image pixels.
#[derive(Debug, Clone)]
pub struct TrainAnnotation {
    pub id: String,
    pub upper: (f64, f64),
    pub lower: (f64, f64),
}

/// Pairs corpus ids with annotation lookups, failing with the offending
/// image name when an annotation is missing.
pub fn pair_annotations(
    ids: &[String],
    lookup: impl Fn(&str) -> Option<((f64, f64), (f64, f64))>,
) -> Result<Vec<TrainAnnotation>> {
    ids.iter()
        .map(|id| {
            let (upper, lower) = lookup(id)
                .ok_or_else(|| Error::Training(format!("missing annotation for image {id}")))?;
            Ok(TrainAnnotation {
                id: id.clone(),
                upper,
                lower,
            })
        })
        .collect()
}

/// Per-stage fit statistics reported after training.
#[derive(Debug, Clone)]
pub struct StageTrainStats {
    pub scale: f64,
    pub n_samples: usize,
    /// Mean |predicted - true| displacement over the training samples, in
    /// full-resolution pixels.
    pub mean_residual_px: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub upper: Vec<StageTrainStats>,
    pub lower: Vec<StageTrainStats>,
}

struct StageSamples {
    targets: Vec<Displacement>,
    features: Vec<f32>,
}

/// Trains the upper and lower predictors with a shared pass over the corpus.
/// Deterministic given the seed; images load once each via `load_image`.
pub fn train_predictor_pair<F>(
    corpus: &[TrainAnnotation],
    load_image: F,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(PredictorPair, TrainReport)>
where
    F: Fn(&str) -> Result<GrayImage> + Sync,
{
    if corpus.is_empty() {
        return Err(Error::Training("empty training corpus".into()));
    }
    if cfg.stages.is_empty() || cfg.trees_per_stage == 0 {
        return Err(Error::InvalidParam("training needs stages and trees".into()));
    }
    let targets = [CornerTarget::Upper, CornerTarget::Lower];

    // one pass per image: normalize once, then extract per-stage, per-corner
    // descriptor/displacement samples
    let per_image: Vec<Vec<StageSamples>> = corpus
        .par_iter()
        .enumerate()
        .map(|(img_idx, item)| -> Result<Vec<StageSamples>> {
            let original = load_image(&item.id)?;
            let normalized = resize_to_width(&original, cfg.normalize_width)?;
            let nx = normalized.width() as f64 / original.width() as f64;
            let ny = normalized.height() as f64 / original.height() as f64;
            let corners_norm = [
                (item.upper.0 * nx, item.upper.1 * ny),
                (item.lower.0 * nx, item.lower.1 * ny),
            ];
            let mut out = Vec::with_capacity(cfg.stages.len() * 2);
            let mut buf = vec![0.0f32; DESCRIPTOR_LEN];
            for (stage_idx, stage) in cfg.stages.iter().enumerate() {
                let target_w =
                    ((normalized.width() as f64 * stage.scale).round() as usize).max(32);
                let scaled = resize_to_width(&normalized, target_w)?;
                let fx = scaled.width() as f64 / normalized.width() as f64;
                let fy = scaled.height() as f64 / normalized.height() as f64;
                for (t_idx, target) in targets.iter().enumerate() {
                    let corner = (corners_norm[t_idx].0 * fx, corners_norm[t_idx].1 * fy);
                    // later stages sample like prediction does, in a
                    // neighborhood anchored at the (training-time) corner
                    let anchor = if stage_idx == 0 {
                        None
                    } else {
                        Some((corner, stage.search_radius * fx))
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(
                        seed,
                        SAMPLE_TAG ^ ((stage_idx as u64) << 8) ^ target.tag(),
                        img_idx as u64,
                    ));
                    let centers = sample_patch_centers(
                        scaled.width(),
                        scaled.height(),
                        stage.patch_half_width,
                        stage.n_patches,
                        anchor,
                        &mut rng,
                    );
                    let mut samples = StageSamples {
                        targets: Vec::with_capacity(centers.len()),
                        features: Vec::with_capacity(centers.len() * DESCRIPTOR_LEN),
                    };
                    for &c in &centers {
                        let spec = PatchSpec::new(c, stage.patch_half_width, 0.0)?;
                        describe_patch_into(&scaled, &spec, &mut buf)?;
                        samples.features.extend_from_slice(&buf);
                        samples.targets.push(Displacement {
                            dx: corner.0 - c.0,
                            dy: corner.1 - c.1,
                        });
                    }
                    out.push(samples);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut predictors = Vec::new();
    let mut report = TrainReport::default();
    for (t_idx, target) in targets.iter().enumerate() {
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let stats = match target {
            CornerTarget::Upper => &mut report.upper,
            CornerTarget::Lower => &mut report.lower,
        };
        for (stage_idx, stage) in cfg.stages.iter().enumerate() {
            let slot = stage_idx * 2 + t_idx;
            let mut features = Vec::new();
            let mut displacement_targets = Vec::new();
            for image_samples in &per_image {
                features.extend_from_slice(&image_samples[slot].features);
                displacement_targets.extend_from_slice(&image_samples[slot].targets);
            }
            let n = displacement_targets.len();
            if n == 0 {
                return Err(Error::Training("no training samples extracted".into()));
            }
            let feats = FeatureMatrix { n, data: features };
            let forest: Vec<RegressionTree> = (0..cfg.trees_per_stage)
                .into_par_iter()
                .map(|tree_idx| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(
                        seed,
                        FOREST_TAG ^ ((stage_idx as u64) << 8) ^ target.tag(),
                        tree_idx as u64,
                    ));
                    let bootstrap: Vec<u32> =
                        (0..n).map(|_| rng.random_range(0..n as u32)).collect();
                    fit_tree(
                        &feats,
                        &displacement_targets,
                        &bootstrap,
                        cfg.max_depth,
                        cfg.min_leaf,
                    )
                })
                .collect();

            // fit residual in full-resolution pixels
            let mut residual = 0.0;
            for i in 0..n {
                let d = predict_displacement(&forest, feats.row(i as u32))?;
                let t = displacement_targets[i];
                residual += ((d.dx - t.dx).powi(2) + (d.dy - t.dy).powi(2)).sqrt();
            }
            stats.push(StageTrainStats {
                scale: stage.scale,
                n_samples: n,
                mean_residual_px: residual / n as f64 / stage.scale,
            });

            stages.push(StageModel {
                scale: stage.scale,
                forest,
                patch_half_width: stage.patch_half_width,
                n_patches: stage.n_patches,
                search_radius: stage.search_radius,
            });
        }
        predictors.push(CornerPredictor::from_stages(stages)?);
    }
    let lower = predictors.pop().expect("two predictors");
    let upper = predictors.pop().expect("two predictors");
    Ok((
        PredictorPair {
            upper,
            lower,
            normalize_width: cfg.normalize_width,
        },
        report,
    ))
}

// ── Model persistence ─────────────────────────────────────────────────────

const MODEL_MAGIC: &str = "cephscale-model v1";

impl PredictorPair {
    /// Versioned, self-describing text serialization. Floats use the
    /// shortest round-trip representation, so serialize -> parse ->
    /// serialize is byte-identical.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        writeln!(out, "{MODEL_MAGIC}").unwrap();
        writeln!(out, "normalize_width {}", self.normalize_width).unwrap();
        for (name, predictor) in [("upper", &self.upper), ("lower", &self.lower)] {
            writeln!(out, "corner {name}").unwrap();
            writeln!(out, "stages {}", predictor.stages.len()).unwrap();
            for stage in &predictor.stages {
                writeln!(
                    out,
                    "stage scale {} half_width {} n_patches {} search_radius {}",
                    stage.scale, stage.patch_half_width, stage.n_patches, stage.search_radius
                )
                .unwrap();
                writeln!(out, "trees {}", stage.forest.len()).unwrap();
                for tree in &stage.forest {
                    writeln!(out, "tree nodes {}", tree.nodes.len()).unwrap();
                    for node in &tree.nodes {
                        match node {
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => writeln!(out, "s {feature} {threshold} {left} {right}").unwrap(),
                            Node::Leaf { dx, dy, count } => {
                                writeln!(out, "l {dx} {dy} {count}").unwrap()
                            }
                        }
                    }
                }
            }
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |msg: &str| Error::Format(format!("model: {msg}"));
        let mut next = |what: &str| -> Result<&str> {
            lines.next().ok_or_else(|| bad(&format!("unexpected end before {what}")))
        };
        if next("magic")?.trim() != MODEL_MAGIC {
            return Err(bad("bad magic string"));
        }
        let nw_line = next("normalize_width")?;
        let normalize_width: usize = nw_line
            .strip_prefix("normalize_width ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad normalize_width"))?;

        let mut parse_corner = |expect: &str| -> Result<CornerPredictor> {
            let line = next("corner header")?;
            if line.trim() != format!("corner {expect}") {
                return Err(bad(&format!("expected corner {expect}")));
            }
            let n_stages: usize = next("stages")?
                .strip_prefix("stages ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("bad stage count"))?;
            let mut stages = Vec::with_capacity(n_stages);
            for _ in 0..n_stages {
                let header = next("stage header")?;
                let tokens: Vec<&str> = header.split_whitespace().collect();
                if tokens.len() != 9
                    || tokens[0] != "stage"
                    || tokens[1] != "scale"
                    || tokens[3] != "half_width"
                    || tokens[5] != "n_patches"
                    || tokens[7] != "search_radius"
                {
                    return Err(bad("bad stage header"));
                }
                let scale: f64 = tokens[2].parse().map_err(|_| bad("bad scale"))?;
                let patch_half_width: u32 =
                    tokens[4].parse().map_err(|_| bad("bad half_width"))?;
                let n_patches: usize = tokens[6].parse().map_err(|_| bad("bad n_patches"))?;
                let search_radius: f64 =
                    tokens[8].parse().map_err(|_| bad("bad search_radius"))?;
                let n_trees: usize = next("trees")?
                    .strip_prefix("trees ")
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad("bad tree count"))?;
                let mut forest = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let n_nodes: usize = next("tree header")?
                        .strip_prefix("tree nodes ")
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| bad("bad node count"))?;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        let line = next("node")?;
                        let t: Vec<&str> = line.split_whitespace().collect();
                        match t.as_slice() {
                            ["s", feature, threshold, left, right] => nodes.push(Node::Split {
                                feature: feature.parse().map_err(|_| bad("bad feature"))?,
                                threshold: threshold.parse().map_err(|_| bad("bad threshold"))?,
                                left: left.parse().map_err(|_| bad("bad child"))?,
                                right: right.parse().map_err(|_| bad("bad child"))?,
                            }),
                            ["l", dx, dy, count] => nodes.push(Node::Leaf {
                                dx: dx.parse().map_err(|_| bad("bad leaf dx"))?,
                                dy: dy.parse().map_err(|_| bad("bad leaf dy"))?,
                                count: count.parse().map_err(|_| bad("bad leaf count"))?,
                            }),
                            _ => return Err(bad("bad node line")),
                        }
                    }
                    forest.push(RegressionTree::from_nodes(nodes)?);
                }
                stages.push(StageModel {
                    scale,
                    forest,
                    patch_half_width,
                    n_patches,
                    search_radius,
                });
            }
            CornerPredictor::from_stages(stages)
        };

        let upper = parse_corner("upper")?;
        let lower = parse_corner("lower")?;
        if next("end")?.trim() != "end" {
            return Err(bad("missing end marker"));
        }
        Ok(PredictorPair {
            upper,
            lower,
            normalize_width,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
