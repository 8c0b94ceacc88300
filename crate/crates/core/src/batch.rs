//! Multi-view batch construction: `B` distinct sources, `K` augmented views each.
//!
//! Randomness is counter-based. The sources of step `t` come from stream 0 of a
//! generator keyed by `(seed, t)`; view `v` of that step uses stream `v + 1`. Serial
//! and parallel construction therefore produce identical batches.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{ImageShape, LabeledDataset};
use crate::error::{Error, Result};
use crate::ranking::GroupLabels;
use crate::scalar::Scalar;
use crate::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorAugmentation {
    pub noise_std: f64,
    /// Multiplicative factor drawn uniformly from `[lo, hi]`.
    pub scale_jitter: (f64, f64),
    pub dropout_prob: f64,
}

impl Default for VectorAugmentation {
    fn default() -> Self {
        Self { noise_std: 0.1, scale_jitter: (0.8, 1.2), dropout_prob: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageAugmentation {
    /// Fraction of the source area kept by the random crop.
    pub crop_area_range: (f64, f64),
    /// `(height, width)` of every view; `None` keeps the source size.
    pub output_size: Option<(usize, usize)>,
    pub flip_prob: f64,
    pub color_jitter_strength: f64,
    pub grayscale_prob: f64,
}

impl Default for ImageAugmentation {
    fn default() -> Self {
        Self {
            crop_area_range: (0.08, 1.0),
            output_size: None,
            flip_prob: 0.5,
            color_jitter_strength: 0.5,
            grayscale_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub vector: VectorAugmentation,
    pub image: ImageAugmentation,
    pub seed: u64,
}

const MAX_OUTPUT_SIDE: usize = 4096;

impl AugmentationPolicy {
    /// Views equal their sources (images: resize to `output_size` only).
    pub fn identity(seed: u64) -> Self {
        Self {
            vector: VectorAugmentation { noise_std: 0.0, scale_jitter: (1.0, 1.0), dropout_prob: 0.0 },
            image: ImageAugmentation {
                crop_area_range: (1.0, 1.0),
                output_size: None,
                flip_prob: 0.0,
                color_jitter_strength: 0.0,
                grayscale_prob: 0.0,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.vector;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(v.noise_std >= 0.0 && v.noise_std.is_finite()) {
            return bad("noise_std must be >= 0");
        }
        if !(v.scale_jitter.0 > 0.0 && v.scale_jitter.0 <= v.scale_jitter.1 && v.scale_jitter.1.is_finite()) {
            return bad("scale_jitter must be a range 0 < lo <= hi");
        }
        if !(0.0..1.0).contains(&v.dropout_prob) {
            return bad("dropout_prob must lie in [0, 1)");
        }
        let im = &self.image;
        let (lo, hi) = im.crop_area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("crop_area_range must satisfy 0 < min <= max <= 1");
        }
        if let Some((h, w)) = im.output_size {
            if h == 0 || w == 0 || h > MAX_OUTPUT_SIDE || w > MAX_OUTPUT_SIDE {
                return bad("output_size sides must lie in [1, 4096]");
            }
        }
        if !(0.0..=1.0).contains(&im.flip_prob) || !(0.0..=1.0).contains(&im.grayscale_prob) {
            return bad("flip_prob and grayscale_prob must lie in [0, 1]");
        }
        if !(im.color_jitter_strength >= 0.0 && im.color_jitter_strength.is_finite()) {
            return bad("color_jitter_strength must be >= 0");
        }
        Ok(())
    }
}

/// `B·K` views stored group by group, with their source rows. Carries no class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch<T> {
    pub views: Array2<T>,
    pub groups: GroupLabels,
    pub source_indices: Vec<usize>,
    pub image_shape: Option<ImageShape>,
}

impl<T> ViewBatch<T> {
    pub fn num_groups(&self) -> usize {
        self.groups.num_groups()
    }

    pub fn views_per_group(&self) -> usize {
        self.groups.views_per_group()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one `(seed, step, stream)` triple.
pub fn stream_rng(seed: u64, step: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(step)));
    rng.set_stream(stream);
    rng
}

/// `(sample ⊙ keep) · scale + noise`.
///
/// Draw order: one uniform per coordinate for the dropout mask, one uniform for the
/// scale, one standard normal per coordinate for the noise. All draws happen even when
/// the corresponding setting is a no-op.
pub fn augment_vector<T: Scalar, R: Rng + ?Sized>(
    sample: ArrayView1<'_, T>,
    policy: &VectorAugmentation,
    rng: &mut R,
) -> Array1<T> {
    let keep: Vec<bool> = (0..sample.len())
        .map(|_| rng.random::<f64>() >= policy.dropout_prob)
        .collect();
    let (lo, hi) = policy.scale_jitter;
    let scale = T::of(lo + (hi - lo) * rng.random::<f64>());
    sample
        .iter()
        .zip(keep)
        .map(|(&x, k)| {
            let noise: f64 = rng.sample(StandardNormal);
            let base = if k { x } else { T::zero() };
            base * scale + T::of(policy.noise_std * noise)
        })
        .collect()
}

fn bilinear<T: Scalar>(img: &[T], shape: ImageShape, y: f64, x: f64, ch: usize) -> T {
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let y0 = y.floor().max(0.0) as usize;
    let x0 = x.floor().max(0.0) as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = T::of(y - y0 as f64);
    let fx = T::of(x - x0 as f64);
    let px = |yy: usize, xx: usize| img[(yy * w + xx) * c + ch];
    let top = px(y0, x0) * (T::one() - fx) + px(y0, x1) * fx;
    let bottom = px(y1, x0) * (T::one() - fx) + px(y1, x1) * fx;
    top * (T::one() - fy) + bottom * fy
}

/// Random resized crop, horizontal flip, colour jitter and random grayscale.
///
/// `sample` is one channels-last image of `shape`. Draw order: up to ten
/// `(area, log-aspect)` pairs for the crop (none when the area range is `(1, 1)`, which
/// keeps the whole image), then its offsets, the flip uniform, three
/// jitter factors and the grayscale uniform.
pub fn augment_image<T: Scalar, R: Rng + ?Sized>(
    sample: ArrayView1<'_, T>,
    shape: ImageShape,
    policy: &ImageAugmentation,
    rng: &mut R,
) -> Result<Array1<T>> {
    if sample.len() != shape.len() || shape.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "image of {} values does not match {shape:?}",
            sample.len()
        )));
    }
    let img: Vec<T> = sample.to_vec();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let (oh, ow) = policy.output_size.unwrap_or((h, w));

    let src_area = (h * w) as f64;
    let (lo, hi) = policy.crop_area_range;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    let mut crop = (h, w);
    let attempts = if lo >= 1.0 { 0 } else { 10 };
    for _ in 0..attempts {
        let area = src_area * (lo + (hi - lo) * rng.random::<f64>());
        let ratio = (log_lo + (log_hi - log_lo) * rng.random::<f64>()).exp();
        let cw = (area * ratio).sqrt().round() as usize;
        let chh = (area / ratio).sqrt().round() as usize;
        if (1..=w).contains(&cw) && (1..=h).contains(&chh) {
            crop = (chh, cw);
            break;
        }
    }
    let (ch_, cw_) = crop;
    let top = rng.random_range(0..=h - ch_);
    let left = rng.random_range(0..=w - cw_);
    let flip = rng.random::<f64>() < policy.flip_prob;

    let mut out = vec![T::zero(); oh * ow * c];
    let sy = ch_ as f64 / oh as f64;
    let sx = cw_ as f64 / ow as f64;
    for oy in 0..oh {
        let y = (top as f64 + (oy as f64 + 0.5) * sy - 0.5).clamp(top as f64, (top + ch_ - 1) as f64);
        for ox in 0..ow {
            let x = (left as f64 + (ox as f64 + 0.5) * sx - 0.5).clamp(left as f64, (left + cw_ - 1) as f64);
            let dst_x = if flip { ow - 1 - ox } else { ox };
            for k in 0..c {
                out[(oy * ow + dst_x) * c + k] = bilinear(&img, shape, y, x, k);
            }
        }
    }

    let s = policy.color_jitter_strength;
    let spread = 0.8 * s;
    let mut factor = || T::of((1.0 - spread).max(0.0) + ((1.0 + spread) - (1.0 - spread).max(0.0)) * rng.random::<f64>());
    let (brightness, contrast, saturation) = (factor(), factor(), factor());
    let grayscale = rng.random::<f64>() < policy.grayscale_prob;

    let luma = |px: &[T]| T::of(0.299) * px[0] + T::of(0.587) * px[1] + T::of(0.114) * px[2];
    if s > 0.0 {
        out.iter_mut().for_each(|v| *v *= brightness);
        let mean = out.iter().copied().sum::<T>() / T::of_usize(out.len());
        out.iter_mut().for_each(|v| *v = (*v - mean) * contrast + mean);
        if c == 3 {
            for px in out.chunks_exact_mut(3) {
                let g = luma(px);
                px.iter_mut().for_each(|v| *v = (*v - g) * saturation + g);
            }
        }
    }
    if grayscale && c == 3 {
        for px in out.chunks_exact_mut(3) {
            let g = luma(px);
            px.fill(g);
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(T::zero()).min(T::one()));
    Ok(Array1::from(out))
}

/// Draws `B` distinct sources for `step` and builds `K` views of each.
pub fn sample_batch<T: Scalar>(
    dataset: &LabeledDataset<T>,
    num_sources: usize,
    views_per_source: usize,
    policy: &AugmentationPolicy,
    step: u64,
) -> Result<ViewBatch<T>> {
    sample_batch_with(dataset, num_sources, views_per_source, policy, step, Execution::Deterministic)
}

pub fn sample_batch_with<T: Scalar>(
    dataset: &LabeledDataset<T>,
    num_sources: usize,
    views_per_source: usize,
    policy: &AugmentationPolicy,
    step: u64,
    execution: Execution,
) -> Result<ViewBatch<T>> {
    policy.validate()?;
    if num_sources < 2 || views_per_source < 2 {
        return Err(Error::InvalidConfig("B and K must both be >= 2".into()));
    }
    if num_sources > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "B = {num_sources} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let mut rng = stream_rng(policy.seed, step, 0);
    let source_indices = rand::seq::index::sample(&mut rng, dataset.len(), num_sources).into_vec();
    let groups = GroupLabels::contiguous(num_sources, views_per_source)?;
    let out_shape = dataset.image_shape.map(|s| {
        let (h, w) = policy.image.output_size.unwrap_or((s.height, s.width));
        ImageShape { height: h, width: w, channels: s.channels }
    });
    let width = out_shape.map_or(dataset.dim(), |s| s.len());

    let make_view = |v: usize| -> Result<Array1<T>> {
        let src = dataset.samples.row(source_indices[v / views_per_source]);
        let mut rng = stream_rng(policy.seed, step, v as u64 + 1);
        match dataset.image_shape {
            Some(shape) => augment_image(src, shape, &policy.image, &mut rng),
            None => Ok(augment_vector(src, &policy.vector, &mut rng)),
        }
    };
    let n = num_sources * views_per_source;
    let rows: Vec<Array1<T>> = match execution {
        Execution::Deterministic => (0..n).map(make_view).collect::<Result<_>>()?,
        Execution::Parallel => (0..n).into_par_iter().map(make_view).collect::<Result<_>>()?,
    };
    let mut views = Array2::zeros((n, width));
    for (mut dst, row) in views.rows_mut().into_iter().zip(rows) {
        dst.assign(&row);
    }
    Ok(ViewBatch { views, groups, source_indices, image_shape: out_shape })
}
