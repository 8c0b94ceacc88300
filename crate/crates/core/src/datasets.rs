//! Labeled datasets: a seeded Gaussian-cluster generator, the `S2R2IMG1` image
//! container and a stratified train/test split.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples as rows plus integer labels. Images are flattened channels-last.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub samples: Array2<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image_shape: Option<ImageShape>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(samples: Array2<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if samples.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples but {} labels",
                samples.nrows(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|&(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange { index, label, num_classes });
        }
        Ok(Self { samples, labels, num_classes, image_shape: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            samples: self.samples.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            samples: self.samples.mapv(|v| U::of(v.as_f64())),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// One cluster per sample.
    #[default]
    SingleSource,
    /// `mix_count` blocks from independently drawn clusters; the label follows block 0.
    MixedSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Width of one block; mixed data has `dim * mix_count` columns.
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub center_scale: f64,
    pub composition: Composition,
    pub mix_count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 64,
            samples_per_class: 500,
            cluster_spread: 0.3,
            center_scale: 1.0,
            composition: Composition::SingleSource,
            mix_count: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("num_classes, dim and samples_per_class must be >= 1".into()));
        }
        if !(self.cluster_spread > 0.0 && self.center_scale > 0.0) {
            return Err(Error::InvalidConfig("cluster_spread and center_scale must be positive".into()));
        }
        if self.composition == Composition::MixedSource && self.mix_count < 2 {
            return Err(Error::InvalidConfig("mixed_source needs mix_count >= 2".into()));
        }
        Ok(())
    }

    /// Number of feature columns produced.
    pub fn output_dim(&self) -> usize {
        match self.composition {
            Composition::SingleSource => self.dim,
            Composition::MixedSource => self.dim * self.mix_count,
        }
    }
}

/// Gaussian clusters, samples ordered class by class.
///
/// Draw order: centers of block 0, then of every further block (class-major), then for
/// each sample the foreign cluster of every extra block followed by the noise of every block.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<LabeledDataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blocks = match spec.composition {
        Composition::SingleSource => 1,
        Composition::MixedSource => spec.mix_count,
    };
    let centers: Vec<Array2<f64>> = (0..blocks)
        .map(|_| {
            Array2::from_shape_simple_fn((spec.num_classes, spec.dim), || {
                spec.center_scale * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let n = spec.num_classes * spec.samples_per_class;
    let mut samples = Array2::<T>::zeros((n, spec.dim * blocks));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for class in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            let sources: Vec<usize> = std::iter::once(class)
                .chain((1..blocks).map(|_| rng.random_range(0..spec.num_classes)))
                .collect();
            for (b, &src) in sources.iter().enumerate() {
                for d in 0..spec.dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    samples[[row, b * spec.dim + d]] =
                        T::of(centers[b][[src, d]] + spec.cluster_spread * noise);
                }
            }
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(samples, labels, spec.num_classes)
}

pub const IMAGE_MAGIC: &[u8; 8] = b"S2R2IMG1";
const IMAGE_HEADER_LEN: usize = 8 + 5 * 4;

/// Parses the `S2R2IMG1` container: magic, `u32` N, H, W, C, num_classes (little-endian),
/// `N·H·W·C` `u8` pixels, `N` `u16` labels. Pixels are scaled to `[0, 1]`.
pub fn parse_binary_images<T: Scalar>(bytes: &[u8]) -> Result<LabeledDataset<T>> {
    if bytes.len() < 8 || &bytes[..8] != IMAGE_MAGIC {
        return Err(Error::BadMagic { what: "image file", expected: "S2R2IMG1" });
    }
    if bytes.len() < IMAGE_HEADER_LEN {
        return Err(Error::Truncated { what: "image header", needed: IMAGE_HEADER_LEN, found: bytes.len() });
    }
    let field = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let (n, h, w, c, num_classes) = (field(0), field(1), field(2), field(3), field(4));
    let shape = ImageShape { height: h, width: w, channels: c };
    let pixels = n * shape.len();
    let needed = IMAGE_HEADER_LEN + pixels + 2 * n;
    if bytes.len() < needed {
        return Err(Error::Truncated { what: "image payload", needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::ShapeMismatch(format!("{} trailing bytes in image file", bytes.len() - needed)));
    }
    let px = &bytes[IMAGE_HEADER_LEN..IMAGE_HEADER_LEN + pixels];
    let scale = T::of(1.0 / 255.0);
    let samples = Array2::from_shape_vec((n, shape.len()), px.iter().map(|&p| T::of(p as f64) * scale).collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let labels: Vec<usize> = bytes[IMAGE_HEADER_LEN + pixels..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    let mut ds = LabeledDataset::new(samples, labels, num_classes)?;
    ds.image_shape = Some(shape);
    Ok(ds)
}

pub fn load_binary_images<T: Scalar>(path: &Path) -> Result<LabeledDataset<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_binary_images(&bytes)
}

/// Encodes `u8` pixels in the `S2R2IMG1` layout.
pub fn encode_binary_images(
    shape: ImageShape,
    num_classes: usize,
    pixels: &[u8],
    labels: &[u16],
) -> Result<Vec<u8>> {
    if pixels.len() != labels.len() * shape.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for {} images of {} values",
            pixels.len(),
            labels.len(),
            shape.len()
        )));
    }
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + pixels.len() + 2 * labels.len());
    out.extend_from_slice(IMAGE_MAGIC);
    for v in [labels.len(), shape.height, shape.width, shape.channels, num_classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(pixels);
    for &l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn write_binary_images(
    path: &Path,
    shape: ImageShape,
    num_classes: usize,
    pixels: &[u8],
    labels: &[u16],
) -> Result<()> {
    let bytes = encode_binary_images(shape, num_classes, pixels, labels)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Class-stratified split: `round(fraction · n_c)` samples of every class go to train
/// (at least one on each side). Both halves keep dataset order.
pub fn split<T: Scalar>(
    dataset: &LabeledDataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::ClassTooSmall { class, count: idx.len() });
        }
        idx.shuffle(&mut rng);
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.select(&train), dataset.select(&test)))
}
