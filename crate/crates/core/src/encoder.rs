//! MLP encoder with a two-layer projection head, reverse-mode gradients, Adam and
//! a versioned binary checkpoint.
//!
//! Layout: `input → [dense → relu]* → dense (representation) → dense → relu → dense (projection)`.
//! The linear-probe consumes the representation; the ranking loss consumes the projection.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            other => Err(Error::InvalidConfig(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Width of the representation handed to the linear probe.
    pub rep_dim: usize,
    pub proj_hidden_dim: usize,
    /// Width of the vectors entering cosine similarity.
    pub proj_out_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden_dims: vec![128],
            rep_dim: 64,
            proj_hidden_dim: 64,
            proj_out_dim: 64,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.rep_dim, self.proj_hidden_dim, self.proj_out_dim];
        if dims.iter().chain(&self.hidden_dims).any(|&d| d == 0) {
            return Err(Error::InvalidConfig("encoder dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out, activation follows)` for every dense layer in order.
    fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 3);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((prev, h, true));
            prev = h;
        }
        shapes.push((prev, self.rep_dim, false));
        shapes.push((self.rep_dim, self.proj_hidden_dim, true));
        shapes.push((self.proj_hidden_dim, self.proj_out_dim, false));
        shapes
    }

    /// Index of the layer whose output is the representation.
    fn rep_layer(&self) -> usize {
        self.hidden_dims.len()
    }
}

/// Adam hyper-parameters. The learning rate is fixed for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::InvalidConfig("Adam betas must lie in (0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// Weight `fan_in × fan_out` and bias `fan_out`; `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn zeros_like(&self) -> Self {
        Self { weight: Array2::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Dense<T>>,
    pub second_moment: Vec<Dense<T>>,
}

/// Weights of the encoder and projection head together with the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    config: EncoderConfig,
    layers: Vec<Dense<T>>,
    adam: AdamState<T>,
}

/// Parameter gradients, laid out like [`EncoderParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// He-uniform weights, zero biases, zero Adam state.
pub fn init_params<T: Scalar>(cfg: &EncoderConfig) -> Result<EncoderParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = cfg
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out, _)| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                T::of(rng.random_range(-bound..bound))
            });
            Dense { weight, bias: Array1::zeros(fan_out) }
        })
        .collect();
    Ok(EncoderParams::from_layers(cfg.clone(), layers))
}

impl<T: Scalar> EncoderParams<T> {
    /// All weights and biases zero.
    pub fn zeros(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg.layer_shapes().into_iter().map(|(i, o, _)| Dense::zeros(i, o)).collect();
        Ok(Self::from_layers(cfg.clone(), layers))
    }

    fn from_layers(config: EncoderConfig, layers: Vec<Dense<T>>) -> Self {
        let zeros: Vec<Dense<T>> = layers.iter().map(Dense::zeros_like).collect();
        let adam = AdamState { step: 0, first_moment: zeros.clone(), second_moment: zeros };
        Self { config, layers, adam }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every weight and bias, layer by layer, weight (row-major) before bias.
    pub fn flatten(&self) -> Vec<T> {
        flatten_layers(&self.layers)
    }

    /// Inverse of [`flatten`](Self::flatten). Leaves the optimizer state untouched.
    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_parameters()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Same weights converted to another scalar type, fresh optimizer state.
    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Dense { weight: l.weight.mapv(|v| U::of(v.as_f64())), bias: l.bias.mapv(|v| U::of(v.as_f64())) })
            .collect();
        EncoderParams::from_layers(self.config.clone(), layers)
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<Array2<T>>,
    pre_activations: Vec<Array2<T>>,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub representations: Array2<T>,
    pub projections: Array2<T>,
    pub cache: ForwardCache<T>,
}

fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn forward<T: Scalar>(params: &EncoderParams<T>, inputs: ArrayView2<'_, T>) -> Result<ForwardOutput<T>> {
    let cfg = &params.config;
    if inputs.ncols() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, encoder expects {}",
            inputs.ncols(),
            cfg.input_dim
        )));
    }
    let shapes = cfg.layer_shapes();
    let mut layer_inputs = Vec::with_capacity(shapes.len());
    let mut pre_activations = Vec::with_capacity(shapes.len());
    let mut x = inputs.to_owned();
    let mut representations = None;
    for (idx, (layer, &(_, _, act))) in params.layers.iter().zip(&shapes).enumerate() {
        let z = x.dot(&layer.weight) + &layer.bias;
        let out = if act { relu(&z) } else { z.clone() };
        layer_inputs.push(std::mem::replace(&mut x, out));
        pre_activations.push(z);
        if idx == cfg.rep_layer() {
            representations = Some(x.clone());
        }
    }
    Ok(ForwardOutput {
        representations: representations.expect("rep layer always present"),
        projections: x,
        cache: ForwardCache { inputs: layer_inputs, pre_activations, step: params.adam.step },
    })
}

/// Reverse-mode gradients of `Σ grad_projections ⊙ projections` w.r.t. every parameter.
pub fn backward<T: Scalar>(
    params: &EncoderParams<T>,
    cache: &ForwardCache<T>,
    grad_projections: ArrayView2<'_, T>,
) -> Result<Gradients<T>> {
    let shapes = params.config.layer_shapes();
    if cache.step != params.adam.step {
        return Err(Error::StaleCache(format!(
            "cache taken at optimizer step {}, parameters are at step {}",
            cache.step, params.adam.step
        )));
    }
    let consistent = cache.inputs.len() == shapes.len()
        && cache.pre_activations.len() == shapes.len()
        && cache
            .inputs
            .iter()
            .zip(&cache.pre_activations)
            .zip(&shapes)
            .all(|((x, z), &(i, o, _))| x.ncols() == i && z.ncols() == o && x.nrows() == z.nrows());
    if !consistent {
        return Err(Error::StaleCache("cache does not match the encoder layout".into()));
    }
    let n = cache.inputs[0].nrows();
    if grad_projections.dim() != (n, params.config.proj_out_dim) {
        return Err(Error::ShapeMismatch(format!(
            "grad_projections is {:?}, expected ({n}, {})",
            grad_projections.dim(),
            params.config.proj_out_dim
        )));
    }
    let mut grads: Vec<Dense<T>> = Vec::with_capacity(shapes.len());
    let mut g = grad_projections.to_owned();
    for idx in (0..shapes.len()).rev() {
        if shapes[idx].2 {
            g.zip_mut_with(&cache.pre_activations[idx], |gv, &z| {
                if z <= T::zero() {
                    *gv = T::zero();
                }
            });
        }
        let weight = cache.inputs[idx].t().dot(&g);
        let bias = g.sum_axis(Axis(0));
        if idx > 0 {
            g = g.dot(&params.layers[idx].weight.t());
        }
        grads.push(Dense { weight, bias });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// One bias-corrected Adam update. Rejects non-finite gradients before touching any state.
pub fn adam_step<T: Scalar>(params: &mut EncoderParams<T>, grads: &Gradients<T>, opt: &OptimizerConfig) -> Result<()> {
    opt.validate()?;
    if grads.layers.len() != params.layers.len()
        || grads.layers.iter().zip(&params.layers).any(|(g, p)| !g.same_shape(p))
    {
        return Err(Error::ShapeMismatch("gradient layout does not match parameters".into()));
    }
    if grads.layers.iter().any(|g| g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradients"));
    }
    let adam = &mut params.adam;
    adam.step += 1;
    let t = adam.step as i32;
    let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
    let lr = T::of(opt.learning_rate);
    let eps = T::of(opt.eps);
    let c1 = T::one() - T::of(opt.beta1.powi(t));
    let c2 = T::one() - T::of(opt.beta2.powi(t));
    let update = |theta: &mut T, m: &mut T, v: &mut T, g: T| {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut adam.first_moment)
        .zip(&mut adam.second_moment)
    {
        for (((theta, &gv), mv), vv) in p.weight.iter_mut().zip(&g.weight).zip(m.weight.iter_mut()).zip(v.weight.iter_mut()) {
            update(theta, mv, vv, gv);
        }
        for (((theta, &gv), mv), vv) in p.bias.iter_mut().zip(&g.bias).zip(m.bias.iter_mut()).zip(v.bias.iter_mut()) {
            update(theta, mv, vv, gv);
        }
    }
    Ok(())
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"S2R2CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes configuration and weights.
///
/// Layout (little-endian): magic, `u32` version, `u32` input_dim, `u32` hidden count,
/// `u32` per hidden dim, `u32` rep_dim, `u32` proj_hidden_dim, `u32` proj_out_dim,
/// `u32` activation code, `u64` seed, then every layer's weight (row-major) and bias
/// as `f32`. Optimizer state is not stored.
pub fn checkpoint_bytes<T: Scalar>(params: &EncoderParams<T>) -> Vec<u8> {
    let cfg = &params.config;
    let mut out = Vec::with_capacity(64 + 4 * params.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let put = |v: u32, out: &mut Vec<u8>| out.extend_from_slice(&v.to_le_bytes());
    put(CHECKPOINT_VERSION, &mut out);
    put(cfg.input_dim as u32, &mut out);
    put(cfg.hidden_dims.len() as u32, &mut out);
    for &h in &cfg.hidden_dims {
        put(h as u32, &mut out);
    }
    put(cfg.rep_dim as u32, &mut out);
    put(cfg.proj_hidden_dim as u32, &mut out);
    put(cfg.proj_out_dim as u32, &mut out);
    put(cfg.activation.code(), &mut out);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    for v in params.flatten() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated { what: "checkpoint", needed: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn params_from_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<EncoderParams<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::BadMagic { what: "checkpoint", expected: "S2R2CKPT" });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { what: "checkpoint", version });
    }
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let hidden_dims = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    let config = EncoderConfig {
        input_dim,
        hidden_dims,
        rep_dim: r.u32()? as usize,
        proj_hidden_dim: r.u32()? as usize,
        proj_out_dim: r.u32()? as usize,
        activation: Activation::from_code(r.u32()?)?,
        seed: r.u64()?,
    };
    let mut params = EncoderParams::<T>::zeros(&config)?;
    let n = params.num_parameters();
    let payload = r.take(4 * n)?;
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    params.set_flat(&values)?;
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &EncoderParams<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<EncoderParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            input_dim: 3,
            hidden_dims: vec![4],
            rep_dim: 3,
            proj_hidden_dim: 3,
            proj_out_dim: 2,
            activation: Activation::Relu,
            seed: 7,
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_params::<f32>(&tiny()).unwrap();
        let b = init_params::<f32>(&tiny()).unwrap();
        assert_eq!(checkpoint_bytes(&a), checkpoint_bytes(&b));
        let c = init_params::<f32>(&EncoderConfig { seed: 8, ..tiny() }).unwrap();
        assert_ne!(a.flatten(), c.flatten());
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(a.adam_state().step, 0);
    }

    #[test]
    fn he_uniform_bounds() {
        let p = init_params::<f64>(&tiny()).unwrap();
        for l in p.layers() {
            let bound = (6.0 / l.weight.nrows() as f64).sqrt();
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn no_hidden_layers_is_valid() {
        let cfg = EncoderConfig { hidden_dims: vec![], ..tiny() };
        let p = init_params::<f64>(&cfg).unwrap();
        assert_eq!(p.layers().len(), 3);
        let out = forward(&p, array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert_eq!(out.representations.dim(), (1, 3));
        assert_eq!(out.projections.dim(), (1, 2));
    }

    #[test]
    fn zero_config_dim_rejected() {
        assert!(init_params::<f32>(&EncoderConfig { rep_dim: 0, ..tiny() }).is_err());
        assert!(init_params::<f32>(&EncoderConfig { hidden_dims: vec![0], ..tiny() }).is_err());
    }

    #[test]
    fn forward_zero_weights_and_empty_batch() {
        let p = EncoderParams::<f64>::zeros(&tiny()).unwrap();
        let out = forward(&p, array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert!(out.projections.iter().all(|&v| v == 0.0));
        assert!(out.representations.iter().all(|&v| v == 0.0));
        let p = init_params::<f64>(&tiny()).unwrap();
        let out = forward(&p, Array2::zeros((0, 3)).view()).unwrap();
        assert_eq!(out.projections.dim(), (0, 2));
        assert_eq!(out.representations.dim(), (0, 3));
        assert!(matches!(forward(&p, Array2::zeros((1, 4)).view()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn backward_zero_upstream() {
        let p = init_params::<f64>(&tiny()).unwrap();
        let out = forward(&p, array![[1.0, 2.0, 3.0], [0.1, -0.2, 0.3]].view()).unwrap();
        let g = backward(&p, &out.cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let cfg = EncoderConfig { input_dim: 1, hidden_dims: vec![1], rep_dim: 1, proj_hidden_dim: 1, proj_out_dim: 1, ..tiny() };
        let mut p = EncoderParams::<f64>::zeros(&cfg).unwrap();
        // Hidden pre-activation = -1 for input 1: dead unit.
        p.set_flat(&[-1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = forward(&p, array![[1.0]].view()).unwrap();
        let g = backward(&p, &out.cache, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 0.0);
        assert_eq!(g.layers[0].bias[0], 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = init_params::<f64>(&tiny()).unwrap();
        let out = forward(&p, array![[1.0, 2.0, 3.0]].view()).unwrap();
        let g = backward(&p, &out.cache, array![[1.0, -1.0]].view()).unwrap();
        adam_step(&mut p, &g, &OptimizerConfig::default()).unwrap();
        assert!(matches!(
            backward(&p, &out.cache, array![[1.0, -1.0]].view()),
            Err(Error::StaleCache(_))
        ));
        let other = init_params::<f64>(&EncoderConfig { hidden_dims: vec![5], ..tiny() }).unwrap();
        assert!(matches!(
            backward(&other, &out.cache, array![[1.0, -1.0]].view()),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = init_params::<f64>(&tiny()).unwrap();
        let before = p.flatten();
        let zeros = Gradients { layers: p.layers().iter().map(Dense::zeros_like).collect() };
        adam_step(&mut p, &zeros, &OptimizerConfig::default()).unwrap();
        assert_eq!(p.flatten(), before);
        assert_eq!(p.adam_state().step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = EncoderParams::<f64>::zeros(&tiny()).unwrap();
        let mut g = Gradients { layers: p.layers().iter().map(Dense::zeros_like).collect() };
        g.layers[0].weight[[0, 0]] = 1.0;
        g.layers[0].weight[[1, 0]] = -3.5;
        adam_step(&mut p, &g, &OptimizerConfig::default()).unwrap();
        let w = &p.layers()[0].weight;
        assert!((w[[0, 0]] + 1e-4).abs() < 1e-11);
        assert!((w[[1, 0]] - 1e-4).abs() < 1e-11);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = init_params::<f32>(&tiny()).unwrap();
        let before = p.clone();
        let mut g = Gradients { layers: p.layers().iter().map(Dense::zeros_like).collect() };
        g.layers[1].bias[0] = f32::NAN;
        assert!(matches!(adam_step(&mut p, &g, &OptimizerConfig::default()), Err(Error::NonFinite(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let p = init_params::<f32>(&tiny()).unwrap();
        let bytes = checkpoint_bytes(&p);
        assert_eq!(&bytes[..8], b"S2R2CKPT");
        let q: EncoderParams<f32> = params_from_checkpoint(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&q), bytes);
        assert_eq!(q.flatten(), p.flatten());
    }

    #[test]
    fn checkpoint_errors() {
        let bytes = checkpoint_bytes(&init_params::<f32>(&tiny()).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(params_from_checkpoint::<f32>(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(
            params_from_checkpoint::<f32>(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(params_from_checkpoint::<f32>(&v2), Err(Error::UnsupportedVersion { version: 2, .. })));
    }
}
