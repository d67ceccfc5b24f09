//! The embedding network: a ReLU multilayer perceptron with a linear output
//! layer, exact reverse-mode gradients and plain SGD.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default hidden widths and output dimension for desk-scale runs.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_D_Z: usize = 16;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

/// One affine layer, weights stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    #[inline]
    pub fn w(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_in + col]
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    pub layers: Vec<Dense>,
}

/// Co-shaped with [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!(
            "mlp dims must have at least two positive entries, got {dims:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// All-zero parameters with the given layer widths.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(MlpParams {
            dims: dims.to_vec(),
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat view in layer order: weights (row-major) then bias, per layer.
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        unflatten(&mut self.layers, values)
    }

    /// Binary checkpoint: magic, layer count, widths, then every value as
    /// little-endian `f64` bits in [`MlpParams::flat`] order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.dims.len() as u64).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in self.flat() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Shape("not an mlp checkpoint".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next(&mut r)? as usize;
        if n > 1024 {
            return Err(Error::Shape(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| next(&mut r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        let mut params = MlpParams::zeros(&dims)?;
        let values = (0..params.num_params())
            .map(|_| next(&mut r).map(f64::from_bits))
            .collect::<io::Result<Vec<_>>>()?;
        params.set_flat(&values)?;
        Ok(params)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DCCGMLP1";

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

fn unflatten(layers: &mut [Dense], values: &[f64]) -> Result<()> {
    let total: usize = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    if values.len() != total {
        return Err(Error::Shape(format!("expected {total} values, got {}", values.len())));
    }
    let mut rest = values;
    for l in layers {
        let (w, r) = rest.split_at(l.weights.len());
        l.weights.copy_from_slice(w);
        let (b, r) = r.split_at(l.bias.len());
        l.bias.copy_from_slice(b);
        rest = r;
    }
    Ok(())
}

impl Gradient {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradient {
            layers: params.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Gradient with every entry multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Gradient {
        let mut g = self.clone();
        for l in &mut g.layers {
            l.weights.iter_mut().for_each(|v| *v *= alpha);
            l.bias.iter_mut().for_each(|v| *v *= alpha);
        }
        g
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn same_shape(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.n_in == p.n_in && g.n_out == p.n_out)
    }
}

/// Seeded uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
/// zero biases.
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<MlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_mlp_with(dims, &mut rng)
}

pub fn init_mlp_with<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(dims)?;
    for l in &mut params.layers {
        let bound = 1.0 / (l.n_in as f64).sqrt();
        l.weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..=bound));
    }
    Ok(params)
}

/// Per-layer inputs and pre-activations recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l][i]`: input to layer `l` for example `i` (post-ReLU for l > 0).
    inputs: Vec<Vec<Vec<f64>>>,
    /// `pre[l][i]`: pre-activation of layer `l` for example `i`.
    pre: Vec<Vec<Vec<f64>>>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.inputs.first().map_or(0, |v| v.len())
    }
}

/// Embeds every input. Hidden layers use ReLU; the output layer is affine.
pub fn forward(params: &MlpParams, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
    if let Some(x) = xs.iter().find(|x| x.len() != params.d_in()) {
        return Err(Error::Shape(format!(
            "input of length {} fed to a network expecting {}",
            x.len(),
            params.d_in()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut current: Vec<Vec<f64>> = xs.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let z: Vec<Vec<f64>> = current.iter().map(|a| layer.apply(a)).collect();
        let next = if l + 1 < n_layers {
            z.iter()
                .map(|v| v.iter().map(|&u| u.max(0.0)).collect())
                .collect()
        } else {
            z.clone()
        };
        inputs.push(std::mem::replace(&mut current, next));
        pre.push(z);
    }
    if current.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    Ok((current, ForwardCache { inputs, pre }))
}

/// Embeds inputs without keeping the cache.
pub fn embed(params: &MlpParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    forward(params, xs).map(|(zs, _)| zs)
}

/// Gradient of `sum_i <dl_dz[i], f(x_i)>` with respect to the parameters.
pub fn backward(params: &MlpParams, cache: &ForwardCache, dl_dz: &[Vec<f64>]) -> Result<Gradient> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::Shape("cache does not match the network depth".into()));
    }
    if dl_dz.len() != cache.batch_len() {
        return Err(Error::Shape(format!(
            "{} output gradients for a batch of {}",
            dl_dz.len(),
            cache.batch_len()
        )));
    }
    if let Some(g) = dl_dz.iter().find(|g| g.len() != params.d_out()) {
        return Err(Error::Shape(format!(
            "output gradient of length {}, expected {}",
            g.len(),
            params.d_out()
        )));
    }
    for (l, layer) in params.layers.iter().enumerate() {
        let ok_in = cache.inputs[l].iter().all(|a| a.len() == layer.n_in);
        let ok_pre = cache.pre[l].iter().all(|z| z.len() == layer.n_out);
        if !ok_in || !ok_pre {
            return Err(Error::Shape(format!("cache layer {l} does not match the params")));
        }
    }

    let mut grad = Gradient::zeros_like(params);
    for (i, g) in dl_dz.iter().enumerate() {
        let mut delta = g.clone();
        for l in (0..params.layers.len()).rev() {
            let layer = &params.layers[l];
            let input = &cache.inputs[l][i];
            let gl = &mut grad.layers[l];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                gl.bias[r] += d;
                let row = &mut gl.weights[r * layer.n_in..(r + 1) * layer.n_in];
                row.iter_mut().zip(input).for_each(|(w, a)| *w += d * a);
            }
            if l > 0 {
                let below = &cache.pre[l - 1][i];
                delta = (0..layer.n_in)
                    .map(|c| {
                        if below[c] > 0.0 {
                            delta.iter().enumerate().map(|(r, d)| d * layer.w(r, c)).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
    }
    Ok(grad)
}

/// Returns `params + eta * grad`. Callers pass a descent direction by
/// negating the gradient first.
pub fn sgd_step(params: &MlpParams, grad: &Gradient, eta: f64) -> Result<MlpParams> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("learning rate must be non-negative, got {eta}")));
    }
    if !grad.same_shape(params) {
        return Err(Error::Shape("gradient is not co-shaped with the params".into()));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient, update refused".into()));
    }
    let mut out = params.clone();
    for (p, g) in out.layers.iter_mut().zip(&grad.layers) {
        p.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w += eta * d);
        p.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b += eta * d);
    }
    Ok(out)
}

/// Central finite differences of `loss(forward(params, xs))` with respect to
/// every parameter.
pub fn finite_diff_grad<F>(params: &MlpParams, xs: &[Vec<f64>], loss: F, h: f64) -> Result<Gradient>
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let base = params.flat();
    let mut probe = params.clone();
    let mut values = Vec::with_capacity(base.len());
    let mut shifted = base.clone();
    for k in 0..base.len() {
        shifted[k] = base[k] + h;
        probe.set_flat(&shifted)?;
        let up = loss(&embed(&probe, xs)?);
        shifted[k] = base[k] - h;
        probe.set_flat(&shifted)?;
        let down = loss(&embed(&probe, xs)?);
        shifted[k] = base[k];
        values.push((up - down) / (2.0 * h));
    }
    let mut grad = Gradient::zeros_like(params);
    unflatten(&mut grad.layers, &values)?;
    Ok(grad)
}
