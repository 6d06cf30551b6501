//! The loss layer: masked reconstruction, unmasked map reconstruction, a
//! small dense Wasserstein critic with weight clipping, the combined
//! adversarial/reconstruction objective, and a finite-difference gradient
//! checker.
//!
//! All gradients are hand-derived; [`grad_check`] is the house oracle for
//! every analytic gradient in the crate.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::grid::SemanticGrid;
use crate::Result;

/// Negative-side slope of the critic's leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Trade-off and optimizer knobs for adversarial refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    /// Weight of the reconstruction term in `L = L_sim + lambda * L_reconst`.
    pub lambda: f64,
    /// Critic weights are clamped to `[-clip_c, clip_c]` after every step.
    pub clip_c: f64,
    pub critic_lr: f64,
    pub gen_lr: f64,
    pub batch_size: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 1.0, clip_c: 0.05, critic_lr: 1e-3, gen_lr: 1e-4, batch_size: 64 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidValue("lambda must be nonnegative".into()));
        }
        if !(self.clip_c > 0.0 && self.critic_lr > 0.0 && self.gen_lr > 0.0) {
            return Err(Error::InvalidValue(
                "clip_c and learning rates must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidValue("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Masked mean-squared reconstruction error
/// `||(a - b) * M||^2 / sum(M)` with gradients with respect to both maps.
///
/// The mask is per cell and applies across all channels; the denominator
/// counts observed cells, not channel entries.
pub fn masked_reconstruction_loss(
    a: &SemanticGrid,
    b: &SemanticGrid,
    observed: &[bool],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            what: "masked reconstruction operands",
            expected: (a.height(), a.width(), a.channels()),
            found: (b.height(), b.width(), b.channels()),
        });
    }
    if observed.len() != a.height() * a.width() {
        return Err(Error::ShapeMismatch {
            what: "masked reconstruction mask",
            expected: (a.height(), a.width(), 1),
            found: (observed.len(), 1, 1),
        });
    }
    let m: usize = observed.iter().filter(|o| **o).count();
    if m == 0 {
        return Err(Error::EmptyObservedMask);
    }
    let denom = m as f64;
    let ch = a.channels();
    let mut value = 0.0;
    let mut grad_a = vec![0.0; a.data().len()];
    let mut grad_b = vec![0.0; a.data().len()];
    for (cell, &obs) in observed.iter().enumerate() {
        if !obs {
            continue;
        }
        for k in 0..ch {
            let i = cell * ch + k;
            let d = a.data()[i] - b.data()[i];
            value += d * d;
            grad_a[i] = 2.0 * d / denom;
            grad_b[i] = -2.0 * d / denom;
        }
    }
    Ok((value / denom, grad_a, grad_b))
}

/// Unmasked squared map distance `||a - b||^2` (a sum, not a mean), with the
/// gradient with respect to `a`.
pub fn osm_reconstruction_loss(a: &SemanticGrid, b: &SemanticGrid) -> Result<(f64, Vec<f64>)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            what: "reconstruction operands",
            expected: (a.height(), a.width(), a.channels()),
            found: (b.height(), b.width(), b.channels()),
        });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; a.data().len()];
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        let d = x - y;
        value += d * d;
        grad[i] = 2.0 * d;
    }
    Ok((value, grad))
}

/// The combined refinement objective `L_sim + lambda * L_reconst`.
pub fn combined_refinement_loss(l_sim: f64, l_reconst: f64, lambda: f64) -> f64 {
    l_sim + lambda * l_reconst
}

/// One dense layer, row-major weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out[o] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

/// Critic evaluation with everything a training step needs.
#[derive(Debug, Clone)]
pub struct CriticEval {
    pub value: f64,
    /// Gradient with respect to the input vector.
    pub grad_input: Vec<f64>,
    /// Gradient with respect to the flattened parameters
    /// (layer order, weights then biases).
    pub grad_params: Vec<f64>,
}

/// Dense scalar-output critic: affine layers with leaky rectifiers on the
/// hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriticParams {
    pub layers: Vec<DenseLayer>,
}

impl CriticParams {
    /// Random initialization, uniform in `[-scale, scale]`, deterministic
    /// per seed. `dims` runs input..output, e.g. `[384, 64, 32, 1]`.
    pub fn init(dims: &[usize], scale: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidValue("critic needs at least one layer".into()));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::InvalidValue("critic output must be scalar".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|io| DenseLayer {
                in_dim: io[0],
                out_dim: io[1],
                w: (0..io[0] * io[1]).map(|_| rng.gen_range(-scale..=scale)).collect(),
                b: vec![0.0; io[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattens parameters in layer order, weights then biases.
    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                what: "critic parameter vector",
                expected: (self.num_params(), 1, 1),
                found: (params.len(), 1, 1),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Clamps every weight and bias to `[-c, c]`.
    pub fn clip(&mut self, c: f64) {
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = v.clamp(-c, c);
            }
        }
    }

    pub fn max_abs_param(&self) -> f64 {
        self.params_vec().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Scalar critic output.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_with_grads(x)?.value)
    }

    /// Forward pass plus manual backprop for input and parameter gradients.
    pub fn forward_with_grads(&self, x: &[f64]) -> Result<CriticEval> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                what: "critic input",
                expected: (self.input_dim(), 1, 1),
                found: (x.len(), 1, 1),
            });
        }
        let n_layers = self.layers.len();
        // forward, keeping pre-activations and activations
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(acts.last().unwrap());
            pre.push(z.clone());
            let a = if li + 1 < n_layers {
                z.iter().map(|&v| if v >= 0.0 { v } else { LEAKY_SLOPE * v }).collect()
            } else {
                z
            };
            acts.push(a);
        }
        let value = acts.last().unwrap()[0];

        // backward
        let mut grad_params = vec![0.0; self.num_params()];
        let mut delta = vec![1.0f64]; // d value / d output
        let mut param_offset = self.num_params();
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            if li + 1 < n_layers {
                // activation derivative of this layer's outputs
                for (d, &z) in delta.iter_mut().zip(&pre[li]) {
                    if z < 0.0 {
                        *d *= LEAKY_SLOPE;
                    }
                }
            }
            param_offset -= layer.w.len() + layer.b.len();
            let input = &acts[li];
            let (gw, gb) = grad_params[param_offset..param_offset + layer.w.len() + layer.b.len()]
                .split_at_mut(layer.w.len());
            for o in 0..layer.out_dim {
                gb[o] = delta[o];
                for i in 0..layer.in_dim {
                    gw[o * layer.in_dim + i] = delta[o] * input[i];
                }
            }
            let mut next = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += delta[o] * w;
                }
            }
            delta = next;
        }
        Ok(CriticEval { value, grad_input: delta, grad_params })
    }
}

/// One Wasserstein critic update: a gradient-ascent step on
/// `mean f(real) - mean f(fake)`, then clamping every parameter to
/// `[-clip_c, clip_c]`. Returns the pre-step gap.
pub fn wgan_critic_step(
    reals: &[Vec<f64>],
    fakes: &[Vec<f64>],
    critic: &mut CriticParams,
    weights: &LossWeights,
) -> Result<f64> {
    if reals.is_empty() {
        return Err(Error::EmptyBatch("wgan reals"));
    }
    if fakes.is_empty() {
        return Err(Error::EmptyBatch("wgan fakes"));
    }
    let n_params = critic.num_params();
    let mut gap = 0.0;

    let mut real_grad = vec![0.0; n_params];
    for x in reals {
        let eval = critic.forward_with_grads(x)?;
        gap += eval.value / reals.len() as f64;
        for (g, d) in real_grad.iter_mut().zip(&eval.grad_params) {
            *g += d / reals.len() as f64;
        }
    }
    let mut fake_grad = vec![0.0; n_params];
    for x in fakes {
        let eval = critic.forward_with_grads(x)?;
        gap -= eval.value / fakes.len() as f64;
        for (g, d) in fake_grad.iter_mut().zip(&eval.grad_params) {
            *g += d / fakes.len() as f64;
        }
    }

    let mut params = critic.params_vec();
    for i in 0..n_params {
        params[i] += weights.critic_lr * (real_grad[i] - fake_grad[i]);
    }
    critic.set_params(&params)?;
    critic.clip(weights.clip_c);
    Ok(gap)
}

/// Central finite-difference check of an analytic gradient.
///
/// `f` returns the value and its gradient at a point; the report is the
/// maximum over coordinates of `|g_a - g_fd| / max(1e-12, |g_a| + |g_fd|)`.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input length");
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (fp, _) = f(&probe);
        probe[i] = x[i] - eps;
        let (fm, _) = f(&probe);
        probe[i] = x[i];
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}
