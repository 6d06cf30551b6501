//! BEV completion: the per-column fill heuristic and a toy dense refiner
//! trained with the combined adversarial + reconstruction objective against
//! simulator samples.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::grid::SemanticGrid;
use crate::learn::{masked_reconstruction_loss, wgan_critic_step, CriticParams, LossWeights, LEAKY_SLOPE};
use crate::project::BevMap;
use crate::Result;

/// Hard ceiling for trainable grids; the dense refiner is a toy model.
pub const MAX_TOY_ROWS: usize = 16;
/// See [`MAX_TOY_ROWS`].
pub const MAX_TOY_COLS: usize = 8;

/// Fills unobserved cells per column from the nearest observed cell at a
/// larger row index (toward the camera). Observed cells are never touched;
/// cells with no observation between them and the camera stay unobserved,
/// so a fully unobserved column reads as unknown in label views.
pub fn heuristic_refine(map: &BevMap) -> BevMap {
    let rows = map.rows();
    let cols = map.cols();
    let channels = map.channels();
    let mut out = map.clone();
    for c in 0..cols {
        let mut carry: Option<Vec<f64>> = None;
        for r in (0..rows).rev() {
            if map.is_observed(r, c) {
                carry = Some(map.grid.cell(r, c).to_vec());
            } else if let Some(fill) = &carry {
                out.grid.cell_mut(r, c).copy_from_slice(fill);
                out.observed[r * cols + c] = true;
            }
        }
        let _ = channels;
    }
    out
}

/// Dense bottleneck refiner over flattened toy-scale maps: one hidden layer
/// with a leaky rectifier, then per-cell softmax so every output cell is a
/// distribution.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefinerParams {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RefinerCache {
    input: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl RefinerParams {
    pub fn init(rows: usize, cols: usize, channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        check_toy_scale(rows, cols)?;
        if channels == 0 || hidden == 0 {
            return Err(Error::InvalidValue("refiner needs channels and a hidden layer".into()));
        }
        let n = rows * cols * channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale_in = (1.0 / n as f64).sqrt();
        let scale_hidden = (1.0 / hidden as f64).sqrt();
        Ok(Self {
            rows,
            cols,
            channels,
            hidden,
            w1: (0..hidden * n).map(|_| rng.gen_range(-scale_in..scale_in)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..n * hidden).map(|_| rng.gen_range(-scale_hidden..scale_hidden)).collect(),
            b2: vec![0.0; n],
        })
    }

    pub fn io_dim(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                what: "refiner parameter vector",
                expected: (self.num_params(), 1, 1),
                found: (params.len(), 1, 1),
            });
        }
        let mut o = 0;
        for field in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let n = field.len();
            field.copy_from_slice(&params[o..o + n]);
            o += n;
        }
        Ok(())
    }

    /// Runs the refiner; the output map is fully observed with normalized
    /// cells.
    pub fn forward(&self, input: &BevMap) -> Result<(BevMap, RefinerCache)> {
        if input.rows() != self.rows || input.cols() != self.cols || input.channels() != self.channels {
            return Err(Error::ShapeMismatch {
                what: "refiner input",
                expected: (self.rows, self.cols, self.channels),
                found: (input.rows(), input.cols(), input.channels()),
            });
        }
        let x = input.grid.data().to_vec();
        let n = self.io_dim();
        let mut hidden_pre = self.b1.clone();
        for h in 0..self.hidden {
            let row = &self.w1[h * n..(h + 1) * n];
            hidden_pre[h] += row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
        }
        let hidden: Vec<f64> =
            hidden_pre.iter().map(|&z| if z >= 0.0 { z } else { LEAKY_SLOPE * z }).collect();
        let mut logits = self.b2.clone();
        for o in 0..n {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            logits[o] += row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        // per-cell softmax
        let mut output = vec![0.0; n];
        for cell in 0..self.rows * self.cols {
            let span = cell * self.channels..(cell + 1) * self.channels;
            let max = logits[span.clone()].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for i in span.clone() {
                output[i] = (logits[i] - max).exp();
                denom += output[i];
            }
            for i in span {
                output[i] /= denom;
            }
        }
        let grid = SemanticGrid::from_data(self.rows, self.cols, self.channels, output.clone())?;
        let map = BevMap { grid, observed: vec![true; self.rows * self.cols] };
        Ok((map, RefinerCache { input: x, hidden_pre, hidden, output }))
    }

    /// Backpropagates a loss gradient on the output map down to a parameter
    /// gradient (packed like [`RefinerParams::params_vec`]).
    pub fn backward(&self, cache: &RefinerCache, grad_output: &[f64]) -> Result<Vec<f64>> {
        let n = self.io_dim();
        if grad_output.len() != n {
            return Err(Error::ShapeMismatch {
                what: "refiner output gradient",
                expected: (n, 1, 1),
                found: (grad_output.len(), 1, 1),
            });
        }
        // through the per-cell softmax
        let mut grad_logits = vec![0.0; n];
        for cell in 0..self.rows * self.cols {
            let span = cell * self.channels..(cell + 1) * self.channels;
            let s = &cache.output[span.clone()];
            let g = &grad_output[span.clone()];
            let dot: f64 = s.iter().zip(g).map(|(si, gi)| si * gi).sum();
            for (k, i) in span.enumerate() {
                grad_logits[i] = s[k] * (g[k] - dot);
            }
        }
        // output layer
        let mut grad_w2 = vec![0.0; self.w2.len()];
        let grad_b2 = grad_logits.clone();
        let mut grad_hidden = vec![0.0; self.hidden];
        for o in 0..n {
            for h in 0..self.hidden {
                grad_w2[o * self.hidden + h] = grad_logits[o] * cache.hidden[h];
                grad_hidden[h] += grad_logits[o] * self.w2[o * self.hidden + h];
            }
        }
        // hidden activation and input layer
        let mut grad_w1 = vec![0.0; self.w1.len()];
        let mut grad_b1 = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let dz = grad_hidden[h] * if cache.hidden_pre[h] >= 0.0 { 1.0 } else { LEAKY_SLOPE };
            grad_b1[h] = dz;
            for i in 0..n {
                grad_w1[h * n + i] = dz * cache.input[i];
            }
        }
        let mut grad = grad_w1;
        grad.extend(grad_b1);
        grad.extend(grad_w2);
        grad.extend(grad_b2);
        Ok(grad)
    }
}

fn check_toy_scale(rows: usize, cols: usize) -> Result<()> {
    if rows > MAX_TOY_ROWS || cols > MAX_TOY_COLS {
        return Err(Error::ScaleGuard {
            rows,
            cols,
            max_rows: MAX_TOY_ROWS,
            max_cols: MAX_TOY_COLS,
        });
    }
    Ok(())
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    pub step: usize,
    /// What the critic minimizes: `mean f(fake) - mean f(real)`.
    pub critic_loss: f64,
    /// Full generator objective `L_sim + lambda L_reconst`.
    pub gen_loss: f64,
    /// Reconstruction term alone.
    pub masked_mse: f64,
}

/// Trains the toy refiner with alternating critic and generator steps;
/// returns the refiner, the critic (clipped at every step), and the loss
/// trace.
///
/// Reconstruction targets default to each input map itself; passing
/// `recon_targets` (e.g. aligned rendered maps) swaps the target while
/// keeping the input's observed mask. Deterministic per seed.
pub fn train_refiner<S>(
    dataset: &[BevMap],
    recon_targets: Option<&[BevMap]>,
    mut sim_sampler: S,
    weights: &LossWeights,
    steps: usize,
    critic_steps_per_gen: usize,
    rng_seed: u64,
) -> Result<(RefinerParams, CriticParams, Vec<TrainTrace>)>
where
    S: FnMut(&mut ChaCha8Rng) -> Result<BevMap>,
{
    weights.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch("refiner training dataset"));
    }
    if let Some(targets) = recon_targets {
        if targets.len() != dataset.len() {
            return Err(Error::ShapeMismatch {
                what: "reconstruction targets",
                expected: (dataset.len(), 1, 1),
                found: (targets.len(), 1, 1),
            });
        }
    }
    let rows = dataset[0].rows();
    let cols = dataset[0].cols();
    let channels = dataset[0].channels();
    check_toy_scale(rows, cols)?;
    for map in dataset {
        if map.rows() != rows || map.cols() != cols || map.channels() != channels {
            return Err(Error::ShapeMismatch {
                what: "refiner dataset",
                expected: (rows, cols, channels),
                found: (map.rows(), map.cols(), map.channels()),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = rows * cols * channels;
    let mut refiner = RefinerParams::init(rows, cols, channels, 32, rng.gen())?;
    let mut critic = CriticParams::init(&[n, 32, 16, 1], weights.clip_c * 0.4, rng.gen())?;

    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut critic_loss = 0.0;
        for _ in 0..critic_steps_per_gen.max(1) {
            let reals: Vec<Vec<f64>> = (0..weights.batch_size)
                .map(|_| {
                    let map = sim_sampler(&mut rng)?;
                    check_toy_scale(map.rows(), map.cols())?;
                    if map.rows() != rows || map.cols() != cols || map.channels() != channels {
                        return Err(Error::ShapeMismatch {
                            what: "simulated real sample",
                            expected: (rows, cols, channels),
                            found: (map.rows(), map.cols(), map.channels()),
                        });
                    }
                    Ok(map.grid.into_data())
                })
                .collect::<Result<_>>()?;
            let fakes: Vec<Vec<f64>> = (0..weights.batch_size)
                .map(|_| {
                    let input = &dataset[rng.gen_range(0..dataset.len())];
                    let (out, _) = refiner.forward(input)?;
                    Ok(out.grid.into_data())
                })
                .collect::<Result<_>>()?;
            let gap = wgan_critic_step(&reals, &fakes, &mut critic, weights)?;
            critic_loss = -gap;
        }

        // generator step on L_sim + lambda * L_reconst
        let mut grad_params = vec![0.0; refiner.num_params()];
        let mut l_sim = 0.0;
        let mut l_rec = 0.0;
        let inv_batch = 1.0 / weights.batch_size as f64;
        for _ in 0..weights.batch_size {
            let idx = rng.gen_range(0..dataset.len());
            let input = &dataset[idx];
            let (out, cache) = refiner.forward(input)?;
            let critic_eval = critic.forward_with_grads(out.grid.data())?;
            l_sim -= critic_eval.value * inv_batch;

            let target = recon_targets.map_or(input, |t| &t[idx]);
            let (mse, _, grad_out_rec) =
                masked_reconstruction_loss(&target.grid, &out.grid, &input.observed)?;
            l_rec += mse * inv_batch;

            let grad_out: Vec<f64> = critic_eval
                .grad_input
                .iter()
                .zip(&grad_out_rec)
                .map(|(gs, gr)| (-gs + weights.lambda * gr) * inv_batch)
                .collect();
            let g = refiner.backward(&cache, &grad_out)?;
            for (acc, gi) in grad_params.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let mut params = refiner.params_vec();
        for (p, g) in params.iter_mut().zip(&grad_params) {
            *p -= weights.gen_lr * g;
        }
        refiner.set_params(&params)?;

        trace.push(TrainTrace {
            step,
            critic_loss,
            gen_loss: l_sim + weights.lambda * l_rec,
            masked_mse: l_rec,
        });
    }
    Ok((refiner, critic, trace))
}

/// Mean masked reconstruction error of the refiner's outputs against the
/// inputs over a dataset; the comparison number behind the lambda sweep.
pub fn mean_masked_mse(refiner: &RefinerParams, dataset: &[BevMap]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch("refiner evaluation dataset"));
    }
    let mut total = 0.0;
    for input in dataset {
        let (out, _) = refiner.forward(input)?;
        let (mse, ..) = masked_reconstruction_loss(&input.grid, &out.grid, &input.observed)?;
        total += mse;
    }
    Ok(total / dataset.len() as f64)
}
