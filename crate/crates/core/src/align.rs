//! Alignment of a rendered map onto observed BEV evidence: minimize the
//! masked reconstruction error of the warped map plus flow-smoothness and
//! squared-norm regularizers, by gradient descent with backtracking line
//! search from identity (plus jittered restarts).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::project::BevMap;
use crate::warp::{
    bilinear_point_with_grad, l2_regularizer, lowpass_regularizer, BoxMapper, BoxParams,
    WarpParams, DEFAULT_FLOW_DIMS,
};
use crate::Result;

/// Weights and optimizer settings for [`align_osm`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlignConfig {
    /// Flow smoothness weight.
    pub lambda2: f64,
    /// Squared-norm weight on all warp parameters.
    pub lambda3: f64,
    /// Total gradient iterations per restart.
    pub max_iters: usize,
    /// Initial line-search step.
    pub step_size: f64,
    /// Stop when the relative objective decrease falls below this.
    pub convergence_tol: f64,
    /// Jittered restarts on top of the identity start.
    pub restarts: usize,
    /// Flow grid resolution.
    pub flow_rows: usize,
    pub flow_cols: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            lambda2: 0.1,
            lambda3: 1e-3,
            max_iters: 300,
            step_size: 4.0,
            convergence_tol: 1e-7,
            restarts: 4,
            flow_rows: DEFAULT_FLOW_DIMS.0,
            flow_cols: DEFAULT_FLOW_DIMS.1,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda2 >= 0.0 && self.lambda3 >= 0.0) {
            return Err(Error::InvalidValue("alignment weights must be nonnegative".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidValue("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidValue("step_size must be positive".into()));
        }
        if self.flow_rows == 0 || self.flow_cols == 0 {
            return Err(Error::InvalidValue("flow grid must be nonempty".into()));
        }
        Ok(())
    }
}

/// Outcome of one alignment run.
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub theta: WarpParams,
    pub objective: f64,
    /// Accepted objective values of the winning restart, starting with the
    /// initial objective; nonincreasing by construction.
    pub trace: Vec<f64>,
    /// Restart index the winner came from.
    pub restart: usize,
}

struct Problem<'a> {
    reference: &'a BevMap,
    moving: &'a BevMap,
    cfg: &'a AlignConfig,
    observed_cells: Vec<(usize, usize)>,
}

impl<'a> Problem<'a> {
    fn new(reference: &'a BevMap, moving: &'a BevMap, cfg: &'a AlignConfig) -> Result<Self> {
        cfg.validate()?;
        if reference.rows() != moving.rows()
            || reference.cols() != moving.cols()
            || reference.channels() != moving.channels()
        {
            return Err(Error::ShapeMismatch {
                what: "alignment maps",
                expected: (reference.rows(), reference.cols(), reference.channels()),
                found: (moving.rows(), moving.cols(), moving.channels()),
            });
        }
        let observed_cells: Vec<(usize, usize)> = (0..reference.rows())
            .flat_map(|r| (0..reference.cols()).map(move |c| (r, c)))
            .filter(|&(r, c)| reference.is_observed(r, c))
            .collect();
        if observed_cells.is_empty() {
            return Err(Error::EmptyObservedMask);
        }
        Ok(Self { reference, moving, cfg, observed_cells })
    }

    fn theta_dim(&self) -> usize {
        4 + self.cfg.flow_rows * self.cfg.flow_cols * 2
    }

    /// Objective (and gradient when requested) at a packed parameter vector.
    fn eval(&self, theta_vec: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let theta = WarpParams::from_vec(theta_vec, self.cfg.flow_rows, self.cfg.flow_cols)?;
        let rows = self.reference.rows();
        let cols = self.reference.cols();
        let channels = self.reference.channels();
        let mapper = BoxMapper::new(&theta.similarity, rows, cols);
        let inv_m = 1.0 / self.observed_cells.len() as f64;

        let mut value = 0.0;
        let mut grad = if want_grad { Some(vec![0.0; self.theta_dim()]) } else { None };

        for &(r, c) in &self.observed_cells {
            let taps = theta.flow.upsample_taps(r, c, rows, cols);
            let (du, dv) = {
                let mut du = 0.0;
                let mut dv = 0.0;
                for (node, w) in taps {
                    du += w * theta.flow.du(node);
                    dv += w * theta.flow.dv(node);
                }
                (du, dv)
            };
            if let Some(g) = grad.as_mut() {
                let bc = mapper.source_with_grad(r as f64, c as f64);
                let sample =
                    bilinear_point_with_grad(&self.moving.grid, bc.row - du, bc.col - dv);
                let mut d_row = 0.0;
                let mut d_col = 0.0;
                for ch in 0..channels {
                    let e = sample.value[ch] - self.reference.grid.cell(r, c)[ch];
                    value += e * e;
                    d_row += 2.0 * e * sample.d_row[ch] * inv_m;
                    d_col += 2.0 * e * sample.d_col[ch] * inv_m;
                }
                for (j, (dr, dc)) in bc.d_params.iter().enumerate() {
                    g[j] += d_row * dr + d_col * dc;
                }
                // flow enters the source coordinate with a minus sign
                for (node, w) in taps {
                    g[4 + 2 * node] -= d_row * w;
                    g[4 + 2 * node + 1] -= d_col * w;
                }
            } else {
                let (pr, pc) = mapper.source(r as f64, c as f64);
                let sample = bilinear_point_with_grad(&self.moving.grid, pr - du, pc - dv);
                for ch in 0..channels {
                    let e = sample.value[ch] - self.reference.grid.cell(r, c)[ch];
                    value += e * e;
                }
            }
        }
        value *= inv_m;

        let (gamma, gamma_grad) = lowpass_regularizer(&theta.flow);
        let (l2, l2_grad) = l2_regularizer(&theta);
        value += self.cfg.lambda2 * gamma + self.cfg.lambda3 * l2;
        if let Some(g) = grad.as_mut() {
            for (i, gg) in gamma_grad.iter().enumerate() {
                g[4 + i] += self.cfg.lambda2 * gg;
            }
            for (i, lg) in l2_grad.iter().enumerate() {
                g[i] += self.cfg.lambda3 * lg;
            }
        }
        Ok((value, grad))
    }

    /// Diagonal preconditioner balancing translational and rotational
    /// curvature: rotation and scale move a cell by roughly its distance
    /// from the centre, so their entries shrink by the mean squared radius.
    fn preconditioner(&self) -> Vec<f64> {
        let k = self.reference.rows() as f64;
        let l = self.reference.cols() as f64;
        let mean_sq_radius = (k * k - 1.0) / 12.0 + (l * l - 1.0) / 12.0;
        let mut p = vec![1.0; self.theta_dim()];
        p[2] = 1.0 / mean_sq_radius.max(1.0);
        p[3] = 1.0 / mean_sq_radius.max(1.0);
        p
    }
}

/// Masked-reconstruction alignment objective
/// `||(ref - W(moving; theta)) . M||^2 / sum M + lambda2 G(flow) +
/// lambda3 ||theta||^2`, with its gradient packed like
/// [`WarpParams::to_vec`]. The mask is the reference map's observed mask.
pub fn alignment_objective(
    reference: &BevMap,
    moving: &BevMap,
    theta: &WarpParams,
    cfg: &AlignConfig,
) -> Result<(f64, Vec<f64>)> {
    if theta.flow.rows != cfg.flow_rows || theta.flow.cols != cfg.flow_cols {
        return Err(Error::ShapeMismatch {
            what: "flow grid vs align config",
            expected: (cfg.flow_rows, cfg.flow_cols, 2),
            found: (theta.flow.rows, theta.flow.cols, 2),
        });
    }
    let problem = Problem::new(reference, moving, cfg)?;
    let (value, grad) = problem.eval(&theta.to_vec(), true)?;
    Ok((value, grad.expect("gradient requested")))
}

/// Minimizes [`alignment_objective`] by preconditioned gradient descent with
/// Armijo backtracking: a box-only phase for the first third of the
/// iterations, then joint box+flow. The identity start plus `cfg.restarts`
/// jittered restarts all run; the best final objective wins (ties go to the
/// lowest restart index). Deterministic per seed.
pub fn align_osm(
    reference: &BevMap,
    moving: &BevMap,
    cfg: &AlignConfig,
    rng_seed: u64,
) -> Result<AlignResult> {
    let problem = Problem::new(reference, moving, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut best: Option<AlignResult> = None;
    for restart in 0..=cfg.restarts {
        let mut start = WarpParams::identity(cfg.flow_rows, cfg.flow_cols);
        if restart > 0 {
            start.similarity = BoxParams {
                tx: rng.gen_range(-2.0..2.0),
                ty: rng.gen_range(-2.0..2.0),
                rotation: rng.gen_range(-0.05..0.05),
                log_scale: rng.gen_range(-0.03..0.03),
            };
        }
        let (theta_vec, objective, trace) = descend(&problem, start.to_vec())?;
        let better = match &best {
            None => true,
            Some(b) => objective < b.objective,
        };
        if better {
            best = Some(AlignResult {
                theta: WarpParams::from_vec(&theta_vec, cfg.flow_rows, cfg.flow_cols)?,
                objective,
                trace,
                restart,
            });
        }
    }
    Ok(best.expect("at least the identity restart ran"))
}

fn descend(problem: &Problem<'_>, mut theta: Vec<f64>) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let cfg = problem.cfg;
    let (mut f, _) = problem.eval(&theta, false)?;
    let mut trace = vec![f];
    // coarse to fine: settle the similarity transform first, then let the
    // flow join in
    let box_iters = cfg.max_iters / 3;
    run_phase(problem, &mut theta, &mut f, &mut trace, box_iters, true)?;
    run_phase(problem, &mut theta, &mut f, &mut trace, cfg.max_iters - box_iters, false)?;
    Ok((theta, f, trace))
}

fn run_phase(
    problem: &Problem<'_>,
    theta: &mut Vec<f64>,
    f: &mut f64,
    trace: &mut Vec<f64>,
    iters: usize,
    box_only: bool,
) -> Result<()> {
    let cfg = problem.cfg;
    let precond = problem.preconditioner();
    let mut step = cfg.step_size;
    for _ in 0..iters {
        let (_, grad) = problem.eval(theta, true)?;
        let mut grad = grad.expect("gradient requested");
        if box_only {
            for g in grad.iter_mut().skip(4) {
                *g = 0.0;
            }
        }
        let descent: f64 = grad.iter().zip(&precond).map(|(g, p)| g * g * p).sum();
        if descent <= 0.0 || !descent.is_finite() {
            break;
        }

        // Armijo backtracking; the accepted step seeds the next iteration
        step = (step * 2.0).min(cfg.step_size * 16.0);
        let mut accepted = None;
        for _ in 0..40 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .zip(&precond)
                .map(|((t, g), p)| t - step * p * g)
                .collect();
            let (f_new, _) = problem.eval(&candidate, false)?;
            if f_new <= *f - 1e-4 * step * descent {
                accepted = Some((candidate, f_new));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, f_new)) = accepted else {
            break; // no acceptable step left in this phase
        };
        let decrease = *f - f_new;
        *theta = candidate;
        *f = f_new;
        trace.push(f_new);
        if decrease <= cfg.convergence_tol * f_new.abs().max(1.0) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SemanticGrid;
    use crate::learn::grad_check;
    use crate::project::BevConfig;
    use crate::sim::{render_layout, LayoutParams, Topology};
    use crate::warp::{compose_and_warp, FlowField};
    use crate::ClassCatalog;

    fn rnd_map(h: usize, w: usize, ch: usize, seed: u64) -> BevMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * ch).map(|_| rng.gen_range(0.0..1.0)).collect();
        BevMap::from_grid(SemanticGrid::from_data(h, w, ch, data).unwrap())
    }

    fn small_cfg() -> AlignConfig {
        AlignConfig { flow_rows: 3, flow_cols: 3, ..Default::default() }
    }

    #[test]
    fn objective_zero_at_identity_on_identical_maps() {
        let map = rnd_map(8, 8, 2, 1);
        let cfg = AlignConfig { lambda2: 0.0, lambda3: 0.0, ..small_cfg() };
        let theta = WarpParams::identity(3, 3);
        let (v, _) = alignment_objective(&map, &map, &theta, &cfg).unwrap();
        assert!(v.abs() < 1e-24);
    }

    #[test]
    fn objective_hand_example() {
        // four observed cells, one differs by 0.5 in one channel: 0.5^2 / 4
        let a = rnd_map(2, 2, 2, 2);
        let mut b = a.clone();
        b.grid.cell_mut(1, 0)[1] += 0.5;
        let cfg = AlignConfig { lambda2: 0.0, lambda3: 0.0, ..small_cfg() };
        let theta = WarpParams::identity(3, 3);
        let (v, _) = alignment_objective(&a, &b, &theta, &cfg).unwrap();
        assert!((v - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn objective_requires_observed_cells_and_matching_shapes() {
        let a = BevMap::from_grid(SemanticGrid::zeros(4, 4, 2));
        let b = rnd_map(4, 4, 2, 3);
        let cfg = small_cfg();
        let theta = WarpParams::identity(3, 3);
        assert!(matches!(
            alignment_objective(&a, &b, &theta, &cfg),
            Err(Error::EmptyObservedMask)
        ));
        let c = rnd_map(4, 5, 2, 4);
        assert!(alignment_objective(&b, &c, &theta, &cfg).is_err());
    }

    #[test]
    fn objective_gradient_passes_grad_check() {
        let reference = rnd_map(8, 8, 2, 5);
        let moving = rnd_map(8, 8, 2, 6);
        let cfg = AlignConfig { lambda2: 0.3, lambda3: 0.02, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let mut theta = WarpParams::identity(3, 3);
            theta.similarity = BoxParams {
                tx: rng.gen_range(-1.0..1.0) + 0.31,
                ty: rng.gen_range(-1.0..1.0) + 0.17,
                rotation: rng.gen_range(-0.2..0.2),
                log_scale: rng.gen_range(-0.1..0.1),
            };
            for v in theta.flow.data.iter_mut() {
                *v = rng.gen_range(-0.7..0.7);
            }
            let x = theta.to_vec();
            let f = |p: &[f64]| {
                let th = WarpParams::from_vec(p, 3, 3).unwrap();
                alignment_objective(&reference, &moving, &th, &cfg).unwrap()
            };
            let err = grad_check(f, &x, 1e-6);
            assert!(err < 1e-5, "trial {trial}: max rel err {err}");
        }
    }

    #[test]
    fn objective_ignores_moving_map_outside_warped_support() {
        // reference observed only in a small central block; values of the
        // moving map far from the sampled region must not matter
        let mut reference = rnd_map(8, 8, 2, 8);
        for (i, o) in reference.observed.iter_mut().enumerate() {
            *o = (2..5).contains(&(i / 8)) && (2..5).contains(&(i % 8));
        }
        let moving = rnd_map(8, 8, 2, 9);
        let cfg = AlignConfig { lambda2: 0.0, lambda3: 0.0, ..small_cfg() };
        let mut theta = WarpParams::identity(3, 3);
        theta.similarity.tx = 0.4;
        let (v1, _) = alignment_objective(&reference, &moving, &theta, &cfg).unwrap();
        let mut far = moving.clone();
        far.grid.cell_mut(7, 7)[0] = 0.0;
        far.grid.cell_mut(0, 0)[1] = 0.0;
        let (v2, _) = alignment_objective(&reference, &far, &theta, &cfg).unwrap();
        assert_eq!(v1, v2);
    }

    fn cross_map() -> BevMap {
        let cfg = BevConfig::paper_default();
        let params = LayoutParams {
            topology: Topology::TIntersection { branch_z_m: 28.0, to_right: true },
            lanes_per_direction: 1,
            lane_width_m: 3.2,
            sidewalk: true,
            sidewalk_width_m: 2.0,
            heading_jitter_deg: 0.0,
        };
        render_layout(&params, &cfg, &ClassCatalog::default_road_scene()).unwrap()
    }

    #[test]
    fn aligned_inputs_keep_identity() {
        let map = cross_map();
        let result = align_osm(&map, &map, &AlignConfig::default(), 0).unwrap();
        let b = &result.theta.similarity;
        assert!(b.tx.abs() < 0.25, "tx {}", b.tx);
        assert!(b.ty.abs() < 0.25, "ty {}", b.ty);
        assert!(b.rotation.abs() < 0.5f64.to_radians());
        assert!(b.log_scale.abs() < 0.01);
    }

    #[test]
    fn recovers_a_known_shift() {
        let moving = cross_map();
        let gt = WarpParams {
            similarity: BoxParams { tx: 3.0, ty: -2.0, ..BoxParams::identity() },
            flow: FlowField::zeros(DEFAULT_FLOW_DIMS.0, DEFAULT_FLOW_DIMS.1),
        };
        let reference = compose_and_warp(&moving, &gt).unwrap();
        let result = align_osm(&reference, &moving, &AlignConfig::default(), 1).unwrap();
        assert!((result.theta.similarity.tx - 3.0).abs() < 0.5, "tx {}", result.theta.similarity.tx);
        assert!((result.theta.similarity.ty + 2.0).abs() < 0.5, "ty {}", result.theta.similarity.ty);
    }

    #[test]
    fn huge_l2_weight_pins_theta_to_zero() {
        let reference = cross_map();
        let moving = rnd_map(128, 64, 3, 10);
        let cfg = AlignConfig { lambda3: 1e6, max_iters: 60, ..Default::default() };
        let result = align_osm(&reference, &moving, &cfg, 2).unwrap();
        let norm: f64 = result.theta.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "theta norm {norm}");
    }

    #[test]
    fn trace_is_nonincreasing() {
        let moving = cross_map();
        let gt = WarpParams {
            similarity: BoxParams { tx: -2.0, ty: 1.0, rotation: 0.05, log_scale: 0.02 },
            flow: FlowField::zeros(DEFAULT_FLOW_DIMS.0, DEFAULT_FLOW_DIMS.1),
        };
        let reference = compose_and_warp(&moving, &gt).unwrap();
        let result = align_osm(&reference, &moving, &AlignConfig::default(), 3).unwrap();
        for pair in result.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
        assert!(result.trace.len() >= 2);
    }
}
