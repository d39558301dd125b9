//! Full-batch training under squared loss plus weight decay `lambda |theta|^2`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{Architecture, NetworkParams, Skip};
use crate::pfunc;
use crate::tasks::Dataset;

fn check_data(arch: &Architecture, data: &Dataset) -> Result<()> {
    if data.d_in() != arch.d_in() || data.d_out() != arch.d_out() {
        return Err(Error::shape(format!(
            "dataset is {} -> {}, network {} -> {}",
            data.d_in(),
            data.d_out(),
            arch.d_in(),
            arch.d_out()
        )));
    }
    Ok(())
}

/// Masked residuals `pred - y`, laid out d_out x N.
fn residuals(pred: &DMatrix<f64>, data: &Dataset) -> DMatrix<f64> {
    let mut r = pred - data.y.transpose();
    for (e, m) in r.iter_mut().zip(data.mask.transpose().iter()) {
        *e *= m;
    }
    r
}

/// `sum_i |f(x_i) - y_i|^2` over observed entries.
pub fn sq_loss(net: &NetworkParams, arch: &Architecture, data: &Dataset) -> Result<f64> {
    check_data(arch, data)?;
    let pred = net.forward_batch(arch, &data.inputs_by_column())?;
    Ok(residuals(&pred, data).norm_squared())
}

pub fn objective(net: &NetworkParams, arch: &Architecture, data: &Dataset, lambda: f64) -> Result<f64> {
    Ok(sq_loss(net, arch, data)? + lambda * net.param_norm_sq())
}

struct StackCache {
    input: DMatrix<f64>,
    pre: DMatrix<f64>,
    out: DMatrix<f64>,
}

/// Objective value and its gradient (shaped like the network).
///
/// The ReLU derivative at exactly zero is taken as zero.
pub fn objective_and_gradient(
    net: &NetworkParams,
    arch: &Architecture,
    data: &Dataset,
    lambda: f64,
) -> Result<(f64, NetworkParams)> {
    net.check(arch)?;
    check_data(arch, data)?;
    Ok(value_and_grad_unchecked(net, arch, data, &data.inputs_by_column(), lambda))
}

pub fn gradient(
    net: &NetworkParams,
    arch: &Architecture,
    data: &Dataset,
    lambda: f64,
) -> Result<NetworkParams> {
    objective_and_gradient(net, arch, data, lambda).map(|(_, g)| g)
}

fn value_and_grad_unchecked(
    net: &NetworkParams,
    arch: &Architecture,
    data: &Dataset,
    inputs: &DMatrix<f64>,
    lambda: f64,
) -> (f64, NetworkParams) {
    let last = net.stacks.len() - 1;
    let mut caches: Vec<StackCache> = Vec::with_capacity(net.stacks.len());
    let mut z = inputs.clone();
    for (j, stack) in net.stacks.iter().enumerate() {
        let (pre, out) = stack.forward_batch_cached(&z);
        let next = if j < last {
            out.map(|t| arch.inner_activation.apply(t))
        } else {
            out.clone()
        };
        caches.push(StackCache { input: z, pre, out });
        z = next;
    }
    let r = residuals(&z, data);
    let value = r.norm_squared() + lambda * net.param_norm_sq();

    let mut grad = net.clone();
    let mut g_out = r * 2.0;
    for j in (0..=last).rev() {
        let stack = &net.stacks[j];
        let cache = &caches[j];
        let gs = &mut grad.stacks[j];
        let hidden = cache.pre.map(crate::net::relu);
        gs.w = &g_out * hidden.transpose() + &stack.w * (2.0 * lambda);
        gs.c = g_out.column_sum() + &stack.c * (2.0 * lambda);
        let mut g_pre = stack.w.transpose() * &g_out;
        g_pre.zip_apply(&cache.pre, |g, p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        gs.v = &g_pre * cache.input.transpose() + &stack.v * (2.0 * lambda);
        gs.b = g_pre.column_sum() + &stack.b * (2.0 * lambda);
        let mut g_in = if j > 0 { Some(stack.v.transpose() * &g_pre) } else { None };
        match (&stack.skip, &mut gs.skip) {
            (Some(Skip::Linear(a)), Some(Skip::Linear(ga))) => {
                *ga = &g_out * cache.input.transpose() + a * (2.0 * lambda);
                if let Some(g) = g_in.as_mut() {
                    *g += a.transpose() * &g_out;
                }
            }
            (
                Some(Skip::Factored { outer, inner }),
                Some(Skip::Factored {
                    outer: g_outer,
                    inner: g_inner,
                }),
            ) => {
                let mid = inner * &cache.input;
                let back = outer.transpose() * &g_out;
                *g_outer = &g_out * mid.transpose() + outer * (2.0 * lambda);
                *g_inner = &back * cache.input.transpose() + inner * (2.0 * lambda);
                if let Some(g) = g_in.as_mut() {
                    *g += inner.transpose() * back;
                }
            }
            _ => {}
        }
        if let Some(mut g) = g_in {
            let prev_out = &caches[j - 1].out;
            if arch.inner_activation == crate::net::InnerActivation::Relu {
                g.zip_apply(prev_out, |gi, o| {
                    if o <= 0.0 {
                        *gi = 0.0
                    }
                });
            }
            g_out = g;
        }
    }
    (value, grad)
}

/// Entries iid uniform in `[-scale / sqrt(fan_in), scale / sqrt(fan_in)]`.
///
/// The fan-in of `v` and `b` is `d_{j-1}`; of `w` and `c` the stack width; of
/// a skip matrix its column count.
pub fn init(arch: &Architecture, seed: u64, init_scale: f64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkParams::zeros(arch);
    let mut fill = |m: &mut [f64], fan_in: usize| {
        let bound = init_scale / (fan_in.max(1) as f64).sqrt();
        for x in m.iter_mut() {
            let u: f64 = rng.random_range(-1.0..1.0);
            *x = bound * u;
        }
    };
    for (j, s) in net.stacks.iter_mut().enumerate() {
        let d_prev = arch.dims[j];
        let n = arch.widths[j];
        fill(s.v.as_mut_slice(), d_prev);
        fill(s.b.as_mut_slice(), d_prev);
        fill(s.w.as_mut_slice(), n);
        fill(s.c.as_mut_slice(), n);
        match &mut s.skip {
            None => {}
            Some(Skip::Linear(a)) => fill(a.as_mut_slice(), d_prev),
            Some(Skip::Factored { outer, inner }) => {
                let m = inner.nrows();
                fill(outer.as_mut_slice(), m);
                fill(inner.as_mut_slice(), d_prev);
            }
        }
    }
    net
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Gradient descent with backtracking only.
    Gd,
    /// Adam warm-up followed by gradient descent with backtracking.
    AdamThenGd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Iteration budget of the gradient-descent phase.
    pub max_iters: usize,
    pub optimizer: Optimizer,
    pub adam_iters: usize,
    pub adam_lr: f64,
    /// Learning rate reached at the last Adam step; the rate decays
    /// geometrically from `adam_lr`.
    pub adam_lr_final: f64,
    /// First trial step of the descent phase; later trials use the
    /// Barzilai-Borwein step of the previous iteration.
    pub initial_step: f64,
    pub grad_norm_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-2,
            max_iters: 20_000,
            optimizer: Optimizer::AdamThenGd,
            adam_iters: 10_000,
            adam_lr: 1e-1,
            adam_lr_final: 1e-2,
            initial_step: 1e-3,
            grad_norm_tol: 1e-7,
            seed: 0,
            init_scale: 1.0,
            restarts: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.grad_norm_tol > 0.0) || !(self.initial_step > 0.0) || !(self.adam_lr > 0.0) || !(self.adam_lr_final > 0.0) {
            return Err(Error::invalid("tolerances and step sizes must be positive"));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::invalid("init_scale must be non-negative"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        Ok(())
    }

    /// Seed of restart `r`.
    pub fn restart_seed(&self, r: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(r as u64 + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub seed: u64,
    /// Final objective, `None` if the run diverged.
    pub objective: Option<f64>,
    pub initial_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub final_objective: f64,
    pub final_loss: f64,
    pub final_param_norm_sq: f64,
    /// Network cost of the balanced parameters, matching penalty per stack.
    pub final_network_cost: f64,
    pub objective_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    /// Iterations of the descent phase (after the Adam phase).
    pub iterations: usize,
    pub adam_iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome>,
}

impl TrainReport {
    /// One row per iteration: `iteration,phase,objective,grad_norm`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,phase,objective,grad_norm\n");
        for (i, (o, g)) in self.objective_trace.iter().zip(&self.grad_norm_trace).enumerate() {
            let phase = if i == 0 {
                "init"
            } else if i <= self.adam_iterations {
                "adam"
            } else {
                "gd"
            };
            let _ = writeln!(s, "{i},{phase},{o:?},{g:?}");
        }
        s
    }

    /// `key = value` summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "final_objective = {:?}", self.final_objective);
        let _ = writeln!(s, "final_loss = {:?}", self.final_loss);
        let _ = writeln!(s, "final_param_norm_sq = {:?}", self.final_param_norm_sq);
        let _ = writeln!(s, "final_network_cost = {:?}", self.final_network_cost);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "adam_iterations = {}", self.adam_iterations);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(
            s,
            "final_grad_norm = {:?}",
            self.grad_norm_trace.last().copied().unwrap_or(f64::NAN)
        );
        let _ = writeln!(s, "best_restart = {}", self.best_restart);
        for (r, o) in self.restarts.iter().enumerate() {
            match o.objective {
                Some(v) => {
                    let _ = writeln!(s, "restart_{r} = {v:?}");
                }
                None => {
                    let _ = writeln!(s, "restart_{r} = diverged");
                }
            }
        }
        s
    }
}

struct RunResult {
    net: NetworkParams,
    objective_trace: Vec<f64>,
    grad_norm_trace: Vec<f64>,
    adam_iterations: usize,
    iterations: usize,
    converged: bool,
    initial_objective: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn single_run(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    start: NetworkParams,
) -> std::result::Result<RunResult, f64> {
    let inputs = data.inputs_by_column();
    let mut net = start;
    let eval = |net: &NetworkParams| value_and_grad_unchecked(net, arch, data, &inputs, cfg.lambda);
    let value_only = |net: &NetworkParams| {
        let pred = net.forward_batch_unchecked(arch, &inputs);
        residuals(&pred, data).norm_squared() + cfg.lambda * net.param_norm_sq()
    };

    let mut theta = net.to_flat();
    let (mut f, g) = eval(&net);
    let initial_objective = f;
    let mut g = g.to_flat();
    let mut objective_trace = vec![f];
    let mut grad_norm_trace = vec![norm(&g)];

    let mut adam_iterations = 0;
    if cfg.optimizer == Optimizer::AdamThenGd && cfg.adam_iters > 0 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let mut best = (f, theta.clone());
        let decay = if cfg.adam_iters > 1 {
            (cfg.adam_lr_final / cfg.adam_lr).powf(1.0 / (cfg.adam_iters - 1) as f64)
        } else {
            1.0
        };
        let mut lr = cfg.adam_lr;
        for t in 1..=cfg.adam_iters {
            let c1 = 1.0 - f64::powi(b1, t as i32);
            let c2 = 1.0 - f64::powi(b2, t as i32);
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            lr *= decay;
            net.set_flat(&theta).expect("flat length is fixed");
            let (fv, gv) = eval(&net);
            if !fv.is_finite() {
                return Err(fv);
            }
            f = fv;
            g = gv.to_flat();
            objective_trace.push(f);
            grad_norm_trace.push(norm(&g));
            if f < best.0 {
                best = (f, theta.clone());
            }
        }
        adam_iterations = cfg.adam_iters;
        if best.0 < f {
            theta = best.1;
            net.set_flat(&theta).expect("flat length is fixed");
        }
    }
    // Balancing keeps the function and never raises the penalty.
    net = net.balance();
    theta = net.to_flat();
    let (fv, gv) = eval(&net);
    f = fv;
    g = gv.to_flat();

    // Descent phase: Barzilai-Borwein trial step, Armijo backtracking.
    let mut step = cfg.initial_step;
    let mut converged = norm(&g) < cfg.grad_norm_tol;
    let mut iterations = 0;
    let mut trial = net.clone();
    let mut cand = vec![0.0; theta.len()];
    while !converged && iterations < cfg.max_iters {
        let gg: f64 = g.iter().map(|x| x * x).sum();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..theta.len() {
                cand[i] = theta[i] - t * g[i];
            }
            trial.set_flat(&cand).expect("flat length is fixed");
            let fc = value_only(&trial);
            if fc.is_finite() && fc <= f - 1e-4 * t * gg {
                accepted = Some(fc);
                break;
            }
            t *= 0.5;
        }
        if accepted.is_none() {
            // No sufficient decrease along the gradient: stationary up to
            // floating point.
            break;
        }
        let (fc, gc) = eval(&trial);
        let gc = gc.to_flat();
        // BB1 step from s = -t g and y = gc - g.
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..theta.len() {
            let s = cand[i] - theta[i];
            sy += s * (gc[i] - g[i]);
            ss += s * s;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e3) } else { (t * 2.0).min(1e3) };
        std::mem::swap(&mut theta, &mut cand);
        f = fc;
        g = gc;
        iterations += 1;
        objective_trace.push(f);
        let gn = norm(&g);
        grad_norm_trace.push(gn);
        converged = gn < cfg.grad_norm_tol;
    }
    net.set_flat(&theta).expect("flat length is fixed");
    Ok(RunResult {
        net,
        objective_trace,
        grad_norm_trace,
        adam_iterations,
        iterations,
        converged,
        initial_objective,
    })
}

/// Trains from `cfg.restarts` seeded initializations and keeps the run with
/// the lowest final objective. The kept parameters are balanced.
pub fn train(arch: &Architecture, data: &Dataset, cfg: &TrainConfig) -> Result<(NetworkParams, TrainReport)> {
    let starts: Vec<NetworkParams> = (0..cfg.restarts)
        .map(|r| init(arch, cfg.restart_seed(r), cfg.init_scale))
        .collect();
    train_from(arch, data, cfg, starts)
}

/// Like [`train`], from explicit starting points (one per restart).
pub fn train_from(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    starts: Vec<NetworkParams>,
) -> Result<(NetworkParams, TrainReport)> {
    cfg.validate()?;
    arch.validate()?;
    check_data(arch, data)?;
    for s in &starts {
        s.check(arch)?;
    }
    if let Some(&n) = arch.widths.iter().min() {
        if n <= data.len() {
            log::warn!(
                "stack width {n} does not exceed the {} training points; minimizers may not be reached",
                data.len()
            );
        }
    }

    let runs: Vec<(u64, std::result::Result<RunResult, f64>)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(r, start)| (cfg.restart_seed(r), single_run(arch, data, cfg, start)))
        .collect();

    let mut outcomes = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, RunResult)> = None;
    for (r, (seed, run)) in runs.into_iter().enumerate() {
        match run {
            Ok(res) => {
                let fin = *res.objective_trace.last().expect("trace is never empty");
                outcomes.push(RestartOutcome {
                    seed,
                    objective: Some(fin),
                    initial_objective: res.initial_objective,
                });
                let better = best
                    .as_ref()
                    .map_or(true, |(_, b)| fin < *b.objective_trace.last().expect("non-empty"));
                if better {
                    best = Some((r, res));
                }
            }
            Err(_) => {
                log::warn!("restart {r} diverged");
                outcomes.push(RestartOutcome {
                    seed,
                    objective: None,
                    initial_objective: f64::NAN,
                });
            }
        }
    }
    let (best_restart, run) = best.ok_or(Error::AllRestartsDiverged(cfg.restarts))?;
    let net = run.net.balance();
    let final_loss = sq_loss(&net, arch, data)?;
    let final_param_norm_sq = net.param_norm_sq();
    let report = TrainReport {
        final_objective: final_loss + cfg.lambda * final_param_norm_sq,
        final_loss,
        final_param_norm_sq,
        final_network_cost: pfunc::matching_network_cost(&net, arch)?,
        objective_trace: run.objective_trace,
        grad_norm_trace: run.grad_norm_trace,
        iterations: run.iterations,
        adam_iterations: run.adam_iterations,
        converged: run.converged,
        best_restart,
        restarts: outcomes,
    };
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{InnerActivation, SkipKind};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn loss_examples() {
        let arch = Architecture::shallow(1, 2, 2);
        let zero = NetworkParams::zeros(&arch);
        let data = Dataset::from_scalar_inputs(&[0.3], DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        assert_eq!(sq_loss(&zero, &arch, &data).unwrap(), 5.0);
        assert_eq!(objective(&zero, &arch, &data, 3.0).unwrap(), 5.0);

        let mut exact = zero.clone();
        exact.stacks[0].c = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(sq_loss(&exact, &arch, &data).unwrap(), 0.0);
        assert_eq!(objective(&exact, &arch, &data, 0.0).unwrap(), 0.0);
        assert_eq!(objective(&exact, &arch, &data, 0.5).unwrap(), 2.5);

        let bad = Dataset::from_scalar_inputs(&[0.3], DMatrix::zeros(1, 3)).unwrap();
        assert!(sq_loss(&zero, &arch, &bad).is_err());
    }

    #[test]
    fn masked_entries_do_not_count() {
        let arch = Architecture::shallow(1, 2, 2);
        let zero = NetworkParams::zeros(&arch);
        let data = Dataset::with_mask(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(sq_loss(&zero, &arch, &data).unwrap(), 1.0);
    }

    #[test]
    fn gradient_of_regularizer_only() {
        let arch = Architecture::new(
            vec![2, 3, 1],
            vec![4, 2],
            InnerActivation::Relu,
            vec![SkipKind::Linear, SkipKind::FactoredLinear],
        )
        .unwrap();
        let net = init(&arch, 4, 1.0);
        let data = Dataset::with_mask(
            DMatrix::from_element(3, 2, 0.5),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 1),
            vec!["y_1".into()],
        )
        .unwrap();
        let g = gradient(&net, &arch, &data, 0.3).unwrap();
        for (a, b) in g.to_flat().iter().zip(net.to_flat()) {
            assert!((a - 0.6 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_neurons_get_equal_gradients() {
        let arch = Architecture::shallow(1, 2, 1);
        let mut net = NetworkParams::zeros(&arch);
        net.stacks[0].v = DMatrix::from_element(2, 1, 0.7);
        net.stacks[0].b = DVector::from_element(2, -0.1);
        net.stacks[0].w = DMatrix::from_element(1, 2, 0.4);
        let data = crate::tasks::gen_random_1d(5, 1, 3);
        let g = gradient(&net, &arch, &data, 0.01).unwrap();
        let s = &g.stacks[0];
        assert_eq!(s.v[(0, 0)], s.v[(1, 0)]);
        assert_eq!(s.b[0], s.b[1]);
        assert_eq!(s.w[(0, 0)], s.w[(0, 1)]);
    }

    #[test]
    fn init_determinism() {
        let arch = Architecture::shallow(2, 5, 3);
        assert_eq!(init(&arch, 1, 1.0), init(&arch, 1, 1.0));
        assert_ne!(init(&arch, 1, 1.0), init(&arch, 2, 1.0));
        assert_eq!(init(&arch, 1, 0.0).param_norm_sq(), 0.0);
        let net = init(&arch, 9, 0.5);
        let bound = 0.5 / 2f64.sqrt();
        assert!(net.stacks[0].v.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn descent_phase_is_monotone() {
        let arch = Architecture::shallow(1, 8, 1);
        let data = crate::tasks::gen_random_1d(5, 1, 11);
        let cfg = TrainConfig {
            lambda: 1e-2,
            max_iters: 500,
            adam_iters: 100,
            restarts: 2,
            ..Default::default()
        };
        let (_, rep) = train(&arch, &data, &cfg).unwrap();
        let gd = &rep.objective_trace[rep.adam_iterations + 1..];
        for w in gd.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for o in &rep.restarts {
            assert!(o.objective.unwrap() <= o.initial_objective);
        }
        assert!(rep.trace_csv().starts_with("iteration,phase,objective,grad_norm\n0,init,"));
        assert!(rep.summary().contains("best_restart = "));
    }
}
