//! Convex function-space solver for one stack with scalar input.
//!
//! For `d_in = 1` a ridge atom is `W relu(s (x - xi))` with `s = +-1`. Fixing a
//! dense grid of `(s, xi)` pairs turns the function-space problem into a
//! multi-output group lasso
//!
//! ```text
//! min  sum_i |c + sum_g W_g relu(s_g (x_i - xi_g)) - y_i|^2
//!        + lambda |c|^2 + lambda sum_g rho_g |W_g|_2
//! ```
//!
//! with `rho = atom_factor * sqrt(xi^2 + 1)` (biases regularized) or
//! `rho = atom_factor` (biases free, and then `c` is free too). The
//! Euclidean norm over outputs is what couples the tasks: a kink already paid
//! for by one output is cheap for the others.
//!
//! Solved by a working-set method: FISTA with adaptive restart and block
//! soft-thresholding on a subset of atoms, interleaved with Newton steps
//! restricted to the current support, growing the subset with the worst
//! KKT violators of the full grid until none remain.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::{relu, Architecture, NetworkParams, StackParams};
use crate::pfunc::PenaltyKind;
use crate::tasks::Dataset;

/// Atoms with `|W|_2` above this count as active.
pub const ACT_TOL: f64 = 1e-6;

/// Kinks closer than this (relative) are merged when building a grid.
pub const KINK_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAtom {
    /// Direction, `+1.0` or `-1.0`.
    pub s: f64,
    /// Kink position on the input axis.
    pub xi: f64,
    /// Penalty weight.
    pub rho: f64,
}

impl GridAtom {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        relu(self.s * (x - self.xi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub atoms: Vec<GridAtom>,
    pub kind: PenaltyKind,
    pub atom_factor: f64,
}

/// Penalty weight of an atom with kink `xi`.
pub fn atom_weight(xi: f64, kind: PenaltyKind, atom_factor: f64) -> f64 {
    match kind {
        PenaltyKind::BiasReg => atom_factor * (xi * xi + 1.0).sqrt(),
        PenaltyKind::NoBiasReg => atom_factor,
    }
}

impl Grid {
    /// Grid from explicit kink positions, both directions each.
    pub fn from_kinks(kinks: &[f64], kind: PenaltyKind, atom_factor: f64) -> Result<Grid> {
        if !(atom_factor > 0.0) {
            return Err(Error::invalid("atom_factor must be positive"));
        }
        let mut ks: Vec<f64> = kinks.to_vec();
        if ks.iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("non-finite kink position"));
        }
        ks.sort_by(f64::total_cmp);
        // Near-duplicates give collinear atoms; keep the first of each cluster.
        ks.dedup_by(|b, a| (*b - *a).abs() <= KINK_MERGE_TOL * (1.0 + a.abs()));
        let atoms = [1.0, -1.0]
            .iter()
            .flat_map(|&s| {
                ks.iter().map(move |&xi| GridAtom {
                    s,
                    xi,
                    rho: atom_weight(xi, kind, atom_factor),
                })
            })
            .collect();
        Ok(Grid {
            atoms,
            kind,
            atom_factor,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// N x G feature matrix.
    pub fn features(&self, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), self.atoms.len(), |i, g| self.atoms[g].eval(xs[i]))
    }
}

/// Kinks at every training input plus `resolution` equispaced points on
/// `[min x - margin, max x + margin]`, in both directions.
pub fn build_grid(
    data: &Dataset,
    resolution: usize,
    margin: f64,
    kind: PenaltyKind,
    atom_factor: f64,
) -> Result<Grid> {
    if data.d_in() != 1 {
        return Err(Error::UnsupportedDimension(data.d_in()));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    if !(margin >= 0.0) {
        return Err(Error::invalid("margin must be non-negative"));
    }
    let xs = data.scalar_inputs()?;
    let (lo, hi) = data.x_range();
    let (a, b) = (lo - margin, hi + margin);
    let mut kinks = xs;
    kinks.extend((0..resolution).map(|i| a + (b - a) * i as f64 / (resolution - 1) as f64));
    Grid::from_kinks(&kinks, kind, atom_factor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// KKT residual is evaluated every this many iterations.
    pub check_every: usize,
    /// Iterations between Newton polishing attempts on the current
    /// support; `0` disables polishing.
    pub polish_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-7,
            max_iters: 2_000_000,
            check_every: 25,
            polish_every: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub grid: Grid,
    /// G x d_out, one row per atom.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl OracleSolution {
    pub fn d_out(&self) -> usize {
        self.intercept.len()
    }

    pub fn atom_norm(&self, g: usize) -> f64 {
        self.weights.row(g).norm()
    }

    /// Indices of atoms with `|W_g| > ACT_TOL`.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&g| self.atom_norm(g) > ACT_TOL).collect()
    }

    /// Kink positions used by output `k` (`|W_gk| > ACT_TOL`), with direction.
    pub fn active_kinks(&self, k: usize) -> Vec<(f64, f64)> {
        (0..self.grid.len())
            .filter(|&g| self.weights[(g, k)].abs() > ACT_TOL)
            .map(|g| (self.grid.atoms[g].s, self.grid.atoms[g].xi))
            .collect()
    }

    /// `sum_g rho_g |W_g| (+ |c|^2 when biases are regularized)`.
    pub fn penalty(&self) -> f64 {
        penalty(&self.grid, &self.weights, &self.intercept)
    }

    pub fn predict(&self, x: f64) -> DVector<f64> {
        let mut out = self.intercept.clone();
        for (g, atom) in self.grid.atoms.iter().enumerate() {
            let a = atom.eval(x);
            if a != 0.0 {
                out += self.weights.row(g).transpose() * a;
            }
        }
        out
    }

    /// Atom rows `s,xi,rho,W_1..W_dout` for every nonzero atom.
    pub fn atoms_csv(&self) -> String {
        let mut s = String::from("s,xi,rho");
        for k in 1..=self.d_out() {
            let _ = write!(s, ",W_{k}");
        }
        s.push('\n');
        for (g, atom) in self.grid.atoms.iter().enumerate() {
            if self.atom_norm(g) == 0.0 {
                continue;
            }
            let _ = write!(s, "{:?},{:?},{:?}", atom.s, atom.xi, atom.rho);
            for k in 0..self.d_out() {
                let _ = write!(s, ",{:?}", self.weights[(g, k)]);
            }
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "objective = {:?}", self.objective);
        let _ = writeln!(s, "penalty = {:?}", self.penalty());
        let _ = writeln!(s, "kkt_residual = {:?}", self.kkt_residual);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "grid_atoms = {}", self.grid.len());
        let _ = writeln!(s, "active_atoms = {}", self.active_set().len());
        let c: Vec<String> = self.intercept.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "intercept = {}", c.join(" "));
        s
    }
}

/// CSV `x,pred_1..pred_dout`.
pub fn prediction_csv(xs: &[f64], predict: impl Fn(f64) -> DVector<f64>) -> String {
    let mut s = String::from("x");
    let first = xs.first().map(|&x| predict(x));
    let d = first.as_ref().map_or(0, |p| p.len());
    for k in 1..=d {
        let _ = write!(s, ",pred_{k}");
    }
    s.push('\n');
    for &x in xs {
        let _ = write!(s, "{x:?}");
        for v in predict(x).iter() {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

fn penalty(grid: &Grid, weights: &DMatrix<f64>, intercept: &DVector<f64>) -> f64 {
    let atoms: f64 = grid
        .atoms
        .iter()
        .enumerate()
        .map(|(g, a)| a.rho * weights.row(g).norm())
        .sum();
    match grid.kind {
        PenaltyKind::BiasReg => atoms + intercept.norm_squared(),
        PenaltyKind::NoBiasReg => atoms,
    }
}

/// Smooth part of the problem over a fixed dataset.
struct Problem<'a> {
    phi: DMatrix<f64>,
    phi_t: DMatrix<f64>,
    y: DMatrix<f64>,
    mask: &'a DMatrix<f64>,
    grid: &'a Grid,
    lambda: f64,
    /// Quadratic weight on `c` inside the smooth part.
    c_weight: f64,
}

impl<'a> Problem<'a> {
    fn new(data: &'a Dataset, grid: &'a Grid, lambda: f64) -> Result<Self> {
        let xs = data.scalar_inputs()?;
        let phi = grid.features(&xs);
        Ok(Problem {
            phi_t: phi.transpose(),
            phi,
            y: data.y.clone(),
            mask: &data.mask,
            grid,
            lambda,
            c_weight: match grid.kind {
                PenaltyKind::BiasReg => lambda,
                PenaltyKind::NoBiasReg => 0.0,
            },
        })
    }

    fn residual(&self, w: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
        let mut r = &self.phi * w - &self.y;
        for mut row in r.row_iter_mut() {
            row += c.transpose();
        }
        r.component_mul_assign(self.mask);
        r
    }

    fn objective(&self, w: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
        self.residual(w, c).norm_squared() + self.lambda * penalty(self.grid, w, c)
    }

    fn grad(&self, w: &DMatrix<f64>, c: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.residual(w, c);
        let gw = &self.phi_t * &r * 2.0;
        let gc = r.row_sum().transpose() * 2.0 + c * (2.0 * self.c_weight);
        (gw, gc)
    }

    /// Upper bound on the Lipschitz constant of the smooth gradient: twice
    /// the top eigenvalue of `[phi 1] [phi 1]^T` (power iteration) plus the
    /// intercept curvature.
    fn lipschitz(&self) -> f64 {
        let n = self.phi.nrows();
        let mut gram = &self.phi * &self.phi_t;
        gram.add_scalar_mut(1.0);
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..1000 {
            let next = &gram * &v;
            let nn = next.norm();
            if nn == 0.0 {
                break;
            }
            let done = (nn - est).abs() <= 1e-12 * nn;
            est = nn;
            v = next / nn;
            if done {
                break;
            }
        }
        // Power iteration approaches the top eigenvalue from below.
        2.0 * est * 1.01 + 2.0 * self.c_weight + 1e-12
    }

    fn kkt(&self, w: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
        let (gw, gc) = self.grad(w, c);
        kkt_from_gradient(self.grid, self.lambda, w, &gw, &gc)
    }

    /// Damped Newton on the atoms that are currently nonzero, where the
    /// objective is smooth. Atoms whose weight collapses are dropped.
    fn polish(&self, w: &DMatrix<f64>, c: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let d = w.ncols();
        let mut w = w.clone();
        let mut c = c.clone();
        let mut f = self.objective(&w, &c);
        for _ in 0..POLISH_STEPS {
            let support: Vec<usize> = (0..w.nrows()).filter(|&g| w.row(g).norm() > 0.0).collect();
            if support.len() > POLISH_MAX_SUPPORT {
                break;
            }
            let m = support.len() * d + d;
            let (gw, gc) = self.grad(&w, &c);
            let mut grad = DVector::zeros(m);
            let mut hess = DMatrix::zeros(m, m);
            for (a, &g) in support.iter().enumerate() {
                let wg = w.row(g).transpose();
                let nw = wg.norm();
                let u = &wg / nw;
                let scale = self.lambda * self.grid.atoms[g].rho / nw;
                for k in 0..d {
                    grad[a * d + k] = gw[(g, k)] + self.lambda * self.grid.atoms[g].rho * u[k];
                    for l in 0..d {
                        let id = if k == l { 1.0 } else { 0.0 };
                        hess[(a * d + k, a * d + l)] += scale * (id - u[k] * u[l]);
                    }
                }
            }
            for k in 0..d {
                grad[support.len() * d + k] = gc[k];
            }
            let cidx = support.len() * d;
            for i in 0..self.phi.nrows() {
                for k in 0..d {
                    let mk = self.mask[(i, k)];
                    if mk == 0.0 {
                        continue;
                    }
                    for (a, &g) in support.iter().enumerate() {
                        let pa = self.phi[(i, g)];
                        if pa == 0.0 {
                            continue;
                        }
                        for (b, &h) in support.iter().enumerate() {
                            hess[(a * d + k, b * d + k)] += 2.0 * pa * self.phi[(i, h)];
                        }
                        hess[(a * d + k, cidx + k)] += 2.0 * pa;
                        hess[(cidx + k, a * d + k)] += 2.0 * pa;
                    }
                    hess[(cidx + k, cidx + k)] += 2.0;
                }
            }
            for k in 0..d {
                hess[(cidx + k, cidx + k)] += 2.0 * self.c_weight;
            }
            if grad.norm() <= 1e-14 * (1.0 + f) {
                break;
            }
            // Levenberg-Marquardt style: raise the damping until a step
            // passes the line search. The Hessian is singular when the
            // support has more atoms than the data can pin down.
            let base = 1e-12 * (1.0 + hess.diagonal().amax());
            let mut accepted = false;
            for level in 0..12 {
                let damping = if level == 0 { 0.0 } else { base * 100f64.powi(level - 1) };
                let mut h = hess.clone();
                for j in 0..m {
                    h[(j, j)] += damping;
                }
                let Some(ch) = h.cholesky() else { continue };
                let dir = -ch.solve(&grad);
                let slope = grad.dot(&dir);
                if !(slope < 0.0) {
                    continue;
                }
                let mut t = 1.0;
                for _ in 0..30 {
                    let mut wt = w.clone();
                    let mut ct = c.clone();
                    for (a, &g) in support.iter().enumerate() {
                        for k in 0..d {
                            wt[(g, k)] += t * dir[a * d + k];
                        }
                    }
                    for k in 0..d {
                        ct[k] += t * dir[cidx + k];
                    }
                    // An atom pushed through zero leaves the support.
                    for &g in &support {
                        let old = w.row(g);
                        let new = wt.row(g);
                        if old.dot(&new) <= 0.0 || new.norm() <= POLISH_DROP * (1.0 + w.amax()) {
                            wt.row_mut(g).fill(0.0);
                        }
                    }
                    let ft = self.objective(&wt, &ct);
                    if ft <= f + 1e-4 * t * slope {
                        w = wt;
                        c = ct;
                        f = ft;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if accepted {
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
        (w, c)
    }
}

const POLISH_STEPS: usize = 50;
const POLISH_MAX_SUPPORT: usize = 400;
const POLISH_DROP: f64 = 1e-12;

fn kkt_from_gradient(
    grid: &Grid,
    lambda: f64,
    w: &DMatrix<f64>,
    gw: &DMatrix<f64>,
    gc: &DVector<f64>,
) -> f64 {
    let mut res = gc.norm();
    for (g, atom) in grid.atoms.iter().enumerate() {
        let wg = w.row(g);
        let grad_g = gw.row(g);
        let nw = wg.norm();
        let r = if nw > 0.0 {
            (grad_g + wg * (lambda * atom.rho / nw)).norm()
        } else {
            (grad_g.norm() - lambda * atom.rho).max(0.0)
        };
        res = res.max(r);
    }
    res
}

/// Block soft-threshold: `W <- max(0, 1 - t / |W|) W`, row by row.
fn block_shrink(w: &mut DMatrix<f64>, grid: &Grid, scale: f64) {
    for (g, atom) in grid.atoms.iter().enumerate() {
        let t = scale * atom.rho;
        let nw = w.row(g).norm();
        if nw <= t {
            w.row_mut(g).fill(0.0);
        } else {
            w.row_mut(g).scale_mut(1.0 - t / nw);
        }
    }
}

/// Optimality residual of a solution:
/// intercept stationarity, `|grad_g + lambda rho_g W_g / |W_g||` on nonzero
/// atoms and `max(0, |grad_g| - lambda rho_g)` on zero atoms; the maximum
/// over all of them.
pub fn kkt_residual(solution: &OracleSolution, data: &Dataset, lambda: f64) -> Result<f64> {
    let p = Problem::new(data, &solution.grid, lambda)?;
    if solution.weights.shape() != (solution.grid.len(), data.d_out()) {
        return Err(Error::shape("solution does not match dataset outputs"));
    }
    Ok(p.kkt(&solution.weights, &solution.intercept))
}

struct Fista {
    w: DMatrix<f64>,
    c: DVector<f64>,
    iterations: usize,
}

/// FISTA with function-value restart on `p`, warm-started at `(w, c)`,
/// with periodic Newton polishing on the support.
fn fista(p: &Problem, w: DMatrix<f64>, c: DVector<f64>, tol: f64, budget: usize, cfg: &SolverConfig) -> Fista {
    let step = 1.0 / p.lipschitz();
    let mut w = w;
    let mut c = c;
    let mut yw = w.clone();
    let mut yc = c.clone();
    let mut theta: f64 = 1.0;
    let mut f_prev = p.objective(&w, &c);
    let mut kkt = p.kkt(&w, &c);
    let mut iterations = 0;
    let check_every = cfg.check_every.max(1);

    while kkt >= tol && iterations < budget {
        iterations += 1;
        let (gw, gc) = p.grad(&yw, &yc);
        let mut w_next = &yw - gw * step;
        block_shrink(&mut w_next, p.grid, step * p.lambda);
        let c_next = &yc - gc * step;

        let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let beta = (theta - 1.0) / theta_next;
        let f_next = p.objective(&w_next, &c_next);
        if f_next > f_prev && theta > 1.0 {
            // Function-value restart: drop momentum and take a plain
            // proximal step from the current iterate.
            theta = 1.0;
            yw = w.clone();
            yc = c.clone();
            continue;
        }
        yw = &w_next + (&w_next - &w) * beta;
        yc = &c_next + (&c_next - &c) * beta;
        w = w_next;
        c = c_next;
        theta = theta_next;
        f_prev = f_next;
        if iterations % check_every == 0 {
            kkt = p.kkt(&w, &c);
        }
        if cfg.polish_every > 0 && iterations % cfg.polish_every == 0 && kkt >= tol {
            let (pw, pc) = p.polish(&w, &c);
            let pf = p.objective(&pw, &pc);
            if pf <= f_prev {
                w = pw;
                c = pc;
                yw = w.clone();
                yc = c.clone();
                theta = 1.0;
                f_prev = pf;
                kkt = p.kkt(&w, &c);
            }
        }
    }
    Fista { w, c, iterations }
}

/// Multi-output group lasso over `grid`.
///
/// Works on a growing subset of atoms: the subset problem is solved to high
/// accuracy, then the atoms that violate optimality on the full grid are
/// added. Starts from the atoms whose kink sits on an input. Stops once the
/// full-grid KKT residual is below `cfg.tol`.
pub fn solve_group_lasso(
    data: &Dataset,
    lambda: f64,
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<OracleSolution> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if data.d_in() != 1 {
        return Err(Error::UnsupportedDimension(data.d_in()));
    }
    let p = Problem::new(data, grid, lambda)?;
    let d = data.d_out();
    let g_count = grid.len();
    let xs = data.scalar_inputs()?;

    let mut in_set = vec![false; g_count];
    for (g, atom) in grid.atoms.iter().enumerate() {
        in_set[g] = xs
            .iter()
            .any(|&x| (x - atom.xi).abs() <= KINK_MERGE_TOL * (1.0 + x.abs()));
    }
    let mut w = DMatrix::zeros(g_count, d);
    let mut c = DVector::zeros(d);
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut sub_tol = cfg.tol * 0.1;

    while iterations < cfg.max_iters {
        let set: Vec<usize> = (0..g_count).filter(|&g| in_set[g]).collect();
        if !set.is_empty() {
            let sub_grid = Grid {
                atoms: set.iter().map(|&g| grid.atoms[g]).collect(),
                kind: grid.kind,
                atom_factor: grid.atom_factor,
            };
            let sub = Problem::new(data, &sub_grid, lambda)?;
            let w0 = DMatrix::from_fn(set.len(), d, |a, k| w[(set[a], k)]);
            let run = fista(&sub, w0, c.clone(), sub_tol, cfg.max_iters - iterations, cfg);
            iterations += run.iterations.max(1);
            for (a, &g) in set.iter().enumerate() {
                w.set_row(g, &run.w.row(a));
            }
            c = run.c;
        }

        let (gw, gc) = p.grad(&w, &c);
        kkt = kkt_from_gradient(grid, lambda, &w, &gw, &gc);
        if kkt < cfg.tol {
            break;
        }
        let mut violators: Vec<(f64, usize)> = (0..g_count)
            .filter(|&g| !in_set[g])
            .map(|g| (gw.row(g).norm() - lambda * grid.atoms[g].rho, g))
            .filter(|&(v, _)| v > 0.0)
            .collect();
        if violators.is_empty() {
            // Residual comes from inside the working set.
            if sub_tol < 1e-15 {
                break;
            }
            sub_tol *= 0.1;
            continue;
        }
        violators.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, g) in violators.iter().take(WORKING_SET_GROWTH) {
            in_set[g] = true;
        }
    }
    let converged = kkt < cfg.tol;
    if !converged {
        log::warn!("group lasso stopped after {iterations} iterations with KKT residual {kkt:e}");
    }
    Ok(OracleSolution {
        objective: p.objective(&w, &c),
        grid: grid.clone(),
        weights: w,
        intercept: c,
        lambda,
        kkt_residual: kkt,
        iterations,
        converged,
    })
}

const WORKING_SET_GROWTH: usize = 8;

/// Each output column solved on its own (plain weighted lasso per task).
pub fn solve_separate(
    data: &Dataset,
    lambda: f64,
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<Vec<OracleSolution>> {
    (0..data.d_out())
        .map(|k| solve_group_lasso(&data.column(k), lambda, grid, cfg))
        .collect()
}

/// Prediction of per-task solutions, stacked into one output vector.
pub fn predict_separate(solutions: &[OracleSolution], x: f64) -> DVector<f64> {
    DVector::from_iterator(solutions.len(), solutions.iter().map(|s| s.predict(x)[0]))
}

/// A one-stack network with one balanced neuron per nonzero atom.
///
/// The neuron for atom `(s, xi, W)` is `v = s beta`, `b = -s xi beta`,
/// `w = W / beta` with `beta^2 = |W| / sqrt(xi^2 + 1)`, so its weight decay
/// `2 |W| sqrt(xi^2 + 1)` equals the atom penalty for `atom_factor = 2`.
pub fn atoms_to_network(solution: &OracleSolution) -> (NetworkParams, Architecture) {
    let d = solution.d_out();
    let used: Vec<usize> = (0..solution.grid.len())
        .filter(|&g| solution.atom_norm(g) > 0.0)
        .collect();
    let n = used.len();
    let arch = Architecture::shallow(1, n, d);
    let mut stack = StackParams::zeros(1, n, d, crate::net::SkipKind::None);
    for (k, &g) in used.iter().enumerate() {
        let atom = solution.grid.atoms[g];
        let wg = solution.weights.row(g).transpose();
        let beta = (wg.norm() / (atom.xi * atom.xi + 1.0).sqrt()).sqrt();
        stack.v[(k, 0)] = atom.s * beta;
        stack.b[k] = -atom.s * atom.xi * beta;
        stack.w.set_column(k, &(wg / beta));
    }
    stack.c = solution.intercept.clone();
    (NetworkParams { stacks: vec![stack] }, arch)
}

/// Kink atoms of a trained single-stack, scalar-input network, as
/// `(s, xi, W)` with `W = |v| w`. Degenerate neurons are skipped.
pub fn network_atoms(stack: &StackParams) -> Result<Vec<(f64, f64, DVector<f64>)>> {
    if stack.d_prev() != 1 {
        return Err(Error::UnsupportedDimension(stack.d_prev()));
    }
    Ok((0..stack.width())
        .filter_map(|k| {
            let v = stack.v[(k, 0)];
            if v.abs() < crate::net::DEGENERATE_TOL {
                return None;
            }
            let w = stack.w.column(k) * v.abs();
            Some((v.signum(), -stack.b[k] / v, w))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train;
    use approx::assert_relative_eq;

    fn data_1d(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::from_scalar_inputs(xs, DMatrix::from_column_slice(ys.len(), 1, ys)).unwrap()
    }

    #[test]
    fn grid_construction() {
        let d = data_1d(&[0.0, 1.0], &[0.0, 0.0]);
        let g = build_grid(&d, 2, 0.0, PenaltyKind::BiasReg, 2.0).unwrap();
        assert_eq!(g.len(), 4);
        let at0 = g.atoms.iter().find(|a| a.xi == 0.0).unwrap();
        assert_eq!(at0.rho, 2.0);
        let at1 = g.atoms.iter().find(|a| a.xi == 1.0).unwrap();
        assert_relative_eq!(at1.rho, 2.0 * 2f64.sqrt(), epsilon = 1e-15);

        // {-1, -0.25, 0.5, 1.25, 2} plus the inputs {0, 1}
        let g = build_grid(&d, 5, 1.0, PenaltyKind::NoBiasReg, 2.0).unwrap();
        assert_eq!(g.len(), 2 * 7);
        assert!(g.atoms.iter().all(|a| a.rho == 2.0));

        let d2 = Dataset::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(
            build_grid(&d2, 4, 0.0, PenaltyKind::BiasReg, 2.0),
            Err(Error::UnsupportedDimension(2))
        ));
    }

    #[test]
    fn huge_lambda_gives_ridge_constant() {
        let d = data_1d(&[-1.0, 0.0, 0.5, 2.0], &[1.0, 3.0, -0.5, 2.0]);
        let g = build_grid(&d, 16, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let lambda = 1e6;
        let sol = solve_group_lasso(&d, lambda, &g, &SolverConfig::default()).unwrap();
        assert!(sol.active_set().is_empty());
        // argmin_c sum (c - y_i)^2 + lambda c^2
        let c = 5.5 / (4.0 + lambda);
        assert_relative_eq!(sol.intercept[0], c, epsilon = 1e-12);
        let f: f64 = [1.0, 3.0, -0.5, 2.0].iter().map(|y| (c - y) * (c - y)).sum::<f64>() + lambda * c * c;
        assert_relative_eq!(sol.objective, f, max_relative = 1e-12);
    }

    #[test]
    fn single_sample_uses_intercept() {
        let d = data_1d(&[0.0], &[2.0]);
        let g = build_grid(&d, 8, 1.0, PenaltyKind::BiasReg, 2.0).unwrap();
        let lambda = 0.5;
        let sol = solve_group_lasso(&d, lambda, &g, &SolverConfig::default()).unwrap();
        // (c - 2)^2 + lambda c^2 is minimized at c = 2 / (1 + lambda).
        assert_relative_eq!(sol.intercept[0], 2.0 / (1.0 + lambda), epsilon = 1e-8);
        assert!(sol.active_set().is_empty());
        assert!(sol.converged);
    }

    #[test]
    fn kkt_zero_at_trivial_point() {
        let d = data_1d(&[0.0, 1.0], &[0.0, 0.0]);
        let g = build_grid(&d, 4, 0.0, PenaltyKind::BiasReg, 2.0).unwrap();
        let sol = OracleSolution {
            weights: DMatrix::zeros(g.len(), 1),
            intercept: DVector::zeros(1),
            grid: g,
            lambda: 1.0,
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
        };
        assert_eq!(kkt_residual(&sol, &d, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn converged_solution_and_perturbation() {
        let d = crate::tasks::gen_random_1d(6, 2, 17);
        let g = build_grid(&d, 64, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let lambda = 0.05;
        let sol = solve_group_lasso(&d, lambda, &g, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        let res = kkt_residual(&sol, &d, lambda).unwrap();
        assert!(res < 1e-6, "{res}");
        let act = sol.active_set();
        assert!(!act.is_empty());
        let mut bumped = sol.clone();
        bumped.weights[(act[0], 0)] += 1e-2;
        assert!(kkt_residual(&bumped, &d, lambda).unwrap() > res);

        // Objective is consistent with the predictions.
        let xs = d.scalar_inputs().unwrap();
        let loss: f64 = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (sol.predict(x) - d.y.row(i).transpose()).norm_squared())
            .sum();
        assert_relative_eq!(sol.objective, loss + lambda * sol.penalty(), max_relative = 1e-12);
    }

    #[test]
    fn separate_equals_joint_for_one_output() {
        let d = crate::tasks::gen_random_1d(5, 1, 2);
        let g = build_grid(&d, 32, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let cfg = SolverConfig::default();
        let joint = solve_group_lasso(&d, 0.1, &g, &cfg).unwrap();
        let sep = solve_separate(&d, 0.1, &g, &cfg).unwrap();
        assert_eq!(sep.len(), 1);
        assert_relative_eq!(joint.objective, sep[0].objective, max_relative = 1e-9);
    }

    #[test]
    fn identical_columns_stay_identical() {
        let base = crate::tasks::gen_random_1d(5, 1, 8);
        let y = DMatrix::from_fn(5, 2, |i, _| base.y[(i, 0)]);
        let d = Dataset::new(base.x.clone(), y).unwrap();
        let g = build_grid(&d, 32, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let cfg = SolverConfig::default();
        let joint = solve_group_lasso(&d, 0.1, &g, &cfg).unwrap();
        for x in [-1.0, -0.3, 0.2, 0.9] {
            let p = joint.predict(x);
            assert!((p[0] - p[1]).abs() < 1e-6);
        }
        let sep = solve_separate(&d, 0.1, &g, &cfg).unwrap();
        assert_relative_eq!(sep[0].objective, sep[1].objective, max_relative = 1e-12);
        // Group norm never exceeds the l1 norm over outputs.
        for gidx in 0..g.len() {
            let row = joint.weights.row(gidx);
            assert!(row.norm() <= row.iter().map(|v| v.abs()).sum::<f64>() + 1e-15);
        }
    }

    #[test]
    fn predict_and_network_agree() {
        let d = crate::tasks::gen_random_1d(7, 2, 5);
        let g = build_grid(&d, 48, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let lambda = 0.02;
        let sol = solve_group_lasso(&d, lambda, &g, &SolverConfig::default()).unwrap();
        let (net, arch) = atoms_to_network(&sol);
        for i in 0..50 {
            let x = -2.0 + 0.08 * i as f64;
            let a = sol.predict(x);
            let b = net.forward(&arch, &DVector::from_element(1, x)).unwrap();
            assert!((a - b).amax() < 1e-12);
        }
        let obj = train::objective(&net, &arch, &d, lambda).unwrap();
        assert_relative_eq!(obj, sol.objective, max_relative = 1e-10);
        let cost = crate::pfunc::matching_network_cost(&net, &arch).unwrap();
        assert_relative_eq!(cost, sol.penalty(), max_relative = 1e-10);
    }

    #[test]
    fn atoms_to_network_edge_cases() {
        let d = data_1d(&[0.0, 1.0], &[1.0, 1.0]);
        let g = build_grid(&d, 2, 0.0, PenaltyKind::BiasReg, 2.0).unwrap();
        let mut sol = OracleSolution {
            weights: DMatrix::zeros(g.len(), 1),
            intercept: DVector::from_element(1, 0.7),
            grid: g,
            lambda: 1.0,
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
        };
        let (net, arch) = atoms_to_network(&sol);
        assert_eq!(arch.widths, vec![0]);
        assert_eq!(net.forward(&arch, &DVector::from_element(1, 3.0)).unwrap()[0], 0.7);

        // one atom: s = +1, xi = 1, W = 3
        let idx = sol.grid.atoms.iter().position(|a| a.s == 1.0 && a.xi == 1.0).unwrap();
        sol.weights[(idx, 0)] = 3.0;
        let (net, _) = atoms_to_network(&sol);
        let expected = sol.grid.atoms[idx].rho * 3.0 + 0.49;
        assert_relative_eq!(net.param_norm_sq(), expected, max_relative = 1e-12);
        assert_eq!(sol.predict(2.0)[0], 0.7 + 3.0);
    }

    #[test]
    fn csv_outputs() {
        let d = crate::tasks::gen_random_1d(4, 1, 1);
        let g = build_grid(&d, 8, 0.5, PenaltyKind::BiasReg, 2.0).unwrap();
        let sol = solve_group_lasso(&d, 0.1, &g, &SolverConfig::default()).unwrap();
        let csv = sol.atoms_csv();
        assert!(csv.starts_with("s,xi,rho,W_1\n"));
        assert!(sol.summary().contains("kkt_residual = "));
        let p = prediction_csv(&[0.0, 1.0], |x| sol.predict(x));
        assert_eq!(p.lines().count(), 3);
    }
}
