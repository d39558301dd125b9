//! Closed-form representation cost of finite networks.
//!
//! Every neuron of a stack is a ridge atom `w relu(<v, x> + b)`. Its cost is
//! `|w| sqrt(|v|^2 + b^2)` when biases are regularized (the kink weight
//! `sqrt(xi^2 + 1)` times `|v| |w|`), and `|v| |w|` when they are not.
//! The stack cost adds `atom_factor` times the atom costs, `|c|^2` and a
//! skip-path term. With `atom_factor = 2` this equals `|theta|^2` of the
//! balanced parameters.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::{Architecture, NetworkParams, Skip, StackParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    /// Biases are part of the weight decay.
    BiasReg,
    /// Only weights are decayed; `c` and `b` are free.
    NoBiasReg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipPenalty {
    None,
    /// `|A|_F^2`, for a single linear skip matrix.
    FrobeniusSq,
    /// `atom_factor * |A|_S1`, for a factored skip (or read on a plain `A`).
    Schatten1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyVariant {
    pub kind: PenaltyKind,
    pub skip: SkipPenalty,
    pub atom_factor: f64,
}

impl Default for PenaltyVariant {
    fn default() -> Self {
        PenaltyVariant {
            kind: PenaltyKind::BiasReg,
            skip: SkipPenalty::None,
            atom_factor: 2.0,
        }
    }
}

impl PenaltyVariant {
    /// The variant whose balanced cost equals the weight-decay term of `stack`.
    pub fn matching(stack: &StackParams) -> Self {
        let skip = match &stack.skip {
            None => SkipPenalty::None,
            Some(Skip::Linear(_)) => SkipPenalty::FrobeniusSq,
            Some(Skip::Factored { .. }) => SkipPenalty::Schatten1,
        };
        PenaltyVariant {
            skip,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atom_factor > 0.0) || !self.atom_factor.is_finite() {
            return Err(Error::invalid(format!(
                "atom_factor must be positive, got {}",
                self.atom_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    /// Atom cost per neuron, before `atom_factor`.
    pub per_neuron: Vec<f64>,
    pub atom_factor: f64,
    pub bias_term: f64,
    pub skip_term: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn atom_term(&self) -> f64 {
        self.atom_factor * self.per_neuron.iter().sum::<f64>()
    }
}

/// Cost of one ridge unit `w relu(<v, x> + b)`.
pub fn neuron_cost(v: &[f64], b: f64, w: &[f64], kind: PenaltyKind) -> f64 {
    let v_sq: f64 = v.iter().map(|x| x * x).sum();
    let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    match kind {
        PenaltyKind::BiasReg => w_norm * (v_sq + b * b).sqrt(),
        PenaltyKind::NoBiasReg => w_norm * v_sq.sqrt(),
    }
}

/// Sum of singular values.
pub fn schatten1(a: &DMatrix<f64>) -> Result<f64> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("schatten1 of a matrix with non-finite entries"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let svd = a
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    Ok(svd.singular_values.iter().map(|s| s.abs()).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// `(|inner|_F^2 + |outer|_F^2) / 2` at the returned factors.
    pub value: f64,
    pub outer: DMatrix<f64>,
    pub inner: DMatrix<f64>,
    pub iterations: usize,
}

/// Minimizes `(|A1|_F^2 + |A2|_F^2) / 2` over factorizations `A = A2 A1` with
/// a square `A1`, by gradient descent on `A1` with `A2 = A A1^{-1}`.
///
/// The infimum is `|A|_S1`, so this is an SVD-free route to the nuclear
/// norm. The gradient is `A1 - M^T A^T A M M^T` with `M = A1^{-1}`.
pub fn schatten1_by_factorization(a: &DMatrix<f64>, max_iters: usize, tol: f64) -> Result<Factorization> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("factorization of a matrix with non-finite entries"));
    }
    let n = a.ncols();
    if a.is_empty() || a.norm() == 0.0 {
        return Ok(Factorization {
            value: 0.0,
            outer: DMatrix::zeros(a.nrows(), n),
            inner: DMatrix::zeros(n, n),
            iterations: 0,
        });
    }
    let eval = |inner: &DMatrix<f64>| -> Option<(f64, DMatrix<f64>, DMatrix<f64>)> {
        let m = inner.clone().try_inverse()?;
        let outer = a * &m;
        let value = 0.5 * (inner.norm_squared() + outer.norm_squared());
        let grad = inner - m.transpose() * a.transpose() * &outer * m.transpose();
        value.is_finite().then_some((value, outer, grad))
    };
    // Best multiple of the identity as the start.
    let scale = (a.norm() / (n as f64).sqrt()).sqrt();
    let mut inner = DMatrix::identity(n, n) * scale;
    let (mut f, mut outer, mut g) = eval(&inner).ok_or_else(|| Error::Numerical("singular start".into()))?;
    let mut step = 0.5;
    let mut iterations = 0;
    while iterations < max_iters && g.norm() > tol * (1.0 + f) {
        let gg = g.norm_squared();
        let mut t = step;
        let mut next = None;
        for _ in 0..60 {
            let cand = &inner - &g * t;
            if let Some((fc, oc, gc)) = eval(&cand) {
                if fc <= f - 1e-4 * t * gg {
                    next = Some((cand, fc, oc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc, oc, gc)) = next else { break };
        let s = &cand - &inner;
        let y = &gc - &g;
        let sy = s.dot(&y);
        step = if sy > 0.0 { (s.norm_squared() / sy).clamp(1e-8, 1e4) } else { 2.0 * t };
        inner = cand;
        f = fc;
        outer = oc;
        g = gc;
        iterations += 1;
    }
    Ok(Factorization {
        value: f,
        outer,
        inner,
        iterations,
    })
}

pub fn stack_cost(stack: &StackParams, variant: &PenaltyVariant) -> Result<CostBreakdown> {
    variant.validate()?;
    let per_neuron: Vec<f64> = (0..stack.width())
        .map(|k| {
            let v: Vec<f64> = stack.v.row(k).iter().copied().collect();
            let w: Vec<f64> = stack.w.column(k).iter().copied().collect();
            neuron_cost(&v, stack.b[k], &w, variant.kind)
        })
        .collect();
    let bias_term = match variant.kind {
        PenaltyKind::BiasReg => stack.c.norm_squared(),
        PenaltyKind::NoBiasReg => 0.0,
    };
    let skip_term = match (&stack.skip, variant.skip) {
        (None, SkipPenalty::None) => 0.0,
        (Some(Skip::Linear(a)), SkipPenalty::FrobeniusSq) => a.norm_squared(),
        (Some(skip), SkipPenalty::Schatten1) => variant.atom_factor * schatten1(&skip.matrix())?,
        (skip, pen) => {
            return Err(Error::invalid(format!(
                "skip penalty {pen:?} does not apply to skip {:?}",
                skip.as_ref().map(Skip::kind)
            )))
        }
    };
    let atom: f64 = per_neuron.iter().sum();
    Ok(CostBreakdown {
        total: variant.atom_factor * atom + bias_term + skip_term,
        per_neuron,
        atom_factor: variant.atom_factor,
        bias_term,
        skip_term,
    })
}

/// Sum of stack costs at the network's own decomposition. This bounds the
/// function-space cost (an infimum over all decompositions) from above.
pub fn network_cost(
    net: &NetworkParams,
    arch: &Architecture,
    variants: &[PenaltyVariant],
) -> Result<f64> {
    net.check(arch)?;
    if variants.len() != net.stacks.len() {
        return Err(Error::invalid(format!(
            "{} penalty variants for {} stacks",
            variants.len(),
            net.stacks.len()
        )));
    }
    net.stacks
        .iter()
        .zip(variants)
        .map(|(s, v)| stack_cost(s, v).map(|c| c.total))
        .sum()
}

/// Network cost with the bias-regularized variant matching each stack's skip.
pub fn matching_network_cost(net: &NetworkParams, arch: &Architecture) -> Result<f64> {
    let variants: Vec<_> = net.stacks.iter().map(PenaltyVariant::matching).collect();
    network_cost(net, arch, &variants)
}

/// Neuron pairs that nearly cancel into a linear map: opposite outer weights
/// (cosine below -0.999) with matching kinks. Linear parts belong in a skip.
pub fn cancelling_pairs(stack: &StackParams, kink_tol: f64) -> Vec<(usize, usize)> {
    let n = stack.width();
    let mut out = Vec::new();
    let kinks: Vec<Option<(DVector<f64>, f64)>> = (0..n)
        .map(|k| {
            let v = stack.v.row(k).transpose();
            let nv = v.norm();
            (nv > 1e-12).then(|| (v / nv, -stack.b[k] / nv))
        })
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            let (Some((si, xi)), Some((sj, xj))) = (&kinks[i], &kinks[j]) else {
                continue;
            };
            let (wi, wj) = (stack.w.column(i), stack.w.column(j));
            let denom = wi.norm() * wj.norm();
            if denom == 0.0 {
                continue;
            }
            let cos = wi.dot(&wj) / denom;
            // relu(t) - relu(-t) = t: opposite directions, same kink, same
            // hyperplane. Opposite outer weights with equal directions cancel
            // outright.
            let same_plane = (si + sj).norm() < kink_tol && (xi + xj).abs() < kink_tol;
            let same_unit = (si - sj).norm() < kink_tol && (xi - xj).abs() < kink_tol;
            if cos < -0.999 && (same_plane || same_unit) {
                out.push((i, j));
            }
        }
    }
    if !out.is_empty() {
        log::warn!(
            "{} neuron pair(s) nearly cancel into a linear map; use a skip path instead",
            out.len()
        );
    }
    out
}

/// CSV with columns `stack,neuron_index_or_term,value`.
pub fn breakdowns_to_csv(breakdowns: &[CostBreakdown]) -> String {
    let mut s = String::from("stack,neuron_index_or_term,value\n");
    for (j, b) in breakdowns.iter().enumerate() {
        for (k, c) in b.per_neuron.iter().enumerate() {
            let _ = writeln!(s, "{},{},{:?}", j + 1, k, b.atom_factor * c);
        }
        let _ = writeln!(s, "{},bias,{:?}", j + 1, b.bias_term);
        let _ = writeln!(s, "{},skip,{:?}", j + 1, b.skip_term);
        let _ = writeln!(s, "{},total,{:?}", j + 1, b.total);
    }
    s
}
