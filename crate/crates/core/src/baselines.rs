//! Random first-layer features with a ridge-trained output layer.
//!
//! The penalty on the trained weights is the *squared* Euclidean norm, which
//! separates over outputs: fitting all tasks jointly gives exactly the
//! per-task fits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::net::{relu, Architecture, NetworkParams, StackParams};
use crate::tasks::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureModel {
    /// Fixed inner weights (n x d_in).
    v: DMatrix<f64>,
    /// Fixed inner biases (n).
    b: DVector<f64>,
    /// Trained output weights (d_out x n).
    pub w: DMatrix<f64>,
    /// Trained output bias (d_out).
    pub c: DVector<f64>,
    pub lambda: f64,
    pub seed: u64,
}

/// Samples `n` features: `v ~ N(0, I)` and a kink point `u` uniform in the
/// bounding box of the inputs, `b = -<v, u>`.
pub fn sample_features(data: &Dataset, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = data.d_in();
    let bounds: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let col = data.x.column(j);
            (col.min(), col.max())
        })
        .collect();
    let mut v = DMatrix::zeros(n, d);
    let mut b = DVector::zeros(n);
    for k in 0..n {
        let mut dot = 0.0;
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let vk: f64 = StandardNormal.sample(&mut rng);
            let u = if hi > lo { rng.random_range(lo..hi) } else { lo };
            v[(k, j)] = vk;
            dot += vk * u;
        }
        b[k] = -dot;
    }
    (v, b)
}

impl RandomFeatureModel {
    pub fn width(&self) -> usize {
        self.v.nrows()
    }

    pub fn inner_weights(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.v, &self.b)
    }

    fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.v * x + &self.b).map(relu)
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.v.ncols() {
            return Err(Error::shape(format!(
                "model expects input of length {}, got {}",
                self.v.ncols(),
                x.len()
            )));
        }
        Ok(&self.w * self.features(x) + &self.c)
    }

    pub fn predict_scalar(&self, x: f64) -> DVector<f64> {
        self.predict(&DVector::from_element(1, x))
            .expect("scalar prediction needs a scalar-input model")
    }

    /// The same function as a one-stack network.
    pub fn to_network(&self) -> (NetworkParams, Architecture) {
        let arch = Architecture::shallow(self.v.ncols(), self.width(), self.c.len());
        let stack = StackParams {
            v: self.v.clone(),
            b: self.b.clone(),
            w: self.w.clone(),
            c: self.c.clone(),
            skip: None,
        };
        (NetworkParams { stacks: vec![stack] }, arch)
    }
}

/// Fits the output layer on fixed random features.
///
/// Each output column `k` solves `(F_k^T F_k + lambda I) [w_k; c_k] = F_k^T y_k`
/// where `F` is the ReLU feature matrix with a constant column appended and
/// `F_k` keeps the rows where output `k` is observed.
pub fn fit_random_features(data: &Dataset, lambda: f64, n: usize, seed: u64) -> Result<RandomFeatureModel> {
    if n == 0 {
        return Err(Error::invalid("need at least one feature"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let (v, b) = sample_features(data, n, seed);
    let fit = fit_with_features(data, lambda, v, b)?;
    Ok(RandomFeatureModel { seed, ..fit })
}

/// Ridge fit of the output layer for given inner weights.
pub fn fit_with_features(
    data: &Dataset,
    lambda: f64,
    v: DMatrix<f64>,
    b: DVector<f64>,
) -> Result<RandomFeatureModel> {
    let n = v.nrows();
    let rows = data.len();
    let mut feats = DMatrix::zeros(rows, n + 1);
    for i in 0..rows {
        let x = data.x.row(i).transpose();
        let h = (&v * x + &b).map(relu);
        for k in 0..n {
            feats[(i, k)] = h[k];
        }
        feats[(i, n)] = 1.0;
    }
    let d_out = data.d_out();
    let mut w = DMatrix::zeros(d_out, n);
    let mut c = DVector::zeros(d_out);
    for k in 0..d_out {
        let mut fk = feats.clone();
        for i in 0..rows {
            if data.mask[(i, k)] == 0.0 {
                fk.row_mut(i).fill(0.0);
            }
        }
        let mut gram = fk.transpose() * &fk;
        for j in 0..=n {
            gram[(j, j)] += lambda;
        }
        let rhs = fk.transpose() * data.y.column(k);
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("ridge normal equations are not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        for j in 0..n {
            w[(k, j)] = sol[j];
        }
        c[k] = sol[n];
    }
    Ok(RandomFeatureModel {
        v,
        b,
        w,
        c,
        lambda,
        seed: 0,
    })
}
