//! Training data: the seven-output periodic family, the two-task coupling
//! example, and CSV ingestion.
//!
//! Targets may be partially observed. Unobserved entries have mask 0, are
//! stored as 0.0 and are skipped by every loss in the crate. In CSV files
//! they are empty cells.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N x d_in
    pub x: DMatrix<f64>,
    /// N x d_out
    pub y: DMatrix<f64>,
    /// N x d_out, 1.0 where the target is observed and 0.0 elsewhere.
    pub mask: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Dataset {
    /// Fully observed dataset with default output names `y_1 ..`.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(y.nrows(), y.ncols(), 1.0);
        let names = (1..=y.ncols()).map(|k| format!("y_{k}")).collect();
        Self::with_mask(x, y, mask, names)
    }

    pub fn with_mask(
        x: DMatrix<f64>,
        mut y: DMatrix<f64>,
        mask: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::shape(format!(
                "{} input rows but {} target rows",
                x.nrows(),
                y.nrows()
            )));
        }
        if mask.shape() != y.shape() {
            return Err(Error::shape("mask shape differs from targets"));
        }
        if names.len() != y.ncols() {
            return Err(Error::shape(format!(
                "{} names for {} outputs",
                names.len(),
                y.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input"));
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        for (t, m) in y.iter_mut().zip(mask.iter()) {
            if *m == 0.0 {
                *t = 0.0;
            } else if !t.is_finite() {
                return Err(Error::invalid("non-finite observed target"));
            }
        }
        Ok(Dataset { x, y, mask, names })
    }

    /// 1-D inputs.
    pub fn from_scalar_inputs(xs: &[f64], y: DMatrix<f64>) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(xs.len(), 1, xs), y)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn d_in(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.y.ncols()
    }

    pub fn fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m == 1.0)
    }

    /// Inputs as columns (d_in x N), the layout used by batched forward passes.
    pub fn inputs_by_column(&self) -> DMatrix<f64> {
        self.x.transpose()
    }

    /// The scalar inputs of a 1-D dataset.
    pub fn scalar_inputs(&self) -> Result<Vec<f64>> {
        if self.d_in() != 1 {
            return Err(Error::UnsupportedDimension(self.d_in()));
        }
        Ok(self.x.column(0).iter().copied().collect())
    }

    /// Single-output dataset for output `k`, keeping its mask.
    pub fn column(&self, k: usize) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.columns(k, 1).into_owned(),
            mask: self.mask.columns(k, 1).into_owned(),
            names: vec![self.names[k].clone()],
        }
    }

    /// Standard deviation of all observed target entries (pooled).
    pub fn target_std(&self) -> f64 {
        let obs: Vec<f64> = self
            .y
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m == 1.0)
            .map(|(&t, _)| t)
            .collect();
        if obs.len() < 2 {
            return 0.0;
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        (obs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / obs.len() as f64).sqrt()
    }

    pub fn x_range(&self) -> (f64, f64) {
        let lo = self.x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let default_names = (1..=self.d_out()).all(|k| self.names[k - 1] == format!("y_{k}"));
        if !default_names {
            let _ = writeln!(s, "# names: {}", self.names.join(","));
        }
        let mut header: Vec<String> = (1..=self.d_in()).map(|i| format!("x_{i}")).collect();
        header.extend((1..=self.d_out()).map(|k| format!("y_{k}")));
        let _ = writeln!(s, "{}", header.join(","));
        for i in 0..self.len() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| fmt17(*v)).collect();
            for k in 0..self.d_out() {
                row.push(if self.mask[(i, k)] == 1.0 {
                    fmt17(self.y[(i, k)])
                } else {
                    String::new()
                });
            }
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut names: Option<Vec<String>> = None;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (mut hline, mut header) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
        while let Some(rest) = header.strip_prefix('#') {
            if let Some(list) = rest.trim().strip_prefix("names:") {
                names = Some(list.split(',').map(|n| n.trim().to_string()).collect());
            }
            (hline, header) = lines
                .next()
                .ok_or_else(|| Error::parse(hline, "missing header row"))?;
        }
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let d_in = cols.iter().take_while(|c| c.starts_with('x')).count();
        let d_out = cols.len() - d_in;
        if d_in == 0 || d_out == 0 || cols[d_in..].iter().any(|c| !c.starts_with('y')) {
            return Err(Error::parse(
                hline,
                "header must be x_1..x_din followed by y_1..y_dout",
            ));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ms = Vec::new();
        for (line, l) in lines {
            if l.starts_with('#') {
                continue;
            }
            let cells: Vec<&str> = l.split(',').map(str::trim).collect();
            if cells.len() != cols.len() {
                return Err(Error::parse(
                    line,
                    format!("expected {} fields, found {}", cols.len(), cells.len()),
                ));
            }
            for (j, cell) in cells.iter().enumerate() {
                if j >= d_in && cell.is_empty() {
                    ys.push(0.0);
                    ms.push(0.0);
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad number `{cell}` in column {}", j + 1)))?;
                if !v.is_finite() {
                    return Err(Error::parse(line, "non-finite value"));
                }
                if j < d_in {
                    xs.push(v);
                } else {
                    ys.push(v);
                    ms.push(1.0);
                }
            }
        }
        let n = xs.len() / d_in;
        if n == 0 {
            return Err(Error::parse(hline, "no data rows"));
        }
        let names = match names {
            Some(n) if n.len() == d_out => n,
            Some(_) => return Err(Error::parse(1, "names comment does not match output count")),
            None => (1..=d_out).map(|k| format!("y_{k}")).collect(),
        };
        Dataset::with_mask(
            DMatrix::from_row_slice(n, d_in, &xs),
            DMatrix::from_row_slice(n, d_out, &ys),
            DMatrix::from_row_slice(n, d_out, &ms),
            names,
        )
    }
}

/// 17 significant digits.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, data.to_csv_string()).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_csv_str(&text)
}

/// Output labels of the periodic family, in column order.
pub const PERIODIC7_NAMES: [&str; 7] = [
    "one_kink",
    "absolute_value",
    "square",
    "sign",
    "cubic",
    "sine",
    "exponential",
];

/// The seven shape functions applied to the periodic base value `p`, before
/// standardization.
pub fn periodic_shapes(p: f64) -> [f64; 7] {
    let sign = if p > 0.0 {
        1.0
    } else if p < 0.0 {
        -1.0
    } else {
        0.0
    };
    [
        p.max(0.0),
        p.abs(),
        p * p,
        sign,
        p * p * p,
        (PI * p).sin(),
        p.exp(),
    ]
}

/// Mean and standard deviation of each shape over one period of
/// `p = sin(2 pi t)`, from a dense midpoint rule.
fn periodic_standardization() -> [(f64, f64); 7] {
    const M: usize = 20_000;
    let mut sum = [0.0; 7];
    let mut sq = [0.0; 7];
    for i in 0..M {
        let t = (i as f64 + 0.5) / M as f64;
        let v = periodic_shapes((2.0 * PI * t).sin());
        for k in 0..7 {
            sum[k] += v[k];
            sq[k] += v[k] * v[k];
        }
    }
    let mut out = [(0.0, 1.0); 7];
    for k in 0..7 {
        let mean = sum[k] / M as f64;
        let var = sq[k] / M as f64 - mean * mean;
        out[k] = (mean, var.sqrt());
    }
    out
}

/// Noise-free targets of the periodic family at `x`.
pub fn periodic7_target(x: f64, period: f64) -> [f64; 7] {
    let phase = (x / period).rem_euclid(1.0);
    let p = (2.0 * PI * phase).sin();
    let raw = periodic_shapes(p);
    static STATS: OnceLock<[(f64, f64); 7]> = OnceLock::new();
    let stats = STATS.get_or_init(periodic_standardization);
    let mut out = [0.0; 7];
    for k in 0..7 {
        out[k] = (raw[k] - stats[k].0) / stats[k].1;
    }
    out
}

/// Half-width of the sampling interval of [`gen_periodic7`], in periods.
pub const PERIODIC7_HALF_SPAN: f64 = 1.5;

/// `n` inputs uniform on `[-1.5 period, 1.5 period]` with seven standardized
/// periodic targets plus Gaussian noise.
pub fn gen_periodic7(n: usize, period: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    if !(period > 0.0) || !(noise_sd >= 0.0) {
        return Err(Error::invalid("period must be positive and noise_sd non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = PERIODIC7_HALF_SPAN * period;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut xs = Vec::with_capacity(n);
    let mut y = DMatrix::zeros(n, 7);
    for i in 0..n {
        let x = rng.random_range(-half..half);
        xs.push(x);
        let t = periodic7_target(x, period);
        for k in 0..7 {
            y[(i, k)] = t[k] + if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        }
    }
    let names = PERIODIC7_NAMES.iter().map(|s| s.to_string()).collect();
    Dataset::with_mask(
        DMatrix::from_column_slice(n, 1, &xs),
        y,
        DMatrix::from_element(n, 7, 1.0),
        names,
    )
}

/// Kink positions shared by both tasks of the coupling example.
pub const COUPLING_KINKS: [f64; 3] = [-1.0, 0.0, 1.0];

/// Noise-free targets of the coupling example.
///
/// Task 1 is a hat on `[-1, 1]`; task 2 is a tilted hat with the same kinks.
pub fn coupling_truth(x: f64) -> [f64; 2] {
    let r = |t: f64| t.max(0.0);
    let task1 = r(x + 1.0) - 2.0 * r(x) + r(x - 1.0);
    let task2 = 1.5 * r(x + 1.0) - 2.0 * r(x) + 0.5 * r(x - 1.0);
    [task1, task2]
}

pub const COUPLING_N: usize = 41;
pub const COUPLING_TASK2_X: [f64; 4] = [-1.6, -0.5, 0.4, 1.5];
pub const COUPLING_TASK1_NOISE: f64 = 0.01;
pub const COUPLING_TASK2_NOISE: f64 = 0.05;

/// Two tasks on `[-2, 2]`: task 1 densely sampled with low noise, task 2
/// observed only at four points with higher noise.
pub fn gen_coupling_pair(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n1 = Normal::new(0.0, COUPLING_TASK1_NOISE).expect("valid sd");
    let n2 = Normal::new(0.0, COUPLING_TASK2_NOISE).expect("valid sd");
    let mut xs: Vec<f64> = (0..COUPLING_N)
        .map(|i| -2.0 + 4.0 * i as f64 / (COUPLING_N - 1) as f64)
        .collect();
    let dense = xs.len();
    xs.extend_from_slice(&COUPLING_TASK2_X);
    let n = xs.len();
    let mut y = DMatrix::zeros(n, 2);
    let mut mask = DMatrix::zeros(n, 2);
    for (i, &x) in xs.iter().enumerate() {
        let t = coupling_truth(x);
        if i < dense {
            y[(i, 0)] = t[0] + n1.sample(&mut rng);
            mask[(i, 0)] = 1.0;
        } else {
            y[(i, 1)] = t[1] + n2.sample(&mut rng);
            mask[(i, 1)] = 1.0;
        }
    }
    Dataset::with_mask(
        DMatrix::from_column_slice(n, 1, &xs),
        y,
        mask,
        vec!["dense".into(), "sparse".into()],
    )
    .expect("generated data is consistent")
}

/// Random regression data: `n` inputs uniform on `[-1, 1]^d_in`, standard
/// normal targets.
pub fn gen_random(n: usize, d_in: usize, d_out: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid sd");
    let mut x = DMatrix::zeros(n, d_in);
    for i in 0..n {
        for j in 0..d_in {
            x[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    let y = DMatrix::from_fn(n, d_out, |_, _| normal.sample(&mut rng));
    Dataset::new(x, y).expect("generated data is consistent")
}

/// [`gen_random`] with scalar inputs.
pub fn gen_random_1d(n: usize, d_out: usize, seed: u64) -> Dataset {
    gen_random(n, 1, d_out, seed)
}

/// Mean squared error of `predict` against `truth` on a uniform grid.
pub fn grid_mse(
    lo: f64,
    hi: f64,
    points: usize,
    predict: impl Fn(f64) -> DVector<f64>,
    truth: impl Fn(f64) -> DVector<f64>,
) -> DVector<f64> {
    let mut acc: Option<DVector<f64>> = None;
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
        let e = (predict(x) - truth(x)).map(|t| t * t);
        acc = Some(match acc {
            None => e,
            Some(a) => a + e,
        });
    }
    acc.map(|a| a / points as f64).unwrap_or_else(|| DVector::zeros(0))
}
