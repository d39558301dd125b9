//! Stacked ReLU networks.
//!
//! A network is a composition of *stacks*. Stack `j` maps `R^{d_{j-1}}` to
//! `R^{d_j}` as
//!
//! ```text
//! x  ->  sum_k w_k relu(b_k + <v_k, x>) + c  (+ A x  or  A2 A1 x)
//! ```
//!
//! and consecutive stacks are joined by the inner activation. The last stack
//! is followed by the link (identity only).

mod format;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use format::{network_from_str, network_to_string, read_network, write_network};

/// Norm threshold below which a neuron's inner weight counts as degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerActivation {
    Identity,
    Relu,
}

impl InnerActivation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            InnerActivation::Identity => x,
            InnerActivation::Relu => relu(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InnerActivation::Identity => "identity",
            InnerActivation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "id" => Some(InnerActivation::Identity),
            "relu" => Some(InnerActivation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
}

impl Link {
    pub fn name(self) -> &'static str {
        "identity"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipKind {
    None,
    /// One matrix `A` (d_j x d_{j-1}).
    Linear,
    /// A product `A2 A1` with inner dimension `min(d_j, d_{j-1})`.
    FactoredLinear,
}

impl SkipKind {
    pub fn name(self) -> &'static str {
        match self {
            SkipKind::None => "none",
            SkipKind::Linear => "linear",
            SkipKind::FactoredLinear => "factored",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(SkipKind::None),
            "linear" => Some(SkipKind::Linear),
            "factored" | "factored_linear" => Some(SkipKind::FactoredLinear),
            _ => None,
        }
    }
}

/// Shape description of a stacked network.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// Bottleneck dimensions `d_0 .. d_s`; `d_0` is the input dimension.
    pub dims: Vec<usize>,
    /// Hidden neurons per stack.
    pub widths: Vec<usize>,
    pub inner_activation: InnerActivation,
    pub link: Link,
    pub skips: Vec<SkipKind>,
}

impl Architecture {
    pub fn new(
        dims: Vec<usize>,
        widths: Vec<usize>,
        inner_activation: InnerActivation,
        skips: Vec<SkipKind>,
    ) -> Result<Self> {
        let arch = Architecture {
            dims,
            widths,
            inner_activation,
            link: Link::Identity,
            skips,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// One stack without skip connection.
    pub fn shallow(d_in: usize, width: usize, d_out: usize) -> Self {
        Architecture {
            dims: vec![d_in, d_out],
            widths: vec![width],
            inner_activation: InnerActivation::Relu,
            link: Link::Identity,
            skips: vec![SkipKind::None],
        }
    }

    pub fn num_stacks(&self) -> usize {
        self.widths.len()
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.dims.last().expect("validated architecture has dims")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::invalid("architecture needs at least one stack"));
        }
        if self.dims.len() != self.widths.len() + 1 {
            return Err(Error::invalid(format!(
                "dims has {} entries, expected num_stacks + 1 = {}",
                self.dims.len(),
                self.widths.len() + 1
            )));
        }
        if self.skips.len() != self.widths.len() {
            return Err(Error::invalid(format!(
                "skips has {} entries, expected {}",
                self.skips.len(),
                self.widths.len()
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("bottleneck dimensions must be >= 1"));
        }
        Ok(())
    }

    /// Inner dimension of a factored skip in stack `j`.
    pub fn factored_rank(&self, j: usize) -> usize {
        self.dims[j].min(self.dims[j + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Skip {
    Linear(DMatrix<f64>),
    Factored {
        /// `A2`, d_j x m.
        outer: DMatrix<f64>,
        /// `A1`, m x d_{j-1}.
        inner: DMatrix<f64>,
    },
}

impl Skip {
    pub fn kind(&self) -> SkipKind {
        match self {
            Skip::Linear(_) => SkipKind::Linear,
            Skip::Factored { .. } => SkipKind::FactoredLinear,
        }
    }

    /// The linear map realized by the skip path.
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            Skip::Linear(a) => a.clone(),
            Skip::Factored { outer, inner } => outer * inner,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            Skip::Linear(a) => a.norm_squared(),
            Skip::Factored { outer, inner } => outer.norm_squared() + inner.norm_squared(),
        }
    }
}

/// Trainable parameters of one stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    /// Inner weights, one row per neuron (n x d_{j-1}).
    pub v: DMatrix<f64>,
    /// Inner biases (n).
    pub b: DVector<f64>,
    /// Outer weights, one column per neuron (d_j x n).
    pub w: DMatrix<f64>,
    /// Outer bias (d_j).
    pub c: DVector<f64>,
    pub skip: Option<Skip>,
}

impl StackParams {
    pub fn zeros(d_prev: usize, width: usize, d_next: usize, skip: SkipKind) -> Self {
        let skip = match skip {
            SkipKind::None => None,
            SkipKind::Linear => Some(Skip::Linear(DMatrix::zeros(d_next, d_prev))),
            SkipKind::FactoredLinear => {
                let m = d_prev.min(d_next);
                Some(Skip::Factored {
                    outer: DMatrix::zeros(d_next, m),
                    inner: DMatrix::zeros(m, d_prev),
                })
            }
        };
        StackParams {
            v: DMatrix::zeros(width, d_prev),
            b: DVector::zeros(width),
            w: DMatrix::zeros(d_next, width),
            c: DVector::zeros(d_next),
            skip,
        }
    }

    pub fn width(&self) -> usize {
        self.v.nrows()
    }

    pub fn d_prev(&self) -> usize {
        self.v.ncols()
    }

    pub fn d_next(&self) -> usize {
        self.c.len()
    }

    pub fn skip_kind(&self) -> SkipKind {
        self.skip.as_ref().map_or(SkipKind::None, Skip::kind)
    }

    /// Checks that all shapes agree with each other and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let (n, d_prev, d_next) = (self.width(), self.d_prev(), self.d_next());
        if self.b.len() != n {
            return Err(Error::shape(format!("b has {} entries, v has {n} rows", self.b.len())));
        }
        if self.w.shape() != (d_next, n) {
            return Err(Error::shape(format!(
                "w is {:?}, expected ({d_next}, {n})",
                self.w.shape()
            )));
        }
        match &self.skip {
            None => {}
            Some(Skip::Linear(a)) => {
                if a.shape() != (d_next, d_prev) {
                    return Err(Error::shape(format!(
                        "skip A is {:?}, expected ({d_next}, {d_prev})",
                        a.shape()
                    )));
                }
            }
            Some(Skip::Factored { outer, inner }) => {
                if outer.nrows() != d_next || inner.ncols() != d_prev || outer.ncols() != inner.nrows()
                {
                    return Err(Error::shape(format!(
                        "factored skip {:?} * {:?} does not map {d_prev} -> {d_next}",
                        outer.shape(),
                        inner.shape()
                    )));
                }
            }
        }
        if !self.all_finite() {
            return Err(Error::invalid("stack parameters contain non-finite entries"));
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        let finite = |m: &[f64]| m.iter().all(|x| x.is_finite());
        finite(self.v.as_slice())
            && finite(self.b.as_slice())
            && finite(self.w.as_slice())
            && finite(self.c.as_slice())
            && match &self.skip {
                None => true,
                Some(Skip::Linear(a)) => finite(a.as_slice()),
                Some(Skip::Factored { outer, inner }) => {
                    finite(outer.as_slice()) && finite(inner.as_slice())
                }
            }
    }

    /// Evaluates the stack at a single input.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.d_prev() {
            return Err(Error::shape(format!(
                "stack expects input of length {}, got {}",
                self.d_prev(),
                x.len()
            )));
        }
        let hidden = (&self.v * x + &self.b).map(relu);
        let mut out = &self.w * hidden + &self.c;
        match &self.skip {
            None => {}
            Some(Skip::Linear(a)) => out += a * x,
            Some(Skip::Factored { outer, inner }) => out += outer * (inner * x),
        }
        Ok(out)
    }

    /// Evaluates the stack on a batch stored column-wise (d_{j-1} x N).
    pub fn forward_batch(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_batch_cached(z).1
    }

    /// Returns (pre-activations n x N, outputs d_j x N).
    pub(crate) fn forward_batch_cached(&self, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut pre = &self.v * z;
        for mut col in pre.column_iter_mut() {
            col += &self.b;
        }
        let hidden = pre.map(relu);
        let mut out = &self.w * hidden;
        for mut col in out.column_iter_mut() {
            col += &self.c;
        }
        match &self.skip {
            None => {}
            Some(Skip::Linear(a)) => out += a * z,
            Some(Skip::Factored { outer, inner }) => out += outer * (inner * z),
        }
        (pre, out)
    }

    /// Multiplies neuron `k`'s inner weights and bias by `alpha` and its outer
    /// weights by `1 / alpha`. The represented function does not change.
    pub fn rescale_neuron(&self, k: usize, alpha: f64) -> Result<StackParams> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("rescale factor must be positive, got {alpha}")));
        }
        if k >= self.width() {
            return Err(Error::invalid(format!(
                "neuron index {k} out of range for width {}",
                self.width()
            )));
        }
        let mut out = self.clone();
        out.v.row_mut(k).scale_mut(alpha);
        out.b[k] *= alpha;
        out.w.column_mut(k).scale_mut(1.0 / alpha);
        Ok(out)
    }

    /// `sqrt(|v_k|^2 + b_k^2)`
    pub fn inner_norm(&self, k: usize) -> f64 {
        (self.v.row(k).norm_squared() + self.b[k] * self.b[k]).sqrt()
    }

    pub fn outer_norm(&self, k: usize) -> f64 {
        self.w.column(k).norm()
    }

    /// Rescales every neuron so that its inner and outer norms agree, and
    /// replaces a factored skip by its balanced (SVD) factorization.
    ///
    /// Neurons whose inner or outer part vanishes contribute nothing to the
    /// function and are zeroed entirely.
    pub fn balance(&self) -> StackParams {
        let mut out = self.clone();
        for k in 0..self.width() {
            let inner = self.inner_norm(k);
            let outer = self.outer_norm(k);
            if inner == 0.0 || outer == 0.0 {
                out.v.row_mut(k).fill(0.0);
                out.b[k] = 0.0;
                out.w.column_mut(k).fill(0.0);
                continue;
            }
            let alpha = (outer / inner).sqrt();
            out.v.row_mut(k).scale_mut(alpha);
            out.b[k] *= alpha;
            out.w.column_mut(k).scale_mut(1.0 / alpha);
        }
        if let Some(Skip::Factored { outer, inner }) = &self.skip {
            if let Some((o, i)) = balanced_factors(&(outer * inner), outer.ncols()) {
                // Balanced factors minimize the squared norm; keep the old pair
                // if rounding makes it slightly worse.
                if o.norm_squared() + i.norm_squared() <= outer.norm_squared() + inner.norm_squared()
                {
                    out.skip = Some(Skip::Factored { outer: o, inner: i });
                }
            }
        }
        out
    }

    /// Sum of squares of all trainable entries of this stack.
    pub fn param_norm_sq(&self) -> f64 {
        self.v.norm_squared()
            + self.b.norm_squared()
            + self.w.norm_squared()
            + self.c.norm_squared()
            + self.skip.as_ref().map_or(0.0, Skip::norm_sq)
    }

    /// Ridge-unit description of every neuron.
    pub fn kinks(&self, tol: f64) -> Result<KinkAtomView> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
        }
        let atoms = (0..self.width())
            .map(|k| {
                let v = self.v.row(k).transpose();
                let norm = v.norm();
                let weight = self.w.column(k).into_owned();
                if norm < tol {
                    NeuronKink {
                        direction: DVector::zeros(v.len()),
                        kink: f64::NAN,
                        weight,
                        degenerate: true,
                    }
                } else {
                    NeuronKink {
                        direction: v / norm,
                        kink: -self.b[k] / norm,
                        weight,
                        degenerate: false,
                    }
                }
            })
            .collect();
        Ok(KinkAtomView { atoms })
    }
}

/// `A = U S V^T  ->  (U S^{1/2}, S^{1/2} V^T)`, padded or truncated to rank `m`.
pub(crate) fn balanced_factors(a: &DMatrix<f64>, m: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let (rows, cols) = a.shape();
    let svd = a.clone().try_svd(true, true, f64::EPSILON, 0)?;
    let u = svd.u?;
    let v_t = svd.v_t?;
    let r = svd.singular_values.len();
    let mut outer = DMatrix::zeros(rows, m);
    let mut inner = DMatrix::zeros(m, cols);
    for i in 0..r.min(m) {
        let s = svd.singular_values[i].sqrt();
        outer.set_column(i, &(u.column(i) * s));
        inner.set_row(i, &(v_t.row(i) * s));
    }
    Some((outer, inner))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronKink {
    /// `v_k / |v_k|`; zero for degenerate neurons.
    pub direction: DVector<f64>,
    /// `-b_k / |v_k|`, the signed offset of the kink hyperplane along
    /// `direction`; NaN for degenerate neurons.
    pub kink: f64,
    pub weight: DVector<f64>,
    pub degenerate: bool,
}

impl NeuronKink {
    /// Point of the kink hyperplane closest to the origin, `kink * direction`.
    /// For scalar inputs this is the x-coordinate of the kink.
    pub fn foot_point(&self) -> DVector<f64> {
        &self.direction * self.kink
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinkAtomView {
    pub atoms: Vec<NeuronKink>,
}

/// Parameters of all stacks, in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub stacks: Vec<StackParams>,
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let stacks = (0..arch.num_stacks())
            .map(|j| StackParams::zeros(arch.dims[j], arch.widths[j], arch.dims[j + 1], arch.skips[j]))
            .collect();
        NetworkParams { stacks }
    }

    /// Checks the parameters against `arch`.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        arch.validate()?;
        if self.stacks.len() != arch.num_stacks() {
            return Err(Error::shape(format!(
                "network has {} stacks, architecture {}",
                self.stacks.len(),
                arch.num_stacks()
            )));
        }
        for (j, stack) in self.stacks.iter().enumerate() {
            stack.validate()?;
            if stack.d_prev() != arch.dims[j] || stack.d_next() != arch.dims[j + 1] {
                return Err(Error::shape(format!(
                    "stack {} maps {} -> {}, architecture says {} -> {}",
                    j + 1,
                    stack.d_prev(),
                    stack.d_next(),
                    arch.dims[j],
                    arch.dims[j + 1]
                )));
            }
            if stack.width() != arch.widths[j] {
                return Err(Error::shape(format!(
                    "stack {} has {} neurons, architecture {}",
                    j + 1,
                    stack.width(),
                    arch.widths[j]
                )));
            }
            if stack.skip_kind() != arch.skips[j] {
                return Err(Error::shape(format!(
                    "stack {} skip is {}, architecture {}",
                    j + 1,
                    stack.skip_kind().name(),
                    arch.skips[j].name()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, arch: &Architecture, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(arch)?;
        let last = self.stacks.len() - 1;
        let mut z = x.clone();
        for (j, stack) in self.stacks.iter().enumerate() {
            z = stack.forward(&z)?;
            if j < last {
                z.apply(|t| *t = arch.inner_activation.apply(*t));
            }
        }
        Ok(z)
    }

    /// Output of the first `upto` stacks, before the inner activation that
    /// would follow it. `upto = num_stacks` is the network output.
    pub fn forward_prefix(&self, arch: &Architecture, x: &DVector<f64>, upto: usize) -> Result<DVector<f64>> {
        self.check(arch)?;
        if upto == 0 || upto > self.stacks.len() {
            return Err(Error::invalid(format!(
                "prefix length {upto} outside 1..={}",
                self.stacks.len()
            )));
        }
        let mut z = x.clone();
        for (j, stack) in self.stacks[..upto].iter().enumerate() {
            if j > 0 {
                z.apply(|t| *t = arch.inner_activation.apply(*t));
            }
            z = stack.forward(&z)?;
        }
        Ok(z)
    }

    /// Batched forward pass; `inputs` holds one sample per column.
    pub fn forward_batch(&self, arch: &Architecture, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(arch)?;
        if inputs.nrows() != arch.d_in() {
            return Err(Error::shape(format!(
                "inputs have dimension {}, network expects {}",
                inputs.nrows(),
                arch.d_in()
            )));
        }
        Ok(self.forward_batch_unchecked(arch, inputs))
    }

    pub(crate) fn forward_batch_unchecked(&self, arch: &Architecture, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.stacks.len() - 1;
        let mut z = inputs.clone();
        for (j, stack) in self.stacks.iter().enumerate() {
            z = stack.forward_batch(&z);
            if j < last {
                z.apply(|t| *t = arch.inner_activation.apply(*t));
            }
        }
        z
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.stacks.iter().map(StackParams::param_norm_sq).sum()
    }

    pub fn balance(&self) -> NetworkParams {
        NetworkParams {
            stacks: self.stacks.iter().map(StackParams::balance).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.stacks.iter().map(stack_len).sum()
    }

    /// Flattens all trainable entries (stack by stack: v, b, w, c, skip).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in &self.stacks {
            out.extend_from_slice(s.v.as_slice());
            out.extend_from_slice(s.b.as_slice());
            out.extend_from_slice(s.w.as_slice());
            out.extend_from_slice(s.c.as_slice());
            match &s.skip {
                None => {}
                Some(Skip::Linear(a)) => out.extend_from_slice(a.as_slice()),
                Some(Skip::Factored { outer, inner }) => {
                    out.extend_from_slice(outer.as_slice());
                    out.extend_from_slice(inner.as_slice());
                }
            }
        }
        out
    }

    /// Overwrites all trainable entries from a slice laid out as [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, network {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for s in &mut self.stacks {
            take(s.v.as_mut_slice());
            take(s.b.as_mut_slice());
            take(s.w.as_mut_slice());
            take(s.c.as_mut_slice());
            match &mut s.skip {
                None => {}
                Some(Skip::Linear(a)) => take(a.as_mut_slice()),
                Some(Skip::Factored { outer, inner }) => {
                    take(outer.as_mut_slice());
                    take(inner.as_mut_slice());
                }
            }
        }
        Ok(())
    }
}

fn stack_len(s: &StackParams) -> usize {
    s.v.len()
        + s.b.len()
        + s.w.len()
        + s.c.len()
        + match &s.skip {
            None => 0,
            Some(Skip::Linear(a)) => a.len(),
            Some(Skip::Factored { outer, inner }) => outer.len() + inner.len(),
        }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(v: f64, b: f64, w: f64, c: f64) -> StackParams {
        StackParams {
            v: DMatrix::from_element(1, 1, v),
            b: DVector::from_element(1, b),
            w: DMatrix::from_element(1, 1, w),
            c: DVector::from_element(1, c),
            skip: None,
        }
    }

    fn scalar(s: &StackParams, x: f64) -> f64 {
        s.forward(&DVector::from_element(1, x)).unwrap()[0]
    }

    #[test]
    fn zero_stack_gives_zero() {
        let s = StackParams::zeros(3, 4, 2, SkipKind::Linear);
        let y = s.forward(&DVector::from_vec(vec![1.0, -2.0, 3.0])).unwrap();
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn single_neuron_relu() {
        let s = single(1.0, 0.0, 2.0, 0.0);
        assert_eq!(scalar(&s, 3.0), 6.0);
        assert_eq!(scalar(&s, -3.0), 0.0);
        assert_eq!(scalar(&s, 0.0), 0.0);
    }

    #[test]
    fn linear_skip_adds() {
        let mut s = single(1.0, -1.0, 1.0, 0.5);
        s.skip = Some(Skip::Linear(DMatrix::from_element(1, 1, 2.0)));
        assert_eq!(scalar(&s, 2.0), 5.5);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let s = StackParams::zeros(2, 3, 1, SkipKind::None);
        assert!(matches!(s.forward(&DVector::zeros(3)), Err(Error::Shape(_))));
        let mut bad = s.clone();
        bad.b = DVector::zeros(2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rescale_identity_and_halving() {
        let s = single(1.0, 0.0, 2.0, 0.0);
        assert_eq!(s.rescale_neuron(0, 1.0).unwrap(), s);
        let r = s.rescale_neuron(0, 2.0).unwrap();
        assert_eq!((r.v[(0, 0)], r.b[0], r.w[(0, 0)]), (2.0, 0.0, 1.0));
        for i in 0..1000 {
            let x = -5.0 + 10.0 * i as f64 / 999.0;
            assert_relative_eq!(scalar(&r, x), scalar(&s, x), epsilon = 1e-12);
        }
        assert!(s.rescale_neuron(0, 0.0).is_err());
        assert!(s.rescale_neuron(0, -1.0).is_err());
        assert!(s.rescale_neuron(3, 1.0).is_err());
    }

    #[test]
    fn tiny_rescale_keeps_function() {
        let s = single(0.7, -0.3, 1.5, 0.1);
        let r = s.rescale_neuron(0, 1e-3).unwrap();
        assert!((r.param_norm_sq() - s.param_norm_sq()).abs() > 1.0);
        for i in 0..100 {
            let x = -3.0 + 0.06 * i as f64;
            let (a, b) = (scalar(&s, x), scalar(&r, x));
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn balance_examples() {
        let s = single(4.0, 3.0, 1.0, 0.0);
        assert_eq!(s.param_norm_sq(), 26.0);
        let bal = s.balance();
        assert_relative_eq!(bal.param_norm_sq(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(bal.inner_norm(0), bal.outer_norm(0), epsilon = 1e-12);
        for x in [-2.0, -0.75, 0.0, 0.3, 5.0] {
            assert_relative_eq!(scalar(&bal, x), scalar(&s, x), epsilon = 1e-12);
        }
        // Independent check: scan the rescale factor.
        let best = (1..20000)
            .map(|i| {
                let a = i as f64 * 1e-4;
                a * a * 25.0 + 1.0 / (a * a)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((best - 10.0).abs() < 1e-6);

        let fixed = bal.balance();
        assert_relative_eq!(fixed.v[(0, 0)], bal.v[(0, 0)], epsilon = 1e-15);
        assert_relative_eq!(fixed.w[(0, 0)], bal.w[(0, 0)], epsilon = 1e-15);

        let z = StackParams::zeros(2, 3, 2, SkipKind::FactoredLinear);
        assert_eq!(z.balance(), z);
    }

    #[test]
    fn balance_zeroes_dead_neurons() {
        let s = single(4.0, 3.0, 0.0, 0.0);
        let bal = s.balance();
        assert_eq!(bal.v[(0, 0)], 0.0);
        assert_eq!(bal.b[0], 0.0);
    }

    #[test]
    fn balance_factored_skip() {
        let mut s = StackParams::zeros(2, 1, 2, SkipKind::FactoredLinear);
        s.skip = Some(Skip::Factored {
            outer: DMatrix::from_row_slice(2, 2, &[3.0, 0.1, 0.0, 2.0]),
            inner: DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -0.5, 0.3]),
        });
        let a = s.skip.as_ref().unwrap().matrix();
        let bal = s.balance();
        let a2 = bal.skip.as_ref().unwrap().matrix();
        assert!((a - a2).amax() < 1e-12);
        let sv: f64 = s.skip.as_ref().unwrap().matrix().singular_values().iter().sum();
        assert_relative_eq!(bal.skip.as_ref().unwrap().norm_sq(), 2.0 * sv, epsilon = 1e-12);
    }

    #[test]
    fn kink_examples() {
        let k = single(1.0, -1.0, 1.0, 0.0).kinks(1e-12).unwrap();
        assert_eq!(k.atoms[0].direction[0], 1.0);
        assert_eq!(k.atoms[0].kink, 1.0);
        let k = single(-2.0, 4.0, 1.0, 0.0).kinks(1e-12).unwrap();
        assert_eq!(k.atoms[0].direction[0], -1.0);
        assert_eq!(k.atoms[0].kink, -2.0);
        // relu(4 - 2x) bends at x = 2
        assert_eq!(k.atoms[0].foot_point()[0], 2.0);
        let k = single(0.0, 1.0, 1.0, 0.0).kinks(1e-12).unwrap();
        assert!(k.atoms[0].degenerate);
        assert!(single(1.0, 0.0, 1.0, 0.0).kinks(0.0).is_err());
    }

    #[test]
    fn param_norm_examples() {
        let arch = Architecture::shallow(1, 3, 1);
        assert_eq!(NetworkParams::zeros(&arch).param_norm_sq(), 0.0);
        let net = NetworkParams {
            stacks: vec![single(4.0, 3.0, 1.0, 0.0)],
        };
        assert_eq!(net.param_norm_sq(), 26.0);
    }

    #[test]
    fn flat_roundtrip() {
        let arch = Architecture::new(
            vec![2, 3, 1],
            vec![4, 2],
            InnerActivation::Relu,
            vec![SkipKind::FactoredLinear, SkipKind::Linear],
        )
        .unwrap();
        let mut net = NetworkParams::zeros(&arch);
        let flat: Vec<f64> = (0..net.num_params()).map(|i| i as f64 * 0.5).collect();
        net.set_flat(&flat).unwrap();
        assert_eq!(net.to_flat(), flat);
        assert!(net.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn two_stack_constant_path() {
        // Only the outer biases are nonzero, plus one skip so c(1) reaches the output.
        let arch = Architecture::new(
            vec![1, 2, 1],
            vec![1, 1],
            InnerActivation::Identity,
            vec![SkipKind::None, SkipKind::Linear],
        )
        .unwrap();
        let mut net = NetworkParams::zeros(&arch);
        net.stacks[0].c = DVector::from_vec(vec![1.5, -2.0]);
        net.stacks[1].c = DVector::from_element(1, 0.25);
        net.stacks[1].skip = Some(Skip::Linear(DMatrix::from_row_slice(1, 2, &[2.0, 1.0])));
        let y = net.forward(&arch, &DVector::from_element(1, 7.0)).unwrap();
        // 0.25 + 2 * 1.5 + 1 * (-2)
        assert_eq!(y[0], 1.25);
    }
}
