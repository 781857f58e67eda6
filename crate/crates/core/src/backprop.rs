//! Differentiable parameterized maps and their lift to learners.
//!
//! A [`ParamFn`] carries its implementation together with analytic
//! Jacobians with respect to parameters and input. Composites are built with
//! [`ParamFn::then`] and [`ParamFn::beside`], so the chain rule is exactly the
//! composition law; [`lift`] turns a `ParamFn` into a gradient-descent
//! [`Learner`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::learn::{max_abs_diff, seq_compose, LearnError, Learner};
use crate::numeric::{finite_difference_jacobian, NumericError};
use crate::transformer::{BlockError, TransformerBlock};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackpropError {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("gradient check failed for {name}: relative error {worst:e} exceeds {tolerance:e}")]
    Gradient { name: String, worst: f64, tolerance: f64 },
    #[error("learning rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("error function inverse is off by {0:e}")]
    BadInverse(f64),
    #[error("no sample point at least {margin} away from a kink of {name}")]
    NoSmoothPoint { name: String, margin: f64 },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

pub type Result<T> = std::result::Result<T, BackpropError>;

/// Dense row-major Jacobian; either dimension may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut j = Self::zeros(n, n);
        for i in 0..n {
            j.set(i, i, 1.0);
        }
        j
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Jacobian) -> Jacobian {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(&self.data[i * self.cols..(i + 1) * self.cols]) {
                *o += a * vi;
            }
        }
        out
    }

    /// `[self | other]`.
    pub fn hcat(&self, other: &Jacobian) -> Jacobian {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
            data.extend_from_slice(&other.data[i * other.cols..(i + 1) * other.cols]);
        }
        Self::from_vec(self.rows, cols, data)
    }

    pub fn block_diag(&self, other: &Jacobian) -> Jacobian {
        let mut out = Self::zeros(self.rows + other.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(i, j, self.get(i, j));
            }
        }
        for i in 0..other.rows {
            for j in 0..other.cols {
                out.set(self.rows + i, self.cols + j, other.get(i, j));
            }
        }
        out
    }
}

/// Value and both Jacobians at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub value: Vec<f64>,
    /// `out_dim × param_dim`
    pub jac_p: Jacobian,
    /// `out_dim × in_dim`
    pub jac_a: Jacobian,
}

type ValueFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type LinearizeFn = Arc<dyn Fn(&[f64], &[f64]) -> Linearization + Send + Sync>;
type MarginFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A differentiable map `I: P × A → B` with analytic Jacobians.
#[derive(Clone)]
pub struct ParamFn {
    name: String,
    param_dim: usize,
    in_dim: usize,
    out_dim: usize,
    implement: ValueFn,
    linearize: LinearizeFn,
    /// Distance from `(p, a)` to the nearest point where the map is not
    /// differentiable, if it has any.
    margin: Option<MarginFn>,
    /// Built only from polynomial primitives.
    polynomial: bool,
}

impl fmt::Debug for ParamFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamFn")
            .field("name", &self.name)
            .field("param_dim", &self.param_dim)
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("polynomial", &self.polynomial)
            .finish_non_exhaustive()
    }
}

/// Tolerance for analytic-vs-finite-difference Jacobians.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central difference step used by the gradient oracle.
pub const FD_STEP: f64 = 1e-5;
/// Sample points closer than this to a kink are rejected.
pub const KINK_MARGIN: f64 = 1e-3;

impl ParamFn {
    /// Builds a map from its implementation and linearization, then checks
    /// the Jacobians against finite differences at a few fixed points.
    pub fn new(
        name: impl Into<String>,
        (param_dim, in_dim, out_dim): (usize, usize, usize),
        implement: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        linearize: impl Fn(&[f64], &[f64]) -> Linearization + Send + Sync + 'static,
    ) -> Result<Self> {
        let pf = Self::unchecked(name, (param_dim, in_dim, out_dim), implement, linearize);
        pf.validated()
    }

    /// As [`ParamFn::new`] without the gradient check.
    pub fn unchecked(
        name: impl Into<String>,
        (param_dim, in_dim, out_dim): (usize, usize, usize),
        implement: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        linearize: impl Fn(&[f64], &[f64]) -> Linearization + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            param_dim,
            in_dim,
            out_dim,
            implement: Arc::new(implement),
            linearize: Arc::new(linearize),
            margin: None,
            polynomial: true,
        }
    }

    /// Marks the map as non-polynomial, with `margin` the distance to its
    /// nearest kink (use `f64::INFINITY` for smooth maps).
    pub fn with_margin(mut self, margin: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.margin = Some(Arc::new(margin));
        self.polynomial = false;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Runs the finite-difference check at 5 seeded points.
    pub fn validated(self) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
        let report = validate_gradients(&self, 5, &mut rng)?;
        if report.worst > GRADIENT_TOLERANCE {
            return Err(BackpropError::Gradient {
                name: self.name,
                worst: report.worst,
                tolerance: GRADIENT_TOLERANCE,
            });
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn is_polynomial(&self) -> bool {
        self.polynomial
    }

    pub fn implement(&self, p: &[f64], a: &[f64]) -> Vec<f64> {
        (self.implement)(p, a)
    }

    pub fn linearize(&self, p: &[f64], a: &[f64]) -> Linearization {
        (self.linearize)(p, a)
    }

    pub fn grad_p(&self, p: &[f64], a: &[f64]) -> Jacobian {
        self.linearize(p, a).jac_p
    }

    pub fn grad_a(&self, p: &[f64], a: &[f64]) -> Jacobian {
        self.linearize(p, a).jac_a
    }

    pub fn kink_margin(&self, p: &[f64], a: &[f64]) -> f64 {
        self.margin.as_ref().map_or(f64::INFINITY, |m| m(p, a))
    }

    /// `next ∘ self` with parameters `(p, q)`.
    pub fn then(&self, next: &ParamFn) -> Result<ParamFn> {
        if self.out_dim != next.in_dim {
            return Err(BackpropError::Dimension {
                what: format!("composing {} then {}", self.name, next.name),
                expected: self.out_dim,
                actual: next.in_dim,
            });
        }
        let np = self.param_dim;
        let (f, g) = (self.implement.clone(), next.implement.clone());
        let implement = move |pq: &[f64], a: &[f64]| {
            let (p, q) = pq.split_at(np);
            g(q, &f(p, a))
        };
        let (f, g) = (self.linearize.clone(), next.linearize.clone());
        let linearize = move |pq: &[f64], a: &[f64]| {
            let (p, q) = pq.split_at(np);
            let lf = f(p, a);
            let lg = g(q, &lf.value);
            Linearization {
                jac_p: lg.jac_a.matmul(&lf.jac_p).hcat(&lg.jac_p),
                jac_a: lg.jac_a.matmul(&lf.jac_a),
                value: lg.value,
            }
        };
        let mut out = Self::unchecked(
            format!("{} ; {}", self.name, next.name),
            (self.param_dim + next.param_dim, self.in_dim, next.out_dim),
            implement,
            linearize,
        );
        out.polynomial = self.polynomial && next.polynomial;
        if self.margin.is_some() || next.margin.is_some() {
            let (f, fm, gm) = (self.implement.clone(), self.margin.clone(), next.margin.clone());
            out.margin = Some(Arc::new(move |pq: &[f64], a: &[f64]| {
                let (p, q) = pq.split_at(np);
                let first = fm.as_ref().map_or(f64::INFINITY, |m| m(p, a));
                let second = gm.as_ref().map_or(f64::INFINITY, |m| m(q, &f(p, a)));
                first.min(second)
            }));
        }
        Ok(out)
    }

    /// `self ∥ other` on concatenated parameters, inputs and outputs.
    pub fn beside(&self, other: &ParamFn) -> ParamFn {
        let (np, na) = (self.param_dim, self.in_dim);
        let (f, g) = (self.implement.clone(), other.implement.clone());
        let implement = move |pq: &[f64], ac: &[f64]| {
            let ((p, q), (a, c)) = (pq.split_at(np), ac.split_at(na));
            let mut out = f(p, a);
            out.extend(g(q, c));
            out
        };
        let (f, g) = (self.linearize.clone(), other.linearize.clone());
        let linearize = move |pq: &[f64], ac: &[f64]| {
            let ((p, q), (a, c)) = (pq.split_at(np), ac.split_at(na));
            let (lf, lg) = (f(p, a), g(q, c));
            let mut value = lf.value;
            value.extend(lg.value);
            Linearization {
                value,
                jac_p: lf.jac_p.block_diag(&lg.jac_p),
                jac_a: lf.jac_a.block_diag(&lg.jac_a),
            }
        };
        let mut out = Self::unchecked(
            format!("({} || {})", self.name, other.name),
            (self.param_dim + other.param_dim, self.in_dim + other.in_dim, self.out_dim + other.out_dim),
            implement,
            linearize,
        );
        out.polynomial = self.polynomial && other.polynomial;
        if self.margin.is_some() || other.margin.is_some() {
            let (fm, gm) = (self.margin.clone(), other.margin.clone());
            out.margin = Some(Arc::new(move |pq: &[f64], ac: &[f64]| {
                let ((p, q), (a, c)) = (pq.split_at(np), ac.split_at(na));
                let first = fm.as_ref().map_or(f64::INFINITY, |m| m(p, a));
                let second = gm.as_ref().map_or(f64::INFINITY, |m| m(q, c));
                first.min(second)
            }));
        }
        out
    }

    /// Reads internal parameter `k` from slot `slots[k]` of a new parameter
    /// vector of length `dim`. Repeated slots share a parameter; their
    /// gradients add up.
    pub fn reparameterize(&self, slots: Vec<usize>, dim: usize) -> Result<ParamFn> {
        if slots.len() != self.param_dim {
            return Err(BackpropError::Dimension {
                what: format!("slots for {}", self.name),
                expected: self.param_dim,
                actual: slots.len(),
            });
        }
        if let Some(&bad) = slots.iter().find(|&&s| s >= dim) {
            return Err(BackpropError::Dimension {
                what: "parameter slot".into(),
                expected: dim,
                actual: bad,
            });
        }
        let slots = Arc::new(slots);
        let gather = {
            let slots = slots.clone();
            move |p: &[f64]| slots.iter().map(|&s| p[s]).collect::<Vec<f64>>()
        };
        let (f, g1) = (self.implement.clone(), gather.clone());
        let implement = move |p: &[f64], a: &[f64]| f(&g1(p), a);
        let (f, g2, s2) = (self.linearize.clone(), gather.clone(), slots.clone());
        let linearize = move |p: &[f64], a: &[f64]| {
            let l = f(&g2(p), a);
            let mut jac_p = Jacobian::zeros(l.value.len(), dim);
            for i in 0..l.value.len() {
                for (k, &s) in s2.iter().enumerate() {
                    jac_p.add_at(i, s, l.jac_p.get(i, k));
                }
            }
            Linearization {
                value: l.value,
                jac_p,
                jac_a: l.jac_a,
            }
        };
        let mut out = Self::unchecked(self.name.clone(), (dim, self.in_dim, self.out_dim), implement, linearize);
        out.polynomial = self.polynomial;
        if let Some(m) = self.margin.clone() {
            out.margin = Some(Arc::new(move |p: &[f64], a: &[f64]| m(&gather(p), a)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    /// Largest `max|analytic − fd| / max(1, max|fd|)` over both Jacobians
    /// and all points.
    pub worst: f64,
    pub points: usize,
}

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Draws `(p, a)` uniformly from `[-1, 1]` until it is at least
/// [`KINK_MARGIN`] away from every kink.
pub fn sample_smooth_point(pf: &ParamFn, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    for _ in 0..1000 {
        let p = uniform(rng, pf.param_dim);
        let a = uniform(rng, pf.in_dim);
        if pf.kink_margin(&p, &a) >= KINK_MARGIN {
            return Ok((p, a));
        }
    }
    Err(BackpropError::NoSmoothPoint {
        name: pf.name.clone(),
        margin: KINK_MARGIN,
    })
}

fn relative_error(analytic: &Jacobian, fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    max_abs_diff(analytic.as_slice(), fd) / scale
}

/// Compares both Jacobians with central differences at `points` random
/// kink-free points.
pub fn validate_gradients(pf: &ParamFn, points: usize, rng: &mut impl Rng) -> Result<GradientReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (p, a) = sample_smooth_point(pf, rng)?;
        let lin = pf.linearize(&p, &a);
        if lin.value.len() != pf.out_dim {
            return Err(BackpropError::Dimension {
                what: format!("{} output", pf.name),
                expected: pf.out_dim,
                actual: lin.value.len(),
            });
        }
        let (_, fd_p) = finite_difference_jacobian(|q| pf.implement(q, &a), &p, FD_STEP)?;
        let (_, fd_a) = finite_difference_jacobian(|x| pf.implement(&p, x), &a, FD_STEP)?;
        if fd_p.len() != lin.jac_p.data.len() || fd_a.len() != lin.jac_a.data.len() {
            worst = f64::INFINITY;
            continue;
        }
        worst = worst
            .max(relative_error(&lin.jac_p, &fd_p))
            .max(relative_error(&lin.jac_a, &fd_a));
    }
    Ok(GradientReport { worst, points })
}

pub mod primitives {
    //! The shipped primitive family. Matrices are flattened row-major.

    use super::*;

    fn checked(pf: ParamFn) -> ParamFn {
        pf.validated().expect("shipped primitive has correct gradients")
    }

    pub fn identity(len: usize) -> ParamFn {
        checked(ParamFn::unchecked(
            format!("id{len}"),
            (0, len, len),
            |_, a| a.to_vec(),
            move |_, a| Linearization {
                value: a.to_vec(),
                jac_p: Jacobian::zeros(len, 0),
                jac_a: Jacobian::identity(len),
            },
        ))
    }

    /// `a ↦ a + c` for a fixed vector `c`.
    pub fn add_constant(c: Vec<f64>) -> ParamFn {
        let len = c.len();
        let c = Arc::new(c);
        let c2 = c.clone();
        checked(ParamFn::unchecked(
            "shift",
            (0, len, len),
            move |_, a| a.iter().zip(c.iter()).map(|(x, y)| x + y).collect(),
            move |_, a| Linearization {
                value: a.iter().zip(c2.iter()).map(|(x, y)| x + y).collect(),
                jac_p: Jacobian::zeros(len, 0),
                jac_a: Jacobian::identity(len),
            },
        ))
    }

    /// `a ↦ (a, …, a)` with `copies` copies.
    pub fn copy(len: usize, copies: usize) -> ParamFn {
        let value = move |a: &[f64]| a.repeat(copies);
        checked(ParamFn::unchecked(
            format!("copy{copies}"),
            (0, len, len * copies),
            move |_, a| value(a),
            move |_, a| {
                let mut jac_a = Jacobian::zeros(len * copies, len);
                for c in 0..copies {
                    for i in 0..len {
                        jac_a.set(c * len + i, i, 1.0);
                    }
                }
                Linearization {
                    value: value(a),
                    jac_p: Jacobian::zeros(len * copies, 0),
                    jac_a,
                }
            },
        ))
    }

    /// `(a_1, …, a_k) ↦ a_1 + … + a_k`.
    pub fn sum(len: usize, parts: usize) -> ParamFn {
        let value = move |a: &[f64]| -> Vec<f64> { (0..len).map(|i| (0..parts).map(|c| a[c * len + i]).sum()).collect() };
        checked(ParamFn::unchecked(
            format!("sum{parts}"),
            (0, len * parts, len),
            move |_, a| value(a),
            move |_, a| {
                let mut jac_a = Jacobian::zeros(len, len * parts);
                for c in 0..parts {
                    for i in 0..len {
                        jac_a.set(i, c * len + i, 1.0);
                    }
                }
                Linearization {
                    value: value(a),
                    jac_p: Jacobian::zeros(len, 0),
                    jac_a,
                }
            },
        ))
    }

    /// `X ↦ W X` for `W: rows_out × rows_in` (the parameters) and
    /// `X: rows_in × cols`.
    pub fn left_multiply(rows_out: usize, rows_in: usize, cols: usize) -> ParamFn {
        let value = move |w: &[f64], x: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; rows_out * cols];
            for i in 0..rows_out {
                for k in 0..rows_in {
                    let wik = w[i * rows_in + k];
                    for j in 0..cols {
                        out[i * cols + j] += wik * x[k * cols + j];
                    }
                }
            }
            out
        };
        checked(ParamFn::unchecked(
            format!("mul{rows_out}x{rows_in}"),
            (rows_out * rows_in, rows_in * cols, rows_out * cols),
            move |w, x| value(w, x),
            move |w, x| {
                let mut jac_p = Jacobian::zeros(rows_out * cols, rows_out * rows_in);
                let mut jac_a = Jacobian::zeros(rows_out * cols, rows_in * cols);
                for i in 0..rows_out {
                    for j in 0..cols {
                        for k in 0..rows_in {
                            jac_p.set(i * cols + j, i * rows_in + k, x[k * cols + j]);
                            jac_a.set(i * cols + j, k * cols + j, w[i * rows_in + k]);
                        }
                    }
                }
                Linearization {
                    value: value(w, x),
                    jac_p,
                    jac_a,
                }
            },
        ))
    }

    /// `a ↦ W a` with `W: out × in`.
    pub fn linear(in_dim: usize, out_dim: usize) -> ParamFn {
        left_multiply(out_dim, in_dim, 1).with_name(format!("linear{in_dim}->{out_dim}"))
    }

    /// `a ↦ W a + b`, parameters `W` (row-major) then `b`.
    pub fn affine(in_dim: usize, out_dim: usize) -> ParamFn {
        let nw = in_dim * out_dim;
        let value = move |p: &[f64], a: &[f64]| -> Vec<f64> {
            (0..out_dim)
                .map(|i| p[nw + i] + (0..in_dim).map(|k| p[i * in_dim + k] * a[k]).sum::<f64>())
                .collect()
        };
        checked(ParamFn::unchecked(
            format!("affine{in_dim}->{out_dim}"),
            (nw + out_dim, in_dim, out_dim),
            move |p, a| value(p, a),
            move |p, a| {
                let mut jac_p = Jacobian::zeros(out_dim, nw + out_dim);
                let mut jac_a = Jacobian::zeros(out_dim, in_dim);
                for i in 0..out_dim {
                    for k in 0..in_dim {
                        jac_p.set(i, i * in_dim + k, a[k]);
                        jac_a.set(i, k, p[i * in_dim + k]);
                    }
                    jac_p.set(i, nw + i, 1.0);
                }
                Linearization {
                    value: value(p, a),
                    jac_p,
                    jac_a,
                }
            },
        ))
    }

    /// `Z ↦ Z + b 1ᵀ` for `Z: rows × cols`, parameters `b`.
    pub fn column_bias(rows: usize, cols: usize) -> ParamFn {
        let value = move |b: &[f64], z: &[f64]| -> Vec<f64> { (0..rows * cols).map(|k| z[k] + b[k / cols]).collect() };
        checked(ParamFn::unchecked(
            format!("bias{rows}"),
            (rows, rows * cols, rows * cols),
            move |b, z| value(b, z),
            move |b, z| {
                let mut jac_p = Jacobian::zeros(rows * cols, rows);
                for k in 0..rows * cols {
                    jac_p.set(k, k / cols, 1.0);
                }
                Linearization {
                    value: value(b, z),
                    jac_p,
                    jac_a: Jacobian::identity(rows * cols),
                }
            },
        ))
    }

    /// Entrywise `max(0, x)`; the derivative at 0 is taken to be 0.
    pub fn relu(len: usize) -> ParamFn {
        let value = |a: &[f64]| -> Vec<f64> { a.iter().map(|&x| x.max(0.0)).collect() };
        checked(
            ParamFn::unchecked(
                format!("relu{len}"),
                (0, len, len),
                move |_, a| value(a),
                move |_, a| {
                    let mut jac_a = Jacobian::zeros(len, len);
                    for (i, &x) in a.iter().enumerate() {
                        if x > 0.0 {
                            jac_a.set(i, i, 1.0);
                        }
                    }
                    Linearization {
                        value: value(a),
                        jac_p: Jacobian::zeros(len, 0),
                        jac_a,
                    }
                },
            )
            .with_margin(|_, a| a.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))),
        )
    }

    fn softmax_value(rows: usize, cols: usize, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for j in 0..cols {
            let max = (0..rows).map(|i| z[i * cols + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..rows {
                let e = (z[i * cols + j] - max).exp();
                out[i * cols + j] = e;
                total += e;
            }
            for i in 0..rows {
                out[i * cols + j] /= total;
            }
        }
        out
    }

    /// Column-wise softmax of a `rows × cols` matrix, Jacobian
    /// `diag(s) − s sᵀ` per column.
    pub fn softmax_columns(rows: usize, cols: usize) -> ParamFn {
        checked(
            ParamFn::unchecked(
                format!("softmax{rows}x{cols}"),
                (0, rows * cols, rows * cols),
                move |_, z| softmax_value(rows, cols, z),
                move |_, z| {
                    let s = softmax_value(rows, cols, z);
                    let mut jac_a = Jacobian::zeros(rows * cols, rows * cols);
                    for j in 0..cols {
                        for i in 0..rows {
                            let si = s[i * cols + j];
                            for k in 0..rows {
                                let sk = s[k * cols + j];
                                let d = if i == k { si - si * sk } else { -si * sk };
                                jac_a.set(i * cols + j, k * cols + j, d);
                            }
                        }
                    }
                    Linearization {
                        value: s,
                        jac_p: Jacobian::zeros(rows * cols, 0),
                        jac_a,
                    }
                },
            )
            .with_margin(|_, _| f64::INFINITY),
        )
    }

    /// `(L, R) ↦ L R` (or `Lᵀ R` when `transpose_left`), where the product
    /// is `rows × cols` with inner dimension `inner`. `L` is stored as
    /// `rows × inner`, or `inner × rows` when transposed; `R` as
    /// `inner × cols`.
    pub fn product(rows: usize, inner: usize, cols: usize, transpose_left: bool) -> ParamFn {
        let left_at = move |i: usize, k: usize| if transpose_left { k * rows + i } else { i * inner + k };
        let nl = rows * inner;
        let value = move |lr: &[f64]| -> Vec<f64> {
            let (l, r) = lr.split_at(nl);
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                for k in 0..inner {
                    let lik = l[left_at(i, k)];
                    for j in 0..cols {
                        out[i * cols + j] += lik * r[k * cols + j];
                    }
                }
            }
            out
        };
        checked(ParamFn::unchecked(
            if transpose_left { "gram" } else { "product" },
            (0, nl + inner * cols, rows * cols),
            move |_, lr| value(lr),
            move |_, lr| {
                let (l, r) = lr.split_at(nl);
                let mut jac_a = Jacobian::zeros(rows * cols, nl + inner * cols);
                for i in 0..rows {
                    for j in 0..cols {
                        for k in 0..inner {
                            jac_a.set(i * cols + j, left_at(i, k), r[k * cols + j]);
                            jac_a.set(i * cols + j, nl + k * cols + j, l[left_at(i, k)]);
                        }
                    }
                }
                Linearization {
                    value: value(lr),
                    jac_p: Jacobian::zeros(rows * cols, 0),
                    jac_a,
                }
            },
        ))
    }

    /// `X ↦ (W_K X)ᵀ (W_Q X)` for `X: d × n`, parameters `W_K` then `W_Q`
    /// (each `m × d`).
    pub fn attention_scores(d: usize, n: usize, m: usize) -> ParamFn {
        let keys_queries = left_multiply(m, d, n).beside(&left_multiply(m, d, n));
        copy(d * n, 2)
            .then(&keys_queries)
            .and_then(|f| f.then(&product(n, m, n, true)))
            .expect("attention score dimensions agree")
            .with_name("scores")
    }
}

/// Parameters tagged with their slot in the final parameter vector.
struct Tagged {
    pf: ParamFn,
    slots: Vec<usize>,
}

impl Tagged {
    fn fixed(pf: ParamFn) -> Self {
        Self { pf, slots: Vec::new() }
    }

    fn at(pf: ParamFn, offset: usize) -> Self {
        let slots = (offset..offset + pf.param_dim()).collect();
        Self { pf, slots }
    }

    fn then(self, next: Tagged) -> Self {
        let pf = self.pf.then(&next.pf).expect("block plumbing dimensions agree");
        Self {
            pf,
            slots: [self.slots, next.slots].concat(),
        }
    }

    fn beside(self, other: Tagged) -> Self {
        Self {
            pf: self.pf.beside(&other.pf),
            slots: [self.slots, other.slots].concat(),
        }
    }
}

/// The Transformer block as a map `P × ℝ^{dn} → ℝ^{dn}` with `P` in the
/// block's flatten order. Weights in the template are ignored; only its
/// shape and positional encoding matter.
pub fn block_as_paramfn(template: &TransformerBlock) -> Result<ParamFn> {
    use primitives::*;
    let s = template.shape();
    let (d, n, h, m, r) = (s.d, s.n, s.h, s.m, s.r);
    let dn = d * n;
    let head_len = 4 * d * m;

    let mut branches = Tagged::fixed(identity(dn));
    for i in 0..h {
        let base = i * head_len;
        let values = Tagged::at(left_multiply(m, d, n), base + d * m);
        let weights = Tagged::at(attention_scores(d, n, m), base + 2 * d * m).then(Tagged::fixed(softmax_columns(n, n)));
        let head = Tagged::fixed(copy(dn, 2))
            .then(values.beside(weights))
            .then(Tagged::fixed(product(m, n, n, false)))
            .then(Tagged::at(left_multiply(d, m, n), base));
        branches = branches.beside(head);
    }
    let attn = Tagged::fixed(copy(dn, h + 1))
        .then(branches)
        .then(Tagged::fixed(sum(dn, h + 1)));

    let ff_base = h * head_len;
    let hidden = Tagged::at(left_multiply(r, d, n), ff_base)
        .then(Tagged::at(column_bias(r, n), ff_base + 2 * r * d))
        .then(Tagged::fixed(relu(r * n)))
        .then(Tagged::at(left_multiply(d, r, n), ff_base + r * d));
    let ff = Tagged::fixed(copy(dn, 2))
        .then(Tagged::fixed(identity(dn)).beside(hidden))
        .then(Tagged::fixed(sum(dn, 2)));

    let mut block = attn.then(ff);
    if let Some(e) = template.positional() {
        block = Tagged::fixed(add_constant(e.as_slice().to_vec())).then(block);
    }
    Ok(block
        .pf
        .reparameterize(block.slots, s.param_count())?
        .with_name(format!("block({d},{n},{h},{m},{r})")))
}

/// A pointwise error `e(x, y)` whose partial `∂e/∂x(a, −)` is invertible.
#[derive(Clone)]
pub struct ErrorFunction {
    pub name: String,
    e: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    de_dx: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    inverse: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for ErrorFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ErrorFunction({})", self.name)
    }
}

impl ErrorFunction {
    /// `inverse(a, v)` must return the `b` with `de_dx(a, b) = v`; checked
    /// on a grid.
    pub fn new(
        name: impl Into<String>,
        e: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        de_dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        inverse: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let err = Self {
            name: name.into(),
            e: Arc::new(e),
            de_dx: Arc::new(de_dx),
            inverse: Arc::new(inverse),
        };
        let worst = err.inverse_deviation();
        if worst > 1e-9 {
            return Err(BackpropError::BadInverse(worst));
        }
        Ok(err)
    }

    /// `e(x, y) = ½ (x − y)²`, with `∂e/∂x(a, b) = a − b` inverted by
    /// `v ↦ a − v`.
    pub fn quadratic() -> Self {
        Self::new(
            "quadratic",
            |x, y| 0.5 * (x - y) * (x - y),
            |x, y| x - y,
            |a, v| a - v,
        )
        .expect("quadratic inverse is exact")
    }

    pub fn e(&self, x: f64, y: f64) -> f64 {
        (self.e)(x, y)
    }

    pub fn de_dx(&self, x: f64, y: f64) -> f64 {
        (self.de_dx)(x, y)
    }

    pub fn inverse_de_dx(&self, a: f64, v: f64) -> f64 {
        (self.inverse)(a, v)
    }

    /// `Σ_j e(x_j, y_j)`.
    pub fn total(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(&a, &b)| self.e(a, b)).sum()
    }

    /// Worst `|inverse(a, de_dx(a, b)) − b|` over a grid in `[-3, 3]²`.
    pub fn inverse_deviation(&self) -> f64 {
        let grid: Vec<f64> = (-6..=6).map(|k| k as f64 * 0.5).collect();
        let mut worst: f64 = 0.0;
        for &a in &grid {
            for &b in &grid {
                worst = worst.max((self.inverse_de_dx(a, self.de_dx(a, b)) - b).abs());
            }
        }
        worst
    }
}

/// A learner obtained by lifting, with what it was lifted from.
#[derive(Debug, Clone)]
pub struct LiftedLearner {
    pub learner: Learner,
    pub eps: f64,
    pub error: ErrorFunction,
    pub source: ParamFn,
}

/// `(P, I, U_I, r_I)` with `U_I = p − ε ∇_p E_I` and `r_I` the componentwise
/// inverse of `∂e/∂x(a_i, −)` applied to `∇_a E_I`, where
/// `E_I(p, a, b) = Σ_j e(I_j(p, a), b_j)`.
pub fn lift(pf: &ParamFn, eps: f64, err: &ErrorFunction) -> Result<LiftedLearner> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51ed);
    let report = validate_gradients(pf, 3, &mut rng)?;
    if report.worst > GRADIENT_TOLERANCE {
        return Err(BackpropError::Gradient {
            name: pf.name.clone(),
            worst: report.worst,
            tolerance: GRADIENT_TOLERANCE,
        });
    }
    lift_unchecked(pf, eps, err)
}

/// As [`lift`] without re-validating the gradients of `pf`.
pub fn lift_unchecked(pf: &ParamFn, eps: f64, err: &ErrorFunction) -> Result<LiftedLearner> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BackpropError::BadRate(eps));
    }
    Ok(lift_with_rate(pf, eps, err))
}

/// Lifting without the positivity check on `ε`; `ε = 0` gives a learner
/// that never moves.
pub fn lift_with_rate(pf: &ParamFn, eps: f64, err: &ErrorFunction) -> LiftedLearner {
    let delta = {
        let err = err.clone();
        move |value: &[f64], b: &[f64]| -> Vec<f64> { value.iter().zip(b).map(|(&x, &y)| err.de_dx(x, y)).collect() }
    };
    let f = pf.clone();
    let implement = move |p: &[f64], a: &[f64]| f.implement(p, a);
    let (f, d) = (pf.clone(), delta.clone());
    let update = move |p: &[f64], a: &[f64], b: &[f64]| {
        let lin = f.linearize(p, a);
        let grad = lin.jac_p.transpose_apply(&d(&lin.value, b));
        p.iter().zip(grad).map(|(pi, g)| pi - eps * g).collect()
    };
    let (f, d, e) = (pf.clone(), delta, err.clone());
    let request = move |p: &[f64], a: &[f64], b: &[f64]| {
        let lin = f.linearize(p, a);
        let grad = lin.jac_a.transpose_apply(&d(&lin.value, b));
        a.iter().zip(grad).map(|(&ai, g)| e.inverse_de_dx(ai, g)).collect()
    };
    LiftedLearner {
        learner: Learner::new(
            format!("L({})", pf.name),
            (pf.param_dim, pf.in_dim, pf.out_dim),
            implement,
            update,
            request,
        ),
        eps,
        error: err.clone(),
        source: pf.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctorialityReport {
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub points: usize,
}

/// Tolerance for lift-of-composite against composite-of-lifts.
pub fn functoriality_tolerance(pf1: &ParamFn, pf2: &ParamFn) -> f64 {
    if pf1.is_polynomial() && pf2.is_polynomial() {
        1e-9
    } else {
        1e-6
    }
}

/// Compares `lift(pf2 ∘ pf1)` with `lift(pf1) · lift(pf2)` at `samples`
/// kink-free points.
pub fn functoriality_check(
    pf1: &ParamFn,
    pf2: &ParamFn,
    eps: f64,
    err: &ErrorFunction,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<FunctorialityReport> {
    let composite = pf1.then(pf2)?;
    functoriality_check_against(&composite, pf1, pf2, eps, err, samples, rng)
}

/// As [`functoriality_check`] with a caller-supplied composite, which is
/// lifted without gradient validation.
pub fn functoriality_check_against(
    composite: &ParamFn,
    pf1: &ParamFn,
    pf2: &ParamFn,
    eps: f64,
    err: &ErrorFunction,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<FunctorialityReport> {
    let whole = lift_unchecked(composite, eps, err)?.learner;
    let parts = seq_compose(&lift(pf1, eps, err)?.learner, &lift(pf2, eps, err)?.learner)?;
    let reference = pf1.then(pf2)?;
    let tolerance = functoriality_tolerance(pf1, pf2);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (pq, a) = sample_smooth_point(&reference, rng)?;
        let c = uniform(rng, composite.out_dim);
        let (i1, u1, r1) = whole.evaluate(&pq, &a, &c)?;
        let (i2, u2, r2) = parts.evaluate(&pq, &a, &c)?;
        worst = worst
            .max(max_abs_diff(&i1, &i2))
            .max(max_abs_diff(&u1, &u2))
            .max(max_abs_diff(&r1, &r2));
    }
    Ok(FunctorialityReport {
        passed: worst <= tolerance,
        worst,
        tolerance,
        points: samples,
    })
}

/// Whether one update step lowers `E_I` at `(p, a, b)`, halving `ε` from
/// `eps` up to `retries` times. Returns the step size that worked.
pub fn descent_step(
    pf: &ParamFn,
    err: &ErrorFunction,
    (p, a, b): (&[f64], &[f64], &[f64]),
    eps: f64,
    retries: usize,
) -> Option<f64> {
    let before = err.total(&pf.implement(p, a), b);
    let mut rate = eps;
    for _ in 0..=retries {
        let next = lift_with_rate(pf, rate, err).learner.update(p, a, b);
        if err.total(&pf.implement(&next, a), b) < before {
            return Some(rate);
        }
        rate /= 2.0;
    }
    None
}
