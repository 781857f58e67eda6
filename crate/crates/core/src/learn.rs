//! Learners `(P, I, U, r)` over real vectors, with sequential and parallel
//! composition.
//!
//! Parameter, input and output spaces are flat `Vec<f64>`s. Composites
//! concatenate parameter vectors with the left factor first; parallel
//! composites also concatenate inputs and outputs.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("training needs at least one epoch")]
    NoEpochs,
    #[error("learning rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, LearnError>;

pub type ImplementFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// Shared signature of update and request: `(p, a, b) ↦ …`.
pub type FeedbackFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct Learner {
    name: String,
    param_dim: usize,
    in_dim: usize,
    out_dim: usize,
    implement: ImplementFn,
    update: FeedbackFn,
    request: FeedbackFn,
}

impl fmt::Debug for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Learner")
            .field("name", &self.name)
            .field("param_dim", &self.param_dim)
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .finish_non_exhaustive()
    }
}

fn expect_len(what: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(LearnError::Dimension {
            what: what.to_string(),
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

impl Learner {
    pub fn new(
        name: impl Into<String>,
        (param_dim, in_dim, out_dim): (usize, usize, usize),
        implement: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        update: impl Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        request: impl Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            param_dim,
            in_dim,
            out_dim,
            implement: Arc::new(implement),
            update: Arc::new(update),
            request: Arc::new(request),
        }
    }

    /// The unit for sequential composition on `dim`-vectors: no parameters,
    /// `I(−, a) = a` and `r(−, a, b) = b`.
    pub fn identity(dim: usize) -> Self {
        Self::new(
            format!("id{dim}"),
            (0, dim, dim),
            |_, a| a.to_vec(),
            |_, _, _| Vec::new(),
            |_, _, b| b.to_vec(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
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

    pub fn implement(&self, p: &[f64], a: &[f64]) -> Vec<f64> {
        debug_assert_eq!((p.len(), a.len()), (self.param_dim, self.in_dim), "{}", self.name);
        (self.implement)(p, a)
    }

    pub fn update(&self, p: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(
            (p.len(), a.len(), b.len()),
            (self.param_dim, self.in_dim, self.out_dim),
            "{}",
            self.name
        );
        (self.update)(p, a, b)
    }

    pub fn request(&self, p: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(
            (p.len(), a.len(), b.len()),
            (self.param_dim, self.in_dim, self.out_dim),
            "{}",
            self.name
        );
        (self.request)(p, a, b)
    }

    /// Dimension-checked evaluation of all three maps at one point.
    pub fn evaluate(&self, p: &[f64], a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        expect_len("parameters", p, self.param_dim)?;
        expect_len("input", a, self.in_dim)?;
        expect_len("output", b, self.out_dim)?;
        let out = (self.implement(p, a), self.update(p, a, b), self.request(p, a, b));
        expect_len("implement result", &out.0, self.out_dim)?;
        expect_len("update result", &out.1, self.param_dim)?;
        expect_len("request result", &out.2, self.in_dim)?;
        Ok(out)
    }
}

/// `l1 · l2`: run `l1`, feed its output to `l2`, pass `l2`'s request back as
/// `l1`'s training target.
pub fn seq_compose(l1: &Learner, l2: &Learner) -> Result<Learner> {
    if l1.out_dim != l2.in_dim {
        return Err(LearnError::Dimension {
            what: format!("composing {} then {}", l1.name, l2.name),
            expected: l1.out_dim,
            actual: l2.in_dim,
        });
    }
    let np = l1.param_dim;
    let (i1, i2) = (l1.implement.clone(), l2.implement.clone());
    let implement = move |pq: &[f64], a: &[f64]| {
        let (p, q) = pq.split_at(np);
        i2(q, &i1(p, a))
    };
    let (i1, u1, u2, s2) = (l1.implement.clone(), l1.update.clone(), l2.update.clone(), l2.request.clone());
    let update = move |pq: &[f64], a: &[f64], c: &[f64]| {
        let (p, q) = pq.split_at(np);
        let b = i1(p, a);
        let mut out = u1(p, a, &s2(q, &b, c));
        out.extend(u2(q, &b, c));
        out
    };
    let (i1, r1, s2) = (l1.implement.clone(), l1.request.clone(), l2.request.clone());
    let request = move |pq: &[f64], a: &[f64], c: &[f64]| {
        let (p, q) = pq.split_at(np);
        r1(p, a, &s2(q, &i1(p, a), c))
    };
    Ok(Learner::new(
        format!("({} . {})", l1.name, l2.name),
        (l1.param_dim + l2.param_dim, l1.in_dim, l2.out_dim),
        implement,
        update,
        request,
    ))
}

/// Folds [`seq_compose`] over a non-empty chain.
pub fn seq_chain(learners: &[Learner]) -> Result<Learner> {
    let (first, rest) = learners
        .split_first()
        .ok_or_else(|| LearnError::Invalid("empty chain".into()))?;
    rest.iter().try_fold(first.clone(), |acc, l| seq_compose(&acc, l))
}

/// `l1 ∥ l2` acting componentwise on concatenated parameters, inputs and
/// outputs.
pub fn par_compose(l1: &Learner, l2: &Learner) -> Learner {
    let (np, na, nb) = (l1.param_dim, l1.in_dim, l1.out_dim);
    let (i1, i2) = (l1.implement.clone(), l2.implement.clone());
    let implement = move |pq: &[f64], ac: &[f64]| {
        let ((p, q), (a, c)) = (pq.split_at(np), ac.split_at(na));
        let mut out = i1(p, a);
        out.extend(i2(q, c));
        out
    };
    let pair = |f1: FeedbackFn, f2: FeedbackFn| {
        move |pq: &[f64], ac: &[f64], bd: &[f64]| {
            let ((p, q), (a, c), (b, d)) = (pq.split_at(np), ac.split_at(na), bd.split_at(nb));
            let mut out = f1(p, a, b);
            out.extend(f2(q, c, d));
            out
        }
    };
    Learner::new(
        format!("({} || {})", l1.name, l2.name),
        (l1.param_dim + l2.param_dim, l1.in_dim + l2.in_dim, l1.out_dim + l2.out_dim),
        implement,
        pair(l1.update.clone(), l2.update.clone()),
        pair(l1.request.clone(), l2.request.clone()),
    )
}

pub type VectorMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A bijection `f: P → P'` given with its inverse.
#[derive(Clone)]
pub struct LearnerEquivalence {
    pub forward: VectorMap,
    pub inverse: VectorMap,
}

impl LearnerEquivalence {
    pub fn new(
        forward: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        inverse: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
        }
    }

    pub fn identity() -> Self {
        Self::new(|p| p.to_vec(), |p| p.to_vec())
    }

    pub fn inverted(&self) -> Self {
        Self {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() {
            f64::INFINITY
        } else {
            m.max(d)
        }
    })
}

/// Checks `I'(f(p), a) = I(p, a)`, `U'(f(p), a, b) = f(U(p, a, b))` and
/// `r'(f(p), a, b) = r(p, a, b)` at every sample `(p, a, b)`, plus the two
/// round trips of the bijection.
pub fn equivalent(
    l1: &Learner,
    l2: &Learner,
    eq: &LearnerEquivalence,
    samples: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    tolerance: f64,
) -> EquivalenceReport {
    let dims_ok = l1.in_dim == l2.in_dim && l1.out_dim == l2.out_dim;
    let mut worst: f64 = if dims_ok { 0.0 } else { f64::INFINITY };
    if dims_ok {
        for (p, a, b) in samples {
            let fp = (eq.forward)(p);
            if fp.len() != l2.param_dim {
                worst = f64::INFINITY;
                break;
            }
            worst = worst
                .max(max_abs_diff(&(eq.inverse)(&fp), p))
                .max(max_abs_diff(&l2.implement(&fp, a), &l1.implement(p, a)))
                .max(max_abs_diff(&l2.update(&fp, a, b), &(eq.forward)(&l1.update(p, a, b))))
                .max(max_abs_diff(&l2.request(&fp, a, b), &l1.request(p, a, b)));
        }
    }
    EquivalenceReport {
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: Vec<f64>,
    /// Loss over the whole dataset before training and after each epoch.
    pub trace: Vec<f64>,
}

pub type Example = (Vec<f64>, Vec<f64>);

/// `Σ loss(I(p, a), b)` over the dataset.
pub fn dataset_loss(l: &Learner, p: &[f64], dataset: &[Example], loss: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
    dataset.iter().map(|(a, b)| loss(&l.implement(p, a), b)).sum()
}

/// Repeated `p ← U(p, a, b)` over the dataset in order, once per epoch.
pub fn train(
    l: &Learner,
    p0: &[f64],
    dataset: &[Example],
    epochs: usize,
    loss: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Result<TrainResult> {
    if epochs == 0 {
        return Err(LearnError::NoEpochs);
    }
    expect_len("initial parameters", p0, l.param_dim)?;
    for (a, b) in dataset {
        expect_len("example input", a, l.in_dim)?;
        expect_len("example target", b, l.out_dim)?;
    }
    let mut p = p0.to_vec();
    let mut trace = Vec::with_capacity(epochs + 1);
    let initial = dataset_loss(l, &p, dataset, loss);
    if !initial.is_finite() {
        return Err(LearnError::NonFinite { what: "loss", step: 0 });
    }
    trace.push(initial);
    for epoch in 1..=epochs {
        for (a, b) in dataset {
            p = l.update(&p, a, b);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(LearnError::NonFinite {
                    what: "parameter",
                    step: epoch,
                });
            }
        }
        let value = dataset_loss(l, &p, dataset, loss);
        if !value.is_finite() {
            return Err(LearnError::NonFinite { what: "loss", step: epoch });
        }
        trace.push(value);
    }
    Ok(TrainResult { params: p, trace })
}

/// `step,loss` lines with a header, suitable for plotting.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in trace.iter().enumerate() {
        out.push_str(&format!("{step},{loss}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `I(p, a) = p·a` trained by gradient descent on `½(pa − b)²`.
    fn scalar(eps: f64) -> Learner {
        Learner::new(
            "scale",
            (1, 1, 1),
            |p, a| vec![p[0] * a[0]],
            move |p, a, b| vec![p[0] - eps * a[0] * (p[0] * a[0] - b[0])],
            |p, a, b| vec![a[0] - p[0] * (p[0] * a[0] - b[0])],
        )
    }

    /// An affine learner on `R^n` with a diagonal weight and bias.
    fn diag_affine(n: usize, eps: f64) -> Learner {
        Learner::new(
            format!("diag{n}"),
            (2 * n, n, n),
            move |p, a| (0..n).map(|i| p[i] * a[i] + p[n + i]).collect(),
            move |p, a, b| {
                let mut out = p.to_vec();
                for i in 0..n {
                    let g = p[i] * a[i] + p[n + i] - b[i];
                    out[i] -= eps * g * a[i];
                    out[n + i] -= eps * g;
                }
                out
            },
            move |p, a, b| (0..n).map(|i| a[i] - p[i] * (p[i] * a[i] + p[n + i] - b[i])).collect(),
        )
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    fn deviation(l1: &Learner, l2: &Learner, rng: &mut ChaCha8Rng) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let p = random_vec(rng, l1.param_dim());
            let a = random_vec(rng, l1.in_dim());
            let b = random_vec(rng, l1.out_dim());
            let (x1, y1, z1) = l1.evaluate(&p, &a, &b).unwrap();
            let (x2, y2, z2) = l2.evaluate(&p, &a, &b).unwrap();
            worst = worst
                .max(max_abs_diff(&x1, &x2))
                .max(max_abs_diff(&y1, &y2))
                .max(max_abs_diff(&z1, &z2));
        }
        worst
    }

    #[test]
    fn composite_implement_substitutes() {
        let add = Learner::new("add", (1, 1, 1), |p, a| vec![p[0] + a[0]], |p, _, _| p.to_vec(), |_, a, _| a.to_vec());
        let mul = Learner::new("mul", (1, 1, 1), |q, b| vec![q[0] * b[0]], |q, _, _| q.to_vec(), |_, b, _| b.to_vec());
        let c = seq_compose(&add, &mul).unwrap();
        assert_eq!(c.implement(&[1.0, 2.0], &[3.0]), vec![8.0]);
        assert_eq!(c.param_dim(), 2);
    }

    #[test]
    fn composite_update_and_request_match_hand_expansion() {
        let eps = 0.1;
        let c = seq_compose(&scalar(eps), &scalar(eps)).unwrap();
        let (p, q, a, target) = (1.0, 2.0, 3.0, 5.0);
        // forward: b = pa = 3, out = qb = 6; request of second: s = b − q(qb − c) = 3 − 2 = 1
        let b = p * a;
        let s = b - q * (q * b - target);
        let u1 = p - eps * a * (p * a - s);
        let u2 = q - eps * b * (q * b - target);
        let r = a - p * (p * a - s);
        let (_, upd, req) = c.evaluate(&[p, q], &[a], &[target]).unwrap();
        assert!(max_abs_diff(&upd, &[u1, u2]) < 1e-12);
        assert!(max_abs_diff(&req, &[r]) < 1e-12);
        assert!(max_abs_diff(&upd, &[0.4, 1.7]) < 1e-12);
    }

    #[test]
    fn parallel_implement_is_componentwise() {
        let mul = Learner::new("mul", (1, 1, 1), |p, a| vec![p[0] * a[0]], |p, _, _| p.to_vec(), |_, a, _| a.to_vec());
        let add = Learner::new("add", (1, 1, 1), |q, c| vec![q[0] + c[0]], |q, _, _| q.to_vec(), |_, c, _| c.to_vec());
        let par = par_compose(&mul, &add);
        assert_eq!(par.implement(&[2.0, 3.0], &[4.0, 5.0]), vec![8.0, 8.0]);
    }

    #[test]
    fn unit_laws_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = diag_affine(2, 0.05);
        let left = seq_compose(&Learner::identity(2), &l).unwrap();
        let right = seq_compose(&l, &Learner::identity(2)).unwrap();
        assert!(deviation(&left, &l, &mut rng) <= 1e-12);
        assert!(deviation(&right, &l, &mut rng) <= 1e-12);
        let (a, b, c) = (diag_affine(2, 0.1), diag_affine(2, 0.2), diag_affine(2, 0.3));
        let ab_c = seq_compose(&seq_compose(&a, &b).unwrap(), &c).unwrap();
        let a_bc = seq_compose(&a, &seq_compose(&b, &c).unwrap()).unwrap();
        assert!(deviation(&ab_c, &a_bc, &mut rng) <= 1e-9);
    }

    #[test]
    fn interchange_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (l1, l2) = (diag_affine(1, 0.1), scalar(0.2));
        let (l3, l4) = (diag_affine(2, 0.3), diag_affine(2, 0.4));
        let lhs = par_compose(&seq_compose(&l1, &l2).unwrap(), &seq_compose(&l3, &l4).unwrap());
        let rhs = seq_compose(&par_compose(&l1, &l3), &par_compose(&l2, &l4)).unwrap();
        // parameter layouts differ: lhs is (p1 p2 p3 p4), rhs is (p1 p3 p2 p4)
        let (n1, n2, n3, n4) = (l1.param_dim(), l2.param_dim(), l3.param_dim(), l4.param_dim());
        let to_rhs = move |p: &[f64]| {
            let (p1, rest) = p.split_at(n1);
            let (p2, rest) = rest.split_at(n2);
            let (p3, p4) = rest.split_at(n3);
            [p1, p3, p2, p4].concat()
        };
        let to_lhs = move |p: &[f64]| {
            let (p1, rest) = p.split_at(n1);
            let (p3, rest) = rest.split_at(n3);
            let (p2, p4) = rest.split_at(n2);
            [p1, p2, p3, p4].concat()
        };
        assert_eq!(n1 + n2 + n3 + n4, lhs.param_dim());
        let eq = LearnerEquivalence::new(to_rhs, to_lhs);
        let samples: Vec<_> = (0..20)
            .map(|_| {
                (
                    random_vec(&mut rng, lhs.param_dim()),
                    random_vec(&mut rng, lhs.in_dim()),
                    random_vec(&mut rng, lhs.out_dim()),
                )
            })
            .collect();
        assert!(equivalent(&lhs, &rhs, &eq, &samples, 1e-9).passed);
        assert!(equivalent(&rhs, &lhs, &eq.inverted(), &samples, 1e-9).passed);
    }

    #[test]
    fn reparameterized_learner_is_equivalent() {
        let eps = 0.1;
        let l = scalar(eps);
        // p' = 2p, so I'(p', a) = (p'/2)·a; U' doubles the update
        let l2 = Learner::new(
            "scale2",
            (1, 1, 1),
            |p, a| vec![p[0] / 2.0 * a[0]],
            move |p, a, b| {
                let q = p[0] / 2.0;
                vec![2.0 * (q - eps * a[0] * (q * a[0] - b[0]))]
            },
            |p, a, b| {
                let q = p[0] / 2.0;
                vec![a[0] - q * (q * a[0] - b[0])]
            },
        );
        let eq = LearnerEquivalence::new(|p| vec![2.0 * p[0]], |p| vec![p[0] / 2.0]);
        let samples = vec![(vec![1.0], vec![2.0], vec![0.5]), (vec![-0.3], vec![1.5], vec![2.0])];
        assert!(equivalent(&l, &l2, &eq, &samples, 1e-9).passed);
        assert!(equivalent(&l, &l, &LearnerEquivalence::identity(), &samples, 1e-9).passed);

        let broken = Learner::new(
            "broken",
            (1, 1, 1),
            |p, a| vec![p[0] / 2.0 * a[0]],
            move |p, a, b| {
                let q = p[0] / 2.0;
                vec![2.0 * (q - eps * a[0] * (q * a[0] - b[0])) + 1e-3]
            },
            |p, a, b| {
                let q = p[0] / 2.0;
                vec![a[0] - q * (q * a[0] - b[0])]
            },
        );
        let report = equivalent(&l, &broken, &eq, &samples, 1e-9);
        assert!(!report.passed);
        assert!((report.worst - 1e-3).abs() < 1e-9);
    }

    fn half_squared(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
    }

    #[test]
    fn one_gradient_step() {
        let r = train(&scalar(0.1), &[0.0], &[(vec![1.0], vec![2.0])], 1, &half_squared).unwrap();
        assert!((r.params[0] - 0.2).abs() < 1e-15);
        assert_eq!(r.trace.len(), 2);
        assert_eq!(r.trace[0], 2.0);
    }

    #[test]
    fn fixed_point_when_targets_are_outputs() {
        let l = diag_affine(2, 0.1);
        let p0 = vec![0.5, -1.0, 0.2, 0.3];
        let data: Vec<Example> = [[1.0, 2.0], [-1.0, 0.5]]
            .iter()
            .map(|a| (a.to_vec(), l.implement(&p0, a)))
            .collect();
        let r = train(&l, &p0, &data, 3, &half_squared).unwrap();
        assert_eq!(r.params, p0);
    }

    #[test]
    fn linear_regression_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = diag_affine(1, 0.02);
        let data: Vec<Example> = (0..20)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                (vec![x], vec![3.0 * x - 1.0 + rng.gen_range(-0.1..0.1)])
            })
            .collect();
        let r = train(&l, &[0.0, 0.0], &data, 10, &half_squared).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] < w[0], "{:?}", r.trace);
        }
        let csv = trace_csv(&r.trace);
        assert!(csv.starts_with("step,loss\n0,"));
        assert_eq!(csv.lines().count(), 12);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let l = scalar(0.1);
        assert_eq!(train(&l, &[0.0], &[], 0, &half_squared), Err(LearnError::NoEpochs));
        assert!(matches!(
            train(&l, &[0.0, 1.0], &[], 1, &half_squared),
            Err(LearnError::Dimension { .. })
        ));
        let explode = scalar(1e200);
        assert!(matches!(
            train(&explode, &[1.0], &[(vec![1e200], vec![0.0])], 1, &half_squared),
            Err(LearnError::NonFinite { .. })
        ));
        assert!(seq_compose(&l, &diag_affine(2, 0.1)).is_err());
    }
}
