//! The seeded law suite and the training demo behind the command-line tool.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backprop::{
    block_as_paramfn, functoriality_check, lift, primitives, validate_gradients, ErrorFunction, ParamFn,
};
use crate::dsl::{self, Binding, CompileOptions, Diagram, DslError};
use crate::finset::exponential::small_arrow_objects;
use crate::finset::limits::{self, verify_colimit, verify_limit};
use crate::finset::random::{
    random_arrow_object, random_cube, random_fn, random_monic_square, random_parallel_squares, random_span,
    random_square_from, random_subobject_of,
};
use crate::finset::{
    arrow_limit, check_currying, classify, cube_faces, verify_arrow_construction, verify_classification,
    ArrowDiagram, ArrowShape, FinSet, Square, SubobjectClassifier,
};
use crate::learn::{self, equivalent, par_compose, seq_compose, Learner, LearnerEquivalence};
use crate::logic::{
    canonical_stages, characteristic_holds, check_monotonicity_local_character, Formula, Forcing, Subobject,
    SubobjectLattice, Universe,
};
use crate::numeric::{Matrix, Permutation};
use crate::report::{CheckResult, Report, RunConfig};
use crate::transformer::{BlockShape, TransformerBlock};

type LawFn = fn(&mut ChaCha8Rng) -> Result<f64, String>;

/// A named check: `run` returns the measured deviation (for exact checks,
/// the number of violations), compared against `tolerance`.
#[derive(Clone, Copy)]
pub struct Law {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: LawFn,
}

fn s(e: impl ToString) -> String {
    e.to_string()
}

fn count(trials: usize, mut ok: impl FnMut() -> Result<bool, String>) -> Result<f64, String> {
    let mut failures = 0;
    for _ in 0..trials {
        if !ok()? {
            failures += 1;
        }
    }
    Ok(failures as f64)
}

fn small_set(rng: &mut ChaCha8Rng, name: &str, min: usize, max: usize) -> FinSet {
    FinSet::range(name, &name.to_lowercase(), rng.gen_range(min..=max))
}

fn square_associativity(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    count(50, || {
        let a = random_arrow_object(rng, "A", 3);
        let s1 = random_square_from(rng, &a, "B", 3);
        let s2 = random_square_from(rng, s1.dst(), "C", 3);
        let s3 = random_square_from(rng, s2.dst(), "D", 3);
        let left = s1.then(&s2).and_then(|x| x.then(&s3)).map_err(s)?;
        let right = s2.then(&s3).and_then(|x| s1.then(&x)).map_err(s)?;
        Ok(left.same_maps(&right))
    })
}

fn square_identity(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    count(50, || {
        let a = random_arrow_object(rng, "A", 3);
        let sq = random_square_from(rng, &a, "B", 3);
        let left = Square::identity(sq.src()).then(&sq).map_err(s)?;
        let right = sq.then(&Square::identity(sq.dst())).map_err(s)?;
        Ok(left.same_maps(&sq) && right.same_maps(&sq))
    })
}

fn set_limits(rng: &mut ChaCha8Rng, kind: ArrowShape) -> Result<f64, String> {
    count(30, || {
        let (x, y, z) = (small_set(rng, "X", 0, 3), small_set(rng, "Y", 0, 3), small_set(rng, "Z", 1, 3));
        let verdict = match kind {
            ArrowShape::Pullback => {
                let l = limits::pullback(&random_fn(rng, "f", &x, &z), &random_fn(rng, "g", &y, &z)).map_err(s)?;
                verify_limit(&l.diagram, &l.cone, 3)
            }
            ArrowShape::Equalizer => {
                let l = limits::equalizer(&random_fn(rng, "f", &x, &z), &random_fn(rng, "g", &x, &z)).map_err(s)?;
                verify_limit(&l.diagram, &l.cone, 3)
            }
            ArrowShape::Product => {
                let l = limits::product(&x, &y);
                verify_limit(&l.diagram, &l.cone, 3)
            }
            ArrowShape::Pushout => {
                let (x, y) = (small_set(rng, "X", 1, 3), small_set(rng, "Y", 1, 3));
                let c = limits::pushout(&random_fn(rng, "f", &z, &x), &random_fn(rng, "g", &z, &y)).map_err(s)?;
                verify_colimit(&c.diagram, &c.cocone, 3)
            }
            ArrowShape::Coequalizer => {
                let c = limits::coequalizer(&random_fn(rng, "f", &x, &z), &random_fn(rng, "g", &x, &z)).map_err(s)?;
                verify_colimit(&c.diagram, &c.cocone, 3)
            }
            ArrowShape::Coproduct => {
                let c = limits::coproduct(&x, &y);
                verify_colimit(&c.diagram, &c.cocone, 3)
            }
        };
        Ok(verdict.passed())
    })
}

fn monic_pullback(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    count(30, || {
        let c = small_set(rng, "C", 1, 4);
        let a = FinSet::range("A", "a", rng.gen_range(0..=c.len()));
        let mut image: Vec<usize> = (0..c.len()).collect();
        rand::seq::SliceRandom::shuffle(image.as_mut_slice(), rng);
        image.truncate(a.len());
        let m = crate::finset::FinFn::from_indices("m", a, c.clone(), image).map_err(s)?;
        let b = small_set(rng, "B", 0, 3);
        let g = random_fn(rng, "g", &b, &c);
        let l = limits::pullback(&m, &g).map_err(s)?;
        Ok(l.leg(1).is_injective())
    })
}

fn arrow_cube(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    count(30, || {
        let (a, b) = random_cube(rng, 3);
        let d = ArrowDiagram::pullback(&a, &b).map_err(s)?;
        let c = arrow_limit(&d).map_err(s)?;
        Ok(cube_faces(&d, &c).map_err(s)?.iter().all(|f| f.commutes))
    })
}

fn arrow_universal(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    count(12, || {
        let d = match rng.gen_range(0..4) {
            0 => {
                let (a, b) = random_cube(rng, 2);
                ArrowDiagram::pullback(&a, &b)
            }
            1 => {
                let (a, b) = random_span(rng, 2);
                ArrowDiagram::pushout(&a, &b)
            }
            2 => {
                let (a, b) = random_parallel_squares(rng, 2);
                ArrowDiagram::parallel(ArrowShape::Equalizer, &a, &b)
            }
            _ => {
                let (a, b) = random_parallel_squares(rng, 2);
                ArrowDiagram::parallel(ArrowShape::Coequalizer, &a, &b)
            }
        }
        .map_err(s)?;
        let c = arrow_limit(&d).map_err(s)?;
        Ok(verify_arrow_construction(&d, &c, 1).passed())
    })
}

fn classifier_recovers(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    count(20, || Ok(verify_classification(&random_monic_square(rng, 3), 1).map_err(s)?.passed()))
}

fn classifier_values(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut seen = [false; 3];
    for _ in 0..50 {
        let chi = classify(&random_monic_square(rng, 3)).map_err(s)?;
        for &v in chi.top().map() {
            seen[v] = true;
        }
    }
    Ok(seen.iter().filter(|&&b| !b).count() as f64)
}

fn currying(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let objects = small_arrow_objects(2);
    count(15, || {
        let pick = |rng: &mut ChaCha8Rng| objects[rng.gen_range(0..objects.len())].clone();
        let (f, g, a) = (pick(rng), pick(rng), pick(rng));
        Ok(check_currying(&f, &g, &a).map_err(s)?.passed())
    })
}

fn lifted_affine(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Result<Learner, String> {
    let eps = rng.gen_range(0.01..0.5);
    Ok(lift(&primitives::affine(inputs, outputs), eps, &ErrorFunction::quadratic())
        .map_err(s)?
        .learner)
}

fn samples(rng: &mut ChaCha8Rng, l: &Learner, n: usize) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut v = |k: usize| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
    (0..n)
        .map(|_| (v(l.param_dim()), v(l.in_dim()), v(l.out_dim())))
        .collect()
}

fn learn_associativity(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (l1, l2, l3) = (lifted_affine(rng, 1, 2)?, lifted_affine(rng, 2, 3)?, lifted_affine(rng, 3, 1)?);
    let left = seq_compose(&seq_compose(&l1, &l2).map_err(s)?, &l3).map_err(s)?;
    let right = seq_compose(&l1, &seq_compose(&l2, &l3).map_err(s)?).map_err(s)?;
    let pts = samples(rng, &left, 30);
    Ok(equivalent(&left, &right, &LearnerEquivalence::identity(), &pts, 1e-9).worst)
}

fn learn_unit(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let l = lifted_affine(rng, 2, 3)?;
    let left = seq_compose(&Learner::identity(2), &l).map_err(s)?;
    let right = seq_compose(&l, &Learner::identity(3)).map_err(s)?;
    let pts = samples(rng, &l, 30);
    let id = LearnerEquivalence::identity();
    Ok(equivalent(&l, &left, &id, &pts, 1e-9)
        .worst
        .max(equivalent(&l, &right, &id, &pts, 1e-9).worst))
}

/// Moves the middle two of four parameter blocks of lengths `n`.
fn swap_middle(n: [usize; 4]) -> LearnerEquivalence {
    let f = move |p: &[f64]| {
        let (a, rest) = p.split_at(n[0]);
        let (b, rest) = rest.split_at(n[1]);
        let (c, d) = rest.split_at(n[2]);
        [a, c, b, d].concat()
    };
    let g = move |p: &[f64]| {
        let (a, rest) = p.split_at(n[0]);
        let (c, rest) = rest.split_at(n[2]);
        let (b, d) = rest.split_at(n[1]);
        [a, b, c, d].concat()
    };
    LearnerEquivalence::new(f, g)
}

fn learn_interchange(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (l1, l2) = (lifted_affine(rng, 1, 2)?, lifted_affine(rng, 2, 1)?);
    let (l3, l4) = (lifted_affine(rng, 2, 2)?, lifted_affine(rng, 1, 3)?);
    let left = seq_compose(&par_compose(&l1, &l2), &par_compose(&l3, &l4)).map_err(s)?;
    let right = par_compose(&seq_compose(&l1, &l3).map_err(s)?, &seq_compose(&l2, &l4).map_err(s)?);
    let eq = swap_middle([l1.param_dim(), l2.param_dim(), l3.param_dim(), l4.param_dim()]);
    let pts = samples(rng, &left, 30);
    Ok(equivalent(&left, &right, &eq, &pts, 1e-9).worst)
}

fn learn_parallel_associativity(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (l1, l2, l3) = (lifted_affine(rng, 1, 2)?, lifted_affine(rng, 2, 1)?, lifted_affine(rng, 1, 1)?);
    let left = par_compose(&par_compose(&l1, &l2), &l3);
    let right = par_compose(&l1, &par_compose(&l2, &l3));
    let pts = samples(rng, &left, 30);
    Ok(equivalent(&left, &right, &LearnerEquivalence::identity(), &pts, 1e-9).worst)
}

fn gradient(pf: ParamFn) -> impl FnOnce(&mut ChaCha8Rng) -> Result<f64, String> {
    move |rng| Ok(validate_gradients(&pf, 20, rng).map_err(s)?.worst)
}

fn functoriality(rng: &mut ChaCha8Rng, pf1: &ParamFn, pf2: &ParamFn) -> Result<f64, String> {
    let eps = rng.gen_range(0.01..0.3);
    let r = functoriality_check(pf1, pf2, eps, &ErrorFunction::quadratic(), 50, rng).map_err(s)?;
    Ok(r.worst)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn equivariance(rng: &mut ChaCha8Rng, shape: BlockShape, trials: usize) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let block = TransformerBlock::random(shape, rng);
        let x = random_matrix(rng, shape.d, shape.n);
        let p = Permutation::random(shape.n, rng);
        worst = worst.max(block.check_equivariance(&x, &p).map_err(s)?);
    }
    Ok(worst)
}

fn heyting_adjunction(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut parents = small_arrow_objects(2);
    for _ in 0..6 {
        parents.push(random_arrow_object(rng, "G", 3));
    }
    let mut failures = 0;
    for g in &parents {
        let lattice = SubobjectLattice::new(g);
        if !lattice.adjunction_holds().map_err(s)? {
            failures += 1;
        }
        for x in &lattice.elements {
            for y in &lattice.elements {
                if x.implies(y).map_err(s)? != lattice.implies_by_scan(x, y).map_err(s)? {
                    failures += 1;
                }
            }
        }
    }
    Ok(failures as f64)
}

fn heyting_non_boolean(_: &mut ChaCha8Rng) -> Result<f64, String> {
    let lattice = SubobjectLattice::new(&SubobjectClassifier::new().omega);
    let found = lattice.excluded_middle_failure().map_err(s)?.is_some();
    Ok(if found && lattice.distributive().map_err(s)? { 0.0 } else { 1.0 })
}

fn random_universe(rng: &mut ChaCha8Rng) -> Result<Universe, String> {
    let g = random_arrow_object(rng, "G", 2);
    let mut u = Universe::new();
    u.add_object("G", g.clone());
    for name in ["S", "T"] {
        let sub = Subobject::from_square(&random_subobject_of(rng, &g)).map_err(s)?;
        u.add_subobject(name, "G", sub).map_err(s)?;
    }
    let endos = Square::hom(&g, &g);
    u.add_map("f", "G", "G", endos[rng.gen_range(0..endos.len())].clone())
        .map_err(s)?;
    Ok(u)
}

const QUANTIFIER_FREE: [&str; 8] = [
    "(in x S)",
    "(not (in x S))",
    "(or (in x S) (not (in x S)))",
    "(implies (in x S) (in y T))",
    "(and (in (f x) T) (not (eq x y)))",
    "(implies (not (not (in x S))) (in x S))",
    "(or (eq (f x) y) (in y S))",
    "(not (implies (in x T) (eq x (f y))))",
];

fn forcing_oracle(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut mismatches = 0;
    for _ in 0..3 {
        let universe = random_universe(rng)?;
        let g = universe.object("G").map_err(s)?.clone();
        let context = vec![("x".to_string(), "G".to_string()), ("y".to_string(), "G".to_string())];
        let mut forcing = Forcing::new(&universe, 2);
        for text in QUANTIFIER_FREE {
            let phi = Formula::parse(text).map_err(s)?;
            for u in canonical_stages(2) {
                let elements = Square::hom(&u, &g);
                for ax in &elements {
                    for ay in &elements {
                        let env = [("x".to_string(), ax.clone()), ("y".to_string(), ay.clone())];
                        let forced = forcing.forces(&u, &env, &phi).map_err(s)?;
                        let oracle = characteristic_holds(&universe, &phi, &context, &u, &[ax.clone(), ay.clone()])
                            .map_err(s)?;
                        if forced != oracle {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(mismatches as f64)
}

fn forcing_natural(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut failures = 0;
    for _ in 0..3 {
        let universe = random_universe(rng)?;
        let g = universe.object("G").map_err(s)?.clone();
        let mut forcing = Forcing::new(&universe, 2);
        for text in [
            "(in x S)",
            "(or (in x S) (not (in x S)))",
            "(implies (in (f x) T) (in x S))",
            "(exists y G (and (eq (f y) x) (in y S)))",
            "(forall y G (implies (eq (f y) x) (in y T)))",
        ] {
            let phi = Formula::parse(text).map_err(s)?;
            for u in canonical_stages(1) {
                for alpha in Square::hom(&u, &g) {
                    let r = check_monotonicity_local_character(&mut forcing, &phi, &u, &[("x".into(), alpha)])
                        .map_err(s)?;
                    if !(r.monotone && r.local) {
                        failures += 1;
                    }
                }
            }
        }
    }
    Ok(failures as f64)
}

fn dsl_compile(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let d = dsl::parse("shape daisy_chain 2\nbind a1 := affine 2 3\nbind a2 := affine 3 1\n").map_err(s)?;
    let opts = CompileOptions {
        eps: rng.gen_range(0.01..0.3),
        ..CompileOptions::default()
    };
    let compiled = dsl::compile_to_learner(&d, &opts).map_err(s)?;
    let composite = compiled.composite.as_ref().expect("chains have composites");
    let whole = lift(composite, opts.eps, &opts.error).map_err(s)?.learner;
    let pts = samples(rng, &whole, 30);
    Ok(equivalent(&compiled.learner, &whole, &LearnerEquivalence::identity(), &pts, 1e-9).worst)
}

macro_rules! law {
    ($name:expr, $tol:expr, $body:expr) => {
        Law {
            name: $name,
            tolerance: $tol,
            run: $body,
        }
    };
}

/// Every law in the suite, in name order.
pub fn laws() -> Vec<Law> {
    let mut v = vec![
        law!("category/associativity", 0.0, square_associativity),
        law!("category/identity", 0.0, square_identity),
        law!("limits/pullback", 0.0, |r| set_limits(r, ArrowShape::Pullback)),
        law!("limits/pushout", 0.0, |r| set_limits(r, ArrowShape::Pushout)),
        law!("limits/equalizer", 0.0, |r| set_limits(r, ArrowShape::Equalizer)),
        law!("limits/coequalizer", 0.0, |r| set_limits(r, ArrowShape::Coequalizer)),
        law!("limits/product", 0.0, |r| set_limits(r, ArrowShape::Product)),
        law!("limits/coproduct", 0.0, |r| set_limits(r, ArrowShape::Coproduct)),
        law!("limits/monic-pullback", 0.0, monic_pullback),
        law!("arrow/cube-faces", 0.0, arrow_cube),
        law!("arrow/universal", 0.0, arrow_universal),
        law!("classifier/pullback", 0.0, classifier_recovers),
        law!("classifier/truth-values", 0.0, classifier_values),
        law!("exponential/currying", 0.0, currying),
        law!("learn/associativity", 1e-9, learn_associativity),
        law!("learn/unit", 1e-9, learn_unit),
        law!("learn/interchange", 1e-9, learn_interchange),
        law!("learn/parallel-associativity", 1e-9, learn_parallel_associativity),
        law!("gradient/affine", 1e-4, |r| gradient(primitives::affine(3, 2))(r)),
        law!("gradient/relu", 1e-4, |r| gradient(primitives::affine(3, 4).then(&primitives::relu(4)).expect("dims"))(r)),
        law!("gradient/softmax", 1e-4, |r| gradient(primitives::softmax_columns(3, 2))(r)),
        law!("gradient/attention", 1e-4, |r| gradient(primitives::attention_scores(4, 3, 2))(r)),
        law!("gradient/block", 1e-4, |r| {
            let shape = BlockShape::new(4, 3, 2, 2, 4).map_err(s)?;
            gradient(block_as_paramfn(&TransformerBlock::zeros(shape)).map_err(s)?)(r)
        }),
        law!("functoriality/affine", 1e-9, |r| {
            functoriality(r, &primitives::affine(2, 3), &primitives::affine(3, 2))
        }),
        law!("functoriality/relu", 1e-6, |r| {
            let hidden = primitives::affine(2, 3).then(&primitives::relu(3)).expect("dims");
            functoriality(r, &hidden, &primitives::affine(3, 1))
        }),
        law!("functoriality/softmax", 1e-6, |r| {
            functoriality(r, &primitives::affine(2, 4), &primitives::softmax_columns(2, 2))
        }),
        law!("equivariance/d4n5", 1e-8, |r| equivariance(r, BlockShape::new(4, 5, 2, 2, 4).map_err(s)?, 50)),
        law!("equivariance/d3n4", 1e-8, |r| equivariance(r, BlockShape::new(3, 4, 1, 3, 5).map_err(s)?, 50)),
        law!("heyting/adjunction", 0.0, heyting_adjunction),
        law!("heyting/non-boolean", 0.0, heyting_non_boolean),
        law!("forcing/oracle", 0.0, forcing_oracle),
        law!("forcing/natural", 0.0, forcing_natural),
        law!("dsl/daisy-chain", 1e-9, dsl_compile),
    ];
    v.sort_by_key(|l| l.name);
    v
}

fn run_law(law: &Law, config: &RunConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.check_seed(law.name));
    let start = Instant::now();
    let deviation = match (law.run)(&mut rng) {
        Ok(d) if d.is_nan() => f64::INFINITY,
        Ok(d) => d,
        Err(_) => f64::INFINITY,
    };
    CheckResult::measured(law.name, deviation, config.tolerance(law.name, law.tolerance), start.elapsed())
}

/// Runs every law on its own seeded stream, in parallel.
pub fn run_laws(config: &RunConfig) -> Report {
    let all = laws();
    let results: Vec<CheckResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = all.iter().map(|law| scope.spawn(move || run_law(law, config))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    });
    Report::new(results).expect("law names are distinct")
}

/// Tolerance for `‖forward(XP) − forward(X)P‖∞`.
pub const EQUIVARIANCE_TOLERANCE: f64 = 1e-8;

/// `trials` random blocks, inputs and permutations of the given shape.
pub fn run_equivariance(config: &RunConfig, shape: BlockShape, trials: usize) -> Report {
    let name = format!("equivariance/d{}n{}h{}m{}r{}", shape.d, shape.n, shape.h, shape.m, shape.r);
    let mut rng = ChaCha8Rng::seed_from_u64(config.check_seed(&name));
    let start = Instant::now();
    let deviation = equivariance(&mut rng, shape, trials).unwrap_or(f64::INFINITY);
    let tolerance = config.tolerance(&name, EQUIVARIANCE_TOLERANCE);
    Report::new(vec![CheckResult::measured(name, deviation, tolerance, start.elapsed())]).expect("one check")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemoError {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error("{0}")]
    Setup(String),
}

/// Settings for [`run_train_demo`]. One step is one pass over the dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub eps: f64,
    pub steps: usize,
    pub examples: usize,
    /// Initial parameters are uniform in `[-init_scale, init_scale]`; by
    /// default `0.5 / √d` for a block of width `d`, else `0.5`.
    pub init_scale: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            eps: 0.01,
            steps: 500,
            examples: 8,
            init_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainDemo {
    pub trace: Vec<f64>,
    pub params: Vec<f64>,
    pub report: Report,
}

/// Loss ratio the demo must reach.
pub const DEMO_LOSS_RATIO: f64 = 0.5;

/// Trains the learner compiled from `d` to imitate a hidden random map.
/// When the first bound map is a Transformer block, the hidden map is a
/// random block of that shape; otherwise it is the composite with random
/// parameters.
pub fn run_train_demo(d: &Diagram, config: &RunConfig, opts: &TrainOptions) -> Result<TrainDemo, DemoError> {
    let compile = CompileOptions {
        eps: opts.eps,
        ..CompileOptions::default()
    };
    let compiled = dsl::compile_to_learner(d, &compile)?;
    let composite = compiled
        .composite
        .clone()
        .ok_or_else(|| DemoError::Setup("the compiled learner has no composite map".into()))?;
    let (in_dim, out_dim) = (composite.in_dim(), composite.out_dim());

    let mut data_rng = ChaCha8Rng::seed_from_u64(config.check_seed("train/data"));
    let first_block = d.bindings.first().and_then(|(_, b)| match b {
        Binding::Block(shape) if shape.input_len() == in_dim && in_dim == out_dim => Some(*shape),
        _ => None,
    });
    let target: Box<dyn Fn(&[f64]) -> Vec<f64>> = match first_block {
        Some(shape) => {
            let hidden = TransformerBlock::random(shape, &mut data_rng);
            Box::new(move |x: &[f64]| {
                let m = Matrix::new(shape.d, shape.n, x.to_vec()).expect("input length");
                hidden.forward(&m).expect("shapes agree").into_vec()
            })
        }
        None => {
            let p: Vec<f64> = (0..composite.param_dim()).map(|_| data_rng.gen_range(-0.5..0.5)).collect();
            Box::new(move |x: &[f64]| composite.implement(&p, x))
        }
    };
    let dataset: Vec<learn::Example> = (0..opts.examples)
        .map(|_| {
            let x: Vec<f64> = (0..in_dim).map(|_| data_rng.gen_range(-1.0..1.0)).collect();
            let y = target(&x);
            (x, y)
        })
        .collect();
    debug_assert!(dataset.iter().all(|(_, y)| y.len() == out_dim));

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.check_seed("train/init"));
    let width = first_block.map_or(1.0, |shape| shape.d as f64);
    let p0 = compiled.initial_params(&mut init_rng, opts.init_scale.unwrap_or(0.5 / width.sqrt()));
    let start = Instant::now();
    let loss = compiled.loss.clone();
    let result = learn::train(&compiled.learner, &p0, &dataset, opts.steps, &|x, y| loss(x, y))?;
    let elapsed = start.elapsed();
    let (first, last) = (result.trace[0], *result.trace.last().expect("non-empty"));
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    let report = Report::new(vec![CheckResult::measured(
        "train/loss-ratio",
        ratio,
        config.tolerance("train/loss-ratio", DEMO_LOSS_RATIO),
        elapsed,
    )])
    .expect("one check");
    Ok(TrainDemo {
        trace: result.trace,
        params: result.params,
        report,
    })
}
