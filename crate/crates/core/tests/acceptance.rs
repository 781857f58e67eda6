//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! Every check compares the library against an oracle written here, from
//! the definitions, rather than against the library's own verifiers alone.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use arrowtopos_core::backprop::{
    block_as_paramfn, functoriality_check, lift, primitives, sample_smooth_point, ErrorFunction, ParamFn,
};
use arrowtopos_core::dsl;
use arrowtopos_core::finset::exponential::small_arrow_objects;
use arrowtopos_core::finset::limits::{self, verify_colimit, verify_limit};
use arrowtopos_core::finset::random::{random_cube, random_fn, random_monic_square, random_subobject_of};
use arrowtopos_core::finset::{
    arrow_limit, check_currying, classify, cube_faces, exponential, verify_classification, ArrowDiagram, ArrowObject,
    FinFn, FinSet, Square,
};
use arrowtopos_core::laws::{run_train_demo, TrainOptions};
use arrowtopos_core::learn::{par_compose, seq_compose, Learner};
use arrowtopos_core::logic::{canonical_stages, Forcing, Formula, Subobject, SubobjectLattice, Universe};
use arrowtopos_core::numeric::{Matrix, Permutation};
use arrowtopos_core::report::RunConfig;
use arrowtopos_core::transformer::{BlockShape, TransformerBlock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl ToString) -> String {
    e.to_string()
}

fn set(rng: &mut ChaCha8Rng, name: &str, min: usize, max: usize) -> FinSet {
    FinSet::range(name, &name.to_lowercase(), rng.gen_range(min..=max))
}

/// Number of classes of the equivalence on `0..n` generated by `pairs`.
fn classes(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in pairs {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        parent[ra] = rb;
    }
    (0..n).map(|x| root(&mut parent, x)).collect()
}

/// Checks that `legs` (each into `nadir`) identify exactly the classes of
/// `labels` over the concatenated domains.
fn same_partition(legs: &[&FinFn], labels: &[usize]) -> bool {
    let images: Vec<usize> = legs.iter().flat_map(|l| l.map().iter().copied()).collect();
    images.len() == labels.len()
        && (0..labels.len()).all(|i| (0..labels.len()).all(|j| (images[i] == images[j]) == (labels[i] == labels[j])))
}

fn leg_for<'a>(objects: &[FinSet], legs: &'a [FinFn], set: &FinSet) -> &'a FinFn {
    &legs[objects.iter().position(|o| o == set).expect("object in diagram")]
}

fn universal_property_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mediations = 0;
    for k in 0..200 {
        let (x, y, z) = (set(&mut rng, "X", 0, 4), set(&mut rng, "Y", 0, 4), set(&mut rng, "Z", 1, 4));
        let verdict = match k % 4 {
            0 => {
                let (f, g) = (random_fn(&mut rng, "f", &x, &z), random_fn(&mut rng, "g", &y, &z));
                let l = limits::pullback(&f, &g).map_err(err)?;
                let expected: usize = (0..z.len())
                    .map(|c| f.map().iter().filter(|&&v| v == c).count() * g.map().iter().filter(|&&v| v == c).count())
                    .sum();
                let (p1, p2) = (l.leg(0), l.leg(1));
                let pairs: HashSet<(usize, usize)> = (0..l.apex().len()).map(|i| (p1.at(i), p2.at(i))).collect();
                ensure(l.apex().len() == expected && pairs.len() == expected, || format!("pullback {k}: size"))?;
                ensure(pairs.iter().all(|&(a, b)| f.at(a) == g.at(b)), || format!("pullback {k}: legs"))?;
                verify_limit(&l.diagram, &l.cone, 4)
            }
            1 => {
                let (f, g) = (random_fn(&mut rng, "f", &x, &z), random_fn(&mut rng, "g", &x, &z));
                let l = limits::equalizer(&f, &g).map_err(err)?;
                let agree: Vec<usize> = (0..x.len()).filter(|&i| f.at(i) == g.at(i)).collect();
                let mut got = l.leg(0).map().to_vec();
                got.sort_unstable();
                ensure(got == agree, || format!("equalizer {k}: {got:?} vs {agree:?}"))?;
                verify_limit(&l.diagram, &l.cone, 4)
            }
            2 => {
                let (x, y) = (set(&mut rng, "X", 1, 4), set(&mut rng, "Y", 1, 4));
                let (f, g) = (random_fn(&mut rng, "f", &z, &x), random_fn(&mut rng, "g", &z, &y));
                let c = limits::pushout(&f, &g).map_err(err)?;
                let labels = classes(x.len() + y.len(), (0..z.len()).map(|i| (f.at(i), x.len() + g.at(i))));
                let objects = c.diagram.objects();
                let legs = [leg_for(objects, &c.cocone.legs, &x), leg_for(objects, &c.cocone.legs, &y)];
                let count = labels.iter().collect::<HashSet<_>>().len();
                ensure(c.nadir().len() == count && same_partition(&legs, &labels), || format!("pushout {k}"))?;
                verify_colimit(&c.diagram, &c.cocone, 4)
            }
            _ => {
                let (f, g) = (random_fn(&mut rng, "f", &x, &z), random_fn(&mut rng, "g", &x, &z));
                let c = limits::coequalizer(&f, &g).map_err(err)?;
                let labels = classes(z.len(), (0..x.len()).map(|i| (f.at(i), g.at(i))));
                let leg = leg_for(c.diagram.objects(), &c.cocone.legs, &z);
                let count = labels.iter().collect::<HashSet<_>>().len();
                ensure(c.nadir().len() == count && same_partition(&[leg], &labels), || format!("coequalizer {k}"))?;
                verify_colimit(&c.diagram, &c.cocone, 4)
            }
        };
        let cert = verdict.certificate().ok_or_else(|| format!("instance {k}: {verdict:?}"))?;
        mediations += cert.cones_checked;
    }
    Ok(format!("200 instances, {mediations} test cones with unique mediators"))
}

fn cube_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for k in 0..100 {
        let (a, b) = random_cube(&mut rng, 3);
        let d = ArrowDiagram::pullback(&a, &b).map_err(err)?;
        let c = arrow_limit(&d).map_err(err)?;
        let pairs = |x: &FinFn, y: &FinFn| -> Vec<(usize, usize)> {
            (0..x.dom().len())
                .flat_map(|i| (0..y.dom().len()).map(move |j| (i, j)))
                .filter(|&(i, j)| x.at(i) == y.at(j))
                .collect()
        };
        let top = pairs(a.top(), b.top());
        let bottom = pairs(a.bottom(), b.bottom());
        ensure(c.object.dom().len() == top.len() && c.object.cod().len() == bottom.len(), || {
            format!("cube {k}: vertex sizes")
        })?;
        let (l0, l1) = (&c.legs[0], &c.legs[1]);
        for p in 0..top.len() {
            let (i, j) = (l0.top().at(p), l1.top().at(p));
            ensure(top.contains(&(i, j)), || format!("cube {k}: top leg"))?;
            let q = c.object.at(p);
            // the induced arrow sends (i, j) to (A(i), B(j))
            let want = (a.src().at(i), b.src().at(j));
            ensure((l0.bottom().at(q), l1.bottom().at(q)) == want, || format!("cube {k}: induced arrow"))?;
        }
        let faces = cube_faces(&d, &c).map_err(err)?;
        ensure(faces.len() == 6 && faces.iter().all(|f| f.commutes), || format!("cube {k}: {faces:?}"))?;
    }
    Ok("100 cubes, six faces each".into())
}

fn classifier_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut seen = [false; 3];
    for k in 0..100 {
        let sub = random_monic_square(&mut rng, 3);
        let g = sub.dst().clone();
        let chi = classify(&sub).map_err(err)?;
        let (in_image, out_image) = (sub.top().image(), sub.bottom().image());
        for x in 0..g.dom().len() {
            let want = if in_image[x] {
                2
            } else if out_image[g.at(x)] {
                1
            } else {
                0
            };
            ensure(chi.top().at(x) == want, || format!("monic {k}: psi at {x}"))?;
            seen[want] = true;
        }
        for y in 0..g.cod().len() {
            ensure(chi.bottom().at(y) == usize::from(out_image[y]), || format!("monic {k}: chi at {y}"))?;
        }
        let check = verify_classification(&sub, 2).map_err(err)?;
        ensure(check.passed(), || format!("monic {k}: {check:?}"))?;
    }
    ensure(seen.iter().all(|&s| s), || format!("truth values seen: {seen:?}"))?;
    Ok("100 monics, truth values 0, 1/2 and 1 all occur".into())
}

/// `|Hom(a × f, g)|` by enumerating pairs of component maps.
fn hom_product_count(a: &ArrowObject, f: &ArrowObject, g: &ArrowObject) -> usize {
    let (ai, fi, ao, fo) = (a.dom().len(), f.dom().len(), a.cod().len(), f.cod().len());
    let (gi, go) = (g.dom().len(), g.cod().len());
    let maps = |n: usize, m: usize| -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for _ in 0..n {
            out = out.into_iter().flat_map(|v| (0..m).map(move |c| [v.clone(), vec![c]].concat())).collect();
        }
        out
    };
    let tops = maps(ai * fi, gi);
    let bottoms = maps(ao * fo, go);
    tops.iter()
        .map(|h| {
            bottoms
                .iter()
                .filter(|k| {
                    (0..ai).all(|x| (0..fi).all(|y| g.at(h[x * fi + y]) == k[a.at(x) * fo + f.at(y)]))
                })
                .count()
        })
        .sum()
}

fn exponential_suite() -> Verdict {
    let objects = small_arrow_objects(2);
    let mut triples = 0;
    for f in &objects {
        for g in &objects {
            let exp = exponential(f, g);
            for a in &objects {
                let check = check_currying(f, g, a).map_err(err)?;
                let oracle = hom_product_count(a, f, g);
                let right = Square::hom(a, &exp.object).len();
                ensure(check.passed() && check.left == oracle && right == oracle, || {
                    format!("f={f:?} g={g:?} a={a:?}: {check:?}, oracle {oracle}")
                })?;
                triples += 1;
            }
        }
    }
    Ok(format!("{} objects, {triples} triples", objects.len()))
}

fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn random_learner(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Result<Learner, String> {
    let pf = if rng.gen_bool(0.5) {
        primitives::affine(inputs, outputs)
    } else {
        primitives::linear(inputs, outputs)
    };
    Ok(lift(&pf, rng.gen_range(0.01..0.5), &ErrorFunction::quadratic()).map_err(err)?.learner)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Worst deviation between two learners given as `(implement, update,
/// request)` closures, after reindexing parameters with `reindex`.
fn compare(
    rng: &mut ChaCha8Rng,
    left: &Learner,
    right: &Learner,
    reindex: &dyn Fn(&[f64]) -> Vec<f64>,
    points: usize,
) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (p, a, b) = (vector(rng, left.param_dim()), vector(rng, left.in_dim()), vector(rng, left.out_dim()));
        let q = reindex(&p);
        worst = worst
            .max(max_diff(&left.implement(&p, &a), &right.implement(&q, &a)))
            .max(max_diff(&reindex(&left.update(&p, &a, &b)), &right.update(&q, &a, &b)))
            .max(max_diff(&left.request(&p, &a, &b), &right.request(&q, &a, &b)));
    }
    worst
}

/// Sequential composite written out from the definition.
fn seq_oracle(l1: &Learner, l2: &Learner, pq: &[f64], a: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (p, q) = pq.split_at(l1.param_dim());
    let b = l1.implement(p, a);
    let target = l2.request(q, &b, c);
    let mut update = l1.update(p, a, &target);
    update.extend(l2.update(q, &b, c));
    (l2.implement(q, &b), update, l1.request(p, a, &target))
}

fn learn_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let same = |p: &[f64]| p.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let dims: Vec<usize> = (0..5).map(|_| rng.gen_range(1..=3)).collect();
        let l1 = random_learner(&mut rng, dims[0], dims[1])?;
        let l2 = random_learner(&mut rng, dims[1], dims[2])?;
        let l3 = random_learner(&mut rng, dims[2], dims[3])?;

        let l12 = seq_compose(&l1, &l2).map_err(err)?;
        for _ in 0..10 {
            let (pq, a, c) = (vector(&mut rng, l12.param_dim()), vector(&mut rng, l12.in_dim()), vector(&mut rng, l12.out_dim()));
            let (i, u, r) = seq_oracle(&l1, &l2, &pq, &a, &c);
            worst = worst
                .max(max_diff(&l12.implement(&pq, &a), &i))
                .max(max_diff(&l12.update(&pq, &a, &c), &u))
                .max(max_diff(&l12.request(&pq, &a, &c), &r));
        }

        let left = seq_compose(&l12, &l3).map_err(err)?;
        let right = seq_compose(&l1, &seq_compose(&l2, &l3).map_err(err)?).map_err(err)?;
        worst = worst.max(compare(&mut rng, &left, &right, &same, 20));

        for l in [&l1, &l2] {
            let unit_left = seq_compose(&Learner::identity(l.in_dim()), l).map_err(err)?;
            let unit_right = seq_compose(l, &Learner::identity(l.out_dim())).map_err(err)?;
            worst = worst.max(compare(&mut rng, l, &unit_left, &same, 20));
            worst = worst.max(compare(&mut rng, l, &unit_right, &same, 20));
        }

        // (l1 ∥ l3) · (l2' ∥ l4') against (l1 · l2') ∥ (l3 · l4')
        let l2b = random_learner(&mut rng, dims[1], dims[2])?;
        let l4b = random_learner(&mut rng, dims[3], dims[4])?;
        let left = seq_compose(&par_compose(&l1, &l3), &par_compose(&l2b, &l4b)).map_err(err)?;
        let right = par_compose(&seq_compose(&l1, &l2b).map_err(err)?, &seq_compose(&l3, &l4b).map_err(err)?);
        let n = [l1.param_dim(), l3.param_dim(), l2b.param_dim(), l4b.param_dim()];
        let swap = move |p: &[f64]| {
            let (a, rest) = p.split_at(n[0]);
            let (c, rest) = rest.split_at(n[1]);
            let (b, d) = rest.split_at(n[2]);
            [a, b, c, d].concat()
        };
        worst = worst.max(compare(&mut rng, &left, &right, &swap, 20));
    }
    ensure(worst <= 1e-9, || format!("worst deviation {worst:e}"))?;
    Ok(format!("40 chains, worst deviation {worst:.1e}"))
}

fn functoriality_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let quad = ErrorFunction::quadratic();
    let chains: Vec<(&str, ParamFn, ParamFn, f64)> = vec![
        ("affine-affine", primitives::affine(2, 3), primitives::affine(3, 2), 1e-9),
        ("linear-affine", primitives::linear(3, 3), primitives::affine(3, 1), 1e-9),
        (
            "affine-relu-affine",
            primitives::affine(2, 4).then(&primitives::relu(4)).map_err(err)?,
            primitives::affine(4, 2),
            1e-6,
        ),
        ("affine-softmax", primitives::affine(3, 4), primitives::softmax_columns(2, 2), 1e-6),
        ("relu-softmax", primitives::relu(4), primitives::softmax_columns(4, 1), 1e-6),
    ];
    let mut lines = Vec::new();
    for (name, pf1, pf2, tol) in &chains {
        let eps = rng.gen_range(0.01..0.3);
        let r = functoriality_check(pf1, pf2, eps, &quad, 50, &mut rng).map_err(err)?;
        ensure(r.worst <= *tol, || format!("{name}: {:e} > {tol:e}", r.worst))?;
        lines.push(format!("{name} {:.0e}", r.worst));
    }
    Ok(format!("50 points per chain; {}", lines.join(", ")))
}

/// `max|analytic − fd| / max(1, max|fd|)` with central differences of
/// step `1e-5`, for one Jacobian.
fn fd_error(f: &dyn Fn(&[f64]) -> Vec<f64>, at: &[f64], analytic: &dyn Fn(usize, usize) -> f64, rows: usize) -> f64 {
    let h = 1e-5;
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for j in 0..at.len() {
        let (mut plus, mut minus) = (at.to_vec(), at.to_vec());
        plus[j] += h;
        minus[j] -= h;
        let (fp, fm) = (f(&plus), f(&minus));
        for i in 0..rows {
            let d = (fp[i] - fm[i]) / (2.0 * h);
            scale = scale.max(d.abs());
            diff = diff.max((d - analytic(i, j)).abs());
        }
    }
    diff / scale
}

fn gradient_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let shape = BlockShape::new(4, 3, 2, 2, 4).map_err(err)?;
    ensure(shape.param_count() == 100, || format!("block has {} parameters", shape.param_count()))?;
    let block = block_as_paramfn(&TransformerBlock::zeros(shape)).map_err(err)?;
    let family: Vec<ParamFn> = vec![
        primitives::identity(3),
        primitives::add_constant(vec![0.5, -1.0]),
        primitives::copy(2, 3),
        primitives::sum(2, 3),
        primitives::left_multiply(2, 3, 2),
        primitives::linear(3, 2),
        primitives::affine(3, 2),
        primitives::column_bias(2, 3),
        primitives::relu(5),
        primitives::softmax_columns(3, 2),
        primitives::product(2, 3, 2, false),
        primitives::product(2, 3, 2, true),
        primitives::attention_scores(4, 3, 2),
        block,
    ];
    let mut worst: f64 = 0.0;
    for pf in &family {
        for _ in 0..20 {
            let (p, a) = sample_smooth_point(pf, &mut rng).map_err(err)?;
            let lin = pf.linearize(&p, &a);
            let rows = pf.out_dim();
            let e_p = fd_error(&|q| pf.implement(q, &a), &p, &|i, j| lin.jac_p.get(i, j), rows);
            let e_a = fd_error(&|x| pf.implement(&p, x), &a, &|i, j| lin.jac_a.get(i, j), rows);
            ensure(e_p.max(e_a) <= 1e-4, || format!("{}: {:e}", pf.name(), e_p.max(e_a)))?;
            worst = worst.max(e_p).max(e_a);
        }
    }
    Ok(format!("{} maps at 20 points, worst relative error {worst:.1e}", family.len()))
}

fn equivariance_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let shape = BlockShape::new(4, 5, 2, 2, 4).map_err(err)?;
    let permute = |m: &Matrix, sigma: &[usize]| Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, sigma[j]));
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let block = TransformerBlock::random(shape, &mut rng);
        let x = Matrix::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0));
        let sigma: Vec<usize> = {
            let p = Permutation::random(5, &mut rng);
            (0..5).map(|j| p.apply(j)).collect()
        };
        let after = block.forward(&permute(&x, &sigma)).map_err(err)?;
        let before = permute(&block.forward(&x).map_err(err)?, &sigma);
        worst = worst.max(after.max_abs_diff(&before).map_err(err)?);
    }
    ensure(worst <= 1e-8, || format!("worst {worst:e}"))?;
    Ok(format!("100 trials, worst {worst:.1e}"))
}

fn subset(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| !x || y)
}

fn heyting_suite() -> Verdict {
    let parents = small_arrow_objects(3);
    let (mut triples, mut non_boolean) = (0usize, 0usize);
    for g in &parents {
        let lattice = SubobjectLattice::new(g);
        let all = &lattice.elements;
        let leq = |x: &Subobject, y: &Subobject| subset(x.inputs(), y.inputs()) && subset(x.outputs(), y.outputs());
        let meet = |x: &Subobject, y: &Subobject| -> (Vec<bool>, Vec<bool>) {
            (
                x.inputs().iter().zip(y.inputs()).map(|(&a, &b)| a && b).collect(),
                x.outputs().iter().zip(y.outputs()).map(|(&a, &b)| a && b).collect(),
            )
        };
        for x in all {
            for y in all {
                let imp = x.implies(y).map_err(err)?;
                for z in all {
                    let (mi, mo) = meet(z, x);
                    let lhs = leq(z, &imp);
                    let rhs = subset(&mi, y.inputs()) && subset(&mo, y.outputs());
                    ensure(lhs == rhs, || format!("adjunction fails over {g:?}"))?;
                    triples += 1;
                }
            }
            let top = Subobject::top(g);
            if x.join(&x.negate().map_err(err)?).map_err(err)? != top {
                non_boolean += 1;
            }
        }
    }
    ensure(non_boolean > 0, || "excluded middle never fails".into())?;
    Ok(format!("{} parents, {triples} triples, {non_boolean} elements with x or not x below top", parents.len()))
}

/// A subobject of a product of arrow objects, as membership of input and
/// output tuples.
#[derive(Clone)]
struct Pred {
    inputs: Vec<bool>,
    outputs: Vec<bool>,
}

struct Model<'a> {
    g: &'a ArrowObject,
    s: &'a Subobject,
    t: &'a Subobject,
    f: &'a Square,
    vars: usize,
}

impl Model<'_> {
    fn tuples(&self, n: usize) -> Vec<Vec<usize>> {
        (0..n.pow(self.vars as u32))
            .map(|mut k| {
                let mut t = vec![0; self.vars];
                for slot in t.iter_mut().rev() {
                    *slot = k % n;
                    k /= n;
                }
                t
            })
            .collect()
    }

    fn term(&self, t: &arrowtopos_core::logic::Term, tuple: &[usize], input: bool) -> usize {
        use arrowtopos_core::logic::Term;
        match t {
            Term::Var(v) => tuple[if v == "x" { 0 } else { 1 }],
            Term::App(_, inner) => {
                let v = self.term(inner, tuple, input);
                if input {
                    self.f.top().at(v)
                } else {
                    self.f.bottom().at(v)
                }
            }
        }
    }

    fn eval(&self, phi: &Formula) -> Pred {
        let ins = self.tuples(self.g.dom().len());
        let outs = self.tuples(self.g.cod().len());
        let pointwise = |test: &dyn Fn(&[usize], bool) -> bool| Pred {
            inputs: ins.iter().map(|t| test(t, true)).collect(),
            outputs: outs.iter().map(|t| test(t, false)).collect(),
        };
        // the parent is the product, which sends an input tuple to the
        // tuple of g-images
        let image = |k: usize| -> usize {
            ins[k].iter().fold(0, |acc, &c| acc * self.g.cod().len() + self.g.at(c))
        };
        match phi {
            Formula::True => pointwise(&|_, _| true),
            Formula::False => pointwise(&|_, _| false),
            Formula::Eq(a, b) => pointwise(&|t, i| self.term(a, t, i) == self.term(b, t, i)),
            Formula::In(a, name) => {
                let sub = if name == "S" { self.s } else { self.t };
                pointwise(&|t, i| {
                    let v = self.term(a, t, i);
                    if i {
                        sub.inputs()[v]
                    } else {
                        sub.outputs()[v]
                    }
                })
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let (pa, pb) = (self.eval(a), self.eval(b));
                let op = |x: bool, y: bool| if matches!(phi, Formula::And(..)) { x && y } else { x || y };
                Pred {
                    inputs: pa.inputs.iter().zip(&pb.inputs).map(|(&x, &y)| op(x, y)).collect(),
                    outputs: pa.outputs.iter().zip(&pb.outputs).map(|(&x, &y)| op(x, y)).collect(),
                }
            }
            Formula::Implies(a, b) => {
                let (pa, pb) = (self.eval(a), self.eval(b));
                let outputs: Vec<bool> = pa.outputs.iter().zip(&pb.outputs).map(|(&x, &y)| !x || y).collect();
                let inputs = (0..ins.len())
                    .map(|k| (!pa.inputs[k] || pb.inputs[k]) && outputs[image(k)])
                    .collect();
                Pred { inputs, outputs }
            }
            Formula::Not(a) => self.eval(&Formula::Implies(a.clone(), Box::new(Formula::False))),
            other => unreachable!("quantifier-free formulas only: {other}"),
        }
    }

    /// Whether `alphas` (one square per variable) factor through `pred`.
    fn holds(&self, pred: &Pred, alphas: &[Square]) -> bool {
        let u = alphas[0].src();
        let pack = |coords: Vec<usize>, n: usize| coords.iter().fold(0, |acc, &c| acc * n + c);
        (0..u.dom().len()).all(|x| pred.inputs[pack(alphas.iter().map(|a| a.top().at(x)).collect(), self.g.dom().len())])
            && (0..u.cod().len())
                .all(|y| pred.outputs[pack(alphas.iter().map(|a| a.bottom().at(y)).collect(), self.g.cod().len())])
    }
}

const ONE_VARIABLE: [&str; 7] = [
    "(in x S)",
    "(not (in x S))",
    "(or (in x S) (not (in x S)))",
    "(implies (in (f x) T) (in x S))",
    "(not (not (in x S)))",
    "(implies (not (not (in x S))) (in x S))",
    "(and (eq (f x) x) (or (in x T) (not (in (f x) S))))",
];

const TWO_VARIABLES: [&str; 4] = [
    "(implies (in x S) (in y T))",
    "(and (in (f x) T) (not (eq x y)))",
    "(or (eq (f x) y) (in y S))",
    "(not (implies (in x T) (eq x (f y))))",
];

const QUANTIFIED: [&str; 3] = [
    "(exists y G (and (eq (f y) x) (in y S)))",
    "(forall y G (implies (eq (f y) x) (in y T)))",
    "(not (exists y G (not (or (in y S) (eq y x)))))",
];

fn forcing_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let parents = canonical_stages(3);
    let (mut agreements, mut arrows) = (0usize, 0usize);
    for (gi, g) in parents.iter().enumerate() {
        let s = Subobject::from_square(&random_subobject_of(&mut rng, g)).map_err(err)?;
        let t = Subobject::from_square(&random_subobject_of(&mut rng, g)).map_err(err)?;
        let endos = Square::hom(g, g);
        let f = endos[rng.gen_range(0..endos.len())].clone();
        let mut universe = Universe::new();
        universe.add_object("G", g.clone());
        universe.add_subobject("S", "G", s.clone()).map_err(err)?;
        universe.add_subobject("T", "G", t.clone()).map_err(err)?;
        universe.add_map("f", "G", "G", f.clone()).map_err(err)?;

        // one free variable: every stage up to 3; two: pairs of elements
        // from stages up to 2 over parents up to 2
        let small = g.dom().len() <= 2 && g.cod().len() <= 2;
        let mut cases: Vec<(&str, usize, usize)> = ONE_VARIABLE.iter().map(|p| (*p, 1, 3)).collect();
        if small {
            cases.extend(TWO_VARIABLES.iter().map(|p| (*p, 2, 2)));
        }
        let mut forcing = Forcing::new(&universe, 3);
        for (text, vars, bound) in cases {
            let phi = Formula::parse(text).map_err(err)?;
            let model = Model { g, s: &s, t: &t, f: &f, vars };
            let pred = model.eval(&phi);
            for u in canonical_stages(bound) {
                let elements = Square::hom(&u, g);
                let envs: Vec<Vec<Square>> = if vars == 1 {
                    elements.iter().map(|a| vec![a.clone()]).collect()
                } else {
                    elements.iter().flat_map(|a| elements.iter().map(move |b| vec![a.clone(), b.clone()])).collect()
                };
                for alphas in envs {
                    let env: Vec<(String, Square)> =
                        ["x", "y"].iter().zip(&alphas).map(|(v, a)| (v.to_string(), a.clone())).collect();
                    let forced = forcing.forces(&u, &env, &phi).map_err(err)?;
                    ensure(forced == model.holds(&pred, &alphas), || {
                        format!("parent {gi}: {text} at a stage of size {}+{}", u.dom().len(), u.cod().len())
                    })?;
                    agreements += 1;
                }
            }
        }

        // monotonicity and local character along every arrow between
        // stages up to 2
        let mut forcing = Forcing::new(&universe, 2);
        for text in ONE_VARIABLE.iter().chain(&QUANTIFIED) {
            let phi = Formula::parse(text).map_err(err)?;
            let stages = canonical_stages(2);
            for u in &stages {
                for alpha in Square::hom(u, g) {
                    let at_u = forcing.forces(u, &[("x".into(), alpha.clone())], &phi).map_err(err)?;
                    for v in &stages {
                        for arrow in Square::hom(v, u) {
                            let pulled = arrow.then(&alpha).map_err(err)?;
                            let at_v = forcing.forces(v, &[("x".into(), pulled)], &phi).map_err(err)?;
                            ensure(!at_u || at_v, || format!("parent {gi}: {text} not monotone"))?;
                            ensure(!(arrow.is_epic() && at_v) || at_u, || format!("parent {gi}: {text} not local"))?;
                            arrows += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(format!(
        "{} parents, {agreements} forcing/oracle agreements, {arrows} arrows checked for naturality",
        parents.len()
    ))
}

fn training_suite() -> Verdict {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/train.diagram");
    let d = dsl::parse(&std::fs::read_to_string(path).map_err(err)?).map_err(err)?;
    ensure(d.bindings.len() == 2, || "expected a two-block chain".into())?;
    let config = RunConfig::new(7);
    let opts = TrainOptions::default();
    ensure(opts.steps == 500, || "default run is not 500 steps".into())?;
    let first = run_train_demo(&d, &config, &opts).map_err(err)?;
    let second = run_train_demo(&d, &config, &opts).map_err(err)?;
    let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&first.trace) == bits(&second.trace) && bits(&first.params) == bits(&second.params), || {
        "repeat runs differ".into()
    })?;
    let ratio = first.trace.last().copied().unwrap_or(f64::NAN) / first.trace[0];
    ensure(ratio <= 0.5, || format!("loss ratio {ratio}"))?;
    Ok(format!("loss {:.3e} -> {:.3e} (ratio {ratio:.3}), repeat bit-identical", first.trace[0], first.trace[500]))
}

type Criterion = (&'static str, u64, fn() -> Verdict);

const CRITERIA: [Criterion; 11] = [
    ("universal properties of set-level limits and colimits", 15, universal_property_suite),
    ("pullback cubes in the arrow category", 10, cube_suite),
    ("subobject classifier", 10, classifier_suite),
    ("exponential adjunction", 30, exponential_suite),
    ("learner category laws", 5, learn_suite),
    ("backprop functoriality", 10, functoriality_suite),
    ("gradient oracle", 30, gradient_suite),
    ("permutation equivariance", 5, equivariance_suite),
    ("Heyting algebra of subobjects", 10, heyting_suite),
    ("Kripke-Joyal forcing", 30, forcing_suite),
    ("training sanity", 60, training_suite),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in CRITERIA.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(*budget);
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over the {budget} s budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {:>2} {name}: {detail} ({:.2} s)", i + 1, elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
