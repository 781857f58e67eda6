use std::fs;
use std::path::PathBuf;

use arrowtopos_core::backprop::{lift, ErrorFunction};
use arrowtopos_core::dsl::{self, CompileOptions, DslError, ShapeKind, Solution, SolveOptions};
use arrowtopos_core::finset::{limits, FinFn, FinSet};
use arrowtopos_core::learn::{equivalent, train, Example, LearnerEquivalence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(name: &str) -> dsl::Diagram {
    dsl::parse(&fs::read_to_string(fixtures().join(name)).unwrap()).unwrap()
}

#[test]
fn every_fixture_round_trips() {
    let mut seen = 0;
    for entry in fs::read_dir(fixtures()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("diagram") {
            continue;
        }
        let d = dsl::parse(&fs::read_to_string(&path).unwrap()).unwrap();
        let again = dsl::parse(&d.serialize()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(again, d, "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 8);
}

#[test]
fn minimal_daisy_chain() {
    let d = dsl::parse("shape daisy_chain(2)\n").unwrap();
    let shape = d.shape.unwrap();
    assert_eq!(shape.kind, ShapeKind::DaisyChain(2));
    assert_eq!(shape.objects.len(), 3);
    assert_eq!(shape.arrows.len(), 2);
}

#[test]
fn pullback_fixture_matches_hand_built() {
    let d = load("pullback.diagram");
    let set = |name: &str, e: &[&str]| FinSet::new(name, e.iter().copied()).unwrap();
    let (x, y, z) = (set("X", &["x1", "x2"]), set("Y", &["y1", "y2"]), set("Z", &["z1", "z2"]));
    let f = FinFn::new("f", x.clone(), z.clone(), &[("x1", "z1"), ("x2", "z2")]).unwrap();
    let g = FinFn::new("g", y.clone(), z.clone(), &[("y1", "z1"), ("y2", "z1")]).unwrap();
    assert_eq!(d.set("X"), Some(&x));
    assert_eq!(d.function("f"), Some(&f));
    assert_eq!(d.function("g"), Some(&g));

    let expected = limits::pullback(&f, &g).unwrap();
    match dsl::solve(&d, SolveOptions::default()).unwrap() {
        Solution::Sets { vertex, legs, .. } => {
            assert_eq!(vertex.len(), 2);
            assert_eq!(vertex.elements(), expected.apex().elements());
            assert_eq!(legs[0].map(), expected.leg(0).map());
            assert_eq!(legs[1].map(), expected.leg(1).map());
        }
        other => panic!("expected a set-level solution, got {other:?}"),
    }
}

#[test]
fn equalizer_of_equal_maps_is_the_domain() {
    let d = load("equalizer.diagram");
    match dsl::solve(&d, SolveOptions::default()).unwrap() {
        Solution::Sets { vertex, legs, .. } => {
            assert_eq!(vertex.len(), 3);
            assert_eq!(legs[0].map(), &[0, 1, 2]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn cube_fixture_validates_and_solves() {
    let d = load("cube.diagram");
    let v = dsl::validate(&d);
    assert!(v.passed());
    assert!(v.checks.iter().any(|c| c.name.contains("face")), "{:?}", v.checks);
    match dsl::solve(&d, SolveOptions::default()).unwrap() {
        Solution::Arrows { construction, faces, .. } => {
            assert_eq!(faces.len(), 6);
            assert!(faces.iter().all(|f| f.commutes));
            assert_eq!(construction.object.dom().len(), 2);
            assert_eq!(construction.object.cod().len(), 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn altered_square_reports_divergence() {
    let text = fs::read_to_string(fixtures().join("square.diagram")).unwrap();
    assert!(dsl::validate(&dsl::parse(&text).unwrap()).passed());
    let altered = text.replace("i3 -> j2", "i3 -> j1");
    let v = dsl::validate(&dsl::parse(&altered).unwrap());
    let failure = v.failures().next().expect("altered square fails");
    let at = failure.divergence.as_deref().unwrap();
    assert!(at.starts_with("at i3"), "{at}");
}

#[test]
fn undeclared_object_names_label_and_line() {
    let text = "set X = { a }\n# comment\nfn f : X -> W { a -> b }\n";
    match dsl::parse(text) {
        Err(DslError::Semantic { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains('W'), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn parse_errors_carry_positions() {
    assert!(matches!(dsl::parse("set X = { a, a }\n"), Err(DslError::Semantic { line: 1, .. })));
    assert!(matches!(dsl::parse("set X = { a }\nset X = { b }\n"), Err(DslError::Semantic { line: 2, .. })));
    assert!(matches!(
        dsl::parse("set X = { a, b }\nset Y = { c }\nfn f : X -> Y { a -> c }\n"),
        Err(DslError::Semantic { line: 3, .. })
    ));
    assert!(matches!(dsl::parse("set X = { a\n"), Err(DslError::Syntax { line: 1, .. })));
    assert!(matches!(dsl::parse("frobnicate\n"), Err(DslError::Syntax { line: 1, column: 1, .. })));
}

#[test]
fn pullback_shapes_are_not_compiled() {
    let d = load("pullback.diagram");
    assert!(matches!(
        dsl::compile_to_learner(&d, &CompileOptions::default()),
        Err(DslError::Unsupported(_))
    ));
    let unbound = dsl::parse("shape daisy_chain(2)\nbind a1 := affine 1 1\n").unwrap();
    assert!(matches!(
        dsl::compile_to_learner(&unbound, &CompileOptions::default()),
        Err(DslError::Unbound(_))
    ));
}

#[test]
fn daisy_chain_compiles_to_lift_of_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = dsl::parse("shape daisy_chain(2)\nbind a1 := affine 2 3\nbind a2 := affine 3 2\n").unwrap();
    let opts = CompileOptions {
        eps: 0.1,
        ..CompileOptions::default()
    };
    let compiled = dsl::compile_to_learner(&d, &opts).unwrap();
    let whole = lift(compiled.composite.as_ref().unwrap(), opts.eps, &ErrorFunction::quadratic())
        .unwrap()
        .learner;
    let l = &compiled.learner;
    let points: Vec<_> = (0..30)
        .map(|_| {
            let v = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            (v(l.param_dim(), &mut rng), v(l.in_dim(), &mut rng), v(l.out_dim(), &mut rng))
        })
        .collect();
    let report = equivalent(l, &whole, &LearnerEquivalence::identity(), &points, 1e-9);
    assert!(report.worst <= 1e-9, "{}", report.worst);
}

#[test]
fn product_trains_componentwise() {
    let d = dsl::parse("shape product\nbind A := affine 1 1\nbind B := affine 1 1\n").unwrap();
    let opts = CompileOptions {
        eps: 0.05,
        ..CompileOptions::default()
    };
    let compiled = dsl::compile_to_learner(&d, &opts).unwrap();
    let single = lift(&compiled.parts[0], opts.eps, &opts.error).unwrap().learner;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let (a, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            (a, 2.0 * a - 0.5, c, -c + 0.25)
        })
        .collect();
    let joint: Vec<Example> = pairs.iter().map(|&(a, b, c, d)| (vec![a, c], vec![b, d])).collect();
    let left: Vec<Example> = pairs.iter().map(|&(a, b, _, _)| (vec![a], vec![b])).collect();
    let right: Vec<Example> = pairs.iter().map(|&(_, _, c, d)| (vec![c], vec![d])).collect();
    let loss = |x: &[f64], y: &[f64]| ErrorFunction::quadratic().total(x, y);

    let p0 = [0.1, -0.2, 0.3, 0.05];
    let both = train(&compiled.learner, &p0, &joint, 50, &loss).unwrap();
    let one = train(&single, &p0[..2], &left, 50, &loss).unwrap();
    let two = train(&single, &p0[2..], &right, 50, &loss).unwrap();
    assert_eq!(both.params, [one.params.clone(), two.params.clone()].concat());
    for (k, total) in both.trace.iter().enumerate() {
        assert!((total - one.trace[k] - two.trace[k]).abs() < 1e-12);
    }
}

#[test]
fn equalizer_consistency_closes_the_gap() {
    let d = load("consistency.diagram");
    let opts = CompileOptions {
        eps: 0.05,
        task_weight: 0.0,
        ..CompileOptions::default()
    };
    let compiled = dsl::compile_to_learner(&d, &opts).unwrap();
    assert_eq!(compiled.kind, ShapeKind::Equalizer);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let p0 = compiled.initial_params(&mut rng, 1.0);
    let data: Vec<Example> = (0..10)
        .map(|_| (vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], vec![0.0; 4]))
        .collect();
    let grid: Vec<Vec<f64>> = (0..5)
        .flat_map(|i| (0..5).map(move |j| vec![-0.9 + 0.45 * i as f64, -0.9 + 0.45 * j as f64]))
        .collect();
    let gap = |p: &[f64]| -> f64 {
        grid.iter()
            .map(|x| {
                let v = compiled.learner.implement(p, x);
                (0..2).map(|j| (v[j] - v[2 + j]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    };
    let loss = compiled.loss.clone();
    let result = train(&compiled.learner, &p0, &data, 200, &|x, y| loss(x, y)).unwrap();
    let (before, after) = (gap(&p0), gap(&result.params));
    assert!(after <= 0.1 * before, "gap {before} -> {after}");
}
