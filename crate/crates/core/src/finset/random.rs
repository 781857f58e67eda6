//! Seeded random instances for tests, law suites and acceptance runs.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{ArrowObject, FinFn, FinSet, Square};

const RETRIES: usize = 200;

pub fn random_fn<R: Rng + ?Sized>(rng: &mut R, name: &str, dom: &FinSet, cod: &FinSet) -> FinFn {
    assert!(dom.is_empty() || !cod.is_empty(), "no function into an empty set");
    let map = (0..dom.len()).map(|_| rng.gen_range(0..cod.len())).collect();
    FinFn::raw(name, dom.clone(), cod.clone(), map)
}

/// An arrow object with `|I| ∈ 0..=max` and `|O| ∈ 1..=max`.
pub fn random_arrow_object<R: Rng + ?Sized>(rng: &mut R, tag: &str, max: usize) -> ArrowObject {
    let lower = tag.to_lowercase();
    let i = FinSet::range(format!("{tag}_in"), &lower, rng.gen_range(0..=max));
    let o = FinSet::range(format!("{tag}_out"), &format!("{lower}'"), rng.gen_range(1..=max.max(1)));
    random_fn(rng, tag, &i, &o)
}

/// A random commuting square `src → g` with a fresh source object.
pub fn random_square_into<R: Rng + ?Sized>(rng: &mut R, g: &ArrowObject, tag: &str, max: usize) -> Square {
    for _ in 0..RETRIES {
        let lower = tag.to_lowercase();
        let i = FinSet::range(format!("{tag}_in"), &lower, rng.gen_range(0..=max));
        let o = FinSet::range(format!("{tag}_out"), &format!("{lower}'"), rng.gen_range(1..=max.max(1)));
        if !i.is_empty() && g.dom().is_empty() {
            continue;
        }
        let h = random_fn(rng, "h", &i, g.dom());
        let k = random_fn(rng, "k", &o, g.cod());
        // f(x) must land in k⁻¹(g(h(x)))
        let mut map = Vec::with_capacity(i.len());
        for x in 0..i.len() {
            let target = g.at(h.at(x));
            let options: Vec<usize> = (0..o.len()).filter(|&y| k.at(y) == target).collect();
            match options.choose(rng) {
                Some(&y) => map.push(y),
                None => break,
            }
        }
        if map.len() == i.len() {
            let f = FinFn::raw(tag, i, o, map);
            return Square::raw(f, g.clone(), h, k);
        }
    }
    Square::identity(g)
}

/// A random commuting square `f → dst` with a fresh target object.
pub fn random_square_from<R: Rng + ?Sized>(rng: &mut R, f: &ArrowObject, tag: &str, max: usize) -> Square {
    for _ in 0..RETRIES {
        let lower = tag.to_lowercase();
        let i = FinSet::range(format!("{tag}_in"), &lower, rng.gen_range(0..=max));
        let o = FinSet::range(format!("{tag}_out"), &format!("{lower}'"), rng.gen_range(1..=max.max(1)));
        if !f.dom().is_empty() && i.is_empty() {
            continue;
        }
        let g = random_fn(rng, tag, &i, &o);
        let h = random_fn(rng, "h", f.dom(), &i);
        // k is forced on the image of f and free elsewhere
        let mut k: Vec<Option<usize>> = vec![None; f.cod().len()];
        let mut ok = true;
        for x in 0..f.dom().len() {
            let want = g.at(h.at(x));
            match k[f.at(x)] {
                Some(v) if v != want => {
                    ok = false;
                    break;
                }
                _ => k[f.at(x)] = Some(want),
            }
        }
        if ok {
            let k = k.into_iter().map(|v| v.unwrap_or_else(|| rng.gen_range(0..o.len()))).collect();
            let k = FinFn::raw("k", f.cod().clone(), o, k);
            return Square::raw(f.clone(), g, h, k);
        }
    }
    Square::identity(f)
}

/// A cospan `a: A → C ← B :b` of squares, the input of a pullback cube.
pub fn random_cube<R: Rng + ?Sized>(rng: &mut R, max: usize) -> (Square, Square) {
    let c = random_arrow_object(rng, "C", max);
    let a = random_square_into(rng, &c, "A", max);
    let b = random_square_into(rng, &c, "B", max);
    (a, b)
}

/// A span `B ← A → C` of squares.
pub fn random_span<R: Rng + ?Sized>(rng: &mut R, max: usize) -> (Square, Square) {
    let a = random_arrow_object(rng, "A", max);
    let b = random_square_from(rng, &a, "B", max);
    let c = random_square_from(rng, &a, "C", max);
    (b, c)
}

/// Two squares with the same source and target.
pub fn random_parallel_squares<R: Rng + ?Sized>(rng: &mut R, max: usize) -> (Square, Square) {
    let a = random_arrow_object(rng, "A", max);
    let first = random_square_from(rng, &a, "B", max);
    let (f, g) = (first.src(), first.dst());
    for _ in 0..RETRIES {
        let h = random_fn(rng, "h2", f.dom(), g.dom());
        let mut k: Vec<Option<usize>> = vec![None; f.cod().len()];
        let mut ok = true;
        for x in 0..f.dom().len() {
            let want = g.at(h.at(x));
            match k[f.at(x)] {
                Some(v) if v != want => {
                    ok = false;
                    break;
                }
                _ => k[f.at(x)] = Some(want),
            }
        }
        if ok {
            let k = k
                .into_iter()
                .map(|v| v.unwrap_or_else(|| rng.gen_range(0..g.cod().len())))
                .collect();
            let k = FinFn::raw("k2", f.cod().clone(), g.cod().clone(), k);
            let second = Square::raw(f.clone(), g.clone(), h, k);
            return (first, second);
        }
    }
    (first.clone(), first)
}

/// A random subobject of a random arrow object: inclusions of a subset `T`
/// of the outputs and a subset of `g⁻¹(T)` of the inputs.
pub fn random_monic_square<R: Rng + ?Sized>(rng: &mut R, max: usize) -> Square {
    let g = random_arrow_object(rng, "G", max);
    random_subobject_of(rng, &g)
}

pub fn random_subobject_of<R: Rng + ?Sized>(rng: &mut R, g: &ArrowObject) -> Square {
    let out: Vec<usize> = (0..g.cod().len()).filter(|_| rng.gen_bool(0.5)).collect();
    let inp: Vec<usize> = (0..g.dom().len())
        .filter(|&x| out.contains(&g.at(x)) && rng.gen_bool(0.6))
        .collect();
    let sub_in = FinSet::new("S_in", inp.iter().map(|&x| g.dom().element(x).to_string())).expect("subset");
    let sub_out = FinSet::new("S_out", out.iter().map(|&y| g.cod().element(y).to_string())).expect("subset");
    let f = FinFn::raw(
        "s",
        sub_in.clone(),
        sub_out.clone(),
        inp.iter().map(|&x| out.iter().position(|&y| y == g.at(x)).expect("closed")).collect(),
    );
    let i = FinFn::raw("i", sub_in, g.dom().clone(), inp);
    let j = FinFn::raw("j", sub_out, g.cod().clone(), out);
    Square::raw(f, g.clone(), i, j)
}
