//! Finite limits and colimits of finite sets, and an exhaustive checker of
//! their universal properties.
//!
//! Each construction returns the diagram it solves together with the
//! universal cone (or cocone). Leg order always follows the diagram's object
//! order, so `verify_limit(&l.diagram, &l.cone, bound)` can be applied to any
//! of them.

use super::{all_maps, FinFn, FinSet, FinsetError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagramArrow {
    pub src: usize,
    pub dst: usize,
    pub map: FinFn,
}

/// A finite diagram of finite sets: a functor from a finite indexing shape.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FinDiagram {
    objects: Vec<FinSet>,
    arrows: Vec<DiagramArrow>,
}

impl FinDiagram {
    pub fn new(objects: Vec<FinSet>, arrows: Vec<DiagramArrow>) -> Result<Self> {
        for (k, a) in arrows.iter().enumerate() {
            let (Some(src), Some(dst)) = (objects.get(a.src), objects.get(a.dst)) else {
                return Err(FinsetError::Malformed(format!("arrow {k} references a missing object")));
            };
            if a.map.dom() != src || a.map.cod() != dst {
                return Err(FinsetError::TypeMismatch {
                    context: format!("diagram arrow {}", a.map.name()),
                    expected: format!("{} -> {}", src.name(), dst.name()),
                    actual: format!("{} -> {}", a.map.dom().name(), a.map.cod().name()),
                });
            }
        }
        Ok(Self { objects, arrows })
    }

    /// `X → Z ← Y`, objects `[X, Y, Z]`.
    pub fn cospan(f: &FinFn, g: &FinFn) -> Result<Self> {
        Self::new(
            vec![f.dom().clone(), g.dom().clone(), f.cod().clone()],
            vec![
                DiagramArrow { src: 0, dst: 2, map: f.clone() },
                DiagramArrow { src: 1, dst: 2, map: g.clone() },
            ],
        )
    }

    /// `X ← Z → Y`, objects `[Z, X, Y]`.
    pub fn span(f: &FinFn, g: &FinFn) -> Result<Self> {
        Self::new(
            vec![f.dom().clone(), f.cod().clone(), g.cod().clone()],
            vec![
                DiagramArrow { src: 0, dst: 1, map: f.clone() },
                DiagramArrow { src: 0, dst: 2, map: g.clone() },
            ],
        )
    }

    /// `A ⇉ B`, objects `[A, B]`.
    pub fn parallel(f: &FinFn, g: &FinFn) -> Result<Self> {
        Self::new(
            vec![f.dom().clone(), f.cod().clone()],
            vec![
                DiagramArrow { src: 0, dst: 1, map: f.clone() },
                DiagramArrow { src: 0, dst: 1, map: g.clone() },
            ],
        )
    }

    pub fn discrete(objects: Vec<FinSet>) -> Self {
        Self {
            objects,
            arrows: Vec::new(),
        }
    }

    pub fn objects(&self) -> &[FinSet] {
        &self.objects
    }

    pub fn arrows(&self) -> &[DiagramArrow] {
        &self.arrows
    }

    /// Families `(x_j)` over all objects with `a(x_src) = x_dst` for every
    /// arrow, by brute force over the full product.
    pub fn compatible_tuples(&self) -> Vec<Vec<usize>> {
        let sizes: Vec<usize> = self.objects.iter().map(FinSet::len).collect();
        let mut out = Vec::new();
        let mut tuple = vec![0; sizes.len()];
        product_walk(&sizes, 0, &mut tuple, &mut |t| {
            if self.arrows.iter().all(|a| a.map.at(t[a.src]) == t[a.dst]) {
                out.push(t.to_vec());
            }
        });
        out
    }
}

fn product_walk(sizes: &[usize], k: usize, tuple: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if k == sizes.len() {
        visit(tuple);
        return;
    }
    for v in 0..sizes[k] {
        tuple[k] = v;
        product_walk(sizes, k + 1, tuple, visit);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cone {
    pub apex: FinSet,
    /// One leg per diagram object, `apex → objects[j]`.
    pub legs: Vec<FinFn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cocone {
    pub nadir: FinSet,
    /// One leg per diagram object, `objects[j] → nadir`.
    pub legs: Vec<FinFn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Limit {
    pub diagram: FinDiagram,
    pub cone: Cone,
}

impl Limit {
    pub fn apex(&self) -> &FinSet {
        &self.cone.apex
    }

    pub fn leg(&self, j: usize) -> &FinFn {
        &self.cone.legs[j]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colimit {
    pub diagram: FinDiagram,
    pub cocone: Cocone,
}

impl Colimit {
    pub fn nadir(&self) -> &FinSet {
        &self.cocone.nadir
    }

    pub fn leg(&self, j: usize) -> &FinFn {
        &self.cocone.legs[j]
    }
}

fn same_cod(context: &str, f: &FinFn, g: &FinFn) -> Result<()> {
    if f.cod() != g.cod() {
        return Err(FinsetError::TypeMismatch {
            context: context.into(),
            expected: f.cod().name().into(),
            actual: g.cod().name().into(),
        });
    }
    Ok(())
}

fn same_dom(context: &str, f: &FinFn, g: &FinFn) -> Result<()> {
    if f.dom() != g.dom() {
        return Err(FinsetError::TypeMismatch {
            context: context.into(),
            expected: f.dom().name().into(),
            actual: g.dom().name().into(),
        });
    }
    Ok(())
}

/// `P = {(x, y) : f(x) = g(y)}` with its projections. Legs `[p1, p2, f∘p1]`.
pub fn pullback(f: &FinFn, g: &FinFn) -> Result<Limit> {
    same_cod("pullback", f, g)?;
    let (x, y) = (f.dom(), g.dom());
    let pairs: Vec<(usize, usize)> = (0..x.len())
        .flat_map(|i| (0..y.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| f.at(i) == g.at(j))
        .collect();
    let apex = FinSet::new(
        "P",
        pairs.iter().map(|&(i, j)| format!("({},{})", x.element(i), y.element(j))),
    )?;
    let p1 = FinFn::raw("p1", apex.clone(), x.clone(), pairs.iter().map(|p| p.0).collect());
    let p2 = FinFn::raw("p2", apex.clone(), y.clone(), pairs.iter().map(|p| p.1).collect());
    let to_z = p1.then(f)?;
    Ok(Limit {
        diagram: FinDiagram::cospan(f, g)?,
        cone: Cone {
            apex,
            legs: vec![p1, p2, to_z],
        },
    })
}

/// `E = {a : f(a) = g(a)}` with its inclusion. Legs `[e, f∘e]`.
pub fn equalizer(f: &FinFn, g: &FinFn) -> Result<Limit> {
    same_dom("equalizer", f, g)?;
    same_cod("equalizer", f, g)?;
    let keep: Vec<usize> = (0..f.dom().len()).filter(|&i| f.at(i) == g.at(i)).collect();
    let apex = FinSet::new("E", keep.iter().map(|&i| f.dom().element(i).to_string()))?;
    let incl = FinFn::raw("e", apex.clone(), f.dom().clone(), keep);
    let to_b = incl.then(f)?;
    Ok(Limit {
        diagram: FinDiagram::parallel(f, g)?,
        cone: Cone {
            apex,
            legs: vec![incl, to_b],
        },
    })
}

/// Cartesian product with its projections.
pub fn product(x: &FinSet, y: &FinSet) -> Limit {
    let apex = product_set(x, y);
    let p1 = FinFn::raw("p1", apex.clone(), x.clone(), (0..apex.len()).map(|k| k / y.len()).collect());
    let p2 = FinFn::raw("p2", apex.clone(), y.clone(), (0..apex.len()).map(|k| k % y.len()).collect());
    Limit {
        diagram: FinDiagram::discrete(vec![x.clone(), y.clone()]),
        cone: Cone { apex, legs: vec![p1, p2] },
    }
}

/// `X × Y` with elements `(x,y)` in row-major order.
pub fn product_set(x: &FinSet, y: &FinSet) -> FinSet {
    let elements = x
        .elements()
        .iter()
        .flat_map(|a| y.elements().iter().map(move |b| format!("({a},{b})")))
        .collect();
    FinSet {
        name: format!("{}x{}", x.name(), y.name()),
        elements,
    }
}

/// The one-point set as the limit of the empty diagram.
pub fn terminal() -> Limit {
    Limit {
        diagram: FinDiagram::default(),
        cone: Cone {
            apex: FinSet::point(),
            legs: Vec::new(),
        },
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Quotient of `0..names.len()` by a union-find; classes are ordered by
/// first member and named `{sorted members}`.
fn quotient(name: &str, names: &[String], uf: &mut UnionFind) -> (FinSet, Vec<usize>) {
    let mut class_of_root = std::collections::HashMap::new();
    let mut members: Vec<Vec<&str>> = Vec::new();
    let mut assignment = Vec::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        let root = uf.find(i);
        let class = *class_of_root.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[class].push(n);
        assignment.push(class);
    }
    let elements = members.into_iter().map(|mut m| {
        m.sort_unstable();
        format!("{{{}}}", m.join(","))
    });
    let set = FinSet {
        name: name.to_string(),
        elements: elements.collect(),
    };
    (set, assignment)
}

/// Element names for the disjoint union `X ⊔ Y`: raw names when they do not
/// collide, otherwise tagged with the summand's set name (or position, when
/// the set names agree too).
fn coproduct_names(x: &FinSet, y: &FinSet) -> Vec<String> {
    let collide = x.elements().iter().any(|e| y.elements().contains(e));
    let tags: [String; 2] = if x.name() != y.name() {
        [x.name().to_string(), y.name().to_string()]
    } else {
        [format!("{}#0", x.name()), format!("{}#1", y.name())]
    };
    x.elements()
        .iter()
        .map(|e| (0, e))
        .chain(y.elements().iter().map(|e| (1, e)))
        .map(|(k, e)| if collide { format!("{}.{e}", tags[k]) } else { e.clone() })
        .collect()
}

/// `Q = (X ⊔ Y)/∼` with `f(z) ∼ g(z)`. Legs `[Z → Q, X → Q, Y → Q]`.
pub fn pushout(f: &FinFn, g: &FinFn) -> Result<Colimit> {
    same_dom("pushout", f, g)?;
    let (x, y) = (f.cod(), g.cod());
    let names = coproduct_names(x, y);
    let mut uf = UnionFind::new(names.len());
    for z in 0..f.dom().len() {
        uf.union(f.at(z), x.len() + g.at(z));
    }
    let (nadir, class) = quotient("Q", &names, &mut uf);
    let inx = FinFn::raw("inx", x.clone(), nadir.clone(), class[..x.len()].to_vec());
    let iny = FinFn::raw("iny", y.clone(), nadir.clone(), class[x.len()..].to_vec());
    let from_z = f.then(&inx)?;
    Ok(Colimit {
        diagram: FinDiagram::span(f, g)?,
        cocone: Cocone {
            nadir,
            legs: vec![from_z, inx, iny],
        },
    })
}

/// `C = B/∼` with `f(a) ∼ g(a)`. Legs `[q∘f, q]`.
pub fn coequalizer(f: &FinFn, g: &FinFn) -> Result<Colimit> {
    same_dom("coequalizer", f, g)?;
    same_cod("coequalizer", f, g)?;
    let b = f.cod();
    let mut uf = UnionFind::new(b.len());
    for a in 0..f.dom().len() {
        uf.union(f.at(a), g.at(a));
    }
    let (nadir, class) = quotient("C", b.elements(), &mut uf);
    let q = FinFn::raw("q", b.clone(), nadir.clone(), class);
    let from_a = f.then(&q)?;
    Ok(Colimit {
        diagram: FinDiagram::parallel(f, g)?,
        cocone: Cocone {
            nadir,
            legs: vec![from_a, q],
        },
    })
}

/// Disjoint union with its injections.
pub fn coproduct(x: &FinSet, y: &FinSet) -> Colimit {
    let nadir = FinSet {
        name: format!("{}+{}", x.name(), y.name()),
        elements: coproduct_names(x, y),
    };
    let inx = FinFn::raw("inx", x.clone(), nadir.clone(), (0..x.len()).collect());
    let iny = FinFn::raw("iny", y.clone(), nadir.clone(), (x.len()..x.len() + y.len()).collect());
    Colimit {
        diagram: FinDiagram::discrete(vec![x.clone(), y.clone()]),
        cocone: Cocone {
            nadir,
            legs: vec![inx, iny],
        },
    }
}

/// The empty set as the colimit of the empty diagram.
pub fn initial() -> Colimit {
    Colimit {
        diagram: FinDiagram::default(),
        cocone: Cocone {
            nadir: FinSet::empty("0"),
            legs: Vec::new(),
        },
    }
}

/// One checked cone (or cocone) and its unique mediating map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mediation {
    pub apex_size: usize,
    /// Limits: index into [`Certificate::tuples`] per apex element.
    /// Colimits: the leg images, concatenated in diagram-object order.
    pub cone: Vec<usize>,
    /// Image indices of the mediating map.
    pub mediator: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub cones_checked: usize,
    /// For limits, the compatible families a test cone may pick per element.
    pub tuples: Vec<Vec<usize>>,
    pub mediators: Vec<Mediation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// The candidate's legs do not have the right types.
    Malformed(String),
    /// The candidate itself fails to commute with a diagram arrow.
    NotACone { arrow: String, element: String },
    /// A test cone with no factorization through the candidate.
    NoMediator { apex_size: usize, legs: Vec<FinFn> },
    /// A test cone with two distinct factorizations.
    NotUnique {
        apex_size: usize,
        legs: Vec<FinFn>,
        mediators: [FinFn; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass(Certificate),
    Fail(Violation),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass(_))
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Verdict::Pass(c) => Some(c),
            Verdict::Fail(_) => None,
        }
    }
}

fn check_legs(objects: &[FinSet], vertex: &FinSet, legs: &[FinFn], outgoing: bool) -> std::result::Result<(), Violation> {
    if legs.len() != objects.len() {
        return Err(Violation::Malformed(format!(
            "{} legs for {} diagram objects",
            legs.len(),
            objects.len()
        )));
    }
    for (j, (leg, obj)) in legs.iter().zip(objects).enumerate() {
        let (from, to) = if outgoing { (vertex, obj) } else { (obj, vertex) };
        if leg.dom() != from || leg.cod() != to {
            return Err(Violation::Malformed(format!(
                "leg {j} ({}) is {} -> {}, expected {} -> {}",
                leg.name(),
                leg.dom().name(),
                leg.cod().name(),
                from.name(),
                to.name()
            )));
        }
    }
    Ok(())
}

/// Exhaustively checks that `candidate` is a limit cone: for every cone with
/// an apex of at most `bound` elements, the functions into the candidate apex
/// that commute with all legs are enumerated and must number exactly one.
///
/// Mediating maps are constrained elementwise, so the set of factorizations
/// of a cone is the product of per-element candidate sets; that product is
/// what gets enumerated.
pub fn verify_limit(diagram: &FinDiagram, candidate: &Cone, bound: usize) -> Verdict {
    if let Err(v) = check_legs(diagram.objects(), &candidate.apex, &candidate.legs, true) {
        return Verdict::Fail(v);
    }
    for a in diagram.arrows() {
        for l in 0..candidate.apex.len() {
            if a.map.at(candidate.legs[a.src].at(l)) != candidate.legs[a.dst].at(l) {
                return Verdict::Fail(Violation::NotACone {
                    arrow: a.map.name().to_string(),
                    element: candidate.apex.element(l).to_string(),
                });
            }
        }
    }

    let tuples = diagram.compatible_tuples();
    let matches: Vec<Vec<usize>> = tuples
        .iter()
        .map(|t| {
            (0..candidate.apex.len())
                .filter(|&l| candidate.legs.iter().enumerate().all(|(j, leg)| leg.at(l) == t[j]))
                .collect()
        })
        .collect();

    let mut mediators = Vec::new();
    let mut cones_checked = 0;
    for size in 0..=bound {
        let apex = FinSet::range("T", "t", size);
        for choice in all_maps(size, tuples.len()) {
            cones_checked += 1;
            let options: Vec<&Vec<usize>> = choice.iter().map(|&c| &matches[c]).collect();
            let test_legs = || -> Vec<FinFn> {
                (0..diagram.objects().len())
                    .map(|j| {
                        FinFn::raw(
                            format!("c{j}"),
                            apex.clone(),
                            diagram.objects()[j].clone(),
                            choice.iter().map(|&c| tuples[c][j]).collect(),
                        )
                    })
                    .collect()
            };
            if options.iter().any(|o| o.is_empty()) {
                return Verdict::Fail(Violation::NoMediator {
                    apex_size: size,
                    legs: test_legs(),
                });
            }
            let first: Vec<usize> = options.iter().map(|o| o[0]).collect();
            if let Some(k) = options.iter().position(|o| o.len() > 1) {
                let mut second = first.clone();
                second[k] = options[k][1];
                let mk = |m: Vec<usize>| FinFn::raw("u", apex.clone(), candidate.apex.clone(), m);
                return Verdict::Fail(Violation::NotUnique {
                    apex_size: size,
                    legs: test_legs(),
                    mediators: [mk(first), mk(second)],
                });
            }
            mediators.push(Mediation {
                apex_size: size,
                cone: choice,
                mediator: first,
            });
        }
    }
    Verdict::Pass(Certificate {
        cones_checked,
        tuples,
        mediators,
    })
}

/// Dual of [`verify_limit`]: every cocone with a nadir of at most `bound`
/// elements must factor through `candidate` in exactly one way.
pub fn verify_colimit(diagram: &FinDiagram, candidate: &Cocone, bound: usize) -> Verdict {
    if let Err(v) = check_legs(diagram.objects(), &candidate.nadir, &candidate.legs, false) {
        return Verdict::Fail(v);
    }
    for a in diagram.arrows() {
        for x in 0..a.map.dom().len() {
            if candidate.legs[a.dst].at(a.map.at(x)) != candidate.legs[a.src].at(x) {
                return Verdict::Fail(Violation::NotACone {
                    arrow: a.map.name().to_string(),
                    element: a.map.dom().element(x).to_string(),
                });
            }
        }
    }

    // Flatten ⊔ X_j into slots; each arrow a: j → k forces c(x) = c(a(x)).
    let offsets: Vec<usize> = diagram
        .objects()
        .iter()
        .scan(0, |acc, o| {
            let start = *acc;
            *acc += o.len();
            Some(start)
        })
        .collect();
    let slots: usize = diagram.objects().iter().map(FinSet::len).sum();
    let mut earlier_equal: Vec<Vec<usize>> = vec![Vec::new(); slots];
    for a in diagram.arrows() {
        for x in 0..a.map.dom().len() {
            let s = offsets[a.src] + x;
            let t = offsets[a.dst] + a.map.at(x);
            if s != t {
                earlier_equal[s.max(t)].push(s.min(t));
            }
        }
    }
    let mut preimages: Vec<Vec<usize>> = vec![Vec::new(); candidate.nadir.len()];
    for (j, leg) in candidate.legs.iter().enumerate() {
        for x in 0..leg.dom().len() {
            preimages[leg.at(x)].push(offsets[j] + x);
        }
    }

    let mut mediators = Vec::new();
    let mut cones_checked = 0;
    for size in 0..=bound {
        let nadir = FinSet::range("T", "t", size);
        let mut failure = None;
        let mut assignment = vec![0; slots];
        enumerate_constrained(&mut assignment, 0, size, &earlier_equal, &mut |c| {
            cones_checked += 1;
            let mut options: Vec<Vec<usize>> = Vec::with_capacity(candidate.nadir.len());
            for pre in &preimages {
                let opts = match pre.first() {
                    None => (0..size).collect(),
                    Some(&s0) => {
                        if pre.iter().all(|&s| c[s] == c[s0]) {
                            vec![c[s0]]
                        } else {
                            Vec::new()
                        }
                    }
                };
                options.push(opts);
            }
            let legs = || -> Vec<FinFn> {
                diagram
                    .objects()
                    .iter()
                    .enumerate()
                    .map(|(j, o)| {
                        FinFn::raw(
                            format!("c{j}"),
                            o.clone(),
                            nadir.clone(),
                            c[offsets[j]..offsets[j] + o.len()].to_vec(),
                        )
                    })
                    .collect()
            };
            if options.iter().any(|o| o.is_empty()) {
                failure = Some(Violation::NoMediator {
                    apex_size: size,
                    legs: legs(),
                });
                return false;
            }
            let first: Vec<usize> = options.iter().map(|o| o[0]).collect();
            if let Some(k) = options.iter().position(|o| o.len() > 1) {
                let mut second = first.clone();
                second[k] = options[k][1];
                let mk = |m: Vec<usize>| FinFn::raw("u", candidate.nadir.clone(), nadir.clone(), m);
                failure = Some(Violation::NotUnique {
                    apex_size: size,
                    legs: legs(),
                    mediators: [mk(first), mk(second)],
                });
                return false;
            }
            mediators.push(Mediation {
                apex_size: size,
                cone: c.to_vec(),
                mediator: first,
            });
            true
        });
        if let Some(v) = failure {
            return Verdict::Fail(v);
        }
    }
    Verdict::Pass(Certificate {
        cones_checked,
        tuples: Vec::new(),
        mediators,
    })
}

/// Backtracking over maps `slots → 0..size` respecting the equalities in
/// `earlier_equal`; `visit` returns `false` to stop.
pub(crate) fn enumerate_constrained(
    assignment: &mut Vec<usize>,
    k: usize,
    size: usize,
    earlier_equal: &[Vec<usize>],
    visit: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if k == assignment.len() {
        return visit(assignment);
    }
    for v in 0..size {
        if earlier_equal[k].iter().all(|&e| assignment[e] == v) {
            assignment[k] = v;
            if !enumerate_constrained(assignment, k + 1, size, earlier_equal, visit) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(name: &str, elems: &[&str]) -> FinSet {
        FinSet::new(name, elems.iter().copied()).unwrap()
    }

    fn fun(name: &str, dom: &FinSet, cod: &FinSet, pairs: &[(&str, &str)]) -> FinFn {
        FinFn::new(name, dom.clone(), cod.clone(), pairs).unwrap()
    }

    fn two_by_two() -> (FinFn, FinFn) {
        let x = set("X", &["x1", "x2"]);
        let y = set("Y", &["y1", "y2"]);
        let z = set("Z", &["z1", "z2"]);
        (
            fun("f", &x, &z, &[("x1", "z1"), ("x2", "z2")]),
            fun("g", &y, &z, &[("y1", "z1"), ("y2", "z1")]),
        )
    }

    #[test]
    fn pullback_of_two_by_two() {
        let (f, g) = two_by_two();
        let p = pullback(&f, &g).unwrap();
        assert_eq!(p.apex().elements(), &["(x1,y1)", "(x1,y2)"]);
        let verdict = verify_limit(&p.diagram, &p.cone, 4);
        let cert = verdict.certificate().expect("pullback is universal");
        // Σ_{t ≤ 4} 2^t test cones
        assert_eq!(cert.cones_checked, 1 + 2 + 4 + 8 + 16);
        assert_eq!(cert.mediators.len(), cert.cones_checked);
        let one = cert.mediators.iter().find(|m| m.apex_size == 1 && m.cone == vec![1]).unwrap();
        assert_eq!(one.mediator, vec![1]);
    }

    #[test]
    fn pullback_along_identity_and_disjoint_images() {
        let (f, _) = two_by_two();
        let p = pullback(&f, &FinFn::identity(f.cod())).unwrap();
        assert_eq!(p.apex().len(), f.dom().len());
        assert!(p.leg(0).is_injective() && p.leg(0).is_surjective());

        let z = set("Z", &["z1", "z2"]);
        let a = fun("a", &set("A", &["a"]), &z, &[("a", "z1")]);
        let b = fun("b", &set("B", &["b"]), &z, &[("b", "z2")]);
        let p = pullback(&a, &b).unwrap();
        assert!(p.apex().is_empty());
        assert!(verify_limit(&p.diagram, &p.cone, 4).passed());
        assert!(pullback(&a, &fun("c", &set("B", &["b"]), &set("W", &["w"]), &[("b", "w")])).is_err());
    }

    #[test]
    fn enlarged_apex_violates_uniqueness() {
        let (f, g) = two_by_two();
        let p = pullback(&f, &g).unwrap();
        let apex = set("P+", &["(x1,y1)", "(x1,y2)", "junk"]);
        let legs = vec![
            FinFn::from_indices("p1", apex.clone(), f.dom().clone(), vec![0, 0, 0]).unwrap(),
            FinFn::from_indices("p2", apex.clone(), g.dom().clone(), vec![0, 1, 0]).unwrap(),
            FinFn::from_indices("pz", apex.clone(), f.cod().clone(), vec![0, 0, 0]).unwrap(),
        ];
        let verdict = verify_limit(&p.diagram, &Cone { apex, legs }, 4);
        assert!(matches!(verdict, Verdict::Fail(Violation::NotUnique { apex_size: 1, .. })));
    }

    #[test]
    fn shrunken_apex_violates_existence() {
        let (f, g) = two_by_two();
        let p = pullback(&f, &g).unwrap();
        let apex = set("P-", &["(x1,y1)"]);
        let legs = p.cone.legs.iter().map(|l| FinFn::from_indices("l", apex.clone(), l.cod().clone(), vec![l.at(0)]).unwrap()).collect();
        assert!(matches!(
            verify_limit(&p.diagram, &Cone { apex, legs }, 4),
            Verdict::Fail(Violation::NoMediator { .. })
        ));
    }

    #[test]
    fn non_cone_candidate_is_rejected() {
        let (f, g) = two_by_two();
        let p = pullback(&f, &g).unwrap();
        let mut cone = p.cone.clone();
        cone.legs[2] = FinFn::from_indices("pz", cone.apex.clone(), f.cod().clone(), vec![1, 1]).unwrap();
        assert!(matches!(verify_limit(&p.diagram, &cone, 2), Verdict::Fail(Violation::NotACone { .. })));
    }

    #[test]
    fn terminal_object_is_limit_of_empty_diagram() {
        let t = terminal();
        assert!(verify_limit(&t.diagram, &t.cone, 4).passed());
        let two = Cone { apex: set("2", &["a", "b"]), legs: vec![] };
        assert!(!verify_limit(&t.diagram, &two, 4).passed());
        let i = initial();
        assert!(verify_colimit(&i.diagram, &i.cocone, 4).passed());
    }

    #[test]
    fn equalizer_examples() {
        let a = set("A", &["1", "2", "3"]);
        let id = FinFn::identity(&a);
        let g = fun("g", &a, &a, &[("1", "1"), ("2", "3"), ("3", "3")]);
        let e = equalizer(&id, &g).unwrap();
        assert_eq!(e.apex().elements(), &["1", "3"]);
        assert!(verify_limit(&e.diagram, &e.cone, 4).passed());

        assert_eq!(equalizer(&g, &g).unwrap().apex().len(), 3);
        let shift = fun("s", &a, &a, &[("1", "2"), ("2", "3"), ("3", "1")]);
        let e = equalizer(&id, &shift).unwrap();
        assert!(e.apex().is_empty());
        assert!(verify_limit(&e.diagram, &e.cone, 4).passed());
    }

    #[test]
    fn pushout_examples() {
        let x = set("X", &["x1", "x2"]);
        let y = set("Y", &["y1"]);
        let z = set("Z", &["z"]);
        let f = fun("f", &z, &x, &[("z", "x1")]);
        let g = fun("g", &z, &y, &[("z", "y1")]);
        let q = pushout(&f, &g).unwrap();
        assert_eq!(q.nadir().elements(), &["{x1,y1}", "{x2}"]);
        assert!(verify_colimit(&q.diagram, &q.cocone, 4).passed());

        let empty = set("Z", &[]);
        let q = pushout(&FinFn::from_empty(&x).with_name("f").clone(), &FinFn::from_empty(&y)).unwrap();
        assert_eq!(q.nadir().len(), 3);
        let _ = empty;
        assert!(verify_colimit(&q.diagram, &q.cocone, 4).passed());
    }

    #[test]
    fn pushout_of_equal_maps_glues_pairwise() {
        let x = set("X", &["a", "b", "c"]);
        let z = set("Z", &["z1", "z2"]);
        let f = fun("f", &z, &x, &[("z1", "a"), ("z2", "b")]);
        let q = pushout(&f, &f).unwrap();
        assert_eq!(q.nadir().elements(), &["{X#0.a,X#1.a}", "{X#0.b,X#1.b}", "{X#0.c}", "{X#1.c}"]);
        assert!(verify_colimit(&q.diagram, &q.cocone, 4).passed());
    }

    #[test]
    fn coequalizer_examples() {
        let a = set("A", &["a"]);
        let b = set("B", &["1", "2"]);
        let f = fun("f", &a, &b, &[("a", "1")]);
        let g = fun("g", &a, &b, &[("a", "2")]);
        let c = coequalizer(&f, &g).unwrap();
        assert_eq!(c.nadir().elements(), &["{1,2}"]);
        assert!(verify_colimit(&c.diagram, &c.cocone, 4).passed());
        assert_eq!(coequalizer(&f, &f).unwrap().nadir().len(), 2);

        let a = set("A", &["p", "q"]);
        let b = set("B", &["1", "2", "3"]);
        let f = fun("f", &a, &b, &[("p", "1"), ("q", "2")]);
        let g = fun("g", &a, &b, &[("p", "2"), ("q", "3")]);
        let c = coequalizer(&f, &g).unwrap();
        assert_eq!(c.nadir().elements(), &["{1,2,3}"]);
    }

    #[test]
    fn products_and_coproducts_verify() {
        let x = set("X", &["a", "b"]);
        let y = set("Y", &["1", "2", "3"]);
        let p = product(&x, &y);
        assert_eq!(p.apex().len(), 6);
        assert!(verify_limit(&p.diagram, &p.cone, 3).passed());
        let c = coproduct(&x, &y);
        assert_eq!(c.nadir().elements(), &["a", "b", "1", "2", "3"]);
        assert!(verify_colimit(&c.diagram, &c.cocone, 3).passed());
    }

    #[test]
    fn collapsed_coproduct_fails_uniqueness_or_existence() {
        let x = set("X", &["a"]);
        let y = set("Y", &["b"]);
        let c = coproduct(&x, &y);
        let nadir = set("N", &["ab"]);
        let legs = vec![
            FinFn::from_indices("i", x.clone(), nadir.clone(), vec![0]).unwrap(),
            FinFn::from_indices("j", y.clone(), nadir.clone(), vec![0]).unwrap(),
        ];
        assert!(matches!(
            verify_colimit(&c.diagram, &Cocone { nadir, legs }, 2),
            Verdict::Fail(Violation::NoMediator { .. })
        ));
    }
}
