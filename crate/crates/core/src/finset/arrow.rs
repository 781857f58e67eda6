//! (Co)limits in the arrow category, computed componentwise.
//!
//! A diagram of arrow objects splits into a diagram of input sets (the top
//! components) and a diagram of output sets (the bottom components). Each
//! side is solved in finite sets, and the induced function between the two
//! solutions is the (co)limit object. For a pullback this is the cube whose
//! back and front faces are set pullbacks, with `P → Q` as the induced edge.

use std::fmt;
use std::str::FromStr;

use super::limits::{self, enumerate_constrained, Colimit, DiagramArrow, FinDiagram, Limit};
use super::{all_maps, ArrowObject, FinFn, FinSet, FinsetError, Result, Square};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArrowShape {
    /// `A → C ← B`, objects `[A, B, C]`.
    Pullback,
    /// `B ← A → C`, objects `[A, B, C]`.
    Pushout,
    /// `A ⇉ B`.
    Equalizer,
    /// `A ⇉ B`.
    Coequalizer,
    /// Two objects, no arrows.
    Product,
    /// Two objects, no arrows.
    Coproduct,
}

impl ArrowShape {
    pub fn is_limit(self) -> bool {
        matches!(self, Self::Pullback | Self::Equalizer | Self::Product)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Pullback => "pullback",
            Self::Pushout => "pushout",
            Self::Equalizer => "equalizer",
            Self::Coequalizer => "coequalizer",
            Self::Product => "product",
            Self::Coproduct => "coproduct",
        }
    }

    fn layout(self) -> (usize, &'static [(usize, usize)]) {
        match self {
            Self::Pullback => (3, &[(0, 2), (1, 2)]),
            Self::Pushout => (3, &[(0, 1), (0, 2)]),
            Self::Equalizer | Self::Coequalizer => (2, &[(0, 1), (0, 1)]),
            Self::Product | Self::Coproduct => (2, &[]),
        }
    }
}

impl fmt::Display for ArrowShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArrowShape {
    type Err = FinsetError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pullback" => Self::Pullback,
            "pushout" => Self::Pushout,
            "equalizer" => Self::Equalizer,
            "coequalizer" => Self::Coequalizer,
            "product" => Self::Product,
            "coproduct" => Self::Coproduct,
            other => return Err(FinsetError::UnsupportedShape(other.to_string())),
        })
    }
}

/// A diagram of one of the supported shapes in the arrow category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowDiagram {
    shape: ArrowShape,
    objects: Vec<ArrowObject>,
    arrows: Vec<Square>,
}

impl ArrowDiagram {
    /// Arrows are listed in the shape's layout order (see [`ArrowShape`]).
    pub fn new(shape: ArrowShape, objects: Vec<ArrowObject>, arrows: Vec<Square>) -> Result<Self> {
        let (n_objects, layout) = shape.layout();
        if objects.len() != n_objects || arrows.len() != layout.len() {
            return Err(FinsetError::UnsupportedShape(format!(
                "{shape} needs {n_objects} objects and {} arrows, got {} and {}",
                layout.len(),
                objects.len(),
                arrows.len()
            )));
        }
        for (sq, &(s, t)) in arrows.iter().zip(layout) {
            if !sq.src().same_map(&objects[s]) || !sq.dst().same_map(&objects[t]) {
                return Err(FinsetError::TypeMismatch {
                    context: format!("{shape} arrow"),
                    expected: format!("{} -> {}", objects[s].name(), objects[t].name()),
                    actual: format!("{} -> {}", sq.src().name(), sq.dst().name()),
                });
            }
        }
        Ok(Self { shape, objects, arrows })
    }

    /// Cospan `a: A → C ← B :b`.
    pub fn pullback(a: &Square, b: &Square) -> Result<Self> {
        Self::new(
            ArrowShape::Pullback,
            vec![a.src().clone(), b.src().clone(), a.dst().clone()],
            vec![a.clone(), b.clone()],
        )
    }

    /// Span `B ← A → C`.
    pub fn pushout(a: &Square, b: &Square) -> Result<Self> {
        Self::new(
            ArrowShape::Pushout,
            vec![a.src().clone(), a.dst().clone(), b.dst().clone()],
            vec![a.clone(), b.clone()],
        )
    }

    pub fn parallel(shape: ArrowShape, a: &Square, b: &Square) -> Result<Self> {
        Self::new(shape, vec![a.src().clone(), a.dst().clone()], vec![a.clone(), b.clone()])
    }

    pub fn pair(shape: ArrowShape, x: &ArrowObject, y: &ArrowObject) -> Result<Self> {
        Self::new(shape, vec![x.clone(), y.clone()], Vec::new())
    }

    pub fn shape(&self) -> ArrowShape {
        self.shape
    }

    pub fn objects(&self) -> &[ArrowObject] {
        &self.objects
    }

    pub fn arrows(&self) -> &[Square] {
        &self.arrows
    }

    fn component(&self, top: bool) -> FinDiagram {
        let (_, layout) = self.shape.layout();
        let objects = self
            .objects
            .iter()
            .map(|o| if top { o.dom().clone() } else { o.cod().clone() })
            .collect();
        let arrows = self
            .arrows
            .iter()
            .zip(layout)
            .map(|(sq, &(src, dst))| DiagramArrow {
                src,
                dst,
                map: if top { sq.top().clone() } else { sq.bottom().clone() },
            })
            .collect();
        FinDiagram::new(objects, arrows).expect("component types follow from the squares")
    }

    /// The diagram of input sets.
    pub fn top_component(&self) -> FinDiagram {
        self.component(true)
    }

    /// The diagram of output sets.
    pub fn bottom_component(&self) -> FinDiagram {
        self.component(false)
    }
}

/// The solution of one component in finite sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Universal {
    Limit(Limit),
    Colimit(Colimit),
}

impl Universal {
    pub fn vertex(&self) -> &FinSet {
        match self {
            Self::Limit(l) => l.apex(),
            Self::Colimit(c) => c.nadir(),
        }
    }

    pub fn legs(&self) -> &[FinFn] {
        match self {
            Self::Limit(l) => &l.cone.legs,
            Self::Colimit(c) => &c.cocone.legs,
        }
    }

    fn renamed(self, name: &str) -> Self {
        let rename_set = |s: &FinSet| s.renamed(name);
        match self {
            Self::Limit(mut l) => {
                l.cone.apex = rename_set(&l.cone.apex);
                for leg in &mut l.cone.legs {
                    *leg = FinFn::raw(leg.name(), l.cone.apex.clone(), leg.cod().clone(), leg.map().to_vec());
                }
                Self::Limit(l)
            }
            Self::Colimit(mut c) => {
                c.cocone.nadir = rename_set(&c.cocone.nadir);
                for leg in &mut c.cocone.legs {
                    *leg = FinFn::raw(leg.name(), leg.dom().clone(), c.cocone.nadir.clone(), leg.map().to_vec());
                }
                Self::Colimit(c)
            }
        }
    }
}

/// A (co)limit in the arrow category: the induced object, its legs, and the
/// two set-level solutions it was assembled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowConstruction {
    pub shape: ArrowShape,
    pub object: ArrowObject,
    /// Limit legs run `object → objects[j]`, colimit legs `objects[j] → object`.
    pub legs: Vec<Square>,
    pub top: Universal,
    pub bottom: Universal,
}

fn solve_component(shape: ArrowShape, d: &FinDiagram) -> Result<Universal> {
    let arrow = |k: usize| &d.arrows()[k].map;
    let obj = |k: usize| &d.objects()[k];
    Ok(match shape {
        ArrowShape::Pullback => Universal::Limit(limits::pullback(arrow(0), arrow(1))?),
        ArrowShape::Equalizer => Universal::Limit(limits::equalizer(arrow(0), arrow(1))?),
        ArrowShape::Product => Universal::Limit(limits::product(obj(0), obj(1))),
        ArrowShape::Pushout => Universal::Colimit(limits::pushout(arrow(0), arrow(1))?),
        ArrowShape::Coequalizer => Universal::Colimit(limits::coequalizer(arrow(0), arrow(1))?),
        ArrowShape::Coproduct => Universal::Colimit(limits::coproduct(obj(0), obj(1))),
    })
}

/// Solves the diagram componentwise and induces the connecting function.
pub fn arrow_limit(diagram: &ArrowDiagram) -> Result<ArrowConstruction> {
    let shape = diagram.shape;
    let (top_name, bottom_name) = match shape {
        ArrowShape::Pullback => ("P", "Q"),
        _ => ("L_in", "L_out"),
    };
    let top = solve_component(shape, &diagram.top_component())?.renamed(top_name);
    let bottom = solve_component(shape, &diagram.bottom_component())?.renamed(bottom_name);
    let objects = &diagram.objects;

    let induced: Vec<usize> = if shape.is_limit() {
        let (top_legs, bottom_legs) = (top.legs(), bottom.legs());
        (0..top.vertex().len())
            .map(|l| {
                let image: Vec<usize> = objects.iter().zip(top_legs).map(|(o, leg)| o.at(leg.at(l))).collect();
                (0..bottom.vertex().len())
                    .find(|&m| bottom_legs.iter().zip(&image).all(|(leg, &v)| leg.at(m) == v))
                    .ok_or_else(|| FinsetError::Malformed("induced function has no target".into()))
            })
            .collect::<Result<_>>()?
    } else {
        let (top_legs, bottom_legs) = (top.legs(), bottom.legs());
        (0..top.vertex().len())
            .map(|c| {
                top_legs
                    .iter()
                    .enumerate()
                    .find_map(|(j, leg)| {
                        (0..leg.dom().len())
                            .find(|&x| leg.at(x) == c)
                            .map(|x| bottom_legs[j].at(objects[j].at(x)))
                    })
                    .ok_or_else(|| FinsetError::Malformed("colimit class with no representative".into()))
            })
            .collect::<Result<_>>()?
    };
    let object = FinFn::raw(
        format!("{top_name}->{bottom_name}"),
        top.vertex().clone(),
        bottom.vertex().clone(),
        induced,
    );
    let legs = objects
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let (t, b) = (top.legs()[j].clone(), bottom.legs()[j].clone());
            if shape.is_limit() {
                Square::new(object.clone(), o.clone(), t, b)
            } else {
                Square::new(o.clone(), object.clone(), t, b)
            }
        })
        .collect::<Result<_>>()?;
    Ok(ArrowConstruction {
        shape,
        object,
        legs,
        top,
        bottom,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowVerdict {
    pub cones_checked: usize,
    pub violation: Option<String>,
}

impl ArrowVerdict {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Exhaustive universal-property check in the arrow category: every (co)cone
/// whose vertex `a: T_in → T_out` has components of at most `bound` elements
/// must factor through the construction by exactly one square.
pub fn verify_arrow_construction(diagram: &ArrowDiagram, c: &ArrowConstruction, bound: usize) -> ArrowVerdict {
    if let Some(v) = check_naturality(diagram, c) {
        return ArrowVerdict {
            cones_checked: 0,
            violation: Some(v),
        };
    }
    if diagram.shape.is_limit() {
        verify_arrow_limit(diagram, c, bound)
    } else {
        verify_arrow_colimit(diagram, c, bound)
    }
}

fn check_naturality(diagram: &ArrowDiagram, c: &ArrowConstruction) -> Option<String> {
    let (_, layout) = diagram.shape.layout();
    for (sq, &(s, t)) in diagram.arrows.iter().zip(layout) {
        let (lhs, rhs) = if diagram.shape.is_limit() {
            (c.legs[s].then(sq), Ok::<_, FinsetError>(c.legs[t].clone()))
        } else {
            (sq.then(&c.legs[t]), Ok(c.legs[s].clone()))
        };
        match (lhs, rhs) {
            (Ok(l), Ok(r)) if l.same_maps(&r) => {}
            _ => return Some(format!("legs {s} and {t} are not natural")),
        }
    }
    None
}

fn verify_arrow_limit(diagram: &ArrowDiagram, c: &ArrowConstruction, bound: usize) -> ArrowVerdict {
    let top_d = diagram.top_component();
    let bottom_d = diagram.bottom_component();
    let tuples_in = top_d.compatible_tuples();
    let tuples_out = bottom_d.compatible_tuples();
    let (legs_in, legs_out) = (c.top.legs(), c.bottom.legs());
    let matching = |tuple: &[usize], legs: &[FinFn], n: usize| -> Vec<usize> {
        (0..n)
            .filter(|&l| legs.iter().zip(tuple).all(|(leg, &v)| leg.at(l) == v))
            .collect()
    };
    let match_in: Vec<Vec<usize>> = tuples_in.iter().map(|t| matching(t, legs_in, c.object.dom().len())).collect();
    let match_out: Vec<Vec<usize>> = tuples_out.iter().map(|t| matching(t, legs_out, c.object.cod().len())).collect();
    // input tuples grouped by the output tuple they map to
    let mut by_image: Vec<Vec<usize>> = vec![Vec::new(); tuples_out.len()];
    for (k, t) in tuples_in.iter().enumerate() {
        let image: Vec<usize> = diagram.objects.iter().zip(t).map(|(o, &x)| o.at(x)).collect();
        let target = tuples_out.iter().position(|u| *u == image).expect("images of compatible tuples are compatible");
        by_image[target].push(k);
    }

    let mut cones_checked = 0;
    for n_out in 0..=bound {
        for n_in in 0..=bound {
            for vertex in all_maps(n_in, n_out) {
                for bottom in all_maps(n_out, tuples_out.len()) {
                    let per_in: Vec<&Vec<usize>> = vertex.iter().map(|&o| &by_image[bottom[o]]).collect();
                    let sizes: Vec<usize> = per_in.iter().map(|v| v.len()).collect();
                    for pick in odometer(&sizes) {
                        cones_checked += 1;
                        let top: Vec<usize> = pick.iter().zip(&per_in).map(|(&p, opts)| opts[p]).collect();
                        let count = count_limit_mediators(&vertex, &bottom, &top, &match_out, &match_in, &c.object);
                        if count != 1 {
                            return ArrowVerdict {
                                cones_checked,
                                violation: Some(format!(
                                    "cone with vertex of size ({n_in}, {n_out}) has {} mediating squares",
                                    if count > 1 { "several" } else { "no" }
                                )),
                            };
                        }
                    }
                }
            }
        }
    }
    ArrowVerdict {
        cones_checked,
        violation: None,
    }
}

/// Counts mediating squares `(u_in, u_out)`, stopping at 2.
fn count_limit_mediators(
    vertex: &[usize],
    bottom: &[usize],
    top: &[usize],
    match_out: &[Vec<usize>],
    match_in: &[Vec<usize>],
    object: &FinFn,
) -> usize {
    let out_opts: Vec<&Vec<usize>> = bottom.iter().map(|&t| &match_out[t]).collect();
    let sizes: Vec<usize> = out_opts.iter().map(|o| o.len()).collect();
    let mut total = 0;
    for pick in odometer(&sizes) {
        let u_out: Vec<usize> = pick.iter().zip(&out_opts).map(|(&p, o)| o[p]).collect();
        let mut ways = 1usize;
        for (i, &t) in top.iter().enumerate() {
            let n = match_in[t].iter().filter(|&&l| object.at(l) == u_out[vertex[i]]).count();
            ways = ways.saturating_mul(n);
        }
        total += ways;
        if total >= 2 {
            return 2;
        }
    }
    total
}

fn verify_arrow_colimit(diagram: &ArrowDiagram, c: &ArrowConstruction, bound: usize) -> ArrowVerdict {
    let top_d = diagram.top_component();
    let bottom_d = diagram.bottom_component();
    let (slots_in, offsets_in, eq_in) = slot_constraints(&top_d);
    let (slots_out, offsets_out, eq_out) = slot_constraints(&bottom_d);
    let pre_in = preimages(c.top.legs(), &offsets_in, c.object.dom().len());
    let pre_out = preimages(c.bottom.legs(), &offsets_out, c.object.cod().len());
    // for each input slot, the output slot its image lands in
    let offsets_ref = &offsets_out;
    let image_slot: Vec<usize> = diagram
        .objects
        .iter()
        .enumerate()
        .flat_map(|(j, o)| (0..o.dom().len()).map(move |x| offsets_ref[j] + o.at(x)))
        .collect();

    let mut cones_checked = 0;
    let mut violation = None;
    'outer: for n_out in 0..=bound {
        for n_in in 0..=bound {
            for vertex in all_maps(n_in, n_out) {
                let mut c_out = vec![0; slots_out];
                enumerate_constrained(&mut c_out, 0, n_out, &eq_out, &mut |c_out| {
                    let mut c_in = vec![0; slots_in];
                    let allowed = |slot: usize, v: usize| vertex[v] == c_out[image_slot[slot]];
                    enumerate_filtered(&mut c_in, 0, n_in, &eq_in, &allowed, &mut |c_in| {
                        cones_checked += 1;
                        let count = count_colimit_mediators(c_in, c_out, &pre_in, &pre_out, &vertex, n_in, n_out, &c.object);
                        if count != 1 {
                            violation = Some(format!(
                                "cocone with vertex of size ({n_in}, {n_out}) has {} mediating squares",
                                if count > 1 { "several" } else { "no" }
                            ));
                            return false;
                        }
                        true
                    })
                });
                if violation.is_some() {
                    break 'outer;
                }
            }
        }
    }
    ArrowVerdict {
        cones_checked,
        violation,
    }
}

fn slot_constraints(d: &FinDiagram) -> (usize, Vec<usize>, Vec<Vec<usize>>) {
    let mut offsets = Vec::with_capacity(d.objects().len());
    let mut total = 0;
    for o in d.objects() {
        offsets.push(total);
        total += o.len();
    }
    let mut earlier = vec![Vec::new(); total];
    for a in d.arrows() {
        for x in 0..a.map.dom().len() {
            let (s, t) = (offsets[a.src] + x, offsets[a.dst] + a.map.at(x));
            if s != t {
                earlier[s.max(t)].push(s.min(t));
            }
        }
    }
    (total, offsets, earlier)
}

fn preimages(legs: &[FinFn], offsets: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut pre = vec![Vec::new(); n];
    for (j, leg) in legs.iter().enumerate() {
        for x in 0..leg.dom().len() {
            pre[leg.at(x)].push(offsets[j] + x);
        }
    }
    pre
}

/// Values a mediating map may take at each vertex element: forced by the
/// legs where a preimage exists, free otherwise, empty when inconsistent.
fn forced_options(pre: &[Vec<usize>], assignment: &[usize], size: usize) -> Vec<Vec<usize>> {
    pre.iter()
        .map(|p| match p.first() {
            None => (0..size).collect(),
            Some(&s0) if p.iter().all(|&s| assignment[s] == assignment[s0]) => vec![assignment[s0]],
            Some(_) => Vec::new(),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn count_colimit_mediators(
    c_in: &[usize],
    c_out: &[usize],
    pre_in: &[Vec<usize>],
    pre_out: &[Vec<usize>],
    vertex: &[usize],
    n_in: usize,
    n_out: usize,
    object: &FinFn,
) -> usize {
    let out_opts = forced_options(pre_out, c_out, n_out);
    let in_opts = forced_options(pre_in, c_in, n_in);
    let sizes: Vec<usize> = out_opts.iter().map(Vec::len).collect();
    let mut total = 0usize;
    for pick in odometer(&sizes) {
        let u_out: Vec<usize> = pick.iter().zip(&out_opts).map(|(&p, o)| o[p]).collect();
        let mut ways = 1usize;
        for (n, opts) in in_opts.iter().enumerate() {
            let k = opts.iter().filter(|&&v| vertex[v] == u_out[object.at(n)]).count();
            ways = ways.saturating_mul(k);
        }
        total = total.saturating_add(ways);
        if total >= 2 {
            return 2;
        }
    }
    total
}

fn enumerate_filtered(
    assignment: &mut Vec<usize>,
    k: usize,
    size: usize,
    earlier_equal: &[Vec<usize>],
    allowed: &dyn Fn(usize, usize) -> bool,
    visit: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if k == assignment.len() {
        return visit(assignment);
    }
    for v in 0..size {
        if allowed(k, v) && earlier_equal[k].iter().all(|&e| assignment[e] == v) {
            assignment[k] = v;
            if !enumerate_filtered(assignment, k + 1, size, earlier_equal, allowed, visit) {
                return false;
            }
        }
    }
    true
}

/// Mixed-radix counter over `0..sizes[i]`; yields nothing if any size is 0.
fn odometer(sizes: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let mut next = if sizes.contains(&0) {
        None
    } else {
        Some(vec![0; sizes.len()])
    };
    std::iter::from_fn(move || {
        let current = next.take()?;
        let mut succ = current.clone();
        for k in (0..sizes.len()).rev() {
            succ[k] += 1;
            if succ[k] < sizes[k] {
                next = Some(succ);
                break;
            }
            succ[k] = 0;
        }
        Some(current)
    })
}

/// One face of the pullback cube and whether it commutes pointwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceCheck {
    pub face: &'static str,
    pub commutes: bool,
}

/// The six faces of the cube formed by a pullback in the arrow category:
/// the two input squares, the back and front set pullbacks, and the two
/// faces joining the induced `P → Q` to the outer objects.
pub fn cube_faces(diagram: &ArrowDiagram, c: &ArrowConstruction) -> Result<Vec<FaceCheck>> {
    if diagram.shape != ArrowShape::Pullback || c.shape != ArrowShape::Pullback {
        return Err(FinsetError::UnsupportedShape(format!(
            "cube faces need a pullback, got {}",
            diagram.shape
        )));
    }
    let [f, h, g] = [&diagram.objects[0], &diagram.objects[1], &diagram.objects[2]];
    let [left, right] = [&diagram.arrows[0], &diagram.arrows[1]];
    let (m_in, n_in) = (&c.top.legs()[0], &c.top.legs()[1]);
    let (m_out, n_out) = (&c.bottom.legs()[0], &c.bottom.legs()[1]);
    let pq = &c.object;
    let eq = |a: Vec<usize>, b: Vec<usize>| a == b;
    let compose = |first: &FinFn, second: &FinFn| -> Vec<usize> { first.map().iter().map(|&x| second.at(x)).collect() };
    Ok(vec![
        FaceCheck {
            face: "left (first input square)",
            commutes: eq(compose(f, left.bottom()), compose(left.top(), g)),
        },
        FaceCheck {
            face: "right (second input square)",
            commutes: eq(compose(h, right.bottom()), compose(right.top(), g)),
        },
        FaceCheck {
            face: "back (input pullback)",
            commutes: eq(compose(m_in, left.top()), compose(n_in, right.top())),
        },
        FaceCheck {
            face: "front (output pullback)",
            commutes: eq(compose(m_out, left.bottom()), compose(n_out, right.bottom())),
        },
        FaceCheck {
            face: "P->Q over first object",
            commutes: eq(compose(m_in, f), compose(pq, m_out)),
        },
        FaceCheck {
            face: "P->Q over second object",
            commutes: eq(compose(n_in, h), compose(pq, n_out)),
        },
    ])
}
