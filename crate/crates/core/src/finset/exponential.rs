//! Exponential objects `g^f` and the currying bijection.

use std::collections::HashMap;

use super::limits::product_set;
use super::{all_maps, ArrowObject, FinFn, FinSet, Result, Square};

/// `g^f: E → F` with `E` the commuting squares `f → g`, `F` all functions
/// `O → O'`, and `g^f(⟨h, k⟩) = k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exponential {
    pub f: ArrowObject,
    pub g: ArrowObject,
    pub object: ArrowObject,
    /// The squares listed in the order of `object.dom()`.
    pub squares: Vec<Square>,
    /// `ev: g^f × f → g` with `u(⟨⟨h,k⟩, x⟩) = h(x)` and `v(⟨k, y⟩) = k(y)`.
    pub eval: Square,
}

fn render(map: &FinFn) -> String {
    let images: Vec<&str> = map.map().iter().map(|&v| map.cod().element(v)).collect();
    format!("[{}]", images.join(","))
}

/// Index of a function `n → m` in the order produced by [`all_maps`].
fn map_index(map: &[usize], m: usize) -> usize {
    map.iter().fold(0, |acc, &v| acc * m + v)
}

/// The product object `a × b` in the arrow category.
pub fn product_arrow(a: &ArrowObject, b: &ArrowObject) -> ArrowObject {
    let dom = product_set(a.dom(), b.dom());
    let cod = product_set(a.cod(), b.cod());
    let nb = b.dom().len();
    let nbo = b.cod().len();
    let map = (0..dom.len()).map(|k| a.at(k / nb) * nbo + b.at(k % nb)).collect();
    FinFn::raw(format!("{}x{}", a.name(), b.name()), dom, cod, map)
}

pub fn exponential(f: &ArrowObject, g: &ArrowObject) -> Exponential {
    let squares = Square::hom(f, g);
    let e = FinSet::new(
        "E",
        squares.iter().map(|s| format!("<h={},k={}>", render(s.top()), render(s.bottom()))),
    )
    .expect("distinct squares render distinctly");
    let (no, m) = (f.cod().len(), g.cod().len());
    let f_set = FinSet::new(
        "F",
        all_maps(no, m).map(|k| {
            let names: Vec<&str> = k.iter().map(|&v| g.cod().element(v)).collect();
            format!("[{}]", names.join(","))
        }),
    )
    .expect("distinct maps render distinctly");
    let object = FinFn::raw(
        format!("{}^{}", g.name(), f.name()),
        e,
        f_set,
        squares.iter().map(|s| map_index(s.bottom().map(), m)).collect(),
    );

    let src = product_arrow(&object, f);
    let ni = f.dom().len();
    let u = (0..src.dom().len()).map(|k| squares[k / ni].top().at(k % ni)).collect();
    let maps: Vec<Vec<usize>> = all_maps(no, m).collect();
    let v = (0..src.cod().len()).map(|k| maps[k / no][k % no]).collect();
    let eval = Square::raw(
        src.clone(),
        g.clone(),
        FinFn::raw("u", src.dom().clone(), g.dom().clone(), u),
        FinFn::raw("v", src.cod().clone(), g.cod().clone(), v),
    );
    Exponential {
        f: f.clone(),
        g: g.clone(),
        object,
        squares,
        eval,
    }
}

impl Exponential {
    /// Transposes `s: a × f → g` to `a → g^f`.
    pub fn curry(&self, a: &ArrowObject, s: &Square) -> Result<Square> {
        let (ni, no) = (self.f.dom().len(), self.f.cod().len());
        let m = self.g.cod().len();
        let index: HashMap<(&[usize], &[usize]), usize> = self
            .squares
            .iter()
            .enumerate()
            .map(|(k, sq)| ((sq.top().map(), sq.bottom().map()), k))
            .collect();
        let top: Vec<usize> = (0..a.dom().len())
            .map(|x| {
                let h = &s.top().map()[x * ni..(x + 1) * ni];
                let y = a.at(x);
                let k = &s.bottom().map()[y * no..(y + 1) * no];
                index[&(h, k)]
            })
            .collect();
        let bottom: Vec<usize> = (0..a.cod().len())
            .map(|y| map_index(&s.bottom().map()[y * no..(y + 1) * no], m))
            .collect();
        Square::new(
            a.clone(),
            self.object.clone(),
            FinFn::raw("phi", a.dom().clone(), self.object.dom().clone(), top),
            FinFn::raw("chi", a.cod().clone(), self.object.cod().clone(), bottom),
        )
    }

    /// `ev ∘ (t × id_f)`: the inverse of [`Exponential::curry`].
    pub fn uncurry(&self, a: &ArrowObject, t: &Square) -> Result<Square> {
        let (ni, no) = (self.f.dom().len(), self.f.cod().len());
        let src = product_arrow(a, &self.f);
        let top = (0..src.dom().len())
            .map(|k| {
                let (x, i) = (k / ni, k % ni);
                self.squares[t.top().at(x)].top().at(i)
            })
            .collect();
        let maps: Vec<Vec<usize>> = all_maps(no, self.g.cod().len()).collect();
        let bottom = (0..src.cod().len())
            .map(|k| maps[t.bottom().at(k / no)][k % no])
            .collect();
        Square::new(
            src.clone(),
            self.g.clone(),
            FinFn::raw("H", src.dom().clone(), self.g.dom().clone(), top),
            FinFn::raw("K", src.cod().clone(), self.g.cod().clone(), bottom),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurryingCheck {
    /// `|Hom(a × f, g)|`
    pub left: usize,
    /// `|Hom(a, g^f)|`
    pub right: usize,
    /// Currying is a bijection with inverse given by evaluation.
    pub bijective: bool,
}

impl CurryingCheck {
    pub fn passed(&self) -> bool {
        self.left == self.right && self.bijective
    }
}

/// Enumerates both hom-sets and checks that currying maps one onto the other
/// with `uncurry ∘ curry = id` and `curry ∘ uncurry = id`.
pub fn check_currying(f: &ArrowObject, g: &ArrowObject, a: &ArrowObject) -> Result<CurryingCheck> {
    let exp = exponential(f, g);
    let left = Square::hom(&product_arrow(a, f), g);
    let right = Square::hom(a, &exp.object);
    let mut bijective = left.len() == right.len();
    let mut seen = std::collections::HashSet::new();
    for s in &left {
        let t = exp.curry(a, s)?;
        bijective &= exp.uncurry(a, &t)?.same_maps(s);
        bijective &= seen.insert((t.top().map().to_vec(), t.bottom().map().to_vec()));
    }
    for t in &right {
        bijective &= exp.curry(a, &exp.uncurry(a, t)?)?.same_maps(t);
    }
    Ok(CurryingCheck {
        left: left.len(),
        right: right.len(),
        bijective,
    })
}

/// Every arrow object with both components of at most `max` elements, one
/// per isomorphism class of the component sets.
pub fn small_arrow_objects(max: usize) -> Vec<ArrowObject> {
    let mut out = Vec::new();
    for ni in 0..=max {
        for no in 0..=max {
            let (i, o) = (FinSet::range("I", "i", ni), FinSet::range("O", "o", no));
            for map in all_maps(ni, no) {
                out.push(FinFn::raw("a", i.clone(), o.clone(), map));
            }
        }
    }
    out
}
