//! The arrow category of finite functions.
//!
//! Objects are total functions `f: I → O` between finite sets ([`FinFn`], also
//! exported as [`ArrowObject`]); morphisms are commuting squares ([`Square`]).
//! Limits and colimits are computed componentwise from the set-level
//! constructions in [`limits`], which come with an exhaustive
//! universal-property verifier. [`classifier`] and [`exponential`] provide
//! the remaining topos structure.

pub mod arrow;
pub mod classifier;
pub mod exponential;
pub mod limits;
pub mod random;

use std::fmt;

use thiserror::Error;

pub use arrow::{arrow_limit, cube_faces, verify_arrow_construction, ArrowConstruction, ArrowDiagram, ArrowShape, FaceCheck};
pub use classifier::{classify, verify_classification, ClassifierCheck, SubobjectClassifier};
pub use exponential::{check_currying, exponential, product_arrow, CurryingCheck, Exponential};
pub use limits::{
    coequalizer, coproduct, equalizer, initial, product, pullback, pushout, terminal, verify_colimit,
    verify_limit, Certificate, Cocone, Colimit, Cone, DiagramArrow, FinDiagram, Limit, Verdict, Violation,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FinsetError {
    #[error("set {set} lists element {element:?} twice")]
    DuplicateElement { set: String, element: String },
    #[error("set {set} has no element {element:?}")]
    UnknownElement { set: String, element: String },
    #[error("function {function} assigns no image to {element:?}")]
    NotTotal { function: String, element: String },
    #[error("function {function} assigns {element:?} twice")]
    AssignedTwice { function: String, element: String },
    #[error("{context}: expected {expected}, got {actual}")]
    TypeMismatch {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("square does not commute at {element:?}")]
    NotCommuting { element: String },
    #[error("{0} is not injective")]
    NotMonic(String),
    #[error("unsupported diagram shape: {0}")]
    UnsupportedShape(String),
    #[error("{0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, FinsetError>;

/// A named finite set of distinct text identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FinSet {
    name: String,
    elements: Vec<String>,
}

impl FinSet {
    pub fn new<S: Into<String>>(name: impl Into<String>, elements: impl IntoIterator<Item = S>) -> Result<Self> {
        let name = name.into();
        let elements: Vec<String> = elements.into_iter().map(Into::into).collect();
        for (i, e) in elements.iter().enumerate() {
            if elements[..i].contains(e) {
                return Err(FinsetError::DuplicateElement {
                    set: name,
                    element: e.clone(),
                });
            }
        }
        Ok(Self { name, elements })
    }

    /// `{prefix0, …, prefix(n-1)}`.
    pub fn range(name: impl Into<String>, prefix: &str, n: usize) -> Self {
        Self {
            name: name.into(),
            elements: (0..n).map(|i| format!("{prefix}{i}")).collect(),
        }
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            elements: Vec::new(),
        }
    }

    /// The one-point set `{*}`.
    pub fn point() -> Self {
        Self {
            name: "1".into(),
            elements: vec!["*".into()],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, i: usize) -> &str {
        &self.elements[i]
    }

    pub fn index_of(&self, element: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == element)
    }

    pub(crate) fn require(&self, element: &str) -> Result<usize> {
        self.index_of(element).ok_or_else(|| FinsetError::UnknownElement {
            set: self.name.clone(),
            element: element.to_string(),
        })
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            elements: self.elements.clone(),
        }
    }
}

impl fmt::Display for FinSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {{ {} }}", self.name, self.elements.join(", "))
    }
}

/// A total function between finite sets, stored as image indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FinFn {
    name: String,
    dom: FinSet,
    cod: FinSet,
    map: Vec<usize>,
}

/// An object of the arrow category.
pub type ArrowObject = FinFn;

impl FinFn {
    /// Builds a function from `(source, image)` pairs; every element of
    /// `dom` must appear exactly once.
    pub fn new(name: impl Into<String>, dom: FinSet, cod: FinSet, pairs: &[(&str, &str)]) -> Result<Self> {
        let name = name.into();
        let mut map = vec![None; dom.len()];
        for (x, y) in pairs {
            let i = dom.require(x)?;
            let j = cod.require(y)?;
            if map[i].replace(j).is_some() {
                return Err(FinsetError::AssignedTwice {
                    function: name,
                    element: x.to_string(),
                });
            }
        }
        let map = map
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                m.ok_or_else(|| FinsetError::NotTotal {
                    function: name.clone(),
                    element: dom.element(i).to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name, dom, cod, map })
    }

    pub fn from_indices(name: impl Into<String>, dom: FinSet, cod: FinSet, map: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if map.len() != dom.len() {
            return Err(FinsetError::Malformed(format!(
                "{name}: {} images for a domain of {} elements",
                map.len(),
                dom.len()
            )));
        }
        if let Some(&bad) = map.iter().find(|&&j| j >= cod.len()) {
            return Err(FinsetError::Malformed(format!(
                "{name}: image index {bad} outside {}",
                cod.name()
            )));
        }
        Ok(Self { name, dom, cod, map })
    }

    pub(crate) fn raw(name: impl Into<String>, dom: FinSet, cod: FinSet, map: Vec<usize>) -> Self {
        debug_assert_eq!(map.len(), dom.len());
        debug_assert!(map.iter().all(|&j| j < cod.len()));
        Self {
            name: name.into(),
            dom,
            cod,
            map,
        }
    }

    pub fn identity(set: &FinSet) -> Self {
        Self::raw(format!("id_{}", set.name()), set.clone(), set.clone(), (0..set.len()).collect())
    }

    /// The unique function out of the empty set.
    pub fn from_empty(cod: &FinSet) -> Self {
        Self::raw("!", FinSet::empty("0"), cod.clone(), Vec::new())
    }

    /// The unique function into the one-point set.
    pub fn to_point(dom: &FinSet) -> Self {
        Self::raw("!", dom.clone(), FinSet::point(), vec![0; dom.len()])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dom(&self) -> &FinSet {
        &self.dom
    }

    pub fn cod(&self) -> &FinSet {
        &self.cod
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    #[inline]
    pub fn at(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn apply(&self, element: &str) -> Option<&str> {
        self.dom.index_of(element).map(|i| self.cod.element(self.map[i]))
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &FinFn) -> Result<FinFn> {
        if self.cod != next.dom {
            return Err(FinsetError::TypeMismatch {
                context: format!("composing {} then {}", self.name, next.name),
                expected: self.cod.name().to_string(),
                actual: next.dom.name().to_string(),
            });
        }
        Ok(Self::raw(
            format!("{}.{}", next.name, self.name),
            self.dom.clone(),
            next.cod.clone(),
            self.map.iter().map(|&j| next.map[j]).collect(),
        ))
    }

    /// Same underlying assignment (name ignored).
    pub fn same_map(&self, other: &FinFn) -> bool {
        self.dom == other.dom && self.cod == other.cod && self.map == other.map
    }

    pub fn image(&self) -> Vec<bool> {
        let mut hit = vec![false; self.cod.len()];
        for &j in &self.map {
            hit[j] = true;
        }
        hit
    }

    pub fn is_injective(&self) -> bool {
        let mut hit = vec![false; self.cod.len()];
        self.map.iter().all(|&j| !std::mem::replace(&mut hit[j], true))
    }

    pub fn is_surjective(&self) -> bool {
        self.image().into_iter().all(|h| h)
    }

    /// Every function `dom → cod`, in odometer order.
    pub fn all(dom: &FinSet, cod: &FinSet) -> Vec<FinFn> {
        all_maps(dom.len(), cod.len())
            .map(|m| Self::raw("h", dom.clone(), cod.clone(), m))
            .collect()
    }
}

impl fmt::Display for FinFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pairs: Vec<String> = self
            .map
            .iter()
            .enumerate()
            .map(|(i, &j)| format!("{} -> {}", self.dom.element(i), self.cod.element(j)))
            .collect();
        write!(
            f,
            "{} : {} -> {} {{ {} }}",
            self.name,
            self.dom.name(),
            self.cod.name(),
            pairs.join(", ")
        )
    }
}

/// All maps `0..n → 0..m` as image vectors, last coordinate fastest.
pub fn all_maps(n: usize, m: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut next = if m == 0 && n > 0 { None } else { Some(vec![0; n]) };
    std::iter::from_fn(move || {
        let current = next.take()?;
        let mut succ = current.clone();
        let mut k = n;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            succ[k] += 1;
            if succ[k] < m {
                next = Some(succ);
                break;
            }
            succ[k] = 0;
        }
        Some(current)
    })
}

/// A morphism of the arrow category: `top: I → I'` and `bottom: O → O'`
/// with `dst ∘ top = bottom ∘ src`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Square {
    src: FinFn,
    dst: FinFn,
    top: FinFn,
    bottom: FinFn,
}

fn expect_set(context: impl Into<String>, expected: &FinSet, actual: &FinSet) -> Result<()> {
    if expected != actual {
        return Err(FinsetError::TypeMismatch {
            context: context.into(),
            expected: expected.name().to_string(),
            actual: actual.name().to_string(),
        });
    }
    Ok(())
}

impl Square {
    pub fn new(src: FinFn, dst: FinFn, top: FinFn, bottom: FinFn) -> Result<Self> {
        expect_set("top domain", src.dom(), top.dom())?;
        expect_set("top codomain", dst.dom(), top.cod())?;
        expect_set("bottom domain", src.cod(), bottom.dom())?;
        expect_set("bottom codomain", dst.cod(), bottom.cod())?;
        for i in 0..src.dom().len() {
            if dst.at(top.at(i)) != bottom.at(src.at(i)) {
                return Err(FinsetError::NotCommuting {
                    element: src.dom().element(i).to_string(),
                });
            }
        }
        Ok(Self { src, dst, top, bottom })
    }

    pub(crate) fn raw(src: FinFn, dst: FinFn, top: FinFn, bottom: FinFn) -> Self {
        debug_assert!(Self::new(src.clone(), dst.clone(), top.clone(), bottom.clone()).is_ok());
        Self { src, dst, top, bottom }
    }

    pub fn identity(f: &ArrowObject) -> Self {
        Self::raw(f.clone(), f.clone(), FinFn::identity(f.dom()), FinFn::identity(f.cod()))
    }

    pub fn src(&self) -> &ArrowObject {
        &self.src
    }

    pub fn dst(&self) -> &ArrowObject {
        &self.dst
    }

    pub fn top(&self) -> &FinFn {
        &self.top
    }

    pub fn bottom(&self) -> &FinFn {
        &self.bottom
    }

    /// `next ∘ self`, composed horizontally.
    pub fn then(&self, next: &Square) -> Result<Square> {
        if !self.dst.same_map(&next.src) {
            return Err(FinsetError::TypeMismatch {
                context: "composing squares".into(),
                expected: format!("{}", self.dst),
                actual: format!("{}", next.src),
            });
        }
        Ok(Self::raw(
            self.src.clone(),
            next.dst.clone(),
            self.top.then(&next.top)?,
            self.bottom.then(&next.bottom)?,
        ))
    }

    /// Componentwise equality of the two underlying functions.
    pub fn same_maps(&self, other: &Square) -> bool {
        self.top.same_map(&other.top) && self.bottom.same_map(&other.bottom)
    }

    pub fn is_monic(&self) -> bool {
        self.top.is_injective() && self.bottom.is_injective()
    }

    pub fn is_epic(&self) -> bool {
        self.top.is_surjective() && self.bottom.is_surjective()
    }

    /// Every commuting square `src → dst`.
    pub fn hom(src: &ArrowObject, dst: &ArrowObject) -> Vec<Square> {
        let mut out = Vec::new();
        let hit = src.image();
        let free: Vec<usize> = (0..hit.len()).filter(|&o| !hit[o]).collect();
        'tops: for top in all_maps(src.dom().len(), dst.dom().len()) {
            let mut forced = vec![usize::MAX; src.cod().len()];
            for (i, &t) in top.iter().enumerate() {
                let want = dst.at(t);
                let slot = &mut forced[src.at(i)];
                if *slot == usize::MAX {
                    *slot = want;
                } else if *slot != want {
                    continue 'tops;
                }
            }
            for choice in all_maps(free.len(), dst.cod().len()) {
                let mut bottom = forced.clone();
                for (k, &o) in free.iter().enumerate() {
                    bottom[o] = choice[k];
                }
                out.push(Self {
                    src: src.clone(),
                    dst: dst.clone(),
                    top: FinFn::raw("h", src.dom().clone(), dst.dom().clone(), top.clone()),
                    bottom: FinFn::raw("k", src.cod().clone(), dst.cod().clone(), bottom),
                });
            }
        }
        out
    }
}

/// Composes two squares; fails unless `a.dst == b.src`.
pub fn compose_squares(a: &Square, b: &Square) -> Result<Square> {
    a.then(b)
}

/// The terminal arrow object `id: {*} → {*}`.
pub fn terminal_object() -> ArrowObject {
    FinFn::identity(&FinSet::point()).with_name("1")
}

/// The initial arrow object `∅ → ∅`.
pub fn initial_object() -> ArrowObject {
    FinFn::raw("0", FinSet::empty("0"), FinSet::empty("0"), Vec::new())
}
