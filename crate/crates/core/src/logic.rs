//! Subobject lattices and Kripke-Joyal forcing over arrow objects.
//!
//! Formulas are a small fragment of the internal language: equality of
//! terms, membership in named subobjects, the propositional connectives and
//! quantifiers over declared objects (nesting depth at most 2). Terms are
//! variables and applications of named squares.
//!
//! Formula text is a parenthesized prefix syntax:
//!
//! ```text
//! formula := true | false
//!          | (eq TERM TERM) | (in TERM SUBOBJECT)
//!          | (and F F) | (or F F) | (implies F F) | (not F)
//!          | (forall VAR OBJECT F) | (exists VAR OBJECT F)
//! TERM    := VAR | (SQUARE TERM)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::finset::classifier::{classify, TRUE};
use crate::finset::exponential::product_arrow;
use crate::finset::{terminal_object, ArrowObject, FinFn, FinSet, FinsetError, Square};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogicError {
    #[error("subobject does not restrict: {0}")]
    NotClosed(String),
    #[error("subobjects of different objects")]
    DifferentParents,
    #[error("parse error at byte {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("quantifier depth {0} exceeds the supported fragment (2)")]
    TooDeep(usize),
    #[error("{0} is outside the quantifier-free fragment")]
    NotQuantifierFree(String),
    #[error(transparent)]
    Finset(#[from] FinsetError),
}

pub type Result<T> = std::result::Result<T, LogicError>;

/// A subobject of `parent: I → O`, given by `s_in ⊆ I` and `s_out ⊆ O` with
/// `parent(s_in) ⊆ s_out`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Subobject {
    parent: ArrowObject,
    s_in: Vec<bool>,
    s_out: Vec<bool>,
}

impl Subobject {
    pub fn new(parent: &ArrowObject, s_in: Vec<bool>, s_out: Vec<bool>) -> Result<Self> {
        if s_in.len() != parent.dom().len() || s_out.len() != parent.cod().len() {
            return Err(LogicError::NotClosed("membership vectors have the wrong length".into()));
        }
        for (x, &inside) in s_in.iter().enumerate() {
            if inside && !s_out[parent.at(x)] {
                return Err(LogicError::NotClosed(format!(
                    "{} is in but its image {} is not",
                    parent.dom().element(x),
                    parent.cod().element(parent.at(x))
                )));
            }
        }
        Ok(Self {
            parent: parent.clone(),
            s_in,
            s_out,
        })
    }

    /// Looks up members by name.
    pub fn from_names(parent: &ArrowObject, inputs: &[&str], outputs: &[&str]) -> Result<Self> {
        let mut s_in = vec![false; parent.dom().len()];
        let mut s_out = vec![false; parent.cod().len()];
        for (names, set, bits) in [(inputs, parent.dom(), &mut s_in), (outputs, parent.cod(), &mut s_out)] {
            for name in names {
                let i = set.index_of(name).ok_or_else(|| LogicError::Unknown {
                    kind: "element",
                    name: name.to_string(),
                })?;
                bits[i] = true;
            }
        }
        Self::new(parent, s_in, s_out)
    }

    pub fn top(parent: &ArrowObject) -> Self {
        Self {
            parent: parent.clone(),
            s_in: vec![true; parent.dom().len()],
            s_out: vec![true; parent.cod().len()],
        }
    }

    pub fn bottom(parent: &ArrowObject) -> Self {
        Self {
            parent: parent.clone(),
            s_in: vec![false; parent.dom().len()],
            s_out: vec![false; parent.cod().len()],
        }
    }

    /// The subobject given by the images of a monic square into `parent`.
    pub fn from_square(sq: &Square) -> Result<Self> {
        if !sq.is_monic() {
            return Err(FinsetError::NotMonic(sq.top().name().to_string()).into());
        }
        Self::new(sq.dst(), sq.top().image(), sq.bottom().image())
    }

    /// The inclusion square `S ↣ parent`.
    pub fn as_square(&self) -> Square {
        let g = &self.parent;
        let keep_in: Vec<usize> = (0..self.s_in.len()).filter(|&x| self.s_in[x]).collect();
        let keep_out: Vec<usize> = (0..self.s_out.len()).filter(|&y| self.s_out[y]).collect();
        let sub_in = FinSet::new("S_in", keep_in.iter().map(|&x| g.dom().element(x).to_string())).expect("subset");
        let sub_out = FinSet::new("S_out", keep_out.iter().map(|&y| g.cod().element(y).to_string())).expect("subset");
        let map = keep_in
            .iter()
            .map(|&x| keep_out.iter().position(|&y| y == g.at(x)).expect("closed"))
            .collect();
        let f = FinFn::from_indices("s", sub_in.clone(), sub_out.clone(), map).expect("in range");
        let i = FinFn::from_indices("i", sub_in, g.dom().clone(), keep_in).expect("in range");
        let j = FinFn::from_indices("j", sub_out, g.cod().clone(), keep_out).expect("in range");
        Square::new(f, g.clone(), i, j).expect("inclusions commute")
    }

    pub fn parent(&self) -> &ArrowObject {
        &self.parent
    }

    pub fn inputs(&self) -> &[bool] {
        &self.s_in
    }

    pub fn outputs(&self) -> &[bool] {
        &self.s_out
    }

    fn same_parent(&self, other: &Self) -> Result<()> {
        if self.parent.map() != other.parent.map()
            || self.parent.dom() != other.parent.dom()
            || self.parent.cod() != other.parent.cod()
        {
            return Err(LogicError::DifferentParents);
        }
        Ok(())
    }

    fn zip(&self, other: &Self, op: impl Fn(bool, bool) -> bool) -> Self {
        Self {
            parent: self.parent.clone(),
            s_in: self.s_in.iter().zip(&other.s_in).map(|(&a, &b)| op(a, b)).collect(),
            s_out: self.s_out.iter().zip(&other.s_out).map(|(&a, &b)| op(a, b)).collect(),
        }
    }

    pub fn leq(&self, other: &Self) -> Result<bool> {
        self.same_parent(other)?;
        Ok(self.s_in.iter().zip(&other.s_in).all(|(&a, &b)| !a || b)
            && self.s_out.iter().zip(&other.s_out).all(|(&a, &b)| !a || b))
    }

    pub fn meet(&self, other: &Self) -> Result<Self> {
        self.same_parent(other)?;
        Ok(self.zip(other, |a, b| a && b))
    }

    pub fn join(&self, other: &Self) -> Result<Self> {
        self.same_parent(other)?;
        Ok(self.zip(other, |a, b| a || b))
    }

    /// The subobjects generated by a single element: `({x}, {g(x)})` for
    /// each input and `(∅, {y})` for each output.
    pub fn join_irreducibles(parent: &ArrowObject) -> Vec<Self> {
        let mut out = Vec::with_capacity(parent.dom().len() + parent.cod().len());
        for x in 0..parent.dom().len() {
            let mut s = Self::bottom(parent);
            s.s_in[x] = true;
            s.s_out[parent.at(x)] = true;
            out.push(s);
        }
        for y in 0..parent.cod().len() {
            let mut s = Self::bottom(parent);
            s.s_out[y] = true;
            out.push(s);
        }
        out
    }

    /// The largest `z` with `z ∧ self ≤ other`: the join of every
    /// join-irreducible `j` with `j ∧ self ≤ other`.
    pub fn implies(&self, other: &Self) -> Result<Self> {
        self.same_parent(other)?;
        let mut z = Self::bottom(&self.parent);
        for j in Self::join_irreducibles(&self.parent) {
            if j.meet(self)?.leq(other)? {
                z = z.join(&j)?;
            }
        }
        Ok(z)
    }

    pub fn negate(&self) -> Result<Self> {
        self.implies(&Self::bottom(&self.parent))
    }

    /// Whether a square `α: U → parent` factors through this subobject.
    pub fn contains(&self, alpha: &Square) -> bool {
        alpha.top().map().iter().all(|&x| self.s_in[x]) && alpha.bottom().map().iter().all(|&y| self.s_out[y])
    }
}

impl fmt::Display for Subobject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |bits: &[bool], set: &FinSet| -> String {
            bits.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| set.element(i))
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(
            f,
            "({{{}}}, {{{}}})",
            names(&self.s_in, self.parent.dom()),
            names(&self.s_out, self.parent.cod())
        )
    }
}

/// All subobjects of a (small) arrow object.
#[derive(Debug, Clone)]
pub struct SubobjectLattice {
    pub parent: ArrowObject,
    pub elements: Vec<Subobject>,
}

impl SubobjectLattice {
    pub fn new(parent: &ArrowObject) -> Self {
        let (ni, no) = (parent.dom().len(), parent.cod().len());
        assert!(ni <= 16 && no <= 16, "lattice enumeration is for small objects");
        let mut elements = Vec::new();
        for out_mask in 0u32..(1 << no) {
            let s_out: Vec<bool> = (0..no).map(|y| out_mask >> y & 1 == 1).collect();
            for in_mask in 0u32..(1 << ni) {
                let s_in: Vec<bool> = (0..ni).map(|x| in_mask >> x & 1 == 1).collect();
                if let Ok(s) = Subobject::new(parent, s_in, s_out.clone()) {
                    elements.push(s);
                }
            }
        }
        Self {
            parent: parent.clone(),
            elements,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn top(&self) -> Subobject {
        Subobject::top(&self.parent)
    }

    pub fn bottom(&self) -> Subobject {
        Subobject::bottom(&self.parent)
    }

    /// The maximum `z` in the lattice with `z ∧ x ≤ y`, found by scanning.
    pub fn implies_by_scan(&self, x: &Subobject, y: &Subobject) -> Result<Subobject> {
        let mut candidates = Vec::new();
        for z in &self.elements {
            if z.meet(x)?.leq(y)? {
                candidates.push(z);
            }
        }
        for &c in &candidates {
            if candidates.iter().all(|d| d.leq(c).unwrap_or(false)) {
                return Ok(c.clone());
            }
        }
        Err(LogicError::Type("no largest element satisfies the adjunction".into()))
    }

    /// `z ≤ (x ⇒ y)` iff `z ∧ x ≤ y` for every triple.
    pub fn adjunction_holds(&self) -> Result<bool> {
        let imp: Vec<Vec<Subobject>> = self
            .elements
            .iter()
            .map(|x| self.elements.iter().map(|y| x.implies(y)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        for (xi, x) in self.elements.iter().enumerate() {
            for (yi, y) in self.elements.iter().enumerate() {
                for z in &self.elements {
                    if z.leq(&imp[xi][yi])? != z.meet(x)?.leq(y)? {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    pub fn distributive(&self) -> Result<bool> {
        for x in &self.elements {
            for y in &self.elements {
                for z in &self.elements {
                    if x.meet(&y.join(z)?)? != x.meet(y)?.join(&x.meet(z)?)? {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// An element with `x ∨ ¬x ≠ ⊤`, if there is one.
    pub fn excluded_middle_failure(&self) -> Result<Option<Subobject>> {
        let top = self.top();
        for x in &self.elements {
            if x.join(&x.negate()?)? != top {
                return Ok(Some(x.clone()));
            }
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    /// A named square applied to a term.
    App(String, Box<Term>),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Var(v) => f.write_str(v),
            Self::App(g, t) => write!(f, "({g} {t})"),
        }
    }
}

/// A predicate on the stage alone, ignoring the generalized element. Not a
/// formula of the internal language; used to exercise the checkers.
#[derive(Clone)]
pub struct StageTest {
    pub name: String,
    pub test: Arc<dyn Fn(&ArrowObject) -> bool + Send + Sync>,
}

impl fmt::Debug for StageTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StageTest({})", self.name)
    }
}

impl PartialEq for StageTest {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.test, &other.test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Eq(Term, Term),
    In(Term, String),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Not(Box<Formula>),
    Forall(String, String, Box<Formula>),
    Exists(String, String, Box<Formula>),
    Stage(StageTest),
}

impl Formula {
    pub fn and(a: Formula, b: Formula) -> Self {
        Self::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Self::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Self::Implies(Box::new(a), Box::new(b))
    }

    pub fn not(a: Formula) -> Self {
        Self::Not(Box::new(a))
    }

    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Self::True | Self::False | Self::Eq(..) | Self::In(..) | Self::Stage(_) => 1,
            Self::And(a, b) | Self::Or(a, b) | Self::Implies(a, b) => 1 + a.size() + b.size(),
            Self::Not(a) | Self::Forall(_, _, a) | Self::Exists(_, _, a) => 1 + a.size(),
        }
    }

    pub fn quantifier_depth(&self) -> usize {
        match self {
            Self::True | Self::False | Self::Eq(..) | Self::In(..) | Self::Stage(_) => 0,
            Self::And(a, b) | Self::Or(a, b) | Self::Implies(a, b) => a.quantifier_depth().max(b.quantifier_depth()),
            Self::Not(a) => a.quantifier_depth(),
            Self::Forall(_, _, a) | Self::Exists(_, _, a) => 1 + a.quantifier_depth(),
        }
    }

    pub fn parse(text: &str) -> Result<Formula> {
        let tokens = tokenize(text);
        let mut parser = Parser { tokens, at: 0 };
        let f = parser.formula()?;
        if let Some((pos, tok)) = parser.tokens.get(parser.at) {
            return Err(LogicError::Parse {
                pos: *pos,
                message: format!("unexpected trailing {tok:?}"),
            });
        }
        Ok(f)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::True => f.write_str("true"),
            Self::False => f.write_str("false"),
            Self::Eq(a, b) => write!(f, "(eq {a} {b})"),
            Self::In(t, s) => write!(f, "(in {t} {s})"),
            Self::And(a, b) => write!(f, "(and {a} {b})"),
            Self::Or(a, b) => write!(f, "(or {a} {b})"),
            Self::Implies(a, b) => write!(f, "(implies {a} {b})"),
            Self::Not(a) => write!(f, "(not {a})"),
            Self::Forall(v, t, a) => write!(f, "(forall {v} {t} {a})"),
            Self::Exists(v, t, a) => write!(f, "(exists {v} {t} {a})"),
            Self::Stage(s) => write!(f, "<{}>", s.name),
        }
    }
}

fn tokenize(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, text[s..i].to_string()));
            }
            if !c.is_whitespace() {
                out.push((i, c.to_string()));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, text[s..].to_string()));
    }
    out
}

struct Parser {
    tokens: Vec<(usize, String)>,
    at: usize,
}

impl Parser {
    fn end_pos(&self) -> usize {
        self.tokens.last().map_or(0, |(p, t)| p + t.len())
    }

    fn next(&mut self) -> Result<(usize, String)> {
        let tok = self.tokens.get(self.at).cloned().ok_or_else(|| LogicError::Parse {
            pos: self.end_pos(),
            message: "unexpected end of input".into(),
        })?;
        self.at += 1;
        Ok(tok)
    }

    fn symbol(&mut self, what: &str) -> Result<String> {
        let (pos, tok) = self.next()?;
        if tok == "(" || tok == ")" {
            return Err(LogicError::Parse {
                pos,
                message: format!("expected {what}, found {tok:?}"),
            });
        }
        Ok(tok)
    }

    fn close(&mut self) -> Result<()> {
        let (pos, tok) = self.next()?;
        if tok != ")" {
            return Err(LogicError::Parse {
                pos,
                message: format!("expected ')', found {tok:?}"),
            });
        }
        Ok(())
    }

    fn term(&mut self) -> Result<Term> {
        let (pos, tok) = self.next()?;
        match tok.as_str() {
            "(" => {
                let f = self.symbol("square name")?;
                let inner = self.term()?;
                self.close()?;
                Ok(Term::App(f, Box::new(inner)))
            }
            ")" => Err(LogicError::Parse {
                pos,
                message: "expected a term".into(),
            }),
            _ => Ok(Term::Var(tok)),
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        let (pos, tok) = self.next()?;
        match tok.as_str() {
            "true" => return Ok(Formula::True),
            "false" => return Ok(Formula::False),
            "(" => {}
            _ => {
                return Err(LogicError::Parse {
                    pos,
                    message: format!("expected a formula, found {tok:?}"),
                })
            }
        }
        let (pos, head) = self.next()?;
        let f = match head.as_str() {
            "eq" => Formula::Eq(self.term()?, self.term()?),
            "in" => Formula::In(self.term()?, self.symbol("subobject name")?),
            "and" => Formula::and(self.formula()?, self.formula()?),
            "or" => Formula::or(self.formula()?, self.formula()?),
            "implies" => Formula::implies(self.formula()?, self.formula()?),
            "not" => Formula::not(self.formula()?),
            "forall" | "exists" => {
                let v = self.symbol("variable")?;
                let ty = self.symbol("object name")?;
                let body = Box::new(self.formula()?);
                if head == "forall" {
                    Formula::Forall(v, ty, body)
                } else {
                    Formula::Exists(v, ty, body)
                }
            }
            other => {
                return Err(LogicError::Parse {
                    pos,
                    message: format!("unknown connective {other:?}"),
                })
            }
        };
        self.close()?;
        Ok(f)
    }
}

/// The named objects, squares and subobjects formulas may refer to.
#[derive(Debug, Clone, Default)]
pub struct Universe {
    objects: BTreeMap<String, ArrowObject>,
    maps: BTreeMap<String, (String, String, Square)>,
    subobjects: BTreeMap<String, (String, Subobject)>,
}

impl Universe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_object(&mut self, name: &str, obj: ArrowObject) {
        self.objects.insert(name.to_string(), obj);
    }

    pub fn add_map(&mut self, name: &str, src: &str, dst: &str, sq: Square) -> Result<()> {
        let (s, d) = (self.object(src)?, self.object(dst)?);
        if !sq.src().same_map(s) || !sq.dst().same_map(d) {
            return Err(LogicError::Type(format!("square {name} is not {src} -> {dst}")));
        }
        self.maps.insert(name.to_string(), (src.to_string(), dst.to_string(), sq));
        Ok(())
    }

    pub fn add_subobject(&mut self, name: &str, of: &str, sub: Subobject) -> Result<()> {
        if !self.object(of)?.same_map(sub.parent()) {
            return Err(LogicError::Type(format!("subobject {name} is not of {of}")));
        }
        self.subobjects.insert(name.to_string(), (of.to_string(), sub));
        Ok(())
    }

    pub fn object(&self, name: &str) -> Result<&ArrowObject> {
        self.objects.get(name).ok_or_else(|| LogicError::Unknown {
            kind: "object",
            name: name.to_string(),
        })
    }

    fn map(&self, name: &str) -> Result<&(String, String, Square)> {
        self.maps.get(name).ok_or_else(|| LogicError::Unknown {
            kind: "square",
            name: name.to_string(),
        })
    }

    fn subobject(&self, name: &str) -> Result<&(String, Subobject)> {
        self.subobjects.get(name).ok_or_else(|| LogicError::Unknown {
            kind: "subobject",
            name: name.to_string(),
        })
    }

    pub fn term_type(&self, t: &Term, context: &[(String, String)]) -> Result<String> {
        match t {
            Term::Var(v) => context
                .iter()
                .rev()
                .find(|(name, _)| name == v)
                .map(|(_, ty)| ty.clone())
                .ok_or_else(|| LogicError::Unknown {
                    kind: "variable",
                    name: v.clone(),
                }),
            Term::App(g, inner) => {
                let (src, dst, _) = self.map(g)?;
                let ty = self.term_type(inner, context)?;
                if &ty != src {
                    return Err(LogicError::Type(format!("{g} expects {src}, got {t} of type {ty}")));
                }
                Ok(dst.clone())
            }
        }
    }

    /// Checks that `phi` is well typed with free variables from `context`.
    pub fn check(&self, phi: &Formula, context: &[(String, String)]) -> Result<()> {
        match phi {
            Formula::True | Formula::False | Formula::Stage(_) => Ok(()),
            Formula::Eq(a, b) => {
                let (ta, tb) = (self.term_type(a, context)?, self.term_type(b, context)?);
                if ta != tb {
                    return Err(LogicError::Type(format!("{a} : {ta} compared with {b} : {tb}")));
                }
                Ok(())
            }
            Formula::In(t, s) => {
                let ty = self.term_type(t, context)?;
                let (of, _) = self.subobject(s)?;
                if &ty != of {
                    return Err(LogicError::Type(format!("{t} : {ty} tested against subobject {s} of {of}")));
                }
                Ok(())
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                self.check(a, context)?;
                self.check(b, context)
            }
            Formula::Not(a) => self.check(a, context),
            Formula::Forall(v, ty, body) | Formula::Exists(v, ty, body) => {
                self.object(ty)?;
                let mut inner = context.to_vec();
                inner.push((v.clone(), ty.clone()));
                self.check(body, &inner)
            }
        }
    }

    fn term_square(&self, t: &Term, env: &[(String, Square)]) -> Result<Square> {
        match t {
            Term::Var(v) => env
                .iter()
                .rev()
                .find(|(name, _)| name == v)
                .map(|(_, sq)| sq.clone())
                .ok_or_else(|| LogicError::Unknown {
                    kind: "variable",
                    name: v.clone(),
                }),
            Term::App(g, inner) => {
                let (_, _, sq) = self.map(g)?;
                Ok(self.term_square(inner, env)?.then(sq)?)
            }
        }
    }
}

/// Stages `V` up to isomorphism with both components of at most `bound`
/// elements: one arrow object per multiset of fiber sizes.
pub fn canonical_stages(bound: usize) -> Vec<ArrowObject> {
    fn fibers(total: usize, parts: usize, max: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            if total == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for size in (0..=max.min(total)).rev() {
            prefix.push(size);
            fibers(total - size, parts - 1, size, prefix, out);
            prefix.pop();
        }
    }
    let mut stages = Vec::new();
    for no in 0..=bound {
        for ni in 0..=bound {
            if no == 0 && ni > 0 {
                continue;
            }
            let mut shapes = Vec::new();
            fibers(ni, no, ni, &mut Vec::new(), &mut shapes);
            for shape in shapes {
                let map: Vec<usize> = shape.iter().enumerate().flat_map(|(y, &k)| std::iter::repeat(y).take(k)).collect();
                stages.push(FinFn::raw(
                    "V",
                    FinSet::range("V_in", "v", ni),
                    FinSet::range("V_out", "w", no),
                    map,
                ));
            }
        }
    }
    stages
}

type EnvKey = Vec<(Vec<usize>, Vec<usize>)>;

/// Kripke-Joyal forcing with quantification over stages up to a size bound.
pub struct Forcing<'u> {
    universe: &'u Universe,
    stages: Vec<ArrowObject>,
    hom_stage: HashMap<(usize, usize), Rc<Vec<Square>>>,
    hom_type: HashMap<(usize, String), Rc<Vec<Square>>>,
    memo: HashMap<(usize, usize, EnvKey), bool>,
    memo_root: Option<Formula>,
    canonical: usize,
}

fn is_epic(sq: &Square) -> bool {
    sq.is_epic()
}

fn is_initial(v: &ArrowObject) -> bool {
    v.dom().is_empty() && v.cod().is_empty()
}

impl<'u> Forcing<'u> {
    /// Quantifiers and the `⇒`, `¬`, `∨` clauses range over arrows from
    /// every stage with components of at most `bound` elements, plus the
    /// stage being evaluated.
    pub fn new(universe: &'u Universe, bound: usize) -> Self {
        let stages = canonical_stages(bound);
        let canonical = stages.len();
        Self {
            universe,
            stages,
            hom_stage: HashMap::new(),
            hom_type: HashMap::new(),
            memo: HashMap::new(),
            memo_root: None,
            canonical,
        }
    }

    pub fn universe(&self) -> &Universe {
        self.universe
    }

    pub fn stages(&self) -> &[ArrowObject] {
        &self.stages[..self.canonical]
    }

    fn stage_index(&mut self, u: &ArrowObject) -> usize {
        if let Some(i) = self.stages.iter().position(|s| s == u) {
            return i;
        }
        self.stages.push(u.clone());
        self.stages.len() - 1
    }

    fn hom_to_stage(&mut self, v: usize, u: usize) -> Rc<Vec<Square>> {
        let stages = &self.stages;
        self.hom_stage
            .entry((v, u))
            .or_insert_with(|| Rc::new(Square::hom(&stages[v], &stages[u])))
            .clone()
    }

    fn hom_to_type(&mut self, v: usize, ty: &str) -> Result<Rc<Vec<Square>>> {
        let target = self.universe.object(ty)?.clone();
        let stages = &self.stages;
        Ok(self
            .hom_type
            .entry((v, ty.to_string()))
            .or_insert_with(|| Rc::new(Square::hom(&stages[v], &target)))
            .clone())
    }

    /// Stages to range over from `u`: the canonical ones and `u` itself.
    fn sources(&self, u: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.canonical).collect();
        if u >= self.canonical {
            out.push(u);
        }
        out
    }

    /// `U ⊩ φ(α)`, where `env` binds each free variable to a square from `u`.
    pub fn forces(&mut self, u: &ArrowObject, env: &[(String, Square)], phi: &Formula) -> Result<bool> {
        let depth = phi.quantifier_depth();
        if depth > 2 {
            return Err(LogicError::TooDeep(depth));
        }
        for (name, sq) in env {
            if !sq.src().same_map(u) || sq.src().dom() != u.dom() || sq.src().cod() != u.cod() {
                return Err(LogicError::Type(format!("{name} is not a generalized element at this stage")));
            }
        }
        if self.memo_root.as_ref() != Some(phi) {
            self.memo.clear();
            self.memo_root = Some(phi.clone());
        }
        let stage = self.stage_index(u);
        self.force(phi, 0, stage, env)
    }

    fn pull(env: &[(String, Square)], p: &Square) -> Result<Vec<(String, Square)>> {
        env.iter()
            .map(|(n, a)| Ok((n.clone(), p.then(a)?)))
            .collect()
    }

    fn force(&mut self, phi: &Formula, id: usize, u: usize, env: &[(String, Square)]) -> Result<bool> {
        let key_env: EnvKey = env
            .iter()
            .map(|(_, s)| (s.top().map().to_vec(), s.bottom().map().to_vec()))
            .collect();
        let key = (id, u, key_env);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let value = self.force_uncached(phi, id, u, env)?;
        self.memo.insert(key, value);
        Ok(value)
    }

    fn force_uncached(&mut self, phi: &Formula, id: usize, u: usize, env: &[(String, Square)]) -> Result<bool> {
        let universe = self.universe;
        // preorder positions of the children
        let first = id + 1;
        let second = |a: &Formula| first + a.size();
        Ok(match phi {
            Formula::True => true,
            Formula::False => is_initial(&self.stages[u]),
            Formula::Eq(a, b) => universe.term_square(a, env)?.same_maps(&universe.term_square(b, env)?),
            Formula::In(t, s) => {
                let (_, sub) = universe.subobject(s)?;
                sub.contains(&universe.term_square(t, env)?)
            }
            Formula::Stage(test) => (test.test)(&self.stages[u]),
            Formula::And(a, b) => self.force(a, first, u, env)? && self.force(b, second(a), u, env)?,
            Formula::Or(a, b) => {
                // images of arrows p: V → U along which each disjunct is forced
                let mut left = Vec::new();
                let mut right = Vec::new();
                for v in self.sources(u) {
                    for p in self.hom_to_stage(v, u).iter() {
                        let pulled = Self::pull(env, p)?;
                        let image = (p.top().image(), p.bottom().image());
                        if self.force(a, first, v, &pulled)? && !left.contains(&image) {
                            left.push(image.clone());
                        }
                        if self.force(b, second(a), v, &pulled)? && !right.contains(&image) {
                            right.push(image);
                        }
                    }
                }
                left.iter().any(|(li, lo)| {
                    right.iter().any(|(ri, ro)| {
                        li.iter().zip(ri).all(|(x, y)| *x || *y) && lo.iter().zip(ro).all(|(x, y)| *x || *y)
                    })
                })
            }
            Formula::Implies(a, b) => {
                let mut holds = true;
                'outer: for v in self.sources(u) {
                    for p in self.hom_to_stage(v, u).iter() {
                        let pulled = Self::pull(env, p)?;
                        if self.force(a, first, v, &pulled)? && !self.force(b, second(a), v, &pulled)? {
                            holds = false;
                            break 'outer;
                        }
                    }
                }
                holds
            }
            Formula::Not(a) => {
                let mut holds = true;
                'outer: for v in self.sources(u) {
                    if is_initial(&self.stages[v]) {
                        continue;
                    }
                    for p in self.hom_to_stage(v, u).iter() {
                        if self.force(a, first, v, &Self::pull(env, p)?)? {
                            holds = false;
                            break 'outer;
                        }
                    }
                }
                holds
            }
            Formula::Forall(var, ty, body) => {
                let mut holds = true;
                'outer: for v in self.sources(u) {
                    let betas = self.hom_to_type(v, ty)?;
                    for p in self.hom_to_stage(v, u).iter() {
                        let mut pulled = Self::pull(env, p)?;
                        pulled.push((var.clone(), Square::identity(&self.stages[v])));
                        for beta in betas.iter() {
                            pulled.last_mut().expect("pushed").1 = beta.clone();
                            if !self.force(body, first, v, &pulled)? {
                                holds = false;
                                break 'outer;
                            }
                        }
                    }
                }
                holds
            }
            Formula::Exists(var, ty, body) => {
                let mut holds = false;
                'outer: for v in self.sources(u) {
                    let betas = self.hom_to_type(v, ty)?;
                    for p in self.hom_to_stage(v, u).iter().filter(|p| is_epic(p)) {
                        let mut pulled = Self::pull(env, p)?;
                        pulled.push((var.clone(), Square::identity(&self.stages[v])));
                        for beta in betas.iter() {
                            pulled.last_mut().expect("pushed").1 = beta.clone();
                            if self.force(body, first, v, &pulled)? {
                                holds = true;
                                break 'outer;
                            }
                        }
                    }
                }
                holds
            }
        })
    }
}

/// The product `X_1 × … × X_k` of the context types (terminal for `k = 0`).
fn context_product(universe: &Universe, context: &[(String, String)]) -> Result<(ArrowObject, Vec<ArrowObject>)> {
    let factors: Vec<ArrowObject> = context
        .iter()
        .map(|(_, ty)| universe.object(ty).cloned())
        .collect::<Result<_>>()?;
    let product = factors
        .iter()
        .fold(terminal_object(), |acc, x| product_arrow(&acc, x));
    Ok((product, factors))
}

/// Splits a product index into per-factor indices (left factor first).
fn digits(mut k: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (i, &s) in sizes.iter().enumerate().rev() {
        out[i] = k % s;
        k /= s;
    }
    out
}

/// The projection squares `X_1 × … × X_k → X_i`.
fn projections(product: &ArrowObject, factors: &[ArrowObject]) -> Vec<Square> {
    let in_sizes: Vec<usize> = factors.iter().map(|f| f.dom().len()).collect();
    let out_sizes: Vec<usize> = factors.iter().map(|f| f.cod().len()).collect();
    let top_digits: Vec<Vec<usize>> = (0..product.dom().len()).map(|k| digits(k, &in_sizes)).collect();
    let bottom_digits: Vec<Vec<usize>> = (0..product.cod().len()).map(|k| digits(k, &out_sizes)).collect();
    factors
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let top = FinFn::raw("pi", product.dom().clone(), x.dom().clone(), top_digits.iter().map(|d| d[i]).collect());
            let bottom = FinFn::raw("pi", product.cod().clone(), x.cod().clone(), bottom_digits.iter().map(|d| d[i]).collect());
            Square::new(product.clone(), x.clone(), top, bottom).expect("projections commute")
        })
        .collect()
}

/// The subobject `{x | φ(x)}` of the context product, computed with the
/// Heyting operations. Only quantifier-free formulas are supported.
pub fn interpret(universe: &Universe, phi: &Formula, context: &[(String, String)]) -> Result<Subobject> {
    let (product, factors) = context_product(universe, context)?;
    let env: Vec<(String, Square)> = context
        .iter()
        .map(|(n, _)| n.clone())
        .zip(projections(&product, &factors))
        .collect();
    interpret_in(universe, phi, &product, &env)
}

fn interpret_in(universe: &Universe, phi: &Formula, product: &ArrowObject, env: &[(String, Square)]) -> Result<Subobject> {
    Ok(match phi {
        Formula::True => Subobject::top(product),
        Formula::False => Subobject::bottom(product),
        Formula::Eq(a, b) => {
            let (sa, sb) = (universe.term_square(a, env)?, universe.term_square(b, env)?);
            let agree = |f: &FinFn, g: &FinFn| -> Vec<bool> { f.map().iter().zip(g.map()).map(|(x, y)| x == y).collect() };
            Subobject::new(product, agree(sa.top(), sb.top()), agree(sa.bottom(), sb.bottom()))?
        }
        Formula::In(t, s) => {
            let (_, sub) = universe.subobject(s)?;
            let st = universe.term_square(t, env)?;
            Subobject::new(
                product,
                st.top().map().iter().map(|&x| sub.inputs()[x]).collect(),
                st.bottom().map().iter().map(|&y| sub.outputs()[y]).collect(),
            )?
        }
        Formula::And(a, b) => interpret_in(universe, a, product, env)?.meet(&interpret_in(universe, b, product, env)?)?,
        Formula::Or(a, b) => interpret_in(universe, a, product, env)?.join(&interpret_in(universe, b, product, env)?)?,
        Formula::Implies(a, b) => {
            interpret_in(universe, a, product, env)?.implies(&interpret_in(universe, b, product, env)?)?
        }
        Formula::Not(a) => interpret_in(universe, a, product, env)?.negate()?,
        other => return Err(LogicError::NotQuantifierFree(other.to_string())),
    })
}

/// Evaluates `φ(α)` through the characteristic square of `{x | φ(x)}`:
/// true when `χ ∘ ⟨α⟩` is `true ∘ !`, i.e. every input lands on `1` and
/// every output on `1`.
pub fn characteristic_holds(
    universe: &Universe,
    phi: &Formula,
    context: &[(String, String)],
    u: &ArrowObject,
    env: &[Square],
) -> Result<bool> {
    let sub = interpret(universe, phi, context)?;
    let chi = classify(&sub.as_square())?;
    let (product, factors) = context_product(universe, context)?;
    let in_sizes: Vec<usize> = factors.iter().map(|f| f.dom().len()).collect();
    let out_sizes: Vec<usize> = factors.iter().map(|f| f.cod().len()).collect();
    let pack = |coords: Vec<usize>, sizes: &[usize]| coords.iter().zip(sizes).fold(0, |acc, (&c, &s)| acc * s + c);
    let top: Vec<usize> = (0..u.dom().len())
        .map(|x| pack(env.iter().map(|a| a.top().at(x)).collect(), &in_sizes))
        .collect();
    let bottom: Vec<usize> = (0..u.cod().len())
        .map(|y| pack(env.iter().map(|a| a.bottom().at(y)).collect(), &out_sizes))
        .collect();
    let alpha = Square::new(
        u.clone(),
        product.clone(),
        FinFn::raw("alpha", u.dom().clone(), product.dom().clone(), top),
        FinFn::raw("alpha", u.cod().clone(), product.cod().clone(), bottom),
    )?;
    let composite = alpha.then(&chi)?;
    Ok(composite.top().map().iter().all(|&v| v == TRUE) && composite.bottom().map().iter().all(|&v| v == 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NaturalityReport {
    pub monotone: bool,
    pub local: bool,
    pub arrows_checked: usize,
}

/// Monotonicity (`U ⊩ φ(α)` gives `V ⊩ φ(αf)` for every `f: V → U`) and
/// local character (the converse for epic `f`), over all canonical stages.
pub fn check_monotonicity_local_character(
    forcing: &mut Forcing<'_>,
    phi: &Formula,
    u: &ArrowObject,
    env: &[(String, Square)],
) -> Result<NaturalityReport> {
    let at_u = forcing.forces(u, env, phi)?;
    let mut report = NaturalityReport {
        monotone: true,
        local: true,
        arrows_checked: 0,
    };
    let sources: Vec<ArrowObject> = forcing.stages().to_vec();
    for v in &sources {
        for f in Square::hom(v, u) {
            report.arrows_checked += 1;
            let pulled = Forcing::pull(env, &f)?;
            let at_v = forcing.forces(v, &pulled, phi)?;
            if at_u && !at_v {
                report.monotone = false;
            }
            if f.is_epic() && at_v && !at_u {
                report.local = false;
            }
        }
    }
    Ok(report)
}
