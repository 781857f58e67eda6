//! A line-oriented text format for diagrams.
//!
//! ```text
//! shape pullback
//! set X = { x1, x2 }
//! set Z = { z1, z2 }
//! fn  f : X -> Z { x1 -> z1, x2 -> z2 }
//! arrowobj F = f
//! square S : F -> G { top = h, bottom = k }
//! subobject T of F { in = { x1 }, out = { z1 } }
//! var x : F
//! relation g . h = k . f
//! assign A := X
//! bind a1 := affine 2 3
//! ```
//!
//! `#` starts a comment. Paths in relations compose right to left, so
//! `g . h` applies `h` first. Shapes and their index labels:
//!
//! | shape            | objects         | arrows                        |
//! |------------------|-----------------|-------------------------------|
//! | `pullback`, `cube` | `A B C`       | `a: A → C`, `b: B → C`        |
//! | `pushout`        | `A B C`         | `a: A → B`, `b: A → C`        |
//! | `equalizer`, `coequalizer` | `A B` | `f: A → B`, `g: A → B`        |
//! | `product`, `coproduct` | `A B`     | none                          |
//! | `daisy_chain(k)` | `X0 … Xk`       | `ai: X(i-1) → Xi`             |

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::backprop::{
    block_as_paramfn, lift_with_rate, primitives, validate_gradients, BackpropError, ErrorFunction, ParamFn,
    GRADIENT_TOLERANCE,
};
use crate::finset::limits::{self, verify_colimit, verify_limit, Certificate, Verdict};
use crate::finset::{
    arrow_limit, cube_faces, verify_arrow_construction, ArrowConstruction, ArrowDiagram, ArrowObject, ArrowShape,
    FaceCheck, FinFn, FinSet, FinsetError, Square,
};
use crate::learn::{par_compose, seq_chain, LearnError, Learner};
use crate::logic::{LogicError, Subobject, Universe};
use crate::transformer::{BlockShape, TransformerBlock};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Semantic { line: usize, message: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{0} is not assigned or bound")]
    Unbound(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Finset(#[from] FinsetError),
    #[error(transparent)]
    Backprop(#[from] BackpropError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

pub type Result<T> = std::result::Result<T, DslError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    DaisyChain(usize),
    Pullback,
    Pushout,
    Equalizer,
    Coequalizer,
    Product,
    Coproduct,
    /// A pullback of arrow objects, solved with its six faces.
    Cube,
}

impl ShapeKind {
    /// The arrow-category shape this kind is solved as.
    pub fn arrow_shape(self) -> Option<ArrowShape> {
        Some(match self {
            Self::Pullback | Self::Cube => ArrowShape::Pullback,
            Self::Pushout => ArrowShape::Pushout,
            Self::Equalizer => ArrowShape::Equalizer,
            Self::Coequalizer => ArrowShape::Coequalizer,
            Self::Product => ArrowShape::Product,
            Self::Coproduct => ArrowShape::Coproduct,
            Self::DaisyChain(_) => return None,
        })
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DaisyChain(k) => write!(f, "daisy_chain({k})"),
            Self::Cube => f.write_str("cube"),
            other => f.write_str(other.arrow_shape().expect("not a chain").name()),
        }
    }
}

impl FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(k) = s.strip_prefix("daisy_chain(").and_then(|r| r.strip_suffix(')')) {
            return k
                .trim()
                .parse()
                .map(Self::DaisyChain)
                .map_err(|_| format!("bad chain length {k:?}"));
        }
        Ok(match s {
            "cube" => Self::Cube,
            "pullback" => Self::Pullback,
            "pushout" => Self::Pushout,
            "equalizer" => Self::Equalizer,
            "coequalizer" => Self::Coequalizer,
            "product" => Self::Product,
            "coproduct" => Self::Coproduct,
            other => return Err(format!("unknown shape {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeArrow {
    pub label: String,
    pub src: String,
    pub dst: String,
}

/// An indexing category: object labels and generating arrows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub objects: Vec<String>,
    pub arrows: Vec<ShapeArrow>,
}

impl Shape {
    pub fn new(kind: ShapeKind) -> Self {
        let arrow = |label: &str, src: &str, dst: &str| ShapeArrow {
            label: label.into(),
            src: src.into(),
            dst: dst.into(),
        };
        let names = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (objects, arrows) = match kind {
            ShapeKind::Pullback | ShapeKind::Cube => (names(&["A", "B", "C"]), vec![arrow("a", "A", "C"), arrow("b", "B", "C")]),
            ShapeKind::Pushout => (names(&["A", "B", "C"]), vec![arrow("a", "A", "B"), arrow("b", "A", "C")]),
            ShapeKind::Equalizer | ShapeKind::Coequalizer => (names(&["A", "B"]), vec![arrow("f", "A", "B"), arrow("g", "A", "B")]),
            ShapeKind::Product | ShapeKind::Coproduct => (names(&["A", "B"]), Vec::new()),
            ShapeKind::DaisyChain(k) => (
                (0..=k).map(|i| format!("X{i}")).collect(),
                (1..=k).map(|i| arrow(&format!("a{i}"), &format!("X{}", i - 1), &format!("X{i}"))).collect(),
            ),
        };
        Self { kind, objects, arrows }
    }

    pub fn arrow(&self, label: &str) -> Option<&ShapeArrow> {
        self.arrows.iter().find(|a| a.label == label)
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.objects.iter().any(|o| o == label) || self.arrow(label).is_some()
    }
}

/// A differentiable map bound to a shape label for compilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Affine { inputs: usize, outputs: usize },
    Linear { inputs: usize, outputs: usize },
    Relu(usize),
    Block(BlockShape),
}

impl Binding {
    pub fn param_fn(&self) -> Result<ParamFn> {
        Ok(match *self {
            Self::Affine { inputs, outputs } => primitives::affine(inputs, outputs),
            Self::Linear { inputs, outputs } => primitives::linear(inputs, outputs),
            Self::Relu(n) => primitives::relu(n),
            Self::Block(shape) => block_as_paramfn(&TransformerBlock::zeros(shape))?,
        })
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { inputs, outputs } => write!(f, "affine {inputs} {outputs}"),
            Self::Linear { inputs, outputs } => write!(f, "linear {inputs} {outputs}"),
            Self::Relu(n) => write!(f, "relu {n}"),
            Self::Block(s) => write!(f, "block {} {} {} {} {}", s.d, s.n, s.h, s.m, s.r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquareDecl {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub top: String,
    pub bottom: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubobjectDecl {
    pub name: String,
    pub of: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// `lhs = rhs`, each a path of function or square names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub lhs: Vec<String>,
    pub rhs: Vec<String>,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.lhs.join(" . "), self.rhs.join(" . "))
    }
}

/// A parsed and resolved diagram file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Diagram {
    pub shape: Option<Shape>,
    pub sets: Vec<FinSet>,
    pub fns: Vec<FinFn>,
    /// `(object name, function name)`.
    pub arrow_objects: Vec<(String, String)>,
    pub squares: Vec<SquareDecl>,
    pub subobjects: Vec<SubobjectDecl>,
    /// `(variable, object name)`.
    pub vars: Vec<(String, String)>,
    pub relations: Vec<Relation>,
    /// `(shape label, declared name)`.
    pub assignments: Vec<(String, String)>,
    pub bindings: Vec<(String, Binding)>,
}

/// What a name or shape label refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entity {
    Set(FinSet),
    Fn(FinFn),
    Object(ArrowObject),
    Square(Square),
}

impl Entity {
    fn kind(&self) -> &'static str {
        match self {
            Self::Set(_) => "set",
            Self::Fn(_) => "fn",
            Self::Object(_) => "arrowobj",
            Self::Square(_) => "square",
        }
    }
}

impl Diagram {
    pub fn set(&self, name: &str) -> Option<&FinSet> {
        self.sets.iter().find(|s| s.name() == name)
    }

    pub fn function(&self, name: &str) -> Option<&FinFn> {
        self.fns.iter().find(|f| f.name() == name)
    }

    pub fn arrow_object(&self, name: &str) -> Option<ArrowObject> {
        let (_, f) = self.arrow_objects.iter().find(|(n, _)| n == name)?;
        Some(self.function(f)?.clone().with_name(name))
    }

    pub fn square(&self, name: &str) -> Option<Square> {
        let decl = self.squares.iter().find(|s| s.name == name)?;
        build_square(self, decl).ok()
    }

    pub fn subobject(&self, name: &str) -> Option<Subobject> {
        let decl = self.subobjects.iter().find(|s| s.name == name)?;
        build_subobject(self, decl).ok()
    }

    pub fn entity(&self, name: &str) -> Option<Entity> {
        if let Some(s) = self.set(name) {
            return Some(Entity::Set(s.clone()));
        }
        if let Some(f) = self.function(name) {
            return Some(Entity::Fn(f.clone()));
        }
        if let Some(o) = self.arrow_object(name) {
            return Some(Entity::Object(o));
        }
        self.square(name).map(Entity::Square)
    }

    pub fn assignment(&self, label: &str) -> Option<&str> {
        self.assignments.iter().find(|(l, _)| l == label).map(|(_, e)| e.as_str())
    }

    /// The entity a shape label is assigned to.
    pub fn resolve(&self, label: &str) -> Option<Entity> {
        self.entity(self.assignment(label)?)
    }

    pub fn binding(&self, label: &str) -> Option<&Binding> {
        self.bindings.iter().find(|(l, _)| l == label).map(|(_, b)| b)
    }

    /// Arrow objects, squares and subobjects as a [`Universe`] for formulas.
    pub fn universe(&self) -> Result<Universe> {
        let mut u = Universe::new();
        for (name, _) in &self.arrow_objects {
            u.add_object(name, self.arrow_object(name).expect("declared"));
        }
        for decl in &self.squares {
            u.add_map(&decl.name, &decl.src, &decl.dst, build_square(self, decl)?)?;
        }
        for decl in &self.subobjects {
            u.add_subobject(&decl.name, &decl.of, build_subobject(self, decl)?)?;
        }
        Ok(u)
    }

    pub fn shape_kind(&self) -> Result<ShapeKind> {
        self.shape
            .as_ref()
            .map(|s| s.kind)
            .ok_or_else(|| DslError::Unsupported("the file declares no shape".into()))
    }

    /// Canonical text; `parse(serialize(d)) == d`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let list = |items: &[String]| {
            if items.is_empty() {
                "{ }".to_string()
            } else {
                format!("{{ {} }}", items.join(", "))
            }
        };
        if let Some(shape) = &self.shape {
            out.push_str(&format!("shape {}\n", shape.kind));
        }
        for s in &self.sets {
            out.push_str(&format!("set {} = {}\n", s.name(), list(s.elements())));
        }
        for f in &self.fns {
            let pairs: Vec<String> = (0..f.dom().len())
                .map(|x| format!("{} -> {}", f.dom().element(x), f.cod().element(f.at(x))))
                .collect();
            out.push_str(&format!(
                "fn {} : {} -> {} {}\n",
                f.name(),
                f.dom().name(),
                f.cod().name(),
                list(&pairs)
            ));
        }
        for (name, f) in &self.arrow_objects {
            out.push_str(&format!("arrowobj {name} = {f}\n"));
        }
        for s in &self.squares {
            out.push_str(&format!(
                "square {} : {} -> {} {{ top = {}, bottom = {} }}\n",
                s.name, s.src, s.dst, s.top, s.bottom
            ));
        }
        for s in &self.subobjects {
            out.push_str(&format!(
                "subobject {} of {} {{ in = {}, out = {} }}\n",
                s.name,
                s.of,
                list(&s.inputs),
                list(&s.outputs)
            ));
        }
        for (v, ty) in &self.vars {
            out.push_str(&format!("var {v} : {ty}\n"));
        }
        for r in &self.relations {
            out.push_str(&format!("relation {r}\n"));
        }
        for (label, name) in &self.assignments {
            out.push_str(&format!("assign {label} := {name}\n"));
        }
        for (label, b) in &self.bindings {
            out.push_str(&format!("bind {label} := {b}\n"));
        }
        out
    }
}

impl fmt::Display for Diagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn build_square(d: &Diagram, decl: &SquareDecl) -> Result<Square> {
    let get_obj = |n: &str| d.arrow_object(n).ok_or_else(|| DslError::Unbound(n.to_string()));
    let get_fn = |n: &str| d.function(n).cloned().ok_or_else(|| DslError::Unbound(n.to_string()));
    Ok(Square::new(
        get_obj(&decl.src)?,
        get_obj(&decl.dst)?,
        get_fn(&decl.top)?,
        get_fn(&decl.bottom)?,
    )?)
}

fn build_subobject(d: &Diagram, decl: &SubobjectDecl) -> Result<Subobject> {
    let parent = d.arrow_object(&decl.of).ok_or_else(|| DslError::Unbound(decl.of.clone()))?;
    let ins: Vec<&str> = decl.inputs.iter().map(String::as_str).collect();
    let outs: Vec<&str> = decl.outputs.iter().map(String::as_str).collect();
    Ok(Subobject::from_names(&parent, &ins, &outs)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Punct(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ident(s) => write!(f, "{s:?}"),
            Self::Punct(p) => write!(f, "'{p}'"),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || "_'*/+^!?@$%&|~()[]-".contains(c)
}

fn lex(text: &str, line: usize) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let column = text[..pos].chars().count() + 1;
        let next = chars.get(i + 1).map(|&(_, c)| c);
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let punct = match (c, next) {
            ('-', Some('>')) => Some("->"),
            (':', Some('=')) => Some(":="),
            ('{', _) => Some("{"),
            ('}', _) => Some("}"),
            (',', _) => Some(","),
            ('=', _) => Some("="),
            (':', _) => Some(":"),
            ('.', _) => Some("."),
            _ => None,
        };
        if let Some(p) = punct {
            out.push((Tok::Punct(p), column));
            i += p.len();
            continue;
        }
        if !is_ident_char(c) {
            return Err(DslError::Syntax {
                line,
                column,
                message: format!("unexpected character {c:?}"),
            });
        }
        let start = pos;
        let mut end = pos;
        while i < chars.len() {
            let (p, c) = chars[i];
            let next = chars.get(i + 1).map(|&(_, c)| c);
            if !is_ident_char(c) || (c == '-' && next == Some('>')) {
                break;
            }
            end = p + c.len_utf8();
            i += 1;
        }
        out.push((Tok::Ident(text[start..end].to_string()), column));
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<(Tok, usize)>,
    at: usize,
    line: usize,
    end_column: usize,
}

impl Cursor {
    fn error(&self, message: String) -> DslError {
        let column = self.toks.get(self.at).map_or(self.end_column, |(_, c)| *c);
        DslError::Syntax {
            line: self.line,
            column,
            message,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            Some(other) => Err(self.error(format!("expected {what}, found {other}"))),
            None => Err(self.error(format!("expected {what}, found end of line"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let before = self.at;
        let s = self.ident(what)?;
        s.parse().map_err(|_| {
            self.at = before;
            self.error(format!("expected {what} (a non-negative integer), found {s:?}"))
        })
    }

    fn punct(&mut self, p: &'static str) -> Result<()> {
        match self.peek() {
            Some(Tok::Punct(q)) if *q == p => {
                self.at += 1;
                Ok(())
            }
            Some(other) => Err(self.error(format!("expected '{p}', found {other}"))),
            None => Err(self.error(format!("expected '{p}', found end of line"))),
        }
    }

    fn keyword(&mut self, k: &str) -> Result<()> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == k => {
                self.at += 1;
                Ok(())
            }
            _ => Err(self.error(format!("expected '{k}'"))),
        }
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn finish(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.error(format!("unexpected trailing {t}"))),
        }
    }

    /// `{ item, item, … }` with items parsed by `item`.
    fn braced<T>(&mut self, mut item: impl FnMut(&mut Self) -> Result<T>) -> Result<Vec<T>> {
        self.punct("{")?;
        let mut out = Vec::new();
        if self.at_punct("}") {
            self.at += 1;
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.at_punct(",") {
                self.at += 1;
            } else {
                self.punct("}")?;
                return Ok(out);
            }
        }
    }

    fn path(&mut self) -> Result<Vec<String>> {
        let mut out = vec![self.ident("a name")?];
        while self.at_punct(".") {
            self.at += 1;
            out.push(self.ident("a name")?);
        }
        Ok(out)
    }
}

/// Parses and resolves a diagram, reporting the first error with its line.
pub fn parse(text: &str) -> Result<Diagram> {
    let mut d = Diagram::default();
    let mut declared: HashMap<String, usize> = HashMap::new();
    let mut assign_lines: Vec<usize> = Vec::new();
    let mut bind_lines: Vec<usize> = Vec::new();
    let mut shape_line = 0;

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks = lex(content, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor {
            toks,
            at: 0,
            line,
            end_column: content.trim_end().chars().count() + 1,
        };
        let semantic = |message: String| DslError::Semantic { line, message };
        let mut declare = |name: &str| -> Result<()> {
            if let Some(prev) = declared.insert(name.to_string(), line) {
                return Err(semantic(format!("{name:?} is already declared on line {prev}")));
            }
            Ok(())
        };
        let keyword = c.ident("a statement keyword")?;
        match keyword.as_str() {
            "shape" => {
                if d.shape.is_some() {
                    return Err(semantic(format!("shape already declared on line {shape_line}")));
                }
                let name = c.ident("a shape name")?;
                let kind = if name == "daisy_chain" {
                    ShapeKind::DaisyChain(c.number("the chain length")?)
                } else {
                    name.parse().map_err(semantic)?
                };
                if kind == ShapeKind::DaisyChain(0) {
                    return Err(semantic("a daisy chain needs at least one arrow".into()));
                }
                c.finish()?;
                d.shape = Some(Shape::new(kind));
                shape_line = line;
            }
            "set" => {
                let name = c.ident("a set name")?;
                c.punct("=")?;
                let elems = c.braced(|c| c.ident("an element"))?;
                c.finish()?;
                declare(&name)?;
                d.sets.push(FinSet::new(name, elems).map_err(|e| semantic(e.to_string()))?);
            }
            "fn" => {
                let name = c.ident("a function name")?;
                c.punct(":")?;
                let dom = c.ident("a domain set")?;
                c.punct("->")?;
                let cod = c.ident("a codomain set")?;
                let pairs = c.braced(|c| {
                    let x = c.ident("an element")?;
                    c.punct("->")?;
                    Ok((x, c.ident("an element")?))
                })?;
                c.finish()?;
                declare(&name)?;
                let find = |s: &str| d.set(s).cloned().ok_or_else(|| semantic(format!("fn {name}: unknown set {s:?}")));
                let (dom, cod) = (find(&dom)?, find(&cod)?);
                let mut map: Vec<Option<usize>> = vec![None; dom.len()];
                for (x, y) in &pairs {
                    let xi = dom
                        .index_of(x)
                        .ok_or_else(|| semantic(format!("fn {name}: {x:?} is not in {}", dom.name())))?;
                    let yi = cod
                        .index_of(y)
                        .ok_or_else(|| semantic(format!("fn {name}: {y:?} is not in {}", cod.name())))?;
                    if map[xi].is_some() {
                        return Err(semantic(format!("fn {name}: {x:?} is mapped twice")));
                    }
                    map[xi] = Some(yi);
                }
                let map = map
                    .iter()
                    .enumerate()
                    .map(|(x, y)| y.ok_or_else(|| semantic(format!("fn {name} is not total: {:?} has no image", dom.element(x)))))
                    .collect::<Result<Vec<_>>>()?;
                d.fns.push(FinFn::from_indices(name, dom, cod, map).map_err(|e| semantic(e.to_string()))?);
            }
            "arrowobj" => {
                let name = c.ident("an object name")?;
                c.punct("=")?;
                let f = c.ident("a function name")?;
                c.finish()?;
                declare(&name)?;
                if d.function(&f).is_none() {
                    return Err(semantic(format!("arrowobj {name}: unknown fn {f:?}")));
                }
                d.arrow_objects.push((name, f));
            }
            "square" => {
                let name = c.ident("a square name")?;
                c.punct(":")?;
                let src = c.ident("a source object")?;
                c.punct("->")?;
                let dst = c.ident("a target object")?;
                let fields = c.braced(|c| {
                    let key = c.ident("'top' or 'bottom'")?;
                    c.punct("=")?;
                    Ok((key, c.ident("a function name")?))
                })?;
                c.finish()?;
                declare(&name)?;
                let field = |k: &str| {
                    fields
                        .iter()
                        .find(|(key, _)| key == k)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| semantic(format!("square {name} needs a {k} component")))
                };
                if fields.len() != 2 {
                    return Err(semantic(format!("square {name} takes exactly top and bottom")));
                }
                let decl = SquareDecl {
                    name: name.clone(),
                    src,
                    dst,
                    top: field("top")?,
                    bottom: field("bottom")?,
                };
                for obj in [&decl.src, &decl.dst] {
                    if d.arrow_object(obj).is_none() {
                        return Err(semantic(format!("square {name}: unknown arrowobj {obj:?}")));
                    }
                }
                for f in [&decl.top, &decl.bottom] {
                    if d.function(f).is_none() {
                        return Err(semantic(format!("square {name}: unknown fn {f:?}")));
                    }
                }
                build_square(&d, &decl).map_err(|e| semantic(format!("square {name}: {e}")))?;
                d.squares.push(decl);
            }
            "subobject" => {
                let name = c.ident("a subobject name")?;
                c.keyword("of")?;
                let of = c.ident("an arrowobj")?;
                let mut fields = c.braced(|c| {
                    let key = c.ident("'in' or 'out'")?;
                    c.punct("=")?;
                    Ok((key, c.braced(|c| c.ident("an element"))?))
                })?;
                c.finish()?;
                declare(&name)?;
                let mut take = |k: &str| -> Result<Vec<String>> {
                    let i = fields
                        .iter()
                        .position(|(key, _)| key == k)
                        .ok_or_else(|| semantic(format!("subobject {name} needs an {k} component")))?;
                    Ok(fields.remove(i).1)
                };
                let decl = SubobjectDecl {
                    name: name.clone(),
                    of,
                    inputs: take("in")?,
                    outputs: take("out")?,
                };
                if !fields.is_empty() {
                    return Err(semantic(format!("subobject {name} takes exactly in and out")));
                }
                if d.arrow_object(&decl.of).is_none() {
                    return Err(semantic(format!("subobject {name}: unknown arrowobj {:?}", decl.of)));
                }
                build_subobject(&d, &decl).map_err(|e| semantic(format!("subobject {name}: {e}")))?;
                d.subobjects.push(decl);
            }
            "var" => {
                let name = c.ident("a variable")?;
                c.punct(":")?;
                let ty = c.ident("an arrowobj")?;
                c.finish()?;
                if d.arrow_object(&ty).is_none() {
                    return Err(semantic(format!("var {name}: unknown arrowobj {ty:?}")));
                }
                if d.vars.iter().any(|(v, _)| *v == name) {
                    return Err(semantic(format!("var {name} is already declared")));
                }
                d.vars.push((name, ty));
            }
            "relation" => {
                let lhs = c.path()?;
                c.punct("=")?;
                let rhs = c.path()?;
                c.finish()?;
                let rel = Relation { lhs, rhs };
                check_relation(&d, &rel).map_err(|m| semantic(format!("relation {rel}: {m}")))?;
                d.relations.push(rel);
            }
            "assign" => {
                let label = c.ident("a shape label")?;
                c.punct(":=")?;
                let name = c.ident("a declared name")?;
                c.finish()?;
                let shape = d.shape.as_ref().ok_or_else(|| semantic("assign before shape".into()))?;
                if !shape.has_label(&label) {
                    return Err(semantic(format!("{label:?} is not a label of shape {}", shape.kind)));
                }
                if d.assignment(&label).is_some() {
                    return Err(semantic(format!("{label:?} is assigned twice")));
                }
                if d.entity(&name).is_none() {
                    return Err(semantic(format!("assign {label}: unknown name {name:?}")));
                }
                d.assignments.push((label, name));
                assign_lines.push(line);
            }
            "bind" => {
                let label = c.ident("a shape label")?;
                c.punct(":=")?;
                let kind = c.ident("affine, linear, relu or block")?;
                let binding = match kind.as_str() {
                    "affine" => Binding::Affine {
                        inputs: c.number("the input dimension")?,
                        outputs: c.number("the output dimension")?,
                    },
                    "linear" => Binding::Linear {
                        inputs: c.number("the input dimension")?,
                        outputs: c.number("the output dimension")?,
                    },
                    "relu" => Binding::Relu(c.number("the dimension")?),
                    "block" => {
                        let mut dims = [0; 5];
                        for (slot, what) in dims.iter_mut().zip(["d", "n", "h", "m", "r"]) {
                            *slot = c.number(what)?;
                        }
                        let [bd, bn, bh, bm, br] = dims;
                        Binding::Block(BlockShape::new(bd, bn, bh, bm, br).map_err(|e| semantic(e.to_string()))?)
                    }
                    other => return Err(semantic(format!("unknown binding {other:?}"))),
                };
                c.finish()?;
                let shape = d.shape.as_ref().ok_or_else(|| semantic("bind before shape".into()))?;
                if !shape.has_label(&label) {
                    return Err(semantic(format!("{label:?} is not a label of shape {}", shape.kind)));
                }
                if d.binding(&label).is_some() {
                    return Err(semantic(format!("{label:?} is bound twice")));
                }
                d.bindings.push((label, binding));
                bind_lines.push(line);
            }
            other => {
                c.at = 0;
                return Err(c.error(format!("unknown statement {other:?}")));
            }
        }
    }
    check_assignments(&d, &assign_lines)?;
    Ok(d)
}

/// Arrow labels must be assigned maps between the entities assigned to
/// their endpoints.
fn check_assignments(d: &Diagram, lines: &[usize]) -> Result<()> {
    let Some(shape) = &d.shape else {
        return Ok(());
    };
    for ((label, name), &line) in d.assignments.iter().zip(lines) {
        let semantic = |message: String| DslError::Semantic { line, message };
        let entity = d.entity(name).expect("checked on assign");
        let Some(arrow) = shape.arrow(label) else {
            if !matches!(entity, Entity::Set(_) | Entity::Object(_)) {
                return Err(semantic(format!("object label {label} needs a set or arrowobj, got {} {name}", entity.kind())));
            }
            continue;
        };
        let ends = (d.resolve(&arrow.src), d.resolve(&arrow.dst));
        match (&entity, ends) {
            (Entity::Fn(f), (Some(Entity::Set(s)), Some(Entity::Set(t)))) => {
                if f.dom() != &s || f.cod() != &t {
                    return Err(semantic(format!(
                        "arrow {label} := {name} is {} -> {}, but {} -> {} needs {} -> {}",
                        f.dom().name(),
                        f.cod().name(),
                        arrow.src,
                        arrow.dst,
                        s.name(),
                        t.name()
                    )));
                }
            }
            (Entity::Square(sq), (Some(Entity::Object(s)), Some(Entity::Object(t)))) => {
                if sq.src() != &s.clone().with_name(sq.src().name()) || sq.dst() != &t.clone().with_name(sq.dst().name()) {
                    return Err(semantic(format!(
                        "arrow {label} := {name} does not run from {} to {}",
                        arrow.src, arrow.dst
                    )));
                }
            }
            (Entity::Fn(_) | Entity::Square(_), (None, _) | (_, None)) => {}
            (e, _) => {
                return Err(semantic(format!(
                    "arrow {label} := {name}: a {} does not fit the assigned endpoints",
                    e.kind()
                )))
            }
        }
    }
    Ok(())
}

enum PathMap {
    Fn(FinFn),
    Square(Square),
}

fn path_map(d: &Diagram, path: &[String]) -> std::result::Result<PathMap, String> {
    let mut acc: Option<PathMap> = None;
    for name in path.iter().rev() {
        let next = if let Some(f) = d.function(name) {
            PathMap::Fn(f.clone())
        } else if let Some(s) = d.square(name) {
            PathMap::Square(s)
        } else {
            return Err(format!("unknown fn or square {name:?}"));
        };
        acc = Some(match (acc, next) {
            (None, n) => n,
            (Some(PathMap::Fn(a)), PathMap::Fn(b)) => {
                PathMap::Fn(a.then(&b).map_err(|_| format!("{name} cannot follow {}", a.cod().name()))?)
            }
            (Some(PathMap::Square(a)), PathMap::Square(b)) => {
                PathMap::Square(a.then(&b).map_err(|_| format!("{name} does not compose"))?)
            }
            _ => return Err("a path mixes functions and squares".into()),
        });
    }
    acc.ok_or_else(|| "empty path".into())
}

fn check_relation(d: &Diagram, r: &Relation) -> std::result::Result<(), String> {
    match (path_map(d, &r.lhs)?, path_map(d, &r.rhs)?) {
        (PathMap::Fn(a), PathMap::Fn(b)) if a.dom() == b.dom() && a.cod() == b.cod() => Ok(()),
        (PathMap::Square(a), PathMap::Square(b))
            if a.src().dom() == b.src().dom()
                && a.src().cod() == b.src().cod()
                && a.dst().dom() == b.dst().dom()
                && a.dst().cod() == b.dst().cod() =>
        {
            Ok(())
        }
        _ => Err("the two sides have different endpoints".into()),
    }
}

fn first_divergence(a: &FinFn, b: &FinFn) -> Option<String> {
    (0..a.dom().len()).find(|&x| a.at(x) != b.at(x)).map(|x| {
        format!(
            "at {}: {} vs {}",
            a.dom().element(x),
            a.cod().element(a.at(x)),
            b.cod().element(b.at(x))
        )
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub holds: bool,
    /// Where the two sides first differ.
    pub divergence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub checks: Vec<Check>,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.holds)
    }
}

/// Evaluates every relation pointwise; for the cube shape also solves it
/// and checks the six faces.
pub fn validate(d: &Diagram) -> Validation {
    let mut checks = Vec::new();
    for r in &d.relations {
        let divergence = match (path_map(d, &r.lhs), path_map(d, &r.rhs)) {
            (Ok(PathMap::Fn(a)), Ok(PathMap::Fn(b))) => first_divergence(&a, &b),
            (Ok(PathMap::Square(a)), Ok(PathMap::Square(b))) => first_divergence(a.top(), b.top())
                .map(|m| format!("top {m}"))
                .or_else(|| first_divergence(a.bottom(), b.bottom()).map(|m| format!("bottom {m}"))),
            (Err(e), _) | (_, Err(e)) => Some(e),
            _ => Some("the two sides have different kinds".into()),
        };
        checks.push(Check {
            name: format!("relation {r}"),
            holds: divergence.is_none(),
            divergence,
        });
    }
    if d.shape.as_ref().map(|s| s.kind) == Some(ShapeKind::Cube) {
        match arrow_diagram(d).and_then(|ad| Ok((arrow_limit(&ad)?, ad))).and_then(|(c, ad)| Ok(cube_faces(&ad, &c)?)) {
            Ok(faces) => checks.extend(faces.into_iter().map(|f| Check {
                name: format!("face {}", f.face),
                holds: f.commutes,
                divergence: (!f.commutes).then(|| "face does not commute".to_string()),
            })),
            Err(e) => checks.push(Check {
                name: "cube".into(),
                holds: false,
                divergence: Some(e.to_string()),
            }),
        }
    }
    Validation { checks }
}

/// Bounds for the exhaustive universal-property checks run by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    /// Largest test apex for set-level (co)limits.
    pub set_bound: usize,
    /// Largest component of a test vertex for arrow-level (co)limits.
    pub arrow_bound: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            set_bound: 4,
            arrow_bound: 2,
        }
    }
}

/// A verified construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Solution {
    Sets {
        kind: ShapeKind,
        vertex: FinSet,
        legs: Vec<FinFn>,
        certificate: Certificate,
    },
    Arrows {
        kind: ShapeKind,
        construction: ArrowConstruction,
        cones_checked: usize,
        faces: Vec<FaceCheck>,
    },
}

fn render_fn(f: &FinFn) -> String {
    let pairs: Vec<String> = (0..f.dom().len())
        .map(|x| format!("{} -> {}", f.dom().element(x), f.cod().element(f.at(x))))
        .collect();
    format!("{} : {} -> {} {{ {} }}", f.name(), f.dom().name(), f.cod().name(), pairs.join(", "))
}

impl fmt::Display for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sets {
                kind,
                vertex,
                legs,
                certificate,
            } => {
                writeln!(f, "{kind} of sets")?;
                writeln!(f, "vertex {} = {{ {} }}", vertex.name(), vertex.elements().join(", "))?;
                for leg in legs {
                    writeln!(f, "leg {}", render_fn(leg))?;
                }
                writeln!(
                    f,
                    "certificate: {} test cones, each with exactly one mediating map",
                    certificate.cones_checked
                )
            }
            Self::Arrows {
                kind,
                construction,
                cones_checked,
                faces,
            } => {
                writeln!(f, "{kind} of arrow objects")?;
                let c = construction;
                writeln!(f, "top vertex {} = {{ {} }}", c.top.vertex().name(), c.top.vertex().elements().join(", "))?;
                writeln!(
                    f,
                    "bottom vertex {} = {{ {} }}",
                    c.bottom.vertex().name(),
                    c.bottom.vertex().elements().join(", ")
                )?;
                writeln!(f, "induced {}", render_fn(&c.object))?;
                for face in faces {
                    writeln!(f, "face {}: {}", face.face, if face.commutes { "commutes" } else { "FAILS" })?;
                }
                writeln!(f, "certificate: {cones_checked} test cones, each with exactly one mediating square")
            }
        }
    }
}

fn arrow_diagram(d: &Diagram) -> Result<ArrowDiagram> {
    let shape = d.shape.as_ref().ok_or_else(|| DslError::Unsupported("no shape".into()))?;
    let arrow_shape = shape
        .kind
        .arrow_shape()
        .ok_or_else(|| DslError::Unsupported(format!("{} has no (co)limit", shape.kind)))?;
    let mut objects = Vec::new();
    for label in &shape.objects {
        match d.resolve(label) {
            Some(Entity::Object(o)) => objects.push(o),
            Some(e) => return Err(DslError::Unsupported(format!("{label} is a {}, expected an arrowobj", e.kind()))),
            None => return Err(DslError::Unbound(label.clone())),
        }
    }
    let mut arrows = Vec::new();
    for a in &shape.arrows {
        match d.resolve(&a.label) {
            Some(Entity::Square(s)) => arrows.push(s),
            Some(e) => return Err(DslError::Unsupported(format!("{} is a {}, expected a square", a.label, e.kind()))),
            None => return Err(DslError::Unbound(a.label.clone())),
        }
    }
    Ok(ArrowDiagram::new(arrow_shape, objects, arrows)?)
}

fn verdict_result(v: Verdict) -> Result<Certificate> {
    match v {
        Verdict::Pass(c) => Ok(c),
        Verdict::Fail(violation) => Err(DslError::Verification(format!("{violation:?}"))),
    }
}

/// Computes the (co)limit of the diagram and checks its universal property
/// exhaustively. Sets and functions give a set-level solution, arrow objects
/// and squares an arrow-level one.
pub fn solve(d: &Diagram, opts: SolveOptions) -> Result<Solution> {
    let kind = d.shape_kind()?;
    let shape = d.shape.as_ref().expect("kind implies shape");
    let Some(arrow_shape) = kind.arrow_shape() else {
        return Err(DslError::Unsupported(format!("{kind} is compiled, not solved")));
    };
    let first = shape.objects.first().expect("shapes have objects");
    match d.resolve(first) {
        Some(Entity::Set(_)) if kind != ShapeKind::Cube => {}
        Some(Entity::Object(_)) => {
            let ad = arrow_diagram(d)?;
            let construction = arrow_limit(&ad)?;
            let verdict = verify_arrow_construction(&ad, &construction, opts.arrow_bound);
            if let Some(v) = verdict.violation {
                return Err(DslError::Verification(v));
            }
            let faces = if arrow_shape == ArrowShape::Pullback {
                cube_faces(&ad, &construction)?
            } else {
                Vec::new()
            };
            if let Some(bad) = faces.iter().find(|f| !f.commutes) {
                return Err(DslError::Verification(format!("face {} does not commute", bad.face)));
            }
            return Ok(Solution::Arrows {
                kind,
                construction,
                cones_checked: verdict.cones_checked,
                faces,
            });
        }
        Some(e) => return Err(DslError::Unsupported(format!("{kind} over a {}", e.kind()))),
        None => return Err(DslError::Unbound(first.clone())),
    }
    let set = |label: &str| match d.resolve(label) {
        Some(Entity::Set(s)) => Ok(s),
        Some(e) => Err(DslError::Unsupported(format!("{label} is a {}, expected a set", e.kind()))),
        None => Err(DslError::Unbound(label.to_string())),
    };
    let func = |label: &str| match d.resolve(label) {
        Some(Entity::Fn(f)) => Ok(f),
        Some(e) => Err(DslError::Unsupported(format!("{label} is a {}, expected a fn", e.kind()))),
        None => Err(DslError::Unbound(label.to_string())),
    };
    for label in &shape.objects {
        set(label)?;
    }
    let arrow = |k: usize| func(&shape.arrows[k].label);
    let (vertex, legs, verdict) = match arrow_shape {
        ArrowShape::Pullback | ArrowShape::Equalizer | ArrowShape::Product => {
            let l = match arrow_shape {
                ArrowShape::Pullback => limits::pullback(&arrow(0)?, &arrow(1)?)?,
                ArrowShape::Equalizer => limits::equalizer(&arrow(0)?, &arrow(1)?)?,
                _ => limits::product(&set("A")?, &set("B")?),
            };
            let verdict = verify_limit(&l.diagram, &l.cone, opts.set_bound);
            (l.cone.apex, l.cone.legs, verdict)
        }
        _ => {
            let c = match arrow_shape {
                ArrowShape::Pushout => limits::pushout(&arrow(0)?, &arrow(1)?)?,
                ArrowShape::Coequalizer => limits::coequalizer(&arrow(0)?, &arrow(1)?)?,
                _ => limits::coproduct(&set("A")?, &set("B")?),
            };
            let verdict = verify_colimit(&c.diagram, &c.cocone, opts.set_bound);
            (c.cocone.nadir, c.cocone.legs, verdict)
        }
    };
    Ok(Solution::Sets {
        kind,
        vertex,
        legs,
        certificate: verdict_result(verdict)?,
    })
}

/// Learning rate, error and penalty settings for [`compile_to_learner`].
#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub eps: f64,
    pub error: ErrorFunction,
    /// Weight `λ` of the consistency penalty `λ‖f(x) − g(x)‖²` for
    /// equalizer shapes.
    pub penalty: f64,
    /// Weight of the task error for equalizer shapes.
    pub task_weight: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            eps: 0.01,
            error: ErrorFunction::quadratic(),
            penalty: 1.0,
            task_weight: 1.0,
        }
    }
}

pub type LossFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A learner compiled from a diagram, with the maps it was built from.
#[derive(Clone)]
pub struct CompiledLearner {
    pub kind: ShapeKind,
    pub learner: Learner,
    /// The bound maps in shape order.
    pub parts: Vec<ParamFn>,
    /// The composite map whose lift the learner should equal, when the
    /// compilation is a lift.
    pub composite: Option<ParamFn>,
    /// The objective the learner's updates descend.
    pub loss: LossFn,
}

impl fmt::Debug for CompiledLearner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledLearner")
            .field("kind", &self.kind)
            .field("learner", &self.learner)
            .field("parts", &self.parts)
            .finish_non_exhaustive()
    }
}

impl CompiledLearner {
    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn initial_params(&self, rng: &mut impl Rng, scale: f64) -> Vec<f64> {
        (0..self.learner.param_dim()).map(|_| rng.gen_range(-scale..=scale)).collect()
    }
}

fn checked_lift(pf: &ParamFn, opts: &CompileOptions) -> Result<Learner> {
    if !(opts.eps >= 0.0 && opts.eps.is_finite()) {
        return Err(BackpropError::BadRate(opts.eps).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let report = validate_gradients(pf, 3, &mut rng)?;
    if report.worst > GRADIENT_TOLERANCE {
        return Err(BackpropError::Gradient {
            name: pf.name().to_string(),
            worst: report.worst,
            tolerance: GRADIENT_TOLERANCE,
        }
        .into());
    }
    Ok(lift_with_rate(pf, opts.eps, &opts.error).learner)
}

/// Compiles using the `bind` statements of the file.
pub fn compile_to_learner(d: &Diagram, opts: &CompileOptions) -> Result<CompiledLearner> {
    let mut bindings = BTreeMap::new();
    for (label, b) in &d.bindings {
        bindings.insert(label.clone(), b.param_fn()?.with_name(label.clone()));
    }
    compile_with(d, &bindings, opts)
}

/// Daisy chains compile to sequential composites of lifts, products to
/// parallel composites, and equalizers to a pair `x ↦ (f(x), g(x))` trained
/// on the task error plus `λ‖f(x) − g(x)‖²`.
pub fn compile_with(d: &Diagram, bindings: &BTreeMap<String, ParamFn>, opts: &CompileOptions) -> Result<CompiledLearner> {
    let kind = d.shape_kind()?;
    let shape = d.shape.as_ref().expect("kind implies shape");
    let bound = |label: &str| bindings.get(label).cloned().ok_or_else(|| DslError::Unbound(label.to_string()));
    let err = opts.error.clone();
    let task_loss: LossFn = Arc::new(move |x: &[f64], y: &[f64]| err.total(x, y));
    match kind {
        ShapeKind::DaisyChain(_) => {
            let parts = shape.arrows.iter().map(|a| bound(&a.label)).collect::<Result<Vec<_>>>()?;
            let mut composite = parts[0].clone();
            for next in &parts[1..] {
                composite = composite.then(next)?;
            }
            let lifts = parts.iter().map(|p| checked_lift(p, opts)).collect::<Result<Vec<_>>>()?;
            Ok(CompiledLearner {
                kind,
                learner: seq_chain(&lifts)?,
                parts,
                composite: Some(composite),
                loss: task_loss,
            })
        }
        ShapeKind::Product => {
            let parts = vec![bound("A")?, bound("B")?];
            let learner = par_compose(&checked_lift(&parts[0], opts)?, &checked_lift(&parts[1], opts)?);
            Ok(CompiledLearner {
                kind,
                learner,
                composite: Some(parts[0].beside(&parts[1])),
                parts,
                loss: task_loss,
            })
        }
        ShapeKind::Equalizer => {
            let (f, g) = (bound("f")?, bound("g")?);
            if f.in_dim() != g.in_dim() || f.out_dim() != g.out_dim() {
                return Err(DslError::Unsupported(format!(
                    "equalizer maps differ in shape: {}->{} and {}->{}",
                    f.in_dim(),
                    f.out_dim(),
                    g.in_dim(),
                    g.out_dim()
                )));
            }
            checked_lift(&f, opts)?;
            checked_lift(&g, opts)?;
            let pair = primitives::copy(f.in_dim(), 2).then(&f.beside(&g))?;
            Ok(CompiledLearner {
                kind,
                learner: consistency_learner(&pair, f.out_dim(), opts),
                loss: consistency_loss(f.out_dim(), opts),
                parts: vec![f, g],
                composite: Some(pair),
            })
        }
        other => Err(DslError::Unsupported(format!("{other} diagrams are solved, not compiled"))),
    }
}

fn consistency_loss(k: usize, opts: &CompileOptions) -> LossFn {
    let (err, lambda, w) = (opts.error.clone(), opts.penalty, opts.task_weight);
    Arc::new(move |v: &[f64], b: &[f64]| {
        let gap: f64 = (0..k).map(|j| (v[j] - v[k + j]).powi(2)).sum();
        w * err.total(v, b) + lambda * gap
    })
}

fn consistency_learner(pair: &ParamFn, k: usize, opts: &CompileOptions) -> Learner {
    let (err, lambda, w, eps) = (opts.error.clone(), opts.penalty, opts.task_weight, opts.eps);
    let delta = move |v: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().zip(b).map(|(&x, &y)| w * err.de_dx(x, y)).collect();
        for j in 0..k {
            let gap = 2.0 * lambda * (v[j] - v[k + j]);
            out[j] += gap;
            out[k + j] -= gap;
        }
        out
    };
    let f = pair.clone();
    let implement = move |p: &[f64], a: &[f64]| f.implement(p, a);
    let (f, d) = (pair.clone(), delta.clone());
    let update = move |p: &[f64], a: &[f64], b: &[f64]| {
        let lin = f.linearize(p, a);
        let grad = lin.jac_p.transpose_apply(&d(&lin.value, b));
        p.iter().zip(grad).map(|(pi, g)| pi - eps * g).collect()
    };
    let (f, d, e) = (pair.clone(), delta, opts.error.clone());
    let request = move |p: &[f64], a: &[f64], b: &[f64]| {
        let lin = f.linearize(p, a);
        let grad = lin.jac_a.transpose_apply(&d(&lin.value, b));
        a.iter().zip(grad).map(|(&ai, g)| e.inverse_de_dx(ai, g)).collect()
    };
    Learner::new(
        format!("eq({})", pair.name()),
        (pair.param_dim(), pair.in_dim(), pair.out_dim()),
        implement,
        update,
        request,
    )
}
