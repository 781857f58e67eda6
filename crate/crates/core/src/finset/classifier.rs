//! The subobject classifier `Ω = t: {0, 1/2, 1} → {0, 1}`.

use super::arrow::{arrow_limit, verify_arrow_construction, ArrowDiagram};
use super::{terminal_object, ArrowObject, FinFn, FinSet, FinsetError, Result, Square};

pub const FALSE: usize = 0;
pub const HALF: usize = 1;
pub const TRUE: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubobjectClassifier {
    pub omega: ArrowObject,
    pub truth: Square,
}

impl Default for SubobjectClassifier {
    fn default() -> Self {
        Self::new()
    }
}

impl SubobjectClassifier {
    pub fn new() -> Self {
        let values = FinSet::new("Omega_in", ["0", "1/2", "1"]).expect("distinct");
        let bools = FinSet::new("Omega_out", ["0", "1"]).expect("distinct");
        let omega = FinFn::raw("t", values.clone(), bools.clone(), vec![0, 1, 1]);
        let one = terminal_object();
        let truth = Square::raw(
            one.clone(),
            omega.clone(),
            FinFn::raw("true_in", one.dom().clone(), values, vec![TRUE]),
            FinFn::raw("true_out", one.cod().clone(), bools, vec![1]),
        );
        Self { omega, truth }
    }
}

/// The characteristic square `(ψ, χ)` of a monic square into `g`.
///
/// `ψ(x)` is `1` on the image of the top inclusion, `1/2` where `x` is
/// outside it but `g(x)` lies in the image of the bottom inclusion, and `0`
/// otherwise. `χ` is the two-valued characteristic of the bottom image.
pub fn classify(sub: &Square) -> Result<Square> {
    if !sub.is_monic() {
        return Err(FinsetError::NotMonic(format!("{} / {}", sub.top().name(), sub.bottom().name())));
    }
    let g = sub.dst();
    let in_i = sub.top().image();
    let in_j = sub.bottom().image();
    let psi: Vec<usize> = (0..g.dom().len())
        .map(|x| {
            if in_i[x] {
                TRUE
            } else if in_j[g.at(x)] {
                HALF
            } else {
                FALSE
            }
        })
        .collect();
    let chi: Vec<usize> = in_j.iter().map(|&b| usize::from(b)).collect();
    let omega = SubobjectClassifier::new().omega;
    Square::new(
        g.clone(),
        omega.clone(),
        FinFn::raw("psi", g.dom().clone(), omega.dom().clone(), psi),
        FinFn::raw("chi", g.cod().clone(), omega.cod().clone(), chi),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierCheck {
    /// The pullback of the characteristic square along `true` has the same
    /// images as the subobject.
    pub recovers: bool,
    /// The pullback itself passed the exhaustive universal-property check.
    pub universal: bool,
    /// Squares `g → Ω` whose pullback along `true` is the subobject.
    pub classifying_squares: usize,
}

impl ClassifierCheck {
    pub fn passed(&self) -> bool {
        self.recovers && self.universal && self.classifying_squares == 1
    }
}

fn pulls_back_to(chi: &Square, truth: &Square, images: &(Vec<bool>, Vec<bool>), bound: Option<usize>) -> Result<(bool, bool)> {
    let diagram = ArrowDiagram::pullback(chi, truth)?;
    let c = arrow_limit(&diagram)?;
    let leg = &c.legs[0];
    let same = leg.is_monic() && leg.top().image() == images.0 && leg.bottom().image() == images.1;
    let universal = match bound {
        Some(b) => verify_arrow_construction(&diagram, &c, b).passed(),
        None => true,
    };
    Ok((same, universal))
}

/// Checks that the characteristic square classifies `sub`, and that it is
/// the only square into `Ω` that does.
pub fn verify_classification(sub: &Square, bound: usize) -> Result<ClassifierCheck> {
    let omega = SubobjectClassifier::new();
    let chi = classify(sub)?;
    let images = (sub.top().image(), sub.bottom().image());
    let (recovers, universal) = pulls_back_to(&chi, &omega.truth, &images, Some(bound))?;
    let mut classifying_squares = 0;
    for candidate in Square::hom(sub.dst(), &omega.omega) {
        if pulls_back_to(&candidate, &omega.truth, &images, None)?.0 {
            classifying_squares += 1;
        }
    }
    Ok(ClassifierCheck {
        recovers,
        universal,
        classifying_squares,
    })
}
