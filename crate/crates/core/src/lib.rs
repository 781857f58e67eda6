//! Executable category theory for toy deep learning: dense numerics and a
//! Transformer block, the arrow category of finite functions with its topos
//! structure, compositional learners, backpropagation as a functor, an
//! internal-logic forcing checker and a small diagram language.

pub mod backprop;
pub mod dsl;
pub mod finset;
pub mod laws;
pub mod learn;
pub mod logic;
pub mod numeric;
pub mod report;
pub mod transformer;
