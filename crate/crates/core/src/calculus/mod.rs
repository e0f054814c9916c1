//! Exterior calculus over a fixed chart.

mod form;
pub mod structure;

pub use form::{Form, MultiVec, VectorField};
pub use structure::{structure_diagnostics, FormClass, StructureReport};
