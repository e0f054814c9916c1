//! Symbolic derivation and simulation of action-dependent field theories in
//! the multicontact Lagrangian, Hamiltonian and Skinner-Rusk formalisms.

pub mod calculus;
pub mod chart;
pub mod equations;
pub mod expr;
pub mod hamiltonian;
pub mod lagrangian;
pub mod linalg;
pub mod model;
pub mod numsim;
pub mod par;
pub mod sampling;
pub mod unified;

pub use chart::{Chart, ChartKind};

pub use equations::{Equation, EquationSet, Format, Role};
pub use expr::{equal, Coord, Equality, Expr, Var};
pub use model::{parse_model_str, validate_model, ModelSpec};
pub use par::Exec;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions m={m}, n={n}: both must be positive")]
    Dimensions { m: usize, n: usize },
    #[error("coordinate {coord} does not belong to the {chart} chart")]
    ForeignCoordinate { coord: String, chart: &'static str },
    #[error("model is not well formed:\n{0}")]
    InvalidModel(model::ValidationReport),
    #[error("the volume form is not closed")]
    NotClosed,
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("non-evolutionary system: {0}")]
    NonEvolutionary(String),
    #[error("integration stopped at t={t}: {reason}")]
    NonFinite { t: f64, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] expr::EvalError),
    #[error(transparent)]
    Parse(#[from] expr::parse::ParseError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
