//! Exact polynomial arithmetic: monomials, sparse rational polynomials,
//! polynomial matrices with cofactor determinants, and a text parser.

mod matrix;
mod monomial;
mod parse;
mod polynomial;

pub use matrix::PolyMatrix;
pub use monomial::{basis_cmp, binomial, default_names, monomials_up_to, Monomial};
pub use parse::parse_poly;
pub use polynomial::{rational_to_f64, Polynomial};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    VarCountMismatch { left: usize, right: usize },
    #[error("point has {got} coordinates, polynomial has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },
    #[error("determinant of a non-square {rows}x{cols} matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("bad matrix shape: {0}")]
    Shape(String),
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier '{name}' at position {position}")]
    UnknownIdentifier { name: String, position: usize },
}
