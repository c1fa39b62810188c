//! Index notation and concrete index notation: ASTs, a text parser and
//! printers, and well-formedness checking.

mod ast;
mod check;
mod parse;
mod print;

pub use ast::{var_set, Access, BinaryOp, IndexExpr, IndexStmt, IndexVar, OperatorTable, SourceExpr, TensorVar};
pub use check::{check_well_formed, Violation, ViolationKind};
pub use parse::{check_source, infer_dimensions, parse, parse_concrete, parse_expr_in, parse_with_shapes};
pub use print::{print_math, print_source_math, print_stmt};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NotationError {
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("tensor `{tensor}` has order {expected} but is accessed with {found} indices")]
    ArityMismatch { tensor: String, expected: usize, found: usize },
    #[error("index variable `{var}` ranges over both {first} and {second}")]
    DimensionMismatch { var: String, first: usize, second: usize },
    #[error("result tensor `{0}` appears on the right-hand side")]
    ResultOnRhs(String),
    #[error("index variable `{var}` indexes `{tensor}` more than once")]
    RepeatedIndexVar { tensor: String, var: String },
    #[error("reduction variable `{0}` shadows an enclosing index variable")]
    ShadowedIndexVar(String),
    #[error("index variable `{0}` is neither a result index nor reduced")]
    UnboundIndexVar(String),
}
