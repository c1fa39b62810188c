//! Rewrites on concrete index notation: lowering from index notation, the
//! reordering equivalences, the workspace optimization with optional result
//! reuse, and a directive-driven scheduler.

mod equivalence;
mod lower;
mod schedule;
mod workspace;

pub use equivalence::{apply_equivalence, apply_equivalence_directed, apply_equivalence_with_table, Direction, EquivalenceRule};
pub use lower::lower_to_concrete;
pub use schedule::{desugar_scalar_wheres, parse_schedule, schedule, Directive, Schedule, ScheduleError};
pub use workspace::{
    apply_workspace, apply_workspace_with_reuse, apply_workspace_with_table, ExprPath, WorkspaceDirective,
};

use thiserror::Error;

use crate::notation::{BinaryOp, IndexStmt, NotationError, Violation};

/// Location of a statement node: child indices from the root (forall body 0;
/// where consumer 0, producer 1; sequence stage `i`).
pub type Location = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("{rule:?} does not apply: {reason}")]
    PreconditionViolated { rule: EquivalenceRule, reason: String },
    #[error("the statement contains a sequence, which the rewrite does not support")]
    SequencePresent,
    #[error("no statement of the required shape at location {0:?}")]
    InvalidLocation(Location),
    #[error("expression path does not resolve: {0}")]
    InvalidExprPath(String),
    #[error("operator {op:?} containing the expression does not distribute over {over:?}")]
    DistributivityViolated { op: BinaryOp, over: BinaryOp },
    #[error("index variable `{0}` is not a free variable of the workspace expression")]
    VariableNotInScope(String),
    #[error("workspace needs at least one distinct index variable")]
    EmptyWorkspaceVars,
    #[error("workspace format must be dense with one level per index variable, got {0}")]
    UnsupportedWorkspaceFormat(String),
    #[error("result reuse would hoist computation out of a loop (foralls {consumer:?} vs {producer:?})")]
    ReusePrecondition1 { consumer: Vec<String>, producer: Vec<String> },
    #[error("result reuse needs the expression nested in at most one operator matching the assignment, found {0}")]
    ReusePrecondition2(String),
    #[error("pattern `{0}` matches no sub-expression")]
    PatternNotFound(String),
    #[error("unknown index variable `{0}`")]
    UnknownIndexVar(String),
    #[error("cannot reorder: {0}")]
    Reorder(String),
    #[error("invalid directive: {0}")]
    InvalidDirective(String),
    #[error("result is not well formed: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    NotWellFormed(Vec<Violation>),
    #[error(transparent)]
    Notation(#[from] NotationError),
}

/// Replaces the node at `path` and returns the old node.
pub(crate) fn replace_at(stmt: &mut IndexStmt, path: &[usize], new: IndexStmt) -> Result<IndexStmt, TransformError> {
    let slot = stmt.at_mut(path).ok_or_else(|| TransformError::InvalidLocation(path.to_vec()))?;
    Ok(std::mem::replace(slot, new))
}

/// Takes the node at `path`, leaving a placeholder to be overwritten.
pub(crate) fn take_at(stmt: &mut IndexStmt, path: &[usize]) -> Result<IndexStmt, TransformError> {
    replace_at(stmt, path, IndexStmt::Sequence(Vec::new()))
}

/// Smallest `{prefix}{n}` that names no tensor of `stmt`.
pub(crate) fn fresh_name(stmt: &IndexStmt, prefix: &str) -> String {
    let names = stmt.tensor_names();
    (0..).map(|n| format!("{prefix}{n}")).find(|c| !names.contains(c)).unwrap()
}

pub(crate) fn ensure_well_formed(stmt: &IndexStmt) -> Result<(), TransformError> {
    let v = crate::notation::check_well_formed(stmt);
    if v.is_empty() {
        Ok(())
    } else {
        Err(TransformError::NotWellFormed(v))
    }
}
