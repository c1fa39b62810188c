//! Executes loop plans over tensor storage: co-iteration, locate, the dense
//! workspace runtime, result assembly and counters.

mod exec;
mod merge;

pub use merge::{co_iterate, co_iterate_with, MergeKind};

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{ExecutionMode, LoopPlan, PlanError, PlanOptions};
use crate::storage::{StorageError, TensorStorage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("index variable `{var}` has extent {first} in one operand and {second} in another")]
    ShapeMismatch { var: String, first: usize, second: usize },
    #[error("no storage bound for input `{0}`")]
    MissingInput(String),
    #[error("extent of index variable `{0}` is not determined by any input")]
    UnknownDimension(String),
    #[error("assembled result has no slot at coordinates {0:?}")]
    MissingSlot(Vec<usize>),
    #[error("compute mode with a sparse result needs a pre-assembled index")]
    MissingIndex,
    #[error("`{tensor}` is stored as {found} but the plan expects {expected}")]
    FormatMismatch { tensor: String, expected: String, found: String },
    #[error("`{tensor}` has dimensions {found:?} but {expected:?} were expected")]
    DimensionMismatch { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionStats {
    pub mults: u64,
    pub adds: u64,
    pub merge_compares: u64,
    /// Inserts into non-final positions of a sparse result. Plans that
    /// would need them are rejected, so this stays zero.
    pub sparse_inserts: u64,
    pub appends: u64,
    pub ws_inserts: u64,
    pub ws_resets: u64,
    pub bytes_allocated: u64,
    pub sort_nanos: u64,
}

impl ExecutionStats {
    /// Flat `key=value` report, one counter per line.
    pub fn report(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ExecutionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mults={}", self.mults)?;
        writeln!(f, "adds={}", self.adds)?;
        writeln!(f, "merge_compares={}", self.merge_compares)?;
        writeln!(f, "sparse_inserts={}", self.sparse_inserts)?;
        writeln!(f, "appends={}", self.appends)?;
        writeln!(f, "ws_inserts={}", self.ws_inserts)?;
        writeln!(f, "ws_resets={}", self.ws_resets)?;
        writeln!(f, "bytes_allocated={}", self.bytes_allocated)?;
        write!(f, "sort_nanos={}", self.sort_nanos)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExecOptions {
    /// Check workspace resets and storage invariants while running.
    pub check_invariants: bool,
    /// Result extents, needed only when a result index appears in no input.
    pub result_dims: Option<Vec<usize>>,
}

fn plan_for(plan: &LoopPlan, mode: ExecutionMode) -> Result<Option<LoopPlan>, EngineError> {
    if plan.options.mode == mode {
        Ok(None)
    } else {
        Ok(Some(plan.replan(PlanOptions { mode, ..plan.options })?))
    }
}

pub fn execute(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    mode: ExecutionMode,
) -> Result<(TensorStorage, ExecutionStats), EngineError> {
    execute_with(plan, inputs, mode, &ExecOptions::default())
}

/// Runs `plan` in `mode`, replanning when the plan was built for another
/// mode. Compute mode works only for dense results; sparse results go
/// through [`assemble_index`] and [`run_compute_after_assemble`].
pub fn execute_with(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    mode: ExecutionMode,
    options: &ExecOptions,
) -> Result<(TensorStorage, ExecutionStats), EngineError> {
    let replanned = plan_for(plan, mode)?;
    let plan = replanned.as_ref().unwrap_or(plan);
    if mode == ExecutionMode::Compute && plan.result_slot().format.has_compressed() {
        return Err(EngineError::MissingIndex);
    }
    exec::run(plan, inputs, None, options)
}

/// Builds the result's index structure; values are zero.
pub fn assemble_index(plan: &LoopPlan, inputs: &HashMap<String, TensorStorage>) -> Result<TensorStorage, EngineError> {
    assemble_index_with(plan, inputs, &ExecOptions::default())
}

pub fn assemble_index_with(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    options: &ExecOptions,
) -> Result<TensorStorage, EngineError> {
    let replanned = plan_for(plan, ExecutionMode::Assemble)?;
    let plan = replanned.as_ref().unwrap_or(plan);
    Ok(exec::run(plan, inputs, None, options)?.0)
}

/// Fills values into a copy of `assembled` without changing its index.
pub fn run_compute_after_assemble(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    assembled: &TensorStorage,
) -> Result<(TensorStorage, ExecutionStats), EngineError> {
    run_compute_after_assemble_with(plan, inputs, assembled, &ExecOptions::default())
}

pub fn run_compute_after_assemble_with(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    assembled: &TensorStorage,
    options: &ExecOptions,
) -> Result<(TensorStorage, ExecutionStats), EngineError> {
    let replanned = plan_for(plan, ExecutionMode::Compute)?;
    let plan = replanned.as_ref().unwrap_or(plan);
    exec::run(plan, inputs, Some(assembled), options)
}
