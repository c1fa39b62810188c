//! Sparse tensor algebra mini-compiler: index notation, concrete index
//! notation, workspace and reordering transformations, iteration-graph loop
//! planning, and an instrumented interpreter over dense/compressed storage.

pub mod storage;
pub mod notation;
pub mod transform;
pub mod graph;
pub mod engine;
pub mod oracle;
pub mod io;
