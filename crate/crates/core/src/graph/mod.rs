//! Iteration graphs and loop planning. The graph is a forest of index
//! variables (one node per forall) with a path per tensor access following
//! the tensor's level order; the planner picks how each loop iterates.

mod explain;
mod plan;

pub use explain::{explain_plan, plan_shape, same_loop_structure};
pub use plan::{
    plan_loops, AccessSlot, ExecutionMode, LoopPlan, PlanExpr, PlanNode, PlanOptions, Strategy, TensorSlot,
};

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::notation::{check_well_formed, Access, IndexStmt, IndexVar, Violation};
use crate::storage::TensorFormat;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("statement is not well formed: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    NotWellFormed(Vec<Violation>),
    #[error("format of `{tensor}` has order {format} but the tensor is accessed with {access} indices")]
    FormatOrderMismatch { tensor: String, format: usize, access: usize },
    #[error("access {access} visits its levels in the order ({order}), which the loop nest cannot follow; reorder the foralls")]
    NeedsReorder { access: String, order: String },
    #[error("loop over `{var}` would merge {} sparse operands ({}); only two-way merges are supported, apply a workspace at `{var}`", .operands.len(), .operands.join(", "))]
    UnsupportedMerge { var: String, operands: Vec<String> },
    #[error("the sparse result would need inserts: {0}; apply a workspace")]
    RequiresSparseInsert(String),
    #[error("result format {0} is not supported: dense levels must come before compressed levels")]
    UnsupportedResultFormat(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Input,
    Result,
    Temp,
}

#[derive(Clone, Debug)]
pub struct GraphNode {
    pub var: IndexVar,
    /// Variable name, suffixed with the modified tensor when the name is
    /// already taken by an earlier node.
    pub label: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

/// One access and the nodes its levels visit, outermost level first.
#[derive(Clone, Debug)]
pub struct AccessPath {
    pub tensor: String,
    pub text: String,
    pub kind: TensorKind,
    pub is_lhs: bool,
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct IterationGraph {
    pub stmt: IndexStmt,
    pub formats: HashMap<String, TensorFormat>,
    pub kinds: HashMap<String, TensorKind>,
    pub result: String,
    pub nodes: Vec<GraphNode>,
    pub roots: Vec<usize>,
    pub paths: Vec<AccessPath>,
    /// Top nodes of the producer and consumer side of each where statement.
    pub siblings: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Visits foralls and accesses in planning order: producers before
/// consumers, and within an assignment the left-hand side first.
pub(crate) fn visit_in_order<'a>(
    s: &'a IndexStmt,
    on_forall: &mut dyn FnMut(&'a IndexStmt, bool),
    on_access: &mut dyn FnMut(&'a Access, bool),
) {
    match s {
        IndexStmt::Assign { lhs, rhs, .. } => {
            on_access(lhs, true);
            rhs.visit_accesses(&mut |a| on_access(a, false));
        }
        IndexStmt::Forall { body, .. } => {
            on_forall(s, true);
            visit_in_order(body, on_forall, on_access);
            on_forall(s, false);
        }
        IndexStmt::Where { consumer, producer } => {
            visit_in_order(producer, on_forall, on_access);
            visit_in_order(consumer, on_forall, on_access);
        }
        IndexStmt::Sequence(stages) => {
            for st in stages {
                visit_in_order(st, on_forall, on_access);
            }
        }
    }
}

fn top_nodes(s: &IndexStmt, ids: &HashMap<*const IndexStmt, usize>, out: &mut Vec<usize>) {
    match s {
        IndexStmt::Forall { .. } => out.push(ids[&(s as *const _)]),
        _ => {
            for c in s.children() {
                top_nodes(c, ids, out);
            }
        }
    }
}

fn collect_siblings(s: &IndexStmt, ids: &HashMap<*const IndexStmt, usize>, out: &mut Vec<(Vec<usize>, Vec<usize>)>) {
    if let IndexStmt::Where { consumer, producer } = s {
        let (mut p, mut c) = (Vec::new(), Vec::new());
        top_nodes(producer, ids, &mut p);
        top_nodes(consumer, ids, &mut c);
        out.push((p, c));
    }
    for c in s.children() {
        collect_siblings(c, ids, out);
    }
}

/// Builds the iteration graph of a well-formed statement. `formats` gives
/// the storage format of inputs and the result; missing entries and all
/// temporaries are dense.
pub fn build_graph(stmt: &IndexStmt, formats: &HashMap<String, TensorFormat>) -> Result<IterationGraph, PlanError> {
    let violations = check_well_formed(stmt);
    if !violations.is_empty() {
        return Err(PlanError::NotWellFormed(violations));
    }
    let result = stmt.modified_tensor().name().to_string();
    let temps = stmt.produced_tensors();
    let mut kinds = HashMap::new();
    let mut fmts = HashMap::new();
    for t in stmt.tensors() {
        let name = t.name().to_string();
        let kind = if name == result {
            TensorKind::Result
        } else if temps.contains(&name) {
            TensorKind::Temp
        } else {
            TensorKind::Input
        };
        let format = match (kind, formats.get(&name)) {
            (TensorKind::Temp, _) | (_, None) => TensorFormat::dense(t.order()),
            (_, Some(f)) => f.clone(),
        };
        if format.order() != t.order() {
            return Err(PlanError::FormatOrderMismatch { tensor: name, format: format.order(), access: t.order() });
        }
        kinds.insert(name.clone(), kind);
        fmts.insert(name, format);
    }
    let rf = &fmts[&result];
    let first_compressed = (0..rf.order()).find(|&l| rf.level(l).is_compressed()).unwrap_or(rf.order());
    if (first_compressed..rf.order()).any(|l| rf.level(l).is_dense()) {
        return Err(PlanError::UnsupportedResultFormat(rf.to_string()));
    }

    let mut b = Builder { fmts: &fmts, kinds: &kinds, nodes: Vec::new(), roots: Vec::new(), ids: HashMap::new(), paths: Vec::new(), error: None };
    b.walk(stmt, &mut Vec::new());
    if let Some(e) = b.error {
        return Err(e);
    }
    let Builder { nodes, roots, ids, paths, .. } = b;
    let mut siblings = Vec::new();
    collect_siblings(stmt, &ids, &mut siblings);
    Ok(IterationGraph { stmt: stmt.clone(), formats: fmts, kinds, result, nodes, roots, paths, siblings })
}

struct Builder<'a> {
    fmts: &'a HashMap<String, TensorFormat>,
    kinds: &'a HashMap<String, TensorKind>,
    nodes: Vec<GraphNode>,
    roots: Vec<usize>,
    ids: HashMap<*const IndexStmt, usize>,
    paths: Vec<AccessPath>,
    error: Option<PlanError>,
}

impl Builder<'_> {
    fn walk(&mut self, s: &IndexStmt, stack: &mut Vec<usize>) {
        match s {
            IndexStmt::Assign { lhs, rhs, .. } => {
                self.access(lhs, true, stack);
                for a in rhs.accesses() {
                    self.access(a, false, stack);
                }
            }
            IndexStmt::Forall { var, body } => {
                let id = self.nodes.len();
                let mut label = var.name().to_string();
                if self.nodes.iter().any(|n| n.label == label) {
                    label = format!("{}_{}", var.name(), s.modified_tensor().name());
                    let base = label.clone();
                    let mut k = 2;
                    while self.nodes.iter().any(|n| n.label == label) {
                        label = format!("{base}{k}");
                        k += 1;
                    }
                }
                let parent = stack.last().copied();
                match parent {
                    Some(p) => self.nodes[p].children.push(id),
                    None => self.roots.push(id),
                }
                self.nodes.push(GraphNode { var: var.clone(), label, parent, children: Vec::new(), depth: stack.len() });
                self.ids.insert(s as *const _, id);
                stack.push(id);
                self.walk(body, stack);
                stack.pop();
            }
            IndexStmt::Where { consumer, producer } => {
                self.walk(producer, stack);
                self.walk(consumer, stack);
            }
            IndexStmt::Sequence(stages) => {
                for st in stages {
                    self.walk(st, stack);
                }
            }
        }
    }

    fn access(&mut self, a: &Access, is_lhs: bool, stack: &[usize]) {
        let name = a.tensor.name().to_string();
        let format = &self.fmts[&name];
        let kind = self.kinds[&name];
        let var_at = |l: usize| &a.indices[format.mode_ordering()[l]];
        let path: Vec<usize> = (0..format.order())
            .map(|l| {
                *stack
                    .iter()
                    .rev()
                    .find(|&&n| self.nodes[n].var == *var_at(l))
                    .expect("well-formed statements bind every index")
            })
            .collect();
        let ordered = path.windows(2).all(|w| w[0] < w[1]);
        if kind != TensorKind::Temp && format.has_compressed() && !ordered && self.error.is_none() {
            let order = (0..format.order()).map(|l| var_at(l).name().to_string()).collect::<Vec<_>>().join(",");
            self.error = Some(PlanError::NeedsReorder { access: a.to_string(), order });
        }
        self.paths.push(AccessPath { tensor: name, text: a.to_string(), kind, is_lhs, nodes: path });
    }
}

impl IterationGraph {
    /// Graphviz rendering: dotted edges for the variable hierarchy, solid
    /// labelled edges for tensor paths (bold for the result).
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph iteration_graph {\n  node [shape=circle];\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "  n{id} [label=\"{}\"];", n.label);
        }
        for (id, n) in self.nodes.iter().enumerate() {
            for c in &n.children {
                let _ = writeln!(out, "  n{id} -> n{c} [style=dotted, arrowhead=none];");
            }
        }
        for (p, c) in &self.siblings {
            let all: Vec<String> = p.iter().chain(c).map(|n| format!("n{n}")).collect();
            if all.len() > 1 {
                let _ = writeln!(out, "  {{ rank=same; {}; }}", all.join("; "));
            }
        }
        for path in &self.paths {
            let style = if path.kind == TensorKind::Result { ", style=bold" } else { "" };
            for w in path.nodes.windows(2) {
                let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"{style}];", w[0], w[1], path.tensor);
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::parse_concrete;

    fn formats(list: &[(&str, TensorFormat)]) -> HashMap<String, TensorFormat> {
        list.iter().map(|(n, f)| (n.to_string(), f.clone())).collect()
    }

    #[test]
    fn workspace_matmul_splits_j() {
        let s = parse_concrete("forall(i) (forall(j) A(i,j) = w0(j)) where (forall(k,j) w0(j) += B(i,k)*C(k,j))").unwrap();
        let f = formats(&[("A", TensorFormat::csr()), ("B", TensorFormat::csr()), ("C", TensorFormat::csr())]);
        let g = build_graph(&s, &f).unwrap();
        let labels: Vec<&str> = g.nodes.iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["i", "k", "j", "j_A"]);
        assert_eq!(g.nodes[0].children, vec![1, 3]);
        assert_eq!(g.siblings, vec![(vec![1], vec![3])]);
        let b = g.paths.iter().find(|p| p.tensor == "B").unwrap();
        assert_eq!(b.nodes, vec![0, 1]);
        let a = g.paths.iter().find(|p| p.tensor == "A").unwrap();
        assert_eq!((a.kind, a.nodes.clone()), (TensorKind::Result, vec![0, 3]));
        assert!(g.to_dot().contains("n0 -> n3 [label=\"A\", style=bold]"));
    }

    #[test]
    fn ttv_graph() {
        let s = parse_concrete("forall(i,j,k) A(i,j) += B(i,j,k)*c(k)").unwrap();
        let g = build_graph(&s, &formats(&[("B", TensorFormat::csf(3))])).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.paths.iter().find(|p| p.tensor == "B").unwrap().nodes, vec![0, 1, 2]);
        assert_eq!(g.paths.iter().find(|p| p.tensor == "c").unwrap().nodes, vec![2]);
    }

    #[test]
    fn column_major_operand_needs_reorder() {
        let s = parse_concrete("forall(i,j) A(i,j) = B(i,j)").unwrap();
        let err = build_graph(&s, &formats(&[("B", TensorFormat::csc())])).unwrap_err();
        assert!(matches!(err, PlanError::NeedsReorder { .. }), "{err}");
        let s = parse_concrete("forall(j,i) A(i,j) = B(i,j)").unwrap();
        assert!(build_graph(&s, &formats(&[("B", TensorFormat::csc())])).is_ok());
        // fully dense operands are addressed directly in any order
        assert!(build_graph(&s, &formats(&[("B", TensorFormat::dense(2))])).is_ok());
    }

    #[test]
    fn graph_rejections() {
        let s = parse_concrete("forall(i) A(i,j) = B(i,j)").unwrap();
        assert!(matches!(build_graph(&s, &HashMap::new()), Err(PlanError::NotWellFormed(_))));
        let s = parse_concrete("forall(i,j) A(i,j) = B(i,j)").unwrap();
        let bad = TensorFormat::with_levels(vec![crate::storage::ModeFormat::COMPRESSED, crate::storage::ModeFormat::DENSE]);
        assert!(matches!(build_graph(&s, &formats(&[("A", bad)])), Err(PlanError::UnsupportedResultFormat(_))));
        assert!(matches!(
            build_graph(&s, &formats(&[("B", TensorFormat::sparse_vector())])),
            Err(PlanError::FormatOrderMismatch { .. })
        ));
    }
}
