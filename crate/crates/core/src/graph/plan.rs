use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::notation::{Access, BinaryOp, IndexExpr, IndexStmt, IndexVar};
use crate::storage::TensorFormat;

use super::{visit_in_order, IterationGraph, PlanError, TensorKind};

/// Compute fills values into an already assembled result, assemble builds
/// only the index structure, fused does both in one pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    Compute,
    Assemble,
    Fused,
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecutionMode::Compute => "compute",
            ExecutionMode::Assemble => "assemble",
            ExecutionMode::Fused => "fused",
        })
    }
}

impl FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "compute" => Ok(ExecutionMode::Compute),
            "assemble" => Ok(ExecutionMode::Assemble),
            "fused" => Ok(ExecutionMode::Fused),
            _ => Err(format!("unknown mode `{s}` (expected compute, assemble or fused)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanOptions {
    pub mode: ExecutionMode,
    /// Sort workspace coordinate lists before draining them.
    pub sort: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { mode: ExecutionMode::Fused, sort: true }
    }
}

/// How a loop enumerates its coordinates. Access and tensor operands are
/// slot indices into the plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    DenseLoop,
    SparseIterate(usize),
    Intersect(usize, usize),
    Union(usize, usize),
    DrainWorkspace(usize),
    /// Walks the assembled result level in place of draining the workspace.
    IterateResult(usize, usize),
}

#[derive(Clone, Debug)]
pub struct TensorSlot {
    pub name: String,
    pub kind: TensorKind,
    pub format: TensorFormat,
    pub order: usize,
}

#[derive(Clone, Debug)]
pub struct AccessSlot {
    pub tensor: usize,
    pub text: String,
    pub is_lhs: bool,
    /// Variable slot of each mode.
    pub vars: Vec<usize>,
    /// Variable slot of each storage level.
    pub level_vars: Vec<usize>,
    /// Levels whose position is supplied by an enclosing loop.
    pub iterated: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanExpr {
    Literal(f64),
    Access(usize),
    Binary { op: BinaryOp, lhs: Box<PlanExpr>, rhs: Box<PlanExpr> },
}

#[derive(Clone, Debug)]
pub enum PlanNode {
    Loop { node: usize, var: usize, strategy: Strategy, locate: Vec<usize>, body: Box<PlanNode> },
    Compute { lhs: usize, op: Option<BinaryOp>, rhs: PlanExpr },
    Where { temp: usize, consumer: Box<PlanNode>, producer: Box<PlanNode> },
    Sequence(Vec<PlanNode>),
}

#[derive(Clone, Debug)]
pub struct LoopPlan {
    pub graph: IterationGraph,
    pub options: PlanOptions,
    pub tensors: Vec<TensorSlot>,
    pub vars: Vec<String>,
    pub accesses: Vec<AccessSlot>,
    pub root: PlanNode,
    pub result: usize,
}

impl LoopPlan {
    pub fn mode(&self) -> ExecutionMode {
        self.options.mode
    }

    pub fn replan(&self, options: PlanOptions) -> Result<LoopPlan, PlanError> {
        plan_loops(&self.graph, options)
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn result_slot(&self) -> &TensorSlot {
        &self.tensors[self.result]
    }
}

/// Iteration domain of a loop variable over a statement.
#[derive(Clone, Debug)]
enum Dom {
    Full,
    Const,
    Sparse(usize),
    Temp(usize),
    Mul(Box<Dom>, Box<Dom>),
    Add(Box<Dom>, Box<Dom>),
}

fn dom_mul(a: Dom, b: Dom) -> Dom {
    match (a, b) {
        (Dom::Const | Dom::Full, d) | (d, Dom::Const | Dom::Full) => d,
        (t @ Dom::Temp(_), Dom::Temp(_)) => t,
        (Dom::Temp(_), d) | (d, Dom::Temp(_)) => d,
        (a, b) => Dom::Mul(Box::new(a), Box::new(b)),
    }
}

fn dom_add(a: Dom, b: Dom) -> Dom {
    match (a, b) {
        (Dom::Const | Dom::Full | Dom::Temp(_), _) | (_, Dom::Const | Dom::Full | Dom::Temp(_)) => Dom::Full,
        (a, b) => Dom::Add(Box::new(a), Box::new(b)),
    }
}

fn sparse_leaves(d: &Dom, out: &mut Vec<usize>) {
    match d {
        Dom::Sparse(a) => out.push(*a),
        Dom::Mul(a, b) | Dom::Add(a, b) => {
            sparse_leaves(a, out);
            sparse_leaves(b, out);
        }
        _ => {}
    }
}

/// Chooses a strategy for every loop of the graph's statement.
pub fn plan_loops(graph: &IterationGraph, options: PlanOptions) -> Result<LoopPlan, PlanError> {
    let stmt = &graph.stmt;
    let mut tensors = Vec::new();
    let mut tensor_ids = HashMap::new();
    for t in stmt.tensors() {
        let name = t.name().to_string();
        let kind = graph.kinds[&name];
        let mut format = graph.formats[&name].clone();
        if kind == TensorKind::Result && !options.sort {
            format.set_ordered(false);
        }
        tensor_ids.insert(name.clone(), tensors.len());
        tensors.push(TensorSlot { name, kind, order: t.order(), format });
    }
    let result = tensor_ids[&graph.result];
    check_sparse_inserts(stmt, &tensors[result])?;

    let var_list = stmt.index_vars();
    let var_ids: HashMap<IndexVar, usize> = var_list.iter().enumerate().map(|(k, v)| (v.clone(), k)).collect();

    let mut accesses = Vec::new();
    let mut access_ids = HashMap::new();
    let mut node_ids = HashMap::new();
    let mut next_node = 0usize;
    visit_in_order(
        stmt,
        &mut |s, enter| {
            if enter {
                node_ids.insert(s as *const IndexStmt, next_node);
                next_node += 1;
            }
        },
        &mut |a, is_lhs| {
            let tensor = tensor_ids[a.tensor.name()];
            let format = &tensors[tensor].format;
            let vars: Vec<usize> = a.indices.iter().map(|v| var_ids[v]).collect();
            let level_vars = format.mode_ordering().iter().map(|&m| vars[m]).collect();
            access_ids.insert(a as *const Access, accesses.len());
            accesses.push(AccessSlot {
                tensor,
                text: a.to_string(),
                is_lhs,
                vars,
                level_vars,
                iterated: vec![false; a.indices.len()],
            });
        },
    );

    let mut p = Planner { graph, options, tensors: &tensors, tensor_ids: &tensor_ids, var_ids: &var_ids, accesses, access_ids, node_ids };
    let root = p.compile(stmt)?;
    let accesses = p.accesses;
    Ok(LoopPlan {
        graph: graph.clone(),
        options,
        vars: var_list.iter().map(|v| v.name().to_string()).collect(),
        tensors,
        accesses,
        root,
        result,
    })
}

fn check_sparse_inserts(stmt: &IndexStmt, result: &TensorSlot) -> Result<(), PlanError> {
    let format = &result.format;
    let Some(first) = (0..format.order()).find(|&l| format.level(l).is_compressed()) else {
        return Ok(());
    };
    let mut writes = Vec::new();
    result_writes(stmt, &result.name, &mut Vec::new(), &mut writes);
    if writes.len() > 1 {
        return Err(PlanError::RequiresSparseInsert(format!("{} statements write `{}`", writes.len(), result.name)));
    }
    for (chain, lhs, op) in writes {
        if op == Some(BinaryOp::Mul) {
            return Err(PlanError::RequiresSparseInsert(format!("`{lhs} *=` scales stored values in place")));
        }
        for l in first..format.order() {
            let v = &lhs.indices[format.mode_ordering()[l]];
            let at = chain.iter().position(|u| u == v).unwrap_or(chain.len());
            if let Some(u) = chain[..at].iter().find(|u| !lhs.indices.contains(u)) {
                return Err(PlanError::RequiresSparseInsert(format!("`{lhs}` is appended to inside the loop over `{u}`")));
            }
        }
    }
    Ok(())
}

fn result_writes<'a>(
    s: &'a IndexStmt,
    result: &str,
    chain: &mut Vec<IndexVar>,
    out: &mut Vec<(Vec<IndexVar>, &'a Access, Option<BinaryOp>)>,
) {
    match s {
        IndexStmt::Assign { lhs, op, .. } => {
            if lhs.tensor.name() == result {
                out.push((chain.clone(), lhs, *op));
            }
        }
        IndexStmt::Forall { var, body } => {
            chain.push(var.clone());
            result_writes(body, result, chain, out);
            chain.pop();
        }
        IndexStmt::Where { consumer, .. } => result_writes(consumer, result, chain, out),
        IndexStmt::Sequence(stages) => {
            for st in stages {
                result_writes(st, result, chain, out);
            }
        }
    }
}

struct Planner<'g> {
    graph: &'g IterationGraph,
    options: PlanOptions,
    tensors: &'g [TensorSlot],
    tensor_ids: &'g HashMap<String, usize>,
    var_ids: &'g HashMap<IndexVar, usize>,
    accesses: Vec<AccessSlot>,
    access_ids: HashMap<*const Access, usize>,
    node_ids: HashMap<*const IndexStmt, usize>,
}

impl<'g> Planner<'g> {
    fn compile(&mut self, s: &'g IndexStmt) -> Result<PlanNode, PlanError> {
        Ok(match s {
            IndexStmt::Assign { lhs, op, rhs } => {
                PlanNode::Compute { lhs: self.access_ids[&(lhs as *const _)], op: *op, rhs: self.compile_expr(rhs) }
            }
            IndexStmt::Forall { var, body } => {
                let node = self.node_ids[&(s as *const _)];
                let strategy = self.strategy(node, var, body)?;
                let chosen: Vec<usize> = match strategy {
                    Strategy::SparseIterate(a) | Strategy::IterateResult(a, _) => vec![a],
                    Strategy::Intersect(a, b) | Strategy::Union(a, b) => vec![a, b],
                    _ => Vec::new(),
                };
                let vslot = self.var_ids[var];
                for &a in &chosen {
                    let slot = &mut self.accesses[a];
                    let format = &self.tensors[slot.tensor].format;
                    let mode = slot.vars.iter().position(|&x| x == vslot).expect("iterated access uses the loop var");
                    slot.iterated[format.level_of_mode(mode)] = true;
                }
                let mut locate = Vec::new();
                let mut all = Vec::new();
                stmt_accesses(body, &mut all);
                for a in all {
                    let id = self.access_ids[&(a as *const _)];
                    if a.indices.contains(var) && !chosen.contains(&id) && !self.accesses[id].is_lhs {
                        if !locate.contains(&id) {
                            locate.push(id);
                        }
                    }
                }
                PlanNode::Loop { node, var: vslot, strategy, locate, body: Box::new(self.compile(body)?) }
            }
            IndexStmt::Where { consumer, producer } => PlanNode::Where {
                temp: self.tensor_ids[producer.modified_tensor().name()],
                producer: Box::new(self.compile(producer)?),
                consumer: Box::new(self.compile(consumer)?),
            },
            IndexStmt::Sequence(stages) => {
                PlanNode::Sequence(stages.iter().map(|st| self.compile(st)).collect::<Result<_, _>>()?)
            }
        })
    }

    fn compile_expr(&self, e: &IndexExpr) -> PlanExpr {
        match e {
            IndexExpr::Literal(v) => PlanExpr::Literal(*v),
            IndexExpr::Access(a) => PlanExpr::Access(self.access_ids[&(a as *const _)]),
            IndexExpr::Binary { op, lhs, rhs } => {
                PlanExpr::Binary { op: *op, lhs: Box::new(self.compile_expr(lhs)), rhs: Box::new(self.compile_expr(rhs)) }
            }
            // concrete statements carry no reductions once well formed
            IndexExpr::Reduction { body, .. } => self.compile_expr(body),
        }
    }

    fn strategy(&self, node: usize, var: &IndexVar, body: &IndexStmt) -> Result<Strategy, PlanError> {
        let dom = match self.dom_stmt(body, var, &HashMap::new()) {
            Dom::Const => Dom::Full,
            d => d,
        };
        let strategy = match dom {
            Dom::Full | Dom::Const => Strategy::DenseLoop,
            Dom::Sparse(a) => Strategy::SparseIterate(a),
            Dom::Temp(t) if self.tensors[t].order == 1 => Strategy::DrainWorkspace(t),
            Dom::Temp(_) => Strategy::DenseLoop,
            Dom::Mul(ref a, ref b) if matches!((&**a, &**b), (Dom::Sparse(_), Dom::Sparse(_))) => {
                let (Dom::Sparse(a), Dom::Sparse(b)) = (&**a, &**b) else { unreachable!() };
                Strategy::Intersect(*a, *b)
            }
            Dom::Add(ref a, ref b) if matches!((&**a, &**b), (Dom::Sparse(_), Dom::Sparse(_))) => {
                let (Dom::Sparse(a), Dom::Sparse(b)) = (&**a, &**b) else { unreachable!() };
                Strategy::Union(*a, *b)
            }
            other => {
                let mut leaves = Vec::new();
                sparse_leaves(&other, &mut leaves);
                return Err(PlanError::UnsupportedMerge {
                    var: self.graph.nodes[node].label.clone(),
                    operands: leaves.iter().map(|&a| self.accesses[a].text.clone()).collect(),
                });
            }
        };
        if self.options.mode == ExecutionMode::Compute {
            if let Strategy::DrainWorkspace(t) = strategy {
                if let Some(a) = self.result_write_at(body, var) {
                    return Ok(Strategy::IterateResult(a, t));
                }
            }
        }
        Ok(strategy)
    }

    /// The result access written below `body` whose level for `var` is compressed.
    fn result_write_at(&self, body: &IndexStmt, var: &IndexVar) -> Option<usize> {
        match body {
            IndexStmt::Assign { lhs, .. } => {
                let t = self.tensor_ids[lhs.tensor.name()];
                if self.tensors[t].kind != TensorKind::Result {
                    return None;
                }
                let mode = lhs.indices.iter().position(|v| v == var)?;
                let format = &self.tensors[t].format;
                format.level(format.level_of_mode(mode)).is_compressed().then(|| self.access_ids[&(lhs as *const _)])
            }
            IndexStmt::Forall { body, .. } => self.result_write_at(body, var),
            IndexStmt::Where { consumer, .. } => self.result_write_at(consumer, var),
            IndexStmt::Sequence(stages) => stages.iter().find_map(|st| self.result_write_at(st, var)),
        }
    }

    fn dom_stmt<'s>(&self, s: &'s IndexStmt, v: &IndexVar, produced: &HashMap<String, &'s IndexStmt>) -> Dom {
        match s {
            IndexStmt::Assign { op: Some(BinaryOp::Mul), .. } => Dom::Full,
            IndexStmt::Assign { rhs, .. } => self.dom_expr(rhs, v, produced),
            IndexStmt::Forall { body, .. } => self.dom_stmt(body, v, produced),
            IndexStmt::Where { consumer, producer } => {
                let mut inner = produced.clone();
                inner.insert(producer.modified_tensor().name().to_string(), &**producer);
                self.dom_stmt(consumer, v, &inner)
            }
            IndexStmt::Sequence(stages) => {
                let mut it = stages.iter().map(|st| self.dom_stmt(st, v, produced));
                let first = it.next().unwrap_or(Dom::Const);
                it.fold(first, dom_add)
            }
        }
    }

    fn dom_expr(&self, e: &IndexExpr, v: &IndexVar, produced: &HashMap<String, &IndexStmt>) -> Dom {
        match e {
            IndexExpr::Literal(_) => Dom::Const,
            IndexExpr::Access(a) => {
                let name = a.tensor.name();
                if let Some(p) = produced.get(name) {
                    let mut rest = produced.clone();
                    rest.remove(name);
                    return self.dom_stmt(p, v, &rest);
                }
                let Some(mode) = a.indices.iter().position(|x| x == v) else {
                    return Dom::Const;
                };
                let t = self.tensor_ids[name];
                let slot = &self.tensors[t];
                match slot.kind {
                    TensorKind::Temp => Dom::Temp(t),
                    TensorKind::Input if slot.format.level(slot.format.level_of_mode(mode)).is_compressed() => {
                        Dom::Sparse(self.access_ids[&(a as *const _)])
                    }
                    _ => Dom::Full,
                }
            }
            IndexExpr::Binary { op: BinaryOp::Mul, lhs, rhs } => {
                dom_mul(self.dom_expr(lhs, v, produced), self.dom_expr(rhs, v, produced))
            }
            IndexExpr::Binary { op: BinaryOp::Add, lhs, rhs } => {
                dom_add(self.dom_expr(lhs, v, produced), self.dom_expr(rhs, v, produced))
            }
            IndexExpr::Reduction { body, .. } => self.dom_expr(body, v, produced),
        }
    }
}

fn stmt_accesses<'a>(s: &'a IndexStmt, out: &mut Vec<&'a Access>) {
    match s {
        IndexStmt::Assign { lhs, rhs, .. } => {
            out.push(lhs);
            rhs.visit_accesses(&mut |a| out.push(a));
        }
        _ => {
            for c in s.children() {
                stmt_accesses(c, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::notation::parse_concrete;

    fn plan(text: &str, formats: &[(&str, TensorFormat)], options: PlanOptions) -> Result<LoopPlan, PlanError> {
        let s = parse_concrete(text).unwrap();
        let f = formats.iter().map(|(n, f)| (n.to_string(), f.clone())).collect();
        plan_loops(&build_graph(&s, &f)?, options)
    }

    fn strategies(n: &PlanNode, out: &mut Vec<Strategy>) {
        match n {
            PlanNode::Loop { strategy, body, .. } => {
                out.push(*strategy);
                strategies(body, out);
            }
            PlanNode::Compute { .. } => {}
            PlanNode::Where { consumer, producer, .. } => {
                strategies(producer, out);
                strategies(consumer, out);
            }
            PlanNode::Sequence(st) => st.iter().for_each(|s| strategies(s, out)),
        }
    }

    fn strats(p: &LoopPlan) -> Vec<Strategy> {
        let mut out = Vec::new();
        strategies(&p.root, &mut out);
        out
    }

    const WS_MATMUL: &str = "forall(i) (forall(j) A(i,j) = w0(j)) where (forall(k,j) w0(j) += B(i,k)*C(k,j))";

    #[test]
    fn workspace_matmul_strategies() {
        let f = [("A", TensorFormat::csr()), ("B", TensorFormat::csr()), ("C", TensorFormat::csr())];
        let p = plan(WS_MATMUL, &f, PlanOptions::default()).unwrap();
        let s = strats(&p);
        assert_eq!(s[0], Strategy::DenseLoop);
        assert!(matches!(s[1], Strategy::SparseIterate(a) if p.accesses[a].text == "B(i,k)"));
        assert!(matches!(s[2], Strategy::SparseIterate(a) if p.accesses[a].text == "C(k,j)"));
        assert!(matches!(s[3], Strategy::DrainWorkspace(t) if p.tensors[t].name == "w0"));
        let c = p.replan(PlanOptions { mode: ExecutionMode::Compute, sort: true }).unwrap();
        assert!(matches!(strats(&c)[3], Strategy::IterateResult(a, _) if c.accesses[a].text == "A(i,j)"));
    }

    #[test]
    fn merges() {
        let f = [("A", TensorFormat::csr()), ("B", TensorFormat::csr()), ("C", TensorFormat::csr())];
        let add = plan("forall(i,j) A(i,j) = B(i,j) + C(i,j)", &f, PlanOptions::default()).unwrap();
        assert!(matches!(strats(&add)[1], Strategy::Union(..)));
        let mul = plan("forall(i,j) A(i,j) = B(i,j) * C(i,j)", &f, PlanOptions::default()).unwrap();
        assert!(matches!(strats(&mul)[1], Strategy::Intersect(..)));
        let f3 = [("A", TensorFormat::csr()), ("B", TensorFormat::csr()), ("C", TensorFormat::csr()), ("D", TensorFormat::csr())];
        let err = plan("forall(i,j) A(i,j) = B(i,j) + C(i,j) + D(i,j)", &f3, PlanOptions::default()).unwrap_err();
        assert!(matches!(&err, PlanError::UnsupportedMerge { operands, .. } if operands.len() == 3), "{err}");
    }

    #[test]
    fn dense_operand_scales_sparse_domain() {
        let f = [("B", TensorFormat::csr())];
        let p = plan("forall(i,j) A(i,j) = B(i,j) * C(i,j)", &f, PlanOptions::default()).unwrap();
        let s = strats(&p);
        assert!(matches!(s[1], Strategy::SparseIterate(a) if p.accesses[a].text == "B(i,j)"));
        if let PlanNode::Loop { body, .. } = &p.root {
            if let PlanNode::Loop { locate, .. } = &**body {
                assert_eq!(locate.iter().map(|&a| p.accesses[a].text.as_str()).collect::<Vec<_>>(), ["C(i,j)"]);
            }
        }
        let q = plan("forall(i,j) A(i,j) = B(i,j) + C(i,j)", &f, PlanOptions::default()).unwrap();
        assert_eq!(strats(&q)[1], Strategy::DenseLoop);
    }

    #[test]
    fn sparse_result_needs_workspace() {
        let f = [("A", TensorFormat::csr()), ("B", TensorFormat::csr()), ("C", TensorFormat::csr())];
        let err = plan("forall(i,k,j) A(i,j) += B(i,k)*C(k,j)", &f, PlanOptions::default()).unwrap_err();
        assert!(matches!(err, PlanError::RequiresSparseInsert(_)), "{err}");
        let dense = [("B", TensorFormat::csr()), ("C", TensorFormat::csr())];
        assert!(plan("forall(i,k,j) A(i,j) += B(i,k)*C(k,j)", &dense, PlanOptions::default()).is_ok());
        let seq = plan("forall(i,j) (A(i,j) = B(i,j) ; A(i,j) += C(i,j))", &f, PlanOptions::default());
        assert!(matches!(seq, Err(PlanError::RequiresSparseInsert(_))));
    }

    #[test]
    fn unsorted_result_is_unordered() {
        let f = [("A", TensorFormat::csr()), ("B", TensorFormat::csr()), ("C", TensorFormat::csr())];
        let p = plan(WS_MATMUL, &f, PlanOptions { mode: ExecutionMode::Fused, sort: false }).unwrap();
        assert!(!p.result_slot().format.is_ordered());
    }
}
