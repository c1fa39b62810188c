use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_VAR_ID: AtomicU64 = AtomicU64::new(0);

/// An index variable. Two variables are equal only if they come from the same
/// `IndexVar::new` call; names are for display.
#[derive(Clone)]
pub struct IndexVar {
    id: u64,
    name: Arc<str>,
}

impl IndexVar {
    pub fn new(name: &str) -> Self {
        IndexVar { id: NEXT_VAR_ID.fetch_add(1, Ordering::Relaxed), name: Arc::from(name) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

impl PartialEq for IndexVar {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for IndexVar {}

impl Hash for IndexVar {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl PartialOrd for IndexVar {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IndexVar {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id.cmp(&other.id)
    }
}

impl fmt::Debug for IndexVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

impl fmt::Display for IndexVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// A tensor variable, identified by name.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorVar {
    name: Arc<str>,
    order: usize,
}

impl TensorVar {
    pub fn new(name: &str, order: usize) -> Self {
        TensorVar { name: Arc::from(name), order }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

impl fmt::Debug for TensorVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Mul,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Mul => "*",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Mul => a * b,
        }
    }
}

/// Algebraic properties of the binary operators, consulted by the
/// transformations' precondition checks.
#[derive(Clone, Debug)]
pub struct OperatorTable {
    identity: HashMap<BinaryOp, f64>,
    associative: HashMap<BinaryOp, bool>,
    // (outer, inner): outer distributes over inner
    distributes: HashMap<(BinaryOp, BinaryOp), bool>,
}

impl Default for OperatorTable {
    fn default() -> Self {
        let identity = HashMap::from([(BinaryOp::Add, 0.0), (BinaryOp::Mul, 1.0)]);
        let associative = HashMap::from([(BinaryOp::Add, true), (BinaryOp::Mul, true)]);
        let distributes = HashMap::from([
            ((BinaryOp::Mul, BinaryOp::Add), true),
            ((BinaryOp::Add, BinaryOp::Mul), false),
            ((BinaryOp::Add, BinaryOp::Add), false),
            ((BinaryOp::Mul, BinaryOp::Mul), false),
        ]);
        OperatorTable { identity, associative, distributes }
    }
}

impl OperatorTable {
    pub fn identity(&self, op: BinaryOp) -> f64 {
        self.identity[&op]
    }

    pub fn is_associative(&self, op: BinaryOp) -> bool {
        self.associative.get(&op).copied().unwrap_or(false)
    }

    pub fn distributes_over(&self, outer: BinaryOp, inner: BinaryOp) -> bool {
        self.distributes.get(&(outer, inner)).copied().unwrap_or(false)
    }

    pub fn set_associative(&mut self, op: BinaryOp, value: bool) {
        self.associative.insert(op, value);
    }

    pub fn set_distributes(&mut self, outer: BinaryOp, inner: BinaryOp, value: bool) {
        self.distributes.insert((outer, inner), value);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub tensor: TensorVar,
    pub indices: Vec<IndexVar>,
}

impl Access {
    pub fn new(tensor: TensorVar, indices: Vec<IndexVar>) -> Self {
        Access { tensor, indices }
    }

    pub fn scalar(name: &str) -> Self {
        Access { tensor: TensorVar::new(name, 0), indices: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IndexExpr {
    Literal(f64),
    Access(Access),
    Binary { op: BinaryOp, lhs: Box<IndexExpr>, rhs: Box<IndexExpr> },
    /// Sum of `body` over every value of `vars`. Only valid in index notation.
    Reduction { vars: Vec<IndexVar>, body: Box<IndexExpr> },
}

impl IndexExpr {
    pub fn access(tensor: &TensorVar, indices: &[IndexVar]) -> Self {
        IndexExpr::Access(Access::new(tensor.clone(), indices.to_vec()))
    }

    pub fn binary(op: BinaryOp, lhs: IndexExpr, rhs: IndexExpr) -> Self {
        IndexExpr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn add(lhs: IndexExpr, rhs: IndexExpr) -> Self {
        Self::binary(BinaryOp::Add, lhs, rhs)
    }

    pub fn mul(lhs: IndexExpr, rhs: IndexExpr) -> Self {
        Self::binary(BinaryOp::Mul, lhs, rhs)
    }

    pub fn sum(vars: &[IndexVar], body: IndexExpr) -> Self {
        IndexExpr::Reduction { vars: vars.to_vec(), body: Box::new(body) }
    }

    /// Free index variables in order of first appearance.
    pub fn free_index_vars(&self) -> Vec<IndexVar> {
        let mut out = Vec::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<IndexVar>, out: &mut Vec<IndexVar>) {
        match self {
            IndexExpr::Literal(_) => {}
            IndexExpr::Access(a) => {
                for v in &a.indices {
                    if !bound.contains(v) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
            IndexExpr::Binary { lhs, rhs, .. } => {
                lhs.collect_free(bound, out);
                rhs.collect_free(bound, out);
            }
            IndexExpr::Reduction { vars, body } => {
                let n = bound.len();
                bound.extend(vars.iter().cloned());
                body.collect_free(bound, out);
                bound.truncate(n);
            }
        }
    }

    /// Every access in left-to-right order.
    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.visit_accesses(&mut |a| out.push(a));
        out
    }

    pub fn visit_accesses<'a>(&'a self, f: &mut dyn FnMut(&'a Access)) {
        match self {
            IndexExpr::Literal(_) => {}
            IndexExpr::Access(a) => f(a),
            IndexExpr::Binary { lhs, rhs, .. } => {
                lhs.visit_accesses(f);
                rhs.visit_accesses(f);
            }
            IndexExpr::Reduction { body, .. } => body.visit_accesses(f),
        }
    }

    pub fn uses_tensor(&self, name: &str) -> bool {
        self.accesses().iter().any(|a| a.tensor.name() == name)
    }

    pub fn uses_var(&self, var: &IndexVar) -> bool {
        self.accesses().iter().any(|a| a.indices.contains(var))
    }

    pub fn contains_reduction(&self) -> bool {
        match self {
            IndexExpr::Reduction { .. } => true,
            IndexExpr::Binary { lhs, rhs, .. } => lhs.contains_reduction() || rhs.contains_reduction(),
            _ => false,
        }
    }

    /// Sub-expression at `path` (0 = lhs / reduction body, 1 = rhs).
    pub fn at(&self, path: &[usize]) -> Option<&IndexExpr> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (IndexExpr::Binary { lhs, .. }, 0) => lhs.at(rest),
            (IndexExpr::Binary { rhs, .. }, 1) => rhs.at(rest),
            (IndexExpr::Reduction { body, .. }, 0) => body.at(rest),
            _ => None,
        }
    }

    pub fn at_mut(&mut self, path: &[usize]) -> Option<&mut IndexExpr> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (IndexExpr::Binary { lhs, .. }, 0) => lhs.at_mut(rest),
            (IndexExpr::Binary { rhs, .. }, 1) => rhs.at_mut(rest),
            (IndexExpr::Reduction { body, .. }, 0) => body.at_mut(rest),
            _ => None,
        }
    }

    /// Paths of every sub-expression structurally equal to `pattern`, in
    /// pre-order (leftmost, outermost first).
    pub fn find(&self, pattern: &IndexExpr) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.find_into(pattern, &mut Vec::new(), &mut out);
        out
    }

    fn find_into(&self, pattern: &IndexExpr, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if self.same_shape(pattern) {
            out.push(path.clone());
        }
        match self {
            IndexExpr::Binary { lhs, rhs, .. } => {
                path.push(0);
                lhs.find_into(pattern, path, out);
                path.pop();
                path.push(1);
                rhs.find_into(pattern, path, out);
                path.pop();
            }
            IndexExpr::Reduction { body, .. } => {
                path.push(0);
                body.find_into(pattern, path, out);
                path.pop();
            }
            _ => {}
        }
    }

    /// Structural equality comparing index variables and tensors by name.
    pub fn same_shape(&self, other: &IndexExpr) -> bool {
        match (self, other) {
            (IndexExpr::Literal(a), IndexExpr::Literal(b)) => a == b,
            (IndexExpr::Access(a), IndexExpr::Access(b)) => access_same_names(a, b),
            (IndexExpr::Binary { op: o1, lhs: l1, rhs: r1 }, IndexExpr::Binary { op: o2, lhs: l2, rhs: r2 }) => {
                o1 == o2 && l1.same_shape(l2) && r1.same_shape(r2)
            }
            (IndexExpr::Reduction { vars: v1, body: b1 }, IndexExpr::Reduction { vars: v2, body: b2 }) => {
                v1.len() == v2.len() && v1.iter().zip(v2).all(|(a, b)| a.name() == b.name()) && b1.same_shape(b2)
            }
            _ => false,
        }
    }
}

fn access_same_names(a: &Access, b: &Access) -> bool {
    a.tensor.name() == b.tensor.name()
        && a.indices.len() == b.indices.len()
        && a.indices.iter().zip(&b.indices).all(|(x, y)| x.name() == y.name())
}

/// An index notation statement: `lhs = rhs`, where `rhs` may contain reductions.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceExpr {
    pub lhs: Access,
    pub rhs: IndexExpr,
}

impl SourceExpr {
    pub fn new(lhs: Access, rhs: IndexExpr) -> Self {
        SourceExpr { lhs, rhs }
    }

    /// Every tensor accessed, result first, without duplicates.
    pub fn tensors(&self) -> Vec<TensorVar> {
        let mut out = vec![self.lhs.tensor.clone()];
        for a in self.rhs.accesses() {
            if !out.contains(&a.tensor) {
                out.push(a.tensor.clone());
            }
        }
        out
    }

    /// Index variables in order of first appearance (result indices first).
    pub fn index_vars(&self) -> Vec<IndexVar> {
        let mut out = self.lhs.indices.clone();
        fn walk(e: &IndexExpr, out: &mut Vec<IndexVar>) {
            match e {
                IndexExpr::Literal(_) => {}
                IndexExpr::Access(a) => {
                    for v in &a.indices {
                        if !out.contains(v) {
                            out.push(v.clone());
                        }
                    }
                }
                IndexExpr::Binary { lhs, rhs, .. } => {
                    walk(lhs, out);
                    walk(rhs, out);
                }
                IndexExpr::Reduction { vars, body } => {
                    for v in vars {
                        if !out.contains(v) {
                            out.push(v.clone());
                        }
                    }
                    walk(body, out);
                }
            }
        }
        walk(&self.rhs, &mut out);
        out
    }
}

/// A concrete index notation statement.
#[derive(Clone, Debug, PartialEq)]
pub enum IndexStmt {
    /// `lhs = rhs` when `op` is `None`, otherwise the incrementing `lhs op= rhs`.
    Assign { lhs: Access, op: Option<BinaryOp>, rhs: IndexExpr },
    Forall { var: IndexVar, body: Box<IndexStmt> },
    Where { consumer: Box<IndexStmt>, producer: Box<IndexStmt> },
    Sequence(Vec<IndexStmt>),
}

impl IndexStmt {
    pub fn assign(lhs: Access, rhs: IndexExpr) -> Self {
        IndexStmt::Assign { lhs, op: None, rhs }
    }

    pub fn increment(lhs: Access, op: BinaryOp, rhs: IndexExpr) -> Self {
        IndexStmt::Assign { lhs, op: Some(op), rhs }
    }

    pub fn forall(var: IndexVar, body: IndexStmt) -> Self {
        IndexStmt::Forall { var, body: Box::new(body) }
    }

    /// Nested foralls, outermost first.
    pub fn foralls(vars: &[IndexVar], body: IndexStmt) -> Self {
        vars.iter().rev().fold(body, |b, v| IndexStmt::forall(v.clone(), b))
    }

    pub fn where_(consumer: IndexStmt, producer: IndexStmt) -> Self {
        IndexStmt::Where { consumer: Box::new(consumer), producer: Box::new(producer) }
    }

    /// The tensor this statement modifies (that of its first assignment
    /// outside any producer).
    pub fn modified_tensor(&self) -> &TensorVar {
        match self {
            IndexStmt::Assign { lhs, .. } => &lhs.tensor,
            IndexStmt::Forall { body, .. } => body.modified_tensor(),
            IndexStmt::Where { consumer, .. } => consumer.modified_tensor(),
            IndexStmt::Sequence(stages) => stages[0].modified_tensor(),
        }
    }

    pub fn children(&self) -> Vec<&IndexStmt> {
        match self {
            IndexStmt::Assign { .. } => vec![],
            IndexStmt::Forall { body, .. } => vec![body],
            IndexStmt::Where { consumer, producer } => vec![consumer, producer],
            IndexStmt::Sequence(stages) => stages.iter().collect(),
        }
    }

    pub fn at(&self, path: &[usize]) -> Option<&IndexStmt> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (IndexStmt::Forall { body, .. }, 0) => body.at(rest),
            (IndexStmt::Where { consumer, .. }, 0) => consumer.at(rest),
            (IndexStmt::Where { producer, .. }, 1) => producer.at(rest),
            (IndexStmt::Sequence(stages), i) => stages.get(i)?.at(rest),
            _ => None,
        }
    }

    pub fn at_mut(&mut self, path: &[usize]) -> Option<&mut IndexStmt> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (IndexStmt::Forall { body, .. }, 0) => body.at_mut(rest),
            (IndexStmt::Where { consumer, .. }, 0) => consumer.at_mut(rest),
            (IndexStmt::Where { producer, .. }, 1) => producer.at_mut(rest),
            (IndexStmt::Sequence(stages), i) => stages.get_mut(i)?.at_mut(rest),
            _ => None,
        }
    }

    /// Paths of every assignment, in left-to-right (consumer before producer) order.
    pub fn assignment_paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.assignment_paths_into(&mut Vec::new(), &mut out);
        out
    }

    fn assignment_paths_into(&self, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if let IndexStmt::Assign { .. } = self {
            out.push(path.clone());
            return;
        }
        for (i, c) in self.children().into_iter().enumerate() {
            path.push(i);
            c.assignment_paths_into(path, out);
            path.pop();
        }
    }

    /// Free index variables (used but not bound by a forall inside `self`),
    /// in order of first appearance.
    pub fn free_index_vars(&self) -> Vec<IndexVar> {
        let mut out = Vec::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<IndexVar>, out: &mut Vec<IndexVar>) {
        match self {
            IndexStmt::Assign { lhs, rhs, .. } => {
                for v in lhs.indices.iter().chain(rhs.free_index_vars().iter()) {
                    if !bound.contains(v) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
            IndexStmt::Forall { var, body } => {
                bound.push(var.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
            _ => {
                for c in self.children() {
                    c.collect_free(bound, out);
                }
            }
        }
    }

    /// True if `var` appears anywhere in the statement, bound or free.
    pub fn uses_var(&self, var: &IndexVar) -> bool {
        match self {
            IndexStmt::Assign { lhs, rhs, .. } => lhs.indices.contains(var) || rhs.uses_var(var),
            IndexStmt::Forall { var: v, body } => v == var || body.uses_var(var),
            _ => self.children().iter().any(|c| c.uses_var(var)),
        }
    }

    /// True if the tensor is read or written anywhere in the statement.
    pub fn uses_tensor(&self, name: &str) -> bool {
        match self {
            IndexStmt::Assign { lhs, rhs, .. } => lhs.tensor.name() == name || rhs.uses_tensor(name),
            _ => self.children().iter().any(|c| c.uses_tensor(name)),
        }
    }

    pub fn contains_sequence(&self) -> bool {
        match self {
            IndexStmt::Sequence(_) => true,
            _ => self.children().iter().any(|c| c.contains_sequence()),
        }
    }

    /// Names of every tensor accessed, in order of first appearance.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.visit_assignments(&mut |lhs, _, rhs| {
            for a in std::iter::once(lhs).chain(rhs.accesses()) {
                if !out.iter().any(|n| n == a.tensor.name()) {
                    out.push(a.tensor.name().to_string());
                }
            }
        });
        out
    }

    /// Every tensor accessed, in order of first appearance.
    pub fn tensors(&self) -> Vec<TensorVar> {
        let mut out: Vec<TensorVar> = Vec::new();
        self.visit_assignments(&mut |lhs, _, rhs| {
            for a in std::iter::once(lhs).chain(rhs.accesses()) {
                if !out.contains(&a.tensor) {
                    out.push(a.tensor.clone());
                }
            }
        });
        out
    }

    /// Every index variable, in order of first appearance.
    pub fn index_vars(&self) -> Vec<IndexVar> {
        let mut out = Vec::new();
        fn walk(s: &IndexStmt, out: &mut Vec<IndexVar>) {
            match s {
                IndexStmt::Assign { lhs, rhs, .. } => {
                    let mut vars = lhs.indices.clone();
                    vars.extend(rhs.free_index_vars());
                    for v in vars {
                        if !out.contains(&v) {
                            out.push(v);
                        }
                    }
                }
                IndexStmt::Forall { var, body } => {
                    if !out.contains(var) {
                        out.push(var.clone());
                    }
                    walk(body, out);
                }
                _ => {
                    for c in s.children() {
                        walk(c, out);
                    }
                }
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn visit_assignments<'a>(&'a self, f: &mut dyn FnMut(&'a Access, Option<BinaryOp>, &'a IndexExpr)) {
        match self {
            IndexStmt::Assign { lhs, op, rhs } => f(lhs, *op, rhs),
            _ => {
                for c in self.children() {
                    c.visit_assignments(f);
                }
            }
        }
    }

    /// Names of tensors modified by producers of where statements.
    pub fn produced_tensors(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk(s: &IndexStmt, out: &mut Vec<String>) {
            if let IndexStmt::Where { producer, .. } = s {
                let name = producer.modified_tensor().name().to_string();
                if !out.contains(&name) {
                    out.push(name);
                }
            }
            for c in s.children() {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }

    /// Structural equality up to a consistent renaming of index variables.
    pub fn alpha_eq(&self, other: &IndexStmt) -> bool {
        let mut map = HashMap::new();
        let mut rev = HashMap::new();
        alpha_stmt(self, other, &mut map, &mut rev)
    }

    /// Variables bound by a chain of directly nested foralls at the top of
    /// `self`, and the statement under them.
    pub fn forall_chain(&self) -> (Vec<IndexVar>, &IndexStmt) {
        let mut vars = Vec::new();
        let mut s = self;
        while let IndexStmt::Forall { var, body } = s {
            vars.push(var.clone());
            s = body;
        }
        (vars, s)
    }
}

fn alpha_var(a: &IndexVar, b: &IndexVar, map: &mut HashMap<IndexVar, IndexVar>, rev: &mut HashMap<IndexVar, IndexVar>) -> bool {
    match (map.get(a), rev.get(b)) {
        (Some(x), Some(y)) => x == b && y == a,
        (None, None) => {
            map.insert(a.clone(), b.clone());
            rev.insert(b.clone(), a.clone());
            true
        }
        _ => false,
    }
}

fn alpha_access(a: &Access, b: &Access, map: &mut HashMap<IndexVar, IndexVar>, rev: &mut HashMap<IndexVar, IndexVar>) -> bool {
    a.tensor == b.tensor
        && a.indices.len() == b.indices.len()
        && a.indices.iter().zip(&b.indices).all(|(x, y)| alpha_var(x, y, map, rev))
}

fn alpha_expr(a: &IndexExpr, b: &IndexExpr, map: &mut HashMap<IndexVar, IndexVar>, rev: &mut HashMap<IndexVar, IndexVar>) -> bool {
    match (a, b) {
        (IndexExpr::Literal(x), IndexExpr::Literal(y)) => x == y || (x.is_nan() && y.is_nan()),
        (IndexExpr::Access(x), IndexExpr::Access(y)) => alpha_access(x, y, map, rev),
        (IndexExpr::Binary { op: o1, lhs: l1, rhs: r1 }, IndexExpr::Binary { op: o2, lhs: l2, rhs: r2 }) => {
            o1 == o2 && alpha_expr(l1, l2, map, rev) && alpha_expr(r1, r2, map, rev)
        }
        (IndexExpr::Reduction { vars: v1, body: b1 }, IndexExpr::Reduction { vars: v2, body: b2 }) => {
            v1.len() == v2.len() && v1.iter().zip(v2).all(|(x, y)| alpha_var(x, y, map, rev)) && alpha_expr(b1, b2, map, rev)
        }
        _ => false,
    }
}

fn alpha_stmt(a: &IndexStmt, b: &IndexStmt, map: &mut HashMap<IndexVar, IndexVar>, rev: &mut HashMap<IndexVar, IndexVar>) -> bool {
    match (a, b) {
        (IndexStmt::Assign { lhs: l1, op: o1, rhs: r1 }, IndexStmt::Assign { lhs: l2, op: o2, rhs: r2 }) => {
            o1 == o2 && alpha_access(l1, l2, map, rev) && alpha_expr(r1, r2, map, rev)
        }
        (IndexStmt::Forall { var: v1, body: b1 }, IndexStmt::Forall { var: v2, body: b2 }) => {
            alpha_var(v1, v2, map, rev) && alpha_stmt(b1, b2, map, rev)
        }
        (IndexStmt::Where { consumer: c1, producer: p1 }, IndexStmt::Where { consumer: c2, producer: p2 }) => {
            alpha_stmt(c1, c2, map, rev) && alpha_stmt(p1, p2, map, rev)
        }
        (IndexStmt::Sequence(s1), IndexStmt::Sequence(s2)) => {
            s1.len() == s2.len() && s1.iter().zip(s2).all(|(x, y)| alpha_stmt(x, y, map, rev))
        }
        _ => false,
    }
}

/// Distinct variables of `vars` in order, as a set.
pub fn var_set(vars: &[IndexVar]) -> BTreeSet<IndexVar> {
    vars.iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(names: &[&str]) -> Vec<IndexVar> {
        names.iter().map(|n| IndexVar::new(n)).collect()
    }

    #[test]
    fn free_vars_of_expressions() {
        let v = vars(&["i", "k", "j"]);
        let b = TensorVar::new("B", 2);
        let c = TensorVar::new("C", 2);
        let e = IndexExpr::mul(IndexExpr::access(&b, &[v[0].clone(), v[1].clone()]), IndexExpr::access(&c, &[v[1].clone(), v[2].clone()]));
        assert_eq!(e.free_index_vars(), v);
        assert!(IndexExpr::Literal(2.0).free_index_vars().is_empty());
    }

    #[test]
    fn free_vars_skip_bound() {
        let v = vars(&["i", "j"]);
        let w = TensorVar::new("w", 1);
        let b = TensorVar::new("B", 2);
        let s = IndexStmt::forall(
            v[1].clone(),
            IndexStmt::assign(Access::new(w, vec![v[1].clone()]), IndexExpr::access(&b, &v)),
        );
        assert_eq!(s.free_index_vars(), vec![v[0].clone()]);
    }

    #[test]
    fn same_names_are_distinct_vars() {
        let a = IndexVar::new("i");
        let b = IndexVar::new("i");
        assert_ne!(a, b);
        assert_eq!(a.name(), b.name());
    }

    #[test]
    fn alpha_equivalence() {
        let t = TensorVar::new("a", 1);
        let mk = || {
            let i = IndexVar::new("i");
            IndexStmt::forall(i.clone(), IndexStmt::assign(Access::new(t.clone(), vec![i]), IndexExpr::Literal(1.0)))
        };
        assert!(mk().alpha_eq(&mk()));
        assert_ne!(mk(), mk());
    }

    #[test]
    fn operator_table_defaults() {
        let t = OperatorTable::default();
        assert!(t.distributes_over(BinaryOp::Mul, BinaryOp::Add));
        assert!(!t.distributes_over(BinaryOp::Add, BinaryOp::Mul));
        assert_eq!(t.identity(BinaryOp::Mul), 1.0);
    }
}
