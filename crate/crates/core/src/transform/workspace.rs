use crate::notation::{Access, BinaryOp, IndexExpr, IndexStmt, IndexVar, OperatorTable, TensorVar};
use crate::storage::TensorFormat;

use super::{ensure_well_formed, fresh_name, take_at, Location, TransformError};

/// Path of a sub-expression inside an assignment's right-hand side
/// (0 = left operand, 1 = right operand).
pub type ExprPath = Vec<usize>;

/// Where and how to introduce a workspace: the assignment at `stmt_path`,
/// its sub-expression at `expr_path`, the workspace's index variables and
/// its format.
#[derive(Clone, Debug)]
pub struct WorkspaceDirective {
    pub stmt_path: Location,
    pub expr_path: ExprPath,
    pub vars: Vec<IndexVar>,
    pub format: TensorFormat,
}

impl WorkspaceDirective {
    pub fn dense(stmt_path: Location, expr_path: ExprPath, vars: Vec<IndexVar>) -> Self {
        let format = TensorFormat::dense(vars.len());
        WorkspaceDirective { stmt_path, expr_path, vars, format }
    }
}

/// Precomputes a sub-expression into a fresh dense workspace `wN`, then
/// pushes the resulting where statement out of the loops it does not need.
pub fn apply_workspace(stmt: &IndexStmt, d: &WorkspaceDirective) -> Result<IndexStmt, TransformError> {
    apply_workspace_with_table(stmt, d, &OperatorTable::default())
}

pub fn apply_workspace_with_table(
    stmt: &IndexStmt,
    d: &WorkspaceDirective,
    table: &OperatorTable,
) -> Result<IndexStmt, TransformError> {
    let (out, _) = introduce(stmt, d, Some(table))?;
    ensure_well_formed(&out)?;
    Ok(out)
}

fn assignment_at<'a>(stmt: &'a IndexStmt, path: &[usize]) -> Result<(&'a Access, Option<BinaryOp>, &'a IndexExpr), TransformError> {
    match stmt.at(path) {
        Some(IndexStmt::Assign { lhs, op, rhs }) => Ok((lhs, *op, rhs)),
        _ => Err(TransformError::InvalidLocation(path.to_vec())),
    }
}

fn expr_at<'a>(rhs: &'a IndexExpr, path: &[usize]) -> Result<&'a IndexExpr, TransformError> {
    rhs.at(path).ok_or_else(|| TransformError::InvalidExprPath(format!("{path:?} in `{rhs}`")))
}

/// The innermost sequence stage containing `path`, or the root.
fn sequence_scope(stmt: &IndexStmt, path: &[usize]) -> Location {
    let mut scope = Vec::new();
    for k in 0..path.len() {
        if let Some(IndexStmt::Sequence(_)) = stmt.at(&path[..k]) {
            scope = path[..=k].to_vec();
        }
    }
    scope
}

/// Follows forall bodies and where consumers down to an assignment,
/// collecting the forall variables on the way.
fn descend(stmt: &IndexStmt, path: &mut Location, vars: &mut Vec<IndexVar>) {
    let mut s = stmt;
    loop {
        match s {
            IndexStmt::Forall { var, body } => {
                vars.push(var.clone());
                path.push(0);
                s = body;
            }
            IndexStmt::Where { consumer, .. } => {
                path.push(0);
                s = consumer;
            }
            _ => return,
        }
    }
}

/// Foralls re-executing the node at `path` while its tensor persists, and
/// whether a sequence shares that tensor.
fn owning_foralls(stmt: &IndexStmt, path: &[usize]) -> (Vec<IndexVar>, bool) {
    let mut owning = Vec::new();
    let mut in_sequence = false;
    let mut s = stmt;
    for &step in path {
        match s {
            IndexStmt::Forall { var, .. } => owning.push(var.clone()),
            IndexStmt::Where { .. } if step == 1 => {
                owning.clear();
                in_sequence = false;
            }
            IndexStmt::Sequence(_) => in_sequence = true,
            _ => {}
        }
        s = s.at(&[step]).expect("valid path");
    }
    (owning, in_sequence)
}

/// Introduces the workspace and pushes it outwards. Returns the rewritten
/// statement and the location of the where statement that produces the
/// workspace. A `table` enables the distributivity check.
fn introduce(
    stmt: &IndexStmt,
    d: &WorkspaceDirective,
    table: Option<&OperatorTable>,
) -> Result<(IndexStmt, Location), TransformError> {
    let (lhs, op, rhs) = assignment_at(stmt, &d.stmt_path)?;
    let e = expr_at(rhs, &d.expr_path)?;
    let scope = sequence_scope(stmt, &d.stmt_path);
    if stmt.at(&scope).is_some_and(|s| s.contains_sequence()) {
        return Err(TransformError::SequencePresent);
    }
    if let (Some(table), Some(inc)) = (table, op) {
        for k in 0..d.expr_path.len() {
            if let Some(IndexExpr::Binary { op: outer, .. }) = rhs.at(&d.expr_path[..k]) {
                if !table.distributes_over(*outer, inc) {
                    return Err(TransformError::DistributivityViolated { op: *outer, over: inc });
                }
            }
        }
    }
    if d.vars.is_empty() {
        return Err(TransformError::EmptyWorkspaceVars);
    }
    let free = e.free_index_vars();
    for (k, v) in d.vars.iter().enumerate() {
        if d.vars[..k].contains(v) {
            return Err(TransformError::InvalidDirective(format!("index variable `{v}` is listed twice")));
        }
        if !free.contains(v) {
            return Err(TransformError::VariableNotInScope(v.name().to_string()));
        }
    }
    if !d.format.is_all_dense() || d.format.order() != d.vars.len() {
        return Err(TransformError::UnsupportedWorkspaceFormat(d.format.to_string()));
    }

    let ws = TensorVar::new(&fresh_name(stmt, "w"), d.vars.len());
    let wacc = Access::new(ws, d.vars.clone());
    let mut new_rhs = rhs.clone();
    *new_rhs.at_mut(&d.expr_path).unwrap() = IndexExpr::Access(wacc.clone());
    let consumer = IndexStmt::Assign { lhs: lhs.clone(), op, rhs: new_rhs };
    let producer = IndexStmt::Assign { lhs: wacc, op, rhs: e.clone() };
    let mut out = stmt.clone();
    *out.at_mut(&d.stmt_path).unwrap() = IndexStmt::where_(consumer, producer);

    let mut at = d.stmt_path.clone();
    while let Some((&last, parent_path)) = at.split_last() {
        let parent_path = parent_path.to_vec();
        let new = match out.at(&parent_path).unwrap() {
            IndexStmt::Forall { var, body } => {
                let IndexStmt::Where { consumer, producer } = &**body else { unreachable!() };
                let (c, p) = ((**consumer).clone(), (**producer).clone());
                match (consumer.uses_var(var), producer.uses_var(var)) {
                    (true, true) if d.vars.contains(var) => {
                        IndexStmt::where_(IndexStmt::forall(var.clone(), c), IndexStmt::forall(var.clone(), p))
                    }
                    (true, false) => IndexStmt::where_(IndexStmt::forall(var.clone(), c), p),
                    (false, true) => IndexStmt::where_(c, IndexStmt::forall(var.clone(), p)),
                    _ => break,
                }
            }
            IndexStmt::Where { consumer, producer: outer } if last == 0 => {
                let IndexStmt::Where { consumer: c, producer: p } = &**consumer else { unreachable!() };
                if c.uses_tensor(outer.modified_tensor().name()) {
                    break;
                }
                IndexStmt::where_((**c).clone(), IndexStmt::where_((**p).clone(), (**outer).clone()))
            }
            _ => break,
        };
        *out.at_mut(&parent_path).unwrap() = new;
        at = parent_path;
    }

    // Increments that now write each component exactly once become assignments.
    let mut ppath = at.clone();
    ppath.push(1);
    let mut pvars = Vec::new();
    descend(out.at(&ppath).unwrap(), &mut ppath, &mut pvars);
    if let Some(IndexStmt::Assign { op: op @ Some(BinaryOp::Add), .. }) = out.at_mut(&ppath) {
        if pvars.iter().all(|v| d.vars.contains(v)) {
            *op = None;
        }
    }
    let mut cpath = at.clone();
    cpath.push(0);
    descend(out.at(&cpath).unwrap(), &mut cpath, &mut Vec::new());
    let (owning, in_sequence) = owning_foralls(&out, &cpath);
    if let Some(IndexStmt::Assign { lhs, op: op @ Some(BinaryOp::Add), .. }) = out.at_mut(&cpath) {
        if !in_sequence && owning.iter().all(|v| lhs.indices.contains(v)) {
            *op = None;
        }
    }
    Ok((out, at))
}

/// Like [`apply_workspace`], but reuses the result as the workspace: an
/// operand `E` of the assignment `A op= E ⊕ R` is computed directly into `A`,
/// followed by `A ⊕= R`.
pub fn apply_workspace_with_reuse(stmt: &IndexStmt, d: &WorkspaceDirective) -> Result<IndexStmt, TransformError> {
    let (lhs, op, rhs) = assignment_at(stmt, &d.stmt_path)?;
    let e = expr_at(rhs, &d.expr_path)?;
    if d.expr_path.len() > 1 {
        return Err(TransformError::ReusePrecondition2(format!(
            "`{e}` is nested {} operators deep in `{rhs}`",
            d.expr_path.len()
        )));
    }

    let (scratch, at) = introduce(stmt, d, None)?;
    let IndexStmt::Where { consumer, producer } = scratch.at(&at).unwrap() else { unreachable!() };
    let (cchain, cbody) = consumer.forall_chain();
    let (pchain, pbody) = producer.forall_chain();
    let names = |vs: &[IndexVar]| vs.iter().map(|v| v.name().to_string()).collect::<Vec<_>>();
    if cchain != pchain || !matches!(cbody, IndexStmt::Assign { .. }) || !matches!(pbody, IndexStmt::Assign { .. }) {
        let producer_vars = match pbody {
            IndexStmt::Assign { .. } => names(&pchain),
            _ => {
                let mut vs = Vec::new();
                descend(producer, &mut Vec::new(), &mut vs);
                names(&vs)
            }
        };
        return Err(TransformError::ReusePrecondition1 { consumer: names(&cchain), producer: producer_vars });
    }
    // the whole right-hand side: the result already is the workspace
    let IndexExpr::Binary { op: cop, lhs: l, rhs: r } = rhs else {
        return Ok(stmt.clone());
    };
    if d.expr_path.is_empty() {
        return Ok(stmt.clone());
    }
    if let Some(inc) = op {
        if inc != *cop {
            return Err(TransformError::ReusePrecondition2(format!(
                "`{e}` is an operand of `{}` but the assignment increments with `{}`",
                cop.symbol(),
                inc.symbol()
            )));
        }
    }
    let sibling = if d.expr_path[0] == 0 { r } else { l };

    let first = IndexStmt::foralls(&cchain, IndexStmt::Assign { lhs: lhs.clone(), op, rhs: e.clone() });
    let second = IndexStmt::foralls(&cchain, IndexStmt::increment(lhs.clone(), *cop, (**sibling).clone()));
    let mut out = scratch.clone();
    match at.split_last() {
        Some((&k, parent)) if matches!(out.at(parent), Some(IndexStmt::Sequence(_))) => {
            let Some(IndexStmt::Sequence(stages)) = out.at_mut(parent) else { unreachable!() };
            stages.splice(k..=k, [first, second]);
        }
        _ => {
            take_at(&mut out, &at)?;
            *out.at_mut(&at).unwrap() = IndexStmt::Sequence(vec![first, second]);
        }
    }
    ensure_well_formed(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::{parse_concrete, print_math, print_stmt};

    fn var(s: &IndexStmt, name: &str) -> IndexVar {
        s.index_vars().into_iter().find(|v| v.name() == name).unwrap()
    }

    fn directive(s: &IndexStmt, stmt_path: &[usize], expr_path: &[usize], vars: &[&str]) -> WorkspaceDirective {
        WorkspaceDirective::dense(stmt_path.to_vec(), expr_path.to_vec(), vars.iter().map(|n| var(s, n)).collect())
    }

    #[test]
    fn matmul_row_workspace() {
        let s = parse_concrete("forall(i,k,j) A(i,j) += B(i,k)*C(k,j)").unwrap();
        let out = apply_workspace(&s, &directive(&s, &[0, 0, 0], &[], &["j"])).unwrap();
        assert_eq!(print_stmt(&out), "forall(i) (forall(j) A(i,j) = w0(j)) where (forall(k,j) w0(j) += B(i,k)*C(k,j))");
    }

    #[test]
    fn row_dot_workspace() {
        let s = parse_concrete("forall(i,j) a(i) += B(i,j)*C(i,j)").unwrap();
        let out = apply_workspace(&s, &directive(&s, &[0, 0], &[0], &["j"])).unwrap();
        assert_eq!(print_math(&out), "∀i (∀j a_i += w0_j C_ij) where (∀j w0_j := B_ij)");
    }

    #[test]
    fn mttkrp_two_workspaces() {
        let s = parse_concrete("forall(i,k,l,j) A(i,j) += B(i,k,l)*C(l,j)*D(k,j)").unwrap();
        let first = apply_workspace(&s, &directive(&s, &[0, 0, 0, 0], &[0], &["j"])).unwrap();
        assert_eq!(print_math(&first), "∀ik (∀j A_ij += w0_j D_kj) where (∀lj w0_j += B_ikl C_lj)");
        let second = apply_workspace(&first, &directive(&first, &[0, 0, 0, 0], &[], &["j"])).unwrap();
        assert_eq!(
            print_math(&second),
            "∀i (∀j A_ij := w1_j) where (∀k (∀j w1_j += w0_j D_kj) where (∀lj w0_j += B_ikl C_lj))"
        );
    }

    #[test]
    fn matadd_with_reuse() {
        let s = parse_concrete("forall(i,j) A(i,j) = B(i,j) + C(i,j)").unwrap();
        let ws = apply_workspace(&s, &directive(&s, &[0, 0], &[], &["j"])).unwrap();
        assert_eq!(print_math(&ws), "∀i (∀j A_ij := w0_j) where (∀j w0_j := B_ij + C_ij)");
        let out = apply_workspace_with_reuse(&ws, &directive(&ws, &[0, 1, 0], &[0], &["j"])).unwrap();
        assert_eq!(print_math(&out), "∀i (∀j A_ij := w0_j) where (∀j w0_j := B_ij ; ∀j w0_j += C_ij)");
    }

    #[test]
    fn vector_add_reuse() {
        let s = parse_concrete("forall(i) a(i) = b(i) + c(i)").unwrap();
        let out = apply_workspace_with_reuse(&s, &directive(&s, &[0], &[0], &["i"])).unwrap();
        assert_eq!(print_math(&out), "(∀i a_i := b_i ; ∀i a_i += c_i)");
        let again = apply_workspace_with_reuse(&out, &directive(&out, &[1, 0], &[], &["i"])).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn mttkrp_reuse_would_hoist() {
        let s = parse_concrete("forall(i,k,l,j) A(i,j) += B(i,k,l)*C(l,j)*D(k,j)").unwrap();
        let err = apply_workspace_with_reuse(&s, &directive(&s, &[0, 0, 0, 0], &[0], &["j"])).unwrap_err();
        assert!(matches!(err, TransformError::ReusePrecondition1 { .. }), "{err}");
        let first = apply_workspace(&s, &directive(&s, &[0, 0, 0, 0], &[0], &["j"])).unwrap();
        let err = apply_workspace_with_reuse(&first, &directive(&first, &[0, 0, 0, 0], &[], &["j"])).unwrap_err();
        assert!(matches!(err, TransformError::ReusePrecondition1 { .. }), "{err}");
    }

    #[test]
    fn reuse_needs_shallow_matching_operator() {
        let s = parse_concrete("forall(i,j) a(i) += B(i,j)*C(i,j)").unwrap();
        let err = apply_workspace_with_reuse(&s, &directive(&s, &[0, 0], &[0], &["j"])).unwrap_err();
        assert!(matches!(err, TransformError::ReusePrecondition2(_)));
        let s = parse_concrete("forall(i) a(i) = b(i)*c(i) + d(i)").unwrap();
        let err = apply_workspace_with_reuse(&s, &directive(&s, &[0], &[0, 0], &["i"])).unwrap_err();
        assert!(matches!(err, TransformError::ReusePrecondition2(_)));
    }

    #[test]
    fn precondition_errors() {
        let s = parse_concrete("forall(i,j) a(i) += B(i,j) + C(i,j)").unwrap();
        let err = apply_workspace(&s, &directive(&s, &[0, 0], &[0], &["j"])).unwrap_err();
        assert_eq!(err, TransformError::DistributivityViolated { op: BinaryOp::Add, over: BinaryOp::Add });
        let s = parse_concrete("forall(i,j) a(i) += B(i,j)*c(i)").unwrap();
        let err = apply_workspace(&s, &directive(&s, &[0, 0], &[1], &["j"])).unwrap_err();
        assert_eq!(err, TransformError::VariableNotInScope("j".into()));
        assert_eq!(apply_workspace(&s, &directive(&s, &[0, 0], &[1], &[])), Err(TransformError::EmptyWorkspaceVars));
        assert!(matches!(
            apply_workspace(&s, &directive(&s, &[0], &[1], &["i"])),
            Err(TransformError::InvalidLocation(_))
        ));
        assert!(matches!(
            apply_workspace(&s, &directive(&s, &[0, 0], &[1, 1], &["i"])),
            Err(TransformError::InvalidExprPath(_))
        ));
        let mut d = directive(&s, &[0, 0], &[0], &["j"]);
        d.format = TensorFormat::sparse_vector();
        assert!(matches!(apply_workspace(&s, &d), Err(TransformError::UnsupportedWorkspaceFormat(_))));
    }

    #[test]
    fn sequence_in_scope_is_refused() {
        let s = parse_concrete("forall(i) (forall(j) A(i,j) = w(j)) where (forall(j) w(j) = B(i,j) ; forall(j) w(j) += C(i,j))")
            .unwrap();
        let err = apply_workspace(&s, &directive(&s, &[0, 0, 0], &[], &["j"])).unwrap_err();
        assert_eq!(err, TransformError::SequencePresent);
        // inside a stage only the stage is in scope
        let out = apply_workspace(&s, &directive(&s, &[0, 1, 1, 0], &[], &["j"]));
        assert!(out.is_ok(), "{out:?}");
    }
}
