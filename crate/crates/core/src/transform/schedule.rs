use std::fmt;

use thiserror::Error;

use crate::notation::{parse_expr_in, BinaryOp, IndexExpr, IndexStmt, IndexVar, SourceExpr};
use crate::storage::TensorFormat;

use super::{
    apply_equivalence, apply_workspace, apply_workspace_with_reuse, lower_to_concrete, EquivalenceRule, Location,
    TransformError, WorkspaceDirective,
};

/// A scheduling command, applied to the lowered statement in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Directive {
    /// Reorders the forall nest binding these variables into this order.
    Reorder(Vec<String>),
    /// Precomputes the first sub-expression matching `pattern` into a workspace.
    Workspace { pattern: String, vars: Vec<String>, format: String, reuse: bool },
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Reorder(vars) => write!(f, "reorder({})", vars.join(",")),
            Directive::Workspace { pattern, vars, format, reuse } => {
                let name = if *reuse { "workspace_reuse" } else { "workspace" };
                write!(f, "{name}({pattern}, {{{}}}, {format})", vars.join(","))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Schedule {
    pub stmt: IndexStmt,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("directive {} `{directive}` failed: {source}", .index + 1)]
pub struct ScheduleError {
    pub index: usize,
    pub directive: String,
    pub source: TransformError,
}

fn split_top_level(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (k, c) in text.char_indices() {
        match c {
            '(' | '{' => depth += 1,
            ')' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..k].trim());
                start = k + 1;
            }
            _ => {}
        }
    }
    out.push(text[start..].trim());
    out
}

fn parse_directive(text: &str) -> Result<Directive, TransformError> {
    let bad = || TransformError::InvalidDirective(text.to_string());
    let open = text.find('(').ok_or_else(bad)?;
    let name = text[..open].trim();
    let inner = text[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let args = split_top_level(inner);
    let names = |s: &str| -> Vec<String> {
        s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
    };
    match name {
        "reorder" => {
            let vars = names(inner);
            if vars.is_empty() {
                return Err(bad());
            }
            Ok(Directive::Reorder(vars))
        }
        "workspace" | "workspace_reuse" => {
            if args.len() < 2 || args.len() > 3 || args[0].is_empty() {
                return Err(bad());
            }
            let vars = args[1].strip_prefix('{').and_then(|v| v.strip_suffix('}')).ok_or_else(bad)?;
            Ok(Directive::Workspace {
                pattern: args[0].to_string(),
                vars: names(vars),
                format: args.get(2).map_or("dense", |f| *f).to_string(),
                reuse: name == "workspace_reuse",
            })
        }
        _ => Err(bad()),
    }
}

/// Parses directives separated by `;` or newlines, e.g.
/// `reorder(i,k,j); workspace(B(i,k)*C(k,j), {j}, dense)`.
pub fn parse_schedule(text: &str) -> Result<Vec<Directive>, TransformError> {
    text.split(|c| c == ';' || c == '\n')
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.starts_with('#'))
        .map(parse_directive)
        .collect()
}

/// Folds `(A op= t) where (∀.. t += E)` for a scalar `t` into `∀.. A += E`,
/// innermost first, so the reduction loops join the enclosing forall nest.
pub fn desugar_scalar_wheres(stmt: &IndexStmt) -> IndexStmt {
    match stmt {
        IndexStmt::Assign { .. } => stmt.clone(),
        IndexStmt::Forall { var, body } => IndexStmt::forall(var.clone(), desugar_scalar_wheres(body)),
        IndexStmt::Sequence(stages) => IndexStmt::Sequence(stages.iter().map(desugar_scalar_wheres).collect()),
        IndexStmt::Where { consumer, producer } => {
            let consumer = desugar_scalar_wheres(consumer);
            let producer = desugar_scalar_wheres(producer);
            if let IndexStmt::Assign { lhs, op: None | Some(BinaryOp::Add), rhs: IndexExpr::Access(t) } = &consumer {
                let (vars, body) = producer.forall_chain();
                if let IndexStmt::Assign { lhs: pl, op: Some(BinaryOp::Add), rhs: e } = body {
                    if t.indices.is_empty() && pl.indices.is_empty() && pl.tensor == t.tensor {
                        return IndexStmt::foralls(&vars, IndexStmt::increment(lhs.clone(), BinaryOp::Add, e.clone()));
                    }
                }
            }
            IndexStmt::where_(consumer, producer)
        }
    }
}

fn resolve(stmt: &IndexStmt, names: &[String]) -> Result<Vec<IndexVar>, TransformError> {
    let vars = stmt.index_vars();
    names
        .iter()
        .map(|n| vars.iter().find(|v| v.name() == n).cloned().ok_or_else(|| TransformError::UnknownIndexVar(n.clone())))
        .collect()
}

fn forall_nodes(s: &IndexStmt, path: &mut Location, out: &mut Vec<Location>) {
    if let IndexStmt::Forall { .. } = s {
        out.push(path.clone());
    }
    for (k, c) in s.children().into_iter().enumerate() {
        path.push(k);
        forall_nodes(c, path, out);
        path.pop();
    }
}

fn reorder(stmt: &IndexStmt, names: &[String]) -> Result<IndexStmt, TransformError> {
    let wanted = resolve(stmt, names)?;
    for (k, v) in wanted.iter().enumerate() {
        if wanted[..k].contains(v) {
            return Err(TransformError::Reorder(format!("`{v}` is listed twice")));
        }
    }
    let mut nodes = Vec::new();
    forall_nodes(stmt, &mut Vec::new(), &mut nodes);
    let found = nodes.into_iter().find(|p| {
        let (chain, _) = stmt.at(p).unwrap().forall_chain();
        wanted.iter().all(|v| chain.contains(v))
    });
    let Some(root) = found else {
        return Err(TransformError::Reorder(format!("no directly nested foralls bind {}", names.join(", "))));
    };
    let (mut chain, _) = stmt.at(&root).unwrap().forall_chain();
    let slots: Vec<usize> = chain.iter().enumerate().filter(|(_, v)| wanted.contains(v)).map(|(k, _)| k).collect();
    let mut target = chain.clone();
    for (slot, v) in slots.iter().zip(&wanted) {
        target[*slot] = v.clone();
    }
    let rank = |v: &IndexVar| target.iter().position(|t| t == v).unwrap();
    let mut out = stmt.clone();
    loop {
        let Some(k) = (0..chain.len().saturating_sub(1)).find(|&k| rank(&chain[k]) > rank(&chain[k + 1])) else {
            break;
        };
        let mut at = root.clone();
        at.extend(std::iter::repeat(0).take(k));
        out = apply_equivalence(&out, EquivalenceRule::SwapForalls, &at)?;
        chain.swap(k, k + 1);
    }
    Ok(out)
}

fn workspace(
    stmt: &IndexStmt,
    pattern: &str,
    vars: &[String],
    format: &str,
    reuse: bool,
    warnings: &mut Vec<String>,
) -> Result<IndexStmt, TransformError> {
    let ws_vars = resolve(stmt, vars)?;
    let pat = parse_expr_in(pattern, &stmt.index_vars(), &stmt.tensors())?;
    let format = TensorFormat::from_name(format, ws_vars.len())
        .map_err(|_| TransformError::UnsupportedWorkspaceFormat(format.to_string()))?;
    let mut matches = Vec::new();
    for path in stmt.assignment_paths() {
        if let Some(IndexStmt::Assign { rhs, .. }) = stmt.at(&path) {
            for e in rhs.find(&pat) {
                matches.push((path.clone(), e));
            }
        }
    }
    let Some((stmt_path, expr_path)) = matches.first().cloned() else {
        return Err(TransformError::PatternNotFound(pattern.to_string()));
    };
    if matches.len() > 1 {
        warnings.push(format!("`{pattern}` matches {} sub-expressions; using the first", matches.len()));
    }
    let d = WorkspaceDirective { stmt_path, expr_path, vars: ws_vars, format };
    if reuse {
        apply_workspace_with_reuse(stmt, &d)
    } else {
        apply_workspace(stmt, &d)
    }
}

/// Lowers `src` and applies `directives` in order. Fails as a whole on the
/// first directive that does not apply.
pub fn schedule(src: &SourceExpr, directives: &[Directive]) -> Result<Schedule, ScheduleError> {
    let mut stmt = lower_to_concrete(src);
    if !directives.is_empty() {
        stmt = desugar_scalar_wheres(&stmt);
    }
    let mut warnings = Vec::new();
    for (index, d) in directives.iter().enumerate() {
        let result = match d {
            Directive::Reorder(vars) => reorder(&stmt, vars),
            Directive::Workspace { pattern, vars, format, reuse } => {
                workspace(&stmt, pattern, vars, format, *reuse, &mut warnings)
            }
        };
        stmt = result.map_err(|source| ScheduleError { index, directive: d.to_string(), source })?;
    }
    Ok(Schedule { stmt, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::{parse, print_math, print_stmt};

    fn run(expr: &str, sched: &str) -> Result<Schedule, ScheduleError> {
        schedule(&parse(expr).unwrap(), &parse_schedule(sched).unwrap())
    }

    #[test]
    fn parse_directives() {
        let ds = parse_schedule("reorder(i, k, j)\nworkspace(B(i,k)*C(k,j), {j}, dense); workspace_reuse(b(i), {i})").unwrap();
        assert_eq!(ds[0], Directive::Reorder(vec!["i".into(), "k".into(), "j".into()]));
        assert_eq!(ds[1].to_string(), "workspace(B(i,k)*C(k,j), {j}, dense)");
        assert_eq!(ds[2].to_string(), "workspace_reuse(b(i), {i}, dense)");
        assert!(parse_schedule("tile(i, 4)").is_err());
        assert!(parse_schedule("workspace(B(i,k), j)").is_err());
    }

    #[test]
    fn matmul_schedule() {
        let s = run("A(i,j) = sum(k)(B(i,k)*C(k,j))", "reorder(i,k,j); workspace(B(i,k)*C(k,j), {j}, dense)").unwrap();
        assert_eq!(
            print_stmt(&s.stmt),
            "forall(i) (forall(j) A(i,j) = w0(j)) where (forall(k,j) w0(j) += B(i,k)*C(k,j))"
        );
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn linear_combination_by_reorder() {
        let s = run("A(i,j) = sum(k)(B(i,k)*C(k,j))", "reorder(i,k,j)").unwrap();
        assert_eq!(print_math(&s.stmt), "∀ikj A_ij += B_ik C_kj");
    }

    #[test]
    fn no_directives_keeps_lowering() {
        let s = run("A(i,j) = sum(k)(B(i,k)*C(k,j))", "").unwrap();
        assert_eq!(print_math(&s.stmt), "∀ij (A_ij := t0) where (∀k t0 += B_ik C_kj)");
    }

    #[test]
    fn mttkrp_schedules() {
        let e = "A(i,j) = sum(k,l)(B(i,k,l)*C(l,j)*D(k,j))";
        let s = run(e, "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense)").unwrap();
        assert_eq!(print_math(&s.stmt), "∀ik (∀j A_ij += w0_j D_kj) where (∀lj w0_j += B_ikl C_lj)");
        let s = run(e, "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense); workspace(w0(j)*D(k,j), {j}, dense)")
            .unwrap();
        assert_eq!(
            print_math(&s.stmt),
            "∀i (∀j A_ij := w1_j) where (∀k (∀j w1_j += w0_j D_kj) where (∀lj w0_j += B_ikl C_lj))"
        );
    }

    #[test]
    fn add_schedules() {
        let s = run("A(i,j) = B(i,j) + C(i,j)", "workspace(B(i,j)+C(i,j), {j}); workspace_reuse(B(i,j), {j})").unwrap();
        assert_eq!(print_math(&s.stmt), "∀i (∀j A_ij := w0_j) where (∀j w0_j := B_ij ; ∀j w0_j += C_ij)");
        let s = run("a(i) = b(i) + c(i)", "workspace_reuse(b(i), {i})").unwrap();
        assert_eq!(print_math(&s.stmt), "(∀i a_i := b_i ; ∀i a_i += c_i)");
    }

    #[test]
    fn failures_name_the_directive() {
        let err = run("A(i,j) = sum(k)(B(i,k)*C(k,j))", "reorder(i,k,j); workspace(D(i,k), {k})").unwrap_err();
        assert_eq!(err.index, 1);
        assert!(matches!(err.source, TransformError::PatternNotFound(_)));
        let err = run("A(i,j) = sum(k)(B(i,k)*C(k,j))", "reorder(i,q)").unwrap_err();
        assert_eq!(err.source, TransformError::UnknownIndexVar("q".into()));
        let e = "A(i,j) = sum(k,l)(B(i,k,l)*C(l,j)*D(k,j))";
        let err = run(
            e,
            "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense); workspace_reuse(w0(j)*D(k,j), {j}, dense)",
        )
        .unwrap_err();
        assert_eq!(err.index, 2);
        assert!(matches!(err.source, TransformError::ReusePrecondition1 { .. }));
    }

    #[test]
    fn ambiguous_pattern_warns() {
        let s = run("a(i) = b(i)*c(i) + b(i)*d(i)", "workspace(b(i), {i})").unwrap();
        assert_eq!(s.warnings.len(), 1);
    }
}
