use std::collections::{HashMap, HashSet};
use std::fmt;

use super::ast::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// A reduction expression survived into concrete index notation.
    ReductionInConcrete,
    /// A result index of a non-incrementing assignment is never bound.
    UnboundResultIndex(String),
    /// An index variable is used without an enclosing forall.
    UnboundIndexVar(String),
    /// A forall re-executes an assignment over a variable that does not index its result.
    ForallOverNonResultIndex(String),
    ShadowedIndexVar(String),
    /// A producer writes a tensor that already exists in its environment.
    ShadowedTensor(String),
    /// A tensor is read where it is not defined.
    UndefinedTensor(String),
    /// An assignment reads the tensor it writes.
    ResultOnRhs(String),
    /// Sequence stages modify different tensors.
    SequenceTensorMismatch { expected: String, found: String },
    ArityMismatch { tensor: String, expected: usize, found: usize },
    RepeatedIndexVar { tensor: String, var: String },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::ReductionInConcrete => write!(f, "reduction expression in concrete index notation"),
            ViolationKind::UnboundResultIndex(v) => write!(f, "result index `{v}` is not bound by a forall"),
            ViolationKind::UnboundIndexVar(v) => write!(f, "index variable `{v}` is not bound by a forall"),
            ViolationKind::ForallOverNonResultIndex(v) => {
                write!(f, "forall over `{v}` repeats an assignment to the same result component")
            }
            ViolationKind::ShadowedIndexVar(v) => write!(f, "index variable `{v}` is already bound"),
            ViolationKind::ShadowedTensor(t) => write!(f, "tensor `{t}` is already defined in the environment"),
            ViolationKind::UndefinedTensor(t) => write!(f, "tensor `{t}` is not defined here"),
            ViolationKind::ResultOnRhs(t) => write!(f, "tensor `{t}` is read by the assignment that writes it"),
            ViolationKind::SequenceTensorMismatch { expected, found } => {
                write!(f, "sequence modifies `{expected}` and `{found}`")
            }
            ViolationKind::ArityMismatch { tensor, expected, found } => {
                write!(f, "tensor `{tensor}` used with {found} indices, previously {expected}")
            }
            ViolationKind::RepeatedIndexVar { tensor, var } => write!(f, "`{var}` indexes `{tensor}` twice"),
        }
    }
}

/// A well-formedness violation and the sub-statement where it occurs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub stmt: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in `{}`", self.kind, self.stmt)
    }
}

struct Checker {
    out: Vec<Violation>,
    arity: HashMap<String, usize>,
}

impl Checker {
    fn report(&mut self, kind: ViolationKind, s: &IndexStmt) {
        let v = Violation { kind, stmt: s.to_string() };
        if !self.out.contains(&v) {
            self.out.push(v);
        }
    }

    fn check_access(&mut self, a: &Access, s: &IndexStmt) {
        let name = a.tensor.name().to_string();
        let n = a.indices.len();
        match self.arity.get(&name) {
            Some(&e) if e != n => self.report(ViolationKind::ArityMismatch { tensor: name.clone(), expected: e, found: n }, s),
            Some(_) => {}
            None => {
                self.arity.insert(name.clone(), n);
            }
        }
        for (k, v) in a.indices.iter().enumerate() {
            if a.indices[..k].contains(v) {
                self.report(ViolationKind::RepeatedIndexVar { tensor: name.clone(), var: v.name().to_string() }, s);
            }
        }
    }

    /// `bound`: variables bound by enclosing foralls. `owning`: foralls that
    /// re-execute this statement while its tensor persists. `env`: tensors
    /// readable here.
    fn stmt(&mut self, s: &IndexStmt, bound: &mut Vec<IndexVar>, owning: &mut Vec<IndexVar>, env: &HashSet<String>) {
        match s {
            IndexStmt::Assign { lhs, op, rhs } => {
                self.check_access(lhs, s);
                rhs.visit_accesses(&mut |a| {
                    self.check_access(a, s);
                });
                if rhs.contains_reduction() {
                    self.report(ViolationKind::ReductionInConcrete, s);
                }
                for v in &lhs.indices {
                    if !bound.contains(v) {
                        let kind = if op.is_none() {
                            ViolationKind::UnboundResultIndex(v.name().to_string())
                        } else {
                            ViolationKind::UnboundIndexVar(v.name().to_string())
                        };
                        self.report(kind, s);
                    }
                }
                for v in rhs.free_index_vars() {
                    if !bound.contains(&v) && !lhs.indices.contains(&v) {
                        self.report(ViolationKind::UnboundIndexVar(v.name().to_string()), s);
                    }
                }
                if op.is_none() {
                    for v in owning.iter() {
                        if !lhs.indices.contains(v) {
                            self.report(ViolationKind::ForallOverNonResultIndex(v.name().to_string()), s);
                        }
                    }
                }
                if rhs.uses_tensor(lhs.tensor.name()) {
                    self.report(ViolationKind::ResultOnRhs(lhs.tensor.name().to_string()), s);
                }
                for a in rhs.accesses() {
                    let name = a.tensor.name();
                    if name != lhs.tensor.name() && !env.contains(name) {
                        self.report(ViolationKind::UndefinedTensor(name.to_string()), s);
                    }
                }
            }
            IndexStmt::Forall { var, body } => {
                if bound.contains(var) {
                    self.report(ViolationKind::ShadowedIndexVar(var.name().to_string()), s);
                }
                bound.push(var.clone());
                owning.push(var.clone());
                self.stmt(body, bound, owning, env);
                owning.pop();
                bound.pop();
            }
            IndexStmt::Where { consumer, producer } => {
                let produced = producer.modified_tensor().name().to_string();
                let consumed = consumer.modified_tensor().name().to_string();
                if env.contains(&produced) || produced == consumed {
                    self.report(ViolationKind::ShadowedTensor(produced.clone()), s);
                }
                let mut penv = env.clone();
                penv.remove(&consumed);
                self.stmt(producer, bound, &mut Vec::new(), &penv);
                let mut cenv = env.clone();
                cenv.insert(produced);
                self.stmt(consumer, bound, owning, &cenv);
            }
            IndexStmt::Sequence(stages) => {
                let first = stages[0].modified_tensor().name().to_string();
                for st in stages {
                    let name = st.modified_tensor().name();
                    if name != first {
                        self.report(
                            ViolationKind::SequenceTensorMismatch { expected: first.clone(), found: name.to_string() },
                            s,
                        );
                    }
                    self.stmt(st, bound, owning, env);
                }
            }
        }
    }
}

/// Checks the concrete index notation rules; an empty list means the
/// statement is well formed. The initial environment holds the result and
/// every tensor read outside the scope of a where statement producing it.
pub fn check_well_formed(stmt: &IndexStmt) -> Vec<Violation> {
    fn inputs(s: &IndexStmt, scope: &mut Vec<String>, out: &mut HashSet<String>) {
        match s {
            IndexStmt::Assign { rhs, .. } => {
                for a in rhs.accesses() {
                    if !scope.iter().any(|n| n == a.tensor.name()) {
                        out.insert(a.tensor.name().to_string());
                    }
                }
            }
            IndexStmt::Where { consumer, producer } => {
                inputs(producer, scope, out);
                scope.push(producer.modified_tensor().name().to_string());
                inputs(consumer, scope, out);
                scope.pop();
            }
            _ => {
                for c in s.children() {
                    inputs(c, scope, out);
                }
            }
        }
    }
    let mut env = HashSet::new();
    inputs(stmt, &mut Vec::new(), &mut env);
    env.insert(stmt.modified_tensor().name().to_string());
    let mut checker = Checker { out: Vec::new(), arity: HashMap::new() };
    checker.stmt(stmt, &mut Vec::new(), &mut Vec::new(), &env);
    checker.out
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_concrete;
    use super::*;

    fn kinds(text: &str) -> Vec<ViolationKind> {
        check_well_formed(&parse_concrete(text).unwrap()).into_iter().map(|v| v.kind).collect()
    }

    #[test]
    fn inner_products_is_well_formed() {
        assert!(kinds("forall(i,j) (A(i,j) = t) where (forall(k) t += B(i,k)*C(k,j))").is_empty());
    }

    #[test]
    fn workspace_forms_are_well_formed() {
        assert!(kinds("forall(i) (forall(j) A(i,j) = w(j)) where (forall(k,j) w(j) += B(i,k)*C(k,j))").is_empty());
        assert!(kinds("forall(i) (forall(j) a(i) += w(j)*C(i,j)) where (forall(j) w(j) = B(i,j))").is_empty());
        assert!(kinds("forall(i) (forall(j) A(i,j) = w(j)) where (forall(j) w(j) = B(i,j) ; forall(j) w(j) += C(i,j))").is_empty());
        assert!(kinds("(forall(i) a(i) = b(i) ; forall(i) a(i) += c(i))").is_empty());
    }

    #[test]
    fn unbound_result_index() {
        assert_eq!(kinds("forall(i) A(i,j) = B(i,j)"), vec![ViolationKind::UnboundResultIndex("j".into())]);
    }

    #[test]
    fn shadowed_tensor() {
        let k = kinds("(forall(i) a(i) = b(i) ; (forall(i) a(i) += w(i)) where (forall(i) b(i) = c(i)))");
        assert!(k.contains(&ViolationKind::ShadowedTensor("b".into())), "{k:?}");
    }

    #[test]
    fn repeated_assignment_is_flagged() {
        let k = kinds("forall(i,k) A(i) = B(i,k)");
        assert_eq!(k, vec![ViolationKind::ForallOverNonResultIndex("k".into())]);
        assert!(kinds("forall(i,k) A(i) += B(i,k)").is_empty());
    }

    #[test]
    fn other_violations() {
        assert_eq!(kinds("forall(i) forall(i) a(i) += b(i)"), vec![ViolationKind::ShadowedIndexVar("i".into())]);
        assert_eq!(kinds("forall(i) a(i) += a(i)"), vec![ViolationKind::ResultOnRhs("a".into())]);
        assert!(kinds("forall(i) (a(i) = w(i)) where (w(i) = a(i))").contains(&ViolationKind::UndefinedTensor("a".into())));
        assert!(kinds("(forall(i) a(i) = b(i) ; forall(i) c(i) = b(i))")
            .iter()
            .any(|k| matches!(k, ViolationKind::SequenceTensorMismatch { .. })));
        assert!(kinds("forall(i) a(i) = t where (t = 1.0)").is_empty());
    }
}
