use crate::notation::{Access, BinaryOp, IndexExpr, IndexStmt, SourceExpr, TensorVar};

/// Path of the outermost, leftmost reduction in `e`.
fn first_reduction(e: &IndexExpr, path: &mut Vec<usize>) -> bool {
    match e {
        IndexExpr::Reduction { .. } => true,
        IndexExpr::Binary { lhs, rhs, .. } => {
            path.push(0);
            if first_reduction(lhs, path) {
                return true;
            }
            path.pop();
            path.push(1);
            if first_reduction(rhs, path) {
                return true;
            }
            path.pop();
            false
        }
        _ => false,
    }
}

/// Lowers index notation to concrete index notation. Each reduction
/// (outermost first, in the leftmost assignment that still has one) becomes
/// a fresh scalar `t0, t1, ...` produced by a where statement; the result is
/// wrapped in foralls over the result indices.
pub fn lower_to_concrete(src: &SourceExpr) -> IndexStmt {
    let mut taken: Vec<String> = src.tensors().iter().map(|t| t.name().to_string()).collect();
    let mut counter = 0;
    let mut fresh = || loop {
        let name = format!("t{counter}");
        counter += 1;
        if !taken.contains(&name) {
            taken.push(name.clone());
            return name;
        }
    };

    let mut stmt = IndexStmt::assign(src.lhs.clone(), src.rhs.clone());
    loop {
        let target = stmt.assignment_paths().into_iter().find(|p| match stmt.at(p) {
            Some(IndexStmt::Assign { rhs, .. }) => rhs.contains_reduction(),
            _ => false,
        });
        let Some(spath) = target else { break };
        let slot = stmt.at_mut(&spath).expect("assignment path");
        let IndexStmt::Assign { lhs, op, rhs } = std::mem::replace(slot, IndexStmt::Sequence(Vec::new())) else {
            unreachable!()
        };
        let mut rhs = rhs;
        let mut epath = Vec::new();
        first_reduction(&rhs, &mut epath);
        let t = Access::new(TensorVar::new(&fresh(), 0), Vec::new());
        let reduction = std::mem::replace(rhs.at_mut(&epath).unwrap(), IndexExpr::Access(t.clone()));
        let IndexExpr::Reduction { vars, body } = reduction else { unreachable!() };
        let producer = IndexStmt::foralls(&vars, IndexStmt::increment(t, BinaryOp::Add, *body));
        *slot = IndexStmt::where_(IndexStmt::Assign { lhs, op, rhs }, producer);
    }
    IndexStmt::foralls(&src.lhs.indices, stmt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::{check_well_formed, parse, print_math};

    fn lower(text: &str) -> String {
        let s = lower_to_concrete(&parse(text).unwrap());
        assert!(check_well_formed(&s).is_empty(), "{s}");
        print_math(&s)
    }

    #[test]
    fn matmul_inner_products() {
        assert_eq!(lower("A(i,j) = sum(k)(B(i,k)*C(k,j))"), "∀ij (A_ij := t0) where (∀k t0 += B_ik C_kj)");
    }

    #[test]
    fn row_dot() {
        assert_eq!(lower("a(i) = sum(j)(B(i,j)*C(i,j))"), "∀i (a_i := t0) where (∀j t0 += B_ij C_ij)");
    }

    #[test]
    fn no_reduction() {
        assert_eq!(lower("A(i,j) = B(i,j) + C(i,j)"), "∀ij A_ij := B_ij + C_ij");
    }

    #[test]
    fn nested_reductions_become_nested_wheres() {
        assert_eq!(
            lower("A(i,j) = sum(k)(sum(l)(B(i,k,l)*C(l,j))*D(k,j))"),
            "∀ij (A_ij := t0) where (∀k (t0 += t1 D_kj) where (∀l t1 += B_ikl C_lj))"
        );
        assert_eq!(
            lower("a(i) = sum(j)(B(i,j)) + sum(k)(C(i,k))"),
            "∀i ((a_i := t0 + t1) where (∀k t1 += C_ik)) where (∀j t0 += B_ij)"
        );
    }

    #[test]
    fn fresh_names_avoid_inputs() {
        assert_eq!(lower("a(i) = sum(j)(t0(i,j))"), "∀i (a_i := t1) where (∀j t1 += t0_ij)");
    }
}
