use std::fmt::{self, Write};

use super::ast::*;

fn write_vars(f: &mut impl Write, vars: &[IndexVar]) -> fmt::Result {
    for (k, v) in vars.iter().enumerate() {
        if k > 0 {
            f.write_char(',')?;
        }
        f.write_str(v.name())?;
    }
    Ok(())
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tensor.name())?;
        if !self.indices.is_empty() {
            f.write_char('(')?;
            write_vars(f, &self.indices)?;
            f.write_char(')')?;
        }
        Ok(())
    }
}

fn precedence(e: &IndexExpr) -> u8 {
    match e {
        IndexExpr::Binary { op: BinaryOp::Add, .. } => 1,
        IndexExpr::Binary { op: BinaryOp::Mul, .. } => 2,
        _ => 3,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &IndexExpr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexExpr::Literal(v) => write!(f, "{v:?}"),
            IndexExpr::Access(a) => write!(f, "{a}"),
            IndexExpr::Binary { op, lhs, rhs } => {
                let p = precedence(self);
                write_operand(f, lhs, p)?;
                match op {
                    BinaryOp::Add => f.write_str(" + ")?,
                    BinaryOp::Mul => f.write_str("*")?,
                }
                // operators are left-associative; a right operand of equal
                // precedence needs parentheses to keep its shape
                write_operand(f, rhs, p + 1)
            }
            IndexExpr::Reduction { vars, body } => {
                f.write_str("sum(")?;
                write_vars(f, vars)?;
                write!(f, ")({body})")
            }
        }
    }
}

impl fmt::Display for SourceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.lhs, self.rhs)
    }
}

fn write_side(f: &mut fmt::Formatter<'_>, s: &IndexStmt) -> fmt::Result {
    match s {
        IndexStmt::Sequence(_) => write!(f, "{s}"),
        _ => write!(f, "({s})"),
    }
}

impl fmt::Display for IndexStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexStmt::Assign { lhs, op, rhs } => {
                let op = match op {
                    None => "=",
                    Some(BinaryOp::Add) => "+=",
                    Some(BinaryOp::Mul) => "*=",
                };
                write!(f, "{lhs} {op} {rhs}")
            }
            IndexStmt::Forall { .. } => {
                let (vars, body) = self.forall_chain();
                f.write_str("forall(")?;
                write_vars(f, &vars)?;
                write!(f, ") {body}")
            }
            IndexStmt::Where { consumer, producer } => {
                write_side(f, consumer)?;
                f.write_str(" where ")?;
                write_side(f, producer)
            }
            IndexStmt::Sequence(stages) => {
                f.write_char('(')?;
                for (k, s) in stages.iter().enumerate() {
                    if k > 0 {
                        f.write_str(" ; ")?;
                    }
                    write!(f, "{s}")?;
                }
                f.write_char(')')
            }
        }
    }
}

fn math_subscript(out: &mut String, vars: &[IndexVar]) {
    if vars.is_empty() {
        return;
    }
    out.push('_');
    if vars.iter().all(|v| v.name().chars().count() == 1) {
        for v in vars {
            out.push_str(v.name());
        }
    } else {
        out.push('{');
        let names: Vec<&str> = vars.iter().map(|v| v.name()).collect();
        out.push_str(&names.join(","));
        out.push('}');
    }
}

fn math_expr(out: &mut String, e: &IndexExpr) {
    let operand = |out: &mut String, x: &IndexExpr, min: u8| {
        if precedence(x) < min {
            out.push('(');
            math_expr(out, x);
            out.push(')');
        } else {
            math_expr(out, x);
        }
    };
    match e {
        IndexExpr::Literal(v) => out.push_str(&format!("{v}")),
        IndexExpr::Access(a) => {
            out.push_str(a.tensor.name());
            math_subscript(out, &a.indices);
        }
        IndexExpr::Binary { op, lhs, rhs } => {
            let p = precedence(e);
            operand(out, lhs, p);
            out.push_str(if *op == BinaryOp::Add { " + " } else { " " });
            operand(out, rhs, p + 1);
        }
        IndexExpr::Reduction { vars, body } => {
            out.push('Σ');
            math_subscript(out, vars);
            out.push(' ');
            operand(out, body, 2);
        }
    }
}

fn math_stmt(out: &mut String, s: &IndexStmt) {
    let side = |out: &mut String, s: &IndexStmt| {
        if let IndexStmt::Sequence(_) = s {
            math_stmt(out, s);
        } else {
            out.push('(');
            math_stmt(out, s);
            out.push(')');
        }
    };
    match s {
        IndexStmt::Assign { lhs, op, rhs } => {
            out.push_str(lhs.tensor.name());
            math_subscript(out, &lhs.indices);
            out.push_str(match op {
                None => " := ",
                Some(BinaryOp::Add) => " += ",
                Some(BinaryOp::Mul) => " *= ",
            });
            math_expr(out, rhs);
        }
        IndexStmt::Forall { .. } => {
            let (vars, body) = s.forall_chain();
            out.push('∀');
            let mut sub = String::new();
            math_subscript(&mut sub, &vars);
            out.push_str(&sub[1..]);
            out.push(' ');
            math_stmt(out, body);
        }
        IndexStmt::Where { consumer, producer } => {
            side(out, consumer);
            out.push_str(" where ");
            side(out, producer);
        }
        IndexStmt::Sequence(stages) => {
            out.push('(');
            for (k, st) in stages.iter().enumerate() {
                if k > 0 {
                    out.push_str(" ; ");
                }
                math_stmt(out, st);
            }
            out.push(')');
        }
    }
}

/// Renders a statement in mathematical notation, e.g.
/// `∀i (∀j A_ij := w_j) where (∀kj w_j += B_ik C_kj)`.
pub fn print_math(s: &IndexStmt) -> String {
    let mut out = String::new();
    math_stmt(&mut out, s);
    out
}

/// Renders index notation in mathematical form, e.g. `A_ij = Σ_k B_ik C_kj`.
pub fn print_source_math(src: &SourceExpr) -> String {
    let mut out = String::new();
    out.push_str(src.lhs.tensor.name());
    math_subscript(&mut out, &src.lhs.indices);
    out.push_str(" = ");
    math_expr(&mut out, &src.rhs);
    out
}

/// Text form of a statement; parses back with `parse_concrete`.
pub fn print_stmt(s: &IndexStmt) -> String {
    s.to_string()
}

#[cfg(test)]
mod tests {
    use super::super::parse::{parse, parse_concrete};
    use super::*;

    #[test]
    fn forall_chain_prints_compactly() {
        let s = parse_concrete("forall(i) forall(k) forall(j) A(i,j) += B(i,k)*C(k,j)").unwrap();
        assert_eq!(s.to_string(), "forall(i,k,j) A(i,j) += B(i,k)*C(k,j)");
    }

    #[test]
    fn where_and_sequence_forms() {
        let text = "forall(i) (forall(j) A(i,j) = w(j)) where (forall(j) w(j) = B(i,j) ; forall(j) w(j) += C(i,j))";
        let s = parse_concrete(text).unwrap();
        assert_eq!(s.to_string(), text);
        assert_eq!(print_math(&s), "∀i (∀j A_ij := w_j) where (∀j w_j := B_ij ; ∀j w_j += C_ij)");
    }

    #[test]
    fn parenthesization_keeps_shape() {
        let src = parse("a(i) = b(i)*(c(i) + d(i)) + (e(i) + f(i))").unwrap();
        assert_eq!(src.to_string(), "a(i) = b(i)*(c(i) + d(i)) + (e(i) + f(i))");
        let again = parse(&src.to_string()).unwrap();
        assert!(again.rhs.same_shape(&src.rhs));
    }

    #[test]
    fn source_math_form() {
        let src = parse("A(i,j) = sum(k)(B(i,k)*C(k,j))").unwrap();
        assert_eq!(print_source_math(&src), "A_ij = Σ_k B_ik C_kj");
        assert_eq!(src.to_string(), "A(i,j) = sum(k)(B(i,k)*C(k,j))");
    }
}
