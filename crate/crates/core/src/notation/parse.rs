use std::collections::HashMap;

use super::ast::*;
use super::NotationError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Plus,
    Star,
    Eq,
    PlusEq,
    StarEq,
    Semi,
    End,
}

pub(crate) fn lex(text: &str) -> Result<Vec<(Tok, usize)>, NotationError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '=' => Tok::Eq,
            '+' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                Tok::PlusEq
            }
            '*' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                Tok::StarEq
            }
            '+' => Tok::Plus,
            '*' => Tok::Star,
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ if c.is_ascii_digit() || c == '.' || (c == '-' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit() || *b == b'.')) => {
                i += 1;
                while i < bytes.len() {
                    let b = bytes[i];
                    let exp_sign = (b == b'-' || b == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                    if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| NotationError::Syntax { pos: start, message: format!("bad number `{s}`") })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            _ => return Err(NotationError::Syntax { pos: start, message: format!("unexpected character `{c}`") }),
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

const KEYWORDS: [&str; 3] = ["forall", "where", "sum"];

pub(crate) struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    vars: HashMap<String, IndexVar>,
    orders: HashMap<String, usize>,
}

impl Parser {
    pub(crate) fn new(text: &str) -> Result<Self, NotationError> {
        Ok(Parser { toks: lex(text)?, at: 0, vars: HashMap::new(), orders: HashMap::new() })
    }

    /// Resolves names against existing variables so parsed fragments share
    /// identity with a statement.
    pub(crate) fn with_vars(mut self, vars: &[IndexVar]) -> Self {
        for v in vars {
            self.vars.insert(v.name().to_string(), v.clone());
        }
        self
    }

    pub(crate) fn with_tensors(mut self, tensors: &[TensorVar]) -> Self {
        for t in tensors {
            self.orders.insert(t.name().to_string(), t.order());
        }
        self
    }

    pub(crate) fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    pub(crate) fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub(crate) fn error<T>(&self, message: impl Into<String>) -> Result<T, NotationError> {
        Err(NotationError::Syntax { pos: self.pos(), message: message.into() })
    }

    pub(crate) fn expect(&mut self, tok: Tok, what: &str) -> Result<(), NotationError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        *self.peek() == Tok::End
    }

    pub(crate) fn expect_end(&mut self) -> Result<(), NotationError> {
        if self.at_end() {
            Ok(())
        } else {
            self.error(format!("unexpected {}", describe(self.peek())))
        }
    }

    pub(crate) fn ident(&mut self) -> Result<String, NotationError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.error(format!("expected a name, found {}", describe(&t))),
        }
    }

    pub(crate) fn var(&mut self, name: &str) -> IndexVar {
        self.vars.entry(name.to_string()).or_insert_with(|| IndexVar::new(name)).clone()
    }

    /// `(i, j, ...)`; possibly empty.
    pub(crate) fn var_list(&mut self, open: Tok, close: Tok) -> Result<Vec<IndexVar>, NotationError> {
        self.expect(open, "`(`")?;
        let mut out = Vec::new();
        if *self.peek() == close {
            self.bump();
            return Ok(out);
        }
        loop {
            let name = self.ident()?;
            if KEYWORDS.contains(&name.as_str()) {
                return self.error(format!("`{name}` is a keyword"));
            }
            out.push(self.var(&name));
            match self.bump() {
                Tok::Comma => continue,
                t if t == close => break,
                t => return self.error(format!("expected `,` or closing bracket, found {}", describe(&t))),
            }
        }
        Ok(out)
    }

    fn tensor(&mut self, name: &str, order: usize) -> Result<TensorVar, NotationError> {
        match self.orders.get(name) {
            Some(&o) if o != order => {
                Err(NotationError::ArityMismatch { tensor: name.to_string(), expected: o, found: order })
            }
            _ => {
                self.orders.insert(name.to_string(), order);
                Ok(TensorVar::new(name, order))
            }
        }
    }

    pub(crate) fn access(&mut self) -> Result<Access, NotationError> {
        let name = self.ident()?;
        if KEYWORDS.contains(&name.as_str()) {
            return self.error(format!("`{name}` is a keyword"));
        }
        self.access_named(name)
    }

    fn access_named(&mut self, name: String) -> Result<Access, NotationError> {
        let indices = if *self.peek() == Tok::LParen { self.var_list(Tok::LParen, Tok::RParen)? } else { Vec::new() };
        for (k, v) in indices.iter().enumerate() {
            if indices[..k].contains(v) {
                return Err(NotationError::RepeatedIndexVar { tensor: name, var: v.name().to_string() });
            }
        }
        let tensor = self.tensor(&name, indices.len())?;
        Ok(Access::new(tensor, indices))
    }

    pub(crate) fn expr(&mut self) -> Result<IndexExpr, NotationError> {
        let mut lhs = self.term()?;
        while *self.peek() == Tok::Plus {
            self.bump();
            let rhs = self.term()?;
            lhs = IndexExpr::add(lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<IndexExpr, NotationError> {
        let mut lhs = self.factor()?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.factor()?;
            lhs = IndexExpr::mul(lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<IndexExpr, NotationError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(IndexExpr::Literal(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "sum" => {
                self.bump();
                let vars = self.var_list(Tok::LParen, Tok::RParen)?;
                if vars.is_empty() {
                    return self.error("sum needs at least one index variable");
                }
                self.expect(Tok::LParen, "`(` after sum variables")?;
                let body = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(IndexExpr::sum(&vars, body))
            }
            Tok::Ident(name) if KEYWORDS.contains(&name.as_str()) => self.error(format!("unexpected keyword `{name}`")),
            Tok::Ident(_) => Ok(IndexExpr::Access(self.access()?)),
            t => self.error(format!("expected an expression, found {}", describe(&t))),
        }
    }

    fn stmt(&mut self) -> Result<IndexStmt, NotationError> {
        if let Tok::Ident(name) = self.peek() {
            if name == "forall" {
                self.bump();
                let vars = self.var_list(Tok::LParen, Tok::RParen)?;
                if vars.is_empty() {
                    return self.error("forall needs at least one index variable");
                }
                let body = self.stmt()?;
                return Ok(IndexStmt::foralls(&vars, body));
            }
        }
        let mut s = self.unit()?;
        while matches!(self.peek(), Tok::Ident(n) if n == "where") {
            self.bump();
            let producer = self.unit()?;
            s = IndexStmt::where_(s, producer);
        }
        Ok(s)
    }

    fn unit(&mut self) -> Result<IndexStmt, NotationError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let mut stages = vec![self.stmt()?];
            while *self.peek() == Tok::Semi {
                self.bump();
                stages.push(self.stmt()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            return Ok(if stages.len() == 1 { stages.pop().unwrap() } else { IndexStmt::Sequence(stages) });
        }
        let lhs = self.access()?;
        let op = match self.bump() {
            Tok::Eq => None,
            Tok::PlusEq => Some(BinaryOp::Add),
            Tok::StarEq => Some(BinaryOp::Mul),
            t => return self.error(format!("expected `=`, `+=` or `*=`, found {}", describe(&t))),
        };
        let rhs = self.expr()?;
        Ok(IndexStmt::Assign { lhs, op, rhs })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(v) => format!("`{v}`"),
        Tok::End => "end of input".to_string(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Star => "`*`".into(),
        Tok::Eq => "`=`".into(),
        Tok::PlusEq => "`+=`".into(),
        Tok::StarEq => "`*=`".into(),
        Tok::Semi => "`;`".into(),
    }
}

/// Parses index notation such as `A(i,j) = sum(k)(B(i,k)*C(k,j))`.
pub fn parse(text: &str) -> Result<SourceExpr, NotationError> {
    let mut p = Parser::new(text)?;
    let lhs = p.access()?;
    p.expect(Tok::Eq, "`=`")?;
    let rhs = p.expr()?;
    p.expect_end()?;
    let src = SourceExpr::new(lhs, rhs);
    check_source(&src)?;
    Ok(src)
}

/// Parses index notation and checks tensor shapes: every tensor with a
/// declared shape must be accessed with matching arity, and every index
/// variable must index modes of a single dimension.
pub fn parse_with_shapes(text: &str, shapes: &HashMap<String, Vec<usize>>) -> Result<SourceExpr, NotationError> {
    let src = parse(text)?;
    let mut accesses = vec![&src.lhs];
    accesses.extend(src.rhs.accesses());
    infer_dimensions(accesses, shapes)?;
    Ok(src)
}

/// Dimension of every index variable used by `accesses` whose tensor has a
/// declared shape.
pub fn infer_dimensions<'a>(
    accesses: impl IntoIterator<Item = &'a Access>,
    shapes: &HashMap<String, Vec<usize>>,
) -> Result<HashMap<IndexVar, usize>, NotationError> {
    let mut dims: HashMap<IndexVar, usize> = HashMap::new();
    for a in accesses {
        let Some(shape) = shapes.get(a.tensor.name()) else { continue };
        if shape.len() != a.indices.len() {
            return Err(NotationError::ArityMismatch {
                tensor: a.tensor.name().to_string(),
                expected: shape.len(),
                found: a.indices.len(),
            });
        }
        for (v, &d) in a.indices.iter().zip(shape) {
            match dims.get(v) {
                Some(&e) if e != d => {
                    return Err(NotationError::DimensionMismatch { var: v.name().to_string(), first: e, second: d })
                }
                _ => {
                    dims.insert(v.clone(), d);
                }
            }
        }
    }
    Ok(dims)
}

/// Index notation rules: the result is not read, reductions do not shadow,
/// and every unreduced right-hand side variable indexes the result.
pub fn check_source(src: &SourceExpr) -> Result<(), NotationError> {
    let result = src.lhs.tensor.name();
    if src.rhs.uses_tensor(result) {
        return Err(NotationError::ResultOnRhs(result.to_string()));
    }
    for (k, v) in src.lhs.indices.iter().enumerate() {
        if src.lhs.indices[..k].contains(v) {
            return Err(NotationError::RepeatedIndexVar { tensor: result.to_string(), var: v.name().to_string() });
        }
    }
    fn walk(e: &IndexExpr, bound: &mut Vec<IndexVar>) -> Result<(), NotationError> {
        match e {
            IndexExpr::Literal(_) => Ok(()),
            IndexExpr::Access(a) => match a.indices.iter().find(|v| !bound.contains(v)) {
                Some(v) => Err(NotationError::UnboundIndexVar(v.name().to_string())),
                None => Ok(()),
            },
            IndexExpr::Binary { lhs, rhs, .. } => {
                walk(lhs, bound)?;
                walk(rhs, bound)
            }
            IndexExpr::Reduction { vars, body } => {
                for (k, v) in vars.iter().enumerate() {
                    if bound.contains(v) || vars[..k].contains(v) {
                        return Err(NotationError::ShadowedIndexVar(v.name().to_string()));
                    }
                }
                let n = bound.len();
                bound.extend(vars.iter().cloned());
                walk(body, bound)?;
                bound.truncate(n);
                Ok(())
            }
        }
    }
    walk(&src.rhs, &mut src.lhs.indices.clone())
}

/// Parses concrete index notation as printed by [`IndexStmt`]'s `Display`,
/// e.g. `forall(i) (forall(j) A(i,j) = w(j)) where (forall(k,j) w(j) += B(i,k)*C(k,j))`.
pub fn parse_concrete(text: &str) -> Result<IndexStmt, NotationError> {
    let mut p = Parser::new(text)?;
    let s = p.stmt()?;
    p.expect_end()?;
    Ok(s)
}

/// Parses an expression fragment, resolving names against `vars` and `tensors`.
pub fn parse_expr_in(text: &str, vars: &[IndexVar], tensors: &[TensorVar]) -> Result<IndexExpr, NotationError> {
    let mut p = Parser::new(text)?.with_vars(vars).with_tensors(tensors);
    let e = p.expr()?;
    p.expect_end()?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_matmul() {
        let src = parse("A(i,j) = sum(k)(B(i,k)*C(k,j))").unwrap();
        assert_eq!(src.lhs.tensor.name(), "A");
        let IndexExpr::Reduction { vars, body } = &src.rhs else { panic!("expected reduction") };
        assert_eq!(vars[0].name(), "k");
        let acc = body.accesses();
        assert_eq!(acc.len(), 2);
        // same name, same variable
        assert_eq!(acc[0].indices[1], acc[1].indices[0]);
        assert_eq!(acc[0].indices[0], src.lhs.indices[0]);
    }

    #[test]
    fn parse_row_dot() {
        let src = parse("a(i) = sum(j)(B(i,j)*C(i,j))").unwrap();
        assert_eq!(src.lhs.indices.len(), 1);
        assert_eq!(src.tensors().len(), 3);
    }

    #[test]
    fn result_on_rhs_is_rejected() {
        assert_eq!(parse("A(i,j) = B(i,j) + A(i,j)"), Err(NotationError::ResultOnRhs("A".into())));
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse("A(i,j) = B(i,j) +") {
            Err(NotationError::Syntax { pos, .. }) => assert_eq!(pos, 17),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("A(i = B(i)"), Err(NotationError::Syntax { .. })));
    }

    #[test]
    fn arity_and_dimension_checks() {
        assert!(matches!(parse("a(i) = B(i,j) + B(i)"), Err(NotationError::ArityMismatch { .. })));
        let shapes = HashMap::from([("B".to_string(), vec![2, 3]), ("C".to_string(), vec![4, 3])]);
        assert!(matches!(
            parse_with_shapes("A(i,j) = sum(k)(B(i,k)*C(k,j))", &shapes),
            Err(NotationError::DimensionMismatch { .. })
        ));
        let shapes = HashMap::from([("B".to_string(), vec![2, 3]), ("C".to_string(), vec![3, 5])]);
        assert!(parse_with_shapes("A(i,j) = sum(k)(B(i,k)*C(k,j))", &shapes).is_ok());
        let shapes = HashMap::from([("B".to_string(), vec![2, 3, 4])]);
        assert!(matches!(
            parse_with_shapes("a(i) = sum(j)(B(i,j))", &shapes),
            Err(NotationError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn unbound_and_shadowed_vars() {
        assert_eq!(parse("a(i) = B(i,j)"), Err(NotationError::UnboundIndexVar("j".into())));
        assert_eq!(parse("a(i) = sum(i)(b(i))"), Err(NotationError::ShadowedIndexVar("i".into())));
        assert!(matches!(parse("A(i,i) = b(i)"), Err(NotationError::RepeatedIndexVar { .. })));
    }

    #[test]
    fn scalars_and_literals() {
        let src = parse("a = sum(i)(2.5*b(i)) + 1e-3").unwrap();
        assert_eq!(src.lhs.tensor.order(), 0);
        let IndexExpr::Binary { rhs, .. } = &src.rhs else { panic!() };
        assert_eq!(**rhs, IndexExpr::Literal(1e-3));
    }

    #[test]
    fn parse_concrete_forms() {
        let s = parse_concrete("forall(i) (forall(j) A(i,j) = w(j)) where (forall(k,j) w(j) += B(i,k)*C(k,j))").unwrap();
        let IndexStmt::Forall { body, .. } = &s else { panic!() };
        assert!(matches!(**body, IndexStmt::Where { .. }));
        let s = parse_concrete("(forall(i) a(i) = b(i) ; forall(i) a(i) += c(i))").unwrap();
        assert!(matches!(s, IndexStmt::Sequence(ref v) if v.len() == 2));
        let s = parse_concrete("forall(i,j) (A(i,j) = t) where (forall(k) t += B(i,k)*C(k,j))").unwrap();
        let (vars, inner) = s.forall_chain();
        assert_eq!(vars.len(), 2);
        assert!(matches!(inner, IndexStmt::Where { .. }));
    }
}
