//! Brute-force reference evaluation over dense arrays, random instance
//! generation and result comparison.

use std::collections::HashMap;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::notation::{BinaryOp, IndexExpr, IndexVar, SourceExpr};
use crate::storage::{StorageError, TensorFormat, TensorStorage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no dense value bound for `{0}`")]
    MissingInput(String),
    #[error("`{tensor}` has order {found} but is accessed with {expected} indices")]
    ArityMismatch { tensor: String, expected: usize, found: usize },
    #[error("index variable `{var}` has extent {first} and {second}")]
    ShapeMismatch { var: String, first: usize, second: usize },
    #[error("extent of index variable `{0}` is unknown")]
    UnknownDimension(String),
    #[error("density {0} is outside (0, 1]")]
    InvalidDensity(f64),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub dims: Vec<usize>,
    pub vals: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        DenseTensor { dims: dims.to_vec(), vals: vec![0.0; dims.iter().product()] }
    }

    pub fn flat(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.dims).fold(0, |f, (&c, &d)| f * d + c)
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.vals[self.flat(coords)]
    }

    pub fn set(&mut self, coords: &[usize], v: f64) {
        let f = self.flat(coords);
        self.vals[f] = v;
    }

    pub fn from_storage(s: &TensorStorage) -> Self {
        let mut d = DenseTensor::zeros(s.dims());
        for (c, v) in s.entries() {
            let f = d.flat(&c);
            d.vals[f] += v;
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.vals.iter().filter(|v| **v != 0.0).count()
    }

    /// Every coordinate tuple in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.vals.len()).map(move |mut f| {
            let mut c = vec![0; self.dims.len()];
            for m in (0..self.dims.len()).rev() {
                c[m] = f % self.dims[m];
                f /= self.dims[m];
            }
            c
        })
    }
}

/// Evaluates index notation by nested loops over full index ranges.
pub fn eval_dense(src: &SourceExpr, inputs: &HashMap<String, DenseTensor>) -> Result<DenseTensor, OracleError> {
    let mut dims: HashMap<IndexVar, usize> = HashMap::new();
    for a in src.rhs.accesses() {
        let t = inputs.get(a.tensor.name()).ok_or_else(|| OracleError::MissingInput(a.tensor.name().to_string()))?;
        if t.dims.len() != a.indices.len() {
            return Err(OracleError::ArityMismatch {
                tensor: a.tensor.name().to_string(),
                expected: a.indices.len(),
                found: t.dims.len(),
            });
        }
        for (v, &d) in a.indices.iter().zip(&t.dims) {
            if let Some(&e) = dims.get(v) {
                if e != d {
                    return Err(OracleError::ShapeMismatch { var: v.name().to_string(), first: e, second: d });
                }
            }
            dims.insert(v.clone(), d);
        }
    }
    let out_dims: Vec<usize> = src
        .lhs
        .indices
        .iter()
        .map(|v| dims.get(v).copied().ok_or_else(|| OracleError::UnknownDimension(v.name().to_string())))
        .collect::<Result<_, _>>()?;
    let slots: Vec<IndexVar> = src.index_vars();
    let slot = |v: &IndexVar| slots.iter().position(|x| x == v).expect("index var is listed");
    let extents: Vec<usize> = slots.iter().map(|v| dims.get(v).copied().unwrap_or(0)).collect();
    let expr = Node::build(&src.rhs, inputs, &slot);
    let lhs: Vec<usize> = src.lhs.indices.iter().map(|v| slot(v)).collect();
    let mut out = DenseTensor::zeros(&out_dims);
    let mut env = vec![0usize; slots.len()];
    for f in 0..out.vals.len() {
        let mut r = f;
        for m in (0..lhs.len()).rev() {
            env[lhs[m]] = r % out_dims[m];
            r /= out_dims[m];
        }
        out.vals[f] = expr.eval(&extents, &mut env);
    }
    Ok(out)
}

/// Index expression with variables resolved to slots.
enum Node<'a> {
    Literal(f64),
    Access { vals: &'a [f64], vars: Vec<usize>, dims: &'a [usize] },
    Add(Box<Node<'a>>, Box<Node<'a>>),
    Mul(Box<Node<'a>>, Box<Node<'a>>),
    Sum { vars: Vec<usize>, body: Box<Node<'a>> },
}

impl<'a> Node<'a> {
    fn build(e: &IndexExpr, inputs: &'a HashMap<String, DenseTensor>, slot: &dyn Fn(&IndexVar) -> usize) -> Self {
        match e {
            IndexExpr::Literal(v) => Node::Literal(*v),
            IndexExpr::Access(a) => {
                let t = &inputs[a.tensor.name()];
                Node::Access { vals: &t.vals, vars: a.indices.iter().map(slot).collect(), dims: &t.dims }
            }
            IndexExpr::Binary { op, lhs, rhs } => {
                let (l, r) = (Box::new(Node::build(lhs, inputs, slot)), Box::new(Node::build(rhs, inputs, slot)));
                match op {
                    BinaryOp::Add => Node::Add(l, r),
                    BinaryOp::Mul => Node::Mul(l, r),
                }
            }
            IndexExpr::Reduction { vars, body } => {
                Node::Sum { vars: vars.iter().map(slot).collect(), body: Box::new(Node::build(body, inputs, slot)) }
            }
        }
    }

    fn eval(&self, extents: &[usize], env: &mut Vec<usize>) -> f64 {
        match self {
            Node::Literal(v) => *v,
            Node::Access { vals, vars, dims } => {
                let f = vars.iter().zip(dims.iter()).fold(0, |f, (&v, &d)| f * d + env[v]);
                vals[f]
            }
            Node::Add(l, r) => l.eval(extents, env) + r.eval(extents, env),
            Node::Mul(l, r) => l.eval(extents, env) * r.eval(extents, env),
            Node::Sum { vars, body } => sum_over(vars, body, extents, env),
        }
    }
}

fn sum_over(vars: &[usize], body: &Node, extents: &[usize], env: &mut Vec<usize>) -> f64 {
    let Some((&v, rest)) = vars.split_first() else {
        return body.eval(extents, env);
    };
    let mut total = 0.0;
    for x in 0..extents[v] {
        env[v] = x;
        total += sum_over(rest, body, extents, env);
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSpec {
    pub dims: Vec<usize>,
    pub density: f64,
    pub seed: u64,
}

impl RandomSpec {
    pub fn new(dims: &[usize], density: f64, seed: u64) -> Self {
        RandomSpec { dims: dims.to_vec(), density, seed }
    }
}

/// Exactly `round(density * size)` distinct coordinates placed uniformly
/// at random, ascending in row-major order, with values uniform in [0, 1).
pub fn gen_entries(spec: &RandomSpec) -> Result<Vec<(Vec<usize>, f64)>, OracleError> {
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(OracleError::InvalidDensity(spec.density));
    }
    let total: usize = spec.dims.iter().product();
    let count = ((spec.density * total as f64).round() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picks = sample(&mut rng, total, count).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .map(|mut f| {
            let mut c = vec![0; spec.dims.len()];
            for m in (0..spec.dims.len()).rev() {
                c[m] = f % spec.dims[m];
                f /= spec.dims[m];
            }
            (c, rng.gen::<f64>())
        })
        .collect())
}

/// Random storage in `format` without a dense twin, for large instances.
pub fn gen_random_storage(spec: &RandomSpec, format: TensorFormat) -> Result<TensorStorage, OracleError> {
    Ok(TensorStorage::from_entries(&spec.dims, format, gen_entries(spec)?)?)
}

/// Random storage in `format` plus its dense twin.
pub fn gen_random(spec: &RandomSpec, format: TensorFormat) -> Result<(TensorStorage, DenseTensor), OracleError> {
    let entries = gen_entries(spec)?;
    let mut dense = DenseTensor::zeros(&spec.dims);
    for (c, v) in &entries {
        dense.set(c, *v);
    }
    let storage = TensorStorage::from_entries(&spec.dims, format, entries)?;
    Ok((storage, dense))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub coords: Vec<usize>,
    pub got: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub pass: bool,
    pub mismatches: usize,
    /// The first ten mismatches in row-major order.
    pub first: Vec<Mismatch>,
    pub max_rel_error: f64,
    pub note: Option<String>,
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pass {
            return write!(f, "check passed (max relative error {:.3e})", self.max_rel_error);
        }
        if let Some(n) = &self.note {
            return write!(f, "check failed: {n}");
        }
        write!(f, "check failed: {} mismatches", self.mismatches)?;
        for m in &self.first {
            write!(f, "\n  at {:?}: got {} expected {}", m.coords, m.got, m.expected)?;
        }
        Ok(())
    }
}

const ABS_FLOOR: f64 = 1e-12;

/// Compares stored values against `expected`. Coordinates absent from
/// the storage count as zero, so stored zeros and missing entries agree.
pub fn compare(result: &TensorStorage, expected: &DenseTensor, rel_tol: f64) -> CompareReport {
    if result.dims() != expected.dims.as_slice() {
        return CompareReport {
            pass: false,
            mismatches: 0,
            first: Vec::new(),
            max_rel_error: f64::INFINITY,
            note: Some(format!("dimensions {:?} differ from {:?}", result.dims(), expected.dims)),
        };
    }
    let got = DenseTensor::from_storage(result);
    let mut first = Vec::new();
    let mut mismatches = 0;
    let mut max_rel: f64 = 0.0;
    for (k, (g, e)) in got.vals.iter().zip(&expected.vals).enumerate() {
        let scale = g.abs().max(e.abs()).max(ABS_FLOOR);
        let rel = (g - e).abs() / scale;
        max_rel = max_rel.max(if rel.is_nan() { f64::INFINITY } else { rel });
        if !(rel <= rel_tol) {
            mismatches += 1;
            if first.len() < 10 {
                let coords = got.coords().nth(k).unwrap();
                first.push(Mismatch { coords, got: *g, expected: *e });
            }
        }
    }
    CompareReport { pass: mismatches == 0, mismatches, first, max_rel_error: max_rel, note: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::parse;

    fn dense(dims: &[usize], vals: &[f64]) -> DenseTensor {
        DenseTensor { dims: dims.to_vec(), vals: vals.to_vec() }
    }

    #[test]
    fn eval_examples() {
        let eye = dense(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let src = parse("A(i,j) = sum(k)(B(i,k)*C(k,j))").unwrap();
        let inputs = HashMap::from([("B".to_string(), eye.clone()), ("C".to_string(), eye.clone())]);
        assert_eq!(eval_dense(&src, &inputs).unwrap(), eye);

        let m = dense(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let src = parse("a(i) = sum(j)(B(i,j)*C(i,j))").unwrap();
        let inputs = HashMap::from([("B".to_string(), m.clone()), ("C".to_string(), m)]);
        assert_eq!(eval_dense(&src, &inputs).unwrap().vals, vec![5.0, 25.0]);

        let z = DenseTensor::zeros(&[2, 3]);
        let src = parse("A(i,j) = B(i,j) + C(i,j)").unwrap();
        let inputs = HashMap::from([("B".to_string(), z.clone()), ("C".to_string(), z.clone())]);
        assert_eq!(eval_dense(&src, &inputs).unwrap(), z);
    }

    #[test]
    fn random_generation() {
        let spec = RandomSpec::new(&[1000, 1000], 1e-3, 7);
        let (s, d) = gen_random(&spec, TensorFormat::csr()).unwrap();
        assert!((900..=1100).contains(&s.nnz()), "{}", s.nnz());
        assert_eq!(DenseTensor::from_storage(&s), d);
        let (again, _) = gen_random(&spec, TensorFormat::csr()).unwrap();
        assert_eq!(s, again);
        let (full, _) = gen_random(&RandomSpec::new(&[4, 5], 1.0, 1), TensorFormat::csr()).unwrap();
        assert_eq!(full.nnz(), 20);
        assert!(gen_random(&RandomSpec::new(&[4], 0.0, 1), TensorFormat::dense(1)).is_err());
    }

    #[test]
    fn compare_examples() {
        let (s, d) = gen_random(&RandomSpec::new(&[6, 6], 0.3, 3), TensorFormat::csr()).unwrap();
        assert!(compare(&s, &d, 1e-10).pass);
        let mut off = d.clone();
        let k = off.vals.iter().position(|v| *v != 0.0).unwrap();
        off.vals[k] *= 1.0 + 1e-6;
        let r = compare(&s, &off, 1e-10);
        assert!(!r.pass && r.mismatches == 1 && r.first.len() == 1);

        let zero = TensorStorage::from_entries(&[3], TensorFormat::sparse_vector(), [(vec![1], 0.0)]).unwrap();
        assert!(compare(&zero, &DenseTensor::zeros(&[3]), 1e-10).pass);
    }
}
