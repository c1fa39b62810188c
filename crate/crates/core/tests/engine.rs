use std::collections::HashMap;

use cin_core::engine::{
    assemble_index, execute, execute_with, run_compute_after_assemble, EngineError, ExecOptions,
};
use cin_core::graph::{build_graph, plan_loops, ExecutionMode, LoopPlan, PlanOptions};
use cin_core::notation::parse;
use cin_core::oracle::{compare, eval_dense, gen_random, DenseTensor, RandomSpec};
use cin_core::storage::{TensorFormat, TensorStorage};
use cin_core::transform::{parse_schedule, schedule};

const SPMM: &str = "A(i,j) = sum(k)(B(i,k)*C(k,j))";
const GUSTAVSON: &str = "reorder(i,k,j); workspace(B(i,k)*C(k,j), {j}, dense)";

fn plan(expr: &str, sched: &str, formats: &[(&str, TensorFormat)], options: PlanOptions) -> LoopPlan {
    let src = parse(expr).unwrap();
    let s = schedule(&src, &parse_schedule(sched).unwrap()).unwrap();
    let f = formats.iter().map(|(n, f)| (n.to_string(), f.clone())).collect();
    plan_loops(&build_graph(&s.stmt, &f).unwrap(), options).unwrap()
}

fn csr_all(names: &[&str]) -> Vec<(&'static str, TensorFormat)> {
    names.iter().map(|n| (&*n.to_string().leak(), TensorFormat::csr())).collect()
}

fn instance(
    specs: &[(&str, RandomSpec, TensorFormat)],
) -> (HashMap<String, TensorStorage>, HashMap<String, DenseTensor>) {
    let mut st = HashMap::new();
    let mut de = HashMap::new();
    for (name, spec, f) in specs {
        let (s, d) = gen_random(spec, f.clone()).unwrap();
        st.insert(name.to_string(), s);
        de.insert(name.to_string(), d);
    }
    (st, de)
}

fn checked() -> ExecOptions {
    ExecOptions { check_invariants: true, ..Default::default() }
}

fn identity(n: usize) -> TensorStorage {
    TensorStorage::from_entries(&[n, n], TensorFormat::csr(), (0..n).map(|i| (vec![i, i], 1.0))).unwrap()
}

#[test]
fn identity_spmm() {
    let p = plan(SPMM, GUSTAVSON, &csr_all(&["A", "B", "C"]), PlanOptions::default());
    let inputs = HashMap::from([("B".to_string(), identity(2)), ("C".to_string(), identity(2))]);
    let (a, stats) = execute(&p, &inputs, ExecutionMode::Fused).unwrap();
    assert_eq!(a, identity(2));
    assert_eq!(stats.sparse_inserts, 0);
    let idx = assemble_index(&p, &inputs).unwrap();
    assert_eq!(idx.pos(1).unwrap(), &[0, 1, 2]);
    assert_eq!(idx.idx(1).unwrap(), &[0, 1]);
    let (c, _) = run_compute_after_assemble(&p, &inputs, &idx).unwrap();
    assert_eq!(c.vals(), &[1.0, 1.0]);
}

/// Σ over stored (i,k) of B of the number of stored entries in row k of C.
fn gustavson_mults(b: &DenseTensor, c: &DenseTensor) -> u64 {
    let (n, m) = (b.dims[0], b.dims[1]);
    let row_nnz: Vec<u64> = (0..m).map(|k| (0..c.dims[1]).filter(|&j| c.get(&[k, j]) != 0.0).count() as u64).collect();
    let mut total = 0;
    for i in 0..n {
        for k in 0..m {
            if b.get(&[i, k]) != 0.0 {
                total += row_nnz[k];
            }
        }
    }
    total
}

#[test]
fn workspace_spmm_matches_oracle_and_counts() {
    let p = plan(SPMM, GUSTAVSON, &csr_all(&["A", "B", "C"]), PlanOptions::default());
    let src = parse(SPMM).unwrap();
    for seed in 0..5 {
        let (st, de) = instance(&[
            ("B", RandomSpec::new(&[40, 40], 0.1, seed), TensorFormat::csr()),
            ("C", RandomSpec::new(&[40, 40], 0.1, seed + 100), TensorFormat::csr()),
        ]);
        let (a, stats) = execute_with(&p, &st, ExecutionMode::Fused, &checked()).unwrap();
        let r = compare(&a, &eval_dense(&src, &de).unwrap(), 1e-10);
        assert!(r.pass, "{r}");
        assert_eq!(stats.mults, gustavson_mults(&de["B"], &de["C"]));
        assert_eq!(stats.sparse_inserts, 0);
        assert_eq!(stats.ws_resets, 40);
        assert_eq!(stats.merge_compares, 0);
    }
}

#[test]
fn workspace_spadd_has_no_merges() {
    let expr = "A(i,j) = B(i,j) + C(i,j) + D(i,j)";
    let sched = "workspace(B(i,j)+C(i,j)+D(i,j), {j}); workspace_reuse(B(i,j)+C(i,j), {j}); workspace_reuse(B(i,j), {j})";
    let p = plan(expr, sched, &csr_all(&["A", "B", "C", "D"]), PlanOptions::default());
    let (st, de) = instance(&[
        ("B", RandomSpec::new(&[30, 30], 0.1, 1), TensorFormat::csr()),
        ("C", RandomSpec::new(&[30, 30], 0.1, 2), TensorFormat::csr()),
        ("D", RandomSpec::new(&[30, 30], 0.1, 3), TensorFormat::csr()),
    ]);
    let (a, stats) = execute_with(&p, &st, ExecutionMode::Fused, &checked()).unwrap();
    assert!(compare(&a, &eval_dense(&parse(expr).unwrap(), &de).unwrap(), 1e-10).pass);
    assert_eq!(stats.merge_compares, 0);
}

#[test]
fn merged_spadd_counts_compares() {
    let expr = "A(i,j) = B(i,j) + C(i,j)";
    let p = plan(expr, "", &csr_all(&["A", "B", "C"]), PlanOptions::default());
    let (st, de) = instance(&[
        ("B", RandomSpec::new(&[30, 30], 0.2, 5), TensorFormat::csr()),
        ("C", RandomSpec::new(&[30, 30], 0.2, 6), TensorFormat::csr()),
    ]);
    let (a, stats) = execute(&p, &st, ExecutionMode::Fused).unwrap();
    let union = de["B"].vals.iter().zip(&de["C"].vals).filter(|(b, c)| **b != 0.0 || **c != 0.0).count() as u64;
    assert!(compare(&a, &eval_dense(&parse(expr).unwrap(), &de).unwrap(), 1e-10).pass);
    assert!(stats.merge_compares >= union - 1);
    assert_eq!(a.nnz() as u64, union);
}

#[test]
fn assemble_then_compute_equals_fused() {
    let sorted = plan(SPMM, GUSTAVSON, &csr_all(&["A", "B", "C"]), PlanOptions::default());
    let unsorted = plan(SPMM, GUSTAVSON, &csr_all(&["A", "B", "C"]), PlanOptions { mode: ExecutionMode::Fused, sort: false });
    let src = parse(SPMM).unwrap();
    for seed in 0..5 {
        let (st, de) = instance(&[
            ("B", RandomSpec::new(&[25, 30], 0.1, seed), TensorFormat::csr()),
            ("C", RandomSpec::new(&[30, 20], 0.1, seed + 50), TensorFormat::csr()),
        ]);
        let (fused, _) = execute(&sorted, &st, ExecutionMode::Fused).unwrap();
        let idx = assemble_index(&sorted, &st).unwrap();
        assert_eq!(idx.pos(1), fused.pos(1));
        assert_eq!(idx.idx(1), fused.idx(1));
        let (computed, stats) = run_compute_after_assemble(&sorted, &st, &idx).unwrap();
        assert_eq!(computed, fused);
        assert_eq!(stats.appends, 0);

        let expected = eval_dense(&src, &de).unwrap();
        let pattern: Vec<Vec<usize>> = expected.coords().filter(|c| expected.get(c) != 0.0).collect();
        let stored: Vec<Vec<usize>> = idx.entries().into_iter().map(|e| e.0).collect();
        assert!(pattern.iter().all(|c| stored.contains(c)));

        let (loose, _) = execute_with(&unsorted, &st, ExecutionMode::Fused, &checked()).unwrap();
        assert!(!loose.format().is_ordered());
        for i in 0..25 {
            let row = |s: &TensorStorage| {
                let mut r: Vec<u64> = s.idx(1).unwrap()[s.pos(1).unwrap()[i] as usize..s.pos(1).unwrap()[i + 1] as usize].to_vec();
                r.sort_unstable();
                r
            };
            assert_eq!(row(&loose), row(&fused));
        }
        assert!(compare(&loose, &expected, 1e-10).pass);
    }
}

#[test]
fn compute_rejects_foreign_index() {
    let p = plan(SPMM, GUSTAVSON, &csr_all(&["A", "B", "C"]), PlanOptions::default());
    let inputs = HashMap::from([("B".to_string(), identity(3)), ("C".to_string(), identity(3))]);
    let wrong = TensorStorage::from_entries(&[3, 3], TensorFormat::csr(), [(vec![0, 1], 0.0)]).unwrap();
    assert!(matches!(run_compute_after_assemble(&p, &inputs, &wrong), Err(EngineError::MissingSlot(_))));
    assert!(matches!(execute(&p, &inputs, ExecutionMode::Compute), Err(EngineError::MissingIndex)));
}

#[test]
fn mttkrp_counts() {
    let expr = "A(i,j) = sum(k,l)(B(i,k,l)*C(l,j)*D(k,j))";
    let formats = [("B", TensorFormat::csf(3))];
    let (st, de) = instance(&[
        ("B", RandomSpec::new(&[12, 10, 8], 0.05, 9), TensorFormat::csf(3)),
        ("C", RandomSpec::new(&[8, 6], 1.0, 10), TensorFormat::dense(2)),
        ("D", RandomSpec::new(&[10, 6], 1.0, 11), TensorFormat::dense(2)),
    ]);
    let b = &de["B"];
    let nnz = b.nnz() as u64;
    let mut fibers = std::collections::BTreeSet::new();
    for c in b.coords() {
        if b.get(&c) != 0.0 {
            fibers.insert((c[0], c[1]));
        }
    }
    let j = 6;
    let expected = eval_dense(&parse(expr).unwrap(), &de).unwrap();

    let plain = plan(expr, "reorder(i,k,l,j)", &formats, PlanOptions::default());
    let (a, stats) = execute(&plain, &st, ExecutionMode::Fused).unwrap();
    assert!(compare(&a, &expected, 1e-10).pass);
    assert_eq!(stats.mults, 2 * nnz * j);

    let hoisted = plan(expr, "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense)", &formats, PlanOptions::default());
    let (a, stats) = execute(&hoisted, &st, ExecutionMode::Fused).unwrap();
    assert!(compare(&a, &expected, 1e-10).pass);
    assert_eq!(stats.mults, nnz * j + fibers.len() as u64 * j);
}

#[test]
fn dense_output_kernels() {
    let cases = [
        ("a(i) = sum(j)(B(i,j)*C(i,j))", vec![("B", vec![9, 7], TensorFormat::csr()), ("C", vec![9, 7], TensorFormat::csr())]),
        ("A(i,j) = sum(k)(B(i,j,k)*c(k))", vec![("B", vec![5, 6, 7], TensorFormat::csf(3)), ("c", vec![7], TensorFormat::dense(1))]),
    ];
    for (expr, specs) in cases {
        let specs: Vec<(&str, RandomSpec, TensorFormat)> =
            specs.into_iter().enumerate().map(|(k, (n, d, f))| (n, RandomSpec::new(&d, 0.3, k as u64), f)).collect();
        let (st, de) = instance(&specs);
        let formats: Vec<(&str, TensorFormat)> = specs.iter().map(|(n, _, f)| (*n, f.clone())).collect();
        let p = plan(expr, "", &formats, PlanOptions::default());
        let (out, _) = execute_with(&p, &st, ExecutionMode::Fused, &checked()).unwrap();
        let r = compare(&out, &eval_dense(&parse(expr).unwrap(), &de).unwrap(), 1e-10);
        assert!(r.pass, "{expr}: {r}");
        let (again, _) = execute(&p, &st, ExecutionMode::Compute).unwrap();
        assert_eq!(again, out);
    }
}

#[test]
fn input_errors() {
    let p = plan(SPMM, GUSTAVSON, &csr_all(&["A", "B", "C"]), PlanOptions::default());
    let only_b = HashMap::from([("B".to_string(), identity(2))]);
    assert!(matches!(execute(&p, &only_b, ExecutionMode::Fused), Err(EngineError::MissingInput(n)) if n == "C"));
    let mismatched = HashMap::from([("B".to_string(), identity(2)), ("C".to_string(), identity(3))]);
    assert!(matches!(execute(&p, &mismatched, ExecutionMode::Fused), Err(EngineError::ShapeMismatch { .. })));
    let dense_c = TensorStorage::new(&[2, 2], TensorFormat::dense(2)).unwrap();
    let wrong_format = HashMap::from([("B".to_string(), identity(2)), ("C".to_string(), dense_c)]);
    assert!(matches!(execute(&p, &wrong_format, ExecutionMode::Fused), Err(EngineError::FormatMismatch { .. })));
}
