//! Desk-scale benchmark suites comparing merge-based and workspace plans.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cin_core::graph::{ExecutionMode, PlanOptions};
use cin_core::oracle::{gen_random_storage, RandomSpec};
use cin_core::storage::{TensorFormat, TensorStorage};

use crate::{lower, make_plan, oracle_check, time_plan, CliError, CsvRow, RunConfig, Timed};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Spmm,
    Spadd,
    Mttkrp,
    Spmttkrp,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Spmm, Suite::Spadd, Suite::Mttkrp, Suite::Spmttkrp];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Spmm => "spmm",
            Suite::Spadd => "spadd",
            Suite::Mttkrp => "mttkrp",
            Suite::Spmttkrp => "spmttkrp",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected spmm, spadd, mttkrp or spmttkrp)"))
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub repeat: usize,
    /// Smaller instances for smoke runs.
    pub quick: bool,
    /// Compare every result against the dense oracle.
    pub check: bool,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { repeat: 5, quick: false, check: false, seed: 1 }
    }
}

pub struct BenchTable {
    pub suite: Suite,
    pub rows: Vec<CsvRow>,
    pub text: String,
}

pub const SPMM_DENSITIES: [f64; 3] = [1e-4, 4e-4, 1e-3];
pub const SPMTTKRP_DENSITIES: [f64; 6] = [1e-3, 1e-2, 0.1, 0.25, 0.5, 1.0];

const MATMUL: &str = "A(i,j) = sum(k)(B(i,k)*C(k,j))";
const MATMUL_WS: &str = "reorder(i,k,j); workspace(B(i,k)*C(k,j), {j}, dense)";
const MTTKRP: &str = "A(i,j) = sum(k,l)(B(i,k,l)*C(l,j)*D(k,j))";
const MTTKRP_WS1: &str = "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense)";
const MTTKRP_WS2: &str = "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense); workspace(w0(j)*D(k,j), {j}, dense)";

/// One kernel ready to time: expression, schedule, formats and inputs.
pub struct Kernel<'a> {
    pub expr: &'a str,
    pub schedule: Option<&'a str>,
    pub formats: &'a [(&'a str, &'a str)],
    pub mode: ExecutionMode,
    pub sort: bool,
}

pub fn run_kernel(k: &Kernel, inputs: &HashMap<String, TensorStorage>, opts: &BenchOptions) -> Result<Timed, CliError> {
    let mut cfg = RunConfig::new(k.expr);
    for (n, f) in k.formats {
        cfg = cfg.format(n, f);
    }
    if let Some(s) = k.schedule {
        cfg = cfg.schedule(s);
    }
    let lowered = lower(&cfg)?;
    let plan = make_plan(&lowered, PlanOptions { mode: k.mode, sort: k.sort })?;
    let timed = time_plan(&plan, inputs, 1, opts.repeat, false)?;
    if opts.check {
        let (pass, msg) = oracle_check(&lowered.src, inputs, &timed.result, k.mode)?;
        if !pass {
            return Err(anyhow::anyhow!("{} [{}]: {msg}", k.expr, k.schedule.unwrap_or("")).into());
        }
    }
    Ok(timed)
}

fn random(dims: &[usize], density: f64, seed: u64, format: TensorFormat) -> Result<TensorStorage, CliError> {
    gen_random_storage(&RandomSpec::new(dims, density, seed), format).map_err(|e| anyhow::Error::from(e).into())
}

fn inputs(list: Vec<(&str, TensorStorage)>) -> HashMap<String, TensorStorage> {
    list.into_iter().map(|(n, s)| (n.to_string(), s)).collect()
}

pub fn run_suite(suite: Suite, opts: &BenchOptions) -> Result<BenchTable, CliError> {
    match suite {
        Suite::Spmm => spmm(opts),
        Suite::Spadd => spadd(opts),
        Suite::Mttkrp => mttkrp(opts),
        Suite::Spmttkrp => spmttkrp(opts),
    }
}

/// Workspace SpMM with sorted and unsorted drains, fused and split into
/// assembly and compute.
pub fn spmm(opts: &BenchOptions) -> Result<BenchTable, CliError> {
    let n = if opts.quick { 300 } else { 2000 };
    let formats = [("A", "csr"), ("B", "csr"), ("C", "csr")];
    let mut rows = Vec::new();
    let mut text = format!("spmm n={n}\n{:>9} {:>5} {:>10} {:>11} {:>10} {:>10}\n", "density", "sort", "fused_ms", "assemble_ms", "compute_ms", "nnz(A)");
    for (d, &density) in SPMM_DENSITIES.iter().enumerate() {
        let seed = opts.seed + 10 * d as u64;
        let ins = inputs(vec![
            ("B", random(&[n, n], density, seed, TensorFormat::csr())?),
            ("C", random(&[n, n], density, seed + 1, TensorFormat::csr())?),
        ]);
        for sort in [true, false] {
            let params = format!("n={n} density={density} sort={}", if sort { "on" } else { "off" });
            let mut ms = Vec::new();
            let mut nnz = 0;
            for mode in [ExecutionMode::Fused, ExecutionMode::Assemble, ExecutionMode::Compute] {
                let k = Kernel { expr: MATMUL, schedule: Some(MATMUL_WS), formats: &formats, mode, sort };
                let t = run_kernel(&k, &ins, opts)?;
                nnz = t.result.nnz();
                ms.push(t.median_ms);
                rows.push(CsvRow::new("spmm", &mode.to_string(), params.clone(), &t));
            }
            let _ = writeln!(
                text,
                "{density:>9} {:>5} {:>10.3} {:>11.3} {:>10.3} {nnz:>10}",
                if sort { "on" } else { "off" },
                ms[0],
                ms[1],
                ms[2]
            );
        }
    }
    Ok(BenchTable { suite: Suite::Spmm, rows, text })
}

/// Expression and workspace schedule adding `k` operands `B0..B{k-1}`.
pub fn spadd_kernel(k: usize) -> (String, String) {
    let terms: Vec<String> = (0..k).map(|t| format!("B{t}(i,j)")).collect();
    let expr = format!("A(i,j) = {}", terms.join(" + "));
    let mut sched = vec![format!("workspace({}, {{j}})", terms.join("+"))];
    for m in (1..k).rev() {
        sched.push(format!("workspace_reuse({}, {{j}})", terms[..m].join("+")));
    }
    (expr, sched.join("; "))
}

/// Adds `k` sparse matrices with a chain of pairwise merges and with one
/// workspace plan.
pub fn spadd(opts: &BenchOptions) -> Result<BenchTable, CliError> {
    let n = if opts.quick { 300 } else { 2000 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    let mut text = format!("spadd n={n}\n{:>3} {:>10} {:>13} {:>8} {:>15}\n", "k", "merge_ms", "workspace_ms", "speedup", "merge_compares");
    for k in 2..=10 {
        let mut ins = HashMap::new();
        for t in 0..k {
            let density = rng.gen_range(1e-4..=0.01);
            ins.insert(format!("B{t}"), random(&[n, n], density, opts.seed + 100 * k as u64 + t as u64, TensorFormat::csr())?);
        }
        let params = format!("n={n} k={k}");

        let pair = [("X", "csr"), ("Y", "csr"), ("T", "csr")];
        let step = Kernel { expr: "T(i,j) = X(i,j) + Y(i,j)", schedule: None, formats: &pair, mode: ExecutionMode::Fused, sort: true };
        let mut acc = ins["B0"].clone();
        let mut merged: Option<Timed> = None;
        for t in 1..k {
            let step_in = inputs(vec![("X", acc), ("Y", ins[&format!("B{t}")].clone())]);
            let timed = run_kernel(&step, &step_in, &BenchOptions { check: false, ..opts.clone() })?;
            acc = timed.result.clone();
            merged = Some(match merged {
                None => timed,
                Some(mut m) => {
                    m.median_ms += timed.median_ms;
                    let s = &mut m.stats;
                    s.mults += timed.stats.mults;
                    s.adds += timed.stats.adds;
                    s.merge_compares += timed.stats.merge_compares;
                    s.sparse_inserts += timed.stats.sparse_inserts;
                    s.appends += timed.stats.appends;
                    m.result = timed.result;
                    m
                }
            });
        }
        let merged = merged.unwrap();

        let (expr, sched) = spadd_kernel(k);
        let formats: Vec<(String, &str)> = std::iter::once("A".to_string()).chain((0..k).map(|t| format!("B{t}"))).map(|n| (n, "csr")).collect();
        let formats: Vec<(&str, &str)> = formats.iter().map(|(n, f)| (n.as_str(), *f)).collect();
        let ws = Kernel { expr: &expr, schedule: Some(&sched), formats: &formats, mode: ExecutionMode::Fused, sort: true };
        let timed = run_kernel(&ws, &ins, opts)?;
        if opts.check && timed.result.entries() != merged.result.entries() {
            return Err(anyhow::anyhow!("spadd k={k}: merge chain and workspace results differ").into());
        }
        let _ = writeln!(
            text,
            "{k:>3} {:>10.3} {:>13.3} {:>7.2}x {:>15}",
            merged.median_ms,
            timed.median_ms,
            merged.median_ms / timed.median_ms,
            merged.stats.merge_compares
        );
        rows.push(CsvRow::new("spadd", "merge", params.clone(), &merged));
        rows.push(CsvRow::new("spadd", "workspace", params, &timed));
    }
    Ok(BenchTable { suite: Suite::Spadd, rows, text })
}

/// MTTKRP with dense factors, without and with the hoisting workspace.
pub fn mttkrp(opts: &BenchOptions) -> Result<BenchTable, CliError> {
    let (n, j) = if opts.quick { (30, 8) } else { (100, 32) };
    let density = 1e-2;
    let ins = inputs(vec![
        ("B", random(&[n, n, n], density, opts.seed, TensorFormat::csf(3))?),
        ("C", random(&[n, j], 1.0, opts.seed + 1, TensorFormat::dense(2))?),
        ("D", random(&[n, j], 1.0, opts.seed + 2, TensorFormat::dense(2))?),
    ]);
    let formats = [("A", "dense"), ("B", "csf"), ("C", "dense"), ("D", "dense")];
    let params = format!("n={n} J={j} density={density}");
    let mut rows = Vec::new();
    let mut text = format!("mttkrp {params}\n{:>12} {:>10} {:>12}\n", "kernel", "median_ms", "mults");
    for (name, sched) in [("unscheduled", None), ("workspace", Some(MTTKRP_WS1))] {
        let k = Kernel { expr: MTTKRP, schedule: sched, formats: &formats, mode: ExecutionMode::Fused, sort: true };
        let t = run_kernel(&k, &ins, opts)?;
        let _ = writeln!(text, "{name:>12} {:>10.3} {:>12}", t.median_ms, t.stats.mults);
        rows.push(CsvRow::new("mttkrp", name, params.clone(), &t));
    }
    Ok(BenchTable { suite: Suite::Mttkrp, rows, text })
}

/// MTTKRP with factor matrices of varying density, stored dense with one
/// workspace against stored sparse with two workspaces and a sparse result.
/// Rows alternate `dense`, `sparse` per density.
pub fn spmttkrp(opts: &BenchOptions) -> Result<BenchTable, CliError> {
    let (n, j) = if opts.quick { (30, 30) } else { (100, 100) };
    let density = 1e-2;
    let b = random(&[n, n, n], density, opts.seed, TensorFormat::csf(3))?;
    let mut rows = Vec::new();
    let mut text = format!(
        "spmttkrp n={n} J={j} density={density}\n{:>14} {:>10} {:>10} {:>8}\n",
        "matrix_density", "dense_ms", "sparse_ms", "speedup"
    );
    for (d, &md) in SPMTTKRP_DENSITIES.iter().enumerate() {
        let seed = opts.seed + 10 * (d as u64 + 1);
        let params = format!("n={n} J={j} density={density} matrix_density={md}");
        let mut ms = Vec::new();
        for (name, sched, fmt) in [("dense", MTTKRP_WS1, "dense"), ("sparse", MTTKRP_WS2, "csr")] {
            let f = TensorFormat::from_name(fmt, 2).map_err(anyhow::Error::from)?;
            let ins = inputs(vec![
                ("B", b.clone()),
                ("C", random(&[n, j], md, seed, f.clone())?),
                ("D", random(&[n, j], md, seed + 1, f)?),
            ]);
            let formats = [("A", fmt), ("B", "csf"), ("C", fmt), ("D", fmt)];
            let k = Kernel { expr: MTTKRP, schedule: Some(sched), formats: &formats, mode: ExecutionMode::Fused, sort: true };
            let t = run_kernel(&k, &ins, opts)?;
            ms.push(t.median_ms);
            rows.push(CsvRow::new("spmttkrp", name, params.clone(), &t));
        }
        let _ = writeln!(text, "{md:>14} {:>10.3} {:>10.3} {:>7.2}x", ms[0], ms[1], ms[0] / ms[1]);
    }
    Ok(BenchTable { suite: Suite::Spmttkrp, rows, text })
}
