//! Front end for the cin compiler: binding tensors, lowering and
//! scheduling expressions, running kernels and the benchmark suites.

pub mod bench;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use cin_core::engine::{assemble_index, execute_with, run_compute_after_assemble, ExecOptions, ExecutionStats};
use cin_core::graph::{build_graph, explain_plan, plan_loops, ExecutionMode, LoopPlan, PlanOptions};
use cin_core::io::{load, store, FileKind};
use cin_core::notation::{parse, print_math, print_source_math, print_stmt, IndexStmt, SourceExpr};
use cin_core::oracle::{compare, eval_dense, gen_random_storage, DenseTensor, RandomSpec};
use cin_core::storage::{TensorFormat, TensorStorage};
use cin_core::transform::{lower_to_concrete, parse_schedule, schedule};

/// Relative tolerance of `--check`.
pub const CHECK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schedule rejected: {0}")]
    Schedule(String),
    #[error("cannot plan kernel: {0}")]
    Plan(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schedule(_) | CliError::Plan(_) => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Where an input tensor comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Binding {
    Path(PathBuf),
    Random(RandomSpec),
}

impl FromStr for Binding {
    type Err = String;

    /// A file path, or `random(DxDxD,density,seed)`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let Some(args) = s.strip_prefix("random(").and_then(|r| r.strip_suffix(')')) else {
            return Ok(Binding::Path(PathBuf::from(s)));
        };
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let [dims, density, seed] = parts.as_slice() else {
            return Err(format!("expected random(DIMS,density,seed), got `{s}`"));
        };
        let dims = dims
            .split('x')
            .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad dimension `{d}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let density = density.parse::<f64>().map_err(|e| format!("bad density `{density}`: {e}"))?;
        let seed = seed.parse::<u64>().map_err(|e| format!("bad seed `{seed}`: {e}"))?;
        Ok(Binding::Random(RandomSpec::new(&dims, density, seed)))
    }
}

/// Splits `NAME=VALUE`.
pub fn split_assignment(s: &str) -> Result<(String, String), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    Ok((name.trim().to_string(), value.trim().to_string()))
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub expr: String,
    pub bindings: Vec<(String, Binding)>,
    pub formats: Vec<(String, String)>,
    /// Directive text, or a path to a file holding it.
    pub schedule: Option<String>,
    pub mode: ExecutionMode,
    /// `None` sorts whenever the result format is ordered.
    pub sort: Option<bool>,
    pub repeat: usize,
    pub warmup: usize,
    pub check: bool,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub json: bool,
}

impl RunConfig {
    pub fn new(expr: &str) -> Self {
        RunConfig {
            expr: expr.to_string(),
            bindings: Vec::new(),
            formats: Vec::new(),
            schedule: None,
            mode: ExecutionMode::Fused,
            sort: None,
            repeat: 1,
            warmup: 1,
            check: false,
            out: None,
            csv: None,
            json: false,
        }
    }

    pub fn bind(mut self, name: &str, binding: &str) -> Self {
        self.bindings.push((name.to_string(), binding.parse().expect("binding")));
        self
    }

    pub fn format(mut self, name: &str, format: &str) -> Self {
        self.formats.push((name.to_string(), format.to_string()));
        self
    }

    pub fn schedule(mut self, text: &str) -> Self {
        self.schedule = Some(text.to_string());
        self
    }
}

/// Format used when none is given: vectors dense, matrices CSR, higher
/// orders CSF.
pub fn default_format(order: usize) -> TensorFormat {
    match order {
        0 | 1 => TensorFormat::dense(order),
        2 => TensorFormat::csr(),
        n => TensorFormat::csf(n),
    }
}

fn schedule_text(spec: &str) -> Result<String, CliError> {
    let path = Path::new(spec.trim());
    if !spec.contains('(') && path.is_file() {
        return std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read schedule {}: {e}", path.display())));
    }
    Ok(spec.to_string())
}

/// An expression lowered, scheduled and given formats for every tensor.
pub struct Lowered {
    pub src: SourceExpr,
    pub concrete: IndexStmt,
    pub stmt: IndexStmt,
    pub warnings: Vec<String>,
    pub formats: HashMap<String, TensorFormat>,
}

pub fn lower(config: &RunConfig) -> Result<Lowered, CliError> {
    let src = parse(&config.expr).map_err(|e| usage(format!("cannot parse expression: {e}")))?;
    let concrete = lower_to_concrete(&src);
    let directives = match &config.schedule {
        Some(s) => parse_schedule(&schedule_text(s)?).map_err(|e| CliError::Schedule(e.to_string()))?,
        None => Vec::new(),
    };
    let scheduled = schedule(&src, &directives).map_err(|e| CliError::Schedule(e.to_string()))?;

    let mut orders: HashMap<String, usize> = HashMap::new();
    orders.insert(src.lhs.tensor.name().to_string(), src.lhs.indices.len());
    for a in src.rhs.accesses() {
        orders.insert(a.tensor.name().to_string(), a.indices.len());
    }
    let result = src.lhs.tensor.name().to_string();
    let mut formats = HashMap::new();
    for (name, &order) in &orders {
        let f = if *name == result { TensorFormat::dense(order) } else { default_format(order) };
        formats.insert(name.clone(), f);
    }
    for (name, fmt) in &config.formats {
        let &order = orders.get(name).ok_or_else(|| usage(format!("--format names unknown tensor `{name}`")))?;
        let f = TensorFormat::from_name(fmt, order).map_err(|e| usage(e.to_string()))?;
        formats.insert(name.clone(), f);
    }
    Ok(Lowered { src, concrete, stmt: scheduled.stmt, warnings: scheduled.warnings, formats })
}

pub fn make_plan(lowered: &Lowered, options: PlanOptions) -> Result<LoopPlan, CliError> {
    let graph = build_graph(&lowered.stmt, &lowered.formats).map_err(|e| CliError::Plan(e.to_string()))?;
    plan_loops(&graph, options).map_err(|e| CliError::Plan(e.to_string()))
}

fn plan_options(config: &RunConfig, lowered: &Lowered) -> PlanOptions {
    let result = &lowered.formats[lowered.src.lhs.tensor.name()];
    PlanOptions { mode: config.mode, sort: config.sort.unwrap_or(result.is_ordered()) }
}

/// Every lowering artifact as one deterministic text.
pub fn cmd_lower(config: &RunConfig) -> Result<String, CliError> {
    let lowered = lower(config)?;
    let plan = make_plan(&lowered, plan_options(config, &lowered))?;
    let mut out = String::new();
    let _ = writeln!(out, "== source\n{}\n{}", lowered.src, print_source_math(&lowered.src));
    let _ = writeln!(out, "== concrete\n{}\n{}", print_stmt(&lowered.concrete), print_math(&lowered.concrete));
    let _ = writeln!(out, "== scheduled\n{}", print_stmt(&lowered.stmt));
    let _ = writeln!(out, "== math\n{}", print_math(&lowered.stmt));
    if !lowered.warnings.is_empty() {
        let _ = writeln!(out, "== warnings");
        for w in &lowered.warnings {
            let _ = writeln!(out, "{w}");
        }
    }
    let _ = writeln!(out, "== graph\n{}", plan.graph.to_dot().trim_end());
    let _ = write!(out, "== plan\n{}", explain_plan(&plan));
    Ok(out)
}

/// Loads or generates every input of the expression.
pub fn bind_inputs(config: &RunConfig, lowered: &Lowered) -> Result<HashMap<String, TensorStorage>, CliError> {
    let result = lowered.src.lhs.tensor.name();
    let mut inputs = HashMap::new();
    for a in lowered.src.rhs.accesses() {
        let name = a.tensor.name();
        if inputs.contains_key(name) {
            continue;
        }
        let (_, binding) = config
            .bindings
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| usage(format!("tensor `{name}` is not bound (use --bind {name}=PATH)")))?;
        let format = lowered.formats[name].clone();
        let storage = match binding {
            Binding::Path(p) => load(p, format).map_err(|e| usage(format!("cannot load {}: {e}", p.display())))?,
            Binding::Random(spec) => gen_random_storage(spec, format).map_err(|e| usage(format!("`{name}`: {e}")))?,
        };
        if storage.order() != a.indices.len() {
            return Err(usage(format!("`{name}` is bound to an order-{} tensor but used with order {}", storage.order(), a.indices.len())));
        }
        inputs.insert(name.to_string(), storage);
    }
    if let Some((n, _)) = config.bindings.iter().find(|(n, _)| n != result && !inputs.contains_key(n)) {
        return Err(usage(format!("`{n}` is bound but not used by the expression")));
    }
    Ok(inputs)
}

/// Timing and counters of repeated runs of one plan.
#[derive(Clone, Debug)]
pub struct Timed {
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub stats: ExecutionStats,
    pub result: TensorStorage,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Runs `plan` `warmup` times untimed, then `repeat` times timed. In
/// compute mode a sparse result is assembled once up front and only the
/// compute pass is timed.
pub fn time_plan(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    warmup: usize,
    repeat: usize,
    check_invariants: bool,
) -> Result<Timed, CliError> {
    let opts = ExecOptions { check_invariants, ..Default::default() };
    let assembled = if plan.mode() == ExecutionMode::Compute && plan.result_slot().format.has_compressed() {
        Some(assemble_index(plan, inputs).map_err(anyhow::Error::from)?)
    } else {
        None
    };
    let once = || match &assembled {
        Some(a) => run_compute_after_assemble(plan, inputs, a),
        None => execute_with(plan, inputs, plan.mode(), &opts),
    };
    for _ in 0..warmup {
        once().map_err(anyhow::Error::from)?;
    }
    let mut times = Vec::with_capacity(repeat.max(1));
    let mut last = None;
    for _ in 0..repeat.max(1) {
        let t = Instant::now();
        let r = once().map_err(anyhow::Error::from)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        last = Some(r);
    }
    let (result, stats) = last.unwrap();
    Ok(Timed { median_ms: median(&times), times_ms: times, stats, result })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub expr: String,
    pub schedule: Option<String>,
    pub mode: ExecutionMode,
    pub sort: bool,
    pub repeat: usize,
    pub median_ms: f64,
    pub times_ms: Vec<f64>,
    pub stats: ExecutionStats,
    pub result_dims: Vec<usize>,
    pub result_nnz: usize,
    pub checksum: f64,
    pub check: Option<bool>,
    pub check_message: Option<String>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn check_failed(&self) -> bool {
        self.check == Some(false)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "expr={}", self.expr);
        if let Some(s) = &self.schedule {
            let _ = writeln!(out, "schedule={}", s.replace('\n', "; "));
        }
        let _ = writeln!(out, "mode={} sort={}", self.mode, if self.sort { "on" } else { "off" });
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out, "median_ms={:.4} repeat={}", self.median_ms, self.repeat);
        let _ = writeln!(out, "{}", self.stats.report());
        let _ = writeln!(out, "result_dims={:?} nnz={}", self.result_dims, self.result_nnz);
        let _ = writeln!(out, "checksum={:e}", self.checksum);
        if let Some(m) = &self.check_message {
            let _ = writeln!(out, "{m}");
        }
        out
    }
}

/// One line of benchmark or run output in the shared CSV schema.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CsvRow {
    pub suite: String,
    pub kernel: String,
    pub params: String,
    pub median_ms: f64,
    pub mults: u64,
    pub adds: u64,
    pub merge_compares: u64,
    pub sparse_inserts: u64,
    pub appends: u64,
}

impl CsvRow {
    pub fn new(suite: &str, kernel: &str, params: String, timed: &Timed) -> Self {
        let s = &timed.stats;
        CsvRow {
            suite: suite.into(),
            kernel: kernel.into(),
            params,
            median_ms: timed.median_ms,
            mults: s.mults,
            adds: s.adds,
            merge_compares: s.merge_compares,
            sparse_inserts: s.sparse_inserts,
            appends: s.appends,
        }
    }
}

/// Appends rows to `path`, writing the header when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[CsvRow]) -> anyhow::Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv(rows: &[CsvRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Compares `result` with the dense evaluation of the source expression.
/// Assembled results carry no values, so only their pattern is checked.
pub fn oracle_check(
    src: &SourceExpr,
    inputs: &HashMap<String, TensorStorage>,
    result: &TensorStorage,
    mode: ExecutionMode,
) -> anyhow::Result<(bool, String)> {
    let dense: HashMap<String, DenseTensor> = inputs.iter().map(|(n, s)| (n.clone(), DenseTensor::from_storage(s))).collect();
    let expected = eval_dense(src, &dense)?;
    if mode != ExecutionMode::Assemble {
        let r = compare(result, &expected, CHECK_TOLERANCE);
        return Ok((r.pass, r.to_string()));
    }
    if result.dims() != expected.dims.as_slice() {
        return Ok((false, format!("check failed: dimensions {:?} differ from {:?}", result.dims(), expected.dims)));
    }
    for c in expected.coords() {
        if expected.get(&c) != 0.0 && result.locate(&c)?.is_none() {
            return Ok((false, format!("check failed: assembled pattern lacks nonzero at {c:?}")));
        }
    }
    Ok((true, "check passed (assembled pattern covers every nonzero)".into()))
}

pub fn cmd_run(config: &RunConfig) -> Result<RunReport, CliError> {
    let lowered = lower(config)?;
    let options = plan_options(config, &lowered);
    let inputs = bind_inputs(config, &lowered)?;
    let plan = make_plan(&lowered, options)?;
    let timed = time_plan(&plan, &inputs, config.warmup, config.repeat, config.check)?;

    let (check, check_message) = if config.check {
        let (pass, msg) = oracle_check(&lowered.src, &inputs, &timed.result, options.mode)?;
        (Some(pass), Some(msg))
    } else {
        (None, None)
    };
    if let Some(path) = &config.out {
        store(path, &timed.result, FileKind::from_path(path)).map_err(anyhow::Error::from)?;
    }
    let schedule = config.schedule.as_ref().map(|s| schedule_text(s)).transpose()?;
    let report = RunReport {
        expr: config.expr.clone(),
        schedule: schedule.clone(),
        mode: options.mode,
        sort: options.sort,
        repeat: timed.times_ms.len(),
        median_ms: timed.median_ms,
        times_ms: timed.times_ms.clone(),
        stats: timed.stats.clone(),
        result_dims: timed.result.dims().to_vec(),
        result_nnz: timed.result.nnz(),
        checksum: timed.result.vals().iter().sum(),
        check,
        check_message,
        warnings: lowered.warnings,
    };
    if let Some(path) = &config.csv {
        let binds: Vec<String> = config
            .bindings
            .iter()
            .map(|(n, b)| match b {
                Binding::Path(p) => format!("{n}={}", p.display()),
                Binding::Random(r) => {
                    let dims: Vec<String> = r.dims.iter().map(|d| d.to_string()).collect();
                    format!("{n}=random({},{},{})", dims.join("x"), r.density, r.seed)
                }
            })
            .collect();
        let params = format!(
            "{} mode={} sort={} schedule={}",
            binds.join(" "),
            report.mode,
            if report.sort { "on" } else { "off" },
            schedule.unwrap_or_default().replace('\n', "; ")
        );
        append_csv(path, &[CsvRow::new("run", &config.expr, params, &timed)])?;
    }
    Ok(report)
}
