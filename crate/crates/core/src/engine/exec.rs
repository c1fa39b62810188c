use std::collections::HashMap;
use std::time::Instant;

use crate::graph::{ExecutionMode, LoopPlan, PlanExpr, PlanNode, Strategy, TensorKind};
use crate::notation::BinaryOp;
use crate::storage::{grow_for_push, Combine, Level, TensorStorage, Workspace};

use super::merge::{co_iterate_with, MergeKind};
use super::{EngineError, ExecOptions, ExecutionStats};

const ABSENT: usize = usize::MAX;

pub(super) fn run(
    plan: &LoopPlan,
    inputs: &HashMap<String, TensorStorage>,
    assembled: Option<&TensorStorage>,
    options: &ExecOptions,
) -> Result<(TensorStorage, ExecutionStats), EngineError> {
    let mut bound: Vec<Option<&TensorStorage>> = vec![None; plan.tensors.len()];
    let mut dims: Vec<Option<usize>> = vec![None; plan.vars.len()];
    for (t, slot) in plan.tensors.iter().enumerate() {
        if slot.kind != TensorKind::Input {
            continue;
        }
        let st = inputs.get(&slot.name).ok_or_else(|| EngineError::MissingInput(slot.name.clone()))?;
        if st.format() != &slot.format {
            return Err(EngineError::FormatMismatch {
                tensor: slot.name.clone(),
                expected: slot.format.to_string(),
                found: st.format().to_string(),
            });
        }
        if !st.is_finalized() {
            return Err(crate::storage::StorageError::NotFinalized.into());
        }
        bound[t] = Some(st);
    }
    for a in &plan.accesses {
        let Some(st) = bound[a.tensor] else { continue };
        for (m, &v) in a.vars.iter().enumerate() {
            let d = st.dims()[m];
            match dims[v] {
                Some(e) if e != d => {
                    return Err(EngineError::ShapeMismatch { var: plan.vars[v].clone(), first: e, second: d });
                }
                _ => dims[v] = Some(d),
            }
        }
    }
    let result_access = plan.accesses.iter().find(|a| a.tensor == plan.result).expect("result is written");
    if let Some(rd) = &options.result_dims {
        if rd.len() != result_access.vars.len() {
            return Err(EngineError::DimensionMismatch {
                tensor: plan.result_slot().name.clone(),
                expected: rd.clone(),
                found: result_access.vars.iter().map(|&v| dims[v].unwrap_or(0)).collect(),
            });
        }
        for (&v, &d) in result_access.vars.iter().zip(rd) {
            match dims[v] {
                Some(e) if e != d => {
                    return Err(EngineError::ShapeMismatch { var: plan.vars[v].clone(), first: e, second: d });
                }
                _ => dims[v] = Some(d),
            }
        }
    }
    let extent = |v: usize| dims[v].ok_or_else(|| EngineError::UnknownDimension(plan.vars[v].clone()));
    let result_dims: Vec<usize> = result_access.vars.iter().map(|&v| extent(v)).collect::<Result<_, _>>()?;
    let result_format = plan.result_slot().format.clone();

    let result = match assembled {
        Some(given) => {
            let kinds = |f: &crate::storage::TensorFormat| f.mode_formats().iter().map(|m| m.kind).collect::<Vec<_>>();
            if kinds(given.format()) != kinds(&result_format) || given.format().mode_ordering() != result_format.mode_ordering() {
                return Err(EngineError::FormatMismatch {
                    tensor: plan.result_slot().name.clone(),
                    expected: result_format.to_string(),
                    found: given.format().to_string(),
                });
            }
            if given.dims() != result_dims.as_slice() {
                return Err(EngineError::DimensionMismatch {
                    tensor: plan.result_slot().name.clone(),
                    expected: result_dims,
                    found: given.dims().to_vec(),
                });
            }
            let mut r = given.clone();
            r.vals_mut().iter_mut().for_each(|v| *v = 0.0);
            r
        }
        None => TensorStorage::open_empty(&result_dims, result_format)?,
    };

    let mut ws: Vec<Option<Workspace>> = vec![None; plan.tensors.len()];
    for (t, slot) in plan.tensors.iter().enumerate() {
        if slot.kind == TensorKind::Temp {
            let a = plan.accesses.iter().find(|a| a.tensor == t).expect("temporaries are accessed");
            let d: Vec<usize> = a.vars.iter().map(|&v| extent(v)).collect::<Result<_, _>>()?;
            ws[t] = Some(Workspace::new(&d));
        }
    }
    let all_dims = dims.iter().map(|d| d.unwrap_or(0)).collect();

    let mut ex = Exec {
        plan,
        mode: plan.options.mode,
        check: options.check_invariants,
        inputs: bound,
        result,
        ws,
        dims: all_dims,
        coord: vec![0; plan.vars.len()],
        pos: plan.accesses.iter().map(|a| vec![ABSENT; a.level_vars.len()]).collect(),
        stats: ExecutionStats::default(),
    };
    ex.run(&plan.root)?;
    let mut result = ex.result;
    result.finalize();
    let mut stats = ex.stats;
    stats.bytes_allocated =
        (storage_bytes(&result) + ex.ws.iter().flatten().map(|w| w.bytes()).sum::<usize>()) as u64;
    if options.check_invariants {
        result.check_invariants()?;
        for w in ex.ws.iter().flatten() {
            w.check_invariants()?;
        }
    }
    Ok((result, stats))
}

fn storage_bytes(s: &TensorStorage) -> usize {
    let mut total = s.vals().len() * 8;
    for l in s.levels() {
        if let Level::Compressed { pos, idx } = l {
            total += (pos.capacity() + idx.capacity()) * 8;
        }
    }
    total
}

#[derive(Clone, Copy)]
enum Src<'p> {
    Invariant(Option<f64>),
    Input(&'p [f64], usize),
    Temp((usize, usize)),
    Absent,
}

#[derive(Clone, Copy)]
enum Target {
    Temp((usize, usize)),
    Result(usize),
}

struct DenseKernel<'p> {
    target: Target,
    srcs: Vec<Src<'p>>,
}

fn visit_accesses(e: &PlanExpr, f: &mut dyn FnMut(usize)) {
    match e {
        PlanExpr::Literal(_) => {}
        PlanExpr::Access(a) => f(*a),
        PlanExpr::Binary { lhs, rhs, .. } => {
            visit_accesses(lhs, f);
            visit_accesses(rhs, f);
        }
    }
}

struct Exec<'p> {
    plan: &'p LoopPlan,
    mode: ExecutionMode,
    check: bool,
    inputs: Vec<Option<&'p TensorStorage>>,
    result: TensorStorage,
    ws: Vec<Option<Workspace>>,
    dims: Vec<usize>,
    coord: Vec<usize>,
    pos: Vec<Vec<usize>>,
    stats: ExecutionStats,
}

impl<'p> Exec<'p> {
    fn level_of(&self, a: usize, var: usize) -> usize {
        self.plan.accesses[a].level_vars.iter().position(|&v| v == var).expect("loop var indexes the access")
    }

    fn storage(&self, t: usize) -> &TensorStorage {
        match self.inputs[t] {
            Some(s) => s,
            None => &self.result,
        }
    }

    /// Position of access `a` after its first `upto` levels, or `None` when
    /// the coordinates are not stored.
    fn prefix(&self, a: usize, upto: usize) -> Option<usize> {
        let slot = &self.plan.accesses[a];
        let st = self.storage(slot.tensor);
        let mut p = 0usize;
        for l in 0..upto {
            if slot.iterated[l] {
                p = self.pos[a][l];
                if p == ABSENT {
                    return None;
                }
            } else {
                p = st.locate_in_level(l, p, self.coord[slot.level_vars[l]])?;
            }
        }
        Some(p)
    }

    fn temp_flat(&self, a: usize) -> (usize, usize) {
        let slot = &self.plan.accesses[a];
        let w = self.ws[slot.tensor].as_ref().expect("temporary has a workspace");
        let flat = slot.vars.iter().zip(w.dims()).fold(0, |f, (&v, &d)| f * d + self.coord[v]);
        (slot.tensor, flat)
    }

    fn load(&self, a: usize) -> Option<f64> {
        let slot = &self.plan.accesses[a];
        if self.plan.tensors[slot.tensor].kind == TensorKind::Temp {
            let (t, flat) = self.temp_flat(a);
            return self.ws[t].as_ref().unwrap().get_flat(flat);
        }
        let p = self.prefix(a, slot.level_vars.len())?;
        Some(self.storage(slot.tensor).vals()[p])
    }

    fn eval(&mut self, e: &PlanExpr) -> Option<f64> {
        match e {
            PlanExpr::Literal(v) => Some(*v),
            PlanExpr::Access(a) => self.load(*a),
            PlanExpr::Binary { op: BinaryOp::Mul, lhs, rhs } => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                self.stats.mults += 1;
                Some(l * r)
            }
            PlanExpr::Binary { op: BinaryOp::Add, lhs, rhs } => match (self.eval(lhs), self.eval(rhs)) {
                (Some(l), Some(r)) => {
                    self.stats.adds += 1;
                    Some(l + r)
                }
                (l, r) => l.or(r),
            },
        }
    }

    fn present(&self, e: &PlanExpr) -> bool {
        match e {
            PlanExpr::Literal(_) => true,
            PlanExpr::Access(a) => self.load(*a).is_some(),
            PlanExpr::Binary { op: BinaryOp::Mul, lhs, rhs } => self.present(lhs) && self.present(rhs),
            PlanExpr::Binary { op: BinaryOp::Add, lhs, rhs } => self.present(lhs) || self.present(rhs),
        }
    }

    /// Result position for the lhs access; appends in fused and assemble
    /// modes, locates in compute mode.
    fn result_slot(&mut self, lhs: usize) -> Result<usize, EngineError> {
        let slot = &self.plan.accesses[lhs];
        let mut p = 0usize;
        if self.mode == ExecutionMode::Compute {
            for l in 0..slot.level_vars.len() {
                p = if slot.iterated[l] {
                    self.pos[lhs][l]
                } else {
                    match self.result.locate_in_level(l, p, self.coord[slot.level_vars[l]]) {
                        Some(q) => q,
                        None => return Err(EngineError::MissingSlot(slot.vars.iter().map(|&v| self.coord[v]).collect())),
                    }
                };
            }
            return Ok(p);
        }
        for l in 0..slot.level_vars.len() {
            p = self.result.find_or_push(l, p, self.coord[slot.level_vars[l]])?;
        }
        let vals = self.result.vals_vec_mut();
        if p == vals.len() {
            grow_for_push(vals);
            vals.push(0.0);
            self.stats.appends += 1;
        }
        Ok(p)
    }

    fn compute(&mut self, lhs: usize, op: Option<BinaryOp>, rhs: &PlanExpr) -> Result<(), EngineError> {
        let t = self.plan.accesses[lhs].tensor;
        let kind = self.plan.tensors[t].kind;
        if self.mode == ExecutionMode::Assemble {
            if !self.present(rhs) {
                return Ok(());
            }
            if kind == TensorKind::Temp {
                let (t, flat) = self.temp_flat(lhs);
                if self.ws[t].as_mut().unwrap().mark_flat(flat) {
                    self.stats.ws_inserts += 1;
                }
            } else if self.result.format().has_compressed() {
                self.result_slot(lhs)?;
            }
            return Ok(());
        }
        let dense_result = kind == TensorKind::Result && !self.result.format().has_compressed();
        let v = match self.eval(rhs) {
            Some(v) => v,
            None if dense_result && op.is_none() => 0.0,
            None => return Ok(()),
        };
        match op {
            Some(BinaryOp::Add) => self.stats.adds += 1,
            Some(BinaryOp::Mul) => self.stats.mults += 1,
            None => {}
        }
        if kind == TensorKind::Temp {
            let (t, flat) = self.temp_flat(lhs);
            let combine = match op {
                None => Combine::Assign,
                Some(BinaryOp::Add) => Combine::Add,
                Some(BinaryOp::Mul) => Combine::Mul,
            };
            self.ws[t].as_mut().unwrap().insert_flat(flat, v, combine);
            self.stats.ws_inserts += 1;
            return Ok(());
        }
        let p = self.result_slot(lhs)?;
        let slot = &mut self.result.vals_mut()[p];
        match op {
            None => *slot = v,
            Some(o) => *slot = o.apply(*slot, v),
        }
        Ok(())
    }

    /// Resolves every access of an innermost dense loop to a base position
    /// that advances by one per iteration, or to a loop-invariant value.
    /// `None` when some access cannot be addressed that way.
    fn dense_kernel(&mut self, var: usize, lhs: usize, rhs: &PlanExpr) -> Option<DenseKernel<'p>> {
        if self.mode == ExecutionMode::Assemble {
            return None;
        }
        let plan = self.plan;
        let last_only = |vars: &[usize]| vars.last() == Some(&var) && !vars[..vars.len() - 1].contains(&var);
        self.coord[var] = 0;
        let lhs_slot = &plan.accesses[lhs];
        let target = match plan.tensors[lhs_slot.tensor].kind {
            TensorKind::Temp if last_only(&lhs_slot.vars) => Target::Temp(self.temp_flat(lhs)),
            TensorKind::Result if !self.result.format().has_compressed() && last_only(&lhs_slot.level_vars) => {
                Target::Result(self.result_slot(lhs).ok()?)
            }
            _ => return None,
        };
        let mut srcs = vec![Src::Absent; plan.accesses.len()];
        let mut ok = true;
        visit_accesses(rhs, &mut |a| {
            let slot = &plan.accesses[a];
            let tensor = &plan.tensors[slot.tensor];
            srcs[a] = if slot.tensor == lhs_slot.tensor {
                ok = false;
                Src::Absent
            } else if !slot.vars.contains(&var) {
                Src::Invariant(self.load(a))
            } else if tensor.kind == TensorKind::Temp && last_only(&slot.vars) {
                Src::Temp(self.temp_flat(a))
            } else if let (Some(st), true) = (self.inputs[slot.tensor], last_only(&slot.level_vars)) {
                let l = slot.level_vars.len() - 1;
                match (&st.levels()[l], self.prefix(a, l)) {
                    (Level::Dense { size }, Some(parent)) => Src::Input(st.vals(), parent * size),
                    (Level::Dense { .. }, None) => Src::Invariant(None),
                    _ => {
                        ok = false;
                        Src::Absent
                    }
                }
            } else {
                ok = false;
                Src::Absent
            };
        });
        ok.then_some(DenseKernel { target, srcs })
    }

    fn fast_eval(&mut self, e: &PlanExpr, srcs: &[Src<'p>], c: usize) -> Option<f64> {
        match e {
            PlanExpr::Literal(v) => Some(*v),
            PlanExpr::Access(a) => match srcs[*a] {
                Src::Invariant(v) => v,
                Src::Input(vals, base) => Some(vals[base + c]),
                Src::Temp((t, base)) => self.ws[t].as_ref().unwrap().get_flat(base + c),
                Src::Absent => None,
            },
            PlanExpr::Binary { op: BinaryOp::Mul, lhs, rhs } => {
                let l = self.fast_eval(lhs, srcs, c)?;
                let r = self.fast_eval(rhs, srcs, c)?;
                self.stats.mults += 1;
                Some(l * r)
            }
            PlanExpr::Binary { op: BinaryOp::Add, lhs, rhs } => match (self.fast_eval(lhs, srcs, c), self.fast_eval(rhs, srcs, c)) {
                (Some(l), Some(r)) => {
                    self.stats.adds += 1;
                    Some(l + r)
                }
                (l, r) => l.or(r),
            },
        }
    }

    /// Same effect and counters as running `compute` once per coordinate.
    fn run_dense_kernel(&mut self, var: usize, k: &DenseKernel<'p>, op: Option<BinaryOp>, rhs: &PlanExpr) -> Result<(), EngineError> {
        let n = self.dims[var];
        let combine = match op {
            None => Combine::Assign,
            Some(BinaryOp::Add) => Combine::Add,
            Some(BinaryOp::Mul) => Combine::Mul,
        };
        for c in 0..n {
            let v = match (self.fast_eval(rhs, &k.srcs, c), k.target) {
                (Some(v), _) => v,
                (None, Target::Result(_)) if op.is_none() => 0.0,
                (None, _) => continue,
            };
            match op {
                Some(BinaryOp::Add) => self.stats.adds += 1,
                Some(BinaryOp::Mul) => self.stats.mults += 1,
                None => {}
            }
            match k.target {
                Target::Temp((t, base)) => {
                    self.ws[t].as_mut().unwrap().insert_flat(base + c, v, combine);
                    self.stats.ws_inserts += 1;
                }
                Target::Result(base) => {
                    let slot = &mut self.result.vals_mut()[base + c];
                    *slot = match op {
                        None => v,
                        Some(o) => o.apply(*slot, v),
                    };
                }
            }
        }
        self.coord[var] = n.saturating_sub(1);
        Ok(())
    }

    fn run(&mut self, n: &'p PlanNode) -> Result<(), EngineError> {
        match n {
            PlanNode::Compute { lhs, op, rhs } => self.compute(*lhs, *op, rhs),
            PlanNode::Sequence(stages) => stages.iter().try_for_each(|s| self.run(s)),
            PlanNode::Where { temp, consumer, producer } => {
                self.run(producer)?;
                self.run(consumer)?;
                let w = self.ws[*temp].as_mut().expect("where temporary has a workspace");
                w.reset();
                self.stats.ws_resets += 1;
                if self.check && !w.is_clear() {
                    return Err(EngineError::Invariant(format!("workspace `{}` not clear after reset", self.plan.tensors[*temp].name)));
                }
                Ok(())
            }
            PlanNode::Loop { var, strategy, body, .. } => self.run_loop(*var, *strategy, body),
        }
    }

    fn run_loop(&mut self, var: usize, strategy: Strategy, body: &'p PlanNode) -> Result<(), EngineError> {
        match strategy {
            Strategy::DenseLoop => {
                if let PlanNode::Compute { lhs, op, rhs } = body {
                    if let Some(k) = self.dense_kernel(var, *lhs, rhs) {
                        return self.run_dense_kernel(var, &k, *op, rhs);
                    }
                }
                for c in 0..self.dims[var] {
                    self.coord[var] = c;
                    self.run(body)?;
                }
            }
            Strategy::SparseIterate(a) => {
                let l = self.level_of(a, var);
                let Some(parent) = self.prefix(a, l) else { return Ok(()) };
                let st: &'p TensorStorage = self.inputs[self.plan.accesses[a].tensor].expect("iterated operand is an input");
                for (c, p) in st.iterate_level(l, parent)? {
                    self.coord[var] = c;
                    self.pos[a][l] = p;
                    self.run(body)?;
                }
                self.pos[a][l] = ABSENT;
            }
            Strategy::Intersect(a, b) | Strategy::Union(a, b) => {
                let kind = if matches!(strategy, Strategy::Intersect(..)) { MergeKind::Intersect } else { MergeKind::Union };
                let (la, lb) = (self.level_of(a, var), self.level_of(b, var));
                let (pa, pb) = (self.prefix(a, la), self.prefix(b, lb));
                if kind == MergeKind::Intersect && (pa.is_none() || pb.is_none()) {
                    return Ok(());
                }
                let sa: &'p TensorStorage = self.inputs[self.plan.accesses[a].tensor].expect("merged operand is an input");
                let sb: &'p TensorStorage = self.inputs[self.plan.accesses[b].tensor].expect("merged operand is an input");
                let ia = pa.map(|p| sa.iterate_level(la, p)).transpose()?.into_iter().flatten();
                let ib = pb.map(|p| sb.iterate_level(lb, p)).transpose()?.into_iter().flatten();
                let mut compares = 0;
                let r = co_iterate_with(ia, ib, kind, &mut compares, |c, qa, qb| {
                    self.coord[var] = c;
                    self.pos[a][la] = qa.unwrap_or(ABSENT);
                    self.pos[b][lb] = qb.unwrap_or(ABSENT);
                    self.run(body)
                });
                self.stats.merge_compares += compares;
                self.pos[a][la] = ABSENT;
                self.pos[b][lb] = ABSENT;
                r?;
            }
            Strategy::DrainWorkspace(t) => {
                if self.plan.options.sort {
                    let start = Instant::now();
                    self.ws[t].as_mut().unwrap().sort_list();
                    self.stats.sort_nanos += start.elapsed().as_nanos() as u64;
                }
                let mut k = 0;
                while k < self.ws[t].as_ref().unwrap().list().len() {
                    self.coord[var] = self.ws[t].as_ref().unwrap().list()[k];
                    self.run(body)?;
                    k += 1;
                }
            }
            Strategy::IterateResult(a, t) => {
                let l = self.level_of(a, var);
                let entries: Vec<(usize, usize)> = match self.prefix(a, l) {
                    Some(parent) => self.result.iterate_level(l, parent)?.collect(),
                    None => Vec::new(),
                };
                let mut hits = 0;
                for (c, p) in entries {
                    if self.ws[t].as_ref().unwrap().get_flat(c).is_some() {
                        hits += 1;
                    }
                    self.coord[var] = c;
                    self.pos[a][l] = p;
                    self.run(body)?;
                }
                self.pos[a][l] = ABSENT;
                let w = self.ws[t].as_ref().unwrap();
                if hits < w.nnz() {
                    let seen: Vec<usize> = match self.prefix(a, l) {
                        Some(parent) => self.result.iterate_level(l, parent)?.map(|e| e.0).collect(),
                        None => Vec::new(),
                    };
                    let lost = *w.list().iter().find(|c| !seen.contains(c)).expect("an unvisited entry");
                    self.coord[var] = lost;
                    let slot = &self.plan.accesses[a];
                    return Err(EngineError::MissingSlot(slot.vars.iter().map(|&v| self.coord[v]).collect()));
                }
            }
        }
        Ok(())
    }
}
