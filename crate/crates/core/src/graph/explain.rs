use std::fmt::Write as _;

use crate::notation::BinaryOp;

use super::plan::{LoopPlan, PlanExpr, PlanNode, Strategy};
use super::TensorKind;

/// Human-readable rendering of a loop plan, one line per loop or statement.
pub fn explain_plan(plan: &LoopPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# mode={} sort={}", plan.options.mode, if plan.options.sort { "on" } else { "off" });
    for t in &plan.tensors {
        let kind = match t.kind {
            TensorKind::Input => "input",
            TensorKind::Result => "result",
            TensorKind::Temp => "workspace",
        };
        let _ = writeln!(out, "# {} {kind} {}", t.name, t.format);
    }
    node(plan, &plan.root, 0, &mut out);
    out
}

fn node(plan: &LoopPlan, n: &PlanNode, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match n {
        PlanNode::Loop { node: id, strategy, locate, body, .. } => {
            let label = &plan.graph.nodes[*id].label;
            let how = match *strategy {
                Strategy::DenseLoop => "dense".to_string(),
                Strategy::SparseIterate(a) => format!("iterate {}", plan.accesses[a].text),
                Strategy::Intersect(a, b) => format!("intersect {}, {}", plan.accesses[a].text, plan.accesses[b].text),
                Strategy::Union(a, b) => format!("union {}, {}", plan.accesses[a].text, plan.accesses[b].text),
                Strategy::DrainWorkspace(t) => {
                    let sorted = if plan.options.sort { "sorted" } else { "unsorted" };
                    format!("drain {} ({sorted})", plan.tensors[t].name)
                }
                Strategy::IterateResult(a, _) => format!("iterate assembled {}", plan.accesses[a].text),
            };
            let _ = write!(out, "{pad}for {label}: {how}");
            if !locate.is_empty() {
                let texts: Vec<&str> = locate.iter().map(|&a| plan.accesses[a].text.as_str()).collect();
                let _ = write!(out, "; locate {}", texts.join(", "));
            }
            out.push('\n');
            node(plan, body, depth + 1, out);
        }
        PlanNode::Compute { lhs, op, rhs } => {
            let slot = &plan.accesses[*lhs];
            let op = match op {
                None => "=",
                Some(BinaryOp::Add) => "+=",
                Some(BinaryOp::Mul) => "*=",
            };
            let tensor = &plan.tensors[slot.tensor];
            let note = match tensor.kind {
                TensorKind::Temp => format!("insert {}", tensor.name),
                _ if tensor.format.has_compressed() && plan.options.mode != super::ExecutionMode::Compute => "append".into(),
                _ => "locate".into(),
            };
            let _ = writeln!(out, "{pad}{} {op} {} [{note}]", slot.text, expr(plan, rhs));
        }
        PlanNode::Where { temp, consumer, producer } => {
            let name = &plan.tensors[*temp].name;
            let _ = writeln!(out, "{pad}where {name}");
            let _ = writeln!(out, "{pad}  produce");
            node(plan, producer, depth + 2, out);
            let _ = writeln!(out, "{pad}  consume");
            node(plan, consumer, depth + 2, out);
            let _ = writeln!(out, "{pad}  reset {name}");
        }
        PlanNode::Sequence(stages) => {
            for s in stages {
                node(plan, s, depth, out);
            }
        }
    }
}

fn expr(plan: &LoopPlan, e: &PlanExpr) -> String {
    match e {
        PlanExpr::Literal(v) => v.to_string(),
        PlanExpr::Access(a) => plan.accesses[*a].text.clone(),
        PlanExpr::Binary { op, lhs, rhs } => {
            let wrap = |s: &PlanExpr| {
                let text = expr(plan, s);
                match s {
                    PlanExpr::Binary { op: BinaryOp::Add, .. } if *op == BinaryOp::Mul => format!("({text})"),
                    _ => text,
                }
            };
            format!("{} {} {}", wrap(lhs), op.symbol(), wrap(rhs))
        }
    }
}

/// Loop nesting as text, e.g. `i(k(j),j_A)`.
pub fn plan_shape(plan: &LoopPlan) -> String {
    fn loops<'a>(n: &'a PlanNode, out: &mut Vec<&'a PlanNode>) {
        match n {
            PlanNode::Loop { .. } => out.push(n),
            PlanNode::Compute { .. } => {}
            PlanNode::Where { consumer, producer, .. } => {
                loops(producer, out);
                loops(consumer, out);
            }
            PlanNode::Sequence(stages) => stages.iter().for_each(|s| loops(s, out)),
        }
    }
    fn render(plan: &LoopPlan, list: &[&PlanNode]) -> String {
        let parts: Vec<String> = list
            .iter()
            .map(|n| {
                let PlanNode::Loop { node, body, .. } = n else { unreachable!() };
                let mut inner = Vec::new();
                loops(body, &mut inner);
                let label = plan.graph.nodes[*node].label.clone();
                if inner.is_empty() {
                    label
                } else {
                    format!("{label}({})", render(plan, &inner))
                }
            })
            .collect();
        parts.join(",")
    }
    let mut top = Vec::new();
    loops(&plan.root, &mut top);
    render(plan, &top)
}

/// True when both plans have the same loops, strategies and statements,
/// treating a workspace drain and a walk over the assembled result alike.
pub fn same_loop_structure(a: &LoopPlan, b: &LoopPlan) -> bool {
    fn strategy_eq(a: Strategy, b: Strategy) -> bool {
        match (a, b) {
            (Strategy::DrainWorkspace(_) | Strategy::IterateResult(..), Strategy::DrainWorkspace(_) | Strategy::IterateResult(..)) => true,
            _ => a == b,
        }
    }
    fn eq(x: &PlanNode, y: &PlanNode) -> bool {
        match (x, y) {
            (
                PlanNode::Loop { node: n1, strategy: s1, body: b1, .. },
                PlanNode::Loop { node: n2, strategy: s2, body: b2, .. },
            ) => n1 == n2 && strategy_eq(*s1, *s2) && eq(b1, b2),
            (PlanNode::Compute { lhs: l1, op: o1, rhs: r1 }, PlanNode::Compute { lhs: l2, op: o2, rhs: r2 }) => {
                l1 == l2 && o1 == o2 && r1 == r2
            }
            (
                PlanNode::Where { temp: t1, consumer: c1, producer: p1 },
                PlanNode::Where { temp: t2, consumer: c2, producer: p2 },
            ) => t1 == t2 && eq(c1, c2) && eq(p1, p2),
            (PlanNode::Sequence(s1), PlanNode::Sequence(s2)) => {
                s1.len() == s2.len() && s1.iter().zip(s2).all(|(p, q)| eq(p, q))
            }
            _ => false,
        }
    }
    eq(&a.root, &b.root)
}
