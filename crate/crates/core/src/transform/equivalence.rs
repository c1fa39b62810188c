use crate::notation::{IndexStmt, OperatorTable};

use super::{ensure_well_formed, take_at, TransformError};

/// The reordering equivalences on concrete index notation. Each holds in
/// both directions under the precondition checked by `apply_equivalence`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EquivalenceRule {
    /// `∀i ∀j S` ⇔ `∀j ∀i S`
    SwapForalls,
    /// `(∀j S1) where S2` ⇔ `∀j (S1 where S2)`
    LiftForallConsumer,
    /// `(∀j S1) where (∀j S2)` ⇔ `∀j (S1 where S2)`
    LiftForallBothSides,
    /// `(S1 where S2) where S3` ⇔ `S1 where (S2 where S3)`
    RotateWhereNest,
    /// `(S1 where S2) where S3` ⇔ `(S1 where S3) where S2`
    SwapWhereProducers,
}

impl EquivalenceRule {
    pub const ALL: [EquivalenceRule; 5] = [
        EquivalenceRule::SwapForalls,
        EquivalenceRule::LiftForallConsumer,
        EquivalenceRule::LiftForallBothSides,
        EquivalenceRule::RotateWhereNest,
        EquivalenceRule::SwapWhereProducers,
    ];
}

/// `Forward` rewrites the left form of the rule into the right form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

fn fail(rule: EquivalenceRule, reason: impl Into<String>) -> TransformError {
    TransformError::PreconditionViolated { rule, reason: reason.into() }
}

/// True if every assignment through which `s` modifies its own tensor is a
/// plain assignment or an increment with an associative operator.
fn modifies_associatively(s: &IndexStmt, table: &OperatorTable) -> bool {
    match s {
        IndexStmt::Assign { op, .. } => op.map_or(true, |op| table.is_associative(op)),
        IndexStmt::Forall { body, .. } => modifies_associatively(body, table),
        IndexStmt::Where { consumer, .. } => modifies_associatively(consumer, table),
        IndexStmt::Sequence(stages) => stages.iter().all(|st| modifies_associatively(st, table)),
    }
}

/// True if `s` modifies its tensor only with non-incrementing assignments.
fn modifies_by_assignment(s: &IndexStmt) -> bool {
    match s {
        IndexStmt::Assign { op, .. } => op.is_none(),
        IndexStmt::Forall { body, .. } => modifies_by_assignment(body),
        IndexStmt::Where { consumer, .. } => modifies_by_assignment(consumer),
        IndexStmt::Sequence(stages) => stages.iter().all(modifies_by_assignment),
    }
}

fn matches_forward(rule: EquivalenceRule, node: &IndexStmt) -> bool {
    use EquivalenceRule::*;
    match (rule, node) {
        (SwapForalls, IndexStmt::Forall { body, .. }) => matches!(**body, IndexStmt::Forall { .. }),
        (LiftForallConsumer, IndexStmt::Where { consumer, .. }) => matches!(**consumer, IndexStmt::Forall { .. }),
        (LiftForallBothSides, IndexStmt::Where { consumer, producer }) => match (&**consumer, &**producer) {
            (IndexStmt::Forall { var: a, .. }, IndexStmt::Forall { var: b, .. }) => a == b,
            _ => false,
        },
        (RotateWhereNest | SwapWhereProducers, IndexStmt::Where { consumer, .. }) => {
            matches!(**consumer, IndexStmt::Where { .. })
        }
        _ => false,
    }
}

fn matches_backward(rule: EquivalenceRule, node: &IndexStmt) -> bool {
    use EquivalenceRule::*;
    match (rule, node) {
        (SwapForalls, _) | (SwapWhereProducers, _) => matches_forward(rule, node),
        (LiftForallConsumer | LiftForallBothSides, IndexStmt::Forall { body, .. }) => {
            matches!(**body, IndexStmt::Where { .. })
        }
        (RotateWhereNest, IndexStmt::Where { producer, .. }) => matches!(**producer, IndexStmt::Where { .. }),
        _ => false,
    }
}

/// Applies `rule` at `location`, choosing the forward direction when the
/// node has the rule's left-hand shape and the backward direction otherwise.
pub fn apply_equivalence(stmt: &IndexStmt, rule: EquivalenceRule, location: &[usize]) -> Result<IndexStmt, TransformError> {
    apply_equivalence_with_table(stmt, rule, location, &OperatorTable::default())
}

pub fn apply_equivalence_with_table(
    stmt: &IndexStmt,
    rule: EquivalenceRule,
    location: &[usize],
    table: &OperatorTable,
) -> Result<IndexStmt, TransformError> {
    let node = stmt.at(location).ok_or_else(|| TransformError::InvalidLocation(location.to_vec()))?;
    let dir = if matches_forward(rule, node) { Direction::Forward } else { Direction::Backward };
    rewrite(stmt, rule, location, dir, table)
}

pub fn apply_equivalence_directed(
    stmt: &IndexStmt,
    rule: EquivalenceRule,
    location: &[usize],
    direction: Direction,
) -> Result<IndexStmt, TransformError> {
    rewrite(stmt, rule, location, direction, &OperatorTable::default())
}

fn rewrite(
    stmt: &IndexStmt,
    rule: EquivalenceRule,
    location: &[usize],
    dir: Direction,
    table: &OperatorTable,
) -> Result<IndexStmt, TransformError> {
    use EquivalenceRule::*;
    let node = stmt.at(location).ok_or_else(|| TransformError::InvalidLocation(location.to_vec()))?;
    let shape_ok = match dir {
        Direction::Forward => matches_forward(rule, node),
        Direction::Backward => matches_backward(rule, node),
    };
    if !shape_ok {
        return Err(TransformError::InvalidLocation(location.to_vec()));
    }
    if node.contains_sequence() {
        return Err(TransformError::SequencePresent);
    }

    let mut out = stmt.clone();
    let node = take_at(&mut out, location)?;
    let new = match (rule, dir, node) {
        (SwapForalls, _, IndexStmt::Forall { var: i, body }) => {
            let IndexStmt::Forall { var: j, body: s } = *body else { unreachable!() };
            if !modifies_associatively(&s, table) {
                return Err(fail(rule, "the statement increments with a non-associative operator"));
            }
            IndexStmt::forall(j, IndexStmt::forall(i, *s))
        }
        (LiftForallConsumer, Direction::Forward, IndexStmt::Where { consumer, producer }) => {
            let IndexStmt::Forall { var: j, body: s1 } = *consumer else { unreachable!() };
            if producer.uses_var(&j) {
                return Err(fail(rule, format!("the producer uses `{j}`")));
            }
            IndexStmt::forall(j, IndexStmt::where_(*s1, *producer))
        }
        (LiftForallConsumer, Direction::Backward, IndexStmt::Forall { var: j, body }) => {
            let IndexStmt::Where { consumer, producer } = *body else { unreachable!() };
            if producer.uses_var(&j) {
                return Err(fail(rule, format!("the producer uses `{j}`")));
            }
            IndexStmt::where_(IndexStmt::forall(j, *consumer), *producer)
        }
        (LiftForallBothSides, Direction::Forward, IndexStmt::Where { consumer, producer }) => {
            let IndexStmt::Forall { var: j, body: s1 } = *consumer else { unreachable!() };
            let IndexStmt::Forall { body: s2, .. } = *producer else { unreachable!() };
            if !modifies_by_assignment(&s2) {
                return Err(fail(rule, "the producer modifies its tensor with an increment"));
            }
            IndexStmt::forall(j, IndexStmt::where_(*s1, *s2))
        }
        (LiftForallBothSides, Direction::Backward, IndexStmt::Forall { var: j, body }) => {
            let IndexStmt::Where { consumer, producer } = *body else { unreachable!() };
            if !modifies_by_assignment(&producer) {
                return Err(fail(rule, "the producer modifies its tensor with an increment"));
            }
            IndexStmt::where_(IndexStmt::forall(j.clone(), *consumer), IndexStmt::forall(j, *producer))
        }
        (RotateWhereNest, Direction::Forward, IndexStmt::Where { consumer, producer: s3 }) => {
            let IndexStmt::Where { consumer: s1, producer: s2 } = *consumer else { unreachable!() };
            let t3 = s3.modified_tensor().name().to_string();
            if s1.uses_tensor(&t3) {
                return Err(fail(rule, format!("the consumer uses `{t3}`")));
            }
            IndexStmt::where_(*s1, IndexStmt::where_(*s2, *s3))
        }
        (RotateWhereNest, Direction::Backward, IndexStmt::Where { consumer: s1, producer }) => {
            let IndexStmt::Where { consumer: s2, producer: s3 } = *producer else { unreachable!() };
            let t3 = s3.modified_tensor().name().to_string();
            if s1.uses_tensor(&t3) {
                return Err(fail(rule, format!("the consumer uses `{t3}`")));
            }
            IndexStmt::where_(IndexStmt::where_(*s1, *s2), *s3)
        }
        (SwapWhereProducers, _, IndexStmt::Where { consumer, producer: s3 }) => {
            let IndexStmt::Where { consumer: s1, producer: s2 } = *consumer else { unreachable!() };
            let t2 = s2.modified_tensor().name().to_string();
            let t3 = s3.modified_tensor().name().to_string();
            if s2.uses_tensor(&t3) {
                return Err(fail(rule, format!("`{t3}` is used by the other producer")));
            }
            if s3.uses_tensor(&t2) {
                return Err(fail(rule, format!("`{t2}` is used by the other producer")));
            }
            IndexStmt::where_(IndexStmt::where_(*s1, *s3), *s2)
        }
        _ => unreachable!("shape checked above"),
    };
    *out.at_mut(location).unwrap() = new;
    ensure_well_formed(&out).map_err(|e| fail(rule, e.to_string()))?;
    Ok(out)
}
