#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeKind {
    Intersect,
    Union,
}

/// Co-iterates two ascending `(coord, pos)` streams, calling `f` for each
/// merged coordinate. `compares` counts one per intersection step taken
/// while both streams are live and one per coordinate a union emits.
pub fn co_iterate_with<A, B, E>(
    mut a: A,
    mut b: B,
    kind: MergeKind,
    compares: &mut u64,
    mut f: impl FnMut(usize, Option<usize>, Option<usize>) -> Result<(), E>,
) -> Result<(), E>
where
    A: Iterator<Item = (usize, usize)>,
    B: Iterator<Item = (usize, usize)>,
{
    let mut x = a.next();
    let mut y = b.next();
    let mut last: Option<usize> = None;
    let mut emit = |c: usize, pa, pb, f: &mut dyn FnMut(usize, Option<usize>, Option<usize>) -> Result<(), E>| {
        assert!(last.map_or(true, |l| l < c), "co_iterate needs ascending coordinates");
        last = Some(c);
        f(c, pa, pb)
    };
    loop {
        match (x, y) {
            (Some((ca, pa)), Some((cb, pb))) => {
                *compares += 1;
                if ca == cb {
                    emit(ca, Some(pa), Some(pb), &mut f)?;
                    x = a.next();
                    y = b.next();
                } else if ca < cb {
                    if kind == MergeKind::Union {
                        emit(ca, Some(pa), None, &mut f)?;
                    }
                    x = a.next();
                } else {
                    if kind == MergeKind::Union {
                        emit(cb, None, Some(pb), &mut f)?;
                    }
                    y = b.next();
                }
            }
            (Some((ca, pa)), None) if kind == MergeKind::Union => {
                *compares += 1;
                emit(ca, Some(pa), None, &mut f)?;
                x = a.next();
            }
            (None, Some((cb, pb))) if kind == MergeKind::Union => {
                *compares += 1;
                emit(cb, None, Some(pb), &mut f)?;
                y = b.next();
            }
            _ => return Ok(()),
        }
    }
}

/// Collecting form of [`co_iterate_with`].
pub fn co_iterate<A, B>(a: A, b: B, kind: MergeKind, compares: &mut u64) -> Vec<(usize, Option<usize>, Option<usize>)>
where
    A: Iterator<Item = (usize, usize)>,
    B: Iterator<Item = (usize, usize)>,
{
    let mut out = Vec::new();
    let _ = co_iterate_with::<_, _, ()>(a, b, kind, compares, |c, pa, pb| {
        out.push((c, pa, pb));
        Ok(())
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn stream(cs: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
        cs.iter().enumerate().map(|(p, &c)| (c, p))
    }

    fn coords(v: &[(usize, Option<usize>, Option<usize>)]) -> Vec<usize> {
        v.iter().map(|e| e.0).collect()
    }

    #[test]
    fn examples() {
        let mut n = 0;
        let r = co_iterate(stream(&[1, 3, 5]), stream(&[3, 4, 5]), MergeKind::Intersect, &mut n);
        assert_eq!(r, vec![(3, Some(1), Some(0)), (5, Some(2), Some(2))]);
        let r = co_iterate(stream(&[1, 3]), stream(&[2, 3]), MergeKind::Union, &mut n);
        assert_eq!(coords(&r), [1, 2, 3]);
        assert_eq!(r[1], (2, None, Some(0)));
        let mut n = 0;
        assert!(co_iterate(stream(&[1, 2]), stream(&[]), MergeKind::Intersect, &mut n).is_empty());
        assert_eq!(n, 0);
    }

    #[test]
    #[should_panic(expected = "ascending")]
    fn unordered_input_panics() {
        co_iterate(stream(&[3, 1]), stream(&[]), MergeKind::Union, &mut 0);
    }

    proptest! {
        #[test]
        fn matches_set_operations(a in proptest::collection::btree_set(0usize..40, 0..20),
                                  b in proptest::collection::btree_set(0usize..40, 0..20)) {
            let av: Vec<usize> = a.iter().copied().collect();
            let bv: Vec<usize> = b.iter().copied().collect();
            let mut n = 0;
            let i = co_iterate(stream(&av), stream(&bv), MergeKind::Intersect, &mut n);
            prop_assert_eq!(coords(&i), a.intersection(&b).copied().collect::<Vec<_>>());
            let mut m = 0;
            let u = co_iterate(stream(&av), stream(&bv), MergeKind::Union, &mut m);
            let all: BTreeSet<usize> = a.union(&b).copied().collect();
            prop_assert_eq!(coords(&u), all.iter().copied().collect::<Vec<_>>());
            prop_assert_eq!(m as usize, all.len());
            for (c, pa, pb) in u {
                prop_assert_eq!(pa.map(|p| av[p]), a.contains(&c).then_some(c));
                prop_assert_eq!(pb.map(|p| bv[p]), b.contains(&c).then_some(c));
            }
        }
    }
}
