use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use cin_core::engine::{execute_with, ExecOptions};
use cin_core::graph::{build_graph, plan_loops, ExecutionMode, PlanOptions};
use cin_core::io::{read_matrix_market, read_tns, write_matrix_market, write_tns};
use cin_core::notation::{parse, parse_concrete, print_stmt};
use cin_core::oracle::{compare, eval_dense, gen_random, RandomSpec};
use cin_core::storage::{ModeFormat, TensorFormat, TensorStorage};
use cin_core::transform::{lower_to_concrete, parse_schedule, schedule};

fn format_strategy(order: usize) -> impl Strategy<Value = TensorFormat> {
    (
        proptest::collection::vec(any::<bool>(), order),
        Just((0..order).collect::<Vec<usize>>()).prop_shuffle(),
    )
        .prop_map(|(compressed, ordering)| {
            let levels = compressed.into_iter().map(|c| if c { ModeFormat::COMPRESSED } else { ModeFormat::DENSE }).collect();
            TensorFormat::new(levels, ordering).unwrap()
        })
}

fn tensor_strategy(orders: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<usize>, TensorFormat, Vec<(Vec<usize>, f64)>)> {
    orders
        .prop_flat_map(|order| (proptest::collection::vec(1usize..6, order), format_strategy(order)))
        .prop_flat_map(|(dims, format)| {
            let coord = dims.iter().map(|&d| 0..d).collect::<Vec<_>>();
            let entry = (coord, -100i32..100).prop_map(|(c, v)| (c, v as f64 / 8.0));
            (Just(dims), Just(format), proptest::collection::vec(entry, 0..30))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn storage_round_trip_and_locate((dims, format, entries) in tensor_strategy(1..=3)) {
        let s = TensorStorage::from_entries(&dims, format, entries.clone()).unwrap();
        s.check_invariants().unwrap();
        let mut expected: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (c, v) in &entries {
            *expected.entry(c.clone()).or_default() += v;
        }
        let mut stored: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (c, v) in s.entries() {
            prop_assert!(stored.insert(c, v).is_none());
        }
        for (c, v) in &expected {
            prop_assert_eq!(stored.get(c).copied().unwrap_or(0.0), *v);
        }
        let total: usize = dims.iter().product();
        for f in 0..total {
            let mut c = vec![0; dims.len()];
            let mut r = f;
            for m in (0..dims.len()).rev() {
                c[m] = r % dims[m];
                r /= dims[m];
            }
            let found = s.locate(&c).unwrap().map(|p| s.vals()[p]);
            prop_assert_eq!(found, stored.get(&c).copied());
        }
    }

    #[test]
    fn tns_and_mtx_round_trip((dims, format, entries) in tensor_strategy(2..=3)) {
        let canonical = TensorFormat::with_levels(format.mode_formats().to_vec());
        let s = TensorStorage::from_entries(&dims, canonical.clone(), entries).unwrap();
        let mut buf = Vec::new();
        write_tns(&mut buf, &s).unwrap();
        let (d, e) = read_tns(buf.as_slice()).unwrap();
        prop_assert_eq!(&TensorStorage::from_entries(&d, canonical.clone(), e).unwrap(), &s);
        if dims.len() == 2 {
            let mut buf = Vec::new();
            write_matrix_market(&mut buf, &s).unwrap();
            let (d, e) = read_matrix_market(buf.as_slice()).unwrap();
            prop_assert_eq!(&TensorStorage::from_entries(&d, canonical, e).unwrap(), &s);
        }
    }
}

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("B(i,j)".to_string()),
        Just("C(j,i)".to_string()),
        Just("d(i)".to_string()),
        Just("e(j)".to_string()),
        (1u8..9).prop_map(|k| format!("{}.5", k)),
    ]
}

fn rhs() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} + {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) * ({b})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("{a} * {b}")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_parse_is_stable(r in rhs(), reduce in any::<bool>()) {
        let text = if reduce { format!("a(i) = sum(j)({r})") } else { format!("A(i,j) = {r}") };
        let src = parse(&text).unwrap();
        let printed = src.to_string();
        let again = parse(&printed).unwrap();
        prop_assert_eq!(again.to_string(), printed);
        prop_assert!(again.rhs.same_shape(&src.rhs));
        let cin = print_stmt(&lower_to_concrete(&src));
        prop_assert_eq!(print_stmt(&parse_concrete(&cin).unwrap()), cin);
    }
}

/// Kernels with a schedule that transforms them; every tensor is CSR or
/// CSF except dense vectors and factor matrices.
const KERNELS: &[(&str, &str, &[(&str, usize, bool)])] = &[
    (
        "A(i,j) = sum(k)(B(i,k)*C(k,j))",
        "reorder(i,k,j); workspace(B(i,k)*C(k,j), {j}, dense)",
        &[("A", 2, true), ("B", 2, true), ("C", 2, true)],
    ),
    (
        "A(i,j) = B(i,j) + C(i,j)",
        "workspace(B(i,j)+C(i,j), {j}); workspace_reuse(B(i,j), {j})",
        &[("A", 2, true), ("B", 2, true), ("C", 2, true)],
    ),
    ("a(i) = sum(j)(B(i,j)*C(i,j))", "workspace(B(i,j)*C(i,j), {i}, dense)", &[("B", 2, true), ("C", 2, true)]),
    (
        "A(i,j) = sum(k,l)(B(i,k,l)*C(l,j)*D(k,j))",
        "reorder(i,k,l,j); workspace(B(i,k,l)*C(l,j), {j}, dense)",
        &[("B", 3, true), ("C", 2, false), ("D", 2, false)],
    ),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedules_preserve_semantics(k in 0..KERNELS.len(), dims in proptest::collection::vec(1usize..7, 4),
                                    density in prop_oneof![Just(0.05), Just(0.3), Just(1.0)], seed in any::<u64>()) {
        let (expr, sched, tensors) = KERNELS[k];
        let src = parse(expr).unwrap();
        let vars: Vec<String> = src.index_vars().iter().map(|v| v.name().to_string()).collect();
        let extent: HashMap<String, usize> = vars.iter().cloned().zip(dims.iter().copied().cycle()).collect();
        let mut formats = HashMap::new();
        let mut stores = HashMap::new();
        let mut dense = HashMap::new();
        for (n, a) in std::iter::once(&src.lhs).chain(src.rhs.accesses()).enumerate() {
            let name = a.tensor.name();
            let sparse = tensors.iter().find(|t| t.0 == name).map_or(false, |t| t.2);
            let order = a.indices.len();
            let f = if !sparse { TensorFormat::dense(order) } else if order == 2 { TensorFormat::csr() } else { TensorFormat::csf(order) };
            formats.insert(name.to_string(), f.clone());
            if n == 0 {
                continue;
            }
            let d: Vec<usize> = a.indices.iter().map(|v| extent[v.name()]).collect();
            let (s, t) = gen_random(&RandomSpec::new(&d, density, seed.wrapping_add(n as u64)), f).unwrap();
            stores.insert(name.to_string(), s);
            dense.insert(name.to_string(), t);
        }
        let expected = eval_dense(&src, &dense).unwrap();
        let opts = ExecOptions { check_invariants: true, ..Default::default() };
        for directives in ["", sched] {
            let stmt = schedule(&src, &parse_schedule(directives).unwrap()).unwrap().stmt;
            // unscheduled kernels with sparse results may be unplannable
            let plan = match build_graph(&stmt, &formats).and_then(|g| plan_loops(&g, PlanOptions::default())) {
                Ok(p) => p,
                Err(e) => {
                    prop_assert!(directives.is_empty(), "{} with `{}`: {}", expr, directives, e);
                    continue;
                }
            };
            let (out, _) = execute_with(&plan, &stores, ExecutionMode::Fused, &opts).unwrap();
            let r = compare(&out, &expected, 1e-10);
            prop_assert!(r.pass, "{} with `{}`: {}", expr, directives, r);
        }
    }
}
