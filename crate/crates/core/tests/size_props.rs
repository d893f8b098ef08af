use std::collections::BTreeMap;

use proptest::prelude::*;
use sdata_core::ast::{Kind, TypeEnv};
use sdata_core::kinding::size_leq;
use sdata_core::size::{eval_size, normalize_size, SizeValue, Valuation};
use sdata_core::{Name, SizeExpr, Tri};

const VARS: [&str; 3] = ["a", "b", "c"];

// Independent evaluator in u128; None is infinity.
fn oracle(e: &SizeExpr, v: &BTreeMap<&str, u128>) -> Option<Option<u128>> {
    use SizeExpr::*;
    let two = |x: &SizeExpr, y: &SizeExpr| Some((oracle(x, v)?, oracle(y, v)?));
    Some(match e {
        Num(n) => Some(*n as u128),
        Inf => None,
        Var(n) => Some(v[n.as_str()]),
        Add(x, y) => match two(x, y)? {
            (Some(p), Some(q)) => Some(p + q),
            _ => None,
        },
        Sub(x, y) => match two(x, y)? {
            (None, _) => None,
            (Some(_), None) => Some(0),
            (Some(p), Some(q)) => Some(p.saturating_sub(q)),
        },
        Mul(x, y) => match two(x, y)? {
            (Some(p), Some(q)) => Some(p * q),
            _ => None,
        },
        Div(x, y) => match two(x, y)? {
            (_, Some(0)) => return None,
            (None, _) => None,
            (Some(_), None) => Some(0),
            (Some(p), Some(q)) => Some(p / q),
        },
        Min(x, y) => match two(x, y)? {
            (None, q) => q,
            (p, None) => p,
            (Some(p), Some(q)) => Some(p.min(q)),
        },
    })
}

fn expr() -> impl Strategy<Value = SizeExpr> {
    let leaf = prop_oneof![
        (0u64..6).prop_map(SizeExpr::Num),
        Just(SizeExpr::Inf),
        prop::sample::select(VARS.to_vec()).prop_map(SizeExpr::var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let b = |e: SizeExpr| Box::new(e);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| SizeExpr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| SizeExpr::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| SizeExpr::Mul(b(x), b(y))),
            (inner.clone(), 1u64..5).prop_map(move |(x, d)| SizeExpr::Div(b(x), b(SizeExpr::Num(d)))),
            (inner.clone(), inner).prop_map(|(x, y)| SizeExpr::minimum(x, y)),
        ]
    })
}

fn valuation() -> impl Strategy<Value = [u64; 3]> {
    [1u64..=9, 1u64..=9, 1u64..=9]
}

fn both(v: [u64; 3]) -> (Valuation, BTreeMap<&'static str, u128>) {
    let core = VARS.iter().zip(v).map(|(n, x)| (Name::new(n), x)).collect();
    let o = VARS.iter().zip(v).map(|(n, x)| (*n, x as u128)).collect();
    (core, o)
}

fn as_oracle(v: SizeValue) -> Option<u128> {
    v.finite().map(|n| n as u128)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn eval_agrees_with_oracle(e in expr(), v in valuation()) {
        let (core, o) = both(v);
        if let Some(want) = oracle(&e, &o) {
            prop_assert_eq!(as_oracle(eval_size(&e, &core).unwrap()), want);
        }
    }

    #[test]
    fn normal_form_preserves_value(e in expr(), v in valuation()) {
        let (_, o) = both(v);
        let Ok(nf) = normalize_size(&e) else { return Ok(()) };
        if let Some(want) = oracle(&e, &o) {
            prop_assert_eq!(oracle(nf.expr(), &o).flatten(), want, "normal form {}", nf);
        }
    }

    #[test]
    fn normal_form_is_idempotent(e in expr()) {
        if let Ok(nf) = normalize_size(&e) {
            prop_assert_eq!(normalize_size(nf.expr()).unwrap(), nf);
        }
    }

    #[test]
    fn leq_is_sound(x in expr(), y in expr(), vs in prop::collection::vec(valuation(), 16)) {
        let env = TypeEnv::new();
        let verdict = size_leq(&env, &x, &y);
        if verdict == Tri::Unknown {
            return Ok(());
        }
        for v in vs {
            let (_, o) = both(v);
            let (Some(p), Some(q)) = (oracle(&x, &o), oracle(&y, &o)) else { continue };
            let holds = match (p, q) {
                (_, None) => true,
                (None, Some(_)) => false,
                (Some(p), Some(q)) => p <= q,
            };
            prop_assert_eq!(holds, verdict == Tri::True, "{} <= {} at {:?}", x, y, v);
        }
    }
}

#[test]
fn leq_uses_declared_bounds() {
    let mut env = TypeEnv::new();
    env.push(Name::new("a"), Kind::Size(SizeExpr::var("b")));
    assert_eq!(size_leq(&env, &SizeExpr::var("a"), &SizeExpr::var("b")), Tri::True);
    assert_ne!(size_leq(&TypeEnv::new(), &SizeExpr::var("a"), &SizeExpr::var("b")), Tri::True);
}
