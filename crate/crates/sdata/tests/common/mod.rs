#![allow(dead_code)]

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use sdata_core::ast::*;
use sdata_core::size::Valuation;
use sdata_core::{Name, SizeExpr};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn sdf_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "sdf"))
        .collect();
    v.sort();
    v
}

/// Accepted networks as `(stem, network)`.
pub fn corpus() -> Vec<(String, Network)> {
    sdf_files(&corpus_dir())
        .into_iter()
        .map(|p| {
            let src = std::fs::read_to_string(&p).unwrap();
            let net = sdata::parse_program(&src).unwrap_or_else(|e| panic!("{}: {}", p.display(), e[0]));
            (p.file_stem().unwrap().to_string_lossy().into_owned(), net)
        })
        .collect()
}

/// Ill-formed programs with the rule named on their first line.
pub fn reject_corpus() -> Vec<(String, String, String)> {
    sdf_files(&corpus_dir().join("reject"))
        .into_iter()
        .map(|p| {
            let src = std::fs::read_to_string(&p).unwrap();
            let rule = src.lines().next().and_then(|l| l.strip_prefix("// expect: ")).expect("expect line").to_string();
            (p.file_stem().unwrap().to_string_lossy().into_owned(), rule, src)
        })
        .collect()
}

pub fn load(name: &str) -> Network {
    let p = corpus_dir().join(format!("{}.sdf", name));
    let p = if p.exists() { p } else { corpus_dir().join("reject").join(format!("{}.sdf", name)) };
    sdata::parse_program(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn sample<T: std::fmt::Debug>(s: impl Strategy<Value = T>, runner: &mut TestRunner) -> T {
    s.new_tree(runner).unwrap().current()
}

// Size expressions.

pub const SIZE_VARS: &[&str] = &["s", "n", "k"];

fn size_var() -> impl Strategy<Value = SizeExpr> {
    prop::sample::select(SIZE_VARS).prop_map(SizeExpr::var)
}

/// Divisors are never zero under a positive valuation.
fn divisor() -> impl Strategy<Value = SizeExpr> {
    prop_oneof![(1u64..6).prop_map(SizeExpr::Num), size_var(), Just(SizeExpr::Inf)]
}

pub fn size_expr() -> impl Strategy<Value = SizeExpr> {
    let leaf = prop_oneof![4 => (0u64..12).prop_map(SizeExpr::Num), 4 => size_var(), 1 => Just(SizeExpr::Inf)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), divisor()).prop_map(|(a, b)| a / b),
            (inner.clone(), inner).prop_map(|(a, b)| SizeExpr::minimum(a, b)),
        ]
    })
}

pub fn valuation() -> impl Strategy<Value = Valuation> {
    prop::collection::vec(1u64..=12, SIZE_VARS.len())
        .prop_map(|vs| SIZE_VARS.iter().zip(vs).map(|(n, v)| (Name::new(n), v)).collect())
}

/// Reference semantics for size arithmetic. `None` is infinity.
pub fn oracle_eval(e: &SizeExpr, val: &Valuation) -> Option<u128> {
    match e {
        SizeExpr::Num(n) => Some(*n as u128),
        SizeExpr::Inf => None,
        SizeExpr::Var(v) => Some(val[v] as u128),
        SizeExpr::Add(a, b) => Some(oracle_eval(a, val)? + oracle_eval(b, val)?),
        SizeExpr::Mul(a, b) => Some(oracle_eval(a, val)? * oracle_eval(b, val)?),
        SizeExpr::Sub(a, b) => {
            let x = oracle_eval(a, val)?;
            Some(oracle_eval(b, val).map_or(0, |y| x.saturating_sub(y)))
        }
        SizeExpr::Div(a, b) => {
            let x = oracle_eval(a, val)?;
            Some(oracle_eval(b, val).map_or(0, |y| x / y))
        }
        SizeExpr::Min(a, b) => match (oracle_eval(a, val), oracle_eval(b, val)) {
            (None, y) => y,
            (x, None) => x,
            (Some(x), Some(y)) => Some(x.min(y)),
        },
    }
}

// Whole programs.

const VARS: &[&str] = &["a", "b", "v", "w", "x", "y", "acc", "tmp"];
const CHANS: &[&str] = &["c", "d", "req", "rsp"];

fn name(pool: &'static [&'static str]) -> impl Strategy<Value = Name> {
    prop::sample::select(pool).prop_map(Name::new)
}

fn event() -> impl Strategy<Value = Event> {
    (name(CHANS), any::<bool>(), prop::option::of(size_expr())).prop_map(|(chan, send, index)| Event {
        dir: if send { Dir::Send } else { Dir::Recv },
        chan,
        index,
    })
}

fn guard() -> impl Strategy<Value = Guard> {
    prop_oneof![
        (size_expr(), size_expr()).prop_map(|(divisor, subject)| Guard::Divides { divisor, subject }),
        (size_expr(), size_expr()).prop_map(|(subject, bound)| Guard::AtMost { subject, bound }),
    ]
}

fn comprehension() -> impl Strategy<Value = Comprehension> {
    let iter = (prop::sample::select(&["t", "u", "_"][..]), size_expr(), size_expr())
        .prop_map(|(v, lo, hi)| Iter { var: Name::new(v), lo, hi });
    (event(), prop::collection::vec(iter, 0..3), prop::collection::vec(guard(), 0..2))
        .prop_map(|(event, iters, guards)| Comprehension { event, iters, guards })
}

pub fn actor_flow() -> impl Strategy<Value = ActorFlowstate> {
    let leaf = prop_oneof![1 => Just(ActorFlowstate::Empty), 4 => comprehension().prop_map(ActorFlowstate::Comp)];
    leaf.prop_recursive(3, 8, 2, |inner| (inner.clone(), inner).prop_map(|(a, b)| ActorFlowstate::seq(a, b)))
}

pub fn proc_flow() -> impl Strategy<Value = ProcFlowstate> {
    let leaf = prop_oneof![
        1 => Just(ProcFlowstate::Empty),
        4 => actor_flow().prop_map(ProcFlowstate::Actor),
        2 => (name(&["t", "k"]), size_expr(), size_expr(), actor_flow())
            .prop_map(|(var, lo, hi, body)| ProcFlowstate::ActorArray { var, lo, hi, body }),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| (inner.clone(), inner).prop_map(|(a, b)| ProcFlowstate::par(a, b)))
}

pub fn simple_type() -> impl Strategy<Value = SimpleType> {
    let leaf = prop_oneof![
        Just(SimpleType::Boolean),
        Just(SimpleType::Integer),
        size_expr().prop_map(SimpleType::Size),
        size_expr().prop_map(SimpleType::Index),
    ];
    leaf.prop_recursive(2, 6, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| SimpleType::Ref(Box::new(t))),
            (prop::collection::vec(inner.clone(), 0..3), actor_flow(), actor_flow(), inner).prop_map(
                |(params, latent, rest, result)| SimpleType::Proc(Box::new(ProcType { params, latent, rest, result }))
            ),
        ]
    })
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

pub fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-40i64..100).prop_map(Expr::int),
        any::<bool>().prop_map(Expr::boolean),
        name(VARS).prop_map(|n| Expr::new(ExprKind::Var(n))),
        (0u32..4, 0u32..4).prop_map(|(actor, slot)| Expr::new(ExprKind::Loc(Loc { actor, slot }))),
    ];
    leaf.prop_recursive(4, 40, 3, |inner| {
        let bin = prop::sample::select(&[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Eq, BinOp::Le, BinOp::Lt][..]);
        let chan_index = prop::option::of(inner.clone().prop_map(b));
        prop_oneof![
            (bin, inner.clone(), inner.clone())
                .prop_map(|(op, l, r)| Expr::new(ExprKind::Binary { op, lhs: b(l), rhs: b(r) })),
            inner.clone().prop_map(|e| Expr::new(ExprKind::MkSize(b(e)))),
            inner.clone().prop_map(|e| Expr::new(ExprKind::MkIndex(b(e)))),
            inner.clone().prop_map(|e| Expr::new(ExprKind::FromSize(b(e)))),
            inner.clone().prop_map(|e| Expr::new(ExprKind::FromIndex(b(e)))),
            inner.clone().prop_map(|e| Expr::new(ExprKind::Ref(b(e)))),
            inner.clone().prop_map(|e| Expr::new(ExprKind::Deref(b(e)))),
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Expr::new(ExprKind::Assign(b(l), b(r)))),
            (inner.clone(), prop::collection::vec(inner.clone(), 0..3))
                .prop_map(|(f, args)| Expr::new(ExprKind::App(b(f), args))),
            (name(VARS), prop::option::of(simple_type()), inner.clone(), inner.clone()).prop_map(
                |(name, annot, bound, body)| Expr::new(ExprKind::Let { name, annot, bound: b(bound), body: b(body) })
            ),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| Expr::seq(x, y)),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, t, e)| Expr::new(ExprKind::If {
                cond: b(c),
                then_branch: b(t),
                else_branch: b(e)
            })),
            (any::<bool>(), inner.clone(), inner.clone(), inner.clone()).prop_map(|(div, l, r, body)| {
                let op = if div { GuardOp::Divides } else { GuardOp::AtMost };
                Expr::new(ExprKind::When { op, lhs: b(l), rhs: b(r), body: b(body) })
            }),
            (name(&["t", "u"]), name(VARS), 0u64..3, inner.clone(), inner.clone()).prop_map(
                |(ty_var, var, lo, bound, body)| Expr::new(ExprKind::For { ty_var, var, lo, bound: b(bound), body: b(body) })
            ),
            (prop::collection::vec((name(VARS), simple_type()), 0..3), actor_flow(), actor_flow(), inner.clone())
                .prop_map(|(params, latent, rest, body)| Expr::new(ExprKind::Fun(Box::new(Abstraction {
                    params,
                    latent,
                    rest,
                    body
                })))),
            (name(CHANS), chan_index.clone()).prop_map(|(chan, index)| Expr::new(ExprKind::Recv { chan, index })),
            (name(CHANS), chan_index, inner)
                .prop_map(|(chan, index, p)| Expr::new(ExprKind::Send { chan, index, payload: b(p) })),
        ]
    })
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![
        Just(Kind::Type),
        size_expr().prop_map(Kind::Size),
        (any::<bool>(), size_expr()).prop_map(|(delay, limit)| Kind::Channel { delay, limit }),
        (size_expr(), any::<bool>(), size_expr()).prop_map(|(bound, delay, limit)| Kind::ChannelArray {
            bound,
            delay,
            limit
        }),
    ]
}

fn value_type() -> impl Strategy<Value = ValueType> {
    let pol = prop::sample::select(&[Polarity::In, Polarity::Out, Polarity::Both][..]);
    prop_oneof![
        simple_type().prop_map(ValueType::Simple),
        (pol.clone(), name(CHANS), simple_type())
            .prop_map(|(polarity, channel, payload)| ValueType::Chan { polarity, channel, payload }),
        (pol, name(CHANS), simple_type(), size_expr()).prop_map(|(polarity, channel, payload, bound)| {
            ValueType::ChanArray { polarity, channel, payload, bound }
        }),
    ]
}

fn proc() -> impl Strategy<Value = Proc> {
    let leaf = prop_oneof![
        1 => Just(Proc::new(ProcKind::Stop)),
        4 => expr().prop_map(|e| Proc::new(ProcKind::Actor(e))),
        2 => (name(&["t"]), name(VARS), 0u64..3, expr(), expr())
            .prop_map(|(ty_var, var, lo, bound, body)| Proc::new(ProcKind::Comp { ty_var, var, lo, bound, body })),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| (inner.clone(), inner).prop_map(|(a, b)| Proc::par(a, b)))
}

pub fn network() -> impl Strategy<Value = Network> {
    (
        prop::collection::vec((name(&["s", "n", "c", "d", "req"]), kind()), 0..4),
        prop::collection::vec((name(VARS), value_type()), 0..4),
        proc_flow(),
        proc(),
    )
        .prop_map(|(ts, vs, flow, body)| {
            let mut types = TypeEnv::new();
            for (n, k) in ts {
                types.push(n, k);
            }
            let mut values = ValueEnv::new();
            for (n, t) in vs {
                values.push(n, t);
            }
            Network { types, values, flow, body }
        })
}
