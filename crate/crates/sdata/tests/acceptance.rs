//! Acceptance suite. One `[PASS]`/`[FAIL]` line per criterion, with the
//! wall-clock budget next to the measured time. Run with `--nocapture`
//! to see the lines.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRng, TestRunner, RngAlgorithm};
use sdata_core::ast::{Comprehension, Dir, Event, Guard, Iter, Kind, Network, ProcFlowstate};
use sdata_core::conformance::{capacities, check_preservation, uniform_sizes};
use sdata_core::flowstate::{fold_comprehension, rate_summary, IndexKey, RateKey, RateSummary};
use sdata_core::runtime::{explore, instantiate, run_observed, FaultPlan, Label, Scheduler, DEFAULT_STEP_LIMIT};
use sdata_core::size::{eval_size, normalize_size, SizeValue, Valuation};
use sdata_core::typecheck::check_network;
use sdata_core::{Name, SizeExpr};

const C1_LIMIT: Duration = Duration::from_secs(1);
const C2_LIMIT: Duration = Duration::from_secs(5);
const C3_LIMIT: Duration = Duration::from_secs(60);
const C4_LIMIT: Duration = Duration::from_secs(120);
const C5_LIMIT: Duration = Duration::from_secs(60);
const C6_LIMIT: Duration = Duration::from_secs(5);
const C7_LIMIT: Duration = Duration::from_secs(10);

const SIZES: [u64; 4] = [1, 2, 4, 8];
const SEEDS: [u64; 5] = [11, 23, 37, 41, 59];
/// Exhaustive runs stay below this buffer capacity.
const MAX_CAP: u64 = 4;
const MAX_STATES: usize = 2_000_000;

fn verdict(id: &str, what: &str, start: Instant, limit: Duration, failures: &[String]) {
    let took = start.elapsed();
    let ok = failures.is_empty() && took <= limit;
    let mut line = format!(
        "[{}] {} {} ({:.2} s, limit {} s)\n",
        if ok { "PASS" } else { "FAIL" },
        id,
        what,
        took.as_secs_f64(),
        limit.as_secs()
    );
    for f in failures.iter().take(10) {
        line.push_str(&format!("       {}\n", f));
    }
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(failures.is_empty(), "{} failed: {} problems", id, failures.len());
    assert!(took <= limit, "{} took {:?}, over {:?}", id, took, limit);
}

fn s() -> SizeExpr {
    SizeExpr::var("s")
}

fn key(chan: &str, dir: Dir, index: IndexKey) -> RateKey {
    RateKey { chan: Name::new(chan), dir, index }
}

/// Flowstate of the one component that reads `i`.
fn reader_flow(net: &Network) -> sdata_core::ast::ActorFlowstate {
    let flow = check_network(net).unwrap_or_else(|e| panic!("{}", e[0])).flow;
    flow.components()
        .into_iter()
        .find_map(|c| match c {
            ProcFlowstate::Actor(a) if a.comps().iter().any(|c| c.event.chan.as_str() == "i" && c.event.dir == Dir::Recv) => {
                Some(a.clone())
            }
            _ => None,
        })
        .expect("downsampler component")
}

#[test]
fn c1_golden_flowstate() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut want = RateSummary::default();
    want.rates.insert(key("i", Dir::Recv, IndexKey::Whole), s());
    want.rates.insert(key("o", Dir::Send, IndexKey::Whole), s() / SizeExpr::Num(2));
    for name in ["downsampler", "downsampler_harness"] {
        let net = common::load(name);
        let got = rate_summary(&net.types, &reader_flow(&net)).unwrap();
        if got != want {
            fails.push(format!("{}: {} != {}", name, got, want));
        }
    }
    let mut want = RateSummary::default();
    want.rates.insert(key("i", Dir::Recv, IndexKey::Range(SizeExpr::Num(1), s())), SizeExpr::Num(1));
    want.rates.insert(key("o", Dir::Send, IndexKey::Whole), s() / SizeExpr::Num(2));
    let net = common::load("downsampler_array");
    let got = rate_summary(&net.types, &reader_flow(&net)).unwrap();
    if got != want {
        fails.push(format!("array: {} != {}", got, want));
    }
    verdict("C1", "golden downsampler rate summaries", start, C1_LIMIT, &fails);
}

fn brute_count(lo: u64, hi: u64, keep: impl Fn(u64) -> bool) -> u64 {
    (lo..=hi).filter(|t| keep(*t)).count() as u64
}

fn folded_count(c: &Comprehension, val: &Valuation) -> u64 {
    match fold_comprehension(c).unwrap() {
        None => 0,
        Some(f) => {
            assert!(f.guards.is_empty(), "guard left after folding: {:?}", f.guards);
            f.iters
                .iter()
                .map(|it| {
                    let lo = eval_size(&it.lo, val).unwrap().finite().unwrap();
                    let hi = eval_size(&it.hi, val).unwrap().finite().unwrap();
                    (hi + 1).saturating_sub(lo)
                })
                .product()
        }
    }
}

#[test]
fn c2_guard_folding_oracle() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let t = Name::new("t");
    let comp = |hi: SizeExpr, g: Guard| Comprehension {
        event: Event::send("o"),
        iters: vec![Iter { var: t.clone(), lo: SizeExpr::Num(1), hi }],
        guards: vec![g],
    };
    let mut checked = 0;
    for tau in 1..=8u64 {
        for n in 1..=64u64 {
            let want = brute_count(1, n, |x| x % tau == 0);
            let closed = comp(SizeExpr::Num(n), Guard::Divides { divisor: SizeExpr::Num(tau), subject: SizeExpr::Var(t.clone()) });
            let symbolic = comp(s(), Guard::Divides { divisor: SizeExpr::Num(tau), subject: SizeExpr::Var(t.clone()) });
            let val = Valuation::from([(Name::new("s"), n)]);
            for (label, c) in [("closed", &closed), ("symbolic", &symbolic)] {
                let got = folded_count(c, &val);
                checked += 1;
                if got != want {
                    fails.push(format!("{} {} | t, n = {}: folded {} vs {}", label, tau, n, got, want));
                }
            }
        }
    }
    for bound in 1..=64u64 {
        for n in 1..=64u64 {
            let want = brute_count(1, n, |x| x <= bound);
            let c = comp(s(), Guard::AtMost { subject: SizeExpr::Var(t.clone()), bound: SizeExpr::var("b") });
            let val = Valuation::from([(Name::new("s"), n), (Name::new("b"), bound)]);
            let got = folded_count(&c, &val);
            checked += 1;
            if got != want {
                fails.push(format!("t <= {}, n = {}: folded {} vs {}", bound, n, got, want));
            }
        }
    }
    assert_eq!(checked, 8 * 64 * 2 + 64 * 64);
    verdict("C2", "guard folding matches brute-force counts", start, C2_LIMIT, &fails);
}

fn schedulers() -> Vec<Scheduler> {
    std::iter::once(Scheduler::RoundRobin).chain(SEEDS.iter().map(|s| Scheduler::Random(*s))).collect()
}

/// Step (1-based) at which the `nth` send fires under `sched`.
fn nth_send_step(net: &Network, sizes: &Valuation, sched: Scheduler, nth: u64) -> Option<usize> {
    let mut cfg = instantiate(net, sizes).unwrap().config;
    cfg.fault = Some(FaultPlan::DropNth(nth));
    let r = run_observed(&cfg, sched, DEFAULT_STEP_LIMIT, &mut |_, _, _, _, _| {});
    r.trace
        .iter()
        .filter(|t| matches!(&t.label, Label::Comm(e) if e.dir == Dir::Send))
        .nth(nth as usize - 1)
        .map(|t| t.step + 1)
}

#[test]
fn c3_preservation() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let corpus = common::corpus();
    assert!(corpus.len() >= 20, "corpus has {} networks", corpus.len());
    let mut runs = 0;
    for (name, net) in &corpus {
        let mut seen = BTreeSet::new();
        for n in SIZES {
            let sizes = uniform_sizes(net, n).unwrap();
            if !seen.insert(sizes.clone()) {
                continue;
            }
            for sched in schedulers() {
                runs += 1;
                match check_preservation(net, &sizes, sched, None) {
                    Ok(r) if r.violations.is_empty() && r.outcome == "complete" => {}
                    Ok(r) => fails.push(format!("{} {:?} {}: {} {:?}", name, sizes, sched, r.outcome, r.violations.first())),
                    Err(e) => fails.push(format!("{} {:?}: {}", name, sizes, e)),
                }
            }
        }
    }
    // Drop one send and require the first violation at exactly that step.
    let mut faults = 0;
    for name in ["pipeline2", "downsampler_harness", "fanin", "delayed_cycle", "merge"] {
        let net = common::load(name);
        let sizes = uniform_sizes(&net, 4).unwrap();
        for sched in [Scheduler::RoundRobin, Scheduler::Random(SEEDS[0])] {
            for nth in [1, 3] {
                faults += 1;
                let want = nth_send_step(&net, &sizes, sched, nth);
                let r = check_preservation(&net, &sizes, sched, Some(FaultPlan::DropNth(nth))).unwrap();
                let got = r.violations.first().map(|v| v.step);
                if want.is_none() || got != want {
                    fails.push(format!("{} {} drop #{}: violation at {:?}, send at {:?}", name, sched, nth, got, want));
                }
            }
        }
    }
    println!("       {} co-simulations, {} fault injections", runs, faults);
    verdict("C3", "preservation over corpus x sizes x schedulers", start, C3_LIMIT, &fails);
}

/// Sizes from `SIZES` at which every buffer of `net` holds at most `MAX_CAP`.
fn small_sizes(net: &Network) -> Vec<Valuation> {
    let mut out: Vec<Valuation> = Vec::new();
    for n in SIZES {
        let Some(v) = uniform_sizes(net, n) else { continue };
        let caps = capacities(net, &v);
        if caps.values().all(|c| c.is_some_and(|c| c <= MAX_CAP)) && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn flip_delay(net: &Network, chan: &str, delay: bool) -> Network {
    let mut out = net.clone();
    for b in out.types.bindings.iter_mut() {
        if b.name.as_str() == chan {
            if let Kind::Channel { delay: d, .. } | Kind::ChannelArray { delay: d, .. } = &mut b.value {
                *d = delay;
            }
        }
    }
    out
}

fn delayed_channels(net: &Network) -> Vec<String> {
    net.types
        .iter()
        .filter(|(_, k)| matches!(k, Kind::Channel { delay: true, .. } | Kind::ChannelArray { delay: true, .. }))
        .map(|(n, _)| n.to_string())
        .collect()
}

#[test]
fn c4_progress() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut instances = 0;
    for (name, net) in common::corpus() {
        if let Err(e) = check_network(&net) {
            fails.push(format!("{} rejected: {}", name, e[0]));
            continue;
        }
        let sizes = small_sizes(&net);
        if sizes.is_empty() {
            fails.push(format!("{}: no size keeps buffers within {}", name, MAX_CAP));
        }
        for v in sizes {
            instances += 1;
            let rep = explore(&instantiate(&net, &v).unwrap().config, MAX_STATES);
            if !rep.all_complete() || rep.truncated {
                fails.push(format!(
                    "{} {:?}: {} deadlocks, {} errors, truncated {}",
                    name,
                    v,
                    rep.deadlocks.len(),
                    rep.errors.len(),
                    rep.truncated
                ));
            }
        }
    }
    // Rejected cycles deadlock on every path; one delay flag fixes both.
    let mut cycles: Vec<(String, Network, String)> =
        vec![("undelayed_cycle".into(), common::load("undelayed_cycle"), "q".into())];
    for base in ["delayed_cycle", "ring3"] {
        let net = common::load(base);
        for ch in delayed_channels(&net) {
            cycles.push((format!("{} without delay on {}", base, ch), flip_delay(&net, &ch, false), ch));
        }
    }
    for (name, net, ch) in &cycles {
        match check_network(net) {
            Ok(_) => fails.push(format!("{}: accepted", name)),
            Err(e) if e[0].rule != "FS Prog Cons" => fails.push(format!("{}: rejected by {}", name, e[0].rule)),
            Err(_) => {}
        }
        let fixed = flip_delay(net, ch, true);
        if let Err(e) = check_network(&fixed) {
            fails.push(format!("{} with delay on {}: {}", name, ch, e[0]));
        }
        for v in small_sizes(net) {
            instances += 2;
            let rep = explore(&instantiate(net, &v).unwrap().config, MAX_STATES);
            if !rep.always_deadlocks() || !rep.finals.is_empty() {
                fails.push(format!("{} {:?}: {} final states", name, v, rep.finals.len()));
            }
            let rep = explore(&instantiate(&fixed, &v).unwrap().config, MAX_STATES);
            if !rep.all_complete() {
                fails.push(format!("{} fixed {:?}: {} deadlocks", name, v, rep.deadlocks.len()));
            }
        }
    }
    println!("       {} exhaustive explorations", instances);
    verdict("C4", "progress under exhaustive interleaving", start, C4_LIMIT, &fails);
}

#[test]
fn c5_determinism() {
    let start = Instant::now();
    let mut fails = Vec::new();
    for (name, net) in common::corpus() {
        for v in small_sizes(&net) {
            let rep = explore(&instantiate(&net, &v).unwrap().config, MAX_STATES);
            if rep.finals.len() != 1 {
                fails.push(format!("{} {:?}: {} distinct final states", name, v, rep.finals.len()));
            }
        }
    }
    verdict("C5", "single final state per accepted network", start, C5_LIMIT, &fails);
}

#[test]
fn c6_safety() {
    let start = Instant::now();
    let mut fails = Vec::new();
    for (name, net) in common::corpus() {
        for v in small_sizes(&net) {
            let inst = instantiate(&net, &v).unwrap();
            let rep = explore(&inst.config, MAX_STATES);
            if !rep.max_occupancy_ok {
                fails.push(format!("{} {:?}: a buffer exceeded its capacity", name, v));
            }
            for sched in schedulers() {
                let r = run_observed(&inst.config, sched, DEFAULT_STEP_LIMIT, &mut |_, _, _, _, _| {});
                for t in &r.trace {
                    if let Some((b, len, cap)) = t.buffers.iter().find(|(_, len, cap)| *len as u64 > *cap) {
                        fails.push(format!("{} {} step {}: {} holds {} > {}", name, sched, t.step, b, len, cap));
                    }
                }
            }
        }
    }
    let rejects = common::reject_corpus();
    assert!(rejects.len() >= 10, "reject corpus has {} programs", rejects.len());
    for (name, rule, src) in &rejects {
        let diags = match sdata::parse_program(src) {
            Err(d) => d,
            Ok(net) => match check_network(&net) {
                Ok(_) => {
                    fails.push(format!("{}: accepted", name));
                    continue;
                }
                Err(d) => d,
            },
        };
        if !diags.iter().any(|d| d.rule == rule) {
            fails.push(format!("{}: expected {}, got {}", name, rule, diags[0]));
        }
    }
    println!("       {} ill-formed programs", rejects.len());
    verdict("C6", "capacity bounds and rejection with rule names", start, C6_LIMIT, &fails);
}

#[test]
fn c7_roundtrip_and_normalization() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut runner = TestRunner::new_with_rng(Config::default(), TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]));
    for i in 0..50 {
        let net = common::sample(common::network(), &mut runner);
        let text = sdata::print_program(&net);
        match sdata::parse_program(&text) {
            Ok(back) if back == net && sdata::print_program(&back) == text => {}
            Ok(_) => fails.push(format!("program {} changed on reparse", i)),
            Err(e) => fails.push(format!("program {}: {}", i, e[0])),
        }
    }
    let mut evals = 0;
    for _ in 0..200 {
        let e = common::sample(common::size_expr(), &mut runner);
        let nf = normalize_size(&e).unwrap();
        let again = normalize_size(nf.expr()).unwrap();
        if again != nf {
            fails.push(format!("not idempotent: {} ~> {} ~> {}", e, nf, again));
        }
        for _ in 0..100 {
            let v = common::sample(common::valuation(), &mut runner);
            evals += 1;
            let want = common::oracle_eval(&e, &v);
            let got = match eval_size(nf.expr(), &v) {
                Ok(SizeValue::Finite(n)) => Some(n as u128),
                Ok(SizeValue::Infinite) => None,
                Err(err) => {
                    fails.push(format!("{} ~> {}: {}", e, nf, err));
                    continue;
                }
            };
            if got != want {
                fails.push(format!("{} ~> {} at {:?}: {:?} vs {:?}", e, nf, v, got, want));
            }
        }
    }
    assert_eq!(evals, 200 * 100);
    verdict("C7", "round-trip on 50 programs, normal forms on 200 x 100", start, C7_LIMIT, &fails);
}
