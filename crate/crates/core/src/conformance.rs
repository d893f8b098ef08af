//! Flowstate reduction, heap typing and per-instance checks of type
//! preservation and progress.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::ast::{
    ActorFlowstate, Comprehension, Dir, Event, ExprKind, Expr, Iter, Kind, Network, ProcFlowstate, SimpleType,
    TypeEnv, ValueEnv, ValueType,
};
use crate::diag::{Diagnostic, Tri};
use crate::flowstate::{
    comprehension_rates, flowstates_equivalent, proc_rate_summary, summaries_equivalent, IndexKey, RateKey,
    RateSummary,
};
use crate::name::Name;
use crate::netcheck::{classify_event, Role};
use crate::runtime::{
    actor_flows, explore, instantiate, run_observed, Configuration, DeadlockReport, FaultPlan, Heap, Label,
    RunOutcome, Scheduler, DEFAULT_STEP_LIMIT,
};
use crate::size::{eval_size, SizeExpr, SizeValue, Valuation};
use crate::typecheck::{Checker, HeapTypes};

fn payload_of(venv: &ValueEnv, chan: &Name) -> Option<SimpleType> {
    venv.iter().find_map(|(_, t)| match t {
        ValueType::Chan { channel, payload, .. } | ValueType::ChanArray { channel, payload, .. } if channel == chan => {
            Some(payload.clone())
        }
        _ => None,
    })
}

fn value_fits(v: &Expr, t: &SimpleType) -> bool {
    match (&v.kind, t) {
        (ExprKind::Int(_), SimpleType::Integer) | (ExprKind::Bool(_), SimpleType::Boolean) => true,
        (ExprKind::MkSize(_), SimpleType::Size(s)) => s.closed_value() == v.size_payload().map(|n| n as u64),
        (ExprKind::MkIndex(_), SimpleType::Index(s)) => match (v.size_payload(), s.closed_value()) {
            (Some(k), Some(b)) => k >= 1 && (k as u64) <= b,
            _ => false,
        },
        _ => false,
    }
}

fn pending(chan: &Name, delay: bool, index: Option<u64>, len: u64, cap: u64) -> Option<Comprehension> {
    let n = if delay { cap.saturating_sub(len) } else { len };
    if n == 0 {
        return None;
    }
    let mut ev = Event { dir: if delay { Dir::Recv } else { Dir::Send }, chan: chan.clone(), index: None };
    if let Some(k) = index {
        ev = ev.at(SizeExpr::Num(k));
    }
    Some(Comprehension::repeat(ev, SizeExpr::Num(n)))
}

/// Pending communications recorded by the buffers: `<n>c!` for `n` items
/// on an undelayed channel, `<k-n>c?` for a delayed one of capacity `k`.
pub fn heap_flowstate(tenv: &TypeEnv, venv: &ValueEnv, h: &Heap) -> Result<ProcFlowstate, Diagnostic> {
    let mut comps = Vec::new();
    let check = |chan: &Name, b: &crate::runtime::Buffer| -> Result<(), Diagnostic> {
        let t = payload_of(venv, chan).unwrap_or(SimpleType::Integer);
        match b.items.iter().find(|v| !value_fits(v, &t)) {
            Some(v) => Err(Diagnostic::new("Heap Buffer", format!("buffer `{}` holds {}, expected {}", chan, v, t))),
            None => Ok(()),
        }
    };
    for (chan, kind) in tenv.iter() {
        let delay = match kind {
            Kind::Channel { delay, .. } | Kind::ChannelArray { delay, .. } => *delay,
            _ => continue,
        };
        if let Some(b) = h.channels.get(chan) {
            check(chan, b)?;
            comps.extend(pending(chan, delay, None, b.len() as u64, b.capacity));
        }
        if let Some(bs) = h.arrays.get(chan) {
            for (i, b) in bs.iter().enumerate() {
                check(chan, b)?;
                comps.extend(pending(chan, delay, Some(i as u64 + 1), b.len() as u64, b.capacity));
            }
        }
    }
    Ok(ProcFlowstate::Actor(ActorFlowstate::from_comps(comps)))
}

fn instance_of(c: &Comprehension, it: &Iter, at: u64) -> Comprehension {
    let v = SizeExpr::Num(at);
    let mut sub = |e: &SizeExpr| e.subst(&it.var, &v).normalized();
    Comprehension {
        event: c.event.map_sizes(&mut sub),
        iters: c.iters[..c.iters.len() - 1]
            .iter()
            .map(|i| Iter { var: i.var.clone(), lo: sub(&i.lo), hi: sub(&i.hi) })
            .collect(),
        guards: c.guards.iter().map(|g| g.map_sizes(&mut sub)).collect(),
    }
}

/// Remove one instance of `target` from `c` by unrolling its outermost
/// iterator at the lower bound. Returns the residue.
fn extract(c: &Comprehension, target: &Event, fuel: &mut u32) -> Option<Vec<Comprehension>> {
    if c.event.chan != target.chan || c.event.dir != target.dir || *fuel == 0 {
        return None;
    }
    *fuel -= 1;
    let Some(it) = c.iters.last() else {
        if !c.guards.iter().all(|g| g.decide() == Some(true)) {
            return None;
        }
        let here = c.event.index.as_ref().map(|i| i.normalized().closed_value());
        let want = target.index.as_ref().map(|i| i.closed_value());
        return (here == want).then(Vec::new);
    };
    let (lo, hi) = (it.lo.closed_value()?, it.hi.closed_value()?);
    if lo > hi {
        return None;
    }
    let head = instance_of(c, it, lo);
    let mut tail = c.clone();
    tail.iters.last_mut().expect("nonempty").lo = SizeExpr::Num(lo + 1);
    if let Some(mut r) = extract(&head, target, fuel) {
        r.push(tail);
        return Some(r);
    }
    let mut r = extract(&tail, target, fuel)?;
    r.insert(0, head);
    Some(r)
}

fn is_spent(c: &Comprehension) -> bool {
    matches!(comprehension_rates(c), Ok(r) if r.is_empty())
}

/// Silent reductions: drop exhausted comprehensions and false guards.
pub fn step_flowstate_internal(fs: &ActorFlowstate) -> ActorFlowstate {
    ActorFlowstate::from_comps(fs.comps().into_iter().filter(|c| !is_spent(c)).cloned())
}

/// Consume one occurrence of the event `label` from an actor flowstate.
pub fn step_actor_flowstate(fs: &ActorFlowstate, label: &Event) -> Option<ActorFlowstate> {
    let comps: Vec<Comprehension> = fs.comps().into_iter().cloned().collect();
    for (i, c) in comps.iter().enumerate() {
        let mut fuel = 1 << 16;
        if let Some(residue) = extract(c, label, &mut fuel) {
            let out = comps[..i].iter().cloned().chain(residue).chain(comps[i + 1..].iter().cloned());
            return Some(step_flowstate_internal(&ActorFlowstate::from_comps(out)));
        }
    }
    None
}

/// Consume `label` from some actor of a network flowstate. Actor arrays
/// with numeric bounds are unrolled first.
pub fn step_flowstate(_tenv: &TypeEnv, fs: &ProcFlowstate, label: &Label) -> Option<ProcFlowstate> {
    let Label::Comm(ev) = label else {
        return Some(fs.clone());
    };
    let mut comps: Vec<ProcFlowstate> = Vec::new();
    for c in fs.components() {
        match c {
            ProcFlowstate::ActorArray { var, lo, hi, body } => match (lo.closed_value(), hi.closed_value()) {
                (Some(l), Some(h)) => {
                    comps.extend((l..=h).map(|k| ProcFlowstate::Actor(body.subst(var, &SizeExpr::Num(k)).simplify())))
                }
                _ => comps.push(c.clone()),
            },
            other => comps.push(other.clone()),
        }
    }
    for i in 0..comps.len() {
        if let ProcFlowstate::Actor(a) = &comps[i] {
            if let Some(next) = step_actor_flowstate(a, ev) {
                comps[i] = ProcFlowstate::Actor(next);
                return Some(ProcFlowstate::from_components(comps));
            }
        }
    }
    None
}

fn value_type(v: &Expr, heap: &Heap, checker: &mut Checker<'_>, depth: u32) -> Option<SimpleType> {
    match &v.kind {
        ExprKind::Loc(l) if depth > 0 => {
            let inner = heap.cells.get(l)?;
            Some(SimpleType::Ref(alloc::boxed::Box::new(value_type(inner, heap, checker, depth - 1)?)))
        }
        ExprKind::Loc(_) => None,
        _ => checker.infer(v).ok().map(|t| t.ty),
    }
}

/// Types of the reference cells, read off their contents.
pub fn heap_types(tenv: &TypeEnv, venv: &ValueEnv, heap: &Heap) -> HeapTypes {
    let mut checker = Checker::new(tenv.clone(), venv.clone());
    let mut out = HeapTypes::new();
    for (l, v) in &heap.cells {
        if let Some(t) = value_type(v, heap, &mut checker, 16) {
            out.insert(*l, t);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub step: usize,
    pub clause: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Clone, Debug)]
pub struct PreservationReport {
    pub sizes: Valuation,
    pub scheduler: String,
    pub steps: usize,
    pub outcome: String,
    pub violations: Vec<Violation>,
}

fn event_key(ev: &Event) -> RateKey {
    let index = match &ev.index {
        None => IndexKey::Whole,
        Some(i) => IndexKey::Single(i.normalized()),
    };
    RateKey { chan: ev.chan.clone(), dir: ev.dir, index }
}

fn summary(tenv: &TypeEnv, fs: &ProcFlowstate) -> RateSummary {
    proc_rate_summary(tenv, fs).map(|s| s.expand_numeric()).unwrap_or_default()
}

struct CoSim<'a> {
    tenv: &'a TypeEnv,
    venv: &'a ValueEnv,
    flows: Vec<ActorFlowstate>,
    violations: Vec<Violation>,
}

impl CoSim<'_> {
    fn violation(&mut self, step: usize, clause: &str, expected: String, actual: String) {
        self.violations.push(Violation { step, clause: clause.into(), expected, actual });
    }

    fn retype(&mut self, step: usize, cfg: &Configuration, a: usize) {
        let types = heap_types(self.tenv, self.venv, &cfg.heap);
        let mut checker = Checker::with_heap(self.tenv.clone(), self.venv.clone(), &types);
        match checker.infer(&cfg.actors[a]) {
            Ok(t) => {
                if flowstates_equivalent(self.tenv, &t.flow, &self.flows[a]) != Tri::True {
                    let expected = format!("{}", self.flows[a]);
                    self.violation(step, "typing", expected, format!("actor {} retypes to {}", a, t.flow));
                }
            }
            Err(d) => self.violation(step, "typing", format!("{}", self.flows[a]), format!("actor {} is ill-typed: {}", a, d)),
        }
    }

    fn observe(&mut self, i: usize, before: &Configuration, a: usize, label: &Label, after: &Configuration) {
        if let Label::Comm(ev) = label {
            match step_actor_flowstate(&self.flows[a], ev) {
                Some(next) => self.flows[a] = next,
                None => {
                    let expected = format!("{}", self.flows[a]);
                    self.violation(i, "step", expected, format!("actor {} performed {}", a, ev));
                }
            }
            let old = heap_flowstate(self.tenv, self.venv, &before.heap);
            let new = heap_flowstate(self.tenv, self.venv, &after.heap);
            let (old, new) = match (old, new) {
                (Ok(o), Ok(n)) => (summary(self.tenv, &o), summary(self.tenv, &n)),
                (Err(d), _) | (_, Err(d)) => {
                    self.violation(i, "heap", String::new(), d.to_string());
                    return;
                }
            };
            let (clause, lhs, mut rhs, extra) = match classify_event(self.tenv, ev) {
                Ok(Role::Producer) => ("1", new, old, ev.clone()),
                Ok(Role::Consumer) => ("2", old, new, ev.complement()),
                Err(d) => {
                    self.violation(i, "heap", String::new(), d.to_string());
                    return;
                }
            };
            rhs.add(event_key(&extra), SizeExpr::Num(1));
            if summaries_equivalent(self.tenv, &lhs, &rhs) != Tri::True {
                self.violation(i, clause, format!("{}", rhs), format!("{}", lhs));
            }
        }
        self.retype(i, after, a);
    }
}

/// Co-simulate the network and its flowstates under one scheduler.
pub fn check_preservation(
    net: &Network,
    sizes: &Valuation,
    scheduler: Scheduler,
    fault: Option<FaultPlan>,
) -> Result<PreservationReport, String> {
    let inst = instantiate(net, sizes).map_err(|e| e.to_string())?;
    let mut cfg = inst.config.clone();
    cfg.fault = fault;
    let mut sim = CoSim { tenv: &inst.tenv, venv: &inst.venv, flows: actor_flows(&inst), violations: Vec::new() };
    for a in 0..cfg.actors.len() {
        sim.retype(0, &cfg, a);
    }
    let result = run_observed(&cfg, scheduler, DEFAULT_STEP_LIMIT, &mut |i, before, a, label, after| {
        sim.observe(i + 1, before, a, label, after)
    });
    let steps = result.trace.len();
    let outcome = match &result.outcome {
        RunOutcome::Complete => {
            for (a, f) in sim.flows.clone().iter().enumerate() {
                if !step_flowstate_internal(f).comps().is_empty() {
                    sim.violation(steps, "residual", "eps".into(), format!("actor {} still owes {}", a, f));
                }
            }
            "complete".to_string()
        }
        RunOutcome::Deadlock(_) => "deadlock".to_string(),
        RunOutcome::Error(m) => format!("error: {}", m),
        RunOutcome::StepLimit => "step limit".to_string(),
    };
    Ok(PreservationReport {
        sizes: sizes.clone(),
        scheduler: scheduler.to_string(),
        steps,
        outcome,
        violations: sim.violations,
    })
}

#[derive(Clone, Debug)]
pub struct ProgressReport {
    pub sizes: Valuation,
    pub states: usize,
    pub finals: usize,
    pub stuck: Vec<DeadlockReport>,
    pub errors: Vec<String>,
    pub capacity_ok: bool,
    pub truncated: bool,
}

impl ProgressReport {
    pub fn holds(&self) -> bool {
        self.stuck.is_empty() && self.errors.is_empty() && !self.truncated && self.finals > 0
    }
}

pub const DEFAULT_MAX_STATES: usize = 2_000_000;

/// Explore all interleavings and collect stuck configurations.
pub fn check_progress_theorem(net: &Network, sizes: &Valuation, max_states: usize) -> Result<ProgressReport, String> {
    let inst = instantiate(net, sizes).map_err(|e| e.to_string())?;
    let rep = explore(&inst.config, max_states);
    Ok(ProgressReport {
        sizes: sizes.clone(),
        states: rep.states,
        finals: rep.finals.len(),
        stuck: rep.deadlocks.iter().map(DeadlockReport::of).collect(),
        errors: rep.errors,
        capacity_ok: rep.max_occupancy_ok,
        truncated: rep.truncated,
    })
}

/// Give every size parameter the value `n`, clipped to its bound.
pub fn uniform_sizes(net: &Network, n: u64) -> Option<Valuation> {
    let mut val = Valuation::new();
    for (name, k) in net.types.iter() {
        if let Kind::Size(b) = k {
            let v = match eval_size(b, &val).ok()? {
                SizeValue::Infinite => n,
                SizeValue::Finite(b) => n.min(b),
            };
            if v == 0 {
                return None;
            }
            val.insert(name.clone(), v);
        }
    }
    Some(val)
}

/// Capacities of every buffer once instantiated at `sizes`.
pub fn capacities(net: &Network, sizes: &Valuation) -> BTreeMap<Name, Option<u64>> {
    net.types
        .iter()
        .filter_map(|(n, k)| match k {
            Kind::Channel { limit, .. } | Kind::ChannelArray { limit, .. } => {
                Some((n.clone(), eval_size(limit, sizes).ok().and_then(SizeValue::finite)))
            }
            _ => None,
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Buffer;

    #[test]
    fn unroll_then_consume() {
        let c = Comprehension {
            event: Event::send("c"),
            iters: alloc::vec![Iter { var: Name::new("t"), lo: SizeExpr::Num(1), hi: SizeExpr::Num(2) }],
            guards: Vec::new(),
        };
        let next = step_actor_flowstate(&ActorFlowstate::Comp(c), &Event::send("c")).unwrap();
        assert_eq!(format!("{}", next), "c!<t in 2..2>");
    }

    #[test]
    fn guard_discharge() {
        use crate::ast::Guard;
        let g = |n| Comprehension {
            event: Event::send("a"),
            iters: Vec::new(),
            guards: alloc::vec![Guard::Divides { divisor: SizeExpr::Num(2), subject: SizeExpr::Num(n) }],
        };
        assert!(step_actor_flowstate(&ActorFlowstate::Comp(g(4)), &Event::send("a")).is_some());
        assert_eq!(step_flowstate_internal(&ActorFlowstate::Comp(g(3))), ActorFlowstate::Empty);
    }

    #[test]
    fn heap_records() {
        let mut tenv = TypeEnv::new();
        tenv.push(Name::new("c"), Kind::Channel { delay: false, limit: SizeExpr::Num(4) });
        tenv.push(Name::new("d"), Kind::Channel { delay: true, limit: SizeExpr::Num(2) });
        let venv = ValueEnv::new();
        let mut h = Heap::default();
        let mut c = Buffer::new(4);
        c.push(Expr::int(7));
        c.push(Expr::int(9));
        let mut d = Buffer::new(2);
        d.push(Expr::int(0));
        d.push(Expr::int(0));
        h.channels.insert(Name::new("c"), c);
        h.channels.insert(Name::new("d"), d);
        assert_eq!(format!("{}", heap_flowstate(&tenv, &venv, &h).unwrap()), "<2>c!");
        h.channels.get_mut(&Name::new("d")).unwrap().pop();
        assert_eq!(format!("{}", heap_flowstate(&tenv, &venv, &h).unwrap()), "<2>c! ; <1>d?");
    }
}
