//! Network-level checks: event classification, channel use sets,
//! determinism and progress.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::ast::{ActorFlowstate, Comprehension, Dir, Event, Iter, Kind, ProcFlowstate, TypeEnv};
use crate::diag::{Diagnostic, Diagnostics, Tri};
use crate::flowstate::{comprehension_rates, distribute_iterator, proc_rate_summary, RateKey, RateSummary};
use crate::kinding::size_leq;
use crate::name::Name;
use crate::size::SizeExpr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Producer,
    Consumer,
}

fn delay_of(tenv: &TypeEnv, chan: &Name) -> Option<bool> {
    match tenv.lookup(chan)? {
        Kind::Channel { delay, .. } | Kind::ChannelArray { delay, .. } => Some(*delay),
        _ => None,
    }
}

fn limit_of(tenv: &TypeEnv, chan: &Name) -> Option<SizeExpr> {
    match tenv.lookup(chan)? {
        Kind::Channel { limit, .. } | Kind::ChannelArray { limit, .. } => Some(limit.clone()),
        _ => None,
    }
}

/// Sends on undelayed channels and receives on delayed ones produce.
pub fn classify_event(tenv: &TypeEnv, a: &Event) -> Result<Role, Diagnostic> {
    let delay = delay_of(tenv, &a.chan)
        .ok_or_else(|| Diagnostic::new("FS Prog Prod", format!("`{}` is not a channel", a.chan)))?;
    Ok(match (a.dir, delay) {
        (Dir::Send, false) | (Dir::Recv, true) => Role::Producer,
        _ => Role::Consumer,
    })
}

pub fn complement_event(a: &Event) -> Event {
    a.complement()
}

/// One element of an inchans/outchans set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ChannelUse {
    Whole(Name),
    Elem(Name, u64),
    Range(Name, SizeExpr, SizeExpr),
}

impl ChannelUse {
    pub fn chan(&self) -> &Name {
        match self {
            ChannelUse::Whole(c) | ChannelUse::Elem(c, _) | ChannelUse::Range(c, ..) => c,
        }
    }
}

impl fmt::Display for ChannelUse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelUse::Whole(c) => write!(f, "{}", c),
            ChannelUse::Elem(c, k) => write!(f, "{}[{}]", c, k),
            ChannelUse::Range(c, lo, hi) if lo == hi => write!(f, "{}[{}]", c, lo),
            ChannelUse::Range(c, lo, hi) => write!(f, "{}[{}..{}]", c, lo, hi),
        }
    }
}

pub type ChannelUseSet = BTreeSet<ChannelUse>;

const EXPAND_LIMIT: u64 = 4096;

fn comprehension_uses(c: &Comprehension, dir: Dir, out: &mut ChannelUseSet) -> Result<(), Diagnostic> {
    if c.event.dir != dir {
        return Ok(());
    }
    let chan = c.event.chan.clone();
    let Some(ix) = &c.event.index else {
        out.insert(ChannelUse::Whole(chan));
        return Ok(());
    };
    if !c.guards.is_empty() {
        let rule = if dir == Dir::Recv { "inchans" } else { "outchans" };
        return Err(Diagnostic::new(
            rule,
            format!("array event {} carries guards, which channel-use sets do not support", c.event),
        ));
    }
    let ix = ix.normalized();
    if let Some(k) = ix.closed_value() {
        out.insert(ChannelUse::Elem(chan, k));
        return Ok(());
    }
    if let Some(it) = ix.as_var().and_then(|v| c.iters.iter().find(|it| &it.var == v)) {
        let (lo, hi) = (it.lo.normalized(), it.hi.normalized());
        match (lo.closed_value(), hi.closed_value()) {
            (Some(l), Some(h)) if h.saturating_sub(l) < EXPAND_LIMIT => {
                out.extend((l..=h).map(|k| ChannelUse::Elem(chan.clone(), k)));
            }
            _ => {
                out.insert(ChannelUse::Range(chan, lo, hi));
            }
        }
        return Ok(());
    }
    out.insert(ChannelUse::Range(chan, ix.clone(), ix));
    Ok(())
}

fn proc_uses(fs: &ProcFlowstate, dir: Dir, out: &mut ChannelUseSet) -> Result<(), Diagnostic> {
    match fs {
        ProcFlowstate::Empty => Ok(()),
        ProcFlowstate::Actor(a) => a.comps().into_iter().try_for_each(|c| comprehension_uses(c, dir, out)),
        ProcFlowstate::ActorArray { var, lo, hi, body } => {
            let it = Iter { var: var.clone(), lo: lo.clone(), hi: hi.clone() };
            let dist = distribute_iterator(body, &it);
            dist.comps().into_iter().try_for_each(|c| comprehension_uses(c, dir, out))
        }
        ProcFlowstate::Par(a, b) => {
            proc_uses(a, dir, out)?;
            proc_uses(b, dir, out)
        }
    }
}

pub fn inchans(fs: &ProcFlowstate) -> Result<ChannelUseSet, Diagnostic> {
    let mut out = ChannelUseSet::new();
    proc_uses(fs, Dir::Recv, &mut out)?;
    Ok(out)
}

pub fn outchans(fs: &ProcFlowstate) -> Result<ChannelUseSet, Diagnostic> {
    let mut out = ChannelUseSet::new();
    proc_uses(fs, Dir::Send, &mut out)?;
    Ok(out)
}

fn lt(env: &TypeEnv, a: &SizeExpr, b: &SizeExpr) -> bool {
    size_leq(env, &(a.clone() + SizeExpr::Num(1)), b) == Tri::True
}

/// Conservative overlap: false only when provably disjoint.
fn overlaps(env: &TypeEnv, a: &ChannelUse, b: &ChannelUse) -> bool {
    use ChannelUse::*;
    if a.chan() != b.chan() {
        return false;
    }
    let range = |u: &ChannelUse| match u {
        Elem(_, k) => Some((SizeExpr::Num(*k), SizeExpr::Num(*k))),
        Range(_, lo, hi) => Some((lo.clone(), hi.clone())),
        Whole(_) => None,
    };
    match (range(a), range(b)) {
        (Some((l1, h1)), Some((l2, h2))) => !(lt(env, &h1, &l2) || lt(env, &h2, &l1)),
        _ => true,
    }
}

fn disjoint(env: &TypeEnv, a: &ChannelUseSet, b: &ChannelUseSet, what: &str) -> Result<(), Diagnostic> {
    for x in a {
        for y in b {
            if overlaps(env, x, y) {
                return Err(Diagnostic::new(
                    "FS Det Par",
                    format!("two parallel components share the {} {} / {}", what, x, y),
                ));
            }
        }
    }
    Ok(())
}

fn det_array(env: &TypeEnv, var: &Name, lo: &SizeExpr, hi: &SizeExpr, body: &ActorFlowstate) -> Result<(), Diagnostic> {
    if size_leq(env, hi, lo) == Tri::True {
        return Ok(());
    }
    for c in body.comps() {
        let per_member = c.event.index.as_ref().map(|i| i.normalized().as_var() == Some(var)).unwrap_or(false);
        if !per_member {
            let what = if c.event.dir == Dir::Send { "output" } else { "input" };
            return Err(Diagnostic::new(
                "FS Det Par",
                format!("every member of the actor array over `{}` uses the {} {}", var, what, c.event),
            ));
        }
    }
    Ok(())
}

/// Single reader and single writer per channel (element).
pub fn check_determinism(tenv: &TypeEnv, fs: &ProcFlowstate) -> Result<(), Diagnostics> {
    let one = |d| alloc::vec![d];
    let comps = fs.components();
    let mut sets = Vec::new();
    for c in &comps {
        if let ProcFlowstate::ActorArray { var, lo, hi, body } = c {
            if lo.closed_value().is_none() || hi.closed_value().is_none() {
                det_array(tenv, var, lo, hi, body).map_err(one)?;
            } else {
                let members = unroll_array(var, lo, hi, body);
                for i in 0..members.len() {
                    for j in i + 1..members.len() {
                        let (x, y) = (&members[i], &members[j]);
                        disjoint(tenv, &inchans(x).map_err(one)?, &inchans(y).map_err(one)?, "input").map_err(one)?;
                        disjoint(tenv, &outchans(x).map_err(one)?, &outchans(y).map_err(one)?, "output").map_err(one)?;
                    }
                }
            }
        }
        sets.push((inchans(c).map_err(one)?, outchans(c).map_err(one)?));
    }
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            disjoint(tenv, &sets[i].0, &sets[j].0, "input").map_err(one)?;
            disjoint(tenv, &sets[i].1, &sets[j].1, "output").map_err(one)?;
        }
    }
    Ok(())
}

fn unroll_array(var: &Name, lo: &SizeExpr, hi: &SizeExpr, body: &ActorFlowstate) -> Vec<ProcFlowstate> {
    let (l, h) = (lo.closed_value().unwrap_or(1), hi.closed_value().unwrap_or(0));
    (l..=h).map(|k| ProcFlowstate::Actor(body.subst(var, &SizeExpr::Num(k)).simplify())).collect()
}

// Progress.

/// One derivation step: an actor moves a comprehension into the record
/// or discharges it against the record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleStep {
    pub actor: String,
    pub event: String,
    pub multiplicity: SizeExpr,
    pub role: Role,
}

pub type Schedule = Vec<ScheduleStep>;

struct Actor {
    name: String,
    comps: VecDeque<Comprehension>,
    group: Option<Iter>,
}

const INIT: usize = usize::MAX;

#[derive(Clone)]
struct Entry {
    key: RateKey,
    owner: usize,
    count: SizeExpr,
}

enum Blocked {
    Tokens(RateKey),
    Capacity(RateKey),
}

fn actors_of(fs: &ProcFlowstate) -> Vec<Actor> {
    let mut out = Vec::new();
    for (i, c) in fs.components().into_iter().enumerate() {
        match c {
            ProcFlowstate::Empty => {}
            ProcFlowstate::Actor(a) => out.push(Actor {
                name: format!("A{}", i),
                comps: a.comps().into_iter().cloned().collect(),
                group: None,
            }),
            ProcFlowstate::ActorArray { var, lo, hi, body } => match (lo.closed_value(), hi.closed_value()) {
                (Some(l), Some(h)) => {
                    for k in l..=h {
                        let b = body.subst(var, &SizeExpr::Num(k));
                        out.push(Actor {
                            name: format!("A{}[{}]", i, k),
                            comps: b.comps().into_iter().cloned().collect(),
                            group: None,
                        });
                    }
                }
                _ => out.push(Actor {
                    name: format!("A{}[{}]", i, var),
                    comps: body.comps().into_iter().cloned().collect(),
                    group: Some(Iter { var: var.clone(), lo: lo.clone(), hi: hi.clone() }),
                }),
            },
            ProcFlowstate::Par(..) => unreachable!("components are flattened"),
        }
    }
    out
}

fn rates_of(c: &Comprehension, group: &Option<Iter>) -> Result<RateSummary, Diagnostic> {
    let mut s = RateSummary::default();
    let cs: Vec<Comprehension> = match group {
        None => alloc::vec![c.clone()],
        Some(it) => distribute_iterator(&ActorFlowstate::Comp(c.clone()), it).comps().into_iter().cloned().collect(),
    };
    for c in &cs {
        for (k, m) in comprehension_rates(c)? {
            s.add(k, m);
        }
    }
    Ok(s.expand_numeric())
}

struct Search<'a> {
    env: &'a TypeEnv,
    record: Vec<Entry>,
}

impl Search<'_> {
    fn pending(&self, key: &RateKey) -> SizeExpr {
        self.record
            .iter()
            .filter(|e| &e.key == key)
            .fold(SizeExpr::Num(0), |acc, e| acc + e.count.clone())
            .normalized()
    }

    fn produce(&mut self, owner: usize, rates: &RateSummary) -> Result<(), Blocked> {
        let saved = self.record.clone();
        for (k, m) in &rates.rates {
            match self.record.iter_mut().find(|e| &e.key == k && e.owner == owner) {
                Some(e) => e.count = (e.count.clone() + m.clone()).normalized(),
                None => self.record.push(Entry { key: k.clone(), owner, count: m.clone() }),
            }
            let limit = limit_of(self.env, &k.chan).unwrap_or(SizeExpr::Inf);
            if size_leq(self.env, &self.pending(k), &limit) != Tri::True {
                self.record = saved;
                return Err(Blocked::Capacity(k.clone()));
            }
        }
        Ok(())
    }

    fn consume(&mut self, owner: usize, rates: &RateSummary) -> Result<(), Blocked> {
        let saved = self.record.clone();
        for (k, m) in &rates.rates {
            let want = k.complement();
            if !self.take(owner, &want, m.clone()) {
                self.record = saved;
                return Err(Blocked::Tokens(want));
            }
        }
        Ok(())
    }

    fn take(&mut self, owner: usize, key: &RateKey, m: SizeExpr) -> bool {
        let idx: Vec<usize> =
            (0..self.record.len()).filter(|&i| &self.record[i].key == key && self.record[i].owner != owner).collect();
        let total = idx.iter().fold(SizeExpr::Num(0), |acc, &i| acc + self.record[i].count.clone());
        if size_leq(self.env, &m, &total) != Tri::True {
            return false;
        }
        let mut rem = m.normalized();
        for i in idx {
            if rem == SizeExpr::Num(0) {
                break;
            }
            let r = self.record[i].count.clone();
            if size_leq(self.env, &rem, &r) == Tri::True {
                self.record[i].count = (r - rem).normalized();
                rem = SizeExpr::Num(0);
            } else if size_leq(self.env, &r, &rem) == Tri::True {
                rem = (rem - r).normalized();
                self.record[i].count = SizeExpr::Num(0);
            } else {
                return false;
            }
        }
        self.record.retain(|e| e.count != SizeExpr::Num(0));
        size_leq(self.env, &rem, &SizeExpr::Num(0)) == Tri::True
    }
}

/// Search for a derivation that drives every actor to ε, starting from
/// the communication record `initial`. Returns the witnessing order.
pub fn check_progress(tenv: &TypeEnv, fs: &ProcFlowstate, initial: &ProcFlowstate) -> Result<Schedule, Diagnostics> {
    let one = |d| alloc::vec![d];
    let mut actors = actors_of(fs);
    let mut search = Search { env: tenv, record: Vec::new() };
    let init = proc_rate_summary(tenv, initial).map_err(one)?.expand_numeric();
    for (k, m) in init.rates {
        search.record.push(Entry { key: k, owner: INIT, count: m });
    }
    let mut schedule = Schedule::new();
    loop {
        let mut progressed = false;
        let mut blocked: BTreeMap<usize, Blocked> = BTreeMap::new();
        for a in 0..actors.len() {
            while let Some(c) = actors[a].comps.front().cloned() {
                let rates = rates_of(&c, &actors[a].group).map_err(one)?;
                let role = classify_event(tenv, &c.event).map_err(one)?;
                let r = match role {
                    Role::Producer => search.produce(a, &rates),
                    Role::Consumer => search.consume(a, &rates),
                };
                match r {
                    Ok(()) => {
                        actors[a].comps.pop_front();
                        progressed = true;
                        let multiplicity = rates
                            .rates
                            .values()
                            .fold(SizeExpr::Num(0), |acc, m| acc + m.clone())
                            .normalized();
                        if multiplicity != SizeExpr::Num(0) {
                            schedule.push(ScheduleStep {
                                actor: actors[a].name.clone(),
                                event: format!("{}", c),
                                multiplicity,
                                role,
                            });
                        }
                    }
                    Err(b) => {
                        blocked.insert(a, b);
                        break;
                    }
                }
            }
        }
        if actors.iter().all(|a| a.comps.is_empty()) {
            return Ok(schedule);
        }
        if !progressed {
            return Err(one(explain(tenv, &actors, &blocked)));
        }
    }
}

/// Actors that may still perform the complement of `key`'s events.
fn peers(actors: &[Actor], me: usize, chan: &Name, dir: Dir) -> Vec<usize> {
    (0..actors.len())
        .filter(|&j| j != me && actors[j].comps.iter().any(|c| &c.event.chan == chan && c.event.dir == dir))
        .collect()
}

fn explain(tenv: &TypeEnv, actors: &[Actor], blocked: &BTreeMap<usize, Blocked>) -> Diagnostic {
    let mut edges: BTreeMap<usize, Vec<(usize, Name)>> = BTreeMap::new();
    for (&a, b) in blocked {
        let (chan, dir) = match b {
            Blocked::Tokens(k) => (&k.chan, k.dir),
            Blocked::Capacity(k) => (&k.chan, k.dir.flip()),
        };
        edges.insert(a, peers(actors, a, chan, dir).into_iter().map(|p| (p, chan.clone())).collect());
    }
    if let Some(cycle) = find_cycle(&edges) {
        let parts: Vec<String> = cycle
            .iter()
            .map(|(a, b, c)| format!("{} waits on `{}` for {}", actors[*a].name, c, actors[*b].name))
            .collect();
        if cycle.iter().any(|(a, _, _)| matches!(blocked.get(a), Some(Blocked::Capacity(_)))) {
            return Diagnostic::new("FS Prog Capacity", format!("causal cycle through a full buffer: {}", parts.join("; ")));
        }
        return Diagnostic::new("FS Prog Cons", format!("causal cycle: {}", parts.join("; ")));
    }
    let (&a, b) = blocked.iter().next().expect("a stuck search has a blocked actor");
    let head = actors[a].comps.front().map(|c| format!("{}", c)).unwrap_or_default();
    match b {
        Blocked::Capacity(k) => Diagnostic::new(
            "FS Prog Capacity",
            format!(
                "{} cannot perform {}: pending {} exceeds the limit {} of `{}`",
                actors[a].name,
                head,
                k,
                limit_of(tenv, &k.chan).unwrap_or(SizeExpr::Inf),
                k.chan
            ),
        ),
        Blocked::Tokens(k) => Diagnostic::new(
            "FS Prog Cons",
            format!("{} cannot perform {}: not enough {} is ever produced", actors[a].name, head, k),
        ),
    }
}

fn find_cycle(edges: &BTreeMap<usize, Vec<(usize, Name)>>) -> Option<Vec<(usize, usize, Name)>> {
    fn dfs(
        n: usize,
        edges: &BTreeMap<usize, Vec<(usize, Name)>>,
        path: &mut Vec<(usize, usize, Name)>,
        on_path: &mut Vec<usize>,
        done: &mut BTreeSet<usize>,
    ) -> Option<Vec<(usize, usize, Name)>> {
        on_path.push(n);
        for (m, c) in edges.get(&n).map(|v| v.as_slice()).unwrap_or(&[]) {
            path.push((n, *m, c.clone()));
            if let Some(pos) = on_path.iter().position(|x| x == m) {
                return Some(path[pos..].to_vec());
            }
            if !done.contains(m) {
                if let Some(c) = dfs(*m, edges, path, on_path, done) {
                    return Some(c);
                }
            }
            path.pop();
        }
        on_path.pop();
        done.insert(n);
        None
    }
    let mut done = BTreeSet::new();
    for &n in edges.keys() {
        if !done.contains(&n) {
            let mut path = Vec::new();
            let mut on_path = Vec::new();
            if let Some(c) = dfs(n, edges, &mut path, &mut on_path, &mut done) {
                return Some(c);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(delays: &[(&str, bool)], limit: SizeExpr) -> TypeEnv {
        let mut g = TypeEnv::new();
        g.push(Name::new("n"), Kind::Size(SizeExpr::Inf));
        for (c, d) in delays {
            g.push(Name::new(c), Kind::Channel { delay: *d, limit: limit.clone() });
        }
        g
    }

    fn rep(ev: Event) -> ActorFlowstate {
        ActorFlowstate::Comp(Comprehension::repeat(ev, SizeExpr::var("n")))
    }

    fn actor(parts: Vec<ActorFlowstate>) -> ProcFlowstate {
        ProcFlowstate::Actor(parts.into_iter().fold(ActorFlowstate::Empty, ActorFlowstate::then))
    }

    #[test]
    fn classification_and_complement() {
        let g = env(&[("c", false), ("d", true)], SizeExpr::Num(1));
        assert_eq!(classify_event(&g, &Event::send("c")).unwrap(), Role::Producer);
        assert_eq!(classify_event(&g, &Event::recv("d")).unwrap(), Role::Producer);
        assert_eq!(classify_event(&g, &Event::send("d")).unwrap(), Role::Consumer);
        assert_eq!(classify_event(&g, &Event::recv("c")).unwrap(), Role::Consumer);
        let e = Event::recv("c").at(SizeExpr::Num(2));
        assert_eq!(complement_event(&complement_event(&e)), e);
    }

    #[test]
    fn pipeline_schedules_producer_first() {
        let g = env(&[("c", false)], SizeExpr::var("n"));
        let fs = ProcFlowstate::par(actor(alloc::vec![rep(Event::recv("c"))]), actor(alloc::vec![rep(Event::send("c"))]));
        let s = check_progress(&g, &fs, &ProcFlowstate::Empty).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].actor, "A1");
        assert_eq!(s[0].role, Role::Producer);
    }

    #[test]
    fn cycle_needs_delay() {
        let a = actor(alloc::vec![rep(Event::recv("c")), rep(Event::send("d"))]);
        let b = actor(alloc::vec![rep(Event::recv("d")), rep(Event::send("c"))]);
        let fs = ProcFlowstate::par(a, b);
        let g = env(&[("c", false), ("d", false)], SizeExpr::var("n"));
        let err = check_progress(&g, &fs, &ProcFlowstate::Empty).unwrap_err();
        assert!(err[0].message.contains("causal cycle"), "{}", err[0]);
        let g = env(&[("c", true), ("d", false)], SizeExpr::var("n"));
        assert!(check_progress(&g, &fs, &ProcFlowstate::Empty).is_ok());
    }

    #[test]
    fn capacity_premise() {
        let a = actor(alloc::vec![rep(Event::send("c")), rep(Event::recv("d"))]);
        let b = actor(alloc::vec![rep(Event::send("d")), rep(Event::recv("c"))]);
        let fs = ProcFlowstate::par(a, b);
        let g = env(&[("c", false), ("d", false)], SizeExpr::var("n"));
        assert!(check_progress(&g, &fs, &ProcFlowstate::Empty).is_ok());
        let g = env(&[("c", false), ("d", false)], SizeExpr::Num(1));
        assert!(check_progress(&g, &fs, &ProcFlowstate::Empty).is_err());
    }

    #[test]
    fn determinism_sets() {
        let g = env(&[("c", false)], SizeExpr::Num(1));
        let send = actor(alloc::vec![ActorFlowstate::Comp(Comprehension::single(Event::send("c")))]);
        let recv = actor(alloc::vec![ActorFlowstate::Comp(Comprehension::single(Event::recv("c")))]);
        assert!(check_determinism(&g, &ProcFlowstate::par(send.clone(), recv.clone())).is_ok());
        let bad = ProcFlowstate::par(send.clone(), ProcFlowstate::par(send, recv));
        assert_eq!(check_determinism(&g, &bad).unwrap_err()[0].rule, "FS Det Par");
    }

    #[test]
    fn array_use_sets() {
        let it = |hi| Iter { var: Name::new("t0"), lo: SizeExpr::Num(1), hi };
        let comp = |hi| Comprehension {
            event: Event::recv("i").at(SizeExpr::var("t0")),
            iters: alloc::vec![it(hi)],
            guards: Vec::new(),
        };
        let fs = |hi| ProcFlowstate::Actor(ActorFlowstate::Comp(comp(hi)));
        let numeric: Vec<String> = inchans(&fs(SizeExpr::Num(3))).unwrap().iter().map(|u| format!("{}", u)).collect();
        assert_eq!(numeric, ["i[1]", "i[2]", "i[3]"]);
        let symbolic: Vec<String> = inchans(&fs(SizeExpr::var("s"))).unwrap().iter().map(|u| format!("{}", u)).collect();
        assert_eq!(symbolic, ["i[1..s]"]);
        assert!(outchans(&fs(SizeExpr::var("s"))).unwrap().is_empty());
    }
}
