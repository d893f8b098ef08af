//! Flowstate formation, substitution, guard folding and rate summaries.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::{
    ActorFlowstate, Comprehension, Dir, Event, Guard, Iter, Kind, ProcFlowstate, ProcType, SimpleType, TypeEnv,
    ValueType,
};
use crate::diag::{Diagnostic, Diagnostics, Tri};
use crate::kinding::{check_size, size_leq};
use crate::name::Name;
use crate::size::{eval_size, SizeExpr, SizeValue, Valuation};

/// A name based on `base` that is not in `avoid`.
pub fn fresh_name(base: &Name, avoid: &BTreeSet<Name>) -> Name {
    let stem = base.as_str().trim_end_matches(|c: char| c.is_ascii_digit());
    let stem = if stem.is_empty() || stem == "_" { "t" } else { stem };
    (1u32..)
        .map(|i| Name::new(&format!("{}{}", stem, i)))
        .find(|n| !avoid.contains(n))
        .expect("unbounded supply of names")
}

impl Event {
    pub fn map_sizes(&self, f: &mut dyn FnMut(&SizeExpr) -> SizeExpr) -> Event {
        Event { dir: self.dir, chan: self.chan.clone(), index: self.index.as_ref().map(|i| f(i)) }
    }
}

impl Guard {
    pub fn map_sizes(&self, f: &mut dyn FnMut(&SizeExpr) -> SizeExpr) -> Guard {
        match self {
            Guard::Divides { divisor, subject } => Guard::Divides { divisor: f(divisor), subject: f(subject) },
            Guard::AtMost { subject, bound } => Guard::AtMost { subject: f(subject), bound: f(bound) },
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Guard::Divides { divisor: a, subject: b } | Guard::AtMost { subject: a, bound: b } => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Truth value when both operands are closed numbers.
    pub fn decide(&self) -> Option<bool> {
        match self {
            Guard::Divides { divisor, subject } => {
                let (d, s) = (divisor.closed_value()?, subject.closed_value()?);
                Some(if d == 0 { s == 0 } else { s % d == 0 })
            }
            Guard::AtMost { subject, bound } => {
                let s = subject.closed_value()?;
                match eval_size(bound, &Valuation::new()).ok()? {
                    SizeValue::Infinite => Some(true),
                    SizeValue::Finite(b) => Some(s <= b),
                }
            }
        }
    }
}

impl Comprehension {
    pub fn binders(&self) -> BTreeSet<Name> {
        self.iters.iter().map(|i| i.var.clone()).collect()
    }

    fn body_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        if let Some(i) = &self.event.index {
            i.collect_vars(&mut out);
        }
        for g in &self.guards {
            g.collect_vars(&mut out);
        }
        out
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let binders = self.binders();
        let mut out: BTreeSet<Name> = self.body_vars().difference(&binders).cloned().collect();
        for it in &self.iters {
            it.lo.collect_vars(&mut out);
            it.hi.collect_vars(&mut out);
        }
        out
    }

    fn all_vars(&self) -> BTreeSet<Name> {
        let mut out = self.free_vars();
        out.extend(self.binders());
        out.extend(self.body_vars());
        out
    }

    pub fn rename_binder(&self, old: &Name, new: &Name) -> Comprehension {
        let repl = SizeExpr::Var(new.clone());
        let mut r = |e: &SizeExpr| e.subst(old, &repl);
        Comprehension {
            event: self.event.map_sizes(&mut r),
            iters: self
                .iters
                .iter()
                .map(|it| Iter {
                    var: if &it.var == old { new.clone() } else { it.var.clone() },
                    lo: it.lo.clone(),
                    hi: it.hi.clone(),
                })
                .collect(),
            guards: self.guards.iter().map(|g| g.map_sizes(&mut r)).collect(),
        }
    }

    /// Rename binders that occur in `danger` to fresh names.
    fn freshen(&self, danger: &BTreeSet<Name>) -> Comprehension {
        let mut c = self.clone();
        for b in self.binders().intersection(danger) {
            let mut avoid = c.all_vars();
            avoid.extend(danger.iter().cloned());
            let nb = fresh_name(b, &avoid);
            c = c.rename_binder(b, &nb);
        }
        c
    }

    pub fn subst(&self, var: &Name, repl: &SizeExpr) -> Comprehension {
        let iters: Vec<Iter> = self
            .iters
            .iter()
            .map(|it| Iter { var: it.var.clone(), lo: it.lo.subst(var, repl), hi: it.hi.subst(var, repl) })
            .collect();
        if self.binders().contains(var) {
            return Comprehension { iters, ..self.clone() };
        }
        let mut danger = repl.free_vars();
        danger.insert(var.clone());
        let c = Comprehension { iters, ..self.clone() }.freshen(&danger);
        let mut r = |e: &SizeExpr| e.subst(var, repl);
        Comprehension {
            event: c.event.map_sizes(&mut r),
            iters: c.iters.clone(),
            guards: c.guards.iter().map(|g| g.map_sizes(&mut r)).collect(),
        }
    }
}

impl ActorFlowstate {
    pub fn map_comps(&self, f: &mut dyn FnMut(&Comprehension) -> ActorFlowstate) -> ActorFlowstate {
        match self {
            ActorFlowstate::Empty => ActorFlowstate::Empty,
            ActorFlowstate::Comp(c) => f(c),
            ActorFlowstate::Seq(a, b) => ActorFlowstate::seq(a.map_comps(f), b.map_comps(f)),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        for c in self.comps() {
            out.extend(c.free_vars());
        }
        out
    }

    pub fn subst(&self, var: &Name, repl: &SizeExpr) -> ActorFlowstate {
        self.map_comps(&mut |c| ActorFlowstate::Comp(c.subst(var, repl)))
    }

    /// Drop empty components of sequences.
    pub fn simplify(&self) -> ActorFlowstate {
        match self {
            ActorFlowstate::Seq(a, b) => a.simplify().then(b.simplify()),
            other => other.clone(),
        }
    }
}

impl ProcFlowstate {
    pub fn free_vars(&self) -> BTreeSet<Name> {
        match self {
            ProcFlowstate::Empty => BTreeSet::new(),
            ProcFlowstate::Actor(a) => a.free_vars(),
            ProcFlowstate::ActorArray { var, lo, hi, body } => {
                let mut out = body.free_vars();
                out.remove(var);
                lo.collect_vars(&mut out);
                hi.collect_vars(&mut out);
                out
            }
            ProcFlowstate::Par(a, b) => {
                let mut out = a.free_vars();
                out.extend(b.free_vars());
                out
            }
        }
    }

    pub fn subst(&self, v: &Name, repl: &SizeExpr) -> ProcFlowstate {
        match self {
            ProcFlowstate::Empty => ProcFlowstate::Empty,
            ProcFlowstate::Actor(a) => ProcFlowstate::Actor(a.subst(v, repl)),
            ProcFlowstate::ActorArray { var, lo, hi, body } => {
                let (lo, hi) = (lo.subst(v, repl), hi.subst(v, repl));
                if var == v {
                    return ProcFlowstate::ActorArray { var: var.clone(), lo, hi, body: body.clone() };
                }
                let (var, body) = if repl.mentions(var) {
                    let mut avoid = body.free_vars();
                    avoid.extend(repl.free_vars());
                    avoid.insert(v.clone());
                    let nv = fresh_name(var, &avoid);
                    (nv.clone(), body.subst(var, &SizeExpr::Var(nv)))
                } else {
                    (var.clone(), body.clone())
                };
                ProcFlowstate::ActorArray { var, lo, hi, body: body.subst(v, repl) }
            }
            ProcFlowstate::Par(a, b) => ProcFlowstate::par(a.subst(v, repl), b.subst(v, repl)),
        }
    }
}

impl SimpleType {
    pub fn subst_size(&self, v: &Name, repl: &SizeExpr) -> SimpleType {
        match self {
            SimpleType::Boolean | SimpleType::Integer => self.clone(),
            SimpleType::Size(e) => SimpleType::Size(e.subst(v, repl)),
            SimpleType::Index(e) => SimpleType::Index(e.subst(v, repl)),
            SimpleType::Ref(t) => SimpleType::Ref(alloc::boxed::Box::new(t.subst_size(v, repl))),
            SimpleType::Proc(p) => SimpleType::Proc(alloc::boxed::Box::new(ProcType {
                params: p.params.iter().map(|t| t.subst_size(v, repl)).collect(),
                latent: p.latent.subst(v, repl),
                rest: p.rest.subst(v, repl),
                result: p.result.subst_size(v, repl),
            })),
        }
    }

    pub fn free_size_vars(&self) -> BTreeSet<Name> {
        match self {
            SimpleType::Boolean | SimpleType::Integer => BTreeSet::new(),
            SimpleType::Size(e) | SimpleType::Index(e) => e.free_vars(),
            SimpleType::Ref(t) => t.free_size_vars(),
            SimpleType::Proc(p) => {
                let mut out = p.result.free_size_vars();
                for t in &p.params {
                    out.extend(t.free_size_vars());
                }
                out.extend(p.latent.free_vars());
                out.extend(p.rest.free_vars());
                out
            }
        }
    }

    /// Structural equality after normalizing every size expression.
    pub fn same_as(&self, other: &SimpleType, env: &TypeEnv) -> bool {
        match (self, other) {
            (SimpleType::Boolean, SimpleType::Boolean) | (SimpleType::Integer, SimpleType::Integer) => true,
            (SimpleType::Size(a), SimpleType::Size(b)) | (SimpleType::Index(a), SimpleType::Index(b)) => {
                a.normalized() == b.normalized()
            }
            (SimpleType::Ref(a), SimpleType::Ref(b)) => a.same_as(b, env),
            (SimpleType::Proc(p), SimpleType::Proc(q)) => {
                p.params.len() == q.params.len()
                    && p.params.iter().zip(&q.params).all(|(a, b)| a.same_as(b, env))
                    && p.result.same_as(&q.result, env)
                    && flowstates_equivalent(env, &p.latent, &q.latent) == Tri::True
                    && flowstates_equivalent(env, &p.rest, &q.rest) == Tri::True
            }
            _ => false,
        }
    }
}

impl Kind {
    pub fn subst_size(&self, v: &Name, repl: &SizeExpr) -> Kind {
        match self {
            Kind::Type => Kind::Type,
            Kind::Size(b) => Kind::Size(b.subst(v, repl)),
            Kind::Channel { delay, limit } => Kind::Channel { delay: *delay, limit: limit.subst(v, repl) },
            Kind::ChannelArray { bound, delay, limit } => Kind::ChannelArray {
                bound: bound.subst(v, repl),
                delay: *delay,
                limit: limit.subst(v, repl),
            },
        }
    }
}

impl ValueType {
    pub fn subst_size(&self, v: &Name, repl: &SizeExpr) -> ValueType {
        match self {
            ValueType::Simple(t) => ValueType::Simple(t.subst_size(v, repl)),
            ValueType::Chan { polarity, channel, payload } => ValueType::Chan {
                polarity: *polarity,
                channel: channel.clone(),
                payload: payload.subst_size(v, repl),
            },
            ValueType::ChanArray { polarity, channel, payload, bound } => ValueType::ChanArray {
                polarity: *polarity,
                channel: channel.clone(),
                payload: payload.subst_size(v, repl),
                bound: bound.subst(v, repl),
            },
        }
    }
}

/// `<fs | it>`: put every comprehension of `fs` under one more iterator.
pub fn distribute_iterator(fs: &ActorFlowstate, it: &Iter) -> ActorFlowstate {
    let mut danger = it.lo.free_vars();
    it.hi.collect_vars(&mut danger);
    danger.insert(it.var.clone());
    fs.map_comps(&mut |c| {
        let mut c = c.freshen(&danger);
        c.iters.push(it.clone());
        ActorFlowstate::Comp(c)
    })
}

/// `<fs | g>`: add a guard to every comprehension of `fs`.
pub fn distribute_guard(fs: &ActorFlowstate, g: &Guard) -> ActorFlowstate {
    let mut danger = BTreeSet::new();
    g.collect_vars(&mut danger);
    fs.map_comps(&mut |c| {
        let mut c = c.freshen(&danger);
        c.guards.push(g.clone());
        ActorFlowstate::Comp(c)
    })
}

// Formation.

fn event_rule(ev: &Event) -> &'static str {
    match (ev.dir, ev.index.is_some()) {
        (Dir::Send, false) => "FS Send",
        (Dir::Recv, false) => "FS Recv",
        (Dir::Send, true) => "FS Array Send",
        (Dir::Recv, true) => "FS Array Recv",
    }
}

pub fn check_event(env: &TypeEnv, ev: &Event) -> Result<(), Diagnostic> {
    let rule = event_rule(ev);
    match (env.lookup(&ev.chan), &ev.index) {
        (None, _) => Err(Diagnostic::new(rule, format!("unbound channel `{}`", ev.chan))),
        (Some(Kind::Channel { .. }), None) => Ok(()),
        (Some(Kind::ChannelArray { bound, .. }), Some(i)) => {
            check_size(env, i).map_err(|d| Diagnostic { rule, ..d })?;
            if size_leq(env, &SizeExpr::Num(1), i) != Tri::True {
                return Err(Diagnostic::new(rule, format!("index {} of `{}` may be below 1", i, ev.chan)));
            }
            match size_leq(env, i, bound) {
                Tri::True => Ok(()),
                Tri::False => Err(Diagnostic::new(
                    rule,
                    format!("index {} is out of the bound {} of `{}`", i, bound, ev.chan),
                )),
                Tri::Unknown => Err(Diagnostic::new(
                    rule,
                    format!("cannot show index {} is within the bound {} of `{}`", i, bound, ev.chan),
                )),
            }
        }
        (Some(Kind::Channel { .. }), Some(_)) => {
            Err(Diagnostic::new(rule, format!("`{}` is a single channel and cannot be indexed", ev.chan)))
        }
        (Some(Kind::ChannelArray { .. }), None) => {
            Err(Diagnostic::new(rule, format!("`{}` is a channel array and needs an index", ev.chan)))
        }
        (Some(k), _) => Err(Diagnostic::new(rule, format!("`{}` has kind {}, not a channel", ev.chan, k))),
    }
}

fn check_binder(env: &TypeEnv, var: &Name, rule: &'static str) -> Result<(), Diagnostic> {
    if env.contains(var) {
        Err(Diagnostic::new(rule, format!("binder `{}` shadows a name already in scope", var)))
    } else {
        Ok(())
    }
}

fn check_range(env: &TypeEnv, lo: &SizeExpr, hi: &SizeExpr, rule: &'static str) -> Result<(), Diagnostic> {
    check_size(env, lo).map_err(|d| Diagnostic { rule, ..d })?;
    check_size(env, hi).map_err(|d| Diagnostic { rule, ..d })?;
    if size_leq(env, &SizeExpr::Num(1), lo) != Tri::True {
        return Err(Diagnostic::new(rule, format!("lower bound {} must be at least 1", lo)));
    }
    Ok(())
}

fn check_subject(env: &TypeEnv, e: &SizeExpr, rule: &'static str) -> Result<(), Diagnostic> {
    match e {
        SizeExpr::Num(_) => Ok(()),
        SizeExpr::Var(v) => match env.lookup(v) {
            Some(Kind::Size(_)) => Ok(()),
            _ => Err(Diagnostic::new(rule, format!("guard subject `{}` is not a size variable", v))),
        },
        other => Err(Diagnostic::new(rule, format!("guard subject {} must be a variable or a number", other))),
    }
}

pub fn check_comprehension(env: &TypeEnv, c: &Comprehension) -> Result<(), Diagnostic> {
    let mut inner = env.clone();
    let mut seen = BTreeSet::new();
    for it in &c.iters {
        check_binder(env, &it.var, "FS Comp")?;
        if !seen.insert(it.var.clone()) {
            return Err(Diagnostic::new("FS Comp", format!("iterator `{}` is bound twice", it.var)));
        }
        check_range(env, &it.lo, &it.hi, "FS Iter")?;
        inner.push(it.var.clone(), Kind::Size(it.hi.clone()));
    }
    check_event(&inner, &c.event)?;
    for g in &c.guards {
        match g {
            Guard::Divides { divisor, subject } => {
                check_size(&inner, divisor).map_err(|d| Diagnostic { rule: "FS Gd Div", ..d })?;
                check_subject(&inner, subject, "FS Gd Div")?;
            }
            Guard::AtMost { subject, bound } => {
                check_size(&inner, bound).map_err(|d| Diagnostic { rule: "FS Gd Bnd", ..d })?;
                check_subject(&inner, subject, "FS Gd Bnd")?;
            }
        }
    }
    Ok(())
}

pub fn check_flowstate(env: &TypeEnv, fs: &ActorFlowstate) -> Result<(), Diagnostics> {
    let errs: Vec<Diagnostic> = fs.comps().into_iter().filter_map(|c| check_comprehension(env, c).err()).collect();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

pub fn check_proc_flowstate(env: &TypeEnv, fs: &ProcFlowstate) -> Result<(), Diagnostics> {
    match fs {
        ProcFlowstate::Empty => Ok(()),
        ProcFlowstate::Actor(a) => check_flowstate(env, a),
        ProcFlowstate::ActorArray { var, lo, hi, body } => {
            check_binder(env, var, "Proc Comp").map_err(|d| alloc::vec![d])?;
            check_range(env, lo, hi, "Proc Comp").map_err(|d| alloc::vec![d])?;
            let mut inner = env.clone();
            inner.push(var.clone(), Kind::Size(hi.clone()));
            check_flowstate(&inner, body)
        }
        ProcFlowstate::Par(a, b) => {
            let mut errs = check_proc_flowstate(env, a).err().unwrap_or_default();
            errs.extend(check_proc_flowstate(env, b).err().unwrap_or_default());
            if errs.is_empty() {
                Ok(())
            } else {
                Err(errs)
            }
        }
    }
}

// Guard folding.

fn lcm(a: u64, b: u64) -> Option<u64> {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

fn fold_error(msg: alloc::string::String) -> Diagnostic {
    Diagnostic::new("FS Comp", msg)
}

/// Fold guards into iterator bounds. `None` means the comprehension is
/// empty because a closed guard is false.
pub fn fold_comprehension(c: &Comprehension) -> Result<Option<Comprehension>, Diagnostic> {
    let mut guards = Vec::new();
    for g in &c.guards {
        match g.decide() {
            Some(true) => {}
            Some(false) => return Ok(None),
            None => guards.push(g.clone()),
        }
    }
    let binders = c.binders();
    let index_vars = c.event.index.as_ref().map(|i| i.free_vars()).unwrap_or_default();
    let mut iters = c.iters.clone();
    for it in iters.iter_mut() {
        let mine: Vec<Guard> = guards
            .iter()
            .filter(|g| g.subject().as_var() == Some(&it.var))
            .cloned()
            .collect();
        if mine.is_empty() {
            continue;
        }
        if index_vars.contains(&it.var) {
            return Err(fold_error(format!("guard on `{}`, which indexes the channel array `{}`", it.var, c.event.chan)));
        }
        let mut foldable = Vec::new();
        for g in &mine {
            let mut vs = BTreeSet::new();
            match g {
                Guard::Divides { divisor, .. } => divisor.collect_vars(&mut vs),
                Guard::AtMost { bound, .. } => bound.collect_vars(&mut vs),
            }
            if vs.is_disjoint(&binders) {
                foldable.push(g.clone());
            }
        }
        guards.retain(|g| !foldable.contains(g));
        for g in &foldable {
            if let Guard::AtMost { bound, .. } = g {
                it.hi = SizeExpr::minimum(bound.clone(), it.hi.clone()).normalized();
            }
        }
        let divisors: Vec<SizeExpr> = foldable
            .iter()
            .filter_map(|g| match g {
                Guard::Divides { divisor, .. } => Some(divisor.normalized()),
                _ => None,
            })
            .collect();
        if divisors.is_empty() {
            continue;
        }
        let d = combine_divisors(&divisors)
            .ok_or_else(|| fold_error(format!("cannot combine divisibility guards on `{}`", it.var)))?;
        let lo = it.lo.normalized();
        if lo == SizeExpr::Num(1) {
            it.hi = if d == SizeExpr::Num(0) { SizeExpr::Num(0) } else { (it.hi.clone() / d).normalized() };
        } else if let (Some(l), Some(h), Some(k)) = (lo.as_num(), it.hi.closed_value(), d.as_num()) {
            let count = (l..=h).filter(|x| if k == 0 { *x == 0 } else { x % k == 0 }).count() as u64;
            it.lo = SizeExpr::Num(1);
            it.hi = SizeExpr::Num(count);
        } else {
            return Err(fold_error(format!(
                "divisibility guard on `{}` needs lower bound 1 or numeric bounds (got {}..{})",
                it.var, it.lo, it.hi
            )));
        }
    }
    Ok(Some(Comprehension { event: c.event.clone(), iters, guards }))
}

fn combine_divisors(ds: &[SizeExpr]) -> Option<SizeExpr> {
    if ds.iter().all(|d| d.as_num().is_some()) {
        let mut acc = 1u64;
        for d in ds {
            acc = lcm(acc, d.as_num()?)?;
        }
        return Some(SizeExpr::Num(acc));
    }
    let mut uniq: Vec<&SizeExpr> = ds.iter().filter(|d| **d != SizeExpr::Num(1)).collect();
    uniq.sort();
    uniq.dedup();
    match uniq.as_slice() {
        [one] => Some((*one).clone()),
        _ => None,
    }
}

pub fn fold_guards(fs: &ActorFlowstate) -> Result<ActorFlowstate, Diagnostic> {
    let mut out = ActorFlowstate::Empty;
    for c in fs.comps() {
        if let Some(f) = fold_comprehension(c)? {
            out = out.then(ActorFlowstate::Comp(f));
        }
    }
    Ok(out)
}

// Rate summaries.

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexKey {
    Whole,
    Single(SizeExpr),
    Range(SizeExpr, SizeExpr),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RateKey {
    pub chan: Name,
    pub dir: Dir,
    pub index: IndexKey,
}

impl RateKey {
    pub fn complement(&self) -> RateKey {
        RateKey { dir: self.dir.flip(), ..self.clone() }
    }
}

impl fmt::Display for RateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.dir {
            Dir::Send => '!',
            Dir::Recv => '?',
        };
        write!(f, "{}{}", self.chan, d)?;
        match &self.index {
            IndexKey::Whole => Ok(()),
            IndexKey::Single(i) => write!(f, "[{}]", i),
            IndexKey::Range(lo, hi) => write!(f, "[{}..{}]", lo, hi),
        }
    }
}

/// Per-target event multiplicities. Ranges carry the count per element.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RateSummary {
    pub rates: BTreeMap<RateKey, SizeExpr>,
}

impl RateSummary {
    pub fn add(&mut self, key: RateKey, mult: SizeExpr) {
        let total = match self.rates.remove(&key) {
            Some(m) => (m + mult).normalized(),
            None => mult.normalized(),
        };
        if total != SizeExpr::Num(0) {
            self.rates.insert(key, total);
        }
    }

    pub fn merge(&mut self, other: RateSummary) {
        for (k, m) in other.rates {
            self.add(k, m);
        }
    }

    pub fn get(&self, key: &RateKey) -> Option<&SizeExpr> {
        self.rates.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Replace ranges with closed bounds by one entry per element.
    pub fn expand_numeric(&self) -> RateSummary {
        let mut out = RateSummary::default();
        for (k, m) in &self.rates {
            if let IndexKey::Range(lo, hi) = &k.index {
                if let (Some(l), Some(h)) = (lo.closed_value(), hi.closed_value()) {
                    if h.saturating_sub(l) <= 4096 {
                        for i in l..=h {
                            out.add(RateKey { index: IndexKey::Single(SizeExpr::Num(i)), ..k.clone() }, m.clone());
                        }
                        continue;
                    }
                }
            }
            out.add(k.clone(), m.clone());
        }
        out
    }
}

impl fmt::Display for RateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, m)) in self.rates.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", k, m)?;
        }
        f.write_str("}")
    }
}

const ENUM_LIMIT: u64 = 1 << 20;

/// Exact per-index counts when every bound is a closed number.
fn enumerate_numeric(c: &Comprehension) -> Option<BTreeMap<IndexKey, u64>> {
    let mut bounds = Vec::new();
    let mut total: u64 = 1;
    for it in &c.iters {
        let (lo, hi) = (it.lo.closed_value()?, it.hi.closed_value()?);
        if hi < lo {
            return Some(BTreeMap::new());
        }
        total = total.checked_mul(hi - lo + 1)?;
        bounds.push((it.var.clone(), lo, hi));
    }
    if total > ENUM_LIMIT {
        return None;
    }
    let binders = c.binders();
    if !c.body_vars().is_subset(&binders) {
        return None;
    }
    let mut out = BTreeMap::new();
    let mut cur: Vec<u64> = bounds.iter().map(|b| b.1).collect();
    loop {
        let val: Valuation = bounds.iter().zip(&cur).map(|(b, v)| (b.0.clone(), *v)).collect();
        let close = |e: &SizeExpr| e.map_vars(&mut |v| val.get(v).map(|n| SizeExpr::Num(*n)));
        let ok = c.guards.iter().all(|g| g.map_sizes(&mut |e| close(e)).decide() == Some(true));
        if ok {
            let key = match &c.event.index {
                None => IndexKey::Whole,
                Some(i) => IndexKey::Single(SizeExpr::Num(eval_size(i, &val).ok()?.finite()?)),
            };
            *out.entry(key).or_insert(0) += 1;
        }
        let mut k = cur.len();
        loop {
            if k == 0 {
                return Some(out);
            }
            k -= 1;
            if cur[k] < bounds[k].2 {
                cur[k] += 1;
                break;
            }
            cur[k] = bounds[k].1;
        }
    }
}

fn extent(it: &Iter) -> SizeExpr {
    ((it.hi.clone() + SizeExpr::Num(1)) - it.lo.clone()).normalized()
}

/// Rate entries of a single comprehension.
pub fn comprehension_rates(c: &Comprehension) -> Result<Vec<(RateKey, SizeExpr)>, Diagnostic> {
    let key = |index: IndexKey| RateKey { chan: c.event.chan.clone(), dir: c.event.dir, index };
    if let Some(counts) = enumerate_numeric(c) {
        return Ok(counts.into_iter().filter(|(_, n)| *n > 0).map(|(i, n)| (key(i), SizeExpr::Num(n))).collect());
    }
    let f = match fold_comprehension(c)? {
        Some(f) => f,
        None => return Ok(Vec::new()),
    };
    if let Some(g) = f.guards.first() {
        return Err(fold_error(format!("guard `{}` cannot be folded into an iterator", g)));
    }
    let product = |skip: Option<&Name>| {
        f.iters
            .iter()
            .filter(|it| Some(&it.var) != skip)
            .fold(SizeExpr::Num(1), |acc, it| acc * extent(it))
            .normalized()
    };
    let binders = f.binders();
    let entry = match &f.event.index {
        None => (key(IndexKey::Whole), product(None)),
        Some(i) if i.free_vars().is_disjoint(&binders) => (key(IndexKey::Single(i.normalized())), product(None)),
        Some(SizeExpr::Var(t)) => {
            let it = f.iters.iter().find(|it| &it.var == t).expect("index is a binder");
            (key(IndexKey::Range(it.lo.normalized(), it.hi.normalized())), product(Some(t)))
        }
        Some(i) => {
            return Err(Diagnostic::new(
                event_rule(&f.event),
                format!("index {} of `{}` must be a single iterator", i, f.event.chan),
            ))
        }
    };
    if entry.1 == SizeExpr::Num(0) {
        return Ok(Vec::new());
    }
    Ok(alloc::vec![entry])
}

pub fn rate_summary(_env: &TypeEnv, fs: &ActorFlowstate) -> Result<RateSummary, Diagnostic> {
    let mut out = RateSummary::default();
    for c in fs.comps() {
        for (k, m) in comprehension_rates(c)? {
            out.add(k, m);
        }
    }
    Ok(out)
}

pub fn proc_rate_summary(env: &TypeEnv, fs: &ProcFlowstate) -> Result<RateSummary, Diagnostic> {
    match fs {
        ProcFlowstate::Empty => Ok(RateSummary::default()),
        ProcFlowstate::Actor(a) => rate_summary(env, a),
        ProcFlowstate::ActorArray { var, lo, hi, body } => {
            let it = Iter { var: var.clone(), lo: lo.clone(), hi: hi.clone() };
            rate_summary(env, &distribute_iterator(body, &it))
        }
        ProcFlowstate::Par(a, b) => {
            let mut s = proc_rate_summary(env, a)?;
            s.merge(proc_rate_summary(env, b)?);
            Ok(s)
        }
    }
}

/// Compare two multiplicities: equal normal forms, or a witness valuation
/// that separates them.
pub fn sizes_equivalent(env: &TypeEnv, a: &SizeExpr, b: &SizeExpr) -> Tri {
    let (na, nb) = (a.normalized(), b.normalized());
    if na == nb {
        return Tri::True;
    }
    let mut vars = na.free_vars();
    vars.extend(nb.free_vars());
    if vars.is_empty() {
        return if na.closed_value().is_some() && nb.closed_value().is_some() { Tri::False } else { Tri::Unknown };
    }
    let caps: Vec<(Name, u64)> = vars
        .into_iter()
        .map(|v| {
            let cap = match env.lookup(&v) {
                Some(Kind::Size(b)) => b.closed_value().unwrap_or(64),
                _ => 64,
            };
            (v, cap.clamp(1, 64))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..64 {
        let val: Valuation = caps.iter().map(|(v, c)| (v.clone(), rng.gen_range(1..=*c))).collect();
        if !respects_bounds(env, &val) {
            continue;
        }
        match (eval_size(&na, &val), eval_size(&nb, &val)) {
            (Ok(x), Ok(y)) if x != y => return Tri::False,
            _ => {}
        }
    }
    Tri::Unknown
}

fn respects_bounds(env: &TypeEnv, val: &Valuation) -> bool {
    val.iter().all(|(v, n)| match env.lookup(v) {
        Some(Kind::Size(b)) => match eval_size(b, val) {
            Ok(bv) => SizeValue::Finite(*n) <= bv,
            Err(_) => true,
        },
        _ => true,
    })
}

pub fn summaries_equivalent(env: &TypeEnv, a: &RateSummary, b: &RateSummary) -> Tri {
    let (a, b) = (a.expand_numeric(), b.expand_numeric());
    let zero = SizeExpr::Num(0);
    let keys: BTreeSet<&RateKey> = a.rates.keys().chain(b.rates.keys()).collect();
    let mut acc = Tri::True;
    for k in keys {
        let x = a.get(k).unwrap_or(&zero);
        let y = b.get(k).unwrap_or(&zero);
        acc = acc.and(sizes_equivalent(env, x, y));
        if acc == Tri::False {
            return acc;
        }
    }
    acc
}

/// Equivalence up to reordering, decided on rate summaries.
pub fn flowstates_equivalent(env: &TypeEnv, a: &ActorFlowstate, b: &ActorFlowstate) -> Tri {
    match (rate_summary(env, a), rate_summary(env, b)) {
        (Ok(x), Ok(y)) => summaries_equivalent(env, &x, &y),
        _ => Tri::Unknown,
    }
}

pub fn proc_flowstates_equivalent(env: &TypeEnv, a: &ProcFlowstate, b: &ProcFlowstate) -> Tri {
    match (proc_rate_summary(env, a), proc_rate_summary(env, b)) {
        (Ok(x), Ok(y)) => summaries_equivalent(env, &x, &y),
        _ => Tri::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn v(s: &str) -> SizeExpr {
        SizeExpr::var(s)
    }

    fn it(var: &str, lo: SizeExpr, hi: SizeExpr) -> Iter {
        Iter { var: Name::new(var), lo, hi }
    }

    fn env() -> TypeEnv {
        let mut g = TypeEnv::new();
        g.push(Name::new("s"), Kind::Size(SizeExpr::Inf));
        g.push(Name::new("i"), Kind::Channel { delay: false, limit: v("s") });
        g.push(Name::new("o"), Kind::Channel { delay: false, limit: v("s") });
        g.push(Name::new("a"), Kind::ChannelArray { bound: SizeExpr::Num(4), delay: false, limit: SizeExpr::Num(1) });
        g
    }

    #[test]
    fn distribute_over_sequence() {
        let body = ActorFlowstate::seq(
            ActorFlowstate::Comp(Comprehension::single(Event::recv("c1"))),
            ActorFlowstate::Comp(Comprehension::single(Event::send("c2"))),
        );
        let d = distribute_iterator(&body, &it("t", SizeExpr::Num(1), v("n")));
        assert_eq!(d.to_string(), "c1?<t in 1..n> ; c2!<t in 1..n>");
        assert_eq!(distribute_iterator(&ActorFlowstate::Empty, &it("t", SizeExpr::Num(1), v("n"))), ActorFlowstate::Empty);
    }

    #[test]
    fn distribute_renames_clashing_binder() {
        let inner = ActorFlowstate::Comp(Comprehension {
            event: Event::send("c").at(v("t")),
            iters: alloc::vec![it("t", SizeExpr::Num(1), SizeExpr::Num(2))],
            guards: Vec::new(),
        });
        let d = distribute_iterator(&inner, &it("t", SizeExpr::Num(1), SizeExpr::Num(3)));
        assert_eq!(d.to_string(), "c![t1]<t1 in 1..2, t in 1..3>");
    }

    #[test]
    fn golden_downsampler_summary() {
        let g = env();
        let body = ActorFlowstate::seq(
            ActorFlowstate::Comp(Comprehension::single(Event::recv("i"))),
            ActorFlowstate::Comp(Comprehension {
                event: Event::send("o"),
                iters: Vec::new(),
                guards: alloc::vec![Guard::Divides { divisor: SizeExpr::Num(2), subject: v("t") }],
            }),
        );
        let fs = distribute_iterator(&body, &it("t", SizeExpr::Num(1), v("s")));
        assert_eq!(fs.to_string(), "i?<t in 1..s> ; o!<t in 1..s, 2 | t>");
        let sum = rate_summary(&g, &fs).unwrap();
        assert_eq!(sum.to_string(), "{i?: s, o!: s / 2}");
    }

    #[test]
    fn guard_on_array_index_rejected() {
        let c = Comprehension {
            event: Event::recv("a").at(v("t")),
            iters: alloc::vec![it("t", SizeExpr::Num(1), v("s"))],
            guards: alloc::vec![Guard::Divides { divisor: SizeExpr::Num(2), subject: v("t") }],
        };
        assert!(fold_comprehension(&c).is_err());
    }

    #[test]
    fn closed_guards_discharge() {
        let mk = |n| Comprehension {
            event: Event::send("o"),
            iters: Vec::new(),
            guards: alloc::vec![Guard::Divides { divisor: SizeExpr::Num(2), subject: SizeExpr::Num(n) }],
        };
        assert_eq!(comprehension_rates(&mk(4)).unwrap().len(), 1);
        assert!(comprehension_rates(&mk(3)).unwrap().is_empty());
    }

    #[test]
    fn equivalence_ignores_order() {
        let g = env();
        let c = |e| ActorFlowstate::Comp(Comprehension::single(e));
        let a = ActorFlowstate::seq(c(Event::send("i")), c(Event::recv("o")));
        let b = ActorFlowstate::seq(c(Event::recv("o")), c(Event::send("i")));
        assert_eq!(flowstates_equivalent(&g, &a, &b), Tri::True);
        let two = ActorFlowstate::Comp(Comprehension::repeat(Event::send("i"), SizeExpr::Num(2)));
        let twice = ActorFlowstate::seq(c(Event::send("i")), c(Event::send("i")));
        assert_eq!(flowstates_equivalent(&g, &two, &twice), Tri::True);
        assert_eq!(flowstates_equivalent(&g, &c(Event::send("i")), &c(Event::recv("i"))), Tri::False);
    }

    #[test]
    fn formation_checks_array_bounds() {
        let g = env();
        let ok = ActorFlowstate::Comp(Comprehension::single(Event::send("a").at(SizeExpr::Num(4))));
        assert!(check_flowstate(&g, &ok).is_ok());
        let bad = ActorFlowstate::Comp(Comprehension::single(Event::send("a").at(SizeExpr::Num(9))));
        assert_eq!(check_flowstate(&g, &bad).unwrap_err()[0].rule, "FS Array Send");
    }
}
