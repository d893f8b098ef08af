//! Type and flowstate synthesis for expressions, processes and networks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::ast::{
    ActorFlowstate, BinOp, Comprehension, Event, Expr, ExprKind, GuardOp, Guard, Iter, Kind, Loc, Network, Proc,
    ProcFlowstate, ProcKind, ProcType, SimpleType, TypeEnv, ValueEnv, ValueType, Dir,
};
use crate::diag::{Diagnostic, Diagnostics, Tri};
use crate::flowstate::{
    check_flowstate, check_proc_flowstate, distribute_guard, distribute_iterator, flowstates_equivalent,
};
use crate::kinding::{check_simple, check_type_env, check_value_type, size_leq};
use crate::name::Name;
use crate::netcheck::{check_determinism, check_progress, Schedule};
use crate::size::SizeExpr;

/// Result of typing an expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Typed {
    pub ty: SimpleType,
    pub flow: ActorFlowstate,
}

/// Types of heap locations, for retyping running configurations.
pub type HeapTypes = BTreeMap<Loc, SimpleType>;

pub struct Checker<'a> {
    pub tenv: TypeEnv,
    pub venv: ValueEnv,
    heap: Option<&'a HeapTypes>,
}

fn err(rule: &'static str, e: &Expr, msg: alloc::string::String) -> Diagnostic {
    Diagnostic::new(rule, msg).at(e.span)
}

fn comp(ev: Event) -> ActorFlowstate {
    ActorFlowstate::Comp(Comprehension::single(ev))
}

impl<'a> Checker<'a> {
    pub fn new(tenv: TypeEnv, venv: ValueEnv) -> Self {
        Checker { tenv, venv, heap: None }
    }

    pub fn with_heap(tenv: TypeEnv, venv: ValueEnv, heap: &'a HeapTypes) -> Self {
        Checker { tenv, venv, heap: Some(heap) }
    }

    fn same(&self, a: &SimpleType, b: &SimpleType) -> bool {
        a.same_as(b, &self.tenv)
    }

    fn scoped<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        let (nt, nv) = (self.tenv.len(), self.venv.len());
        let r = f(self);
        self.tenv.truncate(nt);
        self.venv.truncate(nv);
        r
    }

    pub fn infer(&mut self, e: &Expr) -> Result<Typed, Diagnostic> {
        let pure = |ty| Ok(Typed { ty, flow: ActorFlowstate::Empty });
        match &e.kind {
            ExprKind::Int(_) => pure(SimpleType::Integer),
            ExprKind::Bool(_) => pure(SimpleType::Boolean),
            ExprKind::Var(x) => match self.venv.lookup(x) {
                Some(ValueType::Simple(t)) => pure(t.clone()),
                Some(_) => Err(err("Val Var", e, format!("channel `{}` cannot be used as a value", x))),
                None => Err(err("Val Var", e, format!("unbound variable `{}`", x))),
            },
            ExprKind::Loc(l) => match self.heap.and_then(|h| h.get(l)) {
                Some(t) => pure(SimpleType::Ref(alloc::boxed::Box::new(t.clone()))),
                None => Err(err("Val Ref", e, format!("unknown location {}", l))),
            },
            ExprKind::MkSize(inner) => match inner.kind {
                ExprKind::Int(n) if n >= 0 => pure(SimpleType::Size(SizeExpr::Num(n as u64))),
                _ => Err(err("Val Size", e, format!("size() expects a non-negative literal, got {}", inner))),
            },
            ExprKind::MkIndex(inner) => match inner.kind {
                ExprKind::Int(n) if n >= 1 => pure(SimpleType::Index(SizeExpr::Num(n as u64))),
                _ => Err(err("Val Index", e, format!("index() expects a positive literal, got {}", inner))),
            },
            ExprKind::FromSize(inner) => {
                let t = self.infer(inner)?;
                match t.ty {
                    SimpleType::Size(_) => Ok(Typed { ty: SimpleType::Integer, flow: t.flow }),
                    other => Err(err("Val Int", e, format!("fromSize expects a Size, got {}", other))),
                }
            }
            ExprKind::FromIndex(inner) => {
                let t = self.infer(inner)?;
                match t.ty {
                    SimpleType::Index(_) => Ok(Typed { ty: SimpleType::Integer, flow: t.flow }),
                    other => Err(err("Val FromIndex", e, format!("fromIndex expects an Index, got {}", other))),
                }
            }
            ExprKind::Fun(abs) => {
                let mut names = BTreeSet::new();
                for (x, t) in &abs.params {
                    if !names.insert(x.clone()) {
                        return Err(err("Val Abs", e, format!("parameter `{}` is repeated", x)));
                    }
                    check_simple(&self.tenv, t).map_err(|d| d.at(e.span))?;
                }
                for fs in [&abs.latent, &abs.rest] {
                    check_flowstate(&self.tenv, fs).map_err(|mut ds| ds.remove(0).at(e.span))?;
                }
                let body = self.scoped(|c| {
                    for (x, t) in &abs.params {
                        c.venv.push(x.clone(), ValueType::Simple(t.clone()));
                    }
                    c.infer(&abs.body)
                })?;
                if flowstates_equivalent(&self.tenv, &body.flow, &abs.latent) != Tri::True {
                    return Err(err(
                        "Val Abs",
                        e,
                        format!("body has flowstate {} but the annotation says {}", body.flow, abs.latent),
                    ));
                }
                pure(SimpleType::Proc(alloc::boxed::Box::new(ProcType {
                    params: abs.params.iter().map(|(_, t)| t.clone()).collect(),
                    latent: abs.latent.clone(),
                    rest: abs.rest.clone(),
                    result: body.ty,
                })))
            }
            ExprKind::App(f, args) => {
                let tf = self.infer(f)?;
                let p = match tf.ty {
                    SimpleType::Proc(p) => p,
                    other => return Err(err("Val App", e, format!("cannot apply a value of type {}", other))),
                };
                if p.params.len() != args.len() {
                    return Err(err(
                        "Val App",
                        e,
                        format!("expected {} arguments, got {}", p.params.len(), args.len()),
                    ));
                }
                let mut flow = tf.flow;
                for (a, want) in args.iter().zip(&p.params) {
                    let ta = self.infer(a)?;
                    if !self.same(&ta.ty, want) {
                        return Err(err("Val App", a, format!("argument has type {}, expected {}", ta.ty, want)));
                    }
                    flow = flow.then(ta.flow);
                }
                Ok(Typed { ty: p.result.clone(), flow: flow.then(p.latent.clone()) })
            }
            ExprKind::Let { name, annot, bound, body } => {
                let tb = self.infer(bound)?;
                if let Some(t) = annot {
                    check_simple(&self.tenv, t).map_err(|d| d.at(e.span))?;
                    if !self.same(&tb.ty, t) {
                        return Err(err("Val Let", e, format!("`{}` is declared {} but bound to {}", name, t, tb.ty)));
                    }
                }
                let ty = annot.clone().unwrap_or(tb.ty);
                let rest = self.scoped(|c| {
                    c.venv.push(name.clone(), ValueType::Simple(ty));
                    c.infer(body)
                })?;
                Ok(Typed { ty: rest.ty, flow: tb.flow.then(rest.flow) })
            }
            ExprKind::If { cond, then_branch, else_branch } => {
                let tc = self.infer(cond)?;
                if tc.ty != SimpleType::Boolean {
                    return Err(err("Val Cond", cond, format!("condition has type {}, expected Boolean", tc.ty)));
                }
                let t1 = self.infer(then_branch)?;
                let t2 = self.infer(else_branch)?;
                if !self.same(&t1.ty, &t2.ty) {
                    return Err(err("Val Cond", e, format!("branches have types {} and {}", t1.ty, t2.ty)));
                }
                if flowstates_equivalent(&self.tenv, &t1.flow, &t2.flow) != Tri::True {
                    return Err(err(
                        "Val Cond",
                        e,
                        format!("branches have different flowstates: {} and {}", t1.flow, t2.flow),
                    ));
                }
                Ok(Typed { ty: t1.ty, flow: tc.flow.then(t1.flow) })
            }
            ExprKind::When { op, lhs, rhs, body } => self.infer_when(e, *op, lhs, rhs, body),
            ExprKind::For { ty_var, var, lo, bound, body } => {
                if *lo < 1 {
                    return Err(err("Val For", e, "loop lower bound must be at least 1".into()));
                }
                let tb = self.infer(bound)?;
                let tau = match tb.ty {
                    SimpleType::Size(t) => t,
                    SimpleType::Index(_) => {
                        return Err(err("Val For", bound, "a loop index cannot be used as a loop bound".into()))
                    }
                    other => return Err(err("Val For", bound, format!("loop bound has type {}, expected Size", other))),
                };
                if tau.normalized() == SizeExpr::Inf {
                    return Err(err("Val For", bound, "loop bound is unbounded".into()));
                }
                if self.tenv.contains(ty_var) {
                    return Err(err("Val For", e, format!("loop witness `{}` shadows a type-level name", ty_var)));
                }
                let tbody = self.scoped(|c| {
                    c.tenv.push(ty_var.clone(), Kind::Size(tau.clone()));
                    c.venv.push(var.clone(), ValueType::Simple(SimpleType::Index(SizeExpr::Var(ty_var.clone()))));
                    c.infer(body)
                })?;
                let it = Iter { var: ty_var.clone(), lo: SizeExpr::Num(*lo), hi: tau };
                Ok(Typed { ty: SimpleType::Integer, flow: tb.flow.then(distribute_iterator(&tbody.flow, &it)) })
            }
            ExprKind::Ref(inner) => {
                let t = self.infer(inner)?;
                Ok(Typed { ty: SimpleType::Ref(alloc::boxed::Box::new(t.ty)), flow: t.flow })
            }
            ExprKind::Deref(inner) => {
                let t = self.infer(inner)?;
                match t.ty {
                    SimpleType::Ref(r) => Ok(Typed { ty: *r, flow: t.flow }),
                    other => Err(err("Val Deref", e, format!("cannot dereference a value of type {}", other))),
                }
            }
            ExprKind::Assign(target, value) => {
                let tt = self.infer(target)?;
                let tv = self.infer(value)?;
                match tt.ty {
                    SimpleType::Ref(r) if self.same(&r, &tv.ty) => Ok(Typed { ty: tv.ty, flow: tt.flow.then(tv.flow) }),
                    SimpleType::Ref(r) => Err(err("Val Assign", e, format!("cannot store {} in Ref({})", tv.ty, r))),
                    other => Err(err("Val Assign", e, format!("cannot assign through a value of type {}", other))),
                }
            }
            ExprKind::Recv { chan, index } => {
                let (ev, payload, flow) = self.channel_event(e, chan, index.as_deref(), Dir::Recv)?;
                Ok(Typed { ty: payload, flow: flow.then(comp(ev)) })
            }
            ExprKind::Send { chan, index, payload } => {
                let (ev, want, flow) = self.channel_event(e, chan, index.as_deref(), Dir::Send)?;
                let tp = self.infer(payload)?;
                let rule = if index.is_some() { "Val Send Array" } else { "Val Send" };
                if !self.same(&tp.ty, &want) {
                    return Err(err(rule, e, format!("sending {} on a channel of {}", tp.ty, want)));
                }
                Ok(Typed { ty: SimpleType::Integer, flow: flow.then(tp.flow).then(comp(ev)) })
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let a = self.infer(lhs)?;
                let b = self.infer(rhs)?;
                let flow = a.flow.then(b.flow);
                let ty = match op {
                    BinOp::Eq => {
                        if !self.same(&a.ty, &b.ty) || !matches!(a.ty, SimpleType::Integer | SimpleType::Boolean) {
                            return Err(err("Val Eq", e, format!("cannot compare {} with {}", a.ty, b.ty)));
                        }
                        SimpleType::Boolean
                    }
                    _ => {
                        if a.ty != SimpleType::Integer || b.ty != SimpleType::Integer {
                            let rule = if op.is_comparison() { "Val Eq" } else { "Val Op" };
                            return Err(err(rule, e, format!("`{}` needs Integer operands, got {} and {}", op.symbol(), a.ty, b.ty)));
                        }
                        if op.is_comparison() {
                            SimpleType::Boolean
                        } else {
                            SimpleType::Integer
                        }
                    }
                };
                Ok(Typed { ty, flow })
            }
        }
    }

    fn channel_event(
        &mut self,
        e: &Expr,
        chan: &Name,
        index: Option<&Expr>,
        dir: Dir,
    ) -> Result<(Event, SimpleType, ActorFlowstate), Diagnostic> {
        let (plain, array) = match dir {
            Dir::Send => ("Val Send", "Val Send Array"),
            Dir::Recv => ("Val Receive", "Val Recv Array"),
        };
        let verb = match dir {
            Dir::Send => "send on",
            Dir::Recv => "receive from",
        };
        let vt = self.venv.lookup(chan).cloned();
        match (vt, index) {
            (Some(ValueType::Chan { polarity, channel, payload }), None) => {
                let allowed = if dir == Dir::Send { polarity.can_send() } else { polarity.can_recv() };
                if !allowed {
                    return Err(err(plain, e, format!("cannot {} `{}` with polarity {}", verb, chan, polarity)));
                }
                Ok((Event { dir, chan: channel, index: None }, payload, ActorFlowstate::Empty))
            }
            (Some(ValueType::ChanArray { polarity, channel, payload, bound }), Some(ix)) => {
                let allowed = if dir == Dir::Send { polarity.can_send() } else { polarity.can_recv() };
                if !allowed {
                    return Err(err(array, e, format!("cannot {} `{}` with polarity {}", verb, chan, polarity)));
                }
                let ti = self.infer(ix)?;
                let tau = match ti.ty {
                    SimpleType::Index(t) => t,
                    other => return Err(err(array, ix, format!("array index has type {}, expected Index", other))),
                };
                match size_leq(&self.tenv, &tau, &bound) {
                    Tri::True => {}
                    Tri::False => {
                        return Err(err(array, ix, format!("index {} exceeds the bound {} of `{}`", tau, bound, chan)))
                    }
                    Tri::Unknown => {
                        return Err(err(
                            array,
                            ix,
                            format!("cannot show index {} is within the bound {} of `{}`", tau, bound, chan),
                        ))
                    }
                }
                Ok((Event { dir, chan: channel, index: Some(tau) }, payload, ti.flow))
            }
            (Some(ValueType::Chan { .. }), Some(_)) => {
                Err(err(array, e, format!("`{}` is a single channel and cannot be indexed", chan)))
            }
            (Some(ValueType::ChanArray { .. }), None) => {
                Err(err(plain, e, format!("`{}` is a channel array and needs an index", chan)))
            }
            (Some(ValueType::Simple(t)), _) => Err(err(plain, e, format!("`{}` has type {}, not a channel", chan, t))),
            (None, _) => Err(err(plain, e, format!("unbound channel `{}`", chan))),
        }
    }

    fn guard_operand(&mut self, e: &Expr, literal_as_size: bool) -> Result<Typed, Diagnostic> {
        match e.kind {
            ExprKind::Int(n) if literal_as_size && n >= 0 => {
                Ok(Typed { ty: SimpleType::Size(SizeExpr::Num(n as u64)), flow: ActorFlowstate::Empty })
            }
            _ => self.infer(e),
        }
    }

    fn infer_when(&mut self, e: &Expr, op: GuardOp, lhs: &Expr, rhs: &Expr, body: &Expr) -> Result<Typed, Diagnostic> {
        let a = self.guard_operand(lhs, op == GuardOp::Divides)?;
        let b = self.guard_operand(rhs, op == GuardOp::AtMost)?;
        let guard = match (op, &a.ty, &b.ty) {
            (GuardOp::Divides, SimpleType::Size(d), SimpleType::Index(s)) => {
                Guard::Divides { divisor: d.clone(), subject: s.clone() }
            }
            (GuardOp::AtMost, SimpleType::Index(s), SimpleType::Size(bd)) => {
                Guard::AtMost { subject: s.clone(), bound: bd.clone() }
            }
            (GuardOp::Divides, x, y) => {
                return Err(err("Val When", e, format!("`|` needs a Size on the left and an Index on the right, got {} and {}", x, y)))
            }
            (GuardOp::AtMost, x, y) => {
                return Err(err("Val When", e, format!("`<=` needs an Index on the left and a Size on the right, got {} and {}", x, y)))
            }
        };
        match guard.subject() {
            SizeExpr::Var(_) | SizeExpr::Num(_) => {}
            other => return Err(err("Val When", e, format!("guard subject {} must be a loop witness", other))),
        }
        let tb = self.infer(body)?;
        if tb.ty != SimpleType::Integer {
            return Err(err("Val When", body, format!("when-body has type {}, expected Integer", tb.ty)));
        }
        Ok(Typed { ty: SimpleType::Integer, flow: a.flow.then(b.flow).then(distribute_guard(&tb.flow, &guard)) })
    }

    fn size_value(&mut self, e: &Expr) -> Result<SizeExpr, Diagnostic> {
        if !matches!(e.kind, ExprKind::Var(_) | ExprKind::MkSize(_)) {
            return Err(err("Proc Comp", e, format!("actor bound must be a size variable or literal, got {}", e)));
        }
        match self.infer(e)?.ty {
            SimpleType::Size(t) => Ok(t),
            other => Err(err("Proc Comp", e, format!("actor bound has type {}, expected Size", other))),
        }
    }

    pub fn check_proc(&mut self, p: &Proc) -> Result<ProcFlowstate, Diagnostics> {
        match &p.kind {
            ProcKind::Stop => Ok(ProcFlowstate::Empty),
            ProcKind::Actor(e) => Ok(ProcFlowstate::Actor(self.infer(e).map_err(|d| alloc::vec![d])?.flow)),
            ProcKind::Comp { ty_var, var, lo, bound, body } => {
                let one = |d: Diagnostic| alloc::vec![d.at(p.span)];
                if *lo < 1 {
                    return Err(one(Diagnostic::new("Proc Comp", "actor lower bound must be at least 1")));
                }
                let hi = self.size_value(bound).map_err(one)?;
                if self.tenv.contains(ty_var) {
                    return Err(one(Diagnostic::new(
                        "Proc Comp",
                        format!("actor witness `{}` shadows a type-level name", ty_var),
                    )));
                }
                let tb = self
                    .scoped(|c| {
                        c.tenv.push(ty_var.clone(), Kind::Size(hi.clone()));
                        c.venv.push(var.clone(), ValueType::Simple(SimpleType::Index(SizeExpr::Var(ty_var.clone()))));
                        c.infer(body)
                    })
                    .map_err(one)?;
                Ok(ProcFlowstate::ActorArray { var: ty_var.clone(), lo: SizeExpr::Num(*lo), hi, body: tb.flow })
            }
            ProcKind::Par(a, b) => {
                let fa = self.check_proc(a);
                let fb = self.check_proc(b);
                match (fa, fb) {
                    (Ok(x), Ok(y)) => Ok(ProcFlowstate::par(x, y)),
                    (x, y) => {
                        let mut errs = x.err().unwrap_or_default();
                        errs.extend(y.err().unwrap_or_default());
                        Err(errs)
                    }
                }
            }
        }
    }
}

pub fn infer_expr(tenv: &TypeEnv, venv: &ValueEnv, e: &Expr) -> Result<Typed, Diagnostics> {
    Checker::new(tenv.clone(), venv.clone()).infer(e).map_err(|d| alloc::vec![d])
}

pub fn check_proc(tenv: &TypeEnv, venv: &ValueEnv, p: &Proc) -> Result<ProcFlowstate, Diagnostics> {
    Checker::new(tenv.clone(), venv.clone()).check_proc(p)
}

/// Well-formedness of the value environment under `tenv`.
pub fn check_value_env(tenv: &TypeEnv, venv: &ValueEnv) -> Result<(), Diagnostics> {
    let mut errs = Vec::new();
    let mut seen = BTreeSet::new();
    let mut owners: BTreeMap<Name, Name> = BTreeMap::new();
    for b in &venv.bindings {
        let rule = if b.value.channel().is_some() { "ValEnv Extend Name" } else { "ValEnv Extend Var" };
        if !seen.insert(b.name.clone()) {
            errs.push(Diagnostic::new(rule, format!("`{}` is declared twice", b.name)).at(b.span));
            continue;
        }
        if let Err(d) = check_value_type(tenv, &b.value) {
            errs.push(d.at(b.span));
            continue;
        }
        if let Some(ch) = b.value.channel() {
            if let Some(prev) = owners.insert(ch.clone(), b.name.clone()) {
                errs.push(
                    Diagnostic::new(rule, format!("`{}` and `{}` alias the channel `{}`", prev, b.name, ch)).at(b.span),
                );
            }
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Successful network check: the synthesized flowstate and a witness
/// schedule.
#[derive(Clone, Debug)]
pub struct NetworkReport {
    pub flow: ProcFlowstate,
    pub schedule: Schedule,
}

fn same_component(env: &TypeEnv, declared: &ProcFlowstate, actual: &ProcFlowstate) -> bool {
    use ProcFlowstate as P;
    let eps = |p: &P| matches!(p, P::Empty | P::Actor(ActorFlowstate::Empty));
    match (declared, actual) {
        (d, a) if d == a => true,
        (d, a) if eps(d) && eps(a) => true,
        (P::Actor(d), P::Actor(a)) => flowstates_equivalent(env, d, a) == Tri::True,
        (P::Empty, P::Actor(a)) | (P::Actor(a), P::Empty) => flowstates_equivalent(env, a, &ActorFlowstate::Empty) == Tri::True,
        (
            P::ActorArray { var: v1, lo: l1, hi: h1, body: b1 },
            P::ActorArray { var: v2, lo: l2, hi: h2, body: b2 },
        ) => {
            if l1.normalized() != l2.normalized() || h1.normalized() != h2.normalized() {
                return false;
            }
            let b1 = b1.subst(v1, &SizeExpr::Var(v2.clone()));
            let mut inner = env.clone();
            inner.push(v2.clone(), Kind::Size(h2.clone()));
            flowstates_equivalent(&inner, &b1, b2) == Tri::True
        }
        _ => false,
    }
}

/// Declared and synthesized network flowstates must agree component by
/// component.
pub fn check_declared_flow(env: &TypeEnv, declared: &ProcFlowstate, actual: &ProcFlowstate) -> Result<(), Diagnostic> {
    let d = declared.components();
    let a = actual.components();
    if d.len() != a.len() {
        return Err(Diagnostic::new(
            "Proc Flowstate",
            format!(
                "flowstate mismatch: {} components declared, {} in the network ({})",
                d.len(),
                a.len(),
                actual
            ),
        ));
    }
    for (i, (x, y)) in d.iter().zip(&a).enumerate() {
        if !same_component(env, x, y) {
            return Err(Diagnostic::new(
                "Proc Flowstate",
                format!("flowstate mismatch in component {}: declared {}, synthesized {}", i, x, y),
            ));
        }
    }
    Ok(())
}

pub fn check_network(net: &Network) -> Result<NetworkReport, Diagnostics> {
    check_type_env(&net.types)?;
    check_value_env(&net.types, &net.values)?;
    check_proc_flowstate(&net.types, &net.flow)?;
    let flow = check_proc(&net.types, &net.values, &net.body)?;
    check_declared_flow(&net.types, &net.flow, &flow).map_err(|d| alloc::vec![d])?;
    check_determinism(&net.types, &flow)?;
    let schedule = check_progress(&net.types, &flow, &ProcFlowstate::Empty)?;
    Ok(NetworkReport { flow, schedule })
}
