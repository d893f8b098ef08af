//! Small-step semantics over heaps and bounded FIFO buffers.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::{
    Abstraction, ActorFlowstate, Dir, Event, Expr, ExprKind, GuardOp, Kind, Loc, Network, Proc, ProcFlowstate,
    ProcKind, SimpleType, TypeEnv, ValueEnv, ValueType, BinOp,
};
use crate::name::Name;
use crate::size::{eval_size, SizeExpr, SizeValue, Valuation};

// Substitution.

fn map_children(e: &Expr, f: &mut dyn FnMut(&Expr) -> Expr) -> Expr {
    let b = |x: &Expr, f: &mut dyn FnMut(&Expr) -> Expr| Box::new(f(x));
    let kind = match &e.kind {
        ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Var(_) | ExprKind::Loc(_) => e.kind.clone(),
        ExprKind::MkSize(x) => ExprKind::MkSize(b(x, f)),
        ExprKind::MkIndex(x) => ExprKind::MkIndex(b(x, f)),
        ExprKind::FromSize(x) => ExprKind::FromSize(b(x, f)),
        ExprKind::FromIndex(x) => ExprKind::FromIndex(b(x, f)),
        ExprKind::Fun(a) => ExprKind::Fun(Box::new(Abstraction { body: f(&a.body), ..(**a).clone() })),
        ExprKind::App(g, args) => ExprKind::App(b(g, f), args.iter().map(|a| f(a)).collect()),
        ExprKind::Let { name, annot, bound, body } => {
            ExprKind::Let { name: name.clone(), annot: annot.clone(), bound: b(bound, f), body: b(body, f) }
        }
        ExprKind::If { cond, then_branch, else_branch } => {
            ExprKind::If { cond: b(cond, f), then_branch: b(then_branch, f), else_branch: b(else_branch, f) }
        }
        ExprKind::When { op, lhs, rhs, body } => ExprKind::When { op: *op, lhs: b(lhs, f), rhs: b(rhs, f), body: b(body, f) },
        ExprKind::For { ty_var, var, lo, bound, body } => {
            ExprKind::For { ty_var: ty_var.clone(), var: var.clone(), lo: *lo, bound: b(bound, f), body: b(body, f) }
        }
        ExprKind::Ref(x) => ExprKind::Ref(b(x, f)),
        ExprKind::Deref(x) => ExprKind::Deref(b(x, f)),
        ExprKind::Assign(x, y) => ExprKind::Assign(b(x, f), b(y, f)),
        ExprKind::Recv { chan, index } => ExprKind::Recv { chan: chan.clone(), index: index.as_ref().map(|i| b(i, f)) },
        ExprKind::Send { chan, index, payload } => {
            ExprKind::Send { chan: chan.clone(), index: index.as_ref().map(|i| b(i, f)), payload: b(payload, f) }
        }
        ExprKind::Binary { op, lhs, rhs } => ExprKind::Binary { op: *op, lhs: b(lhs, f), rhs: b(rhs, f) },
    };
    Expr { kind, span: e.span }
}

/// `e[v/x]` for a closed value `v`.
pub fn subst_value(e: &Expr, x: &Name, v: &Expr) -> Expr {
    match &e.kind {
        ExprKind::Var(y) if y == x => Expr { kind: v.kind.clone(), span: e.span },
        ExprKind::Let { name, annot, bound, body } if name == x => Expr {
            kind: ExprKind::Let {
                name: name.clone(),
                annot: annot.clone(),
                bound: Box::new(subst_value(bound, x, v)),
                body: body.clone(),
            },
            span: e.span,
        },
        ExprKind::Fun(a) if a.params.iter().any(|(p, _)| p == x) => e.clone(),
        ExprKind::For { ty_var, var, lo, bound, body } if var == x => Expr {
            kind: ExprKind::For {
                ty_var: ty_var.clone(),
                var: var.clone(),
                lo: *lo,
                bound: Box::new(subst_value(bound, x, v)),
                body: body.clone(),
            },
            span: e.span,
        },
        _ => map_children(e, &mut |c| subst_value(c, x, v)),
    }
}

/// Replace the type-level size variable `t` inside annotations.
pub fn subst_size_expr(e: &Expr, t: &Name, repl: &SizeExpr) -> Expr {
    let mut out = match &e.kind {
        ExprKind::For { ty_var, .. } if ty_var == t => {
            if let ExprKind::For { ty_var, var, lo, bound, body } = &e.kind {
                return Expr {
                    kind: ExprKind::For {
                        ty_var: ty_var.clone(),
                        var: var.clone(),
                        lo: *lo,
                        bound: Box::new(subst_size_expr(bound, t, repl)),
                        body: body.clone(),
                    },
                    span: e.span,
                };
            }
            unreachable!()
        }
        _ => map_children(e, &mut |c| subst_size_expr(c, t, repl)),
    };
    match &mut out.kind {
        ExprKind::Let { annot: Some(ty), .. } => *ty = ty.subst_size(t, repl),
        ExprKind::Fun(a) => {
            for (_, ty) in a.params.iter_mut() {
                *ty = ty.subst_size(t, repl);
            }
            a.latent = a.latent.subst(t, repl);
            a.rest = a.rest.subst(t, repl);
        }
        _ => {}
    }
    out
}

fn subst_value_proc(p: &Proc, x: &Name, v: &Expr) -> Proc {
    let kind = match &p.kind {
        ProcKind::Stop => ProcKind::Stop,
        ProcKind::Actor(e) => ProcKind::Actor(subst_value(e, x, v)),
        ProcKind::Comp { ty_var, var, lo, bound, body } => ProcKind::Comp {
            ty_var: ty_var.clone(),
            var: var.clone(),
            lo: *lo,
            bound: subst_value(bound, x, v),
            body: if var == x { body.clone() } else { subst_value(body, x, v) },
        },
        ProcKind::Par(a, b) => ProcKind::Par(Box::new(subst_value_proc(a, x, v)), Box::new(subst_value_proc(b, x, v))),
    };
    Proc { kind, span: p.span }
}

fn subst_size_proc(p: &Proc, t: &Name, repl: &SizeExpr) -> Proc {
    let kind = match &p.kind {
        ProcKind::Stop => ProcKind::Stop,
        ProcKind::Actor(e) => ProcKind::Actor(subst_size_expr(e, t, repl)),
        ProcKind::Comp { ty_var, var, lo, bound, body } => ProcKind::Comp {
            ty_var: ty_var.clone(),
            var: var.clone(),
            lo: *lo,
            bound: subst_size_expr(bound, t, repl),
            body: if ty_var == t { body.clone() } else { subst_size_expr(body, t, repl) },
        },
        ProcKind::Par(a, b) => ProcKind::Par(Box::new(subst_size_proc(a, t, repl)), Box::new(subst_size_proc(b, t, repl))),
    };
    Proc { kind, span: p.span }
}

// Heap.

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Buffer {
    pub items: VecDeque<Expr>,
    pub capacity: u64,
}

impl Buffer {
    pub fn new(capacity: u64) -> Self {
        Buffer { items: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() as u64 >= self.capacity
    }

    pub fn push(&mut self, v: Expr) {
        assert!(!self.is_full(), "buffer capacity exceeded");
        self.items.push_back(v);
    }

    pub fn pop(&mut self) -> Option<Expr> {
        self.items.pop_front()
    }
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}", v)?;
        }
        if self.capacity == u64::MAX {
            write!(f, "]_inf")
        } else {
            write!(f, "]_{}", self.capacity)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Heap {
    pub cells: BTreeMap<Loc, Expr>,
    pub channels: BTreeMap<Name, Buffer>,
    /// Element `k` of an array lives at position `k - 1`.
    pub arrays: BTreeMap<Name, Vec<Buffer>>,
}

impl Heap {
    pub fn buffer(&self, chan: &Name, index: Option<u64>) -> Option<&Buffer> {
        match index {
            None => self.channels.get(chan),
            Some(k) => self.arrays.get(chan)?.get(usize::try_from(k).ok()?.checked_sub(1)?),
        }
    }

    fn buffer_mut(&mut self, chan: &Name, index: Option<u64>) -> Option<&mut Buffer> {
        match index {
            None => self.channels.get_mut(chan),
            Some(k) => self.arrays.get_mut(chan)?.get_mut(usize::try_from(k).ok()?.checked_sub(1)?),
        }
    }

    /// `(name, occupancy, capacity)` for every buffer.
    pub fn occupancy(&self) -> Vec<(String, usize, u64)> {
        let mut out = Vec::new();
        for (c, b) in &self.channels {
            out.push((c.to_string(), b.len(), b.capacity));
        }
        for (c, bs) in &self.arrays {
            for (i, b) in bs.iter().enumerate() {
                out.push((format!("{}[{}]", c, i + 1), b.len(), b.capacity));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Internal,
    /// Array events carry a numeric index.
    Comm(Event),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Internal => f.write_str("tau"),
            Label::Comm(e) => write!(f, "{}", e),
        }
    }
}

/// Per-channel event counters, keyed by channel, direction and element.
pub type CommCounts = BTreeMap<(Name, Dir, Option<u64>), u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultPlan {
    /// Drop the n-th send (1-based) after reporting it.
    DropNth(u64),
    /// Drop every n-th send.
    DropEvery(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Configuration {
    /// Shared so that cloning a configuration copies only the heap.
    pub actors: Vec<Arc<Expr>>,
    pub heap: Heap,
    pub counts: CommCounts,
    pub fault: Option<FaultPlan>,
    next_slot: Vec<u32>,
    links: Arc<BTreeMap<Name, Name>>,
}

impl Configuration {
    pub fn is_done(&self) -> bool {
        self.actors.iter().all(|e| e.is_value())
    }

    pub fn sends(&self) -> u64 {
        self.counts.iter().filter(|((_, d, _), _)| *d == Dir::Send).map(|(_, n)| n).sum()
    }

    /// Type-level channel behind a value-level channel name.
    pub fn channel_of(&self, name: &Name) -> Option<&Name> {
        self.links.get(name)
    }
}

/// Where a runtime actor came from: the network component and, for actor
/// arrays, the member index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Origin {
    pub component: usize,
    pub member: Option<u64>,
}

/// An instantiated network.
#[derive(Clone, Debug)]
pub struct Instance {
    pub tenv: TypeEnv,
    pub venv: ValueEnv,
    pub flow: ProcFlowstate,
    pub config: Configuration,
    pub origins: Vec<Origin>,
    pub record: ProcFlowstate,
    pub sizes: Valuation,
}

impl Instance {
    /// Start another firing, carrying buffers and cells over.
    pub fn refire(&self, after: &Configuration) -> Configuration {
        Configuration {
            actors: self.config.actors.clone(),
            heap: after.heap.clone(),
            counts: CommCounts::new(),
            fault: after.fault,
            next_slot: after.next_slot.clone(),
            links: after.links.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstantiateError {
    MissingSize(Name),
    UnknownSize(Name),
    OutOfBounds { name: Name, value: u64, bound: String },
    BadCapacity { chan: Name, reason: String },
    NoValue(Name),
    BadBound(String),
    IllTyped(crate::diag::Diagnostics),
}

impl fmt::Display for InstantiateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstantiateError::MissingSize(n) => write!(f, "no value given for size parameter `{}`", n),
            InstantiateError::UnknownSize(n) => write!(f, "`{}` is not a size parameter", n),
            InstantiateError::OutOfBounds { name, value, bound } => {
                write!(f, "size `{}` = {} is outside 1..{}", name, value, bound)
            }
            InstantiateError::BadCapacity { chan, reason } => write!(f, "channel `{}`: {}", chan, reason),
            InstantiateError::NoValue(n) => write!(f, "value parameter `{}` has no runtime value", n),
            InstantiateError::BadBound(m) => f.write_str(m),
            InstantiateError::IllTyped(ds) => match ds.first() {
                Some(d) => write!(f, "{}", d),
                None => f.write_str("ill-typed network"),
            },
        }
    }
}

pub fn default_value(t: &SimpleType) -> Option<Expr> {
    match t {
        SimpleType::Integer => Some(Expr::int(0)),
        SimpleType::Boolean => Some(Expr::boolean(false)),
        SimpleType::Size(s) => Some(Expr::size_lit(s.closed_value()?)),
        SimpleType::Index(_) => Some(Expr::index_lit(1)),
        _ => None,
    }
}

fn eval_closed(e: &SizeExpr, val: &Valuation) -> Result<SizeValue, InstantiateError> {
    eval_size(e, val).map_err(|err| InstantiateError::BadBound(format!("cannot evaluate {}: {}", e, err)))
}

/// Build the initial configuration for the given size parameters.
pub fn instantiate(net: &Network, sizes: &Valuation) -> Result<Instance, InstantiateError> {
    let flow = &crate::typecheck::check_proc(&net.types, &net.values, &net.body).map_err(InstantiateError::IllTyped)?;
    let params: Vec<(&Name, &SizeExpr)> = net
        .types
        .iter()
        .filter_map(|(n, k)| match k {
            Kind::Size(b) => Some((n, b)),
            _ => None,
        })
        .collect();
    for n in sizes.keys() {
        if !params.iter().any(|(p, _)| *p == n) {
            return Err(InstantiateError::UnknownSize(n.clone()));
        }
    }
    for (n, b) in &params {
        let v = *sizes.get(*n).ok_or_else(|| InstantiateError::MissingSize((*n).clone()))?;
        let bound = eval_closed(b, sizes)?;
        if v == 0 || SizeValue::Finite(v) > bound {
            return Err(InstantiateError::OutOfBounds { name: (*n).clone(), value: v, bound: bound.to_string() });
        }
    }
    let num = |n: &Name| SizeExpr::Num(sizes[n]);

    let mut tenv = TypeEnv::new();
    for b in &net.types.bindings {
        let mut k = b.value.clone();
        for (p, _) in &params {
            k = k.subst_size(p, &num(p));
        }
        tenv.push_at(b.name.clone(), k, b.span);
    }
    let mut venv = ValueEnv::new();
    for b in &net.values.bindings {
        let mut t = b.value.clone();
        for (p, _) in &params {
            t = t.subst_size(p, &num(p));
        }
        venv.push_at(b.name.clone(), t, b.span);
    }
    let mut inst_flow = flow.clone();
    for (p, _) in &params {
        inst_flow = inst_flow.subst(p, &num(p));
    }

    let mut heap = Heap::default();
    for (name, kind) in tenv.iter() {
        let (delay, limit, bound) = match kind {
            Kind::Channel { delay, limit } => (*delay, limit, None),
            Kind::ChannelArray { bound, delay, limit } => (*delay, limit, Some(bound)),
            _ => continue,
        };
        let cap = match eval_closed(limit, sizes)? {
            SizeValue::Finite(k) => k,
            SizeValue::Infinite if delay => {
                return Err(InstantiateError::BadCapacity { chan: name.clone(), reason: "delay channel with unbounded capacity".into() })
            }
            SizeValue::Infinite => u64::MAX,
        };
        let mut buf = Buffer::new(cap);
        if delay {
            if cap == 0 {
                return Err(InstantiateError::BadCapacity { chan: name.clone(), reason: "delay channel with capacity 0".into() });
            }
            let payload = venv
                .iter()
                .find_map(|(_, t)| match t {
                    ValueType::Chan { channel, payload, .. } | ValueType::ChanArray { channel, payload, .. } if channel == name => {
                        Some(payload.clone())
                    }
                    _ => None,
                })
                .unwrap_or(SimpleType::Integer);
            let v = default_value(&payload).ok_or_else(|| InstantiateError::BadCapacity {
                chan: name.clone(),
                reason: format!("no default value for payload type {}", payload),
            })?;
            for _ in 0..cap {
                buf.push(v.clone());
            }
        }
        match bound {
            None => {
                heap.channels.insert(name.clone(), buf);
            }
            Some(b) => {
                let n = eval_closed(b, sizes)?
                    .finite()
                    .ok_or_else(|| InstantiateError::BadBound(format!("array `{}` has unbounded length", name)))?;
                heap.arrays.insert(name.clone(), alloc::vec![buf; n as usize]);
            }
        }
    }

    let mut body = net.body.clone();
    for (p, _) in &params {
        body = subst_size_proc(&body, p, &num(p));
    }
    let mut links = BTreeMap::new();
    for (name, t) in venv.iter() {
        match t {
            ValueType::Chan { channel, .. } | ValueType::ChanArray { channel, .. } => {
                links.insert(name.clone(), channel.clone());
            }
            ValueType::Simple(SimpleType::Size(s)) => {
                let n = s.closed_value().ok_or_else(|| InstantiateError::NoValue(name.clone()))?;
                body = subst_value_proc(&body, name, &Expr::size_lit(n));
            }
            ValueType::Simple(_) => {
                if proc_mentions(&body, name) {
                    return Err(InstantiateError::NoValue(name.clone()));
                }
            }
        }
    }

    let mut actors = Vec::new();
    let mut origins = Vec::new();
    for (i, p) in body.components().into_iter().enumerate() {
        match &p.kind {
            ProcKind::Stop => {}
            ProcKind::Actor(e) => {
                actors.push(Arc::new(e.clone()));
                origins.push(Origin { component: i, member: None });
            }
            ProcKind::Comp { ty_var, var, lo, bound, body } => {
                let hi = bound
                    .size_payload()
                    .ok_or_else(|| InstantiateError::BadBound(format!("actor bound {} is not a size", bound)))?;
                for k in *lo..=(hi.max(0) as u64) {
                    let e = subst_size_expr(&subst_value(body, var, &Expr::index_lit(k)), ty_var, &SizeExpr::Num(k));
                    actors.push(Arc::new(e));
                    origins.push(Origin { component: i, member: Some(k) });
                }
            }
            ProcKind::Par(..) => unreachable!("components are flattened"),
        }
    }
    let n = actors.len();
    let config = Configuration {
        actors,
        heap,
        counts: CommCounts::new(),
        fault: None,
        next_slot: alloc::vec![0; n],
        links: Arc::new(links),
    };
    Ok(Instance { tenv, venv, flow: inst_flow, config, origins, record: ProcFlowstate::Empty, sizes: sizes.clone() })
}

fn mentions(e: &Expr, x: &Name) -> bool {
    let mut found = false;
    let _ = map_children(e, &mut |c| {
        found |= mentions(c, x);
        c.clone()
    });
    found || matches!(&e.kind, ExprKind::Var(y) if y == x)
}

fn proc_mentions(p: &Proc, x: &Name) -> bool {
    match &p.kind {
        ProcKind::Stop => false,
        ProcKind::Actor(e) => mentions(e, x),
        ProcKind::Comp { bound, body, .. } => mentions(bound, x) || mentions(body, x),
        ProcKind::Par(a, b) => proc_mentions(a, x) || proc_mentions(b, x),
    }
}

// Reduction.

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Stepped(Label),
    Blocked,
    Done,
    Error(String),
}

enum R {
    Step(Label),
    Blocked,
    Value,
    Error(String),
}

struct Ctx<'a> {
    actor: u32,
    heap: &'a mut Heap,
    counts: &'a mut CommCounts,
    next_slot: &'a mut u32,
    links: &'a BTreeMap<Name, Name>,
    fault: Option<FaultPlan>,
}

fn number(v: &Expr) -> Option<i64> {
    match v.kind {
        ExprKind::Int(n) => Some(n),
        _ => v.size_payload(),
    }
}

fn replace(e: &mut Expr, kind: ExprKind) -> R {
    e.kind = kind;
    R::Step(Label::Internal)
}

/// Reduce the leftmost non-value among `parts`, in order.
fn reduce_first(parts: &mut [&mut Expr], cx: &mut Ctx<'_>) -> Option<R> {
    for p in parts.iter_mut() {
        match reduce(p, cx) {
            R::Value => continue,
            r => return Some(r),
        }
    }
    None
}

fn reduce(e: &mut Expr, cx: &mut Ctx<'_>) -> R {
    if e.is_value() {
        return R::Value;
    }
    match &mut e.kind {
        ExprKind::Var(x) => R::Error(format!("unbound variable `{}` at run time", x)),
        ExprKind::MkSize(_) | ExprKind::MkIndex(_) => R::Error(format!("{} is not a literal", e)),
        ExprKind::FromSize(x) | ExprKind::FromIndex(x) => {
            if let Some(r) = reduce_first(&mut [&mut **x], cx) {
                return r;
            }
            match x.size_payload() {
                Some(n) => replace(e, ExprKind::Int(n)),
                None => R::Error(format!("cannot project {}", x)),
            }
        }
        ExprKind::App(f, args) => {
            let mut parts: Vec<&mut Expr> = core::iter::once(&mut **f).chain(args.iter_mut()).collect();
            if let Some(r) = reduce_first(&mut parts, cx) {
                return r;
            }
            let ExprKind::Fun(abs) = &f.kind else {
                return R::Error(format!("cannot apply {}", f));
            };
            if abs.params.len() != args.len() {
                return R::Error(format!("arity mismatch applying {}", f));
            }
            let mut body = abs.body.clone();
            for ((x, _), v) in abs.params.iter().zip(args.iter()) {
                body = subst_value(&body, x, v);
            }
            replace(e, body.kind)
        }
        ExprKind::Let { name, bound, body, .. } => {
            if let Some(r) = reduce_first(&mut [&mut **bound], cx) {
                return r;
            }
            let next = subst_value(body, name, bound);
            replace(e, next.kind)
        }
        ExprKind::If { cond, then_branch, else_branch } => {
            if let Some(r) = reduce_first(&mut [&mut **cond], cx) {
                return r;
            }
            match cond.kind {
                ExprKind::Bool(true) => {
                    let k = then_branch.kind.clone();
                    replace(e, k)
                }
                ExprKind::Bool(false) => {
                    let k = else_branch.kind.clone();
                    replace(e, k)
                }
                _ => R::Error(format!("condition {} is not a boolean", cond)),
            }
        }
        ExprKind::When { op, lhs, rhs, body } => {
            if let Some(r) = reduce_first(&mut [&mut **lhs, &mut **rhs], cx) {
                return r;
            }
            let (Some(a), Some(b)) = (number(lhs), number(rhs)) else {
                return R::Error(format!("guard operands {} and {} are not numbers", lhs, rhs));
            };
            let holds = match op {
                GuardOp::Divides if a == 0 => b == 0,
                GuardOp::Divides => b % a == 0,
                GuardOp::AtMost => a <= b,
            };
            let k = if holds { body.kind.clone() } else { ExprKind::Int(0) };
            replace(e, k)
        }
        ExprKind::For { ty_var, var, lo, bound, body } => {
            if let Some(r) = reduce_first(&mut [&mut **bound], cx) {
                return r;
            }
            let Some(n) = bound.size_payload() else {
                return R::Error(format!("loop bound {} is not a size", bound));
            };
            if (*lo as i64) > n {
                return replace(e, ExprKind::Int(0));
            }
            let m = *lo;
            let iter = subst_size_expr(&subst_value(body, var, &Expr::index_lit(m)), ty_var, &SizeExpr::Num(m));
            let rest = Expr {
                kind: ExprKind::For { ty_var: ty_var.clone(), var: var.clone(), lo: m + 1, bound: bound.clone(), body: body.clone() },
                span: e.span,
            };
            let seq = Expr::seq(iter, rest);
            replace(e, seq.kind)
        }
        ExprKind::Ref(x) => {
            if let Some(r) = reduce_first(&mut [&mut **x], cx) {
                return r;
            }
            let loc = Loc { actor: cx.actor, slot: *cx.next_slot };
            *cx.next_slot += 1;
            cx.heap.cells.insert(loc, (**x).clone());
            replace(e, ExprKind::Loc(loc))
        }
        ExprKind::Deref(x) => {
            if let Some(r) = reduce_first(&mut [&mut **x], cx) {
                return r;
            }
            match x.kind {
                ExprKind::Loc(l) => match cx.heap.cells.get(&l) {
                    Some(v) => {
                        let k = v.kind.clone();
                        replace(e, k)
                    }
                    None => R::Error(format!("dangling location {}", l)),
                },
                _ => R::Error(format!("cannot dereference {}", x)),
            }
        }
        ExprKind::Assign(a, b) => {
            if let Some(r) = reduce_first(&mut [&mut **a, &mut **b], cx) {
                return r;
            }
            match a.kind {
                ExprKind::Loc(l) if cx.heap.cells.contains_key(&l) => {
                    cx.heap.cells.insert(l, (**b).clone());
                    let k = b.kind.clone();
                    replace(e, k)
                }
                _ => R::Error(format!("cannot assign through {}", a)),
            }
        }
        ExprKind::Recv { chan, index } => {
            if let Some(ix) = index {
                if let Some(r) = reduce_first(&mut [&mut **ix], cx) {
                    return r;
                }
            }
            let Some(t) = cx.links.get(chan).cloned() else {
                return R::Error(format!("unknown channel `{}`", chan));
            };
            let k = match index_value(index) {
                Ok(k) => k,
                Err(m) => return R::Error(m),
            };
            let Some(buf) = cx.heap.buffer_mut(&t, k) else {
                return R::Error(format!("no buffer for {}", t));
            };
            let Some(v) = buf.pop() else {
                return R::Blocked;
            };
            *cx.counts.entry((t.clone(), Dir::Recv, k)).or_insert(0) += 1;
            e.kind = v.kind;
            R::Step(Label::Comm(Event { dir: Dir::Recv, chan: t, index: k.map(SizeExpr::Num) }))
        }
        ExprKind::Send { chan, index, payload } => {
            let mut parts: Vec<&mut Expr> = index.iter_mut().map(|b| &mut **b).collect();
            parts.push(&mut **payload);
            if let Some(r) = reduce_first(&mut parts, cx) {
                return r;
            }
            let Some(t) = cx.links.get(chan).cloned() else {
                return R::Error(format!("unknown channel `{}`", chan));
            };
            let k = match index_value(index) {
                Ok(k) => k,
                Err(m) => return R::Error(m),
            };
            let nth = cx.counts.iter().filter(|((_, d, _), _)| *d == Dir::Send).map(|(_, n)| n).sum::<u64>() + 1;
            let drop = match cx.fault {
                Some(FaultPlan::DropNth(n)) => nth == n,
                Some(FaultPlan::DropEvery(n)) => n > 0 && nth % n == 0,
                None => false,
            };
            let Some(buf) = cx.heap.buffer_mut(&t, k) else {
                return R::Error(format!("no buffer for {}", t));
            };
            if buf.is_full() {
                return R::Blocked;
            }
            if !drop {
                buf.push((**payload).clone());
            }
            *cx.counts.entry((t.clone(), Dir::Send, k)).or_insert(0) += 1;
            e.kind = ExprKind::Int(0);
            R::Step(Label::Comm(Event { dir: Dir::Send, chan: t, index: k.map(SizeExpr::Num) }))
        }
        ExprKind::Binary { op, lhs, rhs } => {
            if let Some(r) = reduce_first(&mut [&mut **lhs, &mut **rhs], cx) {
                return r;
            }
            match binary(*op, lhs, rhs) {
                Ok(k) => replace(e, k),
                Err(m) => R::Error(m),
            }
        }
        ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Loc(_) | ExprKind::Fun(_) => R::Value,
    }
}

fn index_value(index: &Option<Box<Expr>>) -> Result<Option<u64>, String> {
    match index {
        None => Ok(None),
        Some(ix) => match ix.kind {
            ExprKind::MkIndex(_) => match ix.size_payload() {
                Some(k) if k >= 1 => Ok(Some(k as u64)),
                _ => Err(format!("bad array index {}", ix)),
            },
            _ => Err(format!("array index {} is not an index value", ix)),
        },
    }
}

fn binary(op: BinOp, lhs: &Expr, rhs: &Expr) -> Result<ExprKind, String> {
    if op == BinOp::Eq {
        if let (ExprKind::Bool(a), ExprKind::Bool(b)) = (&lhs.kind, &rhs.kind) {
            return Ok(ExprKind::Bool(a == b));
        }
    }
    let (ExprKind::Int(a), ExprKind::Int(b)) = (&lhs.kind, &rhs.kind) else {
        return Err(format!("`{}` applied to {} and {}", op.symbol(), lhs, rhs));
    };
    let (a, b) = (*a, *b);
    let overflow = || format!("integer overflow in {} {} {}", a, op.symbol(), b);
    Ok(match op {
        BinOp::Add => ExprKind::Int(a.checked_add(b).ok_or_else(overflow)?),
        BinOp::Sub => ExprKind::Int(a.checked_sub(b).ok_or_else(overflow)?),
        BinOp::Mul => ExprKind::Int(a.checked_mul(b).ok_or_else(overflow)?),
        BinOp::Div if b == 0 => return Err("division by zero".into()),
        BinOp::Div => ExprKind::Int(a.checked_div_euclid(b).ok_or_else(overflow)?),
        BinOp::Eq => ExprKind::Bool(a == b),
        BinOp::Le => ExprKind::Bool(a <= b),
        BinOp::Lt => ExprKind::Bool(a < b),
    })
}

/// Step actor `choice`.
pub fn step(cfg: &mut Configuration, choice: usize) -> StepOutcome {
    let Some(slot) = cfg.actors.get_mut(choice) else {
        return StepOutcome::Error(format!("no actor {}", choice));
    };
    if slot.is_value() {
        return StepOutcome::Done;
    }
    let snapshot = slot.clone();
    let e = Arc::make_mut(slot);
    let mut cx = Ctx {
        actor: choice as u32,
        heap: &mut cfg.heap,
        counts: &mut cfg.counts,
        next_slot: &mut cfg.next_slot[choice],
        links: &cfg.links,
        fault: cfg.fault,
    };
    match reduce(e, &mut cx) {
        R::Step(l) => StepOutcome::Stepped(l),
        R::Value => StepOutcome::Done,
        R::Blocked => {
            cfg.actors[choice] = snapshot;
            StepOutcome::Blocked
        }
        R::Error(m) => StepOutcome::Error(m),
    }
}

/// Run internal steps of every actor until each is blocked on a
/// communication or finished.
pub fn settle(cfg: &mut Configuration) -> Result<usize, String> {
    let mut steps = 0;
    for a in 0..cfg.actors.len() {
        steps += settle_actor(cfg, a)?;
    }
    Ok(steps)
}

fn settle_actor(cfg: &mut Configuration, a: usize) -> Result<usize, String> {
    let mut steps = 0;
    loop {
        let mut probe = cfg.clone();
        match step(&mut probe, a) {
            StepOutcome::Stepped(Label::Internal) => {
                *cfg = probe;
                steps += 1;
            }
            StepOutcome::Error(m) => return Err(m),
            _ => return Ok(steps),
        }
    }
}

/// Actors that can take a step, with the resulting configuration.
pub fn successors(cfg: &Configuration) -> Result<Vec<(usize, Label, Configuration)>, String> {
    let mut out = Vec::new();
    for a in 0..cfg.actors.len() {
        let mut next = cfg.clone();
        match step(&mut next, a) {
            StepOutcome::Stepped(l) => out.push((a, l, next)),
            StepOutcome::Error(m) => return Err(format!("actor {}: {}", a, m)),
            _ => {}
        }
    }
    Ok(out)
}

// Schedulers.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheduler {
    RoundRobin,
    Random(u64),
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheduler::RoundRobin => f.write_str("roundRobin"),
            Scheduler::Random(s) => write!(f, "random({})", s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub step: usize,
    pub actor: usize,
    pub label: Label,
    pub buffers: Vec<(String, usize, u64)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeadlockReport {
    pub residual: Vec<(usize, String)>,
    pub buffers: Vec<(String, String)>,
}

impl DeadlockReport {
    pub fn of(cfg: &Configuration) -> Self {
        DeadlockReport {
            residual: cfg
                .actors
                .iter()
                .enumerate()
                .filter(|(_, e)| !e.is_value())
                .map(|(i, e)| (i, e.to_string()))
                .collect(),
            buffers: cfg
                .heap
                .channels
                .iter()
                .map(|(c, b)| (c.to_string(), b.to_string()))
                .chain(cfg.heap.arrays.iter().flat_map(|(c, bs)| {
                    bs.iter().enumerate().map(move |(i, b)| (format!("{}[{}]", c, i + 1), b.to_string()))
                }))
                .collect(),
        }
    }
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "deadlock:")?;
        for (i, e) in &self.residual {
            writeln!(f, "  actor {}: {}", i, e)?;
        }
        for (c, b) in &self.buffers {
            writeln!(f, "  {} = {}", c, b)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Complete,
    Deadlock(DeadlockReport),
    Error(String),
    StepLimit,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Vec<TraceStep>,
    pub outcome: RunOutcome,
    pub last: Configuration,
}

pub const DEFAULT_STEP_LIMIT: usize = 1_000_000;

/// Drive `cfg` to completion with one scheduler. `observe` sees every
/// configuration transition.
pub fn run_observed(
    cfg: &Configuration,
    scheduler: Scheduler,
    limit: usize,
    observe: &mut dyn FnMut(usize, &Configuration, usize, &Label, &Configuration),
) -> RunResult {
    let mut cur = cfg.clone();
    let mut trace = Vec::new();
    let mut rng = match scheduler {
        Scheduler::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Scheduler::RoundRobin => None,
    };
    let mut pointer = 0usize;
    let n = cur.actors.len();
    loop {
        if trace.len() >= limit {
            return RunResult { trace, outcome: RunOutcome::StepLimit, last: cur };
        }
        let chosen = match &mut rng {
            None => {
                let mut found = None;
                for off in 0..n {
                    let a = (pointer + off) % n;
                    let mut next = cur.clone();
                    match step(&mut next, a) {
                        StepOutcome::Stepped(l) => {
                            found = Some((a, l, next));
                            break;
                        }
                        StepOutcome::Error(m) => {
                            return RunResult { trace, outcome: RunOutcome::Error(format!("actor {}: {}", a, m)), last: cur }
                        }
                        _ => {}
                    }
                }
                found
            }
            Some(rng) => match successors(&cur) {
                Ok(mut succ) if !succ.is_empty() => {
                    let i = rng.gen_range(0..succ.len());
                    Some(succ.swap_remove(i))
                }
                Ok(_) => None,
                Err(m) => return RunResult { trace, outcome: RunOutcome::Error(m), last: cur },
            },
        };
        match chosen {
            Some((a, label, next)) => {
                observe(trace.len(), &cur, a, &label, &next);
                pointer = a + 1;
                trace.push(TraceStep { step: trace.len(), actor: a, label, buffers: next.heap.occupancy() });
                cur = next;
            }
            None if cur.is_done() => return RunResult { trace, outcome: RunOutcome::Complete, last: cur },
            None => {
                let report = DeadlockReport::of(&cur);
                return RunResult { trace, outcome: RunOutcome::Deadlock(report), last: cur };
            }
        }
    }
}

pub fn run(cfg: &Configuration, scheduler: Scheduler) -> RunResult {
    run_observed(cfg, scheduler, DEFAULT_STEP_LIMIT, &mut |_, _, _, _, _| {})
}

/// Observable result of a complete execution.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FinalState {
    pub cells: BTreeMap<Loc, Expr>,
    pub counts: CommCounts,
}

#[derive(Clone, Debug, Default)]
pub struct ExploreReport {
    pub states: usize,
    pub finals: BTreeSet<FinalState>,
    pub deadlocks: Vec<Configuration>,
    pub errors: Vec<String>,
    pub max_occupancy_ok: bool,
    pub truncated: bool,
}

impl ExploreReport {
    pub fn all_complete(&self) -> bool {
        !self.finals.is_empty() && self.deadlocks.is_empty() && self.errors.is_empty() && !self.truncated
    }

    pub fn always_deadlocks(&self) -> bool {
        self.finals.is_empty() && !self.deadlocks.is_empty() && !self.truncated
    }
}

fn within_capacity(h: &Heap) -> bool {
    h.occupancy().iter().all(|(_, n, c)| (*n as u64) <= *c)
}

/// Explore every interleaving of communications, memoized on
/// configurations. Internal steps are local to an actor and commute with
/// all other steps, so they are taken eagerly.
pub fn explore(cfg: &Configuration, max_states: usize) -> ExploreReport {
    let mut report = ExploreReport { max_occupancy_ok: true, ..Default::default() };
    let mut seen: BTreeSet<Configuration> = BTreeSet::new();
    let mut stack = Vec::new();
    let mut start = cfg.clone();
    if let Err(m) = settle(&mut start) {
        report.errors.push(m);
        return report;
    }
    seen.insert(start.clone());
    stack.push(start);
    while let Some(cur) = stack.pop() {
        report.states += 1;
        report.max_occupancy_ok &= within_capacity(&cur.heap);
        let succ = match successors(&cur) {
            Ok(s) => s,
            Err(m) => {
                report.errors.push(m);
                continue;
            }
        };
        if succ.is_empty() {
            if cur.is_done() {
                report.finals.insert(FinalState { cells: cur.heap.cells.clone(), counts: cur.counts.clone() });
            } else if report.deadlocks.len() < 8 {
                report.deadlocks.push(cur);
            } else {
                report.deadlocks.push(cur);
                report.deadlocks.truncate(8);
            }
            continue;
        }
        for (a, _, mut next) in succ {
            // Only the actor that moved can have new internal steps.
            if let Err(m) = settle_actor(&mut next, a) {
                report.errors.push(m);
                continue;
            }
            if seen.len() >= max_states {
                report.truncated = true;
                return report;
            }
            if seen.insert(next.clone()) {
                stack.push(next);
            }
        }
    }
    report
}

/// Runtime actor flowstates, one per actor of an instance.
pub fn actor_flows(inst: &Instance) -> Vec<ActorFlowstate> {
    let comps = inst.flow.components();
    inst.origins
        .iter()
        .map(|o| match (comps.get(o.component), o.member) {
            (Some(ProcFlowstate::Actor(a)), _) => a.clone(),
            (Some(ProcFlowstate::ActorArray { var, body, .. }), Some(k)) => body.subst(var, &SizeExpr::Num(k)).simplify(),
            _ => ActorFlowstate::Empty,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(actors: Vec<Expr>, chans: &[(&str, u64)]) -> Configuration {
        let mut heap = Heap::default();
        let mut links = BTreeMap::new();
        for (c, cap) in chans {
            heap.channels.insert(Name::new(c), Buffer::new(*cap));
            links.insert(Name::new(c), Name::new(c));
        }
        let n = actors.len();
        let actors = actors.into_iter().map(Arc::new).collect();
        Configuration { actors, heap, counts: CommCounts::new(), fault: None, next_slot: alloc::vec![0; n], links: Arc::new(links) }
    }

    fn send(c: &str, v: i64) -> Expr {
        Expr::new(ExprKind::Send { chan: Name::new(c), index: None, payload: Box::new(Expr::int(v)) })
    }

    fn recv(c: &str) -> Expr {
        Expr::new(ExprKind::Recv { chan: Name::new(c), index: None })
    }

    #[test]
    fn send_and_receive() {
        let mut cfg = cfg_with(alloc::vec![send("c", 7), recv("c")], &[("c", 4)]);
        assert_eq!(step(&mut cfg, 1), StepOutcome::Blocked);
        assert_eq!(step(&mut cfg, 0), StepOutcome::Stepped(Label::Comm(Event::send("c"))));
        assert_eq!(cfg.heap.channels[&Name::new("c")].len(), 1);
        assert_eq!(step(&mut cfg, 1), StepOutcome::Stepped(Label::Comm(Event::recv("c"))));
        assert_eq!(*cfg.actors[1], Expr::int(7));
        assert!(cfg.is_done());
    }

    #[test]
    fn full_buffer_blocks() {
        let mut cfg = cfg_with(alloc::vec![Expr::seq(send("c", 1), send("c", 2))], &[("c", 1)]);
        assert!(matches!(step(&mut cfg, 0), StepOutcome::Stepped(_)));
        assert!(matches!(step(&mut cfg, 0), StepOutcome::Stepped(Label::Internal)));
        assert_eq!(step(&mut cfg, 0), StepOutcome::Blocked);
        assert!(matches!(run(&cfg, Scheduler::RoundRobin).outcome, RunOutcome::Deadlock(_)));
    }

    #[test]
    fn projections_and_loops() {
        let mut cfg = cfg_with(alloc::vec![Expr::new(ExprKind::FromSize(Box::new(Expr::size_lit(8))))], &[]);
        step(&mut cfg, 0);
        assert_eq!(*cfg.actors[0], Expr::int(8));
        let body = Expr::new(ExprKind::Assign(
            Box::new(Expr::var("r")),
            Box::new(Expr::new(ExprKind::Binary {
                op: BinOp::Add,
                lhs: Box::new(Expr::new(ExprKind::Deref(Box::new(Expr::var("r"))))),
                rhs: Box::new(Expr::new(ExprKind::FromIndex(Box::new(Expr::var("x"))))),
            })),
        ));
        let lp = Expr::new(ExprKind::For {
            ty_var: Name::new("t"),
            var: Name::new("x"),
            lo: 1,
            bound: Box::new(Expr::size_lit(4)),
            body: Box::new(body),
        });
        let prog = Expr::new(ExprKind::Let {
            name: Name::new("r"),
            annot: None,
            bound: Box::new(Expr::new(ExprKind::Ref(Box::new(Expr::int(0))))),
            body: Box::new(Expr::seq(lp, Expr::new(ExprKind::Deref(Box::new(Expr::var("r")))))),
        });
        let r = run(&cfg_with(alloc::vec![prog], &[]), Scheduler::RoundRobin);
        assert_eq!(r.outcome, RunOutcome::Complete);
        assert_eq!(*r.last.actors[0], Expr::int(10));
    }

    #[test]
    fn exhaustive_cycle() {
        let a = Expr::seq(recv("c"), send("d", 1));
        let b = Expr::seq(recv("d"), send("c", 1));
        let cfg = cfg_with(alloc::vec![a.clone(), b.clone()], &[("c", 1), ("d", 1)]);
        assert!(explore(&cfg, 10_000).always_deadlocks());
        let mut cfg = cfg_with(alloc::vec![a, b], &[("c", 1), ("d", 1)]);
        cfg.heap.channels.get_mut(&Name::new("c")).unwrap().push(Expr::int(0));
        let rep = explore(&cfg, 10_000);
        assert!(rep.all_complete());
    }
}
