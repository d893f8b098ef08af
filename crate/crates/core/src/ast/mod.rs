//! Abstract syntax for networks, types, flowstates and expressions.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::name::{Name, Span};
use crate::size::SizeExpr;

mod print;

/// Kinds classify type-level names.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Type,
    /// A FIFO with `limit` slots. Delayed channels start full.
    Channel { delay: bool, limit: SizeExpr },
    ChannelArray { bound: SizeExpr, delay: bool, limit: SizeExpr },
    /// Sizes at most the given bound.
    Size(SizeExpr),
}

/// `+` may receive, `-` may send.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    In,
    Out,
    Both,
}

impl Polarity {
    pub fn can_recv(self) -> bool {
        matches!(self, Polarity::In | Polarity::Both)
    }

    pub fn can_send(self) -> bool {
        matches!(self, Polarity::Out | Polarity::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SimpleType {
    Boolean,
    Integer,
    Size(SizeExpr),
    Index(SizeExpr),
    Ref(Box<SimpleType>),
    Proc(Box<ProcType>),
}

/// Function type: parameters, the flow of the body, the flow of the
/// surrounding actor after the call returns, and the result.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcType {
    pub params: Vec<SimpleType>,
    pub latent: ActorFlowstate,
    pub rest: ActorFlowstate,
    pub result: SimpleType,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueType {
    Simple(SimpleType),
    Chan { polarity: Polarity, channel: Name, payload: SimpleType },
    ChanArray { polarity: Polarity, channel: Name, payload: SimpleType, bound: SizeExpr },
}

impl ValueType {
    pub fn channel(&self) -> Option<&Name> {
        match self {
            ValueType::Simple(_) => None,
            ValueType::Chan { channel, .. } | ValueType::ChanArray { channel, .. } => Some(channel),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding<T> {
    pub name: Name,
    pub value: T,
    pub span: Span,
}

/// Ordered environment; later bindings shadow earlier ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Env<T> {
    pub bindings: Vec<Binding<T>>,
}

impl<T> Default for Env<T> {
    fn default() -> Self {
        Env { bindings: Vec::new() }
    }
}

impl<T> Env<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, name: &Name) -> Option<&T> {
        self.bindings.iter().rev().find(|b| &b.name == name).map(|b| &b.value)
    }

    pub fn contains(&self, name: &Name) -> bool {
        self.lookup(name).is_some()
    }

    pub fn push(&mut self, name: Name, value: T) {
        self.bindings.push(Binding { name, value, span: Span::default() });
    }

    pub fn push_at(&mut self, name: Name, value: T, span: Span) {
        self.bindings.push(Binding { name, value, span });
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.bindings.truncate(len);
    }

    pub fn iter(&self) -> impl core::iter::Iterator<Item = (&Name, &T)> {
        self.bindings.iter().map(|b| (&b.name, &b.value))
    }
}

pub type TypeEnv = Env<Kind>;
pub type ValueEnv = Env<ValueType>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dir {
    Send,
    Recv,
}

impl Dir {
    pub fn flip(self) -> Dir {
        match self {
            Dir::Send => Dir::Recv,
            Dir::Recv => Dir::Send,
        }
    }
}

/// A single communication on a type-level channel, optionally at an array
/// element.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub dir: Dir,
    pub chan: Name,
    pub index: Option<SizeExpr>,
}

impl Event {
    pub fn send(chan: &str) -> Self {
        Event { dir: Dir::Send, chan: Name::new(chan), index: None }
    }

    pub fn recv(chan: &str) -> Self {
        Event { dir: Dir::Recv, chan: Name::new(chan), index: None }
    }

    pub fn at(mut self, index: SizeExpr) -> Self {
        self.index = Some(index);
        self
    }

    pub fn complement(&self) -> Event {
        Event { dir: self.dir.flip(), ..self.clone() }
    }
}

/// `var in lo..hi`
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Iter {
    pub var: Name,
    pub lo: SizeExpr,
    pub hi: SizeExpr,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Guard {
    /// `divisor | subject`
    Divides { divisor: SizeExpr, subject: SizeExpr },
    /// `subject <= bound`
    AtMost { subject: SizeExpr, bound: SizeExpr },
}

impl Guard {
    pub fn subject(&self) -> &SizeExpr {
        match self {
            Guard::Divides { subject, .. } | Guard::AtMost { subject, .. } => subject,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Comprehension {
    pub event: Event,
    pub iters: Vec<Iter>,
    pub guards: Vec<Guard>,
}

/// Binder used by the `<n>e` shorthand.
pub const ANON_ITER: &str = "_";

impl Comprehension {
    pub fn single(event: Event) -> Self {
        Comprehension { event, iters: Vec::new(), guards: Vec::new() }
    }

    /// `n` repetitions of `event`.
    pub fn repeat(event: Event, n: SizeExpr) -> Self {
        Comprehension {
            event,
            iters: alloc::vec![Iter { var: Name::new(ANON_ITER), lo: SizeExpr::Num(1), hi: n }],
            guards: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorFlowstate {
    Empty,
    Comp(Comprehension),
    Seq(Box<ActorFlowstate>, Box<ActorFlowstate>),
}

impl ActorFlowstate {
    pub fn seq(a: ActorFlowstate, b: ActorFlowstate) -> ActorFlowstate {
        ActorFlowstate::Seq(Box::new(a), Box::new(b))
    }

    /// Sequence that drops empty operands.
    pub fn then(self, b: ActorFlowstate) -> ActorFlowstate {
        match (self, b) {
            (ActorFlowstate::Empty, b) => b,
            (a, ActorFlowstate::Empty) => a,
            (a, b) => ActorFlowstate::seq(a, b),
        }
    }

    pub fn comp(c: Comprehension) -> ActorFlowstate {
        ActorFlowstate::Comp(c)
    }

    /// Comprehensions in left-to-right order.
    pub fn comps(&self) -> Vec<&Comprehension> {
        let mut out = Vec::new();
        fn go<'a>(a: &'a ActorFlowstate, out: &mut Vec<&'a Comprehension>) {
            match a {
                ActorFlowstate::Empty => {}
                ActorFlowstate::Comp(c) => out.push(c),
                ActorFlowstate::Seq(x, y) => {
                    go(x, out);
                    go(y, out);
                }
            }
        }
        go(self, &mut out);
        out
    }

    pub fn from_comps(cs: impl IntoIterator<Item = Comprehension>) -> ActorFlowstate {
        cs.into_iter().fold(ActorFlowstate::Empty, |acc, c| acc.then(ActorFlowstate::Comp(c)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcFlowstate {
    Empty,
    Actor(ActorFlowstate),
    /// One actor per value of `var` in `lo..hi`.
    ActorArray { var: Name, lo: SizeExpr, hi: SizeExpr, body: ActorFlowstate },
    Par(Box<ProcFlowstate>, Box<ProcFlowstate>),
}

impl ProcFlowstate {
    pub fn par(a: ProcFlowstate, b: ProcFlowstate) -> ProcFlowstate {
        ProcFlowstate::Par(Box::new(a), Box::new(b))
    }

    /// Parallel components, flattened left to right.
    pub fn components(&self) -> Vec<&ProcFlowstate> {
        let mut out = Vec::new();
        fn go<'a>(p: &'a ProcFlowstate, out: &mut Vec<&'a ProcFlowstate>) {
            match p {
                ProcFlowstate::Par(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                other => out.push(other),
            }
        }
        go(self, &mut out);
        out
    }

    pub fn from_components(cs: impl IntoIterator<Item = ProcFlowstate>) -> ProcFlowstate {
        cs.into_iter()
            .reduce(ProcFlowstate::par)
            .unwrap_or(ProcFlowstate::Empty)
    }
}

/// A heap location, owned by one actor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Loc {
    pub actor: u32,
    pub slot: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Le,
    Lt,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Eq => "=",
            BinOp::Le => "<=",
            BinOp::Lt => "<",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Le | BinOp::Lt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GuardOp {
    Divides,
    AtMost,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Abstraction {
    pub params: Vec<(Name, SimpleType)>,
    pub latent: ActorFlowstate,
    pub rest: ActorFlowstate,
    pub body: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExprKind {
    Int(i64),
    Bool(bool),
    Var(Name),
    Loc(Loc),
    MkSize(Box<Expr>),
    MkIndex(Box<Expr>),
    FromSize(Box<Expr>),
    FromIndex(Box<Expr>),
    Fun(Box<Abstraction>),
    App(Box<Expr>, Vec<Expr>),
    Let { name: Name, annot: Option<SimpleType>, bound: Box<Expr>, body: Box<Expr> },
    If { cond: Box<Expr>, then_branch: Box<Expr>, else_branch: Box<Expr> },
    When { op: GuardOp, lhs: Box<Expr>, rhs: Box<Expr>, body: Box<Expr> },
    /// `for (ty_var, var in lo..bound) body`
    For { ty_var: Name, var: Name, lo: u64, bound: Box<Expr>, body: Box<Expr> },
    Ref(Box<Expr>),
    Deref(Box<Expr>),
    Assign(Box<Expr>, Box<Expr>),
    Recv { chan: Name, index: Option<Box<Expr>> },
    Send { chan: Name, index: Option<Box<Expr>>, payload: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

/// Name bound by `e1; e2` sequencing.
pub const SEQ_VAR: &str = "_";

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr { kind, span: Span::default() }
    }

    pub fn at(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }

    pub fn int(n: i64) -> Self {
        Expr::new(ExprKind::Int(n))
    }

    pub fn boolean(b: bool) -> Self {
        Expr::new(ExprKind::Bool(b))
    }

    pub fn var(name: &str) -> Self {
        Expr::new(ExprKind::Var(Name::new(name)))
    }

    pub fn size_lit(n: u64) -> Self {
        Expr::new(ExprKind::MkSize(Box::new(Expr::int(n as i64))))
    }

    pub fn index_lit(n: u64) -> Self {
        Expr::new(ExprKind::MkIndex(Box::new(Expr::int(n as i64))))
    }

    /// `a; b`
    pub fn seq(a: Expr, b: Expr) -> Self {
        let span = a.span;
        Expr::at(
            ExprKind::Let { name: Name::new(SEQ_VAR), annot: None, bound: Box::new(a), body: Box::new(b) },
            span,
        )
    }

    pub fn is_value(&self) -> bool {
        match &self.kind {
            ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Loc(_) | ExprKind::Fun(_) => true,
            ExprKind::MkSize(e) | ExprKind::MkIndex(e) => matches!(e.kind, ExprKind::Int(_)),
            _ => false,
        }
    }

    /// Numeric payload of `size(n)` / `index(n)` values.
    pub fn size_payload(&self) -> Option<i64> {
        match &self.kind {
            ExprKind::MkSize(e) | ExprKind::MkIndex(e) => match e.kind {
                ExprKind::Int(n) => Some(n),
                _ => None,
            },
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Proc {
    pub kind: ProcKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcKind {
    Stop,
    Actor(Expr),
    /// `actors (ty_var, var in lo..bound) body`
    Comp { ty_var: Name, var: Name, lo: u64, bound: Expr, body: Expr },
    Par(Box<Proc>, Box<Proc>),
}

impl Proc {
    pub fn new(kind: ProcKind) -> Self {
        Proc { kind, span: Span::default() }
    }

    pub fn par(a: Proc, b: Proc) -> Proc {
        Proc::new(ProcKind::Par(Box::new(a), Box::new(b)))
    }

    pub fn components(&self) -> Vec<&Proc> {
        let mut out = Vec::new();
        fn go<'a>(p: &'a Proc, out: &mut Vec<&'a Proc>) {
            match &p.kind {
                ProcKind::Par(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                _ => out.push(p),
            }
        }
        go(self, &mut out);
        out
    }
}

/// A closed program: type-level declarations, value-level names, the
/// declared flowstate and the process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub types: TypeEnv,
    pub values: ValueEnv,
    pub flow: ProcFlowstate,
    pub body: Proc,
}
