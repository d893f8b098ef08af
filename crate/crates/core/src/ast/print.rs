//! Concrete syntax printer. The output is accepted by the parser in the
//! `sdata` crate and re-parses to an equal tree.

use core::fmt::{self, Display, Formatter, Write};

use super::*;

impl Display for Kind {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Type => f.write_str("Type"),
            Kind::Size(b) => write!(f, "Size({})", b),
            Kind::Channel { delay, limit } => write!(f, "Channel({}, {})", *delay as u8, limit),
            Kind::ChannelArray { bound, delay, limit } => {
                write!(f, "ChannelArray({}, {}, {})", bound, *delay as u8, limit)
            }
        }
    }
}

impl Display for Polarity {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::In => "+",
            Polarity::Out => "-",
            Polarity::Both => "+-",
        })
    }
}

impl Display for SimpleType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SimpleType::Boolean => f.write_str("Boolean"),
            SimpleType::Integer => f.write_str("Integer"),
            SimpleType::Size(t) => write!(f, "Size({})", t),
            SimpleType::Index(t) => write!(f, "Index({})", t),
            SimpleType::Ref(t) => write!(f, "Ref({})", t),
            SimpleType::Proc(p) => {
                f.write_str("Fn(")?;
                for (i, t) in p.params.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", t)?;
                }
                write!(f, ") [{}] [{}] -> {}", p.latent, p.rest, p.result)
            }
        }
    }
}

impl Display for ValueType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Simple(t) => write!(f, "{}", t),
            ValueType::Chan { polarity, channel, payload } => {
                write!(f, "Chan({}, {}, {})", polarity, channel, payload)
            }
            ValueType::ChanArray { polarity, channel, payload, bound } => {
                write!(f, "ChanArray({}, {}, {}, {})", polarity, channel, payload, bound)
            }
        }
    }
}

impl Display for Event {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let d = match self.dir {
            Dir::Send => '!',
            Dir::Recv => '?',
        };
        write!(f, "{}{}", self.chan, d)?;
        if let Some(i) = &self.index {
            write!(f, "[{}]", i)?;
        }
        Ok(())
    }
}

impl Display for Iter {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{} in {}..{}", self.var, self.lo, self.hi)
    }
}

impl Display for Guard {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Divides { divisor, subject } => write!(f, "{} | {}", divisor, subject),
            Guard::AtMost { subject, bound } => write!(f, "{} <= {}", subject, bound),
        }
    }
}

impl Display for Comprehension {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if let [it] = self.iters.as_slice() {
            let anon = it.var.as_str() == ANON_ITER && it.lo == SizeExpr::Num(1);
            if anon && self.guards.is_empty() && !self.event.index.as_ref().is_some_and(|i| i.mentions(&it.var)) {
                return write!(f, "<{}>{}", it.hi, self.event);
            }
        }
        write!(f, "{}", self.event)?;
        if self.iters.is_empty() && self.guards.is_empty() {
            return Ok(());
        }
        f.write_char('<')?;
        let mut first = true;
        for it in &self.iters {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{}", it)?;
        }
        for g in &self.guards {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{}", g)?;
        }
        f.write_char('>')
    }
}

impl Display for ActorFlowstate {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            ActorFlowstate::Empty => f.write_str("eps"),
            ActorFlowstate::Comp(c) => write!(f, "{}", c),
            ActorFlowstate::Seq(a, b) => {
                write!(f, "{} ; ", a)?;
                if matches!(**b, ActorFlowstate::Seq(..)) {
                    write!(f, "({})", b)
                } else {
                    write!(f, "{}", b)
                }
            }
        }
    }
}

impl Display for ProcFlowstate {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            ProcFlowstate::Empty => f.write_str("none"),
            ProcFlowstate::Actor(a) => write!(f, "{}", a),
            ProcFlowstate::ActorArray { var, lo, hi, body } => {
                write!(f, "each ({} in {}..{}) {{ {} }}", var, lo, hi, body)
            }
            ProcFlowstate::Par(a, b) => {
                write!(f, "{} || ", a)?;
                if matches!(**b, ProcFlowstate::Par(..)) {
                    write!(f, "({})", b)
                } else {
                    write!(f, "{}", b)
                }
            }
        }
    }
}

impl Display for Loc {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "loc({}, {})", self.actor, self.slot)
    }
}

// Expression precedence levels, loosest first.
const LOW: u8 = 0;
const CMP: u8 = 1;
const ADD: u8 = 2;
const MUL: u8 = 3;
const UNARY: u8 = 4;
const POSTFIX: u8 = 5;
const ATOM: u8 = 6;

fn level(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::If { .. }
        | ExprKind::When { .. }
        | ExprKind::For { .. }
        | ExprKind::Fun(_)
        | ExprKind::Assign(..) => LOW,
        ExprKind::Binary { op, .. } => match op {
            BinOp::Eq | BinOp::Le | BinOp::Lt => CMP,
            BinOp::Add | BinOp::Sub => ADD,
            BinOp::Mul | BinOp::Div => MUL,
        },
        ExprKind::Int(n) if *n < 0 => UNARY,
        ExprKind::Deref(_) => UNARY,
        ExprKind::App(..) => POSTFIX,
        _ => ATOM,
    }
}

struct At<'a>(&'a Expr, u8);

impl Display for At<'_> {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if level(self.0) < self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

fn write_block(f: &mut Formatter<'_>, e: &Expr) -> fmt::Result {
    f.write_str("{ ")?;
    let mut cur = e;
    while let ExprKind::Let { name, annot, bound, body } = &cur.kind {
        match annot {
            Some(t) => write!(f, "{} {} = {}; ", t, name, At(bound, LOW))?,
            None if name.as_str() == SEQ_VAR => write!(f, "{}; ", At(bound, LOW))?,
            None => write!(f, "let {} = {}; ", name, At(bound, LOW))?,
        }
        cur = body;
    }
    write!(f, "{} }}", At(cur, LOW))
}

fn write_index(f: &mut Formatter<'_>, chan: &Name, index: &Option<Box<Expr>>) -> fmt::Result {
    write!(f, "{}", chan)?;
    if let Some(i) = index {
        write!(f, "[{}]", i)?;
    }
    Ok(())
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Int(n) => write!(f, "{}", n),
            ExprKind::Bool(b) => write!(f, "{}", b),
            ExprKind::Var(v) => write!(f, "{}", v),
            ExprKind::Loc(l) => write!(f, "{}", l),
            ExprKind::MkSize(e) => write!(f, "size({})", e),
            ExprKind::MkIndex(e) => write!(f, "index({})", e),
            ExprKind::FromSize(e) => write!(f, "fromSize({})", e),
            ExprKind::FromIndex(e) => write!(f, "fromIndex({})", e),
            ExprKind::Fun(a) => {
                f.write_str("fun (")?;
                for (i, (x, t)) in a.params.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}: {}", x, t)?;
                }
                write!(f, ") [{}] [{}] => {}", a.latent, a.rest, At(&a.body, LOW))
            }
            ExprKind::App(g, args) => {
                write!(f, "{}(", At(g, POSTFIX))?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", a)?;
                }
                f.write_char(')')
            }
            ExprKind::Let { .. } => write_block(f, self),
            ExprKind::If { cond, then_branch, else_branch } => write!(
                f,
                "if {} then {} else {}",
                At(cond, CMP),
                At(then_branch, CMP),
                At(else_branch, LOW)
            ),
            ExprKind::When { op, lhs, rhs, body } => {
                let sym = match op {
                    GuardOp::Divides => "|",
                    GuardOp::AtMost => "<=",
                };
                write!(f, "when ({} {} {}) {}", At(lhs, ADD), sym, At(rhs, ADD), At(body, LOW))
            }
            ExprKind::For { ty_var, var, lo, bound, body } => {
                write!(f, "for ({}, {} in {}..{}) {}", ty_var, var, lo, bound, At(body, LOW))
            }
            ExprKind::Ref(e) => write!(f, "ref({})", e),
            ExprKind::Deref(e) => write!(f, "!{}", At(e, UNARY)),
            ExprKind::Assign(a, b) => write!(f, "{} := {}", At(a, CMP), At(b, LOW)),
            ExprKind::Recv { chan, index } => {
                f.write_str("recv(")?;
                write_index(f, chan, index)?;
                f.write_char(')')
            }
            ExprKind::Send { chan, index, payload } => {
                f.write_str("send(")?;
                write_index(f, chan, index)?;
                write!(f, ", {})", payload)
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let p = level(self);
                let (lp, rp) = if op.is_comparison() { (p + 1, p + 1) } else { (p, p + 1) };
                write!(f, "{} {} {}", At(lhs, lp), op.symbol(), At(rhs, rp))
            }
        }
    }
}

impl Display for Proc {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ProcKind::Stop => f.write_str("stop"),
            ProcKind::Actor(e) => write!(f, "actor {}", e),
            ProcKind::Comp { ty_var, var, lo, bound, body } => {
                write!(f, "actors ({}, {} in {}..{}) {}", ty_var, var, lo, bound, body)
            }
            ProcKind::Par(a, b) => {
                write!(f, "{}\n  || ", a)?;
                if matches!(b.kind, ProcKind::Par(..)) {
                    write!(f, "({})", b)
                } else {
                    write!(f, "{}", b)
                }
            }
        }
    }
}

impl Display for Network {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for b in &self.types.bindings {
            writeln!(f, "type {} : {};", b.name, b.value)?;
        }
        for b in &self.values.bindings {
            writeln!(f, "val {} : {};", b.name, b.value)?;
        }
        writeln!(f, "flow {{ {} }}", self.flow)?;
        writeln!(f, "network {{\n  {}\n}}", self.body)
    }
}
