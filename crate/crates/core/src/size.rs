//! Size expressions: the type-level arithmetic that describes rates,
//! buffer limits and loop bounds.
//!
//! Variables range over positive integers. Subtraction is truncated at zero
//! and division rounds down.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::name::Name;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeExpr {
    Num(u64),
    Inf,
    Var(Name),
    Add(Box<SizeExpr>, Box<SizeExpr>),
    Sub(Box<SizeExpr>, Box<SizeExpr>),
    Mul(Box<SizeExpr>, Box<SizeExpr>),
    Div(Box<SizeExpr>, Box<SizeExpr>),
    Min(Box<SizeExpr>, Box<SizeExpr>),
}

impl SizeExpr {
    pub fn var(name: &str) -> Self {
        SizeExpr::Var(Name::new(name))
    }

    pub fn minimum(a: SizeExpr, b: SizeExpr) -> Self {
        SizeExpr::Min(Box::new(a), Box::new(b))
    }

    pub fn as_num(&self) -> Option<u64> {
        match self {
            SizeExpr::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Name> {
        match self {
            SizeExpr::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            SizeExpr::Num(_) | SizeExpr::Inf => {}
            SizeExpr::Var(v) => {
                out.insert(v.clone());
            }
            SizeExpr::Add(a, b)
            | SizeExpr::Sub(a, b)
            | SizeExpr::Mul(a, b)
            | SizeExpr::Div(a, b)
            | SizeExpr::Min(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn mentions(&self, var: &Name) -> bool {
        match self {
            SizeExpr::Num(_) | SizeExpr::Inf => false,
            SizeExpr::Var(v) => v == var,
            SizeExpr::Add(a, b)
            | SizeExpr::Sub(a, b)
            | SizeExpr::Mul(a, b)
            | SizeExpr::Div(a, b)
            | SizeExpr::Min(a, b) => a.mentions(var) || b.mentions(var),
        }
    }

    pub fn subst(&self, var: &Name, repl: &SizeExpr) -> SizeExpr {
        self.map_vars(&mut |v| if v == var { Some(repl.clone()) } else { None })
    }

    /// Replace variables for which `f` answers `Some`.
    pub fn map_vars(&self, f: &mut dyn FnMut(&Name) -> Option<SizeExpr>) -> SizeExpr {
        let mut bin = |a: &SizeExpr, b: &SizeExpr| (Box::new(a.map_vars(f)), Box::new(b.map_vars(f)));
        match self {
            SizeExpr::Num(_) | SizeExpr::Inf => self.clone(),
            SizeExpr::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            SizeExpr::Add(a, b) => {
                let (a, b) = bin(a, b);
                SizeExpr::Add(a, b)
            }
            SizeExpr::Sub(a, b) => {
                let (a, b) = bin(a, b);
                SizeExpr::Sub(a, b)
            }
            SizeExpr::Mul(a, b) => {
                let (a, b) = bin(a, b);
                SizeExpr::Mul(a, b)
            }
            SizeExpr::Div(a, b) => {
                let (a, b) = bin(a, b);
                SizeExpr::Div(a, b)
            }
            SizeExpr::Min(a, b) => {
                let (a, b) = bin(a, b);
                SizeExpr::Min(a, b)
            }
        }
    }

    /// Normal form, or the expression itself when normalization fails.
    pub fn normalized(&self) -> SizeExpr {
        match normalize_size(self) {
            Ok(n) => n.into_expr(),
            Err(_) => self.clone(),
        }
    }

    /// Numeric value when the expression is closed and finite.
    pub fn closed_value(&self) -> Option<u64> {
        match eval_size(self, &Valuation::new()) {
            Ok(SizeValue::Finite(n)) => Some(n),
            _ => None,
        }
    }

    fn prec(&self) -> u8 {
        match self {
            SizeExpr::Add(..) | SizeExpr::Sub(..) => 1,
            SizeExpr::Mul(..) | SizeExpr::Div(..) => 2,
            _ => 3,
        }
    }
}

macro_rules! size_op {
    ($tr:ident, $m:ident, $v:ident) => {
        impl core::ops::$tr for SizeExpr {
            type Output = SizeExpr;
            fn $m(self, rhs: SizeExpr) -> SizeExpr {
                SizeExpr::$v(Box::new(self), Box::new(rhs))
            }
        }
    };
}
size_op!(Add, add, Add);
size_op!(Sub, sub, Sub);
size_op!(Mul, mul, Mul);
size_op!(Div, div, Div);

impl From<u64> for SizeExpr {
    fn from(n: u64) -> Self {
        SizeExpr::Num(n)
    }
}

impl fmt::Display for SizeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn side(f: &mut fmt::Formatter<'_>, e: &SizeExpr, paren: bool) -> fmt::Result {
            if paren {
                write!(f, "({})", e)
            } else {
                write!(f, "{}", e)
            }
        }
        let (a, op, b) = match self {
            SizeExpr::Num(n) => return write!(f, "{}", n),
            SizeExpr::Inf => return f.write_str("inf"),
            SizeExpr::Var(v) => return write!(f, "{}", v),
            SizeExpr::Min(a, b) => return write!(f, "min({}, {})", a, b),
            SizeExpr::Add(a, b) => (a, "+", b),
            SizeExpr::Sub(a, b) => (a, "-", b),
            SizeExpr::Mul(a, b) => (a, "*", b),
            SizeExpr::Div(a, b) => (a, "/", b),
        };
        let p = self.prec();
        side(f, a, a.prec() < p)?;
        write!(f, " {} ", op)?;
        side(f, b, b.prec() <= p)
    }
}

/// Value of a size expression: a natural number or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeValue {
    Finite(u64),
    Infinite,
}

impl SizeValue {
    pub fn finite(self) -> Option<u64> {
        match self {
            SizeValue::Finite(n) => Some(n),
            SizeValue::Infinite => None,
        }
    }
}

impl fmt::Display for SizeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeValue::Finite(n) => write!(f, "{}", n),
            SizeValue::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SizeError {
    Unbound(Name),
    DivisionByZero,
    Overflow,
}

impl fmt::Display for SizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeError::Unbound(v) => write!(f, "size variable `{}` has no value", v),
            SizeError::DivisionByZero => f.write_str("size division by zero"),
            SizeError::Overflow => f.write_str("size arithmetic overflow"),
        }
    }
}

pub type Valuation = BTreeMap<Name, u64>;

pub fn eval_size(e: &SizeExpr, val: &Valuation) -> Result<SizeValue, SizeError> {
    use SizeValue::{Finite, Infinite};
    let pair = |a: &SizeExpr, b: &SizeExpr| -> Result<(SizeValue, SizeValue), SizeError> {
        Ok((eval_size(a, val)?, eval_size(b, val)?))
    };
    Ok(match e {
        SizeExpr::Num(n) => Finite(*n),
        SizeExpr::Inf => Infinite,
        SizeExpr::Var(v) => Finite(*val.get(v).ok_or_else(|| SizeError::Unbound(v.clone()))?),
        SizeExpr::Add(a, b) => match pair(a, b)? {
            (Finite(x), Finite(y)) => Finite(x.checked_add(y).ok_or(SizeError::Overflow)?),
            _ => Infinite,
        },
        SizeExpr::Sub(a, b) => match pair(a, b)? {
            (Infinite, _) => Infinite,
            (Finite(_), Infinite) => Finite(0),
            (Finite(x), Finite(y)) => Finite(x.saturating_sub(y)),
        },
        SizeExpr::Mul(a, b) => match pair(a, b)? {
            (Finite(x), Finite(y)) => Finite(x.checked_mul(y).ok_or(SizeError::Overflow)?),
            _ => Infinite,
        },
        SizeExpr::Div(a, b) => match pair(a, b)? {
            (_, Finite(0)) => return Err(SizeError::DivisionByZero),
            (Infinite, _) => Infinite,
            (Finite(_), Infinite) => Finite(0),
            (Finite(x), Finite(y)) => Finite(x / y),
        },
        SizeExpr::Min(a, b) => {
            let (x, y) = pair(a, b)?;
            x.min(y)
        }
    })
}

/// Canonical representative of a size expression. Two expressions with the
/// same normal form agree under every valuation of positive integers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SizeNormalForm(SizeExpr);

impl SizeNormalForm {
    pub fn expr(&self) -> &SizeExpr {
        &self.0
    }

    pub fn into_expr(self) -> SizeExpr {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0 == SizeExpr::Inf
    }

    pub fn as_num(&self) -> Option<u64> {
        self.0.as_num()
    }
}

impl fmt::Display for SizeNormalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn normalize_size(e: &SizeExpr) -> Result<SizeNormalForm, SizeError> {
    Ok(SizeNormalForm(match norm(e)? {
        Norm::Inf => SizeExpr::Inf,
        Norm::Poly(p) => p.to_expr(),
    }))
}

// Polynomials over opaque atoms. Atoms are variables or normalized
// Sub/Div/Min nodes that could not be expressed polynomially.

type Mono = Vec<SizeExpr>;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub(crate) struct Poly {
    terms: BTreeMap<Mono, i128>,
}

const COEFF_MAX: i128 = u64::MAX as i128;

impl Poly {
    pub(crate) fn constant(c: i128) -> Poly {
        let mut p = Poly::default();
        if c != 0 {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    fn atom(a: SizeExpr) -> Poly {
        let mut p = Poly::default();
        p.terms.insert(alloc::vec![a], 1);
        p
    }

    fn bump(&mut self, m: Mono, c: i128) -> Result<(), SizeError> {
        let slot = self.terms.entry(m).or_insert(0);
        *slot = slot.checked_add(c).ok_or(SizeError::Overflow)?;
        if slot.abs() > COEFF_MAX {
            return Err(SizeError::Overflow);
        }
        if *slot == 0 {
            self.terms.retain(|_, c| *c != 0);
        }
        Ok(())
    }

    pub(crate) fn plus(&self, o: &Poly) -> Result<Poly, SizeError> {
        let mut r = self.clone();
        for (m, c) in &o.terms {
            r.bump(m.clone(), *c)?;
        }
        Ok(r)
    }

    pub(crate) fn minus(&self, o: &Poly) -> Result<Poly, SizeError> {
        let mut r = self.clone();
        for (m, c) in &o.terms {
            r.bump(m.clone(), -*c)?;
        }
        Ok(r)
    }

    fn times(&self, o: &Poly) -> Result<Poly, SizeError> {
        let mut r = Poly::default();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                let mut m: Mono = m1.iter().chain(m2.iter()).cloned().collect();
                m.sort();
                r.bump(m, c1.checked_mul(*c2).ok_or(SizeError::Overflow)?)?;
            }
        }
        Ok(r)
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub(crate) fn as_constant(&self) -> Option<i128> {
        match self.terms.len() {
            0 => Some(0),
            1 => self.terms.get(&Vec::new()).copied(),
            _ => None,
        }
    }

    fn single_atom(&self) -> Option<&SizeExpr> {
        if self.terms.len() != 1 {
            return None;
        }
        let (m, c) = self.terms.iter().next()?;
        if *c == 1 && m.len() == 1 {
            Some(&m[0])
        } else {
            None
        }
    }

    pub(crate) fn to_expr(&self) -> SizeExpr {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let nonconst = self.terms.iter().filter(|(m, _)| !m.is_empty());
        let consts = self.terms.iter().filter(|(m, _)| m.is_empty());
        for (m, c) in nonconst.chain(consts) {
            let mag = c.unsigned_abs() as u64;
            let mut t: Option<SizeExpr> = None;
            for a in m {
                t = Some(match t {
                    None => a.clone(),
                    Some(acc) => acc * a.clone(),
                });
            }
            let term = match t {
                None => SizeExpr::Num(mag),
                Some(p) if mag == 1 => p,
                Some(p) => SizeExpr::Num(mag) * p,
            };
            if *c > 0 {
                pos.push(term);
            } else {
                neg.push(term);
            }
        }
        let sum = |v: Vec<SizeExpr>| v.into_iter().reduce(|a, b| a + b).unwrap_or(SizeExpr::Num(0));
        if neg.is_empty() {
            sum(pos)
        } else {
            sum(pos) - sum(neg)
        }
    }

    /// Sound test for `p >= 0` when every variable is at least one and every
    /// opaque atom is at least zero: substitute `v = 1 + y` and check that
    /// all coefficients are non-negative.
    pub(crate) fn provably_nonneg(&self) -> bool {
        let mut shifted = Poly::default();
        for (m, c) in &self.terms {
            let mut t = Poly::constant(*c);
            for a in m {
                let f = match a {
                    SizeExpr::Var(_) => match Poly::constant(1).plus(&Poly::atom(a.clone())) {
                        Ok(f) => f,
                        Err(_) => return false,
                    },
                    _ => Poly::atom(a.clone()),
                };
                t = match t.times(&f) {
                    Ok(t) => t,
                    Err(_) => return false,
                };
            }
            shifted = match shifted.plus(&t) {
                Ok(s) => s,
                Err(_) => return false,
            };
        }
        shifted.terms.values().all(|c| *c >= 0)
    }
}

pub(crate) enum Norm {
    Inf,
    Poly(Poly),
}

pub(crate) fn norm(e: &SizeExpr) -> Result<Norm, SizeError> {
    use Norm::{Inf, Poly as P};
    Ok(match e {
        SizeExpr::Num(n) => P(Poly::constant(*n as i128)),
        SizeExpr::Inf => Inf,
        SizeExpr::Var(_) => P(Poly::atom(e.clone())),
        SizeExpr::Add(a, b) => match (norm(a)?, norm(b)?) {
            (P(x), P(y)) => P(x.plus(&y)?),
            _ => Inf,
        },
        SizeExpr::Mul(a, b) => match (norm(a)?, norm(b)?) {
            (P(x), P(y)) => P(x.times(&y)?),
            _ => Inf,
        },
        SizeExpr::Sub(a, b) => match (norm(a)?, norm(b)?) {
            (Inf, _) => Inf,
            (P(_), Inf) => P(Poly::default()),
            (P(x), P(y)) => P(truncated_sub(&x, &y)?),
        },
        SizeExpr::Div(a, b) => {
            let (x, y) = (norm(a)?, norm(b)?);
            if let P(q) = &y {
                if q.is_zero() {
                    return Err(SizeError::DivisionByZero);
                }
            }
            match (x, y) {
                (Inf, _) => Inf,
                (P(_), Inf) => P(Poly::default()),
                (P(p), P(q)) => P(divide(p, q)?),
            }
        }
        SizeExpr::Min(a, b) => {
            let mut ops = Vec::new();
            collect_min(norm(a)?, &mut ops)?;
            collect_min(norm(b)?, &mut ops)?;
            match minimum(ops)? {
                None => Inf,
                Some(p) => P(p),
            }
        }
    })
}

fn truncated_sub(x: &Poly, y: &Poly) -> Result<Poly, SizeError> {
    let d = x.minus(y)?;
    if d.is_zero() || d.provably_nonneg() {
        return Ok(d);
    }
    let nd = Poly::default().minus(&d)?;
    if nd.provably_nonneg() {
        return Ok(Poly::default());
    }
    let mut pos = Poly::default();
    let mut neg = Poly::default();
    for (m, c) in &d.terms {
        if *c > 0 {
            pos.bump(m.clone(), *c)?;
        } else {
            neg.bump(m.clone(), -*c)?;
        }
    }
    Ok(Poly::atom(pos.to_expr() - neg.to_expr()))
}

fn divide(p: Poly, q: Poly) -> Result<Poly, SizeError> {
    if let Some(k) = q.as_constant() {
        if k == 1 {
            return Ok(p);
        }
        if let Some(c) = p.as_constant() {
            return Ok(Poly::constant(c.div_euclid(k)));
        }
        if let Some(SizeExpr::Div(x, j)) = p.single_atom() {
            if let Some(j) = j.as_num() {
                let jk = (j as i128).checked_mul(k).ok_or(SizeError::Overflow)?;
                if jk > COEFF_MAX {
                    return Err(SizeError::Overflow);
                }
                return Ok(Poly::atom(SizeExpr::Div(x.clone(), Box::new(SizeExpr::Num(jk as u64)))));
            }
        }
        let exact = p.terms.iter().all(|(m, c)| m.is_empty() || c % k == 0);
        if exact {
            let mut r = Poly::default();
            for (m, c) in &p.terms {
                r.bump(m.clone(), c.div_euclid(k))?;
            }
            return Ok(r);
        }
        return Ok(Poly::atom(p.to_expr() / SizeExpr::Num(k as u64)));
    }
    let q_pos = q.minus(&Poly::constant(1))?.provably_nonneg();
    if q_pos && p.is_zero() {
        return Ok(Poly::default());
    }
    if q_pos && p == q {
        return Ok(Poly::constant(1));
    }
    Ok(Poly::atom(p.to_expr() / q.to_expr()))
}

fn collect_min(n: Norm, out: &mut Vec<Poly>) -> Result<(), SizeError> {
    match n {
        Norm::Inf => Ok(()),
        Norm::Poly(p) => {
            if let Some(SizeExpr::Min(a, b)) = p.single_atom() {
                let (a, b) = (a.clone(), b.clone());
                collect_min(norm(&a)?, out)?;
                collect_min(norm(&b)?, out)
            } else {
                out.push(p);
                Ok(())
            }
        }
    }
}

fn minimum(mut ops: Vec<Poly>) -> Result<Option<Poly>, SizeError> {
    let mut uniq: Vec<Poly> = Vec::new();
    for p in ops.drain(..) {
        if !uniq.contains(&p) {
            uniq.push(p);
        }
    }
    let mut keep = Vec::new();
    for (i, q) in uniq.iter().enumerate() {
        let mut dominated = false;
        for (j, p) in uniq.iter().enumerate() {
            if i != j && q.minus(p)?.provably_nonneg() {
                dominated = true;
                break;
            }
        }
        if !dominated {
            keep.push(q.clone());
        }
    }
    if keep.is_empty() {
        return Ok(None);
    }
    if keep.len() == 1 {
        return Ok(keep.pop());
    }
    if keep.iter().all(|p| p.as_constant().is_some()) {
        let m = keep.iter().filter_map(|p| p.as_constant()).min().unwrap_or(0);
        return Ok(Some(Poly::constant(m)));
    }
    let mut exprs: Vec<SizeExpr> = keep.iter().map(|p| p.to_expr()).collect();
    exprs.sort();
    let folded = exprs.into_iter().reduce(SizeExpr::minimum).unwrap_or(SizeExpr::Num(0));
    Ok(Some(Poly::atom(folded)))
}
