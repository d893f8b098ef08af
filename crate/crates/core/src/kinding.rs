//! Kinds, well-formed type environments and the size ordering.

use alloc::format;
use alloc::vec::Vec;

use crate::ast::{Kind, SimpleType, TypeEnv, ValueType};
use crate::diag::{Diagnostic, Diagnostics, Tri};
use crate::flowstate::check_flowstate;
use crate::name::Name;
use crate::size::{norm, Norm, SizeExpr, SizeValue};

pub use crate::size::{eval_size, normalize_size, SizeError, SizeNormalForm, Valuation};

/// Every variable in `e` must be bound to a size kind.
pub fn check_size(env: &TypeEnv, e: &SizeExpr) -> Result<(), Diagnostic> {
    for v in e.free_vars() {
        match env.lookup(&v) {
            Some(Kind::Size(_)) => {}
            Some(k) => {
                return Err(Diagnostic::new("Ty Var", format!("`{}` has kind {}, expected a size", v, k)))
            }
            None => return Err(Diagnostic::new("Ty Var", format!("unbound size variable `{}`", v))),
        }
    }
    normalize_size(e).map(|_| ()).map_err(|err| Diagnostic::new("Kind Size", format!("{}: {}", e, err)))
}

fn check_kind(env: &TypeEnv, k: &Kind) -> Result<(), Diagnostic> {
    match k {
        Kind::Type => Ok(()),
        Kind::Size(b) => check_size(env, b).map_err(|d| Diagnostic { rule: "Kind Size", ..d }),
        Kind::Channel { delay, limit } => {
            check_size(env, limit).map_err(|d| Diagnostic { rule: "Kind Chan", ..d })?;
            check_delay_limit(*delay, limit, "Kind Chan")
        }
        Kind::ChannelArray { bound, delay, limit } => {
            check_size(env, bound)
                .and_then(|_| check_size(env, limit))
                .map_err(|d| Diagnostic { rule: "Kind Chan Array", ..d })?;
            check_delay_limit(*delay, limit, "Kind Chan Array")
        }
    }
}

// A delayed buffer starts full, so it must be finite.
fn check_delay_limit(delay: bool, limit: &SizeExpr, rule: &'static str) -> Result<(), Diagnostic> {
    let infinite = normalize_size(limit).map(|n| n.is_infinite()).unwrap_or(false);
    if delay && infinite {
        return Err(Diagnostic::new(rule, format!("a delayed channel needs a finite limit, got {}", limit)));
    }
    Ok(())
}

/// Each binding may only mention names bound before it.
pub fn check_type_env(env: &TypeEnv) -> Result<(), Diagnostics> {
    let mut prefix = TypeEnv::new();
    let mut errs = Vec::new();
    for b in &env.bindings {
        if prefix.contains(&b.name) {
            errs.push(Diagnostic::new("TyEnv Extend", format!("`{}` is declared twice", b.name)).at(b.span));
        } else if let Err(d) = check_kind(&prefix, &b.value) {
            errs.push(d.at(b.span));
        }
        prefix.push_at(b.name.clone(), b.value.clone(), b.span);
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

pub enum TypeTerm<'a> {
    Size(&'a SizeExpr),
    Simple(&'a SimpleType),
    Value(&'a ValueType),
}

pub fn kind_of(env: &TypeEnv, term: TypeTerm<'_>) -> Result<Kind, Diagnostic> {
    match term {
        TypeTerm::Size(e) => {
            check_size(env, e)?;
            Ok(match e {
                SizeExpr::Var(v) => env.lookup(v).cloned().unwrap_or(Kind::Size(SizeExpr::Inf)),
                _ => Kind::Size(e.clone()),
            })
        }
        TypeTerm::Simple(t) => {
            check_simple(env, t)?;
            Ok(Kind::Type)
        }
        TypeTerm::Value(v) => {
            check_value_type(env, v)?;
            Ok(Kind::Type)
        }
    }
}

pub fn check_simple(env: &TypeEnv, t: &SimpleType) -> Result<(), Diagnostic> {
    match t {
        SimpleType::Boolean | SimpleType::Integer => Ok(()),
        SimpleType::Size(e) | SimpleType::Index(e) => check_size(env, e).map_err(|d| Diagnostic { rule: "Ty Size", ..d }),
        SimpleType::Ref(t) => check_simple(env, t),
        SimpleType::Proc(p) => {
            for t in &p.params {
                check_simple(env, t)?;
            }
            check_simple(env, &p.result)?;
            for fs in [&p.latent, &p.rest] {
                if let Err(mut ds) = check_flowstate(env, fs) {
                    return Err(ds.remove(0));
                }
            }
            Ok(())
        }
    }
}

/// Payloads are restricted to first-order scalar types.
pub fn is_payload_type(t: &SimpleType) -> bool {
    matches!(t, SimpleType::Boolean | SimpleType::Integer | SimpleType::Size(_) | SimpleType::Index(_))
}

pub fn check_value_type(env: &TypeEnv, v: &ValueType) -> Result<(), Diagnostic> {
    match v {
        ValueType::Simple(t) => check_simple(env, t),
        ValueType::Chan { channel, payload, .. } => {
            match env.lookup(channel) {
                Some(Kind::Channel { .. }) => {}
                Some(k) => {
                    return Err(Diagnostic::new("Ty Chan", format!("`{}` has kind {}, expected a channel", channel, k)))
                }
                None => return Err(Diagnostic::new("Ty Chan", format!("unbound channel `{}`", channel))),
            }
            check_payload(env, payload, "Ty Chan")
        }
        ValueType::ChanArray { channel, payload, bound, .. } => {
            match env.lookup(channel) {
                Some(Kind::ChannelArray { bound: b0, .. }) => {
                    check_size(env, bound)?;
                    if b0.normalized() != bound.normalized() {
                        return Err(Diagnostic::new(
                            "Ty Chan Array",
                            format!("array `{}` has bound {}, but the type says {}", channel, b0, bound),
                        ));
                    }
                }
                Some(k) => {
                    return Err(Diagnostic::new(
                        "Ty Chan Array",
                        format!("`{}` has kind {}, expected a channel array", channel, k),
                    ))
                }
                None => return Err(Diagnostic::new("Ty Chan Array", format!("unbound channel array `{}`", channel))),
            }
            check_payload(env, payload, "Ty Chan Array")
        }
    }
}

fn check_payload(env: &TypeEnv, t: &SimpleType, rule: &'static str) -> Result<(), Diagnostic> {
    check_simple(env, t)?;
    if is_payload_type(t) {
        Ok(())
    } else {
        Err(Diagnostic::new(rule, format!("channels cannot carry values of type {}", t)))
    }
}

/// Sound, incomplete decision of `a <= b` for every valuation that respects
/// the bounds in `env` and maps variables to positive integers.
/// `False` means `a > b` under every such valuation.
pub fn size_leq(env: &TypeEnv, a: &SizeExpr, b: &SizeExpr) -> Tri {
    leq(env, a, b, 4)
}

fn leq(env: &TypeEnv, a: &SizeExpr, b: &SizeExpr, fuel: u32) -> Tri {
    let (p, q) = match (norm(a), norm(b)) {
        (Ok(Norm::Inf), Ok(Norm::Inf)) | (Ok(_), Ok(Norm::Inf)) => return Tri::True,
        (Ok(Norm::Inf), Ok(Norm::Poly(_))) => return Tri::False,
        (Ok(Norm::Poly(p)), Ok(Norm::Poly(q))) => (p, q),
        _ => return Tri::Unknown,
    };
    match q.minus(&p) {
        Ok(d) if d.provably_nonneg() => return Tri::True,
        _ => {}
    }
    if let (Some(x), Some(y)) = (p.as_constant(), q.as_constant()) {
        return if x <= y { Tri::True } else { Tri::False };
    }
    let (ae, be) = (p.to_expr(), q.to_expr());
    let ia = interval(env, &ae, 6);
    let ib = interval(env, &be, 6);
    if ia.1 <= ib.0 {
        return Tri::True;
    }
    if ia.0 > ib.1 {
        return Tri::False;
    }
    if fuel == 0 {
        return Tri::Unknown;
    }
    let try_leq = |x: &SizeExpr, y: &SizeExpr| leq(env, x, y, fuel - 1).is_true();
    match &ae {
        SizeExpr::Div(x, k) if k.as_num().is_some_and(|k| k >= 1) => {
            if try_leq(x, &be) {
                return Tri::True;
            }
        }
        SizeExpr::Min(x, y) => {
            if try_leq(x, &be) || try_leq(y, &be) {
                return Tri::True;
            }
        }
        SizeExpr::Sub(x, _) => {
            if try_leq(x, &be) {
                return Tri::True;
            }
        }
        _ => {}
    }
    if let SizeExpr::Min(x, y) = &be {
        if try_leq(&ae, x) && try_leq(&ae, y) {
            return Tri::True;
        }
    }
    for v in ae.free_vars() {
        if let Some(Kind::Size(bound)) = env.lookup(&v) {
            if *bound == SizeExpr::Inf || bound.mentions(&v) || !monotone(&ae, &v) {
                continue;
            }
            let widened = ae.subst(&v, bound);
            if try_leq(&widened, &be) {
                return Tri::True;
            }
        }
    }
    Tri::Unknown
}

fn monotone(e: &SizeExpr, v: &Name) -> bool {
    match e {
        SizeExpr::Num(_) | SizeExpr::Inf | SizeExpr::Var(_) => true,
        SizeExpr::Add(a, b) | SizeExpr::Mul(a, b) | SizeExpr::Min(a, b) => monotone(a, v) && monotone(b, v),
        SizeExpr::Sub(a, b) | SizeExpr::Div(a, b) => monotone(a, v) && !b.mentions(v),
    }
}

type Ival = (SizeValue, SizeValue);

fn interval(env: &TypeEnv, e: &SizeExpr, depth: u32) -> Ival {
    use SizeValue::{Finite, Infinite};
    let top: Ival = (Finite(0), Infinite);
    let add = |x: SizeValue, y: SizeValue| match (x, y) {
        (Finite(a), Finite(b)) => a.checked_add(b).map(Finite).unwrap_or(Infinite),
        _ => Infinite,
    };
    let mul = |x: SizeValue, y: SizeValue| match (x, y) {
        (Finite(a), Finite(b)) => a.checked_mul(b).map(Finite).unwrap_or(Infinite),
        _ => Infinite,
    };
    let sub = |x: SizeValue, y: SizeValue| match (x, y) {
        (Infinite, _) => Infinite,
        (Finite(_), Infinite) => Finite(0),
        (Finite(a), Finite(b)) => Finite(a.saturating_sub(b)),
    };
    let div = |x: SizeValue, y: SizeValue| match (x, y) {
        (_, Finite(0)) | (Infinite, _) => Infinite,
        (Finite(_), Infinite) => Finite(0),
        (Finite(a), Finite(b)) => Finite(a / b),
    };
    match e {
        SizeExpr::Num(n) => (Finite(*n), Finite(*n)),
        SizeExpr::Inf => (Infinite, Infinite),
        SizeExpr::Var(v) => {
            let hi = match env.lookup(v) {
                Some(Kind::Size(b)) if depth > 0 && !b.mentions(v) => interval(env, b, depth - 1).1,
                _ => Infinite,
            };
            (Finite(1), hi.max(Finite(1)))
        }
        SizeExpr::Add(a, b) => {
            let (x, y) = (interval(env, a, depth), interval(env, b, depth));
            (add(x.0, y.0), add(x.1, y.1))
        }
        SizeExpr::Mul(a, b) => {
            let (x, y) = (interval(env, a, depth), interval(env, b, depth));
            (mul(x.0, y.0), mul(x.1, y.1))
        }
        SizeExpr::Sub(a, b) => {
            let (x, y) = (interval(env, a, depth), interval(env, b, depth));
            (sub(x.0, y.1), sub(x.1, y.0))
        }
        SizeExpr::Div(a, b) => {
            let (x, y) = (interval(env, a, depth), interval(env, b, depth));
            if y.0 == Finite(0) {
                return top;
            }
            (div(x.0, y.1), div(x.1, y.0))
        }
        SizeExpr::Min(a, b) => {
            let (x, y) = (interval(env, a, depth), interval(env, b, depth));
            (x.0.min(y.0), x.1.min(y.1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TypeEnv {
        let mut g = TypeEnv::new();
        g.push(Name::new("s"), Kind::Size(SizeExpr::Inf));
        g.push(Name::new("t"), Kind::Size(SizeExpr::var("s")));
        g.push(Name::new("k"), Kind::Size(SizeExpr::Num(8)));
        g
    }

    #[test]
    fn size_rules() {
        let g = env();
        let v = SizeExpr::var;
        assert_eq!(size_leq(&g, &SizeExpr::Num(2), &SizeExpr::Num(5)), Tri::True);
        assert_eq!(size_leq(&g, &SizeExpr::Num(6), &SizeExpr::Num(5)), Tri::False);
        assert_eq!(size_leq(&g, &v("s"), &SizeExpr::Inf), Tri::True);
        assert_eq!(size_leq(&g, &v("t"), &v("s")), Tri::True);
        assert_eq!(size_leq(&g, &(v("t") / SizeExpr::Num(2)), &v("s")), Tri::True);
        assert_eq!(size_leq(&g, &v("s"), &v("t")), Tri::Unknown);
        assert_eq!(size_leq(&g, &v("k"), &SizeExpr::Num(8)), Tri::True);
        assert_eq!(size_leq(&g, &SizeExpr::Num(9), &v("k")), Tri::False);
        assert_eq!(size_leq(&g, &SizeExpr::Inf, &v("s")), Tri::False);
    }

    #[test]
    fn env_ordering_enforced() {
        let mut g = TypeEnv::new();
        g.push(Name::new("c"), Kind::Channel { delay: false, limit: SizeExpr::var("s") });
        g.push(Name::new("s"), Kind::Size(SizeExpr::Inf));
        let errs = check_type_env(&g).unwrap_err();
        assert_eq!(errs[0].rule, "Kind Chan");
    }
}
