//! Lexer and recursive-descent parser for the concrete syntax printed by
//! the core crate's `Display` impls.

use sdata_core::ast::{
    Abstraction, ActorFlowstate, BinOp, Comprehension, Dir, Event, Expr, ExprKind, Guard, GuardOp, Iter, Kind,
    Loc, Network, Polarity, Proc, ProcFlowstate, ProcKind, ProcType, SimpleType, TypeEnv, ValueEnv, ValueType,
    SEQ_VAR,
};
use sdata_core::{Diagnostic, Name, SizeExpr, Span};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: Span,
}

// Longest first.
const SYMBOLS: &[&str] = &[
    "||", "..", "<=", ":=", "=>", "->", "(", ")", "[", "]", "{", "}", "<", ">", ",", ";", ":", "!", "?", "|", "=",
    "+", "-", "*", "/",
];

fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let n = text
                .parse::<u64>()
                .map_err(|_| Diagnostic::new("Parse", format!("number {} is too large", text)).at(span))?;
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Num(n), span });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), span });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len() as u32;
                out.push(Token { tok: Tok::Sym(s), span });
            }
            None => return Err(Diagnostic::new("Parse", format!("unexpected character `{}`", c)).at(span)),
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span { line, col } });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

const TYPE_WORDS: &[&str] = &["Boolean", "Integer", "Size", "Index", "Ref", "Fn"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, what: &str) -> PResult<T> {
        let found = match self.peek() {
            Tok::Ident(s) => format!("`{}`", s),
            Tok::Num(n) => format!("`{}`", n),
            Tok::Sym(s) => format!("`{}`", s),
            Tok::Eof => "end of input".to_string(),
        };
        Err(Diagnostic::new("Parse", format!("expected {}, found {}", what, found)).at(self.span()))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(&format!("`{}`", s))
        }
    }

    fn expect_word(&mut self, w: &str) -> PResult<()> {
        if self.eat_word(w) {
            Ok(())
        } else {
            self.error(&format!("`{}`", w))
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(Name::new(&s))
            }
            _ => self.error("a name"),
        }
    }

    fn num(&mut self) -> PResult<u64> {
        match *self.peek() {
            Tok::Num(n) => {
                self.bump();
                Ok(n)
            }
            _ => self.error("a number"),
        }
    }

    fn flag(&mut self) -> PResult<bool> {
        match self.num()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => {
                self.pos -= 1;
                self.error("delay flag 0 or 1")
            }
        }
    }

    // Sizes.

    fn size(&mut self) -> PResult<SizeExpr> {
        let mut e = self.size_term()?;
        loop {
            if self.eat_sym("+") {
                e = e + self.size_term()?;
            } else if self.is_sym("-") && !matches!(self.peek_at(1), Tok::Sym(">")) {
                self.bump();
                e = e - self.size_term()?;
            } else {
                return Ok(e);
            }
        }
    }

    fn size_term(&mut self) -> PResult<SizeExpr> {
        let mut e = self.size_atom()?;
        loop {
            if self.eat_sym("*") {
                e = e * self.size_atom()?;
            } else if self.eat_sym("/") {
                e = e / self.size_atom()?;
            } else {
                return Ok(e);
            }
        }
    }

    fn size_atom(&mut self) -> PResult<SizeExpr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(SizeExpr::Num(n))
            }
            Tok::Ident(w) if w == "inf" => {
                self.bump();
                Ok(SizeExpr::Inf)
            }
            Tok::Ident(w) if w == "min" && matches!(self.peek_at(1), Tok::Sym("(")) => {
                self.bump();
                self.expect_sym("(")?;
                let a = self.size()?;
                self.expect_sym(",")?;
                let b = self.size()?;
                self.expect_sym(")")?;
                Ok(SizeExpr::minimum(a, b))
            }
            Tok::Ident(w) => {
                self.bump();
                Ok(SizeExpr::Var(Name::new(&w)))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.size()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => self.error("a size expression"),
        }
    }

    // Kinds and types.

    fn kind(&mut self) -> PResult<Kind> {
        let w = self.ident()?;
        match w.as_str() {
            "Type" => Ok(Kind::Type),
            "Size" => {
                self.expect_sym("(")?;
                let b = self.size()?;
                self.expect_sym(")")?;
                Ok(Kind::Size(b))
            }
            "Channel" => {
                self.expect_sym("(")?;
                let delay = self.flag()?;
                self.expect_sym(",")?;
                let limit = self.size()?;
                self.expect_sym(")")?;
                Ok(Kind::Channel { delay, limit })
            }
            "ChannelArray" => {
                self.expect_sym("(")?;
                let bound = self.size()?;
                self.expect_sym(",")?;
                let delay = self.flag()?;
                self.expect_sym(",")?;
                let limit = self.size()?;
                self.expect_sym(")")?;
                Ok(Kind::ChannelArray { bound, delay, limit })
            }
            _ => {
                self.pos -= 1;
                self.error("a kind")
            }
        }
    }

    fn polarity(&mut self) -> PResult<Polarity> {
        if self.eat_sym("+") {
            if self.eat_sym("-") {
                return Ok(Polarity::Both);
            }
            return Ok(Polarity::In);
        }
        if self.eat_sym("-") {
            return Ok(Polarity::Out);
        }
        self.error("a polarity `+`, `-` or `+-`")
    }

    fn simple_type(&mut self) -> PResult<SimpleType> {
        let w = self.ident()?;
        match w.as_str() {
            "Boolean" => Ok(SimpleType::Boolean),
            "Integer" => Ok(SimpleType::Integer),
            "Size" | "Index" => {
                self.expect_sym("(")?;
                let s = self.size()?;
                self.expect_sym(")")?;
                Ok(if w.as_str() == "Size" { SimpleType::Size(s) } else { SimpleType::Index(s) })
            }
            "Ref" => {
                self.expect_sym("(")?;
                let t = self.simple_type()?;
                self.expect_sym(")")?;
                Ok(SimpleType::Ref(Box::new(t)))
            }
            "Fn" => {
                self.expect_sym("(")?;
                let mut params = Vec::new();
                if !self.is_sym(")") {
                    loop {
                        params.push(self.simple_type()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                self.expect_sym(")")?;
                let (latent, rest) = self.latent_pair()?;
                self.expect_sym("->")?;
                let result = self.simple_type()?;
                Ok(SimpleType::Proc(Box::new(ProcType { params, latent, rest, result })))
            }
            _ => {
                self.pos -= 1;
                self.error("a type")
            }
        }
    }

    fn latent_pair(&mut self) -> PResult<(ActorFlowstate, ActorFlowstate)> {
        self.expect_sym("[")?;
        let a = self.actor_flow()?;
        self.expect_sym("]")?;
        self.expect_sym("[")?;
        let b = self.actor_flow()?;
        self.expect_sym("]")?;
        Ok((a, b))
    }

    fn value_type(&mut self) -> PResult<ValueType> {
        if self.is_word("Chan") || self.is_word("ChanArray") {
            let array = self.is_word("ChanArray");
            self.bump();
            self.expect_sym("(")?;
            let polarity = self.polarity()?;
            self.expect_sym(",")?;
            let channel = self.ident()?;
            self.expect_sym(",")?;
            let payload = self.simple_type()?;
            let t = if array {
                self.expect_sym(",")?;
                let bound = self.size()?;
                ValueType::ChanArray { polarity, channel, payload, bound }
            } else {
                ValueType::Chan { polarity, channel, payload }
            };
            self.expect_sym(")")?;
            return Ok(t);
        }
        Ok(ValueType::Simple(self.simple_type()?))
    }

    // Flowstates.

    fn event(&mut self) -> PResult<Event> {
        let chan = self.ident()?;
        let dir = if self.eat_sym("!") {
            Dir::Send
        } else if self.eat_sym("?") {
            Dir::Recv
        } else {
            return self.error("`!` or `?`");
        };
        let index = if self.eat_sym("[") {
            let i = self.size()?;
            self.expect_sym("]")?;
            Some(i)
        } else {
            None
        };
        Ok(Event { dir, chan, index })
    }

    fn comprehension(&mut self) -> PResult<Comprehension> {
        if self.eat_sym("<") {
            let n = self.size()?;
            self.expect_sym(">")?;
            let ev = self.event()?;
            return Ok(Comprehension::repeat(ev, n));
        }
        let event = self.event()?;
        let mut c = Comprehension::single(event);
        if self.eat_sym("<") {
            loop {
                if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Ident(w) if w == "in") {
                    let var = self.ident()?;
                    self.expect_word("in")?;
                    let lo = self.size()?;
                    self.expect_sym("..")?;
                    let hi = self.size()?;
                    c.iters.push(Iter { var, lo, hi });
                } else {
                    let a = self.size()?;
                    if self.eat_sym("|") {
                        c.guards.push(Guard::Divides { divisor: a, subject: self.size()? });
                    } else if self.eat_sym("<=") {
                        c.guards.push(Guard::AtMost { subject: a, bound: self.size()? });
                    } else {
                        return self.error("`in`, `|` or `<=`");
                    }
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(">")?;
        }
        Ok(c)
    }

    fn actor_flow_atom(&mut self) -> PResult<ActorFlowstate> {
        if self.eat_word("eps") {
            return Ok(ActorFlowstate::Empty);
        }
        if self.eat_sym("(") {
            let f = self.actor_flow()?;
            self.expect_sym(")")?;
            return Ok(f);
        }
        Ok(ActorFlowstate::Comp(self.comprehension()?))
    }

    fn actor_flow(&mut self) -> PResult<ActorFlowstate> {
        let mut f = self.actor_flow_atom()?;
        while self.eat_sym(";") {
            f = ActorFlowstate::seq(f, self.actor_flow_atom()?);
        }
        Ok(f)
    }

    fn proc_flow_atom(&mut self) -> PResult<ProcFlowstate> {
        if self.eat_word("none") {
            return Ok(ProcFlowstate::Empty);
        }
        if self.is_word("each") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let var = self.ident()?;
            self.expect_word("in")?;
            let lo = self.size()?;
            self.expect_sym("..")?;
            let hi = self.size()?;
            self.expect_sym(")")?;
            self.expect_sym("{")?;
            let body = self.actor_flow()?;
            self.expect_sym("}")?;
            return Ok(ProcFlowstate::ActorArray { var, lo, hi, body });
        }
        if self.is_sym("(") {
            let save = self.pos;
            self.bump();
            let p = self.proc_flow()?;
            if self.eat_sym(")") && !self.is_sym(";") {
                return Ok(p);
            }
            self.pos = save;
        }
        Ok(ProcFlowstate::Actor(self.actor_flow()?))
    }

    fn proc_flow(&mut self) -> PResult<ProcFlowstate> {
        let mut p = self.proc_flow_atom()?;
        while self.eat_sym("||") {
            p = ProcFlowstate::par(p, self.proc_flow_atom()?);
        }
        Ok(p)
    }

    // Expressions.

    fn expr(&mut self) -> PResult<Expr> {
        let span = self.span();
        if self.eat_word("if") {
            let cond = self.cmp()?;
            self.expect_word("then")?;
            let t = self.cmp()?;
            self.expect_word("else")?;
            let e = self.expr()?;
            return Ok(Expr::at(
                ExprKind::If { cond: Box::new(cond), then_branch: Box::new(t), else_branch: Box::new(e) },
                span,
            ));
        }
        if self.is_word("when") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let lhs = self.add()?;
            let op = if self.eat_sym("|") {
                GuardOp::Divides
            } else if self.eat_sym("<=") {
                GuardOp::AtMost
            } else {
                return self.error("`|` or `<=`");
            };
            let rhs = self.add()?;
            self.expect_sym(")")?;
            let body = self.expr()?;
            return Ok(Expr::at(
                ExprKind::When { op, lhs: Box::new(lhs), rhs: Box::new(rhs), body: Box::new(body) },
                span,
            ));
        }
        if self.is_word("for") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            let (ty_var, var, lo, bound) = self.binder_head()?;
            let body = self.expr()?;
            return Ok(Expr::at(
                ExprKind::For { ty_var, var, lo, bound: Box::new(bound), body: Box::new(body) },
                span,
            ));
        }
        if self.is_word("fun") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let mut params = Vec::new();
            if !self.is_sym(")") {
                loop {
                    let x = self.ident()?;
                    self.expect_sym(":")?;
                    params.push((x, self.simple_type()?));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
            }
            self.expect_sym(")")?;
            let (latent, rest) = self.latent_pair()?;
            self.expect_sym("=>")?;
            let body = self.expr()?;
            return Ok(Expr::at(ExprKind::Fun(Box::new(Abstraction { params, latent, rest, body })), span));
        }
        let lhs = self.cmp()?;
        if self.eat_sym(":=") {
            let rhs = self.expr()?;
            return Ok(Expr::at(ExprKind::Assign(Box::new(lhs), Box::new(rhs)), span));
        }
        Ok(lhs)
    }

    /// `(t, x in n..E)`
    fn binder_head(&mut self) -> PResult<(Name, Name, u64, Expr)> {
        self.expect_sym("(")?;
        let ty_var = self.ident()?;
        self.expect_sym(",")?;
        let var = self.ident()?;
        self.expect_word("in")?;
        let lo = self.num()?;
        self.expect_sym("..")?;
        let bound = self.expr()?;
        self.expect_sym(")")?;
        Ok((ty_var, var, lo, bound))
    }

    fn cmp(&mut self) -> PResult<Expr> {
        let span = self.span();
        let lhs = self.add()?;
        let op = if self.eat_sym("=") {
            BinOp::Eq
        } else if self.eat_sym("<=") {
            BinOp::Le
        } else if self.eat_sym("<") {
            BinOp::Lt
        } else {
            return Ok(lhs);
        };
        let rhs = self.add()?;
        Ok(Expr::at(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, span))
    }

    fn add(&mut self) -> PResult<Expr> {
        let span = self.span();
        let mut e = self.mul()?;
        loop {
            let op = if self.eat_sym("+") {
                BinOp::Add
            } else if self.eat_sym("-") {
                BinOp::Sub
            } else {
                return Ok(e);
            };
            let rhs = self.mul()?;
            e = Expr::at(ExprKind::Binary { op, lhs: Box::new(e), rhs: Box::new(rhs) }, span);
        }
    }

    fn mul(&mut self) -> PResult<Expr> {
        let span = self.span();
        let mut e = self.unary()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else {
                return Ok(e);
            };
            let rhs = self.unary()?;
            e = Expr::at(ExprKind::Binary { op, lhs: Box::new(e), rhs: Box::new(rhs) }, span);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        if self.eat_sym("!") {
            let e = self.unary()?;
            return Ok(Expr::at(ExprKind::Deref(Box::new(e)), span));
        }
        if self.is_sym("-") && matches!(self.peek_at(1), Tok::Num(_)) {
            self.bump();
            let n = self.num()?;
            let v = i64::try_from(n).ok().and_then(|v| v.checked_neg());
            return match v {
                Some(v) => Ok(Expr::at(ExprKind::Int(v), span)),
                None => Err(Diagnostic::new("Parse", format!("integer -{} is out of range", n)).at(span)),
            };
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let span = self.span();
        let mut e = self.atom()?;
        while self.eat_sym("(") {
            let mut args = Vec::new();
            if !self.is_sym(")") {
                loop {
                    args.push(self.expr()?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
            }
            self.expect_sym(")")?;
            e = Expr::at(ExprKind::App(Box::new(e), args), span);
        }
        Ok(e)
    }

    fn chan_ref(&mut self) -> PResult<(Name, Option<Box<Expr>>)> {
        let chan = self.ident()?;
        let index = if self.eat_sym("[") {
            let i = self.expr()?;
            self.expect_sym("]")?;
            Some(Box::new(i))
        } else {
            None
        };
        Ok((chan, index))
    }

    fn atom(&mut self) -> PResult<Expr> {
        let span = self.span();
        let call = matches!(self.peek_at(1), Tok::Sym("("));
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                let v = i64::try_from(n)
                    .map_err(|_| Diagnostic::new("Parse", format!("integer {} is out of range", n)).at(span))?;
                Ok(Expr::at(ExprKind::Int(v), span))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym("{") => self.block(),
            Tok::Ident(w) => {
                let wrap = |k: fn(Box<Expr>) -> ExprKind, p: &mut Parser| -> PResult<Expr> {
                    p.bump();
                    p.expect_sym("(")?;
                    let e = p.expr()?;
                    p.expect_sym(")")?;
                    Ok(Expr::at(k(Box::new(e)), span))
                };
                match w.as_str() {
                    "true" => {
                        self.bump();
                        Ok(Expr::at(ExprKind::Bool(true), span))
                    }
                    "false" => {
                        self.bump();
                        Ok(Expr::at(ExprKind::Bool(false), span))
                    }
                    "size" if call => wrap(ExprKind::MkSize, self),
                    "index" if call => wrap(ExprKind::MkIndex, self),
                    "fromSize" if call => wrap(ExprKind::FromSize, self),
                    "fromIndex" if call => wrap(ExprKind::FromIndex, self),
                    "ref" if call => wrap(ExprKind::Ref, self),
                    "loc" if call => {
                        self.bump();
                        self.expect_sym("(")?;
                        let actor = self.num()?;
                        self.expect_sym(",")?;
                        let slot = self.num()?;
                        self.expect_sym(")")?;
                        let (Ok(actor), Ok(slot)) = (u32::try_from(actor), u32::try_from(slot)) else {
                            return Err(Diagnostic::new("Parse", "location out of range").at(span));
                        };
                        Ok(Expr::at(ExprKind::Loc(Loc { actor, slot }), span))
                    }
                    "recv" if call => {
                        self.bump();
                        self.expect_sym("(")?;
                        let (chan, index) = self.chan_ref()?;
                        self.expect_sym(")")?;
                        Ok(Expr::at(ExprKind::Recv { chan, index }, span))
                    }
                    "send" if call => {
                        self.bump();
                        self.expect_sym("(")?;
                        let (chan, index) = self.chan_ref()?;
                        self.expect_sym(",")?;
                        let payload = self.expr()?;
                        self.expect_sym(")")?;
                        Ok(Expr::at(ExprKind::Send { chan, index, payload: Box::new(payload) }, span))
                    }
                    _ => {
                        self.bump();
                        Ok(Expr::at(ExprKind::Var(Name::new(&w)), span))
                    }
                }
            }
            _ => self.error("an expression"),
        }
    }

    fn block(&mut self) -> PResult<Expr> {
        self.expect_sym("{")?;
        let mut items: Vec<(Option<Name>, Option<SimpleType>, Expr, Span)> = Vec::new();
        loop {
            let span = self.span();
            let starts_type = matches!(self.peek(), Tok::Ident(w) if TYPE_WORDS.contains(&w.as_str()))
                && matches!(self.peek_at(1), Tok::Sym("("))
                || matches!(self.peek(), Tok::Ident(w) if w == "Boolean" || w == "Integer")
                    && matches!(self.peek_at(1), Tok::Ident(_));
            if starts_type {
                let t = self.simple_type()?;
                let x = self.ident()?;
                self.expect_sym("=")?;
                let e = self.expr()?;
                items.push((Some(x), Some(t), e, span));
            } else if self.is_word("let") && matches!(self.peek_at(1), Tok::Ident(_)) {
                self.bump();
                let x = self.ident()?;
                self.expect_sym("=")?;
                let e = self.expr()?;
                items.push((Some(x), None, e, span));
            } else {
                let e = self.expr()?;
                items.push((None, None, e, span));
            }
            if self.eat_sym(";") {
                continue;
            }
            self.expect_sym("}")?;
            break;
        }
        let (name, _, last, _) = items.pop().expect("block has an item");
        if name.is_some() {
            return self.error("a final expression in the block");
        }
        let mut e = last;
        while let Some((name, annot, bound, span)) = items.pop() {
            let name = name.unwrap_or_else(|| Name::new(SEQ_VAR));
            e = Expr::at(ExprKind::Let { name, annot, bound: Box::new(bound), body: Box::new(e) }, span);
        }
        Ok(e)
    }

    // Processes.

    fn proc_atom(&mut self) -> PResult<Proc> {
        let span = self.span();
        if self.eat_word("stop") {
            return Ok(Proc { kind: ProcKind::Stop, span });
        }
        if self.eat_word("actor") {
            return Ok(Proc { kind: ProcKind::Actor(self.expr()?), span });
        }
        if self.eat_word("actors") {
            let (ty_var, var, lo, bound) = self.binder_head()?;
            let body = self.expr()?;
            return Ok(Proc { kind: ProcKind::Comp { ty_var, var, lo, bound, body }, span });
        }
        if self.eat_sym("(") {
            let p = self.proc()?;
            self.expect_sym(")")?;
            return Ok(p);
        }
        self.error("`stop`, `actor` or `actors`")
    }

    fn proc(&mut self) -> PResult<Proc> {
        let mut p = self.proc_atom()?;
        while self.eat_sym("||") {
            p = Proc::par(p, self.proc_atom()?);
        }
        Ok(p)
    }

    fn network(&mut self) -> PResult<Network> {
        let mut types = TypeEnv::new();
        let mut values = ValueEnv::new();
        loop {
            let span = self.span();
            if self.eat_word("type") {
                let n = self.ident()?;
                self.expect_sym(":")?;
                let k = self.kind()?;
                self.expect_sym(";")?;
                types.push_at(n, k, span);
            } else if self.eat_word("val") {
                let n = self.ident()?;
                self.expect_sym(":")?;
                let t = self.value_type()?;
                self.expect_sym(";")?;
                values.push_at(n, t, span);
            } else {
                break;
            }
        }
        self.expect_word("flow")?;
        self.expect_sym("{")?;
        let flow = self.proc_flow()?;
        self.expect_sym("}")?;
        self.expect_word("network")?;
        self.expect_sym("{")?;
        let body = self.proc()?;
        self.expect_sym("}")?;
        if *self.peek() != Tok::Eof {
            return self.error("end of input");
        }
        Ok(Network { types, values, flow, body })
    }
}

fn parser(src: &str) -> PResult<Parser> {
    Ok(Parser { toks: lex(src)?, pos: 0 })
}

fn finish<T>(p: &mut Parser, v: T) -> PResult<T> {
    if *p.peek() != Tok::Eof {
        return p.error("end of input");
    }
    Ok(v)
}

pub fn parse_program(src: &str) -> Result<Network, Vec<Diagnostic>> {
    parser(src).and_then(|mut p| p.network()).map_err(|d| vec![d])
}

pub fn print_program(net: &Network) -> String {
    net.to_string()
}

pub fn parse_expr(src: &str) -> Result<Expr, Diagnostic> {
    let mut p = parser(src)?;
    let e = p.expr()?;
    finish(&mut p, e)
}

pub fn parse_size(src: &str) -> Result<SizeExpr, Diagnostic> {
    let mut p = parser(src)?;
    let e = p.size()?;
    finish(&mut p, e)
}

pub fn parse_flow(src: &str) -> Result<ActorFlowstate, Diagnostic> {
    let mut p = parser(src)?;
    let e = p.actor_flow()?;
    finish(&mut p, e)
}

pub fn parse_proc_flow(src: &str) -> Result<ProcFlowstate, Diagnostic> {
    let mut p = parser(src)?;
    let e = p.proc_flow()?;
    finish(&mut p, e)
}

pub fn parse_simple_type(src: &str) -> Result<SimpleType, Diagnostic> {
    let mut p = parser(src)?;
    let e = p.simple_type()?;
    finish(&mut p, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_roundtrip() {
        for s in ["s / 2", "(s + 1) * 2", "min(s, 4) - 1", "inf", "a - (b - c)", "a / (b * c)"] {
            assert_eq!(parse_size(s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn flows_roundtrip() {
        for s in [
            "i?<t in 1..s> ; o!<t in 1..s, 2 | t>",
            "<s / 2>o!",
            "c?[t]<t in 1..n> ; (d! ; e?)",
            "eps",
            "a!<_ in 2..n>",
        ] {
            assert_eq!(parse_flow(s).unwrap().to_string(), s);
        }
        let p = "each (k in 1..s) { w?[k] } || (a! || b?)";
        assert_eq!(parse_proc_flow(p).unwrap().to_string(), p);
        let q = "(a! ; b!) || c?";
        assert_eq!(parse_proc_flow(q).unwrap().to_string(), "a! ; b! || c?");
    }

    #[test]
    fn expressions_roundtrip() {
        for s in [
            "for (t, x in 1..sz) { Integer w = recv(in); when (2 | x) send(out, w) }",
            "if a < b then 1 else c := -3",
            "fun (x: Integer) [eps] [eps] => x * (x + 1)",
            "f(1, 2)(3)",
            "!r + !(s)",
            "{ let r = ref(0); r := !r - -1; !r }",
            "send(o[index(2)], fromIndex(x))",
        ] {
            let e = parse_expr(s).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_expr(&printed).unwrap(), e, "{}", printed);
        }
        assert_eq!(parse_expr("1 - 2 - 3").unwrap().to_string(), "1 - 2 - 3");
        assert_eq!(parse_expr("1 - (2 - 3)").unwrap().to_string(), "1 - (2 - 3)");
    }

    #[test]
    fn errors_have_positions() {
        let err = parse_program("type s : Size(inf);\nflow { none }\nnetwork { actor ) }").unwrap_err();
        let sp = err[0].span.unwrap();
        assert_eq!((sp.line, sp.col), (3, 17));
        assert_eq!(err[0].rule, "Parse");
    }
}
