//! A small expression language for univariate semi-algebraic functions:
//! piecewise rational maps guarded by cell conditions, with a text parser,
//! exact evaluation and symbolic differentiation.
//!
//! Grammar (EBNF, whitespace insignificant):
//!
//! ```text
//! function := piece (";" piece)*
//! piece    := expr "on" "{" guard "}"
//! guard    := "all" | clause ("," clause)*
//! clause   := "ord" "(" offset ")" (relop integer | "in" congruence)
//!           | "ac" level "=" integer
//!           | "coset" rational "Q" "[" integer "," integer "]"
//! offset   := "t" (("+" | "-") rational)?
//! congruence := (integer "+")? integer "Z"
//! relop    := ">=" | "<=" | "="
//! expr     := term (("+" | "-") term)*
//! term     := factor ("*" factor)*
//! factor   := "-"? power
//! power    := atom ("^" "-"? integer)?
//! atom     := rational | "t" | "inv" "(" expr ")" | "(" expr ")"
//! rational := integer ("/" integer)?
//! ```
//!
//! The identifier `series` is reserved for a future restricted-power-series
//! extension and is rejected with a dedicated message.

use crate::error::PadicError;
use crate::geometry::{Cell, Window};
use crate::padic::{FieldContext, PadicNumber};
use crate::poly::RatFunc;
use crate::qrat::{self, q_display, Q};
use crate::report::qser;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// How to evaluate `inv` at zero: the field convention `0⁻¹ = 0`, or a
/// signaled pole (used when evaluating derivatives, where a zero of the
/// inverted subterm really is a pole).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroInverse {
    Convention,
    Pole,
}

/// Expression bodies: rational constants, the variable `t`, ring operations,
/// field inverse and integer powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(#[serde(with = "qser")] Q),
    Var,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Inv(Box<Expr>),
    Pow(Box<Expr>, i64),
}

impl Expr {
    pub fn constant(c: Q) -> Expr {
        Expr::Const(c)
    }

    /// Exact evaluation at a rational point.
    pub fn eval_q(&self, t: &Q, mode: ZeroInverse) -> Result<Q, PadicError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var => *t,
            Expr::Add(a, b) => a.eval_q(t, mode)? + b.eval_q(t, mode)?,
            Expr::Sub(a, b) => a.eval_q(t, mode)? - b.eval_q(t, mode)?,
            Expr::Mul(a, b) => a.eval_q(t, mode)? * b.eval_q(t, mode)?,
            Expr::Neg(a) => -a.eval_q(t, mode)?,
            Expr::Inv(a) => {
                let v = a.eval_q(t, mode)?;
                if v.is_zero() {
                    match mode {
                        ZeroInverse::Convention => Q::zero(),
                        ZeroInverse::Pole => {
                            return Err(PadicError::DerivativePole(format!(
                                "inverted subterm vanishes at t = {}",
                                q_display(t)
                            )))
                        }
                    }
                } else {
                    v.recip()
                }
            }
            Expr::Pow(a, k) => {
                let v = a.eval_q(t, mode)?;
                if v.is_zero() && *k < 0 && mode == ZeroInverse::Pole {
                    return Err(PadicError::DerivativePole(format!(
                        "negative power of zero at t = {}",
                        q_display(t)
                    )));
                }
                qrat::q_pow(&v, *k)
            }
        })
    }

    /// Symbolic derivative with constant folding. The inverse rule
    /// `(inv g)' = -g'·inv(g)²` holds away from zeros of `g`; at such zeros
    /// evaluation in pole mode signals the pole.
    pub fn derivative(&self) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(Q::zero()),
            Expr::Var => Expr::Const(Q::one()),
            Expr::Add(a, b) => fold_add(a.derivative(), b.derivative()),
            Expr::Sub(a, b) => fold_sub(a.derivative(), b.derivative()),
            Expr::Mul(a, b) => fold_add(
                fold_mul(a.derivative(), (**b).clone()),
                fold_mul((**a).clone(), b.derivative()),
            ),
            Expr::Neg(a) => fold_neg(a.derivative()),
            Expr::Inv(a) => fold_neg(fold_mul(
                a.derivative(),
                Expr::Pow(Box::new(Expr::Inv(a.clone())), 2),
            )),
            Expr::Pow(a, k) => {
                if *k == 0 {
                    Expr::Const(Q::zero())
                } else {
                    fold_mul(
                        fold_mul(Expr::Const(qrat::qi(*k as i128)), a.derivative()),
                        Expr::Pow(a.clone(), k - 1),
                    )
                }
            }
        }
    }

    /// Conversion to an exact rational function (inverse and negative powers
    /// go to the denominator).
    pub fn to_ratfunc(&self) -> RatFunc {
        match self {
            Expr::Const(c) => RatFunc::constant(*c),
            Expr::Var => RatFunc::identity(),
            Expr::Add(a, b) => a.to_ratfunc().add(&b.to_ratfunc()),
            Expr::Sub(a, b) => a.to_ratfunc().sub(&b.to_ratfunc()),
            Expr::Mul(a, b) => a.to_ratfunc().mul(&b.to_ratfunc()),
            Expr::Neg(a) => a.to_ratfunc().neg(),
            Expr::Inv(a) => a.to_ratfunc().recip(),
            Expr::Pow(a, k) => {
                let base = if *k >= 0 { a.to_ratfunc() } else { a.to_ratfunc().recip() };
                let mut acc = RatFunc::constant(Q::one());
                for _ in 0..k.unsigned_abs() {
                    acc = acc.mul(&base);
                }
                acc
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if c.is_negative() => 3,
            _ => 5,
        }
    }

    fn print_prec(&self, min: u8, out: &mut String) {
        let prec = self.precedence();
        if prec < min {
            out.push('(');
        }
        match self {
            Expr::Const(c) => out.push_str(&q_display(c)),
            Expr::Var => out.push('t'),
            Expr::Add(a, b) => {
                a.print_prec(1, out);
                out.push_str(" + ");
                b.print_prec(2, out);
            }
            Expr::Sub(a, b) => {
                a.print_prec(1, out);
                out.push_str(" - ");
                b.print_prec(2, out);
            }
            Expr::Mul(a, b) => {
                a.print_prec(2, out);
                out.push_str(" * ");
                b.print_prec(3, out);
            }
            Expr::Neg(a) => {
                out.push('-');
                a.print_prec(4, out);
            }
            Expr::Inv(a) => {
                out.push_str("inv(");
                a.print_prec(1, out);
                out.push(')');
            }
            Expr::Pow(a, k) => {
                a.print_prec(5, out);
                out.push('^');
                out.push_str(&k.to_string());
            }
        }
        if prec < min {
            out.push(')');
        }
    }

    pub fn print(&self) -> String {
        let mut s = String::new();
        self.print_prec(0, &mut s);
        s
    }
}

fn fold_add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(x), b) if x.is_zero() => b,
        (a, Expr::Const(y)) if y.is_zero() => a,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn fold_sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, Expr::Const(y)) if y.is_zero() => a,
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn fold_mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(x), _) | (_, Expr::Const(x)) if x.is_zero() => Expr::Const(Q::zero()),
        (Expr::Const(x), b) if x.is_one() => b,
        (a, Expr::Const(y)) if y.is_one() => a,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn fold_neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

/// A parsed guard before compilation to cells: center, valuation congruence
/// and range, optional angular-component pin, optional explicit coset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardSpec {
    #[serde(with = "qser")]
    pub center: Q,
    pub modulus: u32,
    pub residue: i64,
    pub lo: Option<i64>,
    pub hi: Option<i64>,
    pub ac: Option<(u32, i128)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coset: Option<(String, u32, u32)>,
}

impl Default for GuardSpec {
    fn default() -> Self {
        GuardSpec {
            center: Q::zero(),
            modulus: 1,
            residue: 0,
            lo: None,
            hi: None,
            ac: None,
            coset: None,
        }
    }
}

impl GuardSpec {
    pub fn is_all(&self) -> bool {
        self == &GuardSpec::default()
    }

    /// Whether the guard's point set contains its own center: only when no
    /// angular or coset pin is imposed, no nontrivial congruence holds, and
    /// there is no upper valuation bound (ord(0) = +∞ satisfies any lower
    /// bound).
    fn includes_center(&self) -> bool {
        self.ac.is_none() && self.coset.is_none() && self.modulus == 1 && self.hi.is_none()
    }

    fn bound_alpha(&self, p: u64) -> Option<Q> {
        self.hi.map(|h| qrat::from_val_unit(p, h + 1, 1))
    }

    fn bound_beta(&self, p: u64) -> Option<Q> {
        self.lo.map(|l| qrat::from_val_unit(p, l - 1, 1))
    }

    /// Compiles the guard to disjoint cells whose union is its point set.
    pub fn cells(&self, p: u64) -> Result<Vec<Cell>, PadicError> {
        let alpha = self.bound_alpha(p);
        let beta = self.bound_beta(p);
        let mut out = Vec::new();
        if let Some((lam_text, m, n)) = &self.coset {
            if self.ac.is_some() || self.modulus != 1 {
                return Err(PadicError::Precondition(
                    "a coset clause cannot be combined with ac or congruence clauses".into(),
                ));
            }
            let lam = crate::report::parse_q(lam_text).map_err(PadicError::Precondition)?;
            out.push(Cell::new(self.center, lam, *m, *n, alpha, beta, p)?);
        } else if let Some((m, v)) = self.ac {
            if v <= 0 || v >= qrat::p_pow(p, m) || v % p as i128 == 0 {
                return Err(PadicError::Precondition(format!(
                    "ac{m} value must be a unit residue in (0, p^{m})"
                )));
            }
            let lam = qrat::from_val_unit(p, self.residue.rem_euclid(self.modulus as i64), v);
            out.push(Cell::new(self.center, lam, m, self.modulus, alpha, beta, p)?);
        } else {
            for u in 1..p as i128 {
                let lam = qrat::from_val_unit(p, self.residue.rem_euclid(self.modulus as i64), u);
                out.push(Cell::new(self.center, lam, 1, self.modulus, alpha, beta, p)?);
            }
            if self.includes_center() {
                out.push(Cell::point(self.center));
            }
        }
        Ok(out)
    }

    fn render_offset(&self) -> String {
        if self.center.is_zero() {
            "t".into()
        } else if self.center.is_negative() {
            format!("t+{}", q_display(&-self.center))
        } else {
            format!("t-{}", q_display(&self.center))
        }
    }

    pub fn render(&self) -> String {
        if self.is_all() {
            return "all".into();
        }
        let off = self.render_offset();
        let mut clauses = Vec::new();
        if self.modulus != 1 {
            let congr = if self.residue == 0 {
                format!("{}Z", self.modulus)
            } else {
                format!("{}+{}Z", self.residue, self.modulus)
            };
            clauses.push(format!("ord({off}) in {congr}"));
        }
        match (self.lo, self.hi) {
            (Some(l), Some(h)) if l == h => clauses.push(format!("ord({off}) = {l}")),
            (l, h) => {
                if let Some(l) = l {
                    clauses.push(format!("ord({off}) >= {l}"));
                }
                if let Some(h) = h {
                    clauses.push(format!("ord({off}) <= {h}"));
                }
            }
        }
        if let Some((m, v)) = self.ac {
            clauses.push(format!("ac{m}={v}"));
        }
        if let Some((lam, m, n)) = &self.coset {
            clauses.push(format!("coset {lam} Q[{m},{n}]"));
        }
        clauses.join(", ")
    }
}

/// One piece of a piecewise function: the body, its guard, and the guard's
/// compiled cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub body: Expr,
    pub guard: GuardSpec,
    pub cells: Vec<Cell>,
}

/// An ordered list of guarded pieces; guards pairwise disjoint (checked on
/// a window at construction), domain = union of the guards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFunction {
    pub pieces: Vec<Piece>,
    pub p: u64,
}

impl PiecewiseFunction {
    pub fn from_parts(parts: Vec<(Expr, GuardSpec)>, p: u64, w: &Window) -> Result<Self, PadicError> {
        let mut pieces = Vec::new();
        for (body, guard) in parts {
            let cells = guard.cells(p)?;
            pieces.push(Piece { body, guard, cells });
        }
        let f = PiecewiseFunction { pieces, p };
        f.check_disjoint(w)?;
        Ok(f)
    }

    /// A single-piece function on the whole line.
    pub fn total(body: Expr, p: u64) -> Self {
        let guard = GuardSpec::default();
        let cells = guard.cells(p).unwrap();
        PiecewiseFunction { pieces: vec![Piece { body, guard, cells }], p }
    }

    pub fn check_disjoint(&self, w: &Window) -> Result<(), PadicError> {
        for t in w.points(self.p) {
            let mut hit: Option<usize> = None;
            for (i, piece) in self.pieces.iter().enumerate() {
                if piece.cells.iter().any(|c| c.contains(&t, self.p)) {
                    if let Some(j) = hit {
                        return Err(PadicError::OverlappingGuards(format!(
                            "pieces {} and {} both contain t = {}",
                            j + 1,
                            i + 1,
                            q_display(&t)
                        )));
                    }
                    hit = Some(i);
                }
            }
        }
        Ok(())
    }

    pub fn piece_at(&self, t: &Q) -> Option<&Piece> {
        self.pieces.iter().find(|pc| pc.cells.iter().any(|c| c.contains(t, self.p)))
    }

    pub fn domain_contains(&self, t: &Q) -> bool {
        self.piece_at(t).is_some()
    }

    /// Exact rational value of the matching body.
    pub fn eval_q(&self, t: &Q, mode: ZeroInverse) -> Result<Q, PadicError> {
        match self.piece_at(t) {
            Some(piece) => piece.body.eval_q(t, mode),
            None => Err(PadicError::OutsideDomain(format!(
                "t = {} matches no guard",
                q_display(t)
            ))),
        }
    }

    pub fn eval(&self, t: &Q, ctx: &FieldContext) -> Result<PadicNumber, PadicError> {
        Ok(PadicNumber::from_q(&self.eval_q(t, ZeroInverse::Convention)?, ctx))
    }

    /// Derivative value; zeros of inverted subterms are poles here.
    pub fn eval_derivative_q(&self, t: &Q) -> Result<Q, PadicError> {
        match self.piece_at(t) {
            Some(piece) => piece.body.derivative().eval_q(t, ZeroInverse::Pole),
            None => Err(PadicError::OutsideDomain(format!(
                "t = {} matches no guard",
                q_display(t)
            ))),
        }
    }

    /// Symbolic derivative per piece, same guards.
    pub fn differentiate(&self) -> PiecewiseFunction {
        PiecewiseFunction {
            pieces: self
                .pieces
                .iter()
                .map(|pc| Piece {
                    body: pc.body.derivative(),
                    guard: pc.guard.clone(),
                    cells: pc.cells.clone(),
                })
                .collect(),
            p: self.p,
        }
    }

    pub fn print(&self) -> String {
        self.pieces
            .iter()
            .map(|pc| format!("{} on {{{}}}", pc.body.print(), pc.guard.render()))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Least exponent `e` with `|f′| ≤ q^e` over the enumerated points of
/// `A ∩ W` inside the domain; `None` when the derivative vanishes on the
/// whole sample (the −∞ marker).
pub fn max_derivative_norm_exponent(
    f: &PiecewiseFunction,
    a: &Cell,
    w: &Window,
    ctx: &FieldContext,
) -> Result<Option<i64>, PadicError> {
    let pts: Vec<Q> =
        a.enumerate(w, ctx.p).into_iter().filter(|t| f.domain_contains(t)).collect();
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }
    let mut best: Option<i64> = None;
    for t in &pts {
        let d = f.eval_derivative_q(t)?;
        if let Some(v) = qrat::ord_p(&d, ctx.p) {
            let e = -v;
            best = Some(best.map_or(e, |b: i64| b.max(e)));
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i128),
    Ident(String),
    Sym(&'static str),
}

struct Lexer {
    toks: Vec<(usize, Tok)>,
    end: usize,
}

fn lex(text: &str) -> Result<Lexer, PadicError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let col = i + 1;
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let n: i128 = text.parse().map_err(|_| PadicError::Syntax {
                pos: col,
                msg: format!("integer literal {text} out of range"),
            })?;
            toks.push((col, Tok::Num(n)));
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            toks.push((col, Tok::Ident(chars[start..i].iter().collect())));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if two == "++" || two == "--" || two == "**" {
                return Err(PadicError::Syntax {
                    pos: col,
                    msg: format!("unknown operator {two:?}"),
                });
            }
            let sym = match two.as_str() {
                ">=" => Some(">="),
                "<=" => Some("<="),
                _ => None,
            };
            if let Some(s) = sym {
                toks.push((col, Tok::Sym(s)));
                i += 2;
            } else {
                let s = match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    '^' => "^",
                    '(' => "(",
                    ')' => ")",
                    '{' => "{",
                    '}' => "}",
                    '[' => "[",
                    ']' => "]",
                    ',' => ",",
                    ';' => ";",
                    '=' => "=",
                    _ => {
                        return Err(PadicError::Syntax {
                            pos: col,
                            msg: format!("unexpected character {c:?}"),
                        })
                    }
                };
                toks.push((col, Tok::Sym(s)));
                i += 1;
            }
        }
    }
    Ok(Lexer { toks, end: chars.len() + 1 })
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(c, _)| *c)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PadicError> {
        Err(PadicError::Syntax { pos: self.col(), msg: msg.into() })
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.at_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), PadicError> {
        if self.at_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {s:?}"))
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(t)) if *t == s)
    }

    fn at_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(t)) if t == s)
    }

    fn eat_ident(&mut self, s: &str) -> bool {
        if self.at_ident(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_int(&mut self) -> Result<i128, PadicError> {
        let neg = self.eat_sym("-");
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(if neg { -n } else { n })
            }
            _ => self.err("expected an integer"),
        }
    }

    fn expect_rational(&mut self) -> Result<Q, PadicError> {
        let n = self.expect_int()?;
        if self.at_sym("/") {
            self.pos += 1;
            let d = self.expect_int()?;
            if d == 0 {
                return self.err("zero denominator");
            }
            Ok(qrat::q(n, d))
        } else {
            Ok(qrat::qi(n))
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, PadicError> {
        let mut acc = self.parse_term()?;
        loop {
            if self.at_sym("+") {
                self.pos += 1;
                acc = Expr::Add(Box::new(acc), Box::new(self.parse_term()?));
            } else if self.at_sym("-") {
                self.pos += 1;
                acc = Expr::Sub(Box::new(acc), Box::new(self.parse_term()?));
            } else {
                break;
            }
        }
        Ok(acc)
    }

    fn parse_term(&mut self) -> Result<Expr, PadicError> {
        let mut acc = self.parse_factor()?;
        while self.at_sym("*") {
            self.pos += 1;
            acc = Expr::Mul(Box::new(acc), Box::new(self.parse_factor()?));
        }
        Ok(acc)
    }

    fn parse_factor(&mut self) -> Result<Expr, PadicError> {
        if self.at_sym("-") {
            self.pos += 1;
            let inner = self.parse_factor()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr, PadicError> {
        let base = self.parse_atom()?;
        if self.at_sym("^") {
            self.pos += 1;
            let k = self.expect_int()?;
            let k = i64::try_from(k).map_err(|_| PadicError::Syntax {
                pos: self.col(),
                msg: "exponent out of range".into(),
            })?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, PadicError> {
        match self.peek().cloned() {
            Some(Tok::Num(_)) => Ok(Expr::Const(self.expect_rational()?)),
            Some(Tok::Ident(id)) => {
                if id == "t" {
                    self.pos += 1;
                    Ok(Expr::Var)
                } else if id == "inv" {
                    self.pos += 1;
                    self.expect_sym("(")?;
                    let inner = self.parse_expr()?;
                    self.expect_sym(")")?;
                    Ok(Expr::Inv(Box::new(inner)))
                } else if id == "series" {
                    self.err("\"series\" is reserved for restricted power series and not supported")
                } else {
                    self.err(format!("unknown identifier {id:?}"))
                }
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            _ => self.err("expected an operand"),
        }
    }

    /// `t`, `t - c`, `t + c` inside `ord(...)`; returns the center `c`.
    fn parse_offset(&mut self) -> Result<Q, PadicError> {
        if !self.eat_ident("t") {
            return self.err("expected the variable t");
        }
        if self.at_sym("-") {
            self.pos += 1;
            self.expect_rational()
        } else if self.at_sym("+") {
            self.pos += 1;
            Ok(-self.expect_rational()?)
        } else {
            Ok(Q::zero())
        }
    }

    fn parse_guard(&mut self) -> Result<GuardSpec, PadicError> {
        if self.eat_ident("all") {
            return Ok(GuardSpec::default());
        }
        let mut spec = GuardSpec::default();
        let mut center_set = false;
        let mut set_center = |spec: &mut GuardSpec, c: Q, col: usize| {
            if center_set && spec.center != c {
                return Err(PadicError::Syntax {
                    pos: col,
                    msg: "guard clauses use different centers".into(),
                });
            }
            center_set = true;
            spec.center = c;
            Ok(())
        };
        loop {
            let col = self.col();
            if self.eat_ident("ord") {
                self.expect_sym("(")?;
                let c = self.parse_offset()?;
                self.expect_sym(")")?;
                set_center(&mut spec, c, col)?;
                if self.eat_ident("in") {
                    let first = self.expect_int()?;
                    let (residue, modulus) = if self.at_sym("+") {
                        self.pos += 1;
                        let m = self.expect_int()?;
                        (first, m)
                    } else {
                        (0, first)
                    };
                    if !self.eat_ident("Z") {
                        return self.err("expected Z in congruence");
                    }
                    if modulus <= 0 {
                        return self.err("congruence modulus must be positive");
                    }
                    spec.modulus = modulus as u32;
                    spec.residue = residue as i64;
                } else if self.eat_sym(">=") {
                    spec.lo = Some(self.expect_int()? as i64);
                } else if self.eat_sym("<=") {
                    spec.hi = Some(self.expect_int()? as i64);
                } else if self.eat_sym("=") {
                    let k = self.expect_int()? as i64;
                    spec.lo = Some(k);
                    spec.hi = Some(k);
                } else {
                    return self.err("expected a valuation relation (>=, <=, =, in)");
                }
            } else if self.eat_ident("coset") {
                let lam = self.expect_rational()?;
                if !self.eat_ident("Q") {
                    return self.err("expected Q[m,n] after the coset scale");
                }
                self.expect_sym("[")?;
                let m = self.expect_int()?;
                self.expect_sym(",")?;
                let n = self.expect_int()?;
                self.expect_sym("]")?;
                if m <= 0 || n <= 0 {
                    return self.err("coset levels must be positive");
                }
                spec.coset = Some((q_display(&lam), m as u32, n as u32));
            } else if let Some(Tok::Ident(id)) = self.peek().cloned() {
                if let Some(level) = id.strip_prefix("ac").and_then(|s| s.parse::<u32>().ok()) {
                    if level == 0 {
                        return self.err("ac level must be ≥ 1");
                    }
                    self.pos += 1;
                    self.expect_sym("=")?;
                    spec.ac = Some((level, self.expect_int()?));
                } else {
                    return self.err(format!("unknown guard clause {id:?}"));
                }
            } else {
                return self.err("expected a guard clause");
            }
            if !self.at_sym(",") {
                break;
            }
            self.pos += 1;
        }
        Ok(spec)
    }

    fn parse_function(&mut self) -> Result<Vec<(Expr, GuardSpec)>, PadicError> {
        let mut parts = Vec::new();
        loop {
            let body = self.parse_expr()?;
            if !self.eat_ident("on") {
                // A bare expression is the total function: shorthand for
                // "expr on {all}".
                if parts.is_empty() && self.pos == self.toks.len() {
                    parts.push((body, GuardSpec::default()));
                    return Ok(parts);
                }
                return self.err("expected \"on {guard}\" after the expression");
            }
            self.expect_sym("{")?;
            let guard = self.parse_guard()?;
            self.expect_sym("}")?;
            parts.push((body, guard));
            if !self.at_sym(";") {
                break;
            }
            self.pos += 1;
        }
        if self.pos != self.toks.len() {
            return self.err("trailing input after the function");
        }
        Ok(parts)
    }
}

/// Parses an expression alone (no guard).
pub fn parse_expr(text: &str) -> Result<Expr, PadicError> {
    let lx = lex(text)?;
    let mut p = Parser { toks: lx.toks, pos: 0, end: lx.end };
    let e = p.parse_expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input after the expression");
    }
    Ok(e)
}

/// Parses a piecewise function; guard disjointness is checked on `w`.
pub fn parse_with_window(text: &str, p: u64, w: &Window) -> Result<PiecewiseFunction, PadicError> {
    let lx = lex(text)?;
    let mut parser = Parser { toks: lx.toks, pos: 0, end: lx.end };
    let parts = parser.parse_function()?;
    PiecewiseFunction::from_parts(parts, p, w)
}

/// Parses with the default disjointness window (v ∈ [−3,3], three unit
/// digits, zero included).
pub fn parse(text: &str, p: u64) -> Result<PiecewiseFunction, PadicError> {
    parse_with_window(text, p, &Window::new(-3, 3, 3, true))
}
