//! Capped-relative-precision arithmetic in `Q_p` and the residue-side maps
//! `ord`, `|·|`, `ac_m`, `rv_n`, the coset predicate `Q_{m,n}`, the power
//! predicates `P_ℓ`, and Hensel root lifting.
//!
//! A nonzero element is stored as `p^v · u` with the unit `u` known modulo
//! `p^N`; the valuation is exact. Exact zero is a distinguished value and is
//! never conflated with "zero to known precision": when an addition cancels
//! every tracked digit, the operation signals [`PadicError::FullCancellation`]
//! instead of inventing an exact zero.

use crate::error::PadicError;
use crate::qrat::{self, Q};
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// The ambient field `K = Q_p`: prime, residue cardinality `q_K` (= p) and the
/// default number of significant unit digits. The uniformizer is `p` itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldContext {
    pub p: u64,
    pub q: u64,
    pub precision: u32,
}

impl FieldContext {
    pub fn new(p: u64, precision: u32) -> Result<Self, PadicError> {
        if !qrat::is_prime(p) {
            return Err(PadicError::Precondition(format!("{p} is not prime")));
        }
        if precision == 0 {
            return Err(PadicError::Precondition("precision must be ≥ 1".into()));
        }
        Ok(FieldContext { p, q: p, precision })
    }

    /// Convenience constructor used pervasively in tests.
    pub fn qp(p: u64, precision: u32) -> Self {
        Self::new(p, precision).unwrap()
    }
}

/// An element of `Q_p` at capped relative precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadicNumber {
    /// Exact zero (`ord = +∞`).
    Zero { p: u64 },
    /// `p^val · unit`, unit coprime to `p`, known modulo `p^prec`.
    Nonzero { p: u64, val: i64, unit: i128, prec: u32 },
}

impl PadicNumber {
    pub fn exact_zero(ctx: &FieldContext) -> Self {
        PadicNumber::Zero { p: ctx.p }
    }

    pub fn p(&self) -> u64 {
        match self {
            PadicNumber::Zero { p } | PadicNumber::Nonzero { p, .. } => *p,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PadicNumber::Zero { .. })
    }

    /// Canonical embedding of `Q` into `Q_p` at the context precision.
    pub fn from_rational(num: i128, den: i128, ctx: &FieldContext) -> Result<Self, PadicError> {
        if den == 0 {
            return Err(PadicError::ZeroDenominator);
        }
        Ok(Self::from_q(&qrat::q(num, den), ctx))
    }

    pub fn from_q(x: &Q, ctx: &FieldContext) -> Self {
        if x.is_zero() {
            return PadicNumber::Zero { p: ctx.p };
        }
        let val = qrat::ord_p(x, ctx.p).unwrap();
        let unit = qrat::ac_residue(x, ctx.p, ctx.precision).unwrap();
        PadicNumber::Nonzero { p: ctx.p, val, unit, prec: ctx.precision }
    }

    /// Stored valuation; `None` encodes `+∞` (exact zero).
    pub fn ord(&self) -> Option<i64> {
        match self {
            PadicNumber::Zero { .. } => None,
            PadicNumber::Nonzero { val, .. } => Some(*val),
        }
    }

    /// `|x| = q^{-ord x}` as an exact rational, `|0| = 0`.
    pub fn norm(&self, ctx: &FieldContext) -> Q {
        match self.ord() {
            None => Q::zero(),
            Some(v) => qrat::norm_q(&qrat::from_val_unit(ctx.p, v, 1), ctx.p, ctx.q),
        }
    }

    pub fn precision(&self) -> Option<u32> {
        match self {
            PadicNumber::Zero { .. } => None,
            PadicNumber::Nonzero { prec, .. } => Some(*prec),
        }
    }

    fn check_same_field(&self, other: &Self) -> Result<(), PadicError> {
        if self.p() != other.p() {
            return Err(PadicError::ContextMismatch(self.p(), other.p()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, PadicError> {
        self.check_same_field(other)?;
        let p = self.p();
        let (v1, u1, n1, v2, u2, n2) = match (self, other) {
            (PadicNumber::Zero { .. }, _) => return Ok(*other),
            (_, PadicNumber::Zero { .. }) => return Ok(*self),
            (
                PadicNumber::Nonzero { val: v1, unit: u1, prec: n1, .. },
                PadicNumber::Nonzero { val: v2, unit: u2, prec: n2, .. },
            ) => (*v1, *u1, *n1, *v2, *u2, *n2),
        };
        let vmin = v1.min(v2);
        // Digits of the sum are trustworthy up to min(v_i + N_i).
        let known_until = (v1 + n1 as i64).min(v2 + n2 as i64);
        let digits = (known_until - vmin) as u32;
        let modulus = qrat::p_pow(p, digits);
        // Reduce the unit before shifting so the product stays below the
        // modulus even when the valuation spread exceeds the digit budget.
        let shifted = |u: i128, v: i64| {
            let s = (v - vmin) as u32;
            if s >= digits {
                0
            } else {
                u % qrat::p_pow(p, digits - s) * qrat::p_pow(p, s)
            }
        };
        let t1 = shifted(u1, v1);
        let t2 = shifted(u2, v2);
        let sum = (t1 + t2).rem_euclid(modulus);
        if sum == 0 {
            // Every tracked digit cancelled. Whether the true value is exactly
            // zero is not decidable from capped data; signal it.
            return Err(PadicError::FullCancellation);
        }
        let gain = qrat::int_val(sum, p);
        let remaining = digits - gain as u32;
        if remaining < 1 {
            return Err(PadicError::PrecisionExhausted);
        }
        let unit = (sum / qrat::p_pow(p, gain as u32)).rem_euclid(qrat::p_pow(p, remaining));
        Ok(PadicNumber::Nonzero { p, val: vmin + gain, unit, prec: remaining })
    }

    pub fn neg(&self) -> Self {
        match self {
            PadicNumber::Zero { .. } => *self,
            PadicNumber::Nonzero { p, val, unit, prec } => {
                let m = qrat::p_pow(*p, *prec);
                PadicNumber::Nonzero { p: *p, val: *val, unit: (m - unit) % m, prec: *prec }
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self, PadicError> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Result<Self, PadicError> {
        self.check_same_field(other)?;
        match (self, other) {
            (PadicNumber::Zero { p }, _) | (_, PadicNumber::Zero { p }) => {
                Ok(PadicNumber::Zero { p: *p })
            }
            (
                PadicNumber::Nonzero { p, val: v1, unit: u1, prec: n1 },
                PadicNumber::Nonzero { val: v2, unit: u2, prec: n2, .. },
            ) => {
                let prec = (*n1).min(*n2);
                let m = qrat::p_pow(*p, prec);
                Ok(PadicNumber::Nonzero {
                    p: *p,
                    val: v1 + v2,
                    unit: (u1 % m) * (u2 % m) % m,
                    prec,
                })
            }
        }
    }

    /// Field inverse extended to zero by `0^{-1} = 0`.
    pub fn inv(&self) -> Self {
        match self {
            PadicNumber::Zero { .. } => *self,
            PadicNumber::Nonzero { p, val, unit, prec } => PadicNumber::Nonzero {
                p: *p,
                val: -val,
                unit: qrat::inv_mod(*unit, qrat::p_pow(*p, *prec)),
                prec: *prec,
            },
        }
    }

    /// `ac_m(x)`: unit part modulo `p^m`, with `ac_m(0) = 0`.
    pub fn ac(&self, m: u32) -> Result<i128, PadicError> {
        match self {
            PadicNumber::Zero { .. } => Ok(0),
            PadicNumber::Nonzero { p, unit, prec, .. } => {
                if m > *prec {
                    return Err(PadicError::LevelExceedsPrecision { level: m, precision: *prec });
                }
                Ok(unit % qrat::p_pow(*p, m))
            }
        }
    }

    /// `rv_n(x)`: the class of `x` in `K^×/(1+M^n)`, or zero.
    pub fn rv(&self, n: u32) -> Result<RvElement, PadicError> {
        match self {
            PadicNumber::Zero { .. } => Ok(RvElement::Zero),
            PadicNumber::Nonzero { p, val, .. } => Ok(RvElement::NonZero {
                p: *p,
                level: n,
                val: *val,
                ac: self.ac(n)?,
            }),
        }
    }
}

/// An element of `RV_{K,n}`: zero, or a (valuation, angular component mod `p^n`) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RvElement {
    Zero,
    NonZero { p: u64, level: u32, val: i64, ac: i128 },
}

impl RvElement {
    /// `rv_n` of an exact rational; exact at every level.
    pub fn of_q(x: &Q, p: u64, n: u32) -> Self {
        match qrat::ord_p(x, p) {
            None => RvElement::Zero,
            Some(v) => RvElement::NonZero {
                p,
                level: n,
                val: v,
                ac: qrat::ac_residue(x, p, n).unwrap(),
            },
        }
    }

    /// Total multiplication; levels are truncated to the finer common one.
    pub fn mul(&self, other: &Self) -> Self {
        match (self, other) {
            (RvElement::Zero, _) | (_, RvElement::Zero) => RvElement::Zero,
            (
                RvElement::NonZero { p, level: l1, val: v1, ac: a1 },
                RvElement::NonZero { p: p2, level: l2, val: v2, ac: a2 },
            ) => {
                assert_eq!(p, p2, "rv multiplication across fields");
                let level = (*l1).min(*l2);
                let m = qrat::p_pow(*p, level);
                RvElement::NonZero { p: *p, level, val: v1 + v2, ac: (a1 % m) * (a2 % m) % m }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RvElement::Zero)
    }

    /// Truncation `RV_{K,n} → RV_{K,n'}` for `n' ≤ n`.
    pub fn truncate(&self, n_prime: u32) -> Self {
        match self {
            RvElement::Zero => RvElement::Zero,
            RvElement::NonZero { p, level, val, ac } => {
                assert!(n_prime <= *level);
                RvElement::NonZero {
                    p: *p,
                    level: n_prime,
                    val: *val,
                    ac: ac % qrat::p_pow(*p, n_prime),
                }
            }
        }
    }
}

/// Membership of a nonzero rational in `Q_{m,n} = {ord ∈ nZ, ac_m = 1}`.
pub fn in_qmn_q(x: &Q, p: u64, m: u32, n: u32) -> bool {
    match qrat::ord_p(x, p) {
        None => false,
        Some(v) => v.rem_euclid(n as i64) == 0 && qrat::ac_residue(x, p, m) == Some(1),
    }
}

/// Membership of `x` in the coset `λ Q_{m,n}`; for `λ = 0` the coset is `{0}`.
pub fn coset_member_q(x: &Q, lambda: &Q, p: u64, m: u32, n: u32) -> bool {
    if lambda.is_zero() {
        return x.is_zero();
    }
    if x.is_zero() {
        return false;
    }
    in_qmn_q(&(x / lambda), p, m, n)
}

/// `in_Qmn` on capped-precision elements. Errors when `m` exceeds the tracked
/// precision (the predicate would not be decidable).
pub fn in_qmn(x: &PadicNumber, m: u32, n: u32) -> Result<bool, PadicError> {
    match x {
        PadicNumber::Zero { .. } => Err(PadicError::Precondition("in_Qmn needs x ≠ 0".into())),
        PadicNumber::Nonzero { val, .. } => {
            Ok(val.rem_euclid(n as i64) == 0 && x.ac(m)? == 1)
        }
    }
}

pub fn coset_member(
    x: &PadicNumber,
    lambda: &PadicNumber,
    m: u32,
    n: u32,
) -> Result<bool, PadicError> {
    if lambda.is_zero() {
        return Ok(x.is_zero());
    }
    if x.is_zero() {
        return Ok(false);
    }
    in_qmn(&x.mul(&lambda.inv())?, m, n)
}

/// Decides `x ∈ P_ℓ` (ℓ-th powers in `K^×`) by the effective Hensel criterion:
/// `ℓ | ord(x)` and the unit part has an ℓ-th root modulo `p^{2·ord_p(ℓ)+1}`.
pub fn is_nth_power(x: &PadicNumber, ell: u32) -> Result<bool, PadicError> {
    let (p, val, unit, prec) = match x {
        PadicNumber::Zero { .. } => {
            return Err(PadicError::Precondition("is_nth_power needs x ≠ 0".into()))
        }
        PadicNumber::Nonzero { p, val, unit, prec } => (*p, *val, *unit, *prec),
    };
    if val.rem_euclid(ell as i64) != 0 {
        return Ok(false);
    }
    let e = if ell as u64 % p == 0 { qrat::int_val(ell as i128, p) as u32 } else { 0 };
    let level = 2 * e + 1;
    if level > prec {
        return Err(PadicError::LevelExceedsPrecision { level, precision: prec });
    }
    let modulus = qrat::p_pow(p, level);
    let target = unit % modulus;
    for y in 1..modulus {
        if y % p as i128 == 0 {
            continue;
        }
        if qrat::pow_mod(y, ell as u64, modulus) == target {
            return Ok(true);
        }
    }
    Ok(false)
}

/// A residue class used to select one out of the at most `b` roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchClass {
    pub level: u32,
    pub residue: i128,
}

/// All `b`-th roots of the unit `u` (known mod `p^prec`) in `Z_p^×`, each
/// returned modulo `p^{prec - ord_p(b)}`. Digit-by-digit Hensel lifting from
/// the exhaustive criterion level `2·ord_p(b)+1`.
pub fn unit_roots(u: i128, b: u32, p: u64, prec: u32) -> Result<Vec<i128>, PadicError> {
    let e = if b as u64 % p == 0 { qrat::int_val(b as i128, p) as u32 } else { 0 };
    let start_level = 2 * e + 1;
    if prec < start_level.max(e + 1) + e {
        return Err(PadicError::LevelExceedsPrecision {
            level: start_level.max(e + 1) + e,
            precision: prec,
        });
    }
    let k_max = prec - e;
    let pw_full = qrat::p_pow(p, prec);
    let m0 = qrat::p_pow(p, start_level);
    let mut roots = Vec::new();
    for y0 in 1..m0 {
        if y0 % p as i128 == 0 {
            continue;
        }
        if qrat::pow_mod(y0, b as u64, m0) != u % m0 {
            continue;
        }
        // Distinct exact roots are distinct mod p^{2e+1}, so each satisfying
        // class lifts to exactly one root.
        let mut k = e + 1;
        let mut y = y0 % qrat::p_pow(p, k);
        while k < k_max {
            let check_mod = qrat::p_pow(p, (k + 1 + e).min(prec));
            let mut next = None;
            for t in 0..p as i128 {
                let cand = y + t * qrat::p_pow(p, k);
                if (qrat::pow_mod(cand, b as u64, pw_full) - u).rem_euclid(check_mod) == 0 {
                    next = Some(cand);
                    break;
                }
            }
            match next {
                Some(c) => y = c,
                None => {
                    return Err(PadicError::Internal(
                        "Hensel digit lift lost a certified root".into(),
                    ))
                }
            }
            k += 1;
        }
        if !roots.contains(&y) {
            roots.push(y);
        }
    }
    roots.sort();
    Ok(roots)
}

/// `b`-th root of `x` on the given branch residue class: the `r` with
/// `r^b = x` at full surviving precision, `b·ord(r) = ord(x)`, and unit part in
/// the branch class. `None` when no root exists on that branch (including the
/// valuation obstruction `b ∤ ord(x)`).
pub fn hensel_root(
    x: &PadicNumber,
    b: u32,
    branch: &BranchClass,
) -> Result<Option<PadicNumber>, PadicError> {
    let (p, val, unit, prec) = match x {
        PadicNumber::Zero { p } => return Ok(Some(PadicNumber::Zero { p: *p })),
        PadicNumber::Nonzero { p, val, unit, prec } => (*p, *val, *unit, *prec),
    };
    if val.rem_euclid(b as i64) != 0 {
        return Ok(None);
    }
    let e = if b as u64 % p == 0 { qrat::int_val(b as i128, p) as u32 } else { 0 };
    let roots = unit_roots(unit, b, p, prec)?;
    let k_max = prec - e;
    let sel = branch.level.min(k_max);
    let m_sel = qrat::p_pow(p, sel);
    let matching: Vec<i128> =
        roots.into_iter().filter(|r| r % m_sel == branch.residue.rem_euclid(m_sel)).collect();
    match matching.len() {
        0 => Ok(None),
        1 => Ok(Some(PadicNumber::Nonzero {
            p,
            val: val / b as i64,
            unit: matching[0],
            prec: k_max,
        })),
        _ => Err(PadicError::AmbiguousBranch),
    }
}
