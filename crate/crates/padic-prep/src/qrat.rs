//! Exact rational arithmetic helpers.
//!
//! Centers, boundaries, coefficients and window points are all exact
//! rationals; everything p-adic about them (valuation, angular components,
//! rv classes) is computed exactly from numerator and denominator.

use num_rational::Ratio;
use num_traits::Zero;

/// The exact scalar type of the toolkit. Desk-scale inputs (windows, degree
/// ≤ 4 polynomials, small primes) stay far inside `i128`.
pub type Q = Ratio<i128>;

pub fn q(num: i128, den: i128) -> Q {
    Ratio::new(num, den)
}

pub fn qi(n: i128) -> Q {
    Ratio::from_integer(n)
}

/// `p^k` as an `i128`. Panics on overflow, which desk-scale parameters never hit.
pub fn p_pow(p: u64, k: u32) -> i128 {
    (p as i128).checked_pow(k).expect("p^k overflows i128")
}

/// p-adic valuation of a nonzero integer.
pub fn int_val(mut n: i128, p: u64) -> i64 {
    assert!(n != 0);
    let p = p as i128;
    let mut v = 0;
    while n % p == 0 {
        n /= p;
        v += 1;
    }
    v
}

/// p-adic valuation of a rational; `None` for zero.
pub fn ord_p(x: &Q, p: u64) -> Option<i64> {
    if x.is_zero() {
        return None;
    }
    Some(int_val(*x.numer(), p) - int_val(*x.denom(), p))
}

pub fn pow_mod(mut base: i128, mut exp: u64, m: i128) -> i128 {
    base = base.rem_euclid(m);
    let mut acc: i128 = 1 % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo `m` for `gcd(a, m) = 1`, via extended Euclid.
pub fn inv_mod(a: i128, m: i128) -> i128 {
    let (mut r0, mut r1) = (m, a.rem_euclid(m));
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    assert!(r0 == 1, "inv_mod of a non-unit");
    t0.rem_euclid(m)
}

/// Angular component `ac_m(x)`: the unit part of `x` modulo `p^m`.
/// Returns `None` for `x = 0` (the map sends 0 to 0; callers decide the encoding).
pub fn ac_residue(x: &Q, p: u64, m: u32) -> Option<i128> {
    if x.is_zero() {
        return None;
    }
    let pp = p_pow(p, m);
    let pi = p as i128;
    let mut num = *x.numer();
    let mut den = *x.denom();
    while num % pi == 0 {
        num /= pi;
    }
    while den % pi == 0 {
        den /= pi;
    }
    Some(num.rem_euclid(pp) * inv_mod(den, pp) % pp)
}

/// The rational `p^v · u`.
pub fn from_val_unit(p: u64, v: i64, u: i128) -> Q {
    let u = qi(u);
    if v >= 0 {
        u * qi(p_pow(p, v as u32))
    } else {
        u / qi(p_pow(p, (-v) as u32))
    }
}

/// `x^a` for integer `a` of either sign; `0^0 = 1` per the usual convention,
/// and `0^a` for `a < 0` is `0` (field inverse extended by `0^{-1} = 0`).
pub fn q_pow(x: &Q, a: i64) -> Q {
    if x.is_zero() {
        return if a == 0 { qi(1) } else { qi(0) };
    }
    let base = if a >= 0 { *x } else { x.recip() };
    let mut acc = qi(1);
    for _ in 0..a.unsigned_abs() {
        acc *= base;
    }
    acc
}

/// Representative of `x` in `[0, p^M)` for `x` with `ord_p(x) ≥ 0`
/// (i.e. `x ∈ Z_p` as a rational): numerator times inverse denominator.
pub fn residue_mod(x: &Q, p: u64, digits: u32) -> i128 {
    if x.is_zero() {
        return 0;
    }
    assert!(ord_p(x, p).unwrap() >= 0, "residue_mod of a non-integral rational");
    let pp = p_pow(p, digits);
    x.numer().rem_euclid(pp) * inv_mod(*x.denom(), pp) % pp
}

/// Sign-preserving absolute-value-free comparison helper used in canonical
/// orderings: orders by valuation ascending, then unit residue ascending at a
/// fixed depth, then exact value.
pub fn canonical_key(x: &Q, p: u64) -> (i64, i128) {
    match ord_p(x, p) {
        None => (i64::MAX, 0),
        Some(v) => (v, ac_residue(x, p, 6).unwrap()),
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Exact decimal-free display: "num/den" with den = 1 collapsed to "num".
pub fn q_display(x: &Q) -> String {
    if x.denom() == &1 {
        format!("{}", x.numer())
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// `|x| = q^{-ord x}` reported as an exact rational, with `|0| = 0`.
pub fn norm_q(x: &Q, p: u64, q_card: u64) -> Q {
    match ord_p(x, p) {
        None => Q::zero(),
        Some(v) => {
            if v <= 0 {
                qi((q_card as i128).pow((-v) as u32))
            } else {
                q(1, (q_card as i128).pow(v as u32))
            }
        }
    }
}
