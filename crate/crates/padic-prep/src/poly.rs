//! Dense univariate polynomials and rational functions over the exact
//! rationals, plus `Z_p`/`Q_p` root location (Newton polygon slope
//! segmentation with digit-by-digit Hensel lifting).

use crate::qrat::{self, Q};
use num_traits::{One, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poly {
    /// Coefficient of degree i at index i; no trailing zeros.
    coeffs: Vec<Q>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Q>) -> Self {
        while coeffs.last().map_or(false, |c| c.is_zero()) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![] }
    }

    pub fn constant(c: Q) -> Self {
        Poly::new(vec![c])
    }

    pub fn identity() -> Self {
        Poly::new(vec![Q::zero(), Q::one()])
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        if self.is_zero() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    pub fn coeff(&self, i: usize) -> Q {
        self.coeffs.get(i).copied().unwrap_or_else(Q::zero)
    }

    pub fn coeffs(&self) -> &[Q] {
        &self.coeffs
    }

    pub fn eval(&self, t: &Q) -> Q {
        let mut acc = Q::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(i, c)| c * qrat::qi(i as i128 + 1))
                .collect(),
        )
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new((0..n).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new((0..n).map(|i| self.coeff(i) - other.coeff(i)).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![Q::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn scale(&self, c: &Q) -> Poly {
        Poly::new(self.coeffs.iter().map(|a| a * c).collect())
    }

    /// `P(s + c)`: the same polynomial in the shifted variable `s = t - c`.
    pub fn shift(&self, c: &Q) -> Poly {
        let mut acc = Poly::zero();
        for coeff in self.coeffs.iter().rev() {
            acc = acc.mul(&Poly::new(vec![*c, Q::one()]));
            acc = acc.add(&Poly::constant(*coeff));
        }
        acc
    }

    /// Nonzero terms as (exponent, p-adic valuation of the coefficient).
    pub fn term_vals(&self, p: u64) -> Vec<(usize, i64)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (i, qrat::ord_p(c, p).unwrap()))
            .collect()
    }
}

/// A quotient of polynomials. No gcd normalization is performed; callers that
/// care about spurious common roots handle them explicitly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatFunc {
    pub num: Poly,
    pub den: Poly,
}

impl RatFunc {
    pub fn from_poly(p: Poly) -> Self {
        RatFunc { num: p, den: Poly::constant(Q::one()) }
    }

    pub fn constant(c: Q) -> Self {
        Self::from_poly(Poly::constant(c))
    }

    pub fn identity() -> Self {
        Self::from_poly(Poly::identity())
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn add(&self, other: &RatFunc) -> RatFunc {
        RatFunc {
            num: self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            den: self.den.mul(&other.den),
        }
    }

    pub fn sub(&self, other: &RatFunc) -> RatFunc {
        RatFunc {
            num: self.num.mul(&other.den).sub(&other.num.mul(&self.den)),
            den: self.den.mul(&other.den),
        }
    }

    pub fn mul(&self, other: &RatFunc) -> RatFunc {
        RatFunc { num: self.num.mul(&other.num), den: self.den.mul(&other.den) }
    }

    pub fn recip(&self) -> RatFunc {
        RatFunc { num: self.den.clone(), den: self.num.clone() }
    }

    pub fn neg(&self) -> RatFunc {
        RatFunc { num: self.num.scale(&-Q::one()), den: self.den.clone() }
    }

    pub fn derivative(&self) -> RatFunc {
        RatFunc {
            num: self.num.derivative().mul(&self.den).sub(&self.num.mul(&self.den.derivative())),
            den: self.den.mul(&self.den),
        }
    }

    /// Plain evaluation; `None` at zeros of the denominator.
    pub fn eval(&self, t: &Q) -> Option<Q> {
        let d = self.den.eval(t);
        if d.is_zero() {
            None
        } else {
            Some(self.num.eval(t) / d)
        }
    }

    pub fn shift(&self, c: &Q) -> RatFunc {
        RatFunc { num: self.num.shift(c), den: self.den.shift(c) }
    }
}

/// A located root of a polynomial in `Q_p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QpRoot {
    /// Rational representative, correct to at least `digits` unit digits.
    pub rep: Q,
    /// Whether `rep` is exactly a root (rational roots only).
    pub exact: bool,
}

/// Clear denominators and the p-content so the polynomial has integer
/// coefficients not all divisible by `p`.
fn to_primitive_int(poly: &Poly, p: u64) -> Vec<i128> {
    let mut den_lcm: i128 = 1;
    for c in poly.coeffs() {
        let d = *c.denom();
        den_lcm = den_lcm / num_integer::gcd(den_lcm, d) * d;
    }
    let mut ints: Vec<i128> =
        poly.coeffs().iter().map(|c| c.numer() * (den_lcm / c.denom())).collect();
    let min_val = ints
        .iter()
        .filter(|&&c| c != 0)
        .map(|&c| qrat::int_val(c, p))
        .min()
        .unwrap_or(0);
    let pw = qrat::p_pow(p, min_val as u32);
    for c in ints.iter_mut() {
        *c /= pw;
    }
    ints
}

fn eval_int_mod(coeffs: &[i128], x: i128, m: i128) -> i128 {
    let mut acc: i128 = 0;
    for c in coeffs.iter().rev() {
        acc = (acc * x + c).rem_euclid(m);
    }
    acc
}

fn int_derivative(coeffs: &[i128]) -> Vec<i128> {
    coeffs.iter().enumerate().skip(1).map(|(i, c)| c * i as i128).collect()
}

/// All `Z_p` roots of an integer polynomial, as representatives modulo
/// `p^digits`. Recursive digit search; simple residues are Newton-polished.
/// Roots whose multiplicity structure cannot be resolved within the digit
/// budget are returned with `exact = false` at the reached depth (they are
/// only ever used as extra refinement centers, where spurious entries are
/// harmless).
fn zp_roots_int(coeffs: &[i128], p: u64, digits: u32) -> Vec<(i128, bool)> {
    let mut out = Vec::new();
    let deriv = int_derivative(coeffs);
    let pi = p as i128;
    for r in 0..pi {
        if eval_int_mod(coeffs, r, pi) != 0 {
            continue;
        }
        if eval_int_mod(&deriv, r, pi) != 0 {
            // Simple root mod p: Newton iteration doubles correct digits.
            let m = qrat::p_pow(p, digits);
            let mut x = r;
            for _ in 0..digits.ilog2() + 2 {
                let fx = eval_int_mod(coeffs, x, m);
                let dfx = eval_int_mod(&deriv, x, m);
                x = (x - fx * qrat::inv_mod(dfx, m)).rem_euclid(m);
            }
            out.push((x, true));
        } else if digits <= 1 {
            out.push((r, false));
        } else {
            // Multiple residue: branch on the next digit via g(r + p·u)/p^w.
            let shifted = shift_int(coeffs, r, p);
            for (sub, certain) in zp_roots_int(&shifted, p, digits - 1) {
                out.push(((r + pi * sub).rem_euclid(qrat::p_pow(p, digits)), certain));
            }
        }
    }
    out
}

/// `g(r + p·u)` divided by its p-content, as an integer polynomial in `u`.
fn shift_int(coeffs: &[i128], r: i128, p: u64) -> Vec<i128> {
    let poly = Poly::new(coeffs.iter().map(|&c| qrat::qi(c)).collect());
    let pi = qrat::qi(p as i128);
    // g(r + p u): substitute via shift then scale the variable.
    let shifted = poly.shift(&qrat::qi(r));
    let scaled = Poly::new(
        shifted
            .coeffs()
            .iter()
            .enumerate()
            .map(|(i, c)| c * qrat::q_pow(&pi, i as i64))
            .collect(),
    );
    to_primitive_int(&scaled, p)
}

/// Exact evaluation guarded against `i128` overflow: `None` when a coarse
/// bit-size estimate says the Horner intermediates may not fit.
fn eval_guarded(poly: &Poly, x: &Q) -> Option<Q> {
    let bits = |n: i128, d: i128| (n.abs().max(d).max(2) as f64).log2();
    let deg = poly.degree().unwrap_or(0) as f64;
    let xb = bits(*x.numer(), *x.denom());
    let cb: f64 = poly.coeffs().iter().map(|c| bits(*c.numer(), *c.denom())).sum();
    if deg * xb + cb + 16.0 > 126.0 {
        return None;
    }
    Some(poly.eval(x))
}

fn is_exact_root(poly: &Poly, x: &Q) -> bool {
    eval_guarded(poly, x).map_or(false, |v| v.is_zero())
}

/// Smallest rational congruent to `x` modulo `m`, with numerator and
/// denominator bounded by `√(m/2)`, via the half-extended Euclidean algorithm.
/// Such a representative is unique when it exists.
fn rational_reconstruct(x: i128, m: i128) -> Option<Q> {
    let bound = num_integer::Roots::sqrt(&(m / 2));
    let (mut r0, mut r1) = (m, x.rem_euclid(m));
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 > bound {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if t1 == 0 || t1.abs() > bound || num_integer::gcd(r1, t1.abs()) != 1 {
        return None;
    }
    Some(qrat::q(r1 * t1.signum(), t1.abs()))
}

/// All roots of `poly` in `Q_p`, located to at least `digits` significant
/// digits. Integer-valuation roots only (roots of fractional valuation do not
/// lie in `Q_p`). Roots of every valuation are found by running the `Z_p`
/// search on the polynomial and on its reversal.
pub fn qp_roots(poly: &Poly, p: u64, digits: u32) -> Vec<QpRoot> {
    if poly.degree().unwrap_or(0) == 0 {
        return vec![];
    }
    let mut found: Vec<QpRoot> = Vec::new();
    let push = |rep: Q, exact: bool, found: &mut Vec<QpRoot>| {
        let clash = found.iter().any(|r| {
            r.rep == rep
                || qrat::ord_p(&(r.rep - rep), p).map_or(true, |v| {
                    let base = qrat::ord_p(&rep, p).unwrap_or(0);
                    v >= base + digits as i64
                })
        });
        if !clash {
            found.push(QpRoot { rep, exact });
        }
    };

    // Zero root.
    if poly.coeff(0).is_zero() {
        push(Q::zero(), true, &mut found);
    }
    let low = poly.coeffs().iter().position(|c| !c.is_zero()).unwrap();
    let reduced = Poly::new(poly.coeffs()[low..].to_vec());

    // Z_p roots (valuation ≥ 0).
    let modulus = qrat::p_pow(p, digits + 6);
    let ints = to_primitive_int(&reduced, p);
    for (rep, _) in zp_roots_int(&ints, p, digits + 6) {
        if rep == 0 {
            continue;
        }
        let mut repq = qrat::qi(rep);
        let mut exact = is_exact_root(&reduced, &repq);
        if !exact {
            // The residue may encode a small rational (e.g. p^k - 1 for -1):
            // reconstruct and accept on exact evaluation.
            if let Some(cand) = rational_reconstruct(rep, modulus) {
                if cand.denom() % p as i128 != 0 && is_exact_root(&reduced, &cand) {
                    repq = cand;
                    exact = true;
                }
            }
        }
        push(repq, exact, &mut found);
    }

    // Valuation < 0 roots: x is a root of P iff 1/x is a root of the reversal.
    let mut rev: Vec<Q> = reduced.coeffs().to_vec();
    rev.reverse();
    let rev_poly = Poly::new(rev);
    let rev_ints = to_primitive_int(&rev_poly, p);
    for (rep, _) in zp_roots_int(&rev_ints, p, digits + 6) {
        if rep == 0 || rep % p as i128 != 0 {
            continue; // units already covered above
        }
        let mut repq = Q::one() / qrat::qi(rep);
        let mut exact = is_exact_root(&reduced, &repq);
        if !exact {
            if let Some(cand) = rational_reconstruct(rep, modulus) {
                if !cand.numer().is_zero() && is_exact_root(&reduced, &(Q::one() / cand)) {
                    repq = Q::one() / cand;
                    exact = true;
                }
            }
        }
        push(repq, exact, &mut found);
    }

    found.sort_by_key(|r| qrat::canonical_key(&r.rep, p));
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrat::{q, qi};

    fn poly(cs: &[i128]) -> Poly {
        Poly::new(cs.iter().map(|&c| qi(c)).collect())
    }

    #[test]
    fn eval_and_derivative() {
        // t^2 + t
        let f = poly(&[0, 1, 1]);
        assert_eq!(f.eval(&qi(3)), qi(12));
        assert_eq!(f.derivative(), poly(&[1, 2]));
        assert_eq!(f.shift(&qi(-1)), poly(&[0, -1, 1])); // (s-1)² + (s-1) = s² - s
    }

    #[test]
    fn rational_roots() {
        // t² + t = t(t+1): roots 0 and -1.
        let roots = qp_roots(&poly(&[0, 1, 1]), 3, 8);
        assert_eq!(roots.len(), 2);
        assert!(roots.iter().any(|r| r.rep == qi(0) && r.exact));
        assert!(roots.iter().any(|r| r.rep == qi(-1) && r.exact));

        // t² - 1: the negative root must be reconstructed exactly.
        let roots = qp_roots(&poly(&[-1, 0, 1]), 3, 8);
        assert_eq!(roots.len(), 2);
        assert!(roots.iter().any(|r| r.rep == qi(1) && r.exact));
        assert!(roots.iter().any(|r| r.rep == qi(-1) && r.exact));
    }

    #[test]
    fn irrational_qp_root() {
        // t² - 7 has two square roots of 7 in Q_3, none rational.
        let f = poly(&[-7, 0, 1]);
        let roots = qp_roots(&f, 3, 8);
        assert_eq!(roots.len(), 2);
        for r in &roots {
            assert!(!r.exact);
            // f(rep) ≡ 0 mod 3^8
            let v = qrat::ord_p(&f.eval(&r.rep), 3).unwrap();
            assert!(v >= 8, "residual valuation {v}");
        }
    }

    #[test]
    fn negative_valuation_roots() {
        // 3t - 1: root 1/3, ord = -1.
        let roots = qp_roots(&poly(&[-1, 3]), 3, 8);
        assert_eq!(roots.len(), 1);
        assert_eq!(roots[0].rep, q(1, 3));
        assert!(roots[0].exact);
    }

    #[test]
    fn no_qp_roots() {
        // t² - 3 has no root in Q_3 (valuation 1/2).
        assert!(qp_roots(&poly(&[-3, 0, 1]), 3, 8).is_empty());
    }

    #[test]
    fn double_root() {
        // (t-1)²
        let roots = qp_roots(&poly(&[1, -2, 1]), 5, 8);
        assert_eq!(roots.len(), 1);
        assert_eq!(roots[0].rep, qi(1));
    }

    #[test]
    fn ratfunc_arithmetic() {
        let f = RatFunc::from_poly(poly(&[0, 1])); // t
        let g = f.recip(); // 1/t
        let sum = f.add(&g); // (t²+1)/t
        assert_eq!(sum.eval(&qi(2)), Some(q(5, 2)));
        assert_eq!(g.eval(&qi(0)), None);
        let d = g.derivative(); // -1/t²
        assert_eq!(d.eval(&qi(3)), Some(q(-1, 9)));
    }
}
