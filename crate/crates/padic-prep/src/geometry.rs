//! Balls, cells over a trivial base, balls of cells, thin cells, finite test
//! windows, and fractional monomials with exact evaluation.

use crate::error::PadicError;
use crate::padic::{self, BranchClass, FieldContext, PadicNumber, RvElement};
use crate::qrat::{self, Q};
use crate::report::{qser, qser_opt};
use num_integer::Integer;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// The ball `{t : ord(t - center) ≥ radius_order}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    #[serde(with = "qser")]
    pub center: Q,
    pub radius_order: i64,
}

impl Ball {
    pub fn contains(&self, t: &Q, p: u64) -> bool {
        match qrat::ord_p(&(t - self.center), p) {
            None => true,
            Some(v) => v >= self.radius_order,
        }
    }

    /// The concentric ball scaled by `M_K^j`: radius order raised by `j`.
    pub fn shrink(&self, j: i64) -> Ball {
        Ball { center: self.center, radius_order: self.radius_order + j }
    }
}

/// A cell over the trivial base:
/// `{t : |α| ⊏₁ |t-c| ⊏₂ |β|, t-c ∈ λ Q_{m,n}}`.
///
/// `alpha`/`beta` being `None` encodes "no condition"; present bounds are the
/// strict inequalities of the display. `lambda = 0` makes the cell the
/// singleton `{center}` (a 0-cell).
///
/// The `base` slot is reserved for a nontrivial parameter set and is always
/// trivial here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(with = "qser")]
    pub center: Q,
    #[serde(with = "qser")]
    pub lambda: Q,
    pub m: u32,
    pub n: u32,
    #[serde(with = "qser_opt", default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Q>,
    #[serde(with = "qser_opt", default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Q>,
    #[serde(default)]
    pub base: (),
}

impl Cell {
    /// Checked constructor: validates levels, bound nonzeroness and
    /// nonemptiness.
    pub fn new(
        center: Q,
        lambda: Q,
        m: u32,
        n: u32,
        alpha: Option<Q>,
        beta: Option<Q>,
        p: u64,
    ) -> Result<Cell, PadicError> {
        if m == 0 || n == 0 {
            return Err(PadicError::Precondition("cell levels m, n must be ≥ 1".into()));
        }
        if alpha.as_ref().map_or(false, |a| a.is_zero())
            || beta.as_ref().map_or(false, |b| b.is_zero())
        {
            return Err(PadicError::Precondition("cell boundaries must be nonzero".into()));
        }
        let cell = Cell { center, lambda, m, n, alpha, beta, base: () };
        if cell.is_zero_cell() {
            if cell.alpha.is_some() {
                // |α| < |t-c| = 0 is unsatisfiable.
                return Err(PadicError::EmptyCell("0-cell with a lower norm bound".into()));
            }
        } else if cell.admissible_ords(p).is_empty_range() {
            return Err(PadicError::EmptyCell("no admissible valuation".into()));
        }
        Ok(cell)
    }

    /// A 1-cell covering one unit class: `{t : t - c ∈ λ Q_{1,1}}`, unbounded.
    pub fn unit_class(center: Q, lambda: Q, p: u64) -> Cell {
        Cell::new(center, lambda, 1, 1, None, None, p).unwrap()
    }

    pub fn point(center: Q) -> Cell {
        Cell { center, lambda: Q::zero(), m: 1, n: 1, alpha: None, beta: None, base: () }
    }

    pub fn is_zero_cell(&self) -> bool {
        self.lambda.is_zero()
    }

    /// "Unbounded" in the sense of Definition of cells: at least one `⊏ᵢ` is
    /// no condition. Only meaningful for 1-cells.
    pub fn is_unbounded(&self) -> bool {
        !self.is_zero_cell() && (self.alpha.is_none() || self.beta.is_none())
    }

    /// Constraint on `a = ord(t - c)`: `lo ≤ a ≤ hi` and `a ≡ residue (mod n)`.
    pub fn admissible_ords(&self, p: u64) -> OrdConstraint {
        debug_assert!(!self.is_zero_cell());
        let hi = self.alpha.as_ref().map(|a| qrat::ord_p(a, p).unwrap() - 1);
        let lo = self.beta.as_ref().map(|b| qrat::ord_p(b, p).unwrap() + 1);
        OrdConstraint {
            lo,
            hi,
            modulus: self.n as i64,
            residue: qrat::ord_p(&self.lambda, p).unwrap().rem_euclid(self.n as i64),
        }
    }

    /// Exact membership per the defining condition.
    pub fn contains(&self, t: &Q, p: u64) -> bool {
        let s = t - self.center;
        if self.is_zero_cell() {
            return s.is_zero() && self.alpha.is_none();
        }
        let v = match qrat::ord_p(&s, p) {
            None => return false,
            Some(v) => v,
        };
        self.admissible_ords(p).admits(v)
            && padic::coset_member_q(&s, &self.lambda, p, self.m, self.n)
    }

    /// The unique maximal ball `B ∋ t` with `B ⊆ A`. The maximality is
    /// computed: the radius order is decreased as long as the larger ball is
    /// still contained in the cell, and the first larger ball is certified to
    /// leave the cell by an explicit witness point.
    pub fn ball_at(&self, t: &Q, p: u64) -> Result<Ball, PadicError> {
        if self.is_zero_cell() {
            return Err(PadicError::NotAOneCell);
        }
        if !self.contains(t, p) {
            return Err(PadicError::NotInCell);
        }
        let a = qrat::ord_p(&(t - self.center), p).unwrap();
        let mut z = a + self.m as i64;
        while self.ball_inside(t, z - 1, p) {
            z -= 1;
        }
        debug_assert!(self.ball_inside(t, z, p));
        debug_assert!(self.exit_witness(t, z - 1, p).map_or(false, |w| !self.contains(&w, p)));
        Ok(Ball { center: *t, radius_order: z })
    }

    /// Exact test for `{s : ord(s - t) ≥ z} ⊆ cell`, for `t` in the cell.
    fn ball_inside(&self, t: &Q, z: i64, p: u64) -> bool {
        let a = qrat::ord_p(&(t - self.center), p).unwrap();
        // For z ≤ a the ball contains the cell center (excluded) and elements
        // of every angular class at level z; for a < z < a + m it contains
        // points with a perturbed digit below level m.
        z >= a + self.m as i64
    }

    /// A point at distance exactly `q^{-z}` from `t` that lies outside the
    /// cell, when one exists at that distance.
    fn exit_witness(&self, t: &Q, z: i64, p: u64) -> Option<Q> {
        let a = qrat::ord_p(&(t - self.center), p).unwrap();
        if z <= a {
            // The enlarged ball swallows the center.
            return Some(self.center);
        }
        // Perturb the digit at level z - a < m of t - c: the angular component
        // at level m changes, so the coset condition fails.
        let delta = qrat::from_val_unit(p, z, 1);
        Some(t + delta)
    }

    /// Syntactic thinness: a 0-cell, or a 1-cell whose bounds and coset admit
    /// exactly one valuation of `t - c` (then all points share one ball).
    pub fn is_thin_syntactic(&self, p: u64) -> bool {
        if self.is_zero_cell() {
            return true;
        }
        self.admissible_ords(p).is_singleton()
    }

    /// Thinness decided from the syntax and audited against the window: if the
    /// syntax claims thin but the window exhibits two balls, that is a hard
    /// internal error.
    pub fn is_thin(&self, window: &Window, p: u64) -> Result<bool, PadicError> {
        let syntactic = self.is_thin_syntactic(p);
        if !self.is_zero_cell() {
            let pts = self.enumerate(window, p);
            let mut balls: Vec<Ball> = Vec::new();
            for t in &pts {
                let b = self.ball_at(t, p)?;
                if !balls.iter().any(|k| k.contains(&b.center, p) && b.contains(&k.center, p)) {
                    balls.push(b);
                }
            }
            if syntactic && balls.len() > 1 {
                return Err(PadicError::Internal(format!(
                    "thin-by-syntax cell has {} window balls",
                    balls.len()
                )));
            }
        }
        Ok(syntactic)
    }

    /// Membership with the per-cell data (valuation constraint) hoisted out of
    /// the point loop; semantically identical to [`Cell::contains`].
    fn membership<'a>(&'a self, p: u64) -> impl Fn(&Q) -> bool + 'a {
        let oc = if self.is_zero_cell() { None } else { Some(self.admissible_ords(p)) };
        move |t: &Q| match &oc {
            None => (t - self.center).is_zero() && self.alpha.is_none(),
            Some(oc) => {
                let s = t - self.center;
                match qrat::ord_p(&s, p) {
                    Some(v) => {
                        oc.admits(v)
                            && padic::coset_member_q(&s, &self.lambda, p, self.m, self.n)
                    }
                    None => false,
                }
            }
        }
    }

    /// Number of unit digits of `t - center` cached by [`Cell::window_diffs`].
    fn diff_cache_depth(p: u64) -> u32 {
        (62.0 / (p as f64).log2()).floor() as u32
    }

    /// For every window point `t`, the valuation and the unit residue (at
    /// [`Cell::diff_cache_depth`] digits) of `t - center`; `None` marks
    /// `t = center`. Memoized per (center, window, p): many cells share a
    /// center, and this turns their window scans into integer filters.
    fn window_diffs(&self, window: &Window, p: u64) -> Rc<Vec<(Q, Option<(i64, i128)>)>> {
        thread_local! {
            #[allow(clippy::type_complexity)]
            static CACHE: RefCell<
                HashMap<(Q, i64, i64, u32, bool, u64), Rc<Vec<(Q, Option<(i64, i128)>)>>>,
            > = RefCell::new(HashMap::new());
        }
        let key = (
            self.center,
            window.v_min,
            window.v_max,
            window.unit_level,
            window.include_zero,
            p,
        );
        CACHE.with(|c| {
            if let Some(v) = c.borrow().get(&key) {
                return Rc::clone(v);
            }
            let depth = Self::diff_cache_depth(p);
            let out: Vec<(Q, Option<(i64, i128)>)> = window
                .points_shared(p)
                .iter()
                .map(|t| {
                    let s = t - self.center;
                    let d = qrat::ord_p(&s, p)
                        .map(|v| (v, qrat::ac_residue(&s, p, depth).expect("nonzero unit")));
                    (*t, d)
                })
                .collect();
            let out = Rc::new(out);
            c.borrow_mut().insert(key, Rc::clone(&out));
            out
        })
    }

    /// Direct generation of the window points of a 1-cell centered at 0:
    /// `p^v·u` with `v` admissible and `u ≡ ac-residue(λ) (mod p^m)`. Agrees
    /// with filtering the window through [`Cell::contains`], in window order.
    fn enumerate_centered(&self, window: &Window, p: u64) -> Vec<Q> {
        let oc = self.admissible_ords(p);
        let ua = qrat::ac_residue(&self.lambda, p, self.m).expect("1-cell lambda is nonzero");
        let step = qrat::p_pow(p, self.m);
        let cap = qrat::p_pow(p, window.unit_level);
        let mut out = Vec::new();
        for v in window.v_min..=window.v_max {
            if !oc.admits(v) {
                continue;
            }
            let mut u = ua;
            while u < cap {
                out.push(qrat::from_val_unit(p, v, u));
                u += step;
            }
        }
        out
    }

    /// Window points lying in the cell, in canonical window order.
    pub fn enumerate(&self, window: &Window, p: u64) -> Vec<Q> {
        if self.is_zero_cell() {
            if self.alpha.is_some() {
                return Vec::new();
            }
            return self
                .window_diffs(window, p)
                .iter()
                .filter(|(_, d)| d.is_none())
                .map(|(t, _)| *t)
                .collect();
        }
        if self.center.is_zero() {
            return self.enumerate_centered(window, p);
        }
        if self.m <= Self::diff_cache_depth(p) {
            let oc = self.admissible_ords(p);
            let ua = qrat::ac_residue(&self.lambda, p, self.m).expect("1-cell lambda is nonzero");
            let step = qrat::p_pow(p, self.m);
            return self
                .window_diffs(window, p)
                .iter()
                .filter(|(_, d)| {
                    matches!(d, Some((v, u)) if oc.admits(*v) && u % step == ua)
                })
                .map(|(t, _)| *t)
                .collect();
        }
        let pts = window.points_shared(p);
        let keep = self.membership(p);
        pts.iter().filter(|t| keep(t)).cloned().collect()
    }

    /// Canonical sample point: the least window point of the cell.
    pub fn canonical_sample(&self, window: &Window, p: u64) -> Option<Q> {
        self.enumerate(window, p).into_iter().next()
    }
}

/// `lo ≤ a ≤ hi` (either side optional) together with `a ≡ residue (mod modulus)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrdConstraint {
    pub lo: Option<i64>,
    pub hi: Option<i64>,
    pub modulus: i64,
    pub residue: i64,
}

impl OrdConstraint {
    pub fn admits(&self, a: i64) -> bool {
        self.lo.map_or(true, |lo| a >= lo)
            && self.hi.map_or(true, |hi| a <= hi)
            && a.rem_euclid(self.modulus) == self.residue
    }

    pub fn is_empty_range(&self) -> bool {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => !(lo..=hi).any(|a| a.rem_euclid(self.modulus) == self.residue),
            _ => false,
        }
    }

    pub fn is_singleton(&self) -> bool {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => {
                (lo..=hi).filter(|a| a.rem_euclid(self.modulus) == self.residue).count() == 1
            }
            _ => false,
        }
    }
}

/// The finite test surrogate: all points `p^v·u` with `v ∈ [v_min, v_max]`,
/// `u ∈ [1, p^unit_level)` coprime to `p`, optionally together with `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub v_min: i64,
    pub v_max: i64,
    pub unit_level: u32,
    pub include_zero: bool,
}

impl Window {
    pub fn new(v_min: i64, v_max: i64, unit_level: u32, include_zero: bool) -> Self {
        assert!(v_min <= v_max && unit_level >= 1);
        Window { v_min, v_max, unit_level, include_zero }
    }

    /// Deterministic order: valuation ascending, unit ascending; zero last.
    pub fn points(&self, p: u64) -> Vec<Q> {
        (*self.points_shared(p)).clone()
    }

    /// The window point list behind a shared handle, memoized per thread: the
    /// list is queried once per cell and once per ball in the hot loops.
    pub fn points_shared(&self, p: u64) -> Rc<Vec<Q>> {
        thread_local! {
            static CACHE: RefCell<HashMap<(i64, i64, u32, bool, u64), Rc<Vec<Q>>>> =
                RefCell::new(HashMap::new());
        }
        let key = (self.v_min, self.v_max, self.unit_level, self.include_zero, p);
        CACHE.with(|c| {
            if let Some(v) = c.borrow().get(&key) {
                return Rc::clone(v);
            }
            let cap = qrat::p_pow(p, self.unit_level);
            let mut out = Vec::new();
            for v in self.v_min..=self.v_max {
                for u in 1..cap {
                    if u % p as i128 != 0 {
                        out.push(qrat::from_val_unit(p, v, u));
                    }
                }
            }
            if self.include_zero {
                out.push(Q::zero());
            }
            let out = Rc::new(out);
            c.borrow_mut().insert(key, Rc::clone(&out));
            out
        })
    }
}

/// A fractional monomial `m` with `m(t)^b = e·(t-c)^a`, exponent `a/b` in
/// lowest terms, together with the branch selector: the rv class of the
/// monomial's value at the cell's canonical sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalMonomial {
    #[serde(with = "qser")]
    pub center: Q,
    #[serde(with = "qser")]
    pub coeff: Q,
    pub num: i64,
    pub den: u32,
    pub branch: RvElement,
}

impl FractionalMonomial {
    pub fn new(
        center: Q,
        coeff: Q,
        num: i64,
        den: u32,
        branch: RvElement,
    ) -> Result<Self, PadicError> {
        if den == 0 {
            return Err(PadicError::Precondition("monomial denominator must be > 0".into()));
        }
        if num == 0 && den != 1 {
            return Err(PadicError::Precondition("b = 1 is required when a = 0".into()));
        }
        if num.unsigned_abs().gcd(&(den as u64)) != 1 {
            return Err(PadicError::Precondition("exponent a/b must be in lowest terms".into()));
        }
        Ok(FractionalMonomial { center, coeff, num, den, branch })
    }

    /// Integer-exponent monomial `e·(t-c)^a`; the branch is the trivial choice.
    pub fn integral(center: Q, coeff: Q, a: i64, p: u64, rv_level: u32) -> Self {
        FractionalMonomial {
            center,
            coeff,
            num: a,
            den: 1,
            branch: RvElement::of_q(&coeff, p, rv_level),
        }
    }

    pub fn exponent_is(&self, a: i64, b: u32) -> bool {
        self.num == a && self.den == b
    }

    /// The radicand `e·(t-c)^a` (with `0^0 = 1`).
    pub fn radicand(&self, t: &Q) -> Q {
        self.coeff * qrat::q_pow(&(t - self.center), self.num)
    }

    /// Exact evaluation for integer exponents (`b = 1`).
    pub fn eval_exact(&self, t: &Q) -> Option<Q> {
        if self.den == 1 {
            Some(self.radicand(t))
        } else {
            None
        }
    }

    /// Evaluation at a point of the cell: the unique `b`-th root of the
    /// radicand consistent with the branch class. Raising the result to the
    /// `b`-th power reproduces the radicand at full surviving precision.
    pub fn eval(&self, t: &Q, ctx: &FieldContext) -> Result<PadicNumber, PadicError> {
        let w = self.radicand(t);
        if self.den == 1 {
            return Ok(PadicNumber::from_q(&w, ctx));
        }
        if w.is_zero() {
            return Ok(PadicNumber::exact_zero(ctx));
        }
        let x = PadicNumber::from_q(&w, ctx);
        if x.ord().unwrap().rem_euclid(self.den as i64) != 0 {
            return Err(PadicError::ValuationNotDivisible {
                val: x.ord().unwrap(),
                degree: self.den,
            });
        }
        let e = if self.den as u64 % ctx.p == 0 {
            qrat::int_val(self.den as i128, ctx.p) as u32
        } else {
            0
        };
        let select_level = 2 * e + 1;
        let branch_ac = match self.branch {
            RvElement::Zero => return Err(PadicError::BranchInconsistent),
            RvElement::NonZero { level, ac, .. } => {
                if level < select_level {
                    return Err(PadicError::LevelExceedsPrecision {
                        level: select_level,
                        precision: level,
                    });
                }
                ac % qrat::p_pow(ctx.p, select_level)
            }
        };
        match padic::hensel_root(&x, self.den, &BranchClass { level: select_level, residue: branch_ac })?
        {
            Some(r) => Ok(r),
            None => Err(PadicError::BranchInconsistent),
        }
    }

    /// `rv_n` of the exact derivative `(a/b)·m(t)/(t-c)`.
    pub fn derivative_rv(
        &self,
        t: &Q,
        n: u32,
        ctx: &FieldContext,
    ) -> Result<RvElement, PadicError> {
        if self.num == 0 {
            return Ok(RvElement::Zero);
        }
        if t == &self.center {
            return Err(PadicError::Precondition("derivative undefined at the center".into()));
        }
        let exponent = qrat::q(self.num as i128, self.den as i128);
        let scale = exponent / (t - self.center);
        let value_rv = self.eval(t, ctx)?.rv(n)?;
        Ok(RvElement::of_q(&scale, ctx.p, n).mul(&value_rv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrat::{q, qi};

    fn w_units(p: u64, k: u32) -> Window {
        let _ = p;
        Window::new(0, 0, k, false)
    }

    #[test]
    fn cell_membership_examples() {
        // {ord(t) ∈ 2Z, ac_1 = 1, no bounds} over Q_3.
        let a = Cell::new(qi(0), qi(1), 1, 2, None, None, 3).unwrap();
        assert!(a.contains(&qi(9), 3));
        assert!(!a.contains(&qi(3), 3));
        assert!(!a.contains(&qi(0), 3));

        let z = Cell::point(qi(5));
        assert!(z.contains(&qi(5), 3));
        assert!(!z.contains(&qi(8), 3));
    }

    #[test]
    fn empty_cells_rejected() {
        // 0-cell with a lower norm bound is empty.
        assert!(Cell::new(qi(5), qi(0), 1, 1, Some(qi(1)), None, 3).is_err());
        // Bounds pinning ord to 0 but coset requiring odd ord.
        assert!(Cell::new(qi(0), qi(3), 1, 2, Some(qi(3)), Some(q(1, 3)), 3).is_err());
    }

    #[test]
    fn ball_of_cell() {
        // 1 + 3Z_3 as a cell: c = 0, λ = 1, m = 1, n = 1, ord pinned to 0.
        let a = Cell::new(qi(0), qi(1), 1, 1, Some(qi(3)), Some(q(1, 3)), 3).unwrap();
        let b = a.ball_at(&qi(1), 3).unwrap();
        assert_eq!(b.center, qi(1));
        assert_eq!(b.radius_order, 1);

        // Z_3 ∖ 3Z_3-complement style cell: all of ord ≥ 0 with ac_1 = 1.
        let c = Cell::new(qi(0), qi(1), 1, 1, None, Some(q(1, 3)), 3).unwrap();
        let b3 = c.ball_at(&qi(3), 3).unwrap();
        assert_eq!(b3.radius_order, 2);

        // Enlarging by one level always exits the cell.
        for (cell, t) in [(&a, qi(1)), (&c, qi(3))] {
            let ball = cell.ball_at(&t, 3).unwrap();
            let w = cell.exit_witness(&t, ball.radius_order - 1, 3).unwrap();
            assert!(!cell.contains(&w, 3));
        }
    }

    #[test]
    fn thinness() {
        let win = Window::new(-3, 3, 4, true);
        assert!(Cell::point(qi(2)).is_thin(&win, 3).unwrap());
        // All of ord ∈ Z with ac_1 = 1: many balls.
        let wide = Cell::new(qi(0), qi(1), 1, 1, None, None, 3).unwrap();
        assert!(!wide.is_thin(&win, 3).unwrap());
        // ord pinned to 0, m = 1, n = 1: single ball.
        let pinned = Cell::new(qi(0), qi(1), 1, 1, Some(qi(3)), Some(q(1, 3)), 3).unwrap();
        assert!(pinned.is_thin(&win, 3).unwrap());
    }

    #[test]
    fn enumerate_points() {
        // Z_3 units cell, window v ∈ [0,0], k = 2 → {1,2,4,5,7,8}.
        let all_units: Vec<Q> = [1, 2].iter().flat_map(|&u0| {
            let cell = Cell::new(qi(0), qi(u0), 1, 1, Some(qi(3)), Some(q(1, 3)), 3).unwrap();
            cell.enumerate(&w_units(3, 2), 3)
        }).collect();
        let mut sorted: Vec<i128> = all_units.iter().map(|x| *x.numer()).collect();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2, 4, 5, 7, 8]);

        let z = Cell::point(qi(2));
        assert_eq!(z.enumerate(&w_units(3, 2), 3), vec![qi(2)]);
    }

    #[test]
    fn window_partition_tiling() {
        // The unit-class cells plus the 0-cell at 0 tile any window.
        let win = Window::new(-2, 2, 3, true);
        let p = 3;
        let mut cells = vec![Cell::point(qi(0))];
        for u in 1..p as i128 {
            cells.push(Cell::unit_class(qi(0), qi(u), p));
        }
        let mut tiled: Vec<Q> = cells.iter().flat_map(|c| c.enumerate(&win, p)).collect();
        let mut whole = win.points(p);
        tiled.sort_by_key(|x| qrat::canonical_key(x, p));
        whole.sort_by_key(|x| qrat::canonical_key(x, p));
        assert_eq!(tiled, whole);
    }

    #[test]
    fn monomial_eval_examples() {
        let ctx5 = FieldContext::qp(5, 8);
        let m = FractionalMonomial::integral(qi(0), qi(1), 2, 5, 1);
        let v = m.eval(&qi(3), &ctx5).unwrap();
        assert_eq!(v, PadicNumber::from_q(&qi(9), &ctx5));

        // Constant monomial honors 0^0 = 1 at t = c.
        let c = FractionalMonomial::integral(qi(2), qi(7), 0, 5, 1);
        assert_eq!(c.eval(&qi(2), &ctx5).unwrap(), PadicNumber::from_q(&qi(7), &ctx5));

        // √t at t = 4 in Q_3 with branch ac_1(-2) = 1 picks the root -2.
        let ctx3 = FieldContext::qp(3, 8);
        let root = FractionalMonomial::new(
            qi(0),
            qi(1),
            1,
            2,
            RvElement::of_q(&qi(-2), 3, 1),
        )
        .unwrap();
        let r = root.eval(&qi(4), &ctx3).unwrap();
        assert_eq!(r.ac(1).unwrap(), 1);
        let sq = r.mul(&r).unwrap();
        assert_eq!(sq.ac(7).unwrap(), PadicNumber::from_q(&qi(4), &ctx3).ac(7).unwrap());
    }

    #[test]
    fn monomial_derivative_rv_examples() {
        let ctx5 = FieldContext::qp(5, 8);
        let sq = FractionalMonomial::integral(qi(0), qi(1), 2, 5, 1);
        // d/dt t² at 3 → 6, rv_1 = (ord 0, ac 1).
        assert_eq!(sq.derivative_rv(&qi(3), 1, &ctx5).unwrap(), RvElement::of_q(&qi(6), 5, 1));

        let ident = FractionalMonomial::integral(qi(0), qi(1), 1, 5, 1);
        assert_eq!(ident.derivative_rv(&qi(7), 2, &ctx5).unwrap(), RvElement::of_q(&qi(1), 5, 2));

        // √t near 1 in Q_3: derivative at 4 is (1/2)·m(4)/4 with m(4) = -2.
        let ctx3 = FieldContext::qp(3, 8);
        let root =
            FractionalMonomial::new(qi(0), qi(1), 1, 2, RvElement::of_q(&qi(-2), 3, 1)).unwrap();
        assert_eq!(
            root.derivative_rv(&qi(4), 1, &ctx3).unwrap(),
            RvElement::of_q(&q(-1, 4), 3, 1)
        );

        let constant = FractionalMonomial::integral(qi(0), qi(5), 0, 3, 1);
        assert_eq!(constant.derivative_rv(&qi(2), 1, &ctx3).unwrap(), RvElement::Zero);
    }

    #[test]
    fn enumerate_agrees_with_contains() {
        // The fast enumeration paths (direct generation at center 0, cached
        // difference tables elsewhere) must match the membership predicate
        // point for point, in window order.
        let p = 3;
        let win = Window::new(-2, 2, 3, true);
        let cells = vec![
            Cell::point(qi(0)),
            Cell::point(qi(4)),
            Cell::new(qi(0), qi(1), 1, 2, None, None, p).unwrap(),
            Cell::new(qi(0), qi(5), 2, 1, Some(qi(9)), Some(q(1, 9)), p).unwrap(),
            Cell::new(qi(-1), qi(2), 1, 1, None, Some(qi(1)), p).unwrap(),
            Cell::new(q(1, 3), qi(7), 2, 3, Some(qi(3)), Some(q(1, 27)), p).unwrap(),
        ];
        for cell in &cells {
            let fast = cell.enumerate(&win, p);
            let slow: Vec<Q> =
                win.points(p).into_iter().filter(|t| cell.contains(t, p)).collect();
            assert_eq!(fast, slow, "cell {cell:?}");
            assert_eq!(cell.canonical_sample(&win, p), slow.first().cloned());
        }
    }

    #[test]
    fn monomial_finite_difference_consistency() {
        // rv_n(m(s) - m(t)) = derivative_rv(m, t, n) · rv_n(s - t) for s, t in
        // one ball of the cell (the n-Jacobian identity applied to m).
        let ctx = FieldContext::qp(3, 10);
        let m = FractionalMonomial::integral(qi(0), qi(1), 2, 3, 1);
        let cell = Cell::new(qi(0), qi(1), 2, 1, Some(qi(3)), Some(q(1, 3)), 3).unwrap();
        let win = Window::new(-1, 1, 5, false);
        let pts = cell.enumerate(&win, 3);
        assert!(!pts.is_empty());
        for t in &pts {
            let ball = cell.ball_at(t, 3).unwrap();
            for s in &pts {
                if s == t || !ball.contains(s, 3) {
                    continue;
                }
                let lhs = RvElement::of_q(&(m.radicand(s) - m.radicand(t)), 3, 1);
                let rhs = m
                    .derivative_rv(t, 1, &ctx)
                    .unwrap()
                    .mul(&RvElement::of_q(&(s - t), 3, 1));
                assert_eq!(lhs, rhs, "s = {s}, t = {t}");
            }
        }
    }
}
