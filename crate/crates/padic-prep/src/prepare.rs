//! The preparation engine: decomposes the line (or a given cell) into finitely
//! many cells on which each input function is, up to a unit of the form
//! `1 + p^n(...)`, a constant plus a monomial in `t - center`.
//!
//! The engine works with exact rational data throughout. Dominant-term
//! analysis of the shifted numerator/denominator picks the constant `d` and
//! the monomial `e·(t-c)^a` per valuation segment; valuations where no term
//! dominates with a safe margin are excised into balls and handled by
//! recentering on the nearby roots of the numerator, the denominator and the
//! derivative numerator. Every emitted cell that meets the test window is
//! re-verified against the compatibility checker; cells below the window
//! resolution are emitted as such and counted separately.

use crate::error::PadicError;
use crate::functions::{Expr, PiecewiseFunction, ZeroInverse};
use crate::geometry::{Cell, FractionalMonomial, OrdConstraint, Window};
use crate::jacobian::{check_n_equicompatible, Counterexample, FnModel, PropertyReport};
use crate::padic::{FieldContext, PadicNumber, RvElement};
use crate::poly::{qp_roots, Poly, RatFunc};
use crate::qrat::{self, q_display, Q};
use crate::report::qser;
use num_integer::Integer;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// Hard cap on the recursion of the excision/refinement loop. The loop is
/// argued to terminate well below this; hitting the cap is reported as an
/// engine failure, never silently truncated.
const MAX_DEPTH: u32 = 96;

/// Largest bounded valuation range that is demoted ball-by-ball instead of
/// being rejected.
const MAX_DEMOTED_ORDS: usize = 512;

/// The approximation of one function on one cell:
/// `f(t) ∈ (d + monomial(t)) · (1 + p^n M_K)` on the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedModel {
    #[serde(with = "qser")]
    pub d: Q,
    pub monomial: FractionalMonomial,
    /// Depth of the angular refinement of the cell.
    pub ell: u32,
    /// Depth after applying the derivative: `ell + ord_p(a)` for exponent `a`.
    pub ell_prime: u32,
}

impl PreparedModel {
    fn constant(center: Q, value: Q, p: u64, n: u32, ell: u32) -> PreparedModel {
        PreparedModel {
            d: value,
            monomial: FractionalMonomial::integral(center, Q::zero(), 0, p, n),
            ell,
            ell_prime: ell,
        }
    }

    /// The exact value of the model at `t` (integer exponents only).
    pub fn value(&self, t: &Q) -> Option<Q> {
        self.monomial.eval_exact(t).map(|v| self.d + v)
    }
}

/// One cell of the output partition with one model per input function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedCell {
    pub cell: Cell,
    pub thin: bool,
    /// How the cell was produced (segment analysis, ball excision, ...).
    pub provenance: String,
    pub models: Vec<PreparedModel>,
}

/// A full preparation of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub cells: Vec<PreparedCell>,
    /// The rv level `n` of the preparation.
    pub level: u32,
    /// Cells whose window sample is nonempty and passed the final check.
    pub verified_cells: u64,
    /// Cells below the window resolution: correct by construction of the
    /// dominant-term analysis, not confirmed by sample points.
    pub unsampled_cells: u64,
}

/// Internal unit of work: a cell with the model of the function currently
/// being prepared.
struct Emitted {
    cell: Cell,
    model: PreparedModel,
    provenance: String,
}

/// One function body reduced to exact rational data, with its refinement
/// centers (roots of numerator, denominator and derivative numerator).
struct Target<'a> {
    pw: &'a PiecewiseFunction,
    deriv: RatFunc,
    /// Root representatives, sorted canonically; `true` marks exact rationals.
    specials: Vec<(Q, bool)>,
    rf: RatFunc,
}

fn pv(p: u64, v: i64) -> Q {
    qrat::from_val_unit(p, v, 1)
}

/// Unit part of a nonzero rational modulo `p^depth`, in `[1, p^depth)`.
fn unit_rep(x: &Q, p: u64, depth: u32) -> i128 {
    qrat::ac_residue(x, p, depth).expect("unit_rep of zero")
}

fn pick_admissible(oc: &OrdConstraint) -> i64 {
    let step = oc.modulus;
    match (oc.lo, oc.hi) {
        (Some(lo), _) => {
            let mut r = lo;
            while r.rem_euclid(step) != oc.residue {
                r += 1;
            }
            r
        }
        (None, Some(hi)) => {
            let mut r = hi;
            while r.rem_euclid(step) != oc.residue {
                r -= 1;
            }
            r
        }
        (None, None) => oc.residue,
    }
}

/// A representative point of the cell (exact member).
fn cell_rep(a: &Cell, p: u64) -> Q {
    if a.is_zero_cell() {
        return a.center;
    }
    let r = pick_admissible(&a.admissible_ords(p));
    a.center + qrat::from_val_unit(p, r, unit_rep(&a.lambda, p, a.m))
}

/// All depth-`depth` angular refinements of the class `lam Q_{m,·}`.
fn lambda_refinements(lam: &Q, m: u32, depth: u32, p: u64) -> Vec<Q> {
    if m >= depth {
        return vec![*lam];
    }
    let v = qrat::ord_p(lam, p).unwrap();
    let ua = unit_rep(lam, p, m);
    let cap = qrat::p_pow(p, depth);
    let base = qrat::p_pow(p, m);
    (1..cap)
        .filter(|u| u % p as i128 != 0 && u.rem_euclid(base) == ua)
        .map(|u| qrat::from_val_unit(p, v, u))
        .collect()
}

fn crt(ra: i64, na: i64, rb: i64, nb: i64) -> Option<i64> {
    let g = na.gcd(&nb);
    if (ra - rb).rem_euclid(g) != 0 {
        return None;
    }
    let l = na / g * nb;
    let mut r = ra.rem_euclid(l);
    while r.rem_euclid(nb) != rb.rem_euclid(nb) {
        r += na;
    }
    Some(r.rem_euclid(l))
}

/// Exact intersection of two cells with a common center (0-cells handled by
/// containment). Distinct 1-cell centers are out of scope for this engine.
pub(crate) fn intersect_cells(a: &Cell, b: &Cell, p: u64) -> Result<Option<Cell>, PadicError> {
    if a.is_zero_cell() {
        return Ok(if b.contains(&a.center, p) { Some(a.clone()) } else { None });
    }
    if b.is_zero_cell() {
        return Ok(if a.contains(&b.center, p) { Some(b.clone()) } else { None });
    }
    if a.center != b.center {
        return Err(PadicError::Engine(
            "cell intersection with distinct centers is not supported".into(),
        ));
    }
    let oa = a.admissible_ords(p);
    let ob = b.admissible_ords(p);
    let Some(r) = crt(oa.residue, oa.modulus, ob.residue, ob.modulus) else {
        return Ok(None);
    };
    let l = oa.modulus / oa.modulus.gcd(&ob.modulus) * ob.modulus;
    let (deep, shallow) = if a.m >= b.m { (a, b) } else { (b, a) };
    let ud = unit_rep(&deep.lambda, p, deep.m);
    if ud.rem_euclid(qrat::p_pow(p, shallow.m)) != unit_rep(&shallow.lambda, p, shallow.m) {
        return Ok(None);
    }
    let lam = qrat::from_val_unit(p, r, ud);
    let lo = match (oa.lo, ob.lo) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    };
    let hi = match (oa.hi, ob.hi) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    let alpha = hi.map(|h| pv(p, h + 1));
    let beta = lo.map(|low| pv(p, low - 1));
    match Cell::new(a.center, lam, deep.m, l as u32, alpha, beta, p) {
        Ok(c) => Ok(Some(c)),
        Err(PadicError::EmptyCell(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Deepest window resolution: valuations beyond this are indistinguishable on
/// the window.
fn resolution_floor(w: &Window) -> i64 {
    w.v_max + w.unit_level as i64 + 2
}

/// Root location depth, bounded so the modular arithmetic stays exact.
fn root_digits(p: u64, w: &Window) -> u32 {
    let want = (resolution_floor(w) + 4).clamp(8, 60) as u32;
    // The root search squares residues mod p^(digits+6); keep that in i128.
    let bound: i128 = 13_000_000_000_000_000_000;
    let mut k: u32 = 0;
    let mut acc: i128 = 1;
    while acc <= bound / p as i128 {
        acc *= p as i128;
        k += 1;
    }
    want.min(k.saturating_sub(6))
}

/// Largest total digit budget (significant digits plus |ord|) for a point so
/// that exact polynomial arithmetic of degree `dmax` at the point stays well
/// inside `i128`.
fn fit_digits(p: u64, dmax: usize) -> i64 {
    (110.0 / (dmax.max(1) as f64 * (p as f64).log2())).floor() as i64
}

/// Truncation of `x` to at most `sig` significant digits: the canonical
/// representative of `x` modulo `p^(ord(x) + sig)`.
fn truncate_digits(x: &Q, p: u64, sig: i64) -> Q {
    let v = match qrat::ord_p(x, p) {
        None => return Q::zero(),
        Some(v) => v,
    };
    let u = qrat::ac_residue(x, p, sig.max(1) as u32).unwrap();
    qrat::from_val_unit(p, v, u)
}

/// Deepest capped precision whose unit products stay inside `i128`.
fn deep_precision(p: u64) -> u32 {
    (62.0 / (p as f64).log2()).floor() as u32
}

fn poly_eval_capped(
    poly: &Poly,
    t: &PadicNumber,
    ctx: &FieldContext,
) -> Result<PadicNumber, PadicError> {
    let mut acc = PadicNumber::exact_zero(ctx);
    for c in poly.coeffs().iter().rev() {
        acc = acc.mul(t)?;
        acc = match acc.add(&PadicNumber::from_q(c, ctx)) {
            Ok(v) => v,
            Err(PadicError::FullCancellation) => PadicNumber::exact_zero(ctx),
            Err(e) => return Err(e),
        };
    }
    Ok(acc)
}

/// `rf(t0)` as a small canonical representative: exact rational arithmetic
/// when the magnitudes allow, capped p-adic Horner evaluation otherwise.
/// `None` at poles.
fn ratfunc_eval_rep(rf: &RatFunc, t0: &Q, p: u64) -> Result<Option<Q>, PadicError> {
    let bits = |x: &Q| (x.numer().abs().max(*x.denom()).max(2) as f64).log2();
    let dmax = rf.num.degree().max(rf.den.degree()).unwrap_or(0) as f64;
    let cb = rf
        .num
        .coeffs()
        .iter()
        .chain(rf.den.coeffs())
        .map(|c| bits(c))
        .fold(1.0_f64, f64::max);
    if dmax * bits(t0) + cb + 16.0 < 126.0 {
        return Ok(rf.eval(t0));
    }
    let deep = FieldContext::qp(p, deep_precision(p));
    let tv = PadicNumber::from_q(t0, &deep);
    let num = poly_eval_capped(&rf.num, &tv, &deep)?;
    let den = poly_eval_capped(&rf.den, &tv, &deep)?;
    if den.is_zero() {
        return Ok(None);
    }
    let v = num.mul(&den.inv())?;
    Ok(Some(q_capped(v, p)))
}

/// Magnitude of a rational in bits, for overflow guards.
fn q_bits(x: &Q) -> f64 {
    (x.numer().abs().max(*x.denom()).max(2) as f64).log2()
}

/// Capped p-adic arithmetic on canonical representatives, used when exact
/// rational arithmetic would overflow `i128`. The unit is truncated to the
/// digits that still fit next to `p^|val|`; values too deep to carry even one
/// digit are snapped to zero (they are indistinguishable from zero at any
/// window resolution the engine samples).
fn q_capped(x: PadicNumber, p: u64) -> Q {
    let fit = (126.0 / (p as f64).log2()).floor() as i64;
    match x {
        PadicNumber::Zero { .. } => Q::zero(),
        PadicNumber::Nonzero { val, unit, .. } => {
            let avail = fit - val.abs() - 1;
            if avail < 1 {
                debug_assert!(val > 0, "magnitude beyond i128 rationals");
                return Q::zero();
            }
            let sig = avail.min(deep_precision(p) as i64) as u32;
            qrat::from_val_unit(p, val, unit.rem_euclid(qrat::p_pow(p, sig)))
        }
    }
}

/// Overflow-safe `a + b`: exact when the magnitudes allow, otherwise the
/// canonical representative of the capped p-adic sum.
fn q_add_capped(a: &Q, b: &Q, p: u64) -> Q {
    if q_bits(a) + q_bits(b) + 4.0 < 126.0 {
        return a + b;
    }
    let deep = FieldContext::qp(p, deep_precision(p));
    match PadicNumber::from_q(a, &deep).add(&PadicNumber::from_q(b, &deep)) {
        Ok(v) => q_capped(v, p),
        Err(_) => Q::zero(),
    }
}

/// Overflow-safe `a * b`, with the same fallback as [`q_add_capped`].
fn q_mul_capped(a: &Q, b: &Q, p: u64) -> Q {
    if q_bits(a) + q_bits(b) + 4.0 < 126.0 {
        return a * b;
    }
    let deep = FieldContext::qp(p, deep_precision(p));
    match PadicNumber::from_q(a, &deep).mul(&PadicNumber::from_q(b, &deep)) {
        Ok(v) => q_capped(v, p),
        Err(_) => Q::zero(),
    }
}

/// `f(t0)` under the inversion convention, overflow-safe at deep points.
fn value_rep(tgt: &Target, t0: &Q, p: u64) -> Result<Q, PadicError> {
    let bits = (t0.numer().abs().max(*t0.denom()).max(2) as f64).log2();
    let dmax = tgt.rf.num.degree().max(tgt.rf.den.degree()).unwrap_or(0) as f64;
    if dmax * bits + 24.0 < 126.0 {
        return tgt.pw.eval_q(t0, ZeroInverse::Convention);
    }
    ratfunc_eval_rep(&tgt.rf, t0, p)?
        .ok_or_else(|| PadicError::Engine("pole inside a center-free ball".into()))
}

fn build_target<'a>(
    f: &'a PiecewiseFunction,
    body: &Expr,
    w: &Window,
    ctx: &FieldContext,
) -> Target<'a> {
    let rf = body.to_ratfunc();
    let deriv = rf.derivative();
    let digits = root_digits(ctx.p, w);
    let dmax = [&rf.num, &rf.den, &deriv.num, &deriv.den]
        .iter()
        .filter_map(|q| q.degree())
        .max()
        .unwrap_or(1);
    let fit = fit_digits(ctx.p, dmax);
    let mut specials: Vec<(Q, bool)> = Vec::new();
    for poly in [&rf.num, &rf.den, &deriv.num] {
        if poly.is_zero() {
            continue;
        }
        for r in qp_roots(poly, ctx.p, digits) {
            let rep = if r.exact {
                r.rep
            } else {
                // An inexact representative only carries p-adic digits, so it
                // can be truncated to what exact degree-dmax arithmetic at the
                // point can bear; structure beyond that depth ends up in
                // unverified below-resolution cells.
                let v = qrat::ord_p(&r.rep, ctx.p).unwrap_or(0);
                truncate_digits(&r.rep, ctx.p, fit - v.abs())
            };
            if !specials.iter().any(|(x, _)| x == &rep) {
                specials.push((rep, r.exact));
            }
        }
    }
    specials.sort_by_key(|(x, _)| qrat::canonical_key(x, ctx.p));
    Target { pw: f, rf, deriv, specials }
}

fn verify_model(
    tgt: &Target,
    cell: &Cell,
    model: &PreparedModel,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<Option<PropertyReport>, PadicError> {
    if cell.canonical_sample(w, ctx.p).is_none() {
        return Ok(None);
    }
    let rep = check_n_equicompatible(
        &FnModel::Exact(tgt.pw),
        &FnModel::Centered { d: model.d, m: &model.monomial },
        cell,
        n,
        w,
        ctx,
    )?;
    Ok(Some(rep))
}

/// Prepares one function on one cell. The result tiles the cell exactly.
fn prepare_single(
    tgt: &Target,
    a: &Cell,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
    depth: u32,
) -> Result<Vec<Emitted>, PadicError> {
    if depth > MAX_DEPTH {
        return Err(PadicError::Engine("preparation recursion depth exceeded".into()));
    }
    let p = ctx.p;
    let ell_eff = (n + 2).max(a.m);
    if a.is_zero_cell() {
        let d = tgt.pw.eval_q(&a.center, ZeroInverse::Convention)?;
        return Ok(vec![Emitted {
            cell: a.clone(),
            model: PreparedModel::constant(a.center, d, p, n, ell_eff),
            provenance: "point".into(),
        }]);
    }
    if tgt.deriv.num.is_zero() {
        let d = tgt.pw.eval_q(&cell_rep(a, p), ZeroInverse::Convention)?;
        return Ok(vec![Emitted {
            cell: a.clone(),
            model: PreparedModel::constant(a.center, d, p, n, ell_eff),
            provenance: "constant".into(),
        }]);
    }
    if a.is_thin_syntactic(p) {
        let t0 = cell_rep(a, p);
        let z = a.ball_at(&t0, p)?.radius_order;
        return handle_ball(tgt, &t0, z, n, w, ctx, depth + 1);
    }
    segment_pipeline(tgt, a, n, w, ctx, depth)
}

/// A dominant-term assignment at one valuation: the chosen constant `d` and
/// the monomial data of `f - d` there.
#[derive(Clone, PartialEq)]
struct Assign {
    key: (usize, usize, usize),
    d: Q,
    e: Q,
    a_exp: i64,
}

/// Index into `terms` of the strictly dominant term at valuation `r`, i.e. the
/// term of least weight `v_i + i·r`, required to beat all others by `margin`.
fn dominant(terms: &[(usize, i64)], r: i64, margin: i64) -> Option<usize> {
    let mut best: Option<(usize, i64)> = None;
    for (k, &(i, v)) in terms.iter().enumerate() {
        let wgt = v + i as i64 * r;
        if best.map_or(true, |(_, bw)| wgt < bw) {
            best = Some((k, wgt));
        }
    }
    let (k, bw) = best?;
    for (k2, &(i, v)) in terms.iter().enumerate() {
        if k2 != k && v + i as i64 * r < bw + margin {
            return None;
        }
    }
    Some(k)
}

fn segment_pipeline(
    tgt: &Target,
    a: &Cell,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
    depth: u32,
) -> Result<Vec<Emitted>, PadicError> {
    let p = ctx.p;
    let margin = n as i64 + 3;
    let ell_eff = (n + 2).max(a.m);
    let c = a.center;
    let g = tgt.rf.shift(&c);
    let dg = tgt.deriv.shift(&c);
    if g.den.is_zero() || dg.den.is_zero() {
        return Err(PadicError::Internal("zero denominator in segment analysis".into()));
    }
    let gden_terms = g.den.term_vals(p);
    let dnum_terms = dg.num.term_vals(p);
    let dden_terms = dg.den.term_vals(p);

    // Candidate constants: 0 and the ratios of same-degree coefficients.
    struct Candidate {
        d: Q,
        poly: crate::poly::Poly,
        terms: Vec<(usize, i64)>,
    }
    let mut cands: Vec<Candidate> = Vec::new();
    let push_cand = |d: Q, cands: &mut Vec<Candidate>| {
        if cands.iter().any(|k| k.d == d) {
            return;
        }
        let nd = g.num.sub(&g.den.scale(&d));
        if nd.is_zero() {
            return;
        }
        let terms = nd.term_vals(p);
        cands.push(Candidate { d, poly: nd, terms });
    };
    push_cand(Q::zero(), &mut cands);
    let top = g.num.degree().unwrap_or(0).max(g.den.degree().unwrap_or(0));
    for i in 0..=top {
        let (ai, bi) = (g.num.coeff(i), g.den.coeff(i));
        if !ai.is_zero() && !bi.is_zero() {
            push_cand(ai / bi, &mut cands);
        }
    }

    let assign_at = |r: i64| -> Option<Assign> {
        let j0 = dominant(&gden_terms, r, margin)?;
        let jd = dominant(&dden_terms, r, margin)?;
        let i1 = dominant(&dnum_terms, r, margin)?;
        let a1 = dnum_terms[i1].0 as i64 - dden_terms[jd].0 as i64;
        let e1 = dg.num.coeff(dnum_terms[i1].0) / dg.den.coeff(dden_terms[jd].0);
        for (ci, cand) in cands.iter().enumerate() {
            let Some(i0) = dominant(&cand.terms, r, margin) else { continue };
            let a_exp = cand.terms[i0].0 as i64 - gden_terms[j0].0 as i64;
            if a_exp == 0 {
                continue;
            }
            let e = cand.poly.coeff(cand.terms[i0].0) / g.den.coeff(gden_terms[j0].0);
            if a1 != a_exp - 1 {
                continue;
            }
            if RvElement::of_q(&e1, p, n) != RvElement::of_q(&(qrat::qi(a_exp as i128) * e), p, n)
            {
                continue;
            }
            return Some(Assign {
                key: (ci, cand.terms[i0].0, gden_terms[j0].0),
                d: cand.d,
                e,
                a_exp,
            });
        }
        None
    };

    // Breakpoints of all weight functions; beyond them (with buffer) the
    // assignment is constant in r.
    let mut lo_bp = i64::MAX;
    let mut hi_bp = i64::MIN;
    {
        let mut note = |terms: &[(usize, i64)]| {
            for x in 0..terms.len() {
                for y in x + 1..terms.len() {
                    let (i, vi) = terms[x];
                    let (j, vj) = terms[y];
                    let num = vi - vj;
                    let den = j as i64 - i as i64;
                    lo_bp = lo_bp.min(Integer::div_floor(&num, &den));
                    hi_bp = hi_bp.max(Integer::div_ceil(&num, &den));
                }
            }
        };
        for cand in &cands {
            note(&cand.terms);
        }
        note(&gden_terms);
        note(&dnum_terms);
        note(&dden_terms);
    }
    let (probe_lo, probe_hi) = if lo_bp > hi_bp {
        (0, 0)
    } else {
        ((lo_bp - margin - 2).max(-60), (hi_bp + margin + 2).min(60))
    };

    let oc = a.admissible_ords(p);
    let step = oc.modulus;
    let lo_e = oc.lo.map_or(probe_lo - step, |l| l.max(probe_lo - step));
    let hi_e = oc.hi.map_or(probe_hi + step, |h| h.min(probe_hi + step));
    let mut rs: Vec<i64> = (lo_e..=hi_e).filter(|r| r.rem_euclid(step) == oc.residue).collect();
    if rs.is_empty() {
        // The whole cell lies on one side of every breakpoint.
        rs.push(pick_admissible(&oc));
    }
    // Whether the enumeration is cut short of the cell on either side.
    let tail_below = oc.lo.map_or(true, |l| l < *rs.first().unwrap());
    let tail_above = oc.hi.map_or(true, |h| h > *rs.last().unwrap());

    // Coalesce consecutive equal assignments into segments.
    struct Seg {
        r_first: i64,
        r_last: i64,
        asg: Assign,
    }
    let mut segs: Vec<Seg> = Vec::new();
    let mut bad: Vec<i64> = Vec::new();
    for &r in &rs {
        match assign_at(r) {
            None => bad.push(r),
            Some(asg) => match segs.last_mut() {
                Some(s) if s.r_last + step == r && s.asg.key == asg.key && s.asg.d == asg.d => {
                    s.r_last = r;
                }
                _ => segs.push(Seg { r_first: r, r_last: r, asg }),
            },
        }
    }
    let first_r = *rs.first().unwrap();
    let last_r = *rs.last().unwrap();
    if tail_below && bad.contains(&first_r) {
        return Err(PadicError::Engine(
            "dominant-term analysis failed on the unbounded lower side".into(),
        ));
    }
    if tail_above && bad.contains(&last_r) {
        return Err(PadicError::Engine(
            "dominant-term analysis failed on the unbounded upper side".into(),
        ));
    }

    let mut out: Vec<Emitted> = Vec::new();
    for seg in &segs {
        let seg_lo = if seg.r_first == first_r { oc.lo } else { Some(seg.r_first) };
        let seg_hi = if seg.r_last == last_r { oc.hi } else { Some(seg.r_last) };
        let alpha = seg_hi.map(|h| pv(p, h + 1));
        let beta = seg_lo.map(|l| pv(p, l - 1));
        for lam in lambda_refinements(&a.lambda, a.m, ell_eff, p) {
            let cell = match Cell::new(c, lam, ell_eff, a.n, alpha, beta, p) {
                Ok(x) => x,
                Err(PadicError::EmptyCell(_)) => continue,
                Err(e) => return Err(e),
            };
            let model = PreparedModel {
                d: seg.asg.d,
                monomial: FractionalMonomial::integral(c, seg.asg.e, seg.asg.a_exp, p, n),
                ell: ell_eff,
                ell_prime: ell_eff + qrat::int_val(seg.asg.a_exp as i128, p) as u32,
            };
            match verify_model(tgt, &cell, &model, n, w, ctx)? {
                Some(rep) if !rep.verdict => {
                    // Demote the cell ball-by-ball; only bounded cells can be.
                    let occ = cell.admissible_ords(p);
                    let (Some(lo), Some(hi)) = (occ.lo, occ.hi) else {
                        return Err(PadicError::Engine(format!(
                            "unbounded segment cell failed verification: {}",
                            rep.detail
                        )));
                    };
                    let ords: Vec<i64> = (lo..=hi).filter(|r| occ.admits(*r)).collect();
                    if ords.len() > MAX_DEMOTED_ORDS {
                        return Err(PadicError::Engine(
                            "segment demotion range too large".into(),
                        ));
                    }
                    let u = unit_rep(&lam, p, ell_eff);
                    for r in ords {
                        let t0 = c + qrat::from_val_unit(p, r, u);
                        out.extend(handle_ball(
                            tgt,
                            &t0,
                            r + ell_eff as i64,
                            n,
                            w,
                            ctx,
                            depth + 1,
                        )?);
                    }
                }
                _ => out.push(Emitted { cell, model, provenance: "segment".into() }),
            }
        }
    }
    for &r in &bad {
        let u = unit_rep(&a.lambda, p, a.m);
        let t0 = c + qrat::from_val_unit(p, r, u);
        out.extend(handle_ball(tgt, &t0, r + a.m as i64, n, w, ctx, depth + 1)?);
    }
    Ok(out)
}

/// Prepares the function on the ball `{t : ord(t - t0) ≥ z}`. Balls free of
/// refinement centers carry an affine model on a single thin cell; balls
/// containing a center are recentered there and recursed.
fn handle_ball(
    tgt: &Target,
    t0: &Q,
    z: i64,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
    depth: u32,
) -> Result<Vec<Emitted>, PadicError> {
    if depth > MAX_DEPTH {
        return Err(PadicError::Engine("ball refinement recursion depth exceeded".into()));
    }
    let p = ctx.p;
    let floor_res = resolution_floor(w);
    let inside: Vec<&(Q, bool)> = tgt
        .specials
        .iter()
        .filter(|(s, _)| qrat::ord_p(&(s - t0), p).map_or(true, |v| v >= z))
        .collect();
    let recurse = !inside.is_empty() && (z <= floor_res || inside.iter().any(|(_, ex)| *ex));
    if recurse {
        let cp = inside
            .iter()
            .find(|(_, ex)| *ex)
            .unwrap_or(&inside[0])
            .0;
        let d0 = value_rep(tgt, &cp, p)?;
        let mut out = vec![Emitted {
            cell: Cell::point(cp),
            model: PreparedModel::constant(cp, d0, p, n, n + 2),
            provenance: "recenter-point".into(),
        }];
        for u in 1..p as i128 {
            let cell = Cell::new(cp, qrat::qi(u), 1, 1, None, Some(pv(p, z - 1)), p)?;
            out.extend(prepare_single(tgt, &cell, n, w, ctx, depth + 1)?);
        }
        return Ok(out);
    }

    // Affine model on the ball, written as a single thin cell.
    let ell = n + 2;
    let woff = pv(p, z - ell as i64);
    let center = t0 + woff;
    let cell = Cell::new(
        center,
        -woff,
        ell,
        1,
        Some(pv(p, z - ell as i64 + 1)),
        Some(pv(p, z - ell as i64 - 1)),
        p,
    )?;
    let e = ratfunc_eval_rep(&tgt.deriv, t0, p)?
        .ok_or_else(|| PadicError::Engine("derivative pole inside a center-free ball".into()))?;
    if e.is_zero() {
        return Err(PadicError::Engine("derivative zero inside a center-free ball".into()));
    }
    let d = q_add_capped(&value_rep(tgt, t0, p)?, &q_mul_capped(&e, &woff, p), p);
    let model = PreparedModel {
        d,
        monomial: FractionalMonomial::integral(center, e, 1, p, n),
        ell,
        ell_prime: ell,
    };
    if z <= floor_res {
        if let Some(rep) = verify_model(tgt, &cell, &model, n, w, ctx)? {
            if !rep.verdict {
                let mut out = Vec::new();
                for j in 0..p as i128 {
                    let sub = t0 + qrat::qi(j) * pv(p, z);
                    out.extend(handle_ball(tgt, &sub, z + 1, n, w, ctx, depth + 1)?);
                }
                return Ok(out);
            }
        }
    }
    let provenance = if z > floor_res { "ball-below-resolution" } else { "ball" };
    Ok(vec![Emitted { cell, model, provenance: provenance.into() }])
}

/// Prepares every function of `fs` simultaneously on `domain`: the output
/// cells tile the domain and carry one verified model per function.
pub fn prepare(
    fs: &[PiecewiseFunction],
    n: u32,
    domain: &Cell,
    w: &Window,
    ctx: &FieldContext,
) -> Result<Partition, PadicError> {
    if n == 0 {
        return Err(PadicError::Precondition("preparation level n must be ≥ 1".into()));
    }
    let p = ctx.p;
    for f in fs {
        if f.p != p {
            return Err(PadicError::ContextMismatch(f.p, p));
        }
    }

    // Common refinement of the domain with every function's guard cells.
    let mut atoms: Vec<Cell> = vec![domain.clone()];
    for f in fs {
        // A total function places no constraint on the atoms.
        if f.pieces.len() == 1 && f.pieces[0].guard.is_all() {
            continue;
        }
        let mut next = Vec::new();
        for atom in &atoms {
            for piece in &f.pieces {
                for gcell in &piece.cells {
                    if let Some(i) = intersect_cells(atom, gcell, p)? {
                        next.push(i);
                    }
                }
            }
        }
        atoms = next;
    }
    for t in domain.enumerate(w, p) {
        let hits = atoms.iter().filter(|a| a.contains(&t, p)).count();
        if hits == 0 {
            return Err(PadicError::OutsideDomain(q_display(&t)));
        }
        if hits > 1 {
            return Err(PadicError::OverlappingGuards(q_display(&t)));
        }
    }

    // Prepare function by function, refining the partition each time; models
    // already attached restrict unchanged to the subcells.
    let mut items: Vec<(Cell, Vec<PreparedModel>, Vec<String>)> =
        atoms.into_iter().map(|a| (a, Vec::new(), Vec::new())).collect();
    for f in fs {
        let targets: Vec<Target> =
            f.pieces.iter().map(|pc| build_target(f, &pc.body, w, ctx)).collect();
        let mut next = Vec::new();
        for (cell, models, provs) in items {
            let rep = cell_rep(&cell, p);
            let pi = f
                .pieces
                .iter()
                .position(|pc| pc.cells.iter().any(|gc| gc.contains(&rep, p)))
                .ok_or_else(|| PadicError::OutsideDomain(q_display(&rep)))?;
            for em in prepare_single(&targets[pi], &cell, n, w, ctx, 0)? {
                let mut ms = models.clone();
                ms.push(em.model);
                let mut ps = provs.clone();
                ps.push(em.provenance);
                next.push((em.cell, ms, ps));
            }
        }
        items = next;
    }

    // Final verification gate and assembly.
    let mut cells = Vec::new();
    let mut verified = 0u64;
    let mut unsampled = 0u64;
    for (cell, models, provs) in items {
        if cell.canonical_sample(w, p).is_some() {
            for (f, model) in fs.iter().zip(&models) {
                let rep = check_n_equicompatible(
                    &FnModel::Exact(f),
                    &FnModel::Centered { d: model.d, m: &model.monomial },
                    &cell,
                    n,
                    w,
                    ctx,
                )?;
                if !rep.verdict {
                    return Err(PadicError::Engine(format!(
                        "prepared cell failed the final verification: {}",
                        rep.detail
                    )));
                }
            }
            verified += 1;
        } else {
            unsampled += 1;
        }
        let thin = cell.is_thin(w, p)?;
        cells.push(PreparedCell { cell, thin, provenance: provs.join("; "), models });
    }

    // The cells must tile the domain exactly on the window.
    let mut covered: Vec<Q> = cells.iter().flat_map(|c| c.cell.enumerate(w, p)).collect();
    let mut whole = domain.enumerate(w, p);
    covered.sort_by_key(|x| qrat::canonical_key(x, p));
    whole.sort_by_key(|x| qrat::canonical_key(x, p));
    if covered != whole {
        return Err(PadicError::Internal(
            "prepared cells do not tile the domain window".into(),
        ));
    }
    Ok(Partition { cells, level: n, verified_cells: verified, unsampled_cells: unsampled })
}

/// Prepares on the whole line: the unit classes around 0 plus the origin.
pub fn prepare_line(
    fs: &[PiecewiseFunction],
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<Partition, PadicError> {
    let p = ctx.p;
    let mut domains = vec![Cell::point(Q::zero())];
    for u in 1..p as i128 {
        domains.push(Cell::unit_class(Q::zero(), qrat::qi(u), p));
    }
    let mut cells = Vec::new();
    let mut verified = 0u64;
    let mut unsampled = 0u64;
    for d in &domains {
        let part = prepare(fs, n, d, w, ctx)?;
        verified += part.verified_cells;
        unsampled += part.unsampled_cells;
        cells.extend(part.cells);
    }
    Ok(Partition { cells, level: n, verified_cells: verified, unsampled_cells: unsampled })
}

/// One part of a classical decomposition: on the cell, `rv_n(f(t))` equals
/// `rv_n` of the attached monomial (a constant or `e·(t-c)^a`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalPart {
    pub cell: Cell,
    pub monomial: FractionalMonomial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalDecomposition {
    pub parts: Vec<ClassicalPart>,
    pub level: u32,
    /// Window points on which the rv identity was confirmed exactly.
    pub checked_points: u64,
}

/// Splits one prepared cell into parts on which `rv_n(d + monomial)` is given
/// by a single monomial: the monomial where it dominates `d` by `p^n`, the
/// constant `d` where `d` dominates, and pinned constants on the finite band
/// in between.
fn classical_split(
    cell: &Cell,
    model: &PreparedModel,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
    depth: u32,
) -> Result<Vec<ClassicalPart>, PadicError> {
    let p = ctx.p;
    let constant = |value: Q, cell: Cell| ClassicalPart {
        monomial: FractionalMonomial::integral(cell.center, value, 0, p, n),
        cell,
    };
    if cell.is_zero_cell() {
        let v = model.value(&cell.center).unwrap_or(model.d);
        return Ok(vec![constant(v, cell.clone())]);
    }
    if model.d.is_zero() {
        return Ok(vec![ClassicalPart { cell: cell.clone(), monomial: model.monomial.clone() }]);
    }
    if model.monomial.coeff.is_zero() {
        return Ok(vec![constant(model.d, cell.clone())]);
    }
    let a = model.monomial.num;
    if a == 0 {
        return Ok(vec![constant(model.d + model.monomial.coeff, cell.clone())]);
    }
    if model.monomial.den != 1 {
        return Err(PadicError::Engine(
            "classical split requires an integral monomial exponent".into(),
        ));
    }
    if model.monomial.center != cell.center {
        return Err(PadicError::Engine(
            "classical split requires the model center to equal the cell center".into(),
        ));
    }
    let vd = qrat::ord_p(&model.d, p).unwrap();
    let ve = qrat::ord_p(&model.monomial.coeff, p).unwrap();
    let ni = n as i64;
    // Band of valuations where neither d nor the monomial dominates by p^n:
    // vd - n < ve + a·r < vd + n.
    let (band_lo, band_hi) = if a > 0 {
        (Integer::div_floor(&(vd - ni - ve), &a) + 1, Integer::div_ceil(&(vd + ni - ve), &a) - 1)
    } else {
        (Integer::div_floor(&(vd + ni - ve), &a) + 1, Integer::div_ceil(&(vd - ni - ve), &a) - 1)
    };
    let oc = cell.admissible_ords(p);
    let mut parts = Vec::new();
    let mut side = |lo: Option<i64>, hi: Option<i64>, mono_side: bool| -> Result<(), PadicError> {
        let lo_eff = match (lo, oc.lo) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, y) => x.or(y),
        };
        let hi_eff = match (hi, oc.hi) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
        let alpha = hi_eff.map(|h| pv(p, h + 1));
        let beta = lo_eff.map(|l| pv(p, l - 1));
        match Cell::new(cell.center, cell.lambda, cell.m, cell.n, alpha, beta, p) {
            Ok(sub) => {
                parts.push(if mono_side {
                    ClassicalPart { cell: sub, monomial: model.monomial.clone() }
                } else {
                    constant(model.d, sub)
                });
                Ok(())
            }
            Err(PadicError::EmptyCell(_)) => Ok(()),
            Err(e) => Err(e),
        }
    };
    // Low side / high side: for a > 0 the monomial dominates at low r.
    side(None, Some(band_lo - 1), a > 0)?;
    side(Some(band_hi + 1), None, a < 0)?;
    // Band: pin each admissible valuation and angular class deep enough that
    // the sum d + e·s^a has one rv class per part.
    let ell_c = (2 * n + 1 + qrat::int_val(a as i128, p) as u32).max(cell.m);
    for r in band_lo..=band_hi {
        if !oc.admits(r) {
            continue;
        }
        for lam in lambda_refinements(&cell.lambda, cell.m, ell_c, p) {
            let sub = match Cell::new(
                cell.center,
                lam,
                ell_c,
                cell.n,
                Some(pv(p, r + 1)),
                Some(pv(p, r - 1)),
                p,
            ) {
                Ok(x) => x,
                Err(PadicError::EmptyCell(_)) => continue,
                Err(e) => return Err(e),
            };
            let s0 = qrat::from_val_unit(p, r, unit_rep(&lam, p, ell_c));
            let v = model.d + model.monomial.coeff * qrat::q_pow(&s0, a);
            // The pinned constant is only valid when it dominates the
            // variation of d + e·s^a over the class: that variation has
            // ord ≥ ve + a·r + ord(a) + ell_c.
            let var_ord = ve + a * r + qrat::int_val(a as i128, p) + ell_c as i64;
            let pinnable = !v.is_zero() && qrat::ord_p(&v, p).unwrap() + ni <= var_ord;
            if pinnable || sub.canonical_sample(w, p).is_none() {
                // Either the constant dominates the variation over the class,
                // or the slice holds no window point and the pinned value is
                // vacuously consistent with every sampled check.
                parts.push(constant(v, sub));
                continue;
            }
            // Deep cancellation: a root of d + e·s^a lies in the class, so no
            // constant pins its rv. Re-prepare the model polynomial on the
            // slice; the engine recenters at the root and the recursion sees
            // monomial-dominated models.
            if depth == 0 {
                return Err(PadicError::Engine(
                    "classical split recursion exhausted near a cancellation root".into(),
                ));
            }
            let body = Expr::Add(
                Box::new(Expr::constant(model.d)),
                Box::new(Expr::Mul(
                    Box::new(Expr::constant(model.monomial.coeff)),
                    Box::new(Expr::Pow(
                        Box::new(Expr::Sub(
                            Box::new(Expr::Var),
                            Box::new(Expr::constant(cell.center)),
                        )),
                        a,
                    )),
                )),
            );
            let g = PiecewiseFunction::total(body, p);
            let sub_part = prepare(std::slice::from_ref(&g), n, &sub, w, ctx)?;
            for pc in &sub_part.cells {
                parts.extend(classical_split(&pc.cell, &pc.models[0], n, w, ctx, depth - 1)?);
            }
        }
    }
    Ok(parts)
}

/// A decomposition of the line into cells on which `rv_n(f(t))` equals the
/// `rv_n` of an attached monomial, verified exactly on every window point.
pub fn classical_decomposition(
    f: &PiecewiseFunction,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<ClassicalDecomposition, PadicError> {
    let p = ctx.p;
    let part = prepare_line(std::slice::from_ref(f), n, w, ctx)?;
    let mut parts = Vec::new();
    for pc in &part.cells {
        parts.extend(classical_split(&pc.cell, &pc.models[0], n, w, ctx, 8)?);
    }
    let mut checked = 0u64;
    for t in w.points(p) {
        let hits: Vec<&ClassicalPart> = parts.iter().filter(|cp| cp.cell.contains(&t, p)).collect();
        if hits.is_empty() {
            if f.domain_contains(&t) {
                return Err(PadicError::Internal(format!(
                    "classical parts miss t = {}",
                    q_display(&t)
                )));
            }
            continue;
        }
        if hits.len() > 1 {
            return Err(PadicError::Internal(format!(
                "classical parts overlap at t = {}",
                q_display(&t)
            )));
        }
        let value = hits[0]
            .monomial
            .eval_exact(&t)
            .ok_or_else(|| PadicError::Engine("fractional classical monomial".into()))?;
        let lhs = RvElement::of_q(&f.eval_q(&t, ZeroInverse::Convention)?, p, n);
        let rhs = RvElement::of_q(&value, p, n);
        if lhs != rhs {
            return Err(PadicError::Engine(format!(
                "classical rv mismatch at t = {}: f has {:?}, monomial has {:?}",
                q_display(&t),
                lhs,
                rhs
            )));
        }
        checked += 1;
    }
    Ok(ClassicalDecomposition { parts, level: n, checked_points: checked })
}

/// Audits the uniqueness of the prepared coefficient on an unbounded cell:
/// every perturbation of `e` outside its `rv_n` class (unit twists and
/// valuation shifts) must be rejected by the compatibility checker.
pub fn uniqueness_check(
    f: &PiecewiseFunction,
    cell: &Cell,
    model: &PreparedModel,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    if !cell.is_unbounded() {
        return Err(PadicError::Precondition(
            "uniqueness audit requires an unbounded cell".into(),
        ));
    }
    let p = ctx.p;
    if cell.canonical_sample(w, p).is_none() {
        return Err(PadicError::EmptySample);
    }
    let e = model.monomial.coeff;
    if e.is_zero() {
        return Ok(PropertyReport {
            verdict: true,
            checked_pairs: 0,
            first_counterexample: None,
            level_n: n,
            window: *w,
            derivative_ord: None,
            detail: "constant model: no coefficient to perturb".into(),
        });
    }
    let mut perturbations: Vec<Q> = Vec::new();
    let cap = qrat::p_pow(p, n);
    for u in 2..cap {
        if u % p as i128 != 0 {
            perturbations.push(e * qrat::qi(u));
        }
    }
    perturbations.push(e * qrat::qi(p as i128));
    perturbations.push(e / qrat::qi(p as i128));
    let mut checked = 0u64;
    for e2 in perturbations {
        let m2 = FractionalMonomial::integral(model.monomial.center, e2, model.monomial.num, p, n);
        let rep = check_n_equicompatible(
            &FnModel::Exact(f),
            &FnModel::Centered { d: model.d, m: &m2 },
            cell,
            n,
            w,
            ctx,
        )?;
        checked += 1;
        if rep.verdict {
            let t = cell.canonical_sample(w, p).unwrap();
            return Ok(PropertyReport {
                verdict: false,
                checked_pairs: checked,
                first_counterexample: Some(Counterexample {
                    x: t,
                    y: e2,
                    lhs: format!("e = {}", q_display(&e)),
                    rhs: format!("accepted e' = {}", q_display(&e2)),
                }),
                level_n: n,
                window: *w,
                derivative_ord: None,
                detail: "a coefficient outside the rv class was accepted".into(),
            });
        }
    }
    Ok(PropertyReport {
        verdict: true,
        checked_pairs: checked,
        first_counterexample: None,
        level_n: n,
        window: *w,
        derivative_ord: None,
        detail: format!("all {checked} perturbed coefficients rejected"),
    })
}
