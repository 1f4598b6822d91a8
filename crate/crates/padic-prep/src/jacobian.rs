//! Verifiers for the Jacobian property, its rv_n refinement, and
//! n-(equi)compatibility of maps on cells, plus three constructive solvers:
//! the ultrametric Banach fixed point, the equal-value point of two maps with
//! distinct derivative valuations, and the equal-rv collision point.
//!
//! Every verdict is the verdict of an exhaustive double loop over the window
//! sample; counterexamples are reported as the lexicographically least
//! offending pair in the canonical window order.

use crate::error::PadicError;
use crate::functions::{PiecewiseFunction, ZeroInverse};
use crate::geometry::{Ball, Cell, FractionalMonomial, Window};
use crate::padic::{FieldContext, PadicNumber, RvElement};
use crate::poly::qp_roots;
use crate::qrat::{self, q_display, Q};
use crate::report::qser;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// A function the checkers can interrogate: either an exact piecewise
/// rational function, or a prepared model `d + m` with a fractional monomial.
#[derive(Debug, Clone)]
pub enum FnModel<'a> {
    Exact(&'a PiecewiseFunction),
    Centered { d: Q, m: &'a FractionalMonomial },
}

impl<'a> FnModel<'a> {
    pub fn center_hint(&self) -> Option<Q> {
        match self {
            FnModel::Exact(_) => None,
            FnModel::Centered { d, .. } => Some(*d),
        }
    }

    /// Exact rational value when one exists (`b = 1` monomials and all
    /// piecewise rational bodies).
    pub fn exact_value(&self, t: &Q) -> Result<Option<Q>, PadicError> {
        match self {
            FnModel::Exact(f) => f.eval_q(t, ZeroInverse::Convention).map(Some),
            FnModel::Centered { d, m } => Ok(m.eval_exact(t).map(|v| d + v)),
        }
    }

    pub fn value(&self, t: &Q, ctx: &FieldContext) -> Result<PadicNumber, PadicError> {
        if let Some(v) = self.exact_value(t)? {
            return Ok(PadicNumber::from_q(&v, ctx));
        }
        match self {
            FnModel::Centered { d, m } => {
                let root = m.eval(t, ctx)?;
                match PadicNumber::from_q(d, ctx).add(&root) {
                    Ok(v) => Ok(v),
                    Err(PadicError::FullCancellation) => Ok(PadicNumber::exact_zero(ctx)),
                    Err(e) => Err(e),
                }
            }
            FnModel::Exact(_) => unreachable!(),
        }
    }

    /// `f(s) - f(t)` as a capped-precision number; exact when both values are.
    pub fn diff(&self, s: &Q, t: &Q, ctx: &FieldContext) -> Result<PadicNumber, PadicError> {
        if let (Some(a), Some(b)) = (self.exact_value(s)?, self.exact_value(t)?) {
            return Ok(PadicNumber::from_q(&(a - b), ctx));
        }
        match self.value(s, ctx)?.sub(&self.value(t, ctx)?) {
            Ok(v) => Ok(v),
            Err(PadicError::FullCancellation) => Ok(PadicNumber::exact_zero(ctx)),
            Err(e) => Err(e),
        }
    }

    pub fn diff_ord(&self, s: &Q, t: &Q, ctx: &FieldContext) -> Result<Option<i64>, PadicError> {
        Ok(self.diff(s, t, ctx)?.ord())
    }

    pub fn derivative_rv(
        &self,
        t: &Q,
        n: u32,
        ctx: &FieldContext,
    ) -> Result<RvElement, PadicError> {
        match self {
            FnModel::Exact(f) => Ok(RvElement::of_q(&f.eval_derivative_q(t)?, ctx.p, n)),
            FnModel::Centered { m, .. } => m.derivative_rv(t, n, ctx),
        }
    }

    pub fn derivative_ord(&self, t: &Q, ctx: &FieldContext) -> Result<Option<i64>, PadicError> {
        Ok(match self.derivative_rv(t, 1, ctx)? {
            RvElement::Zero => None,
            RvElement::NonZero { val, .. } => Some(val),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    #[serde(with = "qser")]
    pub x: Q,
    #[serde(with = "qser")]
    pub y: Q,
    pub lhs: String,
    pub rhs: String,
}

/// Outcome of a property check over a window sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub verdict: bool,
    pub checked_pairs: u64,
    pub first_counterexample: Option<Counterexample>,
    pub level_n: u32,
    pub window: Window,
    pub derivative_ord: Option<i64>,
    pub detail: String,
}

impl PropertyReport {
    fn pass(pairs: u64, n: u32, w: &Window, dord: Option<i64>, detail: impl Into<String>) -> Self {
        PropertyReport {
            verdict: true,
            checked_pairs: pairs,
            first_counterexample: None,
            level_n: n,
            window: *w,
            derivative_ord: dord,
            detail: detail.into(),
        }
    }

    fn fail(
        pairs: u64,
        n: u32,
        w: &Window,
        cex: Counterexample,
        detail: impl Into<String>,
    ) -> Self {
        PropertyReport {
            verdict: false,
            checked_pairs: pairs,
            first_counterexample: Some(cex),
            level_n: n,
            window: *w,
            derivative_ord: None,
            detail: detail.into(),
        }
    }
}

fn ord_str(v: Option<i64>) -> String {
    match v {
        None => "+inf".into(),
        Some(v) => v.to_string(),
    }
}

fn rv_str(rv: &RvElement) -> String {
    match rv {
        RvElement::Zero => "0".into(),
        RvElement::NonZero { val, ac, level, .. } => format!("(ord {val}, ac_{level} {ac})"),
    }
}

/// For an exact model, tries to sharpen a near-collision `(x, y)` to an exact
/// collision `(x, r)` with `f(r) = f(x)` and `r ≡ y` at window depth.
fn refine_collision(
    f: &FnModel,
    x: &Q,
    y: &Q,
    b1: &Ball,
    w: &Window,
    ctx: &FieldContext,
) -> Option<Q> {
    let pf = match f {
        FnModel::Exact(pf) => pf,
        FnModel::Centered { .. } => return None,
    };
    let piece = pf.piece_at(y)?;
    let rf = piece.body.to_ratfunc();
    let fx = pf.eval_q(x, ZeroInverse::Convention).ok()?;
    // Roots of f(Y) - f(x): numerator num(Y) - f(x)·den(Y).
    let target = rf.num.sub(&rf.den.scale(&fx));
    for root in qp_roots(&target, ctx.p, ctx.precision + 4) {
        if !root.exact || &root.rep == x || !b1.contains(&root.rep, ctx.p) {
            continue;
        }
        // The refined collision partner must be closer to y than x is.
        let base = qrat::ord_p(&(x - y), ctx.p).unwrap_or(i64::MIN);
        if qrat::ord_p(&(root.rep - y), ctx.p).map_or(true, |v| v > base) {
            return Some(root.rep);
        }
    }
    let _ = w;
    None
}

/// Residue of `x / p^base` modulo `p^depth`, for `ord(x) ≥ base`.
fn shifted_residue(x: &PadicNumber, base: i64, depth: u32) -> Option<i128> {
    match x {
        PadicNumber::Zero { .. } => Some(0),
        PadicNumber::Nonzero { p, val, unit, prec } => {
            if *val < base {
                return None;
            }
            let shift = (*val - base) as u32;
            if shift >= depth {
                return Some(0);
            }
            if depth - shift > *prec {
                return None;
            }
            Some(unit % qrat::p_pow(*p, depth - shift) * qrat::p_pow(*p, shift))
        }
    }
}

/// Definition-level Jacobian property check on a ball: constant `ord f′`,
/// injectivity, the valuation identity
/// `ord(f(x)-f(y)) = ord(f′) + ord(x-y)`, and image-fills-a-ball at window
/// resolution.
pub fn check_jacobian(
    f: &FnModel,
    b1: &Ball,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    let pts: Vec<Q> = w.points_shared(ctx.p).iter().filter(|t| b1.contains(t, ctx.p)).cloned().collect();
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }

    // Reference derivative ord at the least sample point; if (c) fails, the
    // pair scan below exhibits a witness pair for the broken identity.
    let dord = match f.derivative_ord(&pts[0], ctx)? {
        Some(v) => v,
        None => {
            return Ok(PropertyReport::fail(
                0,
                0,
                w,
                Counterexample {
                    x: pts[0],
                    y: pts[0],
                    lhs: "ord f' = +inf".into(),
                    rhs: "a finite constant".into(),
                },
                "derivative vanishes on the sample",
            ))
        }
    };

    // (b) + (d): injectivity and the valuation identity over all pairs.
    let mut pairs = 0u64;
    for (i, x) in pts.iter().enumerate() {
        for y in pts.iter().skip(i + 1) {
            pairs += 1;
            let expected = dord + qrat::ord_p(&(x - y), ctx.p).unwrap();
            let actual = f.diff_ord(x, y, ctx)?;
            if actual != Some(expected) {
                // A deeper-than-predicted difference hints at a genuine
                // collision; exhibit it exactly when the model allows.
                let (y_ref, lhs) = match refine_collision(f, x, y, b1, w, ctx) {
                    Some(r) => {
                        let fx = f.exact_value(x)?.map(|v| q_display(&v)).unwrap_or_default();
                        (r, format!("f(x) = f(y) = {fx}"))
                    }
                    None => (*y, format!("ord(f(x)-f(y)) = {}", ord_str(actual))),
                };
                return Ok(PropertyReport::fail(
                    pairs,
                    0,
                    w,
                    Counterexample {
                        x: *x,
                        y: y_ref,
                        lhs,
                        rhs: format!("ord f' + ord(x-y) = {expected}"),
                    },
                    if actual.is_none() {
                        "not injective on the sample"
                    } else {
                        "valuation identity (d) violated"
                    },
                ));
            }
        }
    }

    // (c) constant ord of the derivative, for violations the pair scan misses.
    for t in pts.iter().skip(1) {
        let v = f.derivative_ord(t, ctx)?;
        if v != Some(dord) {
            return Ok(PropertyReport::fail(
                pairs,
                0,
                w,
                Counterexample {
                    x: pts[0],
                    y: *t,
                    lhs: format!("ord f' = {dord}"),
                    rhs: format!("ord f' = {}", ord_str(v)),
                },
                "ord of the derivative is not constant on the ball",
            ));
        }
    }

    // (a) the image fills a ball: image residues at each depth must be as
    // numerous as the domain residues.
    let t0 = pts[0];
    let z = b1.radius_order;
    let zp = dord + z;
    let depth_cap = w.unit_level.min(ctx.precision);
    for depth in 1..=depth_cap {
        let mut dom: Vec<i128> = Vec::new();
        let mut img: Vec<i128> = Vec::new();
        for t in &pts {
            let dv = shifted_residue(&PadicNumber::from_q(&(t - t0), ctx), z, depth);
            let iv = shifted_residue(&f.diff(t, &t0, ctx)?, zp, depth);
            if let (Some(dv), Some(iv)) = (dv, iv) {
                if !dom.contains(&dv) {
                    dom.push(dv);
                }
                if !img.contains(&iv) {
                    img.push(iv);
                }
            }
        }
        if img.len() < dom.len() {
            // Two domain classes share an image class: exhibit the least pair.
            for (i, x) in pts.iter().enumerate() {
                for y in pts.iter().skip(i + 1) {
                    let dx = shifted_residue(&PadicNumber::from_q(&(x - t0), ctx), z, depth);
                    let dy = shifted_residue(&PadicNumber::from_q(&(y - t0), ctx), z, depth);
                    let ix = shifted_residue(&f.diff(x, &t0, ctx)?, zp, depth);
                    let iy = shifted_residue(&f.diff(y, &t0, ctx)?, zp, depth);
                    if dx != dy && ix == iy && ix.is_some() {
                        return Ok(PropertyReport::fail(
                            pairs,
                            0,
                            w,
                            Counterexample {
                                x: *x,
                                y: *y,
                                lhs: format!("image residues collide at depth {depth}"),
                                rhs: "distinct domain residues".into(),
                            },
                            "image does not fill a ball at window resolution",
                        ));
                    }
                }
            }
        }
    }

    Ok(PropertyReport::pass(pairs, 0, w, Some(dord), format!("ord f' = {dord}")))
}

/// rv_n refinement: constant `rv_n(f′)` on the ball and
/// `rv_n(f(x)-f(y)) = rv_n(f′)·rv_n(x-y)` for all pairs. At `n = 0` this is
/// the plain Jacobian property.
pub fn check_n_jacobian(
    f: &FnModel,
    b1: &Ball,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    let pts: Vec<Q> =
        w.points_shared(ctx.p).iter().filter(|t| b1.contains(t, ctx.p)).cloned().collect();
    check_n_jacobian_at(f, b1, &pts, n, w, ctx)
}

/// [`check_n_jacobian`] on a precomputed ball sample, so callers that already
/// hold the points do not rescan the window.
fn check_n_jacobian_at(
    f: &FnModel,
    b1: &Ball,
    pts: &[Q],
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    if n == 0 {
        return check_jacobian(f, b1, w, ctx);
    }
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }

    // (c') constant rv_n of the derivative.
    let mut drv: Option<RvElement> = None;
    let mut first_t = pts[0];
    for t in pts {
        let rv = f.derivative_rv(t, n, ctx)?;
        if rv.is_zero() {
            return Ok(PropertyReport::fail(
                0,
                n,
                w,
                Counterexample {
                    x: *t,
                    y: *t,
                    lhs: "rv_n f' = 0".into(),
                    rhs: "a nonzero constant".into(),
                },
                "derivative vanishes on the sample",
            ));
        }
        match &drv {
            None => {
                drv = Some(rv);
                first_t = *t;
            }
            Some(prev) if *prev != rv => {
                return Ok(PropertyReport::fail(
                    0,
                    n,
                    w,
                    Counterexample {
                        x: first_t,
                        y: *t,
                        lhs: rv_str(prev),
                        rhs: rv_str(&rv),
                    },
                    "rv_n of the derivative is not constant on the ball",
                ))
            }
            _ => {}
        }
    }
    let drv = drv.unwrap();
    let dord = match drv {
        RvElement::NonZero { val, .. } => Some(val),
        RvElement::Zero => None,
    };

    // (d') the rv_n identity over all pairs; x = y gives ZERO on both sides
    // and is never a counterexample. Values are evaluated once per point.
    let vals: Vec<Option<Q>> =
        pts.iter().map(|t| f.exact_value(t)).collect::<Result<_, _>>()?;
    let mut pairs = 0u64;
    for (i, x) in pts.iter().enumerate() {
        for (j, y) in pts.iter().enumerate().skip(i + 1) {
            pairs += 1;
            let lhs = match (&vals[i], &vals[j]) {
                (Some(a), Some(b)) => PadicNumber::from_q(&(a - b), ctx).rv(n)?,
                _ => f.diff(x, y, ctx)?.rv(n)?,
            };
            let rhs = drv.mul(&RvElement::of_q(&(x - y), ctx.p, n));
            if lhs != rhs {
                return Ok(PropertyReport::fail(
                    pairs,
                    n,
                    w,
                    Counterexample {
                        x: *x,
                        y: *y,
                        lhs: format!("rv_n(f(x)-f(y)) = {}", rv_str(&lhs)),
                        rhs: format!("rv_n(f')·rv_n(x-y) = {}", rv_str(&rhs)),
                    },
                    "rv_n identity (d') violated",
                ));
            }
        }
    }

    Ok(PropertyReport::pass(pairs, n, w, dord, format!("rv_n f' = {}", rv_str(&drv))))
}

/// The image-cell data fitted from the sampled rv-structure, at the ac depth
/// of the check level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFit {
    pub zero_cell: bool,
    /// 0-cell: the constant value. 1-cell: the fitted image center.
    pub center: String,
    /// ac depth of the fitted coset pin (the check level `n`).
    pub depth: u32,
    /// Constant `ac_depth` of `f(t) - center` over the sample (1-cells).
    pub ac: i128,
    /// Sorted distinct `ord(f(t) - center)` over the sample (1-cells).
    pub ords: Vec<i64>,
    /// gcd of the ord differences; 0 when a single ord occurs.
    pub modulus: i64,
}

/// Fits a 1-cell image structure around the candidate center `d`; `None` when
/// `d` lies in the sampled image or the ac pin does not hold.
fn fit_image(
    f: &FnModel,
    pts: &[Q],
    d: &Q,
    n: u32,
    ctx: &FieldContext,
) -> Result<Option<ImageFit>, PadicError> {
    let depth = n.max(1);
    let mut ords: Vec<i64> = Vec::new();
    let mut ac: Option<i128> = None;
    for t in pts {
        let v = match f.exact_value(t)? {
            Some(v) => PadicNumber::from_q(&(v - d), ctx),
            None => match f.value(t, ctx)?.sub(&PadicNumber::from_q(d, ctx)) {
                Ok(v) => v,
                Err(PadicError::FullCancellation) => PadicNumber::exact_zero(ctx),
                Err(e) => return Err(e),
            },
        };
        let (val, a) = match (v.ord(), v.ac(depth)) {
            (Some(val), Ok(a)) => (val, a),
            _ => return Ok(None),
        };
        match ac {
            None => ac = Some(a),
            Some(prev) if prev != a => return Ok(None),
            _ => {}
        }
        if !ords.contains(&val) {
            ords.push(val);
        }
    }
    ords.sort();
    let modulus = ords.windows(2).map(|w| w[1] - w[0]).fold(0i64, num_integer::gcd);
    Ok(Some(ImageFit {
        zero_cell: false,
        center: q_display(d),
        depth,
        ac: ac.unwrap_or(0),
        ords,
        modulus,
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatOutcome {
    pub report: PropertyReport,
    pub image: Option<ImageFit>,
}

fn constant_on_sample(f: &FnModel, pts: &[Q], ctx: &FieldContext) -> Result<bool, PadicError> {
    for t in pts.iter().skip(1) {
        if f.diff_ord(t, &pts[0], ctx)?.is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn compat_core(
    f: &FnModel,
    a: &Cell,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
    candidates: &[Q],
) -> Result<CompatOutcome, PadicError> {
    let pts = a.enumerate(w, ctx.p);
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }

    // 0-cells and constant restrictions map to a 0-cell image; nothing local
    // to check.
    if a.is_zero_cell() || constant_on_sample(f, &pts, ctx)? {
        let value = match f.exact_value(&pts[0])? {
            Some(v) => q_display(&v),
            None => {
                return Err(PadicError::Engine(
                    "constant image value is not exactly representable".into(),
                ))
            }
        };
        return Ok(CompatOutcome {
            report: PropertyReport::pass(0, n, w, None, "constant map; image is a 0-cell"),
            image: Some(ImageFit {
                zero_cell: true,
                center: value,
                depth: n.max(1),
                ac: 0,
                ords: vec![],
                modulus: 0,
            }),
        });
    }

    // Injectivity on the whole cell sample. Values are evaluated once per
    // point; the pair scan only subtracts cached rationals.
    let vals: Vec<Option<Q>> =
        pts.iter().map(|t| f.exact_value(t)).collect::<Result<_, _>>()?;
    let mut pairs = 0u64;
    for (i, x) in pts.iter().enumerate() {
        for (j, y) in pts.iter().enumerate().skip(i + 1) {
            pairs += 1;
            let collide = match (&vals[i], &vals[j]) {
                (Some(a), Some(b)) => a == b,
                _ => f.diff_ord(x, y, ctx)?.is_none(),
            };
            if collide {
                return Ok(CompatOutcome {
                    report: PropertyReport::fail(
                        pairs,
                        n,
                        w,
                        Counterexample {
                            x: *x,
                            y: *y,
                            lhs: "f(x) = f(y)".into(),
                            rhs: "x ≠ y".into(),
                        },
                        "not injective on the cell sample",
                    ),
                    image: None,
                });
            }
        }
    }

    // Local n-Jacobian property on every ball of the cell meeting the window.
    // Points are grouped by their ball so each ball is checked on its own
    // sample without rescanning the window.
    let mut balls: Vec<(Ball, Vec<Q>)> = Vec::new();
    for t in &pts {
        let b = a.ball_at(t, ctx.p)?;
        match balls
            .iter_mut()
            .find(|(k, _)| k.contains(&b.center, ctx.p) && b.contains(&k.center, ctx.p))
        {
            Some((_, group)) => group.push(*t),
            None => balls.push((b, vec![*t])),
        }
    }
    for (b, group) in &balls {
        let rep = check_n_jacobian_at(f, b, group, n, w, ctx)?;
        pairs += rep.checked_pairs;
        if !rep.verdict {
            let detail = format!(
                "ball at {} (radius order {}): {}",
                q_display(&b.center),
                b.radius_order,
                rep.detail
            );
            return Ok(CompatOutcome {
                report: PropertyReport {
                    checked_pairs: pairs,
                    detail,
                    ..rep
                },
                image: None,
            });
        }
    }

    // Fit the image cell from the first workable candidate center.
    for d in candidates {
        if let Some(fit) = fit_image(f, &pts, d, n, ctx)? {
            return Ok(CompatOutcome {
                report: PropertyReport::pass(
                    pairs,
                    n,
                    w,
                    None,
                    format!("image fitted around {}", q_display(d)),
                ),
                image: Some(fit),
            });
        }
    }
    Ok(CompatOutcome {
        report: PropertyReport::fail(
            pairs,
            n,
            w,
            Counterexample {
                x: pts[0],
                y: pts[0],
                lhs: "no candidate center fits the sampled image".into(),
                rhs: "a cell structure".into(),
            },
            "image not recognizable as a cell at window resolution",
        ),
        image: None,
    })
}

fn default_candidates(f: &FnModel, a: &Cell, ctx: &FieldContext) -> Vec<Q> {
    let mut out = Vec::new();
    if let Some(d) = f.center_hint() {
        out.push(d);
    }
    if let FnModel::Exact(pf) = f {
        if let Ok(v) = pf.eval_q(&a.center, ZeroInverse::Convention) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    let _ = ctx;
    if !out.contains(&Q::zero()) {
        out.push(Q::zero());
    }
    out
}

/// n-compatibility of `f` with the cell `A`: local n-Jacobian property on
/// every ball of `A`, injectivity, and a recognizable image cell `A_f`.
pub fn check_n_compatible(
    f: &FnModel,
    a: &Cell,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<CompatOutcome, PadicError> {
    let cands = default_candidates(f, a, ctx);
    compat_core(f, a, n, w, ctx, &cands)
}

/// n-equicompatibility of `f` and `g` with `A`: both n-compatible, `A_f = A_g`
/// as fitted cells around a common center, and `rv_n(f′) = rv_n(g′)` at every
/// sample point. On 0-cells this degenerates to `f = g` at the point.
pub fn check_n_equicompatible(
    f: &FnModel,
    g: &FnModel,
    a: &Cell,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    let pts = a.enumerate(w, ctx.p);
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }

    if a.is_zero_cell() {
        let t = pts[0];
        let equal = match (f.exact_value(&t)?, g.exact_value(&t)?) {
            (Some(x), Some(y)) => x == y,
            _ => match f.value(&t, ctx)?.sub(&g.value(&t, ctx)?) {
                Ok(d) => d.is_zero(),
                Err(PadicError::FullCancellation) => true,
                Err(e) => return Err(e),
            },
        };
        return Ok(if equal {
            PropertyReport::pass(1, n, w, None, "0-cell: values agree at the point")
        } else {
            PropertyReport::fail(
                1,
                n,
                w,
                Counterexample {
                    x: t,
                    y: t,
                    lhs: "f(t)".into(),
                    rhs: "g(t)".into(),
                },
                "0-cell: values differ at the point",
            )
        });
    }

    // A shared candidate list so both fits are comparable.
    let mut cands = Vec::new();
    for c in [g.center_hint(), f.center_hint()].into_iter().flatten() {
        if !cands.contains(&c) {
            cands.push(c);
        }
    }
    for m in [f, g] {
        if let FnModel::Exact(pf) = m {
            if let Ok(v) = pf.eval_q(&a.center, ZeroInverse::Convention) {
                if !cands.contains(&v) {
                    cands.push(v);
                }
            }
        }
    }
    if !cands.contains(&Q::zero()) {
        cands.push(Q::zero());
    }

    let cf = compat_core(f, a, n, w, ctx, &cands)?;
    if !cf.report.verdict {
        return Ok(PropertyReport {
            detail: format!("f not n-compatible: {}", cf.report.detail),
            ..cf.report
        });
    }
    let cg = compat_core(g, a, n, w, ctx, &cands)?;
    if !cg.report.verdict {
        return Ok(PropertyReport {
            detail: format!("g not n-compatible: {}", cg.report.detail),
            ..cg.report
        });
    }
    let mut pairs = cf.report.checked_pairs + cg.report.checked_pairs;

    // Compare the fitted image cells around a common center. The first
    // candidate that fits both decides.
    let mut matched = false;
    for d in &cands {
        let ff = fit_image(f, &pts, d, n, ctx)?;
        let gf = fit_image(g, &pts, d, n, ctx)?;
        match (ff, gf) {
            (Some(x), Some(y)) => {
                if x != y {
                    return Ok(PropertyReport::fail(
                        pairs,
                        n,
                        w,
                        Counterexample {
                            x: pts[0],
                            y: pts[0],
                            lhs: format!("A_f = {x:?}"),
                            rhs: format!("A_g = {y:?}"),
                        },
                        "fitted image cells differ",
                    ));
                }
                matched = true;
                break;
            }
            _ => continue,
        }
    }
    if !matched {
        return Ok(PropertyReport::fail(
            pairs,
            n,
            w,
            Counterexample {
                x: pts[0],
                y: pts[0],
                lhs: "no common image center fits both maps".into(),
                rhs: "A_f = A_g".into(),
            },
            "image cells not comparable around any shared center",
        ));
    }

    // Derivative rv_n identity at every sample point.
    for t in &pts {
        pairs += 1;
        let rf = f.derivative_rv(t, n, ctx)?;
        let rg = g.derivative_rv(t, n, ctx)?;
        if rf != rg {
            return Ok(PropertyReport::fail(
                pairs,
                n,
                w,
                Counterexample {
                    x: *t,
                    y: *t,
                    lhs: format!("rv_n f' = {}", rv_str(&rf)),
                    rhs: format!("rv_n g' = {}", rv_str(&rg)),
                },
                "derivative rv_n identity violated",
            ));
        }
    }

    Ok(PropertyReport::pass(pairs, n, w, None, "n-equicompatible on the sample"))
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

/// Result of a constructive solver: the located point, the iteration count,
/// whether the point satisfies the defining equation exactly, and the
/// residual valuation otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    #[serde(with = "qser")]
    pub point: Q,
    pub iterations: u32,
    pub exact: bool,
    pub residual_ord: Option<i64>,
}

/// Canonical small representative of `x` modulo `p`-adic depth `floor`:
/// `ord(x - result) ≥ floor`.
fn reduce_q(x: &Q, p: u64, floor: i64) -> Q {
    let v = match qrat::ord_p(x, p) {
        None => return Q::zero(),
        Some(v) => v,
    };
    if v >= floor {
        return Q::zero();
    }
    let digits = (floor - v) as u32;
    let unit = x / qrat::from_val_unit(p, v, 1);
    let r = qrat::residue_mod(&unit, p, digits);
    qrat::from_val_unit(p, v, r)
}

/// Rational reconstruction of a residue: the unique `a/b` with
/// `a ≡ r·b (mod m)`, `|a|, |b| ≤ sqrt(m/2)`, when one exists.
fn rational_reconstruct(r: i128, m: i128) -> Option<Q> {
    let bound = {
        let mut lo = 0i128;
        let mut hi = 1i128 << 63;
        while lo < hi {
            let mid = lo + (hi - lo + 1) / 2;
            if mid.checked_mul(mid).map_or(false, |sq| 2 * sq <= m) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    };
    let (mut r0, mut r1) = (m, r.rem_euclid(m));
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 > bound {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if t1 == 0 || t1.abs() > bound || num_integer::gcd(r1, t1.abs()) != 1 {
        return None;
    }
    Some(qrat::q(r1, t1))
}

/// Tries to upgrade a point known modulo `p^depth` to an exact rational
/// solution of `residual(x) = 0`, by rational reconstruction plus an exact
/// verification.
fn exactify(x: &Q, p: u64, depth: i64, residual: impl Fn(&Q) -> Option<Q>) -> Option<Q> {
    let v = qrat::ord_p(x, p).unwrap_or(0).min(0);
    let digits = (depth - v).max(1);
    if digits > 36 {
        return None;
    }
    let unit = x / qrat::from_val_unit(p, v, 1);
    let r = qrat::residue_mod(&unit, p, digits as u32);
    let cand = rational_reconstruct(r, qrat::p_pow(p, digits as u32))? * qrat::from_val_unit(p, v, 1);
    match residual(&cand) {
        Some(res) if res.is_zero() => Some(cand),
        _ => None,
    }
}

/// Ultrametric Banach fixed point: verifies the contraction hypothesis on the
/// window sample, then iterates `x ← f(x)` from the ball's center.
pub fn banach_fixed_point(
    f: &PiecewiseFunction,
    domain: &Ball,
    target_precision: i64,
    w: &Window,
    ctx: &FieldContext,
) -> Result<SolveOutcome, PadicError> {
    let pts: Vec<Q> =
        w.points_shared(ctx.p).iter().filter(|t| domain.contains(t, ctx.p)).cloned().collect();
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }
    for (i, x) in pts.iter().enumerate() {
        let fx = f.eval_q(x, ZeroInverse::Convention)?;
        if !domain.contains(&fx, ctx.p) {
            return Err(PadicError::Precondition(format!(
                "f does not map the ball into itself: f({}) = {}",
                q_display(x),
                q_display(&fx)
            )));
        }
        for y in pts.iter().skip(i + 1) {
            let fy = f.eval_q(y, ZeroInverse::Convention)?;
            let dv = qrat::ord_p(&(fx - fy), ctx.p);
            let xy = qrat::ord_p(&(x - y), ctx.p).unwrap();
            if dv.map_or(false, |v| v <= xy) {
                return Err(PadicError::Precondition(format!(
                    "contraction fails at the pair ({}, {}): ord(f(x)-f(y)) = {} ≤ ord(x-y) = {}",
                    q_display(x),
                    q_display(y),
                    ord_str(dv),
                    xy
                )));
            }
        }
    }

    let floor = target_precision + 2;
    let budget = (target_precision + 4).max(4) as u32;
    let mut x = domain.center;
    for it in 0..=budget {
        let fx = f.eval_q(&x, ZeroInverse::Convention)?;
        let res = qrat::ord_p(&(fx - x), ctx.p);
        if res.map_or(true, |v| v >= target_precision) {
            // The residual f(t) - t scales like (f'(t) - 1)·(t - x*); under
            // the contraction hypothesis f' - 1 is a unit.
            let delta = f
                .eval_derivative_q(&x)
                .ok()
                .and_then(|d| qrat::ord_p(&(d - qrat::qi(1)), ctx.p));
            let mut point = x;
            let mut residual_ord = res;
            if let (Some(ro), Some(d)) = (res, delta) {
                if let Some(exact) = exactify(&x, ctx.p, ro - d, |c| {
                    f.eval_q(c, ZeroInverse::Convention).ok().map(|v| v - c)
                }) {
                    point = exact;
                    residual_ord = None;
                }
            }
            return finish_unique(point, residual_ord, it, delta, w, ctx, |t| {
                f.eval_q(t, ZeroInverse::Convention).map(|v| v - t)
            });
        }
        x = reduce_q(&fx, ctx.p, floor);
    }
    Err(PadicError::Internal(
        "fixed-point iteration exhausted its budget under a verified contraction".into(),
    ))
}

/// Uniqueness audit shared by the solvers. On the window the residual must
/// scale as `delta + ord(t - b0)`; an exactly vanishing residual away from
/// the found point, or a markedly deeper one, indicates a second solution,
/// which contradicts the verified hypotheses and is a hard internal error.
fn finish_unique(
    point: Q,
    residual_ord: Option<i64>,
    iterations: u32,
    delta: Option<i64>,
    w: &Window,
    ctx: &FieldContext,
    residual: impl Fn(&Q) -> Result<Q, PadicError>,
) -> Result<SolveOutcome, PadicError> {
    let level = w.unit_level as i64;
    for t in w.points(ctx.p) {
        let dist = match qrat::ord_p(&(t - point), ctx.p) {
            None => continue,
            Some(d) if d >= level => continue,
            Some(d) => d,
        };
        let r = match residual(&t) {
            Ok(r) => r,
            Err(_) => continue,
        };
        match (qrat::ord_p(&r, ctx.p), delta) {
            (None, _) => {
                return Err(PadicError::Internal(format!(
                    "second exact solution on the window at t = {}",
                    q_display(&t)
                )))
            }
            (Some(ro), Some(d)) if ro - d - dist >= 3 => {
                return Err(PadicError::Internal(format!(
                    "residual anomaly on the window at t = {} (ord {ro} vs expected {})",
                    q_display(&t),
                    d + dist
                )))
            }
            _ => {}
        }
    }
    let exact = residual_ord.is_none();
    Ok(SolveOutcome { point, iterations, exact, residual_ord })
}

fn eval_pair(
    f1: &PiecewiseFunction,
    f2: &PiecewiseFunction,
    t: &Q,
) -> Result<Q, PadicError> {
    Ok(f1.eval_q(t, ZeroInverse::Convention)? - f2.eval_q(t, ZeroInverse::Convention)?)
}

/// The unique point of a ball where two Jacobian-property maps with distinct
/// derivative valuations take equal values, via the contraction
/// `x ← f_lo⁻¹(f_hi(x))` with Newton inversion of `f_lo` at each step.
pub fn solve_equal_point(
    f1: &PiecewiseFunction,
    f2: &PiecewiseFunction,
    b: &Ball,
    w: &Window,
    ctx: &FieldContext,
    target_precision: i64,
) -> Result<SolveOutcome, PadicError> {
    let r1 = check_jacobian(&FnModel::Exact(f1), b, w, ctx)?;
    if !r1.verdict {
        return Err(PadicError::Precondition(format!(
            "f1 fails the Jacobian property: {}",
            r1.detail
        )));
    }
    let r2 = check_jacobian(&FnModel::Exact(f2), b, w, ctx)?;
    if !r2.verdict {
        return Err(PadicError::Precondition(format!(
            "f2 fails the Jacobian property: {}",
            r2.detail
        )));
    }
    let v1 = r1.derivative_ord.unwrap();
    let v2 = r2.derivative_ord.unwrap();
    if v1 == v2 {
        return Err(PadicError::Precondition(format!(
            "derivative valuations coincide (ord f1' = ord f2' = {v1})"
        )));
    }
    // Image balls around the common center must intersect.
    let c = b.center;
    let gap = qrat::ord_p(&eval_pair(f1, f2, &c)?, ctx.p);
    let min_radius = (b.radius_order + v1).min(b.radius_order + v2);
    if gap.map_or(false, |g| g < min_radius) {
        return Err(PadicError::Precondition(format!(
            "the two images are disjoint at window resolution (ord(f1(c)-f2(c)) = {} < {})",
            ord_str(gap),
            min_radius
        )));
    }

    // Orient so the inner map has the smaller derivative valuation: then
    // f_lo⁻¹ ∘ f_hi contracts by q^{-(v_hi - v_lo)} per step.
    let (lo, hi, vlo) = if v1 < v2 { (f1, f2, v1) } else { (f2, f1, v1.min(v2)) };
    let floor = target_precision + 2;
    let budget = (target_precision + 4).max(4) as u32;
    let mut x = c;
    for it in 0..=budget {
        let res = qrat::ord_p(&eval_pair(f1, f2, &x)?, ctx.p);
        if res.map_or(true, |v| v >= target_precision) {
            // f1 - f2 has derivative of valuation min(v1, v2) on the ball.
            let delta = v1.min(v2);
            let mut point = x;
            let mut residual_ord = res;
            if let Some(ro) = res {
                if let Some(exact) = exactify(&x, ctx.p, ro - delta, |t| eval_pair(f1, f2, t).ok())
                {
                    point = exact;
                    residual_ord = None;
                }
            }
            return finish_unique(point, residual_ord, it, Some(delta), w, ctx, |t| {
                eval_pair(f1, f2, t)
            });
        }
        // Solve lo(u) = hi(x) by Newton from u = x.
        let target = hi.eval_q(&x, ZeroInverse::Convention)?;
        let mut u = x;
        for _ in 0..64 {
            let fu = lo.eval_q(&u, ZeroInverse::Convention)?;
            let delta = fu - target;
            if qrat::ord_p(&delta, ctx.p).map_or(true, |v| v - vlo >= floor) {
                break;
            }
            let du = lo.eval_derivative_q(&u)?;
            if du.is_zero() {
                return Err(PadicError::Engine("Newton inversion hit a critical point".into()));
            }
            u -= delta / du;
            u = reduce_q(&u, ctx.p, floor + vlo.min(0));
        }
        if !b.contains(&u, ctx.p) {
            return Err(PadicError::Engine("iterate left the ball".into()));
        }
        x = reduce_q(&u, ctx.p, floor);
    }
    Err(PadicError::Internal(
        "equal-point iteration exhausted its budget under verified hypotheses".into(),
    ))
}

/// The unique collision point of two maps whose derivatives differ in rv_n,
/// under the closeness hypothesis, via linearization steps `x ← x - c/d`.
pub fn solve_equal_rv_point(
    f1: &PiecewiseFunction,
    f2: &PiecewiseFunction,
    b: &Ball,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
    target_precision: i64,
) -> Result<SolveOutcome, PadicError> {
    if n == 0 {
        return Err(PadicError::Precondition("level n must be ≥ 1".into()));
    }
    if !b.contains(&Q::zero(), ctx.p) {
        return Err(PadicError::Precondition("the ball must contain 0".into()));
    }
    let pts: Vec<Q> = w.points_shared(ctx.p).iter().filter(|t| b.contains(t, ctx.p)).cloned().collect();
    if pts.is_empty() {
        return Err(PadicError::EmptySample);
    }

    // (1) both maps have the n-Jacobian property and map B into B on the
    // sample.
    for (name, f) in [("f1", f1), ("f2", f2)] {
        let rep = check_n_jacobian(&FnModel::Exact(f), b, n, w, ctx)?;
        if !rep.verdict {
            return Err(PadicError::Precondition(format!(
                "{name} fails the n-Jacobian property: {}",
                rep.detail
            )));
        }
        for t in &pts {
            let v = f.eval_q(t, ZeroInverse::Convention)?;
            if !b.contains(&v, ctx.p) {
                return Err(PadicError::Precondition(format!(
                    "{name} is not a self-map of the ball: {name}({}) = {}",
                    q_display(t),
                    q_display(&v)
                )));
            }
        }
    }

    // (2) distinct derivative rv_n classes.
    let rv1 = RvElement::of_q(&f1.eval_derivative_q(&pts[0])?, ctx.p, n);
    let rv2 = RvElement::of_q(&f2.eval_derivative_q(&pts[0])?, ctx.p, n);
    if rv1 == rv2 {
        return Err(PadicError::Precondition(format!(
            "rv_n(f1') = rv_n(f2') = {}",
            rv_str(&rv1)
        )));
    }

    // (3) closeness at some sample point: f1(a) - f2(a) ∈ M^{n-1}B, read as
    // the concentric ball with radius order raised by n - 1.
    let scaled = Ball { center: b.center, radius_order: b.radius_order + n as i64 - 1 };
    let start = pts
        .iter()
        .find(|a| {
            eval_pair(f1, f2, a).map_or(false, |d| scaled.contains(&d, ctx.p))
        })
        .copied();
    let mut x = match start {
        Some(a) => a,
        None => {
            return Err(PadicError::Precondition(
                "closeness hypothesis fails at every sample point".into(),
            ))
        }
    };

    let floor = target_precision + 2;
    let budget = (target_precision + 4).max(4) as u32;
    for it in 0..=budget {
        let c = eval_pair(f1, f2, &x)?;
        let res = qrat::ord_p(&c, ctx.p);
        if res.map_or(true, |v| v >= target_precision) {
            let delta = qrat::ord_p(
                &(f1.eval_derivative_q(&x)? - f2.eval_derivative_q(&x)?),
                ctx.p,
            );
            let mut point = x;
            let mut residual_ord = res;
            if let (Some(ro), Some(d)) = (res, delta) {
                if let Some(exact) = exactify(&x, ctx.p, ro - d, |t| eval_pair(f1, f2, t).ok()) {
                    point = exact;
                    residual_ord = None;
                }
            }
            return finish_unique(point, residual_ord, it, delta, w, ctx, |t| {
                eval_pair(f1, f2, t)
            });
        }
        let d = f1.eval_derivative_q(&x)? - f2.eval_derivative_q(&x)?;
        if d.is_zero() {
            return Err(PadicError::Engine(
                "derivative difference vanished during the linearization".into(),
            ));
        }
        x = reduce_q(&(x - c / d), ctx.p, floor);
        if !b.contains(&x, ctx.p) {
            return Err(PadicError::Engine("iterate left the ball".into()));
        }
    }
    Err(PadicError::Internal(
        "equal-rv iteration exhausted its budget under verified hypotheses".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::parse;
    use crate::qrat::{q, qi};

    fn w_default() -> Window {
        Window::new(0, 3, 4, false)
    }

    #[test]
    fn jacobian_square_on_unit_ball() {
        let ctx = FieldContext::qp(3, 10);
        let f = parse("t^2 on {all}", 3).unwrap();
        let ball = Ball { center: qi(1), radius_order: 1 };
        let rep = check_jacobian(&FnModel::Exact(&f), &ball, &w_default(), &ctx).unwrap();
        assert!(rep.verdict, "{}", rep.detail);
        assert_eq!(rep.derivative_ord, Some(0));
    }

    #[test]
    fn jacobian_square_on_z3_fails_with_collision() {
        let ctx = FieldContext::qp(3, 10);
        let f = parse("t^2 on {all}", 3).unwrap();
        let ball = Ball { center: qi(0), radius_order: 0 };
        let rep = check_jacobian(&FnModel::Exact(&f), &ball, &w_default(), &ctx).unwrap();
        assert!(!rep.verdict);
        let cex = rep.first_counterexample.unwrap();
        assert_eq!((cex.x, cex.y), (qi(1), qi(-1)));
    }

    #[test]
    fn jacobian_affine_on_z3() {
        let ctx = FieldContext::qp(3, 10);
        let f = parse("3*t + 1 on {all}", 3).unwrap();
        let ball = Ball { center: qi(0), radius_order: 0 };
        let rep = check_jacobian(&FnModel::Exact(&f), &ball, &w_default(), &ctx).unwrap();
        assert!(rep.verdict, "{}", rep.detail);
        assert_eq!(rep.derivative_ord, Some(1));
    }

    #[test]
    fn n_jacobian_examples() {
        let ctx = FieldContext::qp(3, 10);
        let f = parse("t^2 on {all}", 3).unwrap();
        // x² on 1+9Z_3 at n=1: passes.
        let small = Ball { center: qi(1), radius_order: 2 };
        let rep = check_n_jacobian(&FnModel::Exact(&f), &small, 1, &w_default(), &ctx).unwrap();
        assert!(rep.verdict, "{}", rep.detail);
        // x² on 1+3Z_3 at n=2: rv_2(2x) is not constant.
        let big = Ball { center: qi(1), radius_order: 1 };
        let rep2 = check_n_jacobian(&FnModel::Exact(&f), &big, 2, &w_default(), &ctx).unwrap();
        assert!(!rep2.verdict);
        assert!(rep2.detail.contains("not constant"));
    }

    #[test]
    fn n_jacobian_at_zero_is_jacobian() {
        let ctx = FieldContext::qp(3, 10);
        let f = parse("t^2 on {all}", 3).unwrap();
        let ball = Ball { center: qi(0), radius_order: 0 };
        let a = check_jacobian(&FnModel::Exact(&f), &ball, &w_default(), &ctx).unwrap();
        let b = check_n_jacobian(&FnModel::Exact(&f), &ball, 0, &w_default(), &ctx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn n_jacobian_monotone_in_n() {
        // Pass at level n implies pass at every lower level.
        let ctx = FieldContext::qp(3, 12);
        let f = parse("t^2 + 3*t on {all}", 3).unwrap();
        let w = Window::new(0, 2, 5, false);
        for z in [1i64, 2, 3] {
            let ball = Ball { center: qi(1), radius_order: z };
            let mut passed_at: Vec<u32> = vec![];
            for n in 1..=3u32 {
                let rep = check_n_jacobian(&FnModel::Exact(&f), &ball, n, &w, &ctx).unwrap();
                if rep.verdict {
                    passed_at.push(n);
                }
            }
            if let Some(&max) = passed_at.iter().max() {
                for n in 1..=max {
                    assert!(passed_at.contains(&n), "level {n} fails but {max} passes (z={z})");
                }
            }
        }
    }

    #[test]
    fn compatible_identity_and_constant() {
        let ctx = FieldContext::qp(3, 10);
        let w = w_default();
        let cell = Cell::new(qi(0), qi(1), 1, 1, None, Some(q(1, 3)), 3).unwrap();

        let id = parse("t on {all}", 3).unwrap();
        let out = check_n_compatible(&FnModel::Exact(&id), &cell, 1, &w, &ctx).unwrap();
        assert!(out.report.verdict, "{}", out.report.detail);
        let fit = out.image.unwrap();
        assert!(!fit.zero_cell);
        assert_eq!(fit.center, "0");

        let c5 = parse("5 on {all}", 3).unwrap();
        let out5 = check_n_compatible(&FnModel::Exact(&c5), &cell, 1, &w, &ctx).unwrap();
        assert!(out5.report.verdict);
        let fit5 = out5.image.unwrap();
        assert!(fit5.zero_cell);
        assert_eq!(fit5.center, "5");
    }

    #[test]
    fn compatible_square_on_unit_cell() {
        let ctx = FieldContext::qp(3, 10);
        let w = w_default();
        // {ord t = 0, ac_1 = 1}
        let cell = Cell::new(qi(0), qi(1), 1, 1, Some(qi(3)), Some(q(1, 3)), 3).unwrap();
        let f = parse("t^2 on {all}", 3).unwrap();
        let out = check_n_compatible(&FnModel::Exact(&f), &cell, 1, &w, &ctx).unwrap();
        assert!(out.report.verdict, "{}", out.report.detail);
    }

    #[test]
    fn equicompatible_examples() {
        let ctx = FieldContext::qp(5, 10);
        let w = Window::new(0, 2, 4, false);
        let cell = Cell::new(qi(0), qi(1), 1, 1, None, Some(q(1, 5)), 5).unwrap();

        let f = parse("t on {all}", 5).unwrap();
        let rep = check_n_equicompatible(
            &FnModel::Exact(&f),
            &FnModel::Exact(&f),
            &cell,
            1,
            &w,
            &ctx,
        )
        .unwrap();
        assert!(rep.verdict, "{}", rep.detail);

        // g = t + p^{n+1} t: rv_1(g') = rv_1(1 + 25) = rv_1(1).
        let g = parse("t + 25*t on {all}", 5).unwrap();
        let rep2 = check_n_equicompatible(
            &FnModel::Exact(&f),
            &FnModel::Exact(&g),
            &cell,
            1,
            &w,
            &ctx,
        )
        .unwrap();
        assert!(rep2.verdict, "{}", rep2.detail);

        let h = parse("2*t on {all}", 5).unwrap();
        let rep3 = check_n_equicompatible(
            &FnModel::Exact(&f),
            &FnModel::Exact(&h),
            &cell,
            1,
            &w,
            &ctx,
        )
        .unwrap();
        assert!(!rep3.verdict);
    }

    #[test]
    fn banach_affine() {
        let ctx = FieldContext::qp(3, 12);
        let w = Window::new(0, 3, 4, true);
        let f = parse("3*t + 1 on {all}", 3).unwrap();
        let out =
            banach_fixed_point(&f, &Ball { center: qi(0), radius_order: 0 }, 8, &w, &ctx).unwrap();
        assert!(out.iterations <= 9);
        assert_eq!(out.point, q(-1, 2));
        assert!(out.exact);
    }

    #[test]
    fn banach_zero_and_failure() {
        let ctx = FieldContext::qp(5, 10);
        let w = Window::new(0, 3, 3, true);
        let f = parse("5*t on {all}", 5).unwrap();
        let out =
            banach_fixed_point(&f, &Ball { center: qi(0), radius_order: 0 }, 8, &w, &ctx).unwrap();
        assert_eq!(out.point, qi(0));

        let ctx3 = FieldContext::qp(3, 10);
        let g = parse("t + 1 on {all}", 3).unwrap();
        let err = banach_fixed_point(&g, &Ball { center: qi(0), radius_order: 0 }, 8, &w, &ctx3);
        assert!(matches!(err, Err(PadicError::Precondition(_))));
    }

    #[test]
    fn equal_point_affine() {
        let ctx = FieldContext::qp(3, 12);
        let w = Window::new(0, 3, 4, true);
        let b = Ball { center: qi(0), radius_order: 0 };
        let f1 = parse("t on {all}", 3).unwrap();
        let f2 = parse("3*t + 1 on {all}", 3).unwrap();
        let out = solve_equal_point(&f1, &f2, &b, &w, &ctx, 8).unwrap();
        assert_eq!(out.point, q(-1, 2));
        assert!(out.exact);

        let f3 = parse("3*t on {all}", 3).unwrap();
        let out0 = solve_equal_point(&f1, &f3, &b, &w, &ctx, 8).unwrap();
        assert_eq!(out0.point, qi(0));

        let g1 = parse("t + 1 on {all}", 3).unwrap();
        let g2 = parse("3*t + 2 on {all}", 3).unwrap();
        let out2 = solve_equal_point(&g1, &g2, &b, &w, &ctx, 8).unwrap();
        assert_eq!(out2.point, q(-1, 2));
        assert_eq!(
            g1.eval_q(&out2.point, ZeroInverse::Convention).unwrap(),
            q(1, 2)
        );
    }

    #[test]
    fn equal_rv_point_examples() {
        let p = 3u64;
        let n = 2u32;
        let ctx = FieldContext::qp(p, 12);
        let w = Window::new(1, 4, 5, true);
        let b = Ball { center: qi(0), radius_order: 1 }; // pZ_p
        // f1 = x + p^n, f2 = (1 + p^{n-1}) x + p^n: collision at 0.
        let f1 = parse("t + 9 on {all}", p).unwrap();
        let f2 = parse("4*t + 9 on {all}", p).unwrap();
        let out = solve_equal_rv_point(&f1, &f2, &b, n, &w, &ctx, 8).unwrap();
        assert_eq!(out.point, qi(0));

        // Hypothesis (2) violated: equal derivative rv.
        let g = parse("t + 27 on {all}", p).unwrap();
        let err = solve_equal_rv_point(&f1, &g, &b, n, &w, &ctx, 8);
        assert!(matches!(err, Err(PadicError::Precondition(_))));
    }

    #[test]
    fn rational_reconstruction_round_trip() {
        let m = qrat::p_pow(3, 12);
        for (a, b) in [(-1i128, 2i128), (5, 7), (-22, 13), (1, 1)] {
            let r = (a.rem_euclid(m) * qrat::inv_mod(b, m)).rem_euclid(m);
            assert_eq!(rational_reconstruct(r, m), Some(q(a, b)));
        }
    }

    #[test]
    fn reduce_preserves_residue() {
        let x = q(-1, 2) + q(qrat::p_pow(3, 9), 7);
        let r = reduce_q(&x, 3, 8);
        assert!(qrat::ord_p(&(x - r), 3).map_or(true, |v| v >= 8));
    }
}
