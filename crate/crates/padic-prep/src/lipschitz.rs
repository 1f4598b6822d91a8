//! ε-preserving piecewise Lipschitz decomposition for one variable, plus
//! exhaustive local and global Lipschitz verification on windows.
//!
//! All bounds are exact: ultrametric norms are integer powers of `q`, so the
//! Lipschitz budget is an integer exponent `e` with `ε = q^e`, and every
//! comparison is a valuation comparison.

use crate::error::PadicError;
use crate::functions::{PiecewiseFunction, ZeroInverse};
use crate::geometry::{Cell, Window};
use crate::jacobian::{Counterexample, PropertyReport};
use crate::padic::FieldContext;
use crate::prepare::{intersect_cells, prepare, PreparedCell};
use crate::qrat::{self, q_display, Q};
use num_integer::Integer;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// The Lipschitz budget `ε = q^e`. Only the value-group class of ε matters in
/// an ultrametric field; arbitrary positive ε is floored to the largest
/// `q^e ≤ ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LipschitzBudget {
    pub exponent: i64,
}

impl LipschitzBudget {
    pub fn new(exponent: i64) -> Self {
        LipschitzBudget { exponent }
    }

    /// Floors a real ε to the largest power `q^e ≤ ε`.
    pub fn from_eps(eps: f64, q_card: u64) -> Result<Self, PadicError> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(PadicError::Precondition("ε must be a positive real".into()));
        }
        let q = q_card as f64;
        let mut e: i64 = 0;
        let mut val = 1.0f64;
        if eps >= 1.0 {
            while val * q <= eps && e < 200 {
                val *= q;
                e += 1;
            }
        } else {
            while val > eps && e > -200 {
                val /= q;
                e -= 1;
            }
        }
        Ok(LipschitzBudget { exponent: e })
    }
}

/// `ord(f(x) - f(y)) ≥ ord(x - y) - e`, exactly; `None` means satisfied.
fn pair_violation(
    f: &PiecewiseFunction,
    x: &Q,
    y: &Q,
    e: i64,
    p: u64,
) -> Result<Option<Counterexample>, PadicError> {
    let dv = f.eval_q(x, ZeroInverse::Convention)? - f.eval_q(y, ZeroInverse::Convention)?;
    if dv.is_zero() {
        return Ok(None);
    }
    let lhs = qrat::ord_p(&dv, p).unwrap();
    let dist = qrat::ord_p(&(x - y), p).unwrap();
    if lhs >= dist - e {
        return Ok(None);
    }
    Ok(Some(Counterexample {
        x: *x,
        y: *y,
        lhs: format!("ord(f(x)-f(y)) = {lhs}"),
        rhs: format!("ord(x-y) - e = {}", dist - e),
    }))
}

/// Exhaustive pairwise check over a fixed point list, first (least) witness.
fn verify_points(
    f: &PiecewiseFunction,
    pts: &[Q],
    e: i64,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    let mut pairs = 0u64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            pairs += 1;
            if let Some(cex) = pair_violation(f, &pts[i], &pts[j], e, ctx.p)? {
                return Ok(PropertyReport {
                    verdict: false,
                    checked_pairs: pairs,
                    first_counterexample: Some(cex),
                    level_n: 0,
                    window: *w,
                    derivative_ord: None,
                    detail: format!("pair violates the budget e = {e}"),
                });
            }
        }
    }
    Ok(PropertyReport {
        verdict: true,
        checked_pairs: pairs,
        first_counterexample: None,
        level_n: 0,
        window: *w,
        derivative_ord: None,
        detail: format!("all {pairs} pairs within the budget e = {e}"),
    })
}

/// Local check on one cell: `|f'(t)| ≤ q^e` at every window point, and the
/// pairwise bound within each maximal ball of the cell.
pub fn verify_local_lipschitz(
    f: &PiecewiseFunction,
    domain: &Cell,
    budget: LipschitzBudget,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    let p = ctx.p;
    let e = budget.exponent;
    let pts = domain.enumerate(w, p);
    let mut pairs = 0u64;
    for t in &pts {
        let d = f.eval_derivative_q(t)?;
        if let Some(v) = qrat::ord_p(&d, p) {
            pairs += 1;
            if v < -e {
                return Ok(PropertyReport {
                    verdict: false,
                    checked_pairs: pairs,
                    first_counterexample: Some(Counterexample {
                        x: *t,
                        y: *t,
                        lhs: format!("ord f'(t) = {v}"),
                        rhs: format!("-e = {}", -e),
                    }),
                    level_n: 0,
                    window: *w,
                    derivative_ord: Some(v),
                    detail: "derivative norm exceeds the budget".into(),
                });
            }
        }
    }
    if !domain.is_zero_cell() {
        for x in &pts {
            let ball = domain.ball_at(x, p)?;
            for y in &pts {
                if y <= x || !ball.contains(y, p) {
                    continue;
                }
                pairs += 1;
                if let Some(cex) = pair_violation(f, x, y, e, p)? {
                    return Ok(PropertyReport {
                        verdict: false,
                        checked_pairs: pairs,
                        first_counterexample: Some(cex),
                        level_n: 0,
                        window: *w,
                        derivative_ord: None,
                        detail: "within-ball pair violates the budget".into(),
                    });
                }
            }
        }
    }
    Ok(PropertyReport {
        verdict: true,
        checked_pairs: pairs,
        first_counterexample: None,
        level_n: 0,
        window: *w,
        derivative_ord: None,
        detail: format!("local bound holds at {} window points", pts.len()),
    })
}

/// Global check on one part: the pairwise bound over all window points.
pub fn verify_global_lipschitz(
    f: &PiecewiseFunction,
    part: &Cell,
    budget: LipschitzBudget,
    w: &Window,
    ctx: &FieldContext,
) -> Result<PropertyReport, PadicError> {
    verify_points(f, &part.enumerate(w, ctx.p), budget.exponent, w, ctx)
}

/// One part of a Lipschitz decomposition: a union of cells with its global
/// verification report.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzPart {
    pub label: String,
    pub cells: Vec<Cell>,
    /// "window" when at least one pair was checked, "logic" when the part has
    /// too few window points and its acceptance rests on the engine's rules.
    pub certification: String,
    pub report: PropertyReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzDecomposition {
    pub effective_exponent: i64,
    pub level: u32,
    pub local: PropertyReport,
    /// Whether the whole domain already passed as a single part.
    pub merged_verdict: bool,
    pub parts: Vec<LipschitzPart>,
}

fn part_points(cells: &[Cell], f: &PiecewiseFunction, w: &Window, p: u64) -> Vec<Q> {
    w.points(p)
        .into_iter()
        .filter(|t| f.domain_contains(t) && cells.iter().any(|c| c.contains(t, p)))
        .collect()
}

fn make_part(
    label: String,
    cells: Vec<Cell>,
    f: &PiecewiseFunction,
    e: i64,
    w: &Window,
    ctx: &FieldContext,
) -> Result<LipschitzPart, PadicError> {
    let pts = part_points(&cells, f, w, ctx.p);
    let report = verify_points(f, &pts, e, w, ctx)?;
    let certification = if pts.len() >= 2 { "window" } else { "logic" };
    Ok(LipschitzPart { label, cells, certification: certification.into(), report })
}

/// The measured Lipschitz exponent of `f` on the window: the least `e` with
/// `|f(x)-f(y)| ≤ q^e |x-y|` for all window pairs of the domain and
/// `|f'(t)| ≤ q^e` at all window points. `None` when no pair or derivative
/// constrains it (constant functions).
pub fn measured_exponent(
    f: &PiecewiseFunction,
    cells: &[Cell],
    w: &Window,
    ctx: &FieldContext,
) -> Result<Option<i64>, PadicError> {
    let p = ctx.p;
    let pts = part_points(cells, f, w, p);
    let mut best: Option<i64> = None;
    let raise = |e: i64, best: &mut Option<i64>| {
        *best = Some(best.map_or(e, |b| b.max(e)));
    };
    for t in &pts {
        if let Some(v) = qrat::ord_p(&f.eval_derivative_q(t)?, p) {
            raise(-v, &mut best);
        }
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let dv = f.eval_q(&pts[i], ZeroInverse::Convention)?
                - f.eval_q(&pts[j], ZeroInverse::Convention)?;
            if let Some(v) = qrat::ord_p(&dv, p) {
                let dist = qrat::ord_p(&(pts[i] - pts[j]), p).unwrap();
                raise(dist - v, &mut best);
            }
        }
    }
    Ok(best)
}

/// Splits one prepared cell so every emitted piece satisfies the budget:
/// accepted whole when the coset depth does not drop (`ℓ' ≤ ℓ`) or the
/// exponent is 1; otherwise the finitely many valuation slices on which
/// `|f'| > q^{e - (ℓ'-ℓ)}` are excised as thin parts.
fn split_cell_for_budget(
    pc: &PreparedCell,
    e: i64,
    p: u64,
) -> Result<Vec<(String, Cell)>, PadicError> {
    let model = &pc.models[0];
    let cell = &pc.cell;
    let delta = model.ell_prime as i64 - model.ell as i64;
    let a = model.monomial.num;
    if cell.is_zero_cell() || delta <= 0 || a == 1 {
        return Ok(vec![("cell".into(), cell.clone())]);
    }
    // ord f'(t) on the valuation-r slice: ord(a·e_coeff·s^(a-1)).
    let va = qrat::int_val(a as i128, p);
    let ve = qrat::ord_p(&model.monomial.coeff, p)
        .ok_or_else(|| PadicError::Internal("nonconstant model with zero coefficient".into()))?;
    let slope = a - 1;
    debug_assert!(slope != 0);
    // Violation: va + ve + slope·r < delta - e.
    let oc = cell.admissible_ords(p);
    let rhs = delta - e - va - ve;
    let mut out = Vec::new();
    let pin = |r: i64| -> Result<Option<Cell>, PadicError> {
        match Cell::new(
            cell.center,
            cell.lambda,
            cell.m,
            cell.n,
            Some(qrat::from_val_unit(p, r + 1, 1)),
            Some(qrat::from_val_unit(p, r - 1, 1)),
            p,
        ) {
            Ok(c) => Ok(Some(c)),
            Err(PadicError::EmptyCell(_)) => Ok(None),
            Err(err) => Err(err),
        }
    };
    if slope > 0 {
        // Violating slices are r ≤ cut.
        let cut = Integer::div_ceil(&rhs, &slope) - 1;
        let lo = match oc.lo {
            Some(lo) => lo,
            // Admissible valuations extend below every cut on an
            // unbounded-below cell, so the violating family is infinite.
            None => {
                return Err(PadicError::Engine(
                    "budget violations extend to unbounded valuations; \
                     cannot excise finitely many slices"
                        .into(),
                ));
            }
        };
        let top = oc.hi.unwrap_or(cut).min(cut);
        for r in lo..=top {
            if oc.admits(r) {
                if let Some(c) = pin(r)? {
                    out.push(("excised".into(), c));
                }
            }
        }
        // Remainder: r ≥ cut + 1.
        if oc.hi.map_or(true, |h| h > cut) {
            match Cell::new(
                cell.center,
                cell.lambda,
                cell.m,
                cell.n,
                cell.alpha,
                Some(qrat::from_val_unit(p, lo.max(cut + 1) - 1, 1)),
                p,
            ) {
                Ok(c) => out.push(("remainder".into(), c)),
                Err(PadicError::EmptyCell(_)) => {}
                Err(err) => return Err(err),
            }
        }
    } else {
        // Violating slices are r ≥ cut.
        let cut = Integer::div_floor(&rhs, &slope) + 1;
        let hi = match oc.hi {
            Some(hi) => hi,
            None => {
                return Err(PadicError::Engine(
                    "budget violations extend to unbounded valuations; \
                     cannot excise finitely many slices"
                        .into(),
                ));
            }
        };
        let bottom = oc.lo.unwrap_or(cut).max(cut);
        for r in bottom..=hi {
            if oc.admits(r) {
                if let Some(c) = pin(r)? {
                    out.push(("excised".into(), c));
                }
            }
        }
        if oc.lo.map_or(true, |l| l < cut) {
            match Cell::new(
                cell.center,
                cell.lambda,
                cell.m,
                cell.n,
                Some(qrat::from_val_unit(p, hi.min(cut - 1) + 1, 1)),
                cell.beta,
                p,
            ) {
                Ok(c) => out.push(("remainder".into(), c)),
                Err(PadicError::EmptyCell(_)) => {}
                Err(err) => return Err(err),
            }
        }
    }
    Ok(out)
}

/// Decomposes the domain into parts that are globally Lipschitz with the
/// unchanged budget. Coarsest partition first: the whole domain, then the
/// guard pieces, then the prepared cells with thin-slice excision. Every
/// emitted part is re-verified on the window; a verification failure after
/// decomposition is a hard error with the witness.
pub fn decompose_lipschitz(
    f: &PiecewiseFunction,
    domain: Option<&Cell>,
    budget: LipschitzBudget,
    n: u32,
    w: &Window,
    ctx: &FieldContext,
) -> Result<LipschitzDecomposition, PadicError> {
    let p = ctx.p;
    let e = budget.exponent;
    let domain_cells: Vec<Cell> = match domain {
        Some(c) => vec![c.clone()],
        None => f.pieces.iter().flat_map(|pc| pc.cells.iter().cloned()).collect(),
    };

    // Precondition: the local check must pass on every domain cell.
    let mut local_pairs = 0u64;
    let mut local: Option<PropertyReport> = None;
    for cell in &domain_cells {
        if cell.enumerate(w, p).is_empty() {
            continue;
        }
        let rep = verify_local_lipschitz(f, cell, budget, w, ctx)?;
        local_pairs += rep.checked_pairs;
        if !rep.verdict {
            return Err(PadicError::Precondition(format!(
                "local Lipschitz check failed: {} (x = {})",
                rep.detail,
                rep.first_counterexample
                    .as_ref()
                    .map_or_else(|| "?".into(), |c| q_display(&c.x)),
            )));
        }
        local = Some(rep);
    }
    let local = match local {
        Some(mut rep) => {
            rep.checked_pairs = local_pairs;
            rep
        }
        None => PropertyReport {
            verdict: true,
            checked_pairs: 0,
            first_counterexample: None,
            level_n: 0,
            window: *w,
            derivative_ord: None,
            detail: "no window points in the domain".into(),
        },
    };

    // Coarsest candidate: the whole domain as a single part.
    let merged = make_part("domain".into(), domain_cells.clone(), f, e, w, ctx)?;
    if merged.report.verdict {
        return Ok(LipschitzDecomposition {
            effective_exponent: e,
            level: n,
            local,
            merged_verdict: true,
            parts: vec![merged],
        });
    }

    // Guard pieces as parts.
    let mut guard_parts = Vec::new();
    let mut all_pass = true;
    for (i, piece) in f.pieces.iter().enumerate() {
        let mut cells = Vec::new();
        for gc in &piece.cells {
            match domain {
                None => cells.push(gc.clone()),
                Some(d) => {
                    if let Some(ic) = intersect_cells(d, gc, p)? {
                        cells.push(ic);
                    }
                }
            }
        }
        if cells.is_empty() {
            continue;
        }
        let part = make_part(format!("guard-{i}"), cells, f, e, w, ctx)?;
        all_pass &= part.report.verdict;
        guard_parts.push(part);
    }
    if all_pass && guard_parts.len() > 1 {
        return Ok(LipschitzDecomposition {
            effective_exponent: e,
            level: n,
            local,
            merged_verdict: false,
            parts: guard_parts,
        });
    }

    // Fine decomposition: prepare, then accept or excise per cell.
    let mut parts = Vec::new();
    for dcell in &domain_cells {
        let partition = prepare(std::slice::from_ref(f), n, dcell, w, ctx)?;
        for pc in &partition.cells {
            for (label, cell) in split_cell_for_budget(pc, e, p)? {
                let part = make_part(label, vec![cell], f, e, w, ctx)?;
                if !part.report.verdict {
                    let cex = part.report.first_counterexample.clone().unwrap();
                    return Err(PadicError::Engine(format!(
                        "part failed global verification after decomposition: \
                         x = {}, y = {}, {} < {}",
                        q_display(&cex.x),
                        q_display(&cex.y),
                        cex.lhs,
                        cex.rhs
                    )));
                }
                parts.push(part);
            }
        }
    }
    Ok(LipschitzDecomposition {
        effective_exponent: e,
        level: n,
        local,
        merged_verdict: false,
        parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::parse_with_window;
    use crate::qrat::{q, qi};

    fn win() -> Window {
        Window::new(-3, 3, 4, true)
    }

    fn total(src: &str, p: u64, w: &Window) -> PiecewiseFunction {
        parse_with_window(src, p, w).unwrap()
    }

    fn zp_cells(p: u64) -> Vec<Cell> {
        let mut cells = vec![Cell::point(qi(0))];
        for u in 1..p as i128 {
            cells.push(
                Cell::new(qi(0), qi(u), 1, 1, None, Some(q(1, p as i128)), p).unwrap(),
            );
        }
        cells
    }

    #[test]
    fn budget_flooring() {
        assert_eq!(LipschitzBudget::from_eps(1.0, 3).unwrap().exponent, 0);
        assert_eq!(LipschitzBudget::from_eps(0.5, 3).unwrap().exponent, -1);
        assert_eq!(LipschitzBudget::from_eps(9.0, 3).unwrap().exponent, 2);
        assert_eq!(LipschitzBudget::from_eps(10.0, 3).unwrap().exponent, 2);
        assert!(LipschitzBudget::from_eps(0.0, 3).is_err());
    }

    #[test]
    fn square_is_locally_one_lipschitz_on_z3() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        let f = total("t*t", 3, &w);
        for cell in zp_cells(3) {
            if cell.enumerate(&w, 3).is_empty() {
                continue;
            }
            let rep =
                verify_local_lipschitz(&f, &cell, LipschitzBudget::new(0), &w, &ctx).unwrap();
            assert!(rep.verdict, "{}", rep.detail);
        }
    }

    #[test]
    fn square_on_z2_has_slack() {
        let w = win();
        let ctx = FieldContext::qp(2, 12);
        let f = total("t*t", 2, &w);
        // |2t| ≤ 1/2 on Z_2: the budget e = -1 already suffices locally.
        for cell in zp_cells(2) {
            if cell.enumerate(&w, 2).is_empty() {
                continue;
            }
            let rep =
                verify_local_lipschitz(&f, &cell, LipschitzBudget::new(-1), &w, &ctx).unwrap();
            assert!(rep.verdict, "{}", rep.detail);
        }
    }

    #[test]
    fn reciprocal_on_units() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        let f = total("inv(t) on {ord(t) = 0}", 3, &w);
        for piece in &f.pieces {
            for cell in &piece.cells {
                let rep =
                    verify_local_lipschitz(&f, cell, LipschitzBudget::new(0), &w, &ctx).unwrap();
                assert!(rep.verdict, "{}", rep.detail);
            }
        }
    }

    #[test]
    fn global_failure_has_least_witness() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        // |f'| = 3 everywhere: globally fails at e = 0.
        let f = total("inv(3) * t", 3, &w);
        let cell = Cell::new(qi(0), qi(1), 1, 1, None, Some(q(1, 3)), 3).unwrap();
        let rep = verify_global_lipschitz(&f, &cell, LipschitzBudget::new(0), &w, &ctx).unwrap();
        assert!(!rep.verdict);
        assert!(rep.first_counterexample.is_some());
    }

    #[test]
    fn square_decomposes_to_one_part() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        let f = total("t*t on {ord(t) >= 0}", 3, &w);
        let dec = decompose_lipschitz(&f, None, LipschitzBudget::new(0), 1, &w, &ctx).unwrap();
        assert!(dec.merged_verdict);
        assert_eq!(dec.parts.len(), 1);
        assert!(dec.parts[0].report.verdict);
    }

    #[test]
    fn parity_function_needs_two_parts() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        // Locally constant, so locally Lipschitz for every budget; globally
        // the two plateaus sit at distance 1 while the guards interleave at
        // all scales, so e = -1 fails on the merged domain.
        let f = total("0 on {ord(t) in 0+2Z}; 1 on {ord(t) in 1+2Z}", 3, &w);
        let dec = decompose_lipschitz(&f, None, LipschitzBudget::new(-1), 1, &w, &ctx).unwrap();
        assert!(!dec.merged_verdict);
        assert_eq!(dec.parts.len(), 2);
        for part in &dec.parts {
            assert!(part.report.verdict, "{}: {}", part.label, part.report.detail);
        }
    }

    #[test]
    fn fine_path_excises_thin_slices() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        let f = total("t*t*t", 3, &w);
        // Bounded domain ord ∈ {0,1,2}, ac_1 = 1; at e = -1 the r = 0 slice
        // has |f'| = 1/3 > q^(e-1) and must be excised; the remainder passes.
        let domain = Cell::new(qi(0), qi(1), 1, 1, Some(qi(27)), Some(q(1, 3)), 3).unwrap();
        let dec =
            decompose_lipschitz(&f, Some(&domain), LipschitzBudget::new(-1), 1, &w, &ctx).unwrap();
        assert!(!dec.merged_verdict);
        assert!(dec.parts.len() >= 2, "got {} parts", dec.parts.len());
        for part in &dec.parts {
            assert!(part.report.verdict, "{}: {}", part.label, part.report.detail);
        }
        // The parts tile the domain on the window.
        let mut covered: Vec<Q> = dec
            .parts
            .iter()
            .flat_map(|p| part_points(&p.cells, &f, &w, 3))
            .collect();
        let mut whole = domain.enumerate(&w, 3);
        covered.sort_by_key(|x| qrat::canonical_key(x, 3));
        whole.sort_by_key(|x| qrat::canonical_key(x, 3));
        assert_eq!(covered, whole);
    }

    #[test]
    fn constant_is_a_single_part() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        let f = total("7", 3, &w);
        let dec = decompose_lipschitz(&f, None, LipschitzBudget::new(-5), 1, &w, &ctx).unwrap();
        assert!(dec.merged_verdict);
        assert_eq!(dec.parts.len(), 1);
    }

    #[test]
    fn measured_exponent_examples() {
        let w = win();
        let ctx = FieldContext::qp(3, 12);
        let f = total("t*t on {ord(t) >= 0}", 3, &w);
        let cells: Vec<Cell> = f.pieces.iter().flat_map(|pc| pc.cells.clone()).collect();
        // |f(x)-f(y)| = |x+y||x-y| ≤ |x-y| on Z_3 with equality: e = 0.
        assert_eq!(measured_exponent(&f, &cells, &w, &ctx).unwrap(), Some(0));

        let g = total("5", 3, &w);
        let gcells: Vec<Cell> = g.pieces.iter().flat_map(|pc| pc.cells.clone()).collect();
        assert_eq!(measured_exponent(&g, &gcells, &w, &ctx).unwrap(), None);
    }
}
