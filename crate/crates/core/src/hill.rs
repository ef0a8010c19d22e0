//! Hill operators `−u'' + p(t) u`: discriminant, band scan and band-edge
//! classification.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::floquet::{max_unimodular_jordan_order, DEFAULT_EPSILON_CIRCLE};
use crate::linalg::{CMatrix, C64};
use crate::periodic_ode::{monodromy, OperatorSpec};
use crate::Warning;

pub const DEFAULT_EDGE_BAND_EPS: f64 = 1e-7;

/// Bisection stops once `|Δ ∓ 2|` is this small.
const EDGE_TARGET: f64 = 1e-12;
/// Refined extrema of `Δ` within this distance of `±2` are touchings.
const TOUCH_TOL: f64 = 1e-8;
/// `‖X²‖ ≤ NILPOTENT_RATIO·‖X‖²` identifies a nontrivial Jordan block at an
/// edge, `X = U ∓ I`.
const NILPOTENT_RATIO: f64 = 1e-3;
/// `‖U ∓ I‖` below this (relative) is integration noise around `±I`.
const IDENTITY_NOISE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct HillSpec {
    p: Expr,
    operator: OperatorSpec,
}

impl HillSpec {
    pub fn new(p: &str, period: f64) -> Result<Self> {
        let operator = OperatorSpec::hill(p, period)?;
        Self::from_operator(operator)
    }

    /// Accepts second-order operators with `a_1 ≡ 0`.
    pub fn from_operator(operator: OperatorSpec) -> Result<Self> {
        if operator.order() != 2 || operator.coefficients()[1].constant_value() != Some(0.0) {
            return Err(Error::InvalidInput(
                "a Hill operator has order 2 and a vanishing first-order coefficient".into(),
            ));
        }
        Ok(HillSpec {
            p: operator.coefficients()[0].clone(),
            operator,
        })
    }

    pub fn potential(&self) -> &Expr {
        &self.p
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.operator
    }
}

/// `Δ(λ) = tr U(T)`.
pub fn discriminant(spec: &HillSpec, lambda: C64, tol: f64) -> Result<C64> {
    Ok(monodromy(&spec.operator, lambda, tol)?.monodromy.trace())
}

fn real_discriminant(spec: &HillSpec, lambda: f64, tol: f64) -> Result<f64> {
    Ok(discriminant(spec, C64::new(lambda, 0.0), tol)?.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// `Δ ∓ 2` changes sign: a gap opens.
    Crossing,
    /// `Δ` touches `±2` without crossing: a closed gap.
    Touching,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub lambda: f64,
    /// `+2` or `−2`.
    pub discriminant_value: f64,
    /// `|Δ(λ) ∓ 2|` at the reported location.
    pub residual: f64,
    pub kind: EdgeKind,
    /// Largest Jordan block of the unimodular multiplicator.
    pub jordan_order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandStructure {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub resolution: usize,
    pub bands: Vec<Band>,
    pub edges: Vec<Edge>,
    /// `(λ, Re Δ(λ))` on the scan grid.
    pub samples: Vec<(f64, f64)>,
    pub warnings: Vec<Warning>,
}

fn bisect(spec: &HillSpec, target: f64, mut lo: f64, mut glo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let mut best = (lo, glo.abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = real_discriminant(spec, mid, tol)? - target;
        if g.abs() < best.1 {
            best = (mid, g.abs());
        }
        if g.abs() <= EDGE_TARGET {
            return Ok((mid, g.abs()));
        }
        if (g < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = g;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Golden-section search for the extremum of `sign·Δ` on `[a, b]`; returns
/// `(λ*, Δ(λ*))`.
fn refine_extremum(spec: &HillSpec, sign: f64, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| -> Result<f64> { Ok(sign * real_discriminant(spec, x, tol)?) };
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > 1e-10 * (1.0 + a.abs().max(b.abs())) {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 > f2 { (x1, sign * f1) } else { (x2, sign * f2) })
}

/// Minimizes `‖U(λ) ∓ I‖` over `[a, b]` by golden-section search.
fn refine_identity(spec: &HillSpec, sign: f64, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| -> Result<f64> {
        let u = monodromy(&spec.operator, C64::new(x, 0.0), tol)?.monodromy;
        Ok(u.shifted(C64::new(sign, 0.0)).norm_fro())
    };
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > 1e-13 * (1.0 + a.abs().max(b.abs())) {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 < f2 { x1 } else { x2 })
}

fn edge_jordan_order(spec: &HillSpec, lambda: f64, tol: f64) -> Result<usize> {
    let u = monodromy(&spec.operator, C64::new(lambda, 0.0), tol)?.monodromy;
    max_unimodular_jordan_order(&u, DEFAULT_EPSILON_CIRCLE)
}

/// Scans `Δ` on `resolution + 1` equispaced points of
/// `[lambda_min, lambda_max]`, refines every crossing of `±2` by bisection
/// and every extremum approaching `±2` by golden-section search, and
/// assembles the maximal intervals with `|Δ| ≤ 2`.
pub fn band_structure(
    spec: &HillSpec,
    lambda_min: f64,
    lambda_max: f64,
    resolution: usize,
    tol: f64,
) -> Result<BandStructure> {
    if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min < lambda_max) {
        return Err(Error::InvalidInput(format!(
            "scan range must satisfy min < max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    if resolution < 64 {
        return Err(Error::InvalidInput(format!("resolution must be at least 64, got {resolution}")));
    }
    let step = (lambda_max - lambda_min) / resolution as f64;
    let grid: Vec<f64> = (0..=resolution)
        .map(|k| if k == resolution { lambda_max } else { lambda_min + k as f64 * step })
        .collect();
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&l| real_discriminant(spec, l, tol))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut found: Vec<(f64, f64, f64, EdgeKind)> = Vec::new();
    for target in [2.0, -2.0] {
        let sign = target / 2.0;
        let g: Vec<f64> = values.iter().map(|d| d - target).collect();
        for k in 0..resolution {
            if g[k] == 0.0 {
                found.push((grid[k], target, 0.0, EdgeKind::Crossing));
            } else if g[k + 1] != 0.0 && (g[k] < 0.0) != (g[k + 1] < 0.0) {
                let (l, r) = bisect(spec, target, grid[k], g[k], grid[k + 1], tol)?;
                found.push((l, target, r, EdgeKind::Crossing));
            }
        }
        if g[resolution] == 0.0 {
            found.push((grid[resolution], target, 0.0, EdgeKind::Crossing));
        }
        // Extrema of Δ towards the target with no sign change on the grid:
        // either a touching or two crossings inside one cell pair.
        for k in 1..resolution {
            let (a, b, c) = (sign * values[k - 1], sign * values[k], sign * values[k + 1]);
            let is_peak = b >= a && b >= c;
            let same_side = (g[k - 1] < 0.0) == (g[k] < 0.0) && (g[k] < 0.0) == (g[k + 1] < 0.0);
            if !is_peak || !same_side || g[k] == 0.0 {
                continue;
            }
            let (lam, d) = refine_extremum(spec, sign, grid[k - 1], grid[k + 1], tol)?;
            let excess = sign * (d - target);
            if excess.abs() <= TOUCH_TOL {
                // Δ is flat at a touching, so its extremum pins λ down only
                // to about the square root of the integration error, while
                // ‖U ∓ I‖ vanishes linearly there.
                let lam = refine_identity(spec, sign, grid[k - 1], grid[k + 1], tol)?;
                let residual = (real_discriminant(spec, lam, tol)? - target).abs();
                found.push((lam, target, residual, EdgeKind::Touching));
            } else if (excess > 0.0) == (sign * g[k] < 0.0) {
                warnings.push(Warning::ResolutionTooCoarse {
                    lambda_lo: grid[k - 1],
                    lambda_hi: grid[k + 1],
                });
                let gl = g[k - 1];
                let (l1, r1) = bisect(spec, target, grid[k - 1], gl, lam, tol)?;
                let gm = d - target;
                let (l2, r2) = bisect(spec, target, lam, gm, grid[k + 1], tol)?;
                found.push((l1, target, r1, EdgeKind::Crossing));
                found.push((l2, target, r2, EdgeKind::Crossing));
            }
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.dedup_by(|b, a| (a.0 - b.0).abs() <= 1e-12 * (1.0 + a.0.abs()) && a.1 == b.1);

    let edges: Vec<Edge> = found
        .par_iter()
        .map(|&(lambda, target, residual, kind)| {
            Ok(Edge {
                lambda,
                discriminant_value: target,
                residual,
                kind,
                jordan_order: edge_jordan_order(spec, lambda, tol)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut breaks = vec![lambda_min];
    breaks.extend(edges.iter().filter(|e| e.kind == EdgeKind::Crossing).map(|e| e.lambda));
    breaks.push(lambda_max);
    breaks.dedup();
    let mut bands: Vec<Band> = Vec::new();
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if real_discriminant(spec, mid, tol)?.abs() > 2.0 {
            continue;
        }
        match bands.last_mut() {
            Some(last) if last.hi == w[0] => last.hi = w[1],
            _ => bands.push(Band { lo: w[0], hi: w[1] }),
        }
    }

    Ok(BandStructure {
        lambda_min,
        lambda_max,
        resolution,
        bands,
        edges,
        samples: grid.into_iter().zip(values).collect(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HillClass {
    Interior,
    Edge,
    EdgeDegenerate,
    OutsideSpectrum,
}

impl HillClass {
    /// Maximal unimodular Jordan order implied by the class.
    pub fn implied_l(self) -> usize {
        match self {
            HillClass::Interior | HillClass::EdgeDegenerate => 1,
            HillClass::Edge => 2,
            HillClass::OutsideSpectrum => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HillPoint {
    pub lambda: f64,
    pub class: HillClass,
    pub l: usize,
    pub discriminant: f64,
    /// `|Δ| − 2`.
    pub distance: f64,
}

/// Classifies a real `λ` by the discriminant; inside the edge zone
/// `||Δ| − 2| ≤ edge_band_eps` a nontrivial Jordan block is recognised by
/// `U ∓ I` being nilpotent to working accuracy.
pub fn classify_hill_point(spec: &HillSpec, lambda: f64, tol: f64, edge_band_eps: f64) -> Result<HillPoint> {
    let u = monodromy(&spec.operator, C64::new(lambda, 0.0), tol)?.monodromy;
    let disc = u.trace().re;
    let distance = disc.abs() - 2.0;
    let class = if distance < -edge_band_eps {
        HillClass::Interior
    } else if distance > edge_band_eps {
        HillClass::OutsideSpectrum
    } else {
        let x = u.shifted(C64::new(disc.signum(), 0.0));
        let norm = x.norm_fro();
        let floor = IDENTITY_NOISE * u.norm_fro().max(1.0);
        let nilpotent = (&x * &x).norm_fro() <= NILPOTENT_RATIO * norm * norm;
        if norm > floor && nilpotent {
            HillClass::Edge
        } else {
            HillClass::EdgeDegenerate
        }
    };
    Ok(HillPoint {
        lambda,
        class,
        l: class.implied_l(),
        discriminant: disc,
        distance,
    })
}

/// `U ∓ I` for inspection at an edge.
pub fn edge_defect(spec: &HillSpec, lambda: f64, tol: f64) -> Result<CMatrix> {
    let u = monodromy(&spec.operator, C64::new(lambda, 0.0), tol)?.monodromy;
    let sign = u.trace().re.signum();
    Ok(u.shifted(C64::new(sign, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic_ode::DEFAULT_TOL;
    use std::f64::consts::PI;

    fn free() -> HillSpec {
        HillSpec::new("0", 1.0).unwrap()
    }

    #[test]
    fn discriminant_examples() {
        let d = |l: f64| discriminant(&free(), C64::new(l, 0.0), DEFAULT_TOL).unwrap();
        assert!((d(0.0).re - 2.0).abs() < 1e-10);
        assert!(d(PI * PI / 4.0).re.abs() < 1e-9);
        assert!((d(-1.0).re - 2.0 * 1f64.cosh()).abs() < 1e-9);
        assert!(d(3.0).im.abs() < 1e-12);
    }

    #[test]
    fn rejects_non_hill_operators() {
        let op = OperatorSpec::parse(2, 1.0, &["0", "1", "1"]).unwrap();
        assert!(HillSpec::from_operator(op).is_err());
    }

    #[test]
    fn free_band_structure() {
        let bs = band_structure(&free(), -1.0, 40.0, 512, DEFAULT_TOL).unwrap();
        assert_eq!(bs.bands.len(), 1);
        assert!(bs.bands[0].lo.abs() < 1e-9);
        assert_eq!(bs.bands[0].hi, 40.0);
        let lowest = &bs.edges[0];
        assert_eq!(lowest.kind, EdgeKind::Crossing);
        assert_eq!(lowest.jordan_order, 2);
        assert_eq!(lowest.discriminant_value, 2.0);
        let touchings: Vec<&Edge> = bs.edges.iter().filter(|e| e.kind == EdgeKind::Touching).collect();
        assert_eq!(touchings.len(), 2);
        assert!((touchings[0].lambda - PI * PI).abs() < 1e-4);
        assert!((touchings[1].lambda - 4.0 * PI * PI).abs() < 1e-4);
        assert!(touchings.iter().all(|e| e.jordan_order == 1));
    }

    #[test]
    fn cosine_potential_opens_gaps() {
        let spec = HillSpec::new("cos(2*pi*t)", 1.0).unwrap();
        let bs = band_structure(&spec, -1.0, 30.0, 256, DEFAULT_TOL).unwrap();
        assert!(bs.bands.len() >= 2);
        for e in &bs.edges {
            assert!(e.residual <= 1e-9);
            assert_eq!(e.kind, EdgeKind::Crossing);
            assert_eq!(e.jordan_order, 2);
        }
        for band in &bs.bands {
            for k in 1..=16 {
                let l = band.lo + (band.hi - band.lo) * k as f64 / 17.0;
                assert!(real_discriminant(&spec, l, DEFAULT_TOL).unwrap().abs() <= 2.0 + 1e-8);
            }
        }
    }

    #[test]
    fn narrow_gap_in_one_cell_is_resolved() {
        let spec = HillSpec::new("0.05*cos(2*pi*t)", 1.0).unwrap();
        // Gap of width ~0.05 around π² on a grid of spacing ~0.5.
        let bs = band_structure(&spec, 0.0, 32.0, 64, DEFAULT_TOL).unwrap();
        let near: Vec<&Edge> = bs.edges.iter().filter(|e| (e.lambda - PI * PI).abs() < 0.2).collect();
        assert_eq!(near.len(), 2);
        assert!(near[1].lambda > near[0].lambda);
        assert!(!bs.warnings.is_empty());
    }

    #[test]
    fn classification_examples() {
        let c = |l: f64| classify_hill_point(&free(), l, DEFAULT_TOL, DEFAULT_EDGE_BAND_EPS).unwrap();
        assert_eq!(c(4.0).class, HillClass::Interior);
        assert_eq!(c(4.0).l, 1);
        assert_eq!(c(0.0).class, HillClass::Edge);
        assert_eq!(c(0.0).l, 2);
        assert_eq!(c(PI * PI).class, HillClass::EdgeDegenerate);
        assert_eq!(c(PI * PI).l, 1);
        assert_eq!(c(-1.0).class, HillClass::OutsideSpectrum);
    }
}
