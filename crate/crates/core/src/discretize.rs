//! Finite-difference truncation of `H = A + B` to `[0, L]` with Dirichlet
//! ends, and an eigenvalue hunt that separates localized, length-stable
//! eigenvalues from truncation artifacts. The hunt is empirical
//! corroboration, not verification.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::periodic_ode::{i_pow, OperatorSpec};
use crate::perturbation::PerturbationSpec;
use crate::stencil::{centered_width, unit_weights};

pub const DEFAULT_UNKNOWN_CAP: usize = 8192;
pub const DEFAULT_STEP: f64 = 1.0 / 64.0;
pub const DEFAULT_LENGTHS: [f64; 3] = [20.0, 40.0, 80.0];
pub const DEFAULT_LOC_TOL: f64 = 1e-3;
pub const DEFAULT_DRIFT_TOL: f64 = 1e-3;

/// Fraction of the domain, measured from the far end, whose eigenvector
/// mass counts as boundary mass.
const BOUNDARY_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub enum GridMatrix {
    Real(Mat<f64>),
    Complex(Mat<C64>),
}

/// `H` restricted to the interior nodes `t_i = i·h`, `i = 1..M−1`.
#[derive(Debug, Clone)]
pub struct GridOperator {
    pub length: f64,
    pub step: f64,
    pub matrix: GridMatrix,
    pub scheme: String,
}

impl GridOperator {
    pub fn size(&self) -> usize {
        match &self.matrix {
            GridMatrix::Real(m) => m.nrows(),
            GridMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        match &self.matrix {
            GridMatrix::Real(m) => C64::new(m[(i, j)], 0.0),
            GridMatrix::Complex(m) => m[(i, j)],
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self.matrix, GridMatrix::Real(_))
    }

    /// Position of interior unknown `i`.
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.step
    }
}

/// Derivative stencils on the nodes `0..=M`: centered with accuracy order
/// 4 where they fit, shifted to one side with the same width near the ends.
struct Stencils {
    /// `rows[j][l] = (first node, weights)` for `d^j/dt^j` at node `l`.
    rows: Vec<Vec<(usize, Vec<f64>)>>,
}

impl Stencils {
    fn new(order: usize, nodes: usize, h: f64) -> Self {
        let last = nodes - 1;
        let rows = (0..=order)
            .map(|j| {
                let width = centered_width(j);
                let half = width / 2;
                let scale = h.powi(j as i32);
                (0..nodes)
                    .map(|l| {
                        let first = l.saturating_sub(half).min(last + 1 - width);
                        let offset = first as isize - l as isize;
                        let w = unit_weights(j, offset, width).into_iter().map(|c| c / scale).collect();
                        (first, w)
                    })
                    .collect()
            })
            .collect();
        Stencils { rows }
    }
}

/// Assembles `H = Σ (a_j + b_j) D^j + Σ ∫ k_j(·, s) D^j u(s) ds` on
/// `[0, L]` with step `h`; kernels use trapezoid weights over all nodes.
pub fn assemble_operator(op: &OperatorSpec, pert: &PerturbationSpec, length: f64, step: f64, cap: usize) -> Result<GridOperator> {
    let n = op.order();
    if pert.order() != n {
        return Err(Error::InvalidInput(format!(
            "operator has order {n} but perturbation has order {}",
            pert.order()
        )));
    }
    let period = op.period();
    if !(step > 0.0 && step <= period / 32.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidInput(format!("step {step} must not exceed T/32 = {}", period / 32.0)));
    }
    let periods = length / period;
    if !(length > 0.0) || (periods - periods.round()).abs() > 1e-9 * periods.max(1.0) {
        return Err(Error::InvalidInput(format!("length {length} must be a positive multiple of the period {period}")));
    }
    let cells = length / step;
    let m = cells.round() as usize;
    if (cells - m as f64).abs() > 1e-9 * cells {
        return Err(Error::InvalidInput(format!("step {step} must divide length {length}")));
    }
    let unknowns = m.saturating_sub(1);
    if unknowns > cap {
        return Err(Error::MemoryBudgetExceeded { n: unknowns, cap });
    }
    let widest = (0..=n).map(centered_width).max().unwrap_or(1);
    if m + 1 < widest || unknowns == 0 {
        return Err(Error::GridTooCoarse {
            needed: widest,
            available: m + 1,
        });
    }
    let nodes = m + 1;
    let stencils = Stencils::new(n, nodes, step);
    let t = |l: usize| l as f64 * step;

    // Entries on the node grid, later restricted to interior columns.
    let mut rows: Vec<Vec<C64>> = (1..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<C64>> {
            let mut row = vec![C64::new(0.0, 0.0); nodes];
            let ti = t(i);
            let a = op.coefficients_at(ti)?;
            for j in 0..=n {
                let coeff = a[j] + if j < n { pert.b_at(j, ti)? } else { 0.0 };
                if coeff == 0.0 {
                    continue;
                }
                let (first, w) = &stencils.rows[j][i];
                let c = i_pow(j) * coeff;
                for (k, wk) in w.iter().enumerate() {
                    row[first + k] += c * *wk;
                }
            }
            for j in 0..n {
                if pert.k()[j].is_literal_zero() {
                    continue;
                }
                for l in 0..nodes {
                    let kv = pert.k_at(j, ti, t(l))?;
                    if kv == 0.0 {
                        continue;
                    }
                    let trap = if l == 0 || l == m { 0.5 * step } else { step };
                    let c = i_pow(j) * (kv * trap);
                    let (first, w) = &stencils.rows[j][l];
                    for (k, wk) in w.iter().enumerate() {
                        row[first + k] += c * *wk;
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let real = rows.iter().all(|r| r.iter().all(|z| z.im == 0.0));
    let matrix = if real {
        GridMatrix::Real(Mat::from_fn(unknowns, unknowns, |i, j| rows[i][j + 1].re))
    } else {
        GridMatrix::Complex(Mat::from_fn(unknowns, unknowns, |i, j| rows[i][j + 1]))
    };
    rows.clear();
    Ok(GridOperator {
        length,
        step,
        matrix,
        scheme: format!(
            "dirichlet; derivative stencils centered order 4, one-sided of equal width at the ends; trapezoid kernel weights; h = {step}"
        ),
    })
}

/// Eigenpairs of a grid operator; vectors are unit columns.
pub struct GridSpectrum {
    pub values: Vec<C64>,
    vectors: Mat<C64>,
}

impl GridSpectrum {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        let col: Vec<C64> = (0..self.vectors.nrows()).map(|i| self.vectors[(i, k)]).collect();
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col.into_iter().map(|z| z / norm).collect()
    }
}

pub fn grid_eigenvalues(op: &GridOperator) -> Result<Vec<C64>> {
    let fail = |e: faer::linalg::evd::EvdError| Error::Eigensolver {
        length: op.length,
        message: format!("{e:?}"),
    };
    match &op.matrix {
        GridMatrix::Real(m) => m.eigenvalues().map_err(fail),
        GridMatrix::Complex(m) => m.eigenvalues().map_err(fail),
    }
}

pub fn grid_spectrum(op: &GridOperator) -> Result<GridSpectrum> {
    let fail = |e: faer::linalg::evd::EvdError| Error::Eigensolver {
        length: op.length,
        message: format!("{e:?}"),
    };
    let (values, vectors) = match &op.matrix {
        GridMatrix::Real(m) => {
            let e = m.eigen().map_err(fail)?;
            (e.S().column_vector().iter().copied().collect::<Vec<_>>(), e.U().to_owned())
        }
        GridMatrix::Complex(m) => {
            let e = m.eigen().map_err(fail)?;
            (e.S().column_vector().iter().copied().collect::<Vec<_>>(), e.U().to_owned())
        }
    };
    if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigensolver {
            length: op.length,
            message: "non-finite eigenvalue".into(),
        });
    }
    Ok(GridSpectrum { values, vectors })
}

/// Closed rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Window {
    pub fn contains(&self, z: C64) -> bool {
        (self.re_min..=self.re_max).contains(&z.re) && (self.im_min..=self.im_max).contains(&z.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Genuine,
    TruncationArtifact,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    #[serde(with = "crate::serde_c64")]
    pub lambda: C64,
    /// Domain length the candidate was found on.
    pub found_at: f64,
    /// Matched eigenvalue per tried length, `None` when unmatched.
    pub matches: Vec<Option<crate::Complex>>,
    /// Largest boundary-mass fraction over the matched eigenvectors.
    pub localization: f64,
    /// Largest pairwise distance between matched eigenvalues.
    pub drift: f64,
    pub classification: Classification,
    /// `(t, v(t))` on the domain where the candidate was found, if
    /// requested.
    #[serde(skip)]
    pub profile: Option<Vec<(f64, C64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenHuntReport {
    pub label: String,
    pub domain_lengths: Vec<f64>,
    pub step: f64,
    pub window: Window,
    pub loc_tol: f64,
    pub drift_tol: f64,
    pub candidates: Vec<Candidate>,
}

impl EigenHuntReport {
    pub fn genuine(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.classification == Classification::Genuine)
    }

    /// The same matches judged against other tolerances.
    pub fn reclassified(&self, loc_tol: f64, drift_tol: f64) -> EigenHuntReport {
        let mut out = self.clone();
        out.loc_tol = loc_tol;
        out.drift_tol = drift_tol;
        for c in &mut out.candidates {
            if c.classification != Classification::Unresolved {
                c.classification = if c.localization <= loc_tol && c.drift <= drift_tol {
                    Classification::Genuine
                } else {
                    Classification::TruncationArtifact
                };
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuntOptions {
    pub step: f64,
    pub loc_tol: f64,
    pub drift_tol: f64,
    pub unknown_cap: usize,
    pub keep_profiles: bool,
}

impl Default for HuntOptions {
    fn default() -> Self {
        HuntOptions {
            step: DEFAULT_STEP,
            loc_tol: DEFAULT_LOC_TOL,
            drift_tol: DEFAULT_DRIFT_TOL,
            unknown_cap: DEFAULT_UNKNOWN_CAP,
            keep_profiles: false,
        }
    }
}

/// Fraction of `|v|²` on nodes in the last tenth of the domain.
pub fn boundary_mass(op: &GridOperator, v: &[C64]) -> f64 {
    let cut = (1.0 - BOUNDARY_FRACTION) * op.length;
    let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let tail: f64 = v
        .iter()
        .enumerate()
        .filter(|(i, _)| op.node(*i) >= cut)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

struct Found {
    lambda: C64,
    localization: f64,
    profile: Option<Vec<(f64, C64)>>,
}

/// Minimum-cost assignment of rows to columns (`rows ≤ cols`); returns the
/// column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    let inf = f64::INFINITY;
    // Potentials and matching, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Pairs `a[i]` with `b[j]` minimizing the total distance; pairs further
/// apart than `radius` are left unmatched.
fn match_within(a: &[C64], b: &[C64], radius: f64) -> Vec<Option<usize>> {
    if a.is_empty() {
        return Vec::new();
    }
    let big = 1e6 * (radius + 1.0);
    let size = a.len().max(b.len());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match (a.get(i), b.get(j)) {
                    (Some(x), Some(y)) if (x - y).norm() <= radius => (x - y).norm(),
                    _ => big,
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    (0..a.len())
        .map(|i| {
            let j = assignment[i];
            (j < b.len() && (a[i] - b[j]).norm() <= radius).then_some(j)
        })
        .collect()
}

fn hunt_one(op: &OperatorSpec, pert: &PerturbationSpec, length: f64, window: Window, opts: &HuntOptions) -> Result<Vec<Found>> {
    let grid = assemble_operator(op, pert, length, opts.step, opts.unknown_cap)?;
    let spectrum = grid_spectrum(&grid)?;
    let mut found: Vec<Found> = spectrum
        .values
        .iter()
        .enumerate()
        .filter(|(_, z)| window.contains(**z))
        .map(|(k, z)| {
            let v = spectrum.vector(k);
            Found {
                lambda: *z,
                localization: boundary_mass(&grid, &v),
                profile: opts
                    .keep_profiles
                    .then(|| v.iter().enumerate().map(|(i, z)| (grid.node(i), *z)).collect()),
            }
        })
        .collect();
    found.sort_by(|a, b| a.lambda.re.total_cmp(&b.lambda.re).then(a.lambda.im.total_cmp(&b.lambda.im)));
    Ok(found)
}

/// Eigenvalues of the truncated operator inside `window` for each length,
/// tracked across lengths and classified as genuine (matched everywhere,
/// localized, stable), truncation artifacts (matched but delocalized or
/// drifting) or unresolved (not matched on every length).
pub fn hunt_eigenvalues(
    op: &OperatorSpec,
    pert: &PerturbationSpec,
    window: Window,
    lengths: &[f64],
    opts: HuntOptions,
) -> Result<EigenHuntReport> {
    if lengths.len() < 3 || lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("need at least three strictly increasing domain lengths".into()));
    }
    if !(window.re_min <= window.re_max && window.im_min <= window.im_max) {
        return Err(Error::InvalidInput("empty search window".into()));
    }
    let per_length: Vec<Vec<Found>> = lengths
        .par_iter()
        .map(|&l| hunt_one(op, pert, l, window, &opts))
        .collect::<Result<_>>()?;

    let radius = 10.0 * opts.drift_tol;
    let reference_index = lengths.len() - 1;
    let reference: Vec<C64> = per_length[reference_index].iter().map(|f| f.lambda).collect();
    let mut matched_in: Vec<Vec<Option<usize>>> = Vec::with_capacity(lengths.len());
    let mut used: Vec<Vec<bool>> = per_length.iter().map(|f| vec![false; f.len()]).collect();
    for (li, found) in per_length.iter().enumerate() {
        if li == reference_index {
            matched_in.push((0..reference.len()).map(Some).collect());
            continue;
        }
        let values: Vec<C64> = found.iter().map(|f| f.lambda).collect();
        let m = match_within(&reference, &values, radius);
        for j in m.iter().flatten() {
            used[li][*j] = true;
        }
        matched_in.push(m);
    }

    let mut candidates = Vec::new();
    for (r, reference_found) in per_length[reference_index].iter().enumerate() {
        let hits: Vec<Option<&Found>> = (0..lengths.len())
            .map(|li| matched_in[li][r].map(|j| &per_length[li][j]))
            .collect();
        let values: Vec<C64> = hits.iter().flatten().map(|f| f.lambda).collect();
        let drift = values
            .iter()
            .flat_map(|a| values.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        let localization = hits.iter().flatten().map(|f| f.localization).fold(0.0, f64::max);
        let everywhere = hits.iter().all(Option::is_some);
        let classification = if !everywhere {
            Classification::Unresolved
        } else if localization <= opts.loc_tol && drift <= opts.drift_tol {
            Classification::Genuine
        } else {
            Classification::TruncationArtifact
        };
        candidates.push(Candidate {
            lambda: reference_found.lambda,
            found_at: lengths[reference_index],
            matches: hits.iter().map(|h| h.map(|f| f.lambda.into())).collect(),
            localization,
            drift,
            classification,
            profile: reference_found.profile.clone(),
        });
    }
    for (li, found) in per_length.iter().enumerate().take(reference_index) {
        for (j, f) in found.iter().enumerate() {
            if used[li][j] {
                continue;
            }
            let mut matches = vec![None; lengths.len()];
            matches[li] = Some(f.lambda.into());
            candidates.push(Candidate {
                lambda: f.lambda,
                found_at: lengths[li],
                matches,
                localization: f.localization,
                drift: 0.0,
                classification: Classification::Unresolved,
                profile: f.profile.clone(),
            });
        }
    }

    Ok(EigenHuntReport {
        label: "empirical corroboration on truncated domains, not a verification".into(),
        domain_lengths: lengths.to_vec(),
        step: opts.step,
        window,
        loc_tol: opts.loc_tol,
        drift_tol: opts.drift_tol,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::Domain;
    use std::f64::consts::PI;

    fn free() -> OperatorSpec {
        OperatorSpec::hill("0", 1.0).unwrap()
    }

    fn none() -> PerturbationSpec {
        PerturbationSpec::zero(2, 1.0, Domain::HalfLine).unwrap()
    }

    fn sorted_real(values: &[C64]) -> Vec<f64> {
        let mut re: Vec<f64> = values.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        re
    }

    #[test]
    fn dirichlet_laplacian() {
        let g = assemble_operator(&free(), &none(), 10.0, 1.0 / 64.0, DEFAULT_UNKNOWN_CAP).unwrap();
        assert!(g.is_real());
        let ev = sorted_real(&grid_eigenvalues(&g).unwrap());
        for k in 1..=3 {
            let exact = (k as f64 * PI / 10.0).powi(2);
            assert!((ev[k - 1] - exact).abs() <= 1e-3 * exact, "k = {k}: {} vs {exact}", ev[k - 1]);
        }
    }

    #[test]
    fn interior_rows_are_symmetric() {
        let op = OperatorSpec::hill("cos(2*pi*t)", 1.0).unwrap();
        let g = assemble_operator(&op, &none(), 4.0, 1.0 / 32.0, DEFAULT_UNKNOWN_CAP).unwrap();
        let n = g.size();
        // Rows whose stencil is centered: nodes 2..=M−2, i.e. unknowns 1..n−1.
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                assert!((g.entry(i, j) - g.entry(j, i)).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn first_order_terms_are_complex() {
        let op = OperatorSpec::parse(2, 1.0, &["0", "0.5", "1"]).unwrap();
        let g = assemble_operator(&op, &none(), 2.0, 1.0 / 32.0, DEFAULT_UNKNOWN_CAP).unwrap();
        assert!(!g.is_real());
    }

    #[test]
    fn subdiagonal_kernel_stays_triangular() {
        let pert = PerturbationSpec::parse(2, &["0", "0", "0"], &["0.1*exp(-(s-t))", "0", "0"], 1.0, Domain::HalfLine, true).unwrap();
        let base = assemble_operator(&free(), &none(), 4.0, 1.0 / 32.0, DEFAULT_UNKNOWN_CAP).unwrap();
        let full = assemble_operator(&free(), &pert, 4.0, 1.0 / 32.0, DEFAULT_UNKNOWN_CAP).unwrap();
        let n = full.size();
        for i in 0..n {
            for j in 0..i {
                assert_eq!(full.entry(i, j), base.entry(i, j), "({i}, {j})");
            }
        }
        assert!((full.entry(3, 10) - base.entry(3, 10)).norm() > 0.0);
    }

    #[test]
    fn memory_budget() {
        let err = assemble_operator(&free(), &none(), 200.0, 1.0 / 64.0, DEFAULT_UNKNOWN_CAP).unwrap_err();
        assert!(matches!(err, Error::MemoryBudgetExceeded { .. }));
        assert!(assemble_operator(&free(), &none(), 10.0, 0.1, DEFAULT_UNKNOWN_CAP).is_err());
        assert!(assemble_operator(&free(), &none(), 10.5, 1.0 / 64.0, DEFAULT_UNKNOWN_CAP).is_err());
    }

    #[test]
    fn hungarian_assignment() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        assert_eq!(hungarian(&cost), vec![1, 0, 2]);
        let m = match_within(&[C64::new(1.0, 0.0), C64::new(2.0, 0.0)], &[C64::new(2.001, 0.0)], 0.01);
        assert_eq!(m, vec![None, Some(0)]);
    }

    #[test]
    fn unperturbed_band_has_no_genuine_candidates() {
        let window = Window { re_min: 0.5, re_max: 2.0, im_min: -0.5, im_max: 0.5 };
        let report = hunt_eigenvalues(&free(), &none(), window, &[8.0, 12.0, 16.0], HuntOptions { step: 1.0 / 32.0, ..Default::default() }).unwrap();
        assert!(!report.candidates.is_empty());
        assert_eq!(report.genuine().count(), 0);
    }

    #[test]
    fn bound_state_below_the_band_is_genuine() {
        // A reflectionless well centered away from the Dirichlet end has
        // its bound state at −1.
        let pert = PerturbationSpec::parse(2, &["-2*sech(t-10)^2", "0", "0"], &["0", "0", "0"], 1.0, Domain::HalfLine, false).unwrap();
        let g = assemble_operator(&free(), &pert, 20.0, 1.0 / 32.0, DEFAULT_UNKNOWN_CAP).unwrap();
        let ev = sorted_real(&grid_eigenvalues(&g).unwrap());
        assert!((ev[0] + 1.0).abs() < 1e-4, "{}", ev[0]);
        assert!(ev[1] > 0.0);
    }
}
