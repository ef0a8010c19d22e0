//! Decaying perturbations `B = Σ (b_j(t) + ∫ k_j(t, s) · ds) D^j` and the
//! sampled checks behind eigenvalue absence certificates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::floquet::{classify_multiplicators, Location, MultiplicatorSet, DEFAULT_EPSILON_CIRCLE};
use crate::linalg::C64;
use crate::periodic_ode::{monodromy, OperatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    HalfLine,
    WholeLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    order: usize,
    b: Vec<Expr>,
    k: Vec<Expr>,
    declared_delta: f64,
    domain: Domain,
    zero_below_diagonal: bool,
}

const VALIDATION_SAMPLES: usize = 64;

impl PerturbationSpec {
    /// `b` and `k` hold `n + 1` entries each; the last ones must vanish.
    /// With `zero_below_diagonal` every kernel is cut to its subdiagonal
    /// support (`t ≤ s`, or `|t| ≤ |s|` on the whole line).
    pub fn new(
        order: usize,
        b: Vec<Expr>,
        k: Vec<Expr>,
        declared_delta: f64,
        domain: Domain,
        zero_below_diagonal: bool,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("order must be positive".into()));
        }
        if b.len() != order + 1 || k.len() != order + 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients and kernels, got {} and {}",
                order + 1,
                b.len(),
                k.len()
            )));
        }
        if !(declared_delta.is_finite() && declared_delta > 0.0) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {declared_delta}")));
        }
        if let Some(j) = b.iter().position(|e| e.mentions(Var::S)) {
            return Err(Error::InvalidInput(format!("coefficient b_{j} must depend on t only")));
        }
        let spec = PerturbationSpec {
            order,
            b,
            k,
            declared_delta,
            domain,
            zero_below_diagonal,
        };
        for i in 0..VALIDATION_SAMPLES {
            let t = (i as f64 + 0.5) * 0.37 - 5.0;
            let s = 7.0 - (i as f64) * 0.23;
            if spec.b[order].eval(t, Some(s))?.abs() > 0.0 {
                return Err(Error::InvalidInput(format!("b_{order} must vanish identically")));
            }
            if spec.k[order].eval(t, Some(s))?.abs() > 0.0 {
                return Err(Error::InvalidInput(format!("k_{order} must vanish identically")));
            }
        }
        Ok(spec)
    }

    pub fn parse(
        order: usize,
        b: &[&str],
        k: &[&str],
        declared_delta: f64,
        domain: Domain,
        zero_below_diagonal: bool,
    ) -> Result<Self> {
        let b = b.iter().map(|s| Expr::parse(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        let k = k.iter().map(|s| Expr::parse(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(order, b, k, declared_delta, domain, zero_below_diagonal)
    }

    /// The zero perturbation of order `n`.
    pub fn zero(order: usize, declared_delta: f64, domain: Domain) -> Result<Self> {
        Self::new(
            order,
            vec![Expr::zero(); order + 1],
            vec![Expr::zero(); order + 1],
            declared_delta,
            domain,
            false,
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn b(&self) -> &[Expr] {
        &self.b
    }

    pub fn k(&self) -> &[Expr] {
        &self.k
    }

    pub fn declared_delta(&self) -> f64 {
        self.declared_delta
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn zero_below_diagonal(&self) -> bool {
        self.zero_below_diagonal
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut out = self.clone();
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
        }
        out.declared_delta = delta;
        Ok(out)
    }

    pub fn b_at(&self, j: usize, t: f64) -> Result<f64> {
        Ok(self.b[j].eval_t(t)?)
    }

    /// `k_j(t, s)` with the declared support cut applied.
    pub fn k_at(&self, j: usize, t: f64, s: f64) -> Result<f64> {
        if self.zero_below_diagonal && below_diagonal(self.domain, t, s) {
            return Ok(0.0);
        }
        Ok(self.k[j].eval(t, Some(s))?)
    }

    pub fn has_kernels(&self) -> bool {
        self.k.iter().any(|k| !k.is_literal_zero())
    }
}

fn below_diagonal(domain: Domain, t: f64, s: f64) -> bool {
    match domain {
        Domain::HalfLine => t > s,
        Domain::WholeLine => t.abs() > s.abs(),
    }
}

/// Sampling parameters of the certificate checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub t_max: f64,
    /// Samples per dyadic block in the decay check.
    pub samples: usize,
    pub slope_tol: f64,
    /// Extent and cells per axis of the kernel grids.
    pub kernel_t_max: f64,
    pub kernel_samples: usize,
    pub epsilon_circle: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            t_max: 4096.0,
            samples: 256,
            slope_tol: 0.05,
            kernel_t_max: 64.0,
            kernel_samples: 256,
            epsilon_circle: DEFAULT_EPSILON_CIRCLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub passed: bool,
    /// Largest sampled `(1+|t|)^δ |f(t)|`.
    pub worst_sample: f64,
    pub worst_at: f64,
    /// Least-squares slope of the log block suprema against block index.
    pub trend_slope: f64,
    pub block_sups: Vec<f64>,
}

/// Dyadic blocks `[0, 1], [1, 2], [2, 4], …` up to `t_max`.
fn dyadic_blocks(t_max: f64) -> Vec<(f64, f64)> {
    let mut blocks = vec![(0.0, 1.0f64.min(t_max))];
    let mut a = 1.0;
    while a < t_max {
        let b = (2.0 * a).min(t_max);
        blocks.push((a, b));
        a = b;
    }
    blocks
}

fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

fn decay_check(f: impl Fn(f64) -> Result<f64>, delta: f64, t_max: f64, samples: usize, slope_tol: f64) -> Result<DecayCheck> {
    if !(t_max >= 64.0) || samples < 256 {
        return Err(Error::InvalidInput(format!(
            "decay check needs t_max ≥ 64 and samples ≥ 256, got {t_max} and {samples}"
        )));
    }
    let mut block_sups = Vec::new();
    let mut worst: f64 = 0.0;
    let mut worst_at = 0.0;
    let mut finite = true;
    for (a, b) in dyadic_blocks(t_max) {
        let mut sup: f64 = 0.0;
        for i in 0..samples {
            let t = a + (b - a) * i as f64 / (samples - 1) as f64;
            let w = (1.0 + t).powf(delta) * f(t)?.abs();
            if !w.is_finite() {
                finite = false;
                continue;
            }
            if w > sup {
                sup = w;
            }
            if w > worst {
                worst = w;
                worst_at = t;
            }
        }
        block_sups.push(sup);
    }
    let logs: Vec<f64> = block_sups.iter().map(|s| s.max(1e-300).ln()).collect();
    let trend_slope = least_squares_slope(&logs);
    Ok(DecayCheck {
        passed: finite && trend_slope <= slope_tol,
        worst_sample: if finite { worst } else { f64::INFINITY },
        worst_at,
        trend_slope,
        block_sups,
    })
}

/// Samples `(1+t)^δ |f(t)|` on dyadic blocks up to `t_max`; passes when all
/// samples are finite and the block suprema do not grow across scales.
pub fn verify_decay(f: &Expr, delta: f64, t_max: f64, samples: usize) -> Result<DecayCheck> {
    verify_decay_on(f, delta, Domain::HalfLine, t_max, samples, CheckOptions::default().slope_tol)
}

/// As [`verify_decay`]; on the whole line both `f(t)` and `f(−t)` are
/// weighted by `(1+|t|)^δ`.
pub fn verify_decay_on(f: &Expr, delta: f64, domain: Domain, t_max: f64, samples: usize, slope_tol: f64) -> Result<DecayCheck> {
    match domain {
        Domain::HalfLine => decay_check(|t| Ok(f.eval_t(t)?), delta, t_max, samples, slope_tol),
        Domain::WholeLine => decay_check(
            |t| Ok(f.eval_t(t)?.abs().max(f.eval_t(-t)?.abs())),
            delta,
            t_max,
            samples,
            slope_tol,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubdiagonalCheck {
    pub passed: bool,
    pub worst_violation: f64,
    pub worst_at: Option<(f64, f64)>,
}

const SUBDIAGONAL_TOL: f64 = 1e-12;

/// Cell-centered grid on `[0, t_max]`, or `[−t_max, t_max]` on the whole
/// line.
fn kernel_grid(domain: Domain, t_max: f64, samples: usize) -> Vec<f64> {
    let h = t_max / samples as f64;
    match domain {
        Domain::HalfLine => (0..samples).map(|i| (i as f64 + 0.5) * h).collect(),
        Domain::WholeLine => (0..2 * samples).map(|i| -t_max + (i as f64 + 0.5) * h).collect(),
    }
}

fn subdiagonal_check(k: impl Fn(f64, f64) -> Result<f64>, domain: Domain, t_max: f64, samples: usize) -> Result<SubdiagonalCheck> {
    if !(t_max > 0.0) || samples == 0 {
        return Err(Error::InvalidInput("kernel grid needs t_max > 0 and samples > 0".into()));
    }
    let grid = kernel_grid(domain, t_max, samples);
    let mut worst: f64 = 0.0;
    let mut worst_at = None;
    for &t in &grid {
        for &s in &grid {
            if !below_diagonal(domain, t, s) {
                continue;
            }
            let v = k(t, s)?.abs();
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if v > worst {
                worst = v;
                worst_at = Some((t, s));
            }
        }
    }
    Ok(SubdiagonalCheck {
        passed: worst <= SUBDIAGONAL_TOL,
        worst_violation: worst,
        worst_at,
    })
}

/// Samples `|k(t, s)|` for `t > s` on a cell-centered grid of `[0, t_max]`.
pub fn check_subdiagonal(kernel: &Expr, t_max: f64, samples: usize) -> Result<SubdiagonalCheck> {
    subdiagonal_check(|t, s| Ok(kernel.eval(t, Some(s))?), Domain::HalfLine, t_max, samples)
}

/// Subdiagonality of kernel `j` of a perturbation, support cut included.
pub fn check_subdiagonal_of(pert: &PerturbationSpec, j: usize, t_max: f64, samples: usize) -> Result<SubdiagonalCheck> {
    subdiagonal_check(|t, s| pert.k_at(j, t, s), pert.domain, t_max, samples)
}

/// Schur-test evidence for the weighted kernel `(1+|t|)^δ |k(t, s)|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelBoundEvidence {
    pub max_row_sum: f64,
    pub max_col_sum: f64,
    /// Heuristic: both sums are finite on the sampled grid.
    pub finite: bool,
}

pub fn kernel_bound_evidence(pert: &PerturbationSpec, j: usize, delta: f64, t_max: f64, samples: usize) -> Result<KernelBoundEvidence> {
    let grid = kernel_grid(pert.domain, t_max, samples);
    let h = t_max / samples as f64;
    let mut col = vec![0.0; grid.len()];
    let mut max_row: f64 = 0.0;
    for &t in &grid {
        let weight = (1.0 + t.abs()).powf(delta);
        let mut row = 0.0;
        for (c, &s) in grid.iter().enumerate() {
            let v = weight * pert.k_at(j, t, s)?.abs() * h;
            row += v;
            col[c] += v;
        }
        max_row = max_row.max(if row.is_nan() { f64::INFINITY } else { row });
    }
    let max_col = col.iter().map(|v| if v.is_nan() { f64::INFINITY } else { *v }).fold(0.0, f64::max);
    Ok(KernelBoundEvidence {
        max_row_sum: max_row,
        max_col_sum: max_col,
        finite: max_row.is_finite() && max_col.is_finite(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    CertifiedNoEigenvalue,
    Inconclusive(String),
    ConditionsViolated(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexedDecay {
    pub index: usize,
    #[serde(flatten)]
    pub check: DecayCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexedSubdiagonal {
    pub index: usize,
    #[serde(flatten)]
    pub check: SubdiagonalCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexedKernelBound {
    pub index: usize,
    #[serde(flatten)]
    pub evidence: KernelBoundEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsenceCertificate {
    #[serde(with = "crate::serde_c64")]
    pub lambda: C64,
    pub domain: Domain,
    pub declared_delta: f64,
    pub l: usize,
    pub multiplicators: MultiplicatorSet,
    pub multiplicator_precondition: bool,
    pub delta_checks: Vec<IndexedDecay>,
    pub subdiagonal_checks: Vec<IndexedSubdiagonal>,
    pub kernel_bounds: Vec<IndexedKernelBound>,
    pub verdict: Verdict,
}

fn multiplicator_precondition(domain: Domain, ms: &MultiplicatorSet) -> bool {
    match domain {
        Domain::HalfLine => !ms.any_at(Location::Inside),
        Domain::WholeLine => ms.all_unimodular(),
    }
}

/// Checks the sufficient conditions for absence of an eigenvalue at `λ`: multiplicator
/// location, decay of `b_j` at rate `δ`, subdiagonal kernels, and `δ > l`.
pub fn certify_absence(
    op: &OperatorSpec,
    pert: &PerturbationSpec,
    lambda: C64,
    tol: f64,
    opts: CheckOptions,
) -> Result<AbsenceCertificate> {
    let n = op.order();
    if pert.order != n {
        return Err(Error::InvalidInput(format!(
            "operator has order {n} but perturbation has order {}",
            pert.order
        )));
    }
    let u = monodromy(op, lambda, tol)?.monodromy;
    let multiplicators = classify_multiplicators(&u, opts.epsilon_circle)?;
    let l = multiplicators.l;
    let precondition = multiplicator_precondition(pert.domain, &multiplicators);
    let delta = pert.declared_delta;

    let mut delta_checks = Vec::new();
    let mut subdiagonal_checks = Vec::new();
    let mut kernel_bounds = Vec::new();
    for j in 0..n {
        let check = if pert.b[j].is_literal_zero() {
            DecayCheck {
                passed: true,
                worst_sample: 0.0,
                worst_at: 0.0,
                trend_slope: 0.0,
                block_sups: Vec::new(),
            }
        } else {
            verify_decay_on(&pert.b[j], delta, pert.domain, opts.t_max, opts.samples, opts.slope_tol)?
        };
        delta_checks.push(IndexedDecay { index: j, check });
        if !pert.k[j].is_literal_zero() {
            subdiagonal_checks.push(IndexedSubdiagonal {
                index: j,
                check: check_subdiagonal_of(pert, j, opts.kernel_t_max, opts.kernel_samples)?,
            });
            kernel_bounds.push(IndexedKernelBound {
                index: j,
                evidence: kernel_bound_evidence(pert, j, delta, opts.kernel_t_max, opts.kernel_samples)?,
            });
        }
    }

    let failed_decay: Vec<usize> = delta_checks.iter().filter(|c| !c.check.passed).map(|c| c.index).collect();
    let failed_subdiagonal: Vec<usize> = subdiagonal_checks.iter().filter(|c| !c.check.passed).map(|c| c.index).collect();
    let unbounded: Vec<usize> = kernel_bounds.iter().filter(|c| !c.evidence.finite).map(|c| c.index).collect();
    let verdict = if !precondition {
        Verdict::Inconclusive("multiplicator hypothesis not met".into())
    } else if !failed_decay.is_empty() || !failed_subdiagonal.is_empty() || !unbounded.is_empty() {
        let mut parts = Vec::new();
        if !failed_decay.is_empty() {
            parts.push(format!("coefficients {failed_decay:?} do not decay at rate {delta}"));
        }
        if !failed_subdiagonal.is_empty() {
            parts.push(format!("kernels {failed_subdiagonal:?} are not subdiagonal"));
        }
        if !unbounded.is_empty() {
            parts.push(format!("weighted kernels {unbounded:?} have unbounded sampled Schur sums"));
        }
        Verdict::ConditionsViolated(parts.join("; "))
    } else if delta <= l as f64 {
        Verdict::Inconclusive(format!("declared delta {delta} does not exceed the Jordan order l = {l}"))
    } else {
        Verdict::CertifiedNoEigenvalue
    };

    Ok(AbsenceCertificate {
        lambda,
        domain: pert.domain,
        declared_delta: delta,
        l,
        multiplicators,
        multiplicator_precondition: precondition,
        delta_checks,
        subdiagonal_checks,
        kernel_bounds,
        verdict,
    })
}
