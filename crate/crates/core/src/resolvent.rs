//! The half-line resolvent through the Floquet factorization, its kernel
//! split into exponential-polynomial terms, and the scalar Volterra operator
//! `(R(λ)u)(t) = ∫_t^∞ e^{λ(t−s)} u(s) ds`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::floquet::{classify_multiplicators, floquet_decomposition, MultiplicatorSet, DEFAULT_EPSILON_CIRCLE};
use crate::linalg::{condition_number, matrix_exp, CMatrix, C64};
use crate::periodic_ode::{i_pow, OperatorSpec};
use crate::stencil::{centered_width, unit_weights};
use crate::Warning;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Uniform samples `values[i] = f(i·step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub step: f64,
    pub values: Vec<C64>,
}

impl Sampled {
    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn grid_points(length: f64, step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0 && length.is_finite() && length > 0.0) {
        return Err(Error::InvalidInput(format!(
            "grid needs positive length and step, got length {length}, step {step}"
        )));
    }
    let cells = length / step;
    let rounded = cells.round();
    if (cells - rounded).abs() > 1e-9 * cells.max(1.0) {
        return Err(Error::InvalidInput(format!("step {step} does not divide length {length}")));
    }
    Ok(rounded as usize + 1)
}

/// Right-hand side `ν` sampled on `[0, L]` and vanishing beyond `support`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsFunction {
    pub samples: Sampled,
    pub support: f64,
}

impl RhsFunction {
    pub fn from_fn(length: f64, step: f64, support: f64, f: impl Fn(f64) -> C64) -> Result<Self> {
        let n = grid_points(length, step)?;
        if !(0.0..=length).contains(&support) {
            return Err(Error::InvalidInput(format!("support bound {support} must lie in [0, {length}]")));
        }
        let values = (0..n)
            .map(|i| {
                let t = i as f64 * step;
                if t > support {
                    ZERO
                } else {
                    f(t)
                }
            })
            .collect();
        Ok(RhsFunction {
            samples: Sampled { step, values },
            support,
        })
    }

    pub fn from_expr(expr: &Expr, length: f64, step: f64, support: f64) -> Result<Self> {
        let n = grid_points(length, step)?;
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 * step;
            values.push(if t > support { ZERO } else { C64::new(expr.eval_t(t)?, 0.0) });
        }
        if !(0.0..=length).contains(&support) {
            return Err(Error::InvalidInput(format!("support bound {support} must lie in [0, {length}]")));
        }
        Ok(RhsFunction {
            samples: Sampled { step, values },
            support,
        })
    }

    /// Smooth bump `exp(1 − 1/(1 − x²))` on `[a, b]`, peak value 1.
    pub fn bump(a: f64, b: f64, length: f64, step: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidInput(format!("bump needs a < b, got [{a}, {b}]")));
        }
        Self::from_fn(length, step, b, |t| C64::new(smooth_bump(t, a, b), 0.0))
    }

    pub fn zero(length: f64, step: f64) -> Result<Self> {
        Self::from_fn(length, step, 0.0, |_| ZERO)
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, c: C64, other: &RhsFunction) -> Result<Self> {
        if self.samples.step != other.samples.step || self.samples.len() != other.samples.len() {
            return Err(Error::InvalidInput("right-hand sides live on different grids".into()));
        }
        let values = self
            .samples
            .values
            .iter()
            .zip(&other.samples.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(RhsFunction {
            samples: Sampled {
                step: self.samples.step,
                values,
            },
            support: self.support.max(other.support),
        })
    }
}

/// `exp(1 − 1/(1 − x²))` for `x` mapping `[a, b]` to `[−1, 1]`, zero outside.
pub fn smooth_bump(t: f64, a: f64, b: f64) -> f64 {
    let x = (2.0 * t - a - b) / (b - a);
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub lambda: C64,
    pub u: Sampled,
    /// Companion state `(u, u', …, u^{(n-1)})` at each grid point.
    pub state: Vec<Vec<C64>>,
    pub residual: f64,
    pub threshold: f64,
    pub multiplicators: MultiplicatorSet,
}

/// Periodic Floquet data on a grid of `m` cells per period.
struct PeriodicFactor {
    m: usize,
    f: Vec<CMatrix>,
    f_inv: Vec<CMatrix>,
    gamma: CMatrix,
    decomposition: crate::floquet::FloquetDecomposition,
}

fn periodic_factor(spec: &OperatorSpec, lambda: C64, step: f64, tol: f64) -> Result<PeriodicFactor> {
    let period = spec.period();
    let cells = period / step;
    let m = cells.round() as usize;
    if m == 0 || (cells - m as f64).abs() > 1e-9 * cells {
        return Err(Error::InvalidInput(format!(
            "grid step {step} must divide the period {period}"
        )));
    }
    let ts: Vec<f64> = (0..=m).map(|j| if j == m { period } else { j as f64 * step }).collect();
    let decomposition = floquet_decomposition(spec, lambda, &ts, tol)?;
    let f: Vec<CMatrix> = decomposition.f_samples[..m].iter().map(|(_, f)| f.clone()).collect();
    let f_inv = f.iter().map(CMatrix::inverse).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PeriodicFactor {
        m,
        f,
        f_inv,
        gamma: decomposition.gamma.clone(),
        decomposition,
    })
}

fn require_no_inside(multiplicators: &MultiplicatorSet) -> Result<()> {
    if multiplicators.any_at(crate::floquet::Location::Inside) {
        return Err(Error::PreconditionViolated(
            "a multiplicator lies inside the unit circle, so the half-line resolvent does not exist".into(),
        ));
    }
    Ok(())
}

/// `e2·y₂ + ∫` over one Simpson panel `[t_i, t_{i+2}]` with the integrand
/// transported to `t_i`.
fn simpson_panel(y2: &[C64], g: &[Vec<C64>], h: f64, e1: &CMatrix, e2: &CMatrix) -> Vec<C64> {
    let a = e2.mul_vec(y2);
    let g1 = e1.mul_vec(&g[1]);
    let g2 = e2.mul_vec(&g[2]);
    (0..y2.len()).map(|r| a[r] + (g[0][r] + g1[r] * 4.0 + g2[r]) * (h / 3.0)).collect()
}

/// `y_i = ∫_{t_i}^{t_end} e^{G(t_i − s)} g(s) ds` for all grid points, zero
/// from `end` on. Simpson panels chained backwards, `E_k = e^{−khG}`; the
/// parity not reaching `end` opens with a 4th-order single-cell rule.
fn simpson_chain(g: &[Vec<C64>], end: usize, h: f64, gamma: &CMatrix) -> Result<Vec<Vec<C64>>> {
    let n = g.len();
    let dim = gamma.rows();
    let mut y = vec![vec![ZERO; dim]; n];
    let end = end.min(n.saturating_sub(1));
    if end == 0 {
        return Ok(y);
    }
    let prop = |k: f64| matrix_exp(&gamma.scale_real(-k * h));
    let (e1, e2) = (prop(1.0)?, prop(2.0)?);
    // Same-parity nodes chain Simpson panels back from `end`.
    for i in (0..end.saturating_sub(1)).rev().step_by(2) {
        y[i] = simpson_panel(&y[i + 2], &g[i..i + 3], h, &e1, &e2);
    }
    // The other parity starts with a single cell [t_{end−1}, t_end].
    let i = end - 1;
    let mut terms: Vec<(f64, Vec<C64>)> = vec![];
    match end {
        1 => terms.extend([(0.5, g[0].clone()), (0.5, e1.mul_vec(&g[1]))]),
        2 => terms.extend([
            (-1.0 / 12.0, prop(-1.0)?.mul_vec(&g[0])),
            (8.0 / 12.0, g[1].clone()),
            (5.0 / 12.0, e1.mul_vec(&g[2])),
        ]),
        _ => terms.extend([
            (1.0 / 24.0, prop(-2.0)?.mul_vec(&g[i - 2])),
            (-5.0 / 24.0, prop(-1.0)?.mul_vec(&g[i - 1])),
            (19.0 / 24.0, g[i].clone()),
            (9.0 / 24.0, e1.mul_vec(&g[i + 1])),
        ]),
    }
    y[i] = (0..dim).map(|r| terms.iter().map(|(w, v)| v[r] * (w * h)).sum()).collect();
    for i in (0..i.saturating_sub(1)).rev().step_by(2) {
        y[i] = simpson_panel(&y[i + 2], &g[i..i + 3], h, &e1, &e2);
    }
    Ok(y)
}

/// Solves `(A − λ)u = ν` on the half-line for compactly supported `ν`:
/// `x(t) = −F(t) ∫_t^S e^{Γ(t−s)} F(s)⁻¹ f(s) ds`, `f = (0, …, 0, ν/iⁿ)`.
/// The grid step must divide the period.
pub fn apply_resolvent(spec: &OperatorSpec, lambda: C64, nu: &RhsFunction, tol: f64) -> Result<ResolventSolution> {
    let n = spec.order();
    let h = nu.samples.step;
    let pf = periodic_factor(spec, lambda, h, tol)?;
    let multiplicators = classify_multiplicators(&pf.decomposition.monodromy, DEFAULT_EPSILON_CIRCLE)?;
    require_no_inside(&multiplicators)?;

    let inv_in = C64::new(1.0, 0.0) / i_pow(n);
    let len = nu.samples.len();
    let g: Vec<Vec<C64>> = (0..len)
        .map(|i| {
            let mut f = vec![ZERO; n];
            f[n - 1] = nu.samples.values[i] * inv_in;
            pf.f_inv[i % pf.m].mul_vec(&f)
        })
        .collect();
    let end = ((nu.support / h) + 1e-9).floor() as usize;
    let y = simpson_chain(&g, end, h, &pf.gamma)?;
    let state: Vec<Vec<C64>> = y
        .iter()
        .enumerate()
        .map(|(i, yi)| pf.f[i % pf.m].mul_vec(yi).into_iter().map(|z| -z).collect())
        .collect();
    let u = Sampled {
        step: h,
        values: state.iter().map(|x| x[0]).collect(),
    };
    let residual = truncated_residual_profile(spec, lambda, &u, nu)?
        .into_iter()
        .flatten()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let threshold = (1e-4f64).max(100.0 * tol * nu.samples.sup_norm());
    if residual > threshold {
        return Err(Error::QuadratureTooCoarse { residual, threshold });
    }
    Ok(ResolventSolution {
        lambda,
        u,
        state,
        residual,
        threshold,
        multiplicators,
    })
}

/// Pointwise residual `Σ a_j(t) (i d/dt)^j u − λu − ν` at every grid point
/// where the centered stencils fit; `None` elsewhere.
pub fn residual_profile(spec: &OperatorSpec, lambda: C64, u: &Sampled, nu: &Sampled) -> Result<Vec<Option<C64>>> {
    let n = spec.order();
    if u.len() != nu.len() || u.step != nu.step {
        return Err(Error::InvalidInput("u and ν must share a grid".into()));
    }
    let width = (0..=n).map(centered_width).max().unwrap_or(1);
    let r = width / 2;
    if width > u.len() {
        return Err(Error::GridTooCoarse {
            needed: width,
            available: u.len(),
        });
    }
    let h = u.step;
    let stencils: Vec<Vec<f64>> = (0..=n)
        .map(|j| {
            let w = centered_width(j);
            let hw = (w / 2) as isize;
            let scale = h.powi(j as i32);
            unit_weights(j, -hw, w).into_iter().map(|c| c / scale).collect()
        })
        .collect();
    let mut out = vec![None; u.len()];
    for i in r..u.len() - r {
        let t = u.t(i);
        let a = spec.coefficients_at(t)?;
        let mut acc = -lambda * u.values[i] - nu.values[i];
        for (j, weights) in stencils.iter().enumerate() {
            if a[j] == 0.0 {
                continue;
            }
            let hw = weights.len() / 2;
            let d: C64 = weights
                .iter()
                .enumerate()
                .map(|(k, w)| u.values[i + k - hw] * *w)
                .sum();
            acc += d * i_pow(j) * a[j];
        }
        out[i] = Some(acc);
    }
    Ok(out)
}

/// [`residual_profile`] for a truncated right-hand side. When `ν` jumps at
/// its support bound the equation only holds classically away from it, so
/// stencils straddling the jump are masked out.
pub fn truncated_residual_profile(
    spec: &OperatorSpec,
    lambda: C64,
    u: &Sampled,
    nu: &RhsFunction,
) -> Result<Vec<Option<C64>>> {
    let mut profile = residual_profile(spec, lambda, u, &nu.samples)?;
    let h = nu.samples.step;
    let last = ((nu.support / h) + 1e-9).floor() as usize;
    let jump = last + 1 < nu.samples.len() && nu.samples.values[last].norm() > 1e-12 * nu.samples.sup_norm().max(1.0);
    if jump {
        let r = (0..=spec.order()).map(centered_width).max().unwrap_or(1) / 2;
        for p in profile.iter_mut().take(last + r + 1).skip(last.saturating_sub(r - 1).max(1)) {
            *p = None;
        }
    }
    Ok(profile)
}

/// Sup norm of [`residual_profile`] over the interior grid.
pub fn residual_norm(spec: &OperatorSpec, lambda: C64, u: &Sampled, nu: &Sampled) -> Result<f64> {
    Ok(residual_profile(spec, lambda, u, nu)?
        .into_iter()
        .flatten()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelTerm {
    /// Index of the multiplicator cluster.
    pub alpha: usize,
    /// Power of `(t − s)`.
    pub k: usize,
    /// Basis vector within the cluster's invariant subspace.
    pub component: usize,
    #[serde(with = "crate::serde_c64")]
    pub lambda_alpha: C64,
    #[serde(with = "crate::serde_c64::vec")]
    pub g_samples: Vec<C64>,
    #[serde(with = "crate::serde_c64::vec")]
    pub h_samples: Vec<C64>,
}

/// Scalar resolvent kernel `G(t, s)`, `u(t) = ∫_t^∞ G(t, s) ν(s) ds`, as
/// `Σ g(t) (t−s)^k e^{λ_α(t−s)} h(s)` with periodic `g`, `h` sampled at
/// `j·T/M`, `j = 0..=M`.
#[derive(Debug, Clone)]
pub struct ResolventKernelDecomposition {
    pub lambda: C64,
    pub period: f64,
    pub samples_per_period: usize,
    pub terms: Vec<KernelTerm>,
    pub basis_condition: f64,
    pub warnings: Vec<Warning>,
    f: Vec<CMatrix>,
    f_inv: Vec<CMatrix>,
    gamma: CMatrix,
}

impl ResolventKernelDecomposition {
    fn t_of(&self, i: usize) -> f64 {
        i as f64 * self.period / self.samples_per_period as f64
    }

    /// Kernel from the terms at grid indices `i` (for `t`) and `j` (for `s`).
    pub fn reconstruct(&self, i: usize, j: usize) -> C64 {
        let m = self.samples_per_period;
        let d = self.t_of(i) - self.t_of(j);
        self.terms
            .iter()
            .map(|term| term.g_samples[i % m] * d.powi(term.k as i32) * (term.lambda_alpha * d).exp() * term.h_samples[j % m])
            .sum()
    }

    /// `−[F(t) e^{Γ(t−s)} F(s)⁻¹]_{0,n−1} / iⁿ` at grid indices.
    pub fn direct(&self, i: usize, j: usize) -> Result<C64> {
        let m = self.samples_per_period;
        let n = self.gamma.rows();
        let d = self.t_of(i) - self.t_of(j);
        let prop = &(&self.f[i % m] * &matrix_exp(&self.gamma.scale_real(d))?) * &self.f_inv[j % m];
        Ok(-prop[(0, n - 1)] / i_pow(n))
    }

    /// `max |q(T) − q(0)|` over all `g` and `h` samples.
    pub fn periodicity_defect(&self) -> f64 {
        let m = self.samples_per_period;
        self.terms
            .iter()
            .map(|t| (t.g_samples[m] - t.g_samples[0]).norm().max((t.h_samples[m] - t.h_samples[0]).norm()))
            .fold(0.0, f64::max)
    }
}

const ILL_CONDITIONED: f64 = 1e8;

/// Splits the resolvent kernel along the invariant subspaces of `Γ`. For a
/// cluster with eigenvalue `λ_α` and nilpotent part `N`,
/// `e^{Γ(t−s)}` restricted to it is `e^{λ_α(t−s)} Σ_k (t−s)^k N^k / k!`.
pub fn decompose_resolvent_kernel(
    spec: &OperatorSpec,
    lambda: C64,
    samples_per_period: usize,
    tol: f64,
) -> Result<ResolventKernelDecomposition> {
    if samples_per_period < 2 {
        return Err(Error::InvalidInput("need at least two samples per period".into()));
    }
    let period = spec.period();
    let n = spec.order();
    let m = samples_per_period;
    let pf = periodic_factor(spec, lambda, period / m as f64, tol)?;
    let multiplicators = classify_multiplicators(&pf.decomposition.monodromy, DEFAULT_EPSILON_CIRCLE)?;
    require_no_inside(&multiplicators)?;
    let log = &pf.decomposition.log;
    let mut warnings = pf.decomposition.warnings.clone();
    let cond = condition_number(&log.basis)?;
    if cond > ILL_CONDITIONED {
        warnings.push(Warning::IllConditionedSimilarity { condition: cond });
    }

    let inv_in = C64::new(1.0, 0.0) / i_pow(n);
    let fw: Vec<CMatrix> = pf.f.iter().map(|f| f * &log.basis).collect();
    let mut terms = Vec::new();
    for (alpha, block) in log.blocks.iter().enumerate() {
        let size = block.cols.len();
        let lambda_alpha = block.log_mu / period;
        let nil = block.log_block.scale_real(1.0 / period).shifted(lambda_alpha);
        let rows = log.basis_inv.submatrix(block.cols.clone(), 0..n);
        let max_k = block.jordan.max_order().max(1);
        let mut power = CMatrix::identity(size);
        let mut factorial = 1.0;
        for k in 0..max_k {
            if k > 0 {
                power = &power * &nil;
                factorial *= k as f64;
            }
            let coeff = &power.scale_real(1.0 / factorial) * &rows;
            let h_rows: Vec<CMatrix> = pf.f_inv.iter().map(|fi| &coeff * fi).collect();
            for r in 0..size {
                let col = block.cols.start + r;
                let mut g_samples: Vec<C64> = fw.iter().map(|x| x[(0, col)]).collect();
                g_samples.push(g_samples[0]);
                let mut h_samples: Vec<C64> = h_rows.iter().map(|x| -x[(r, n - 1)] * inv_in).collect();
                h_samples.push(h_samples[0]);
                let negligible = g_samples.iter().all(|z| z.norm() == 0.0) || h_samples.iter().all(|z| z.norm() == 0.0);
                if !negligible {
                    terms.push(KernelTerm {
                        alpha,
                        k,
                        component: r,
                        lambda_alpha,
                        g_samples,
                        h_samples,
                    });
                }
            }
        }
    }
    // The stored endpoint samples duplicate t = 0; replace them with the
    // factor evaluated at t = T so the periodicity check is meaningful.
    let f_end = &pf.decomposition.f_samples[m].1;
    let f_end_inv = f_end.inverse()?;
    for term in &mut terms {
        let block = &log.blocks[term.alpha];
        let col = block.cols.start + term.component;
        term.g_samples[m] = (f_end * &log.basis)[(0, col)];
        let nil = block.log_block.scale_real(1.0 / period).shifted(term.lambda_alpha);
        let rows = log.basis_inv.submatrix(block.cols.clone(), 0..n);
        let coeff = &nil.pow(term.k as u32).scale_real(1.0 / factorial_of(term.k)) * &rows;
        term.h_samples[m] = -(&coeff * &f_end_inv)[(term.component, n - 1)] * inv_in;
    }

    Ok(ResolventKernelDecomposition {
        lambda,
        period,
        samples_per_period: m,
        terms,
        basis_condition: cond,
        warnings,
        f: pf.f,
        f_inv: pf.f_inv,
        gamma: pf.gamma,
    })
}

fn factorial_of(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Discrete `L_p` norms with trapezoid weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl Norm {
    pub fn of(self, values: &[C64], step: f64) -> f64 {
        let last = values.len().saturating_sub(1);
        let weight = |i: usize| if i == 0 || i == last { 0.5 * step } else { step };
        match self {
            Norm::L1 => values.iter().enumerate().map(|(i, z)| weight(i) * z.norm()).sum(),
            Norm::L2 => values
                .iter()
                .enumerate()
                .map(|(i, z)| weight(i) * z.norm_sqr())
                .sum::<f64>()
                .sqrt(),
            Norm::LInf => values.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }
}

/// `(R(λ)v)(t_i) = ∫_{t_i}^{∞} e^{λ(t_i−s)} v(s) ds` on a uniform grid, `v`
/// taken as zero beyond the last sample.
pub fn apply_r(lambda: C64, step: f64, values: &[C64]) -> Vec<C64> {
    let g: Vec<Vec<C64>> = values.iter().map(|v| vec![*v]).collect();
    simpson_chain(&g, values.len().saturating_sub(1), step, &CMatrix::diag(&[lambda]))
        .expect("scalar exponential")
        .into_iter()
        .map(|v| v[0])
        .collect()
}

/// `R(λ)^m v` by direct quadrature of the kernel
/// `(s − t)^{m−1} e^{λ(t−s)} / (m − 1)!` over `s ≥ t`.
pub fn apply_r_power_direct(lambda: C64, m: usize, step: f64, values: &[C64]) -> Vec<C64> {
    let n = values.len();
    let fact = factorial_of(m.saturating_sub(1));
    (0..n)
        .map(|i| {
            let integrand: Vec<C64> = (i..n)
                .map(|j| {
                    let d = (j - i) as f64 * step;
                    values[j] * d.powi(m as i32 - 1) * (-lambda * d).exp() / fact
                })
                .collect();
            simpson(&integrand, step)
        })
        .collect()
}

/// Composite Simpson with a trailing trapezoid panel for even sample counts.
fn simpson(f: &[C64], h: f64) -> C64 {
    let n = f.len();
    if n < 2 {
        return ZERO;
    }
    let panels = (n - 1) / 2;
    let mut acc = ZERO;
    for p in 0..panels {
        let i = 2 * p;
        acc += (f[i] + f[i + 1] * 4.0 + f[i + 2]) * (h / 3.0);
    }
    if (n - 1) % 2 == 1 {
        acc += (f[n - 2] + f[n - 1]) * (h / 2.0);
    }
    acc
}

/// Grid for the weighted bound experiment: test functions live on
/// `[0, support]`, images are evaluated on `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RGrid {
    pub length: f64,
    pub step: f64,
    pub support: f64,
}

impl Default for RGrid {
    fn default() -> Self {
        RGrid {
            length: 40.0,
            step: 1.0 / 32.0,
            support: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RBoundOptions {
    pub norm: Norm,
    /// Use `(1+s)^{−τ−1}` on the input side; forced when `Re λ = 0`.
    pub shifted: bool,
    pub seed: u64,
}

impl Default for RBoundOptions {
    fn default() -> Self {
        RBoundOptions {
            norm: Norm::L2,
            shifted: false,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RBoundReport {
    #[serde(with = "crate::serde_c64")]
    pub lambda: C64,
    pub tau: f64,
    pub norm: Norm,
    pub shifted: bool,
    pub trials: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Which way the weight `(1+t)^τ` acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Conjugation {
    /// `(1+t)^τ R (1+s)^{−τ}`: the weighted norm `‖(1+t)^τ u‖` carried
    /// through `R`.
    Weighted,
    /// `(1+t)^{−τ} R (1+s)^{τ}`.
    #[cfg_attr(not(test), allow(dead_code))]
    Inverse,
}

fn conjugated_ratio(lambda: C64, tau: f64, grid: RGrid, u: &[C64], norm: Norm, shifted: bool, how: Conjugation) -> f64 {
    let h = grid.step;
    let input_exp = match how {
        Conjugation::Weighted => -tau - if shifted { 1.0 } else { 0.0 },
        Conjugation::Inverse => tau + if shifted { 1.0 } else { 0.0 },
    };
    let output_exp = match how {
        Conjugation::Weighted => tau,
        Conjugation::Inverse => -tau,
    };
    let v: Vec<C64> = u
        .iter()
        .enumerate()
        .map(|(i, z)| z * (1.0 + i as f64 * h).powf(input_exp))
        .collect();
    let out: Vec<C64> = apply_r(lambda, h, &v)
        .into_iter()
        .enumerate()
        .map(|(i, z)| z * (1.0 + i as f64 * h).powf(output_exp))
        .collect();
    let denom = norm.of(u, h);
    if denom == 0.0 {
        0.0
    } else {
        norm.of(&out, h) / denom
    }
}

fn bound_for(lambda: C64, shifted: bool) -> f64 {
    if shifted {
        2.0
    } else {
        1.0 / lambda.re
    }
}

/// Ratio `‖w R(λ) w⁻¹ u‖ / ‖u‖` for one sampled `u` on `grid`.
pub fn weighted_r_ratio(lambda: C64, tau: f64, grid: RGrid, u: &[C64], opts: RBoundOptions) -> f64 {
    let shifted = opts.shifted || lambda.re == 0.0;
    conjugated_ratio(lambda, tau, grid, u, opts.norm, shifted, Conjugation::Weighted)
}

/// Random compactly supported test function: a few smooth bumps with
/// complex amplitudes and oscillating phases.
fn random_test_function(rng: &mut ChaCha8Rng, grid: RGrid, n: usize) -> Vec<C64> {
    let bumps = rng.gen_range(1..=4);
    let mut u = vec![ZERO; n];
    for _ in 0..bumps {
        let width = rng.gen_range(0.2..=grid.support);
        let center = rng.gen_range(0.0..=grid.support);
        let (a, b) = ((center - width / 2.0).max(-width), (center + width / 2.0).min(grid.support));
        let amp = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let omega = rng.gen_range(-3.0..3.0);
        for (i, ui) in u.iter_mut().enumerate() {
            let t = i as f64 * grid.step;
            if t > grid.support {
                break;
            }
            let w = smooth_bump(t, a, b);
            if w != 0.0 {
                *ui += amp * w * C64::new(0.0, omega * t).exp();
            }
        }
    }
    u
}

/// Samples the weighted norm of `R(λ)` on random test functions. The bound
/// is `1/Re λ`, or 2 in the shifted variant (mandatory at `Re λ = 0`).
pub fn weighted_r_bound_check(
    lambda: C64,
    tau: f64,
    grid: RGrid,
    trials: usize,
    opts: RBoundOptions,
) -> Result<RBoundReport> {
    if !(lambda.re >= 0.0) || !lambda.im.is_finite() {
        return Err(Error::InvalidInput(format!("Re λ must be nonnegative, got {lambda}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("τ must be nonnegative, got {tau}")));
    }
    if !(grid.support <= grid.length) {
        return Err(Error::InvalidInput("support must lie within the grid".into()));
    }
    let n = grid_points(grid.length, grid.step)?;
    let shifted = opts.shifted || lambda.re == 0.0;
    let bound = bound_for(lambda, shifted);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trials {
        let u = random_test_function(&mut rng, grid, n);
        let ratio = conjugated_ratio(lambda, tau, grid, &u, opts.norm, shifted, Conjugation::Weighted);
        if ratio > bound * (1.0 + 1e-6) {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(RBoundReport {
        lambda,
        tau,
        norm: opts.norm,
        shifted,
        trials,
        max_ratio,
        bound,
        violations,
        pass: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic_ode::DEFAULT_TOL;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let nu = RhsFunction::zero(4.0, 1.0 / 64.0).unwrap();
        let sol = apply_resolvent(&spec, c(PI * PI / 4.0, 0.0), &nu, DEFAULT_TOL).unwrap();
        assert!(sol.u.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn inside_multiplicator_is_rejected() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let nu = RhsFunction::bump(1.0, 2.0, 4.0, 1.0 / 64.0).unwrap();
        let err = apply_resolvent(&spec, c(-1.0, 0.0), &nu, DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolated(_)));
    }

    #[test]
    fn step_must_divide_period() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let nu = RhsFunction::bump(1.0, 2.0, 3.0, 0.3).unwrap();
        assert!(matches!(apply_resolvent(&spec, c(1.0, 0.0), &nu, DEFAULT_TOL), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn truncated_rhs_masks_only_the_jump() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let lambda = c(PI * PI / 4.0, 0.0);
        let nu = RhsFunction::from_fn(5.0, 1.0 / 256.0, 3.0, |t| c((-t).exp(), 0.0)).unwrap();
        let sol = apply_resolvent(&spec, lambda, &nu, DEFAULT_TOL).unwrap();
        assert!(sol.residual <= 1e-4, "residual {}", sol.residual);
        let raw = residual_profile(&spec, lambda, &sol.u, &nu.samples).unwrap();
        let masked = truncated_residual_profile(&spec, lambda, &sol.u, &nu).unwrap();
        let dropped: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_some() && masked[i].is_none()).collect();
        assert!(!dropped.is_empty() && dropped.len() <= 4);
        assert!(dropped.iter().all(|&i| i.abs_diff(768) <= 2));
        let smooth = RhsFunction::bump(1.0, 3.0, 5.0, 1.0 / 256.0).unwrap();
        let sol = apply_resolvent(&spec, lambda, &smooth, DEFAULT_TOL).unwrap();
        assert_eq!(
            residual_profile(&spec, lambda, &sol.u, &smooth.samples).unwrap(),
            truncated_residual_profile(&spec, lambda, &sol.u, &smooth).unwrap()
        );
    }

    #[test]
    fn solution_vanishes_beyond_support() {
        let spec = OperatorSpec::hill("cos(2*pi*t)", 1.0).unwrap();
        let nu = RhsFunction::bump(1.0, 2.5, 4.0, 1.0 / 128.0).unwrap();
        let sol = apply_resolvent(&spec, c(3.0, 0.0), &nu, DEFAULT_TOL).unwrap();
        assert!(sol.residual <= sol.threshold);
        for (i, z) in sol.u.values.iter().enumerate() {
            if sol.u.t(i) >= 2.5 {
                assert_eq!(z.norm(), 0.0);
            }
        }
    }

    #[test]
    fn polynomial_residual() {
        // −u'' − u = t³ for u = −t³ + 6t.
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let h = 1.0 / 64.0;
        let n = 129;
        let u = Sampled {
            step: h,
            values: (0..n).map(|i| { let t = i as f64 * h; c(-t.powi(3) + 6.0 * t, 0.0) }).collect(),
        };
        let nu = Sampled {
            step: h,
            values: (0..n).map(|i| c((i as f64 * h).powi(3), 0.0)).collect(),
        };
        assert!(residual_norm(&spec, c(1.0, 0.0), &u, &nu).unwrap() <= 1e-6);
        let zero = Sampled { step: h, values: vec![ZERO; n] };
        assert_eq!(residual_norm(&spec, c(1.0, 0.0), &zero, &zero).unwrap(), 0.0);
        let short = Sampled { step: h, values: vec![ZERO; 3] };
        assert!(matches!(
            residual_norm(&spec, c(1.0, 0.0), &short, &short),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn residual_amplifies_noise() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let h = 1.0 / 64.0;
        let n = 129;
        let zero = Sampled { step: h, values: vec![ZERO; n] };
        let mut noisy = zero.clone();
        noisy.values[64] = c(1e-3, 0.0);
        let r = residual_norm(&spec, c(0.0, 0.0), &noisy, &zero).unwrap();
        // Central weight of the fourth-order second difference is 5/2.
        assert!((r - 2.5e-3 / (h * h)).abs() < 1e-9 * r);
    }

    #[test]
    fn exponential_example_ratio_is_half() {
        let grid = RGrid { length: 40.0, step: 1.0 / 64.0, support: 40.0 };
        let n = 40 * 64 + 1;
        let u: Vec<C64> = (0..n).map(|i| c((-(i as f64) / 64.0).exp(), 0.0)).collect();
        let r = weighted_r_ratio(c(1.0, 0.0), 0.0, grid, &u, RBoundOptions::default());
        assert!((r - 0.5).abs() < 1e-8);
        let zero = vec![ZERO; n];
        assert_eq!(weighted_r_ratio(c(1.0, 0.0), 0.0, grid, &zero, RBoundOptions::default()), 0.0);
    }

    #[test]
    fn inverse_conjugation_breaks_the_bound() {
        // (1+t)^{−τ} R (1+s)^{τ} is unbounded: the constant function on
        // [0, 20] already exceeds 1/Re λ.
        let grid = RGrid { length: 40.0, step: 1.0 / 32.0, support: 20.0 };
        let n = 40 * 32 + 1;
        let u: Vec<C64> = (0..n).map(|i| if i as f64 / 32.0 <= 20.0 { c(1.0, 0.0) } else { ZERO }).collect();
        let literal = conjugated_ratio(c(0.5, 0.0), 2.0, grid, &u, Norm::L2, false, Conjugation::Inverse);
        assert!(literal > 2.0 * 2.0, "ratio {literal}");
        let weighted = conjugated_ratio(c(0.5, 0.0), 2.0, grid, &u, Norm::L2, false, Conjugation::Weighted);
        assert!(weighted <= 2.0);
    }

    #[test]
    fn r_power_matches_repeated_application() {
        let h = 1.0 / 128.0;
        let n = 12 * 128 + 1;
        let u: Vec<C64> = (0..n).map(|i| c(smooth_bump(i as f64 * h, 1.0, 6.0), 0.0)).collect();
        let lambda = c(0.7, 1.3);
        let mut repeated = u.clone();
        for m in 1..=3 {
            repeated = apply_r(lambda, h, &repeated);
            let direct = apply_r_power_direct(lambda, m, h, &u);
            let err = repeated.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-6, "m = {m}: {err}");
        }
    }

    #[test]
    fn bound_check_runs_deterministically() {
        let a = weighted_r_bound_check(c(1.0, 0.0), 1.0, RGrid::default(), 10, RBoundOptions::default()).unwrap();
        let b = weighted_r_bound_check(c(1.0, 0.0), 1.0, RGrid::default(), 10, RBoundOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.pass && a.max_ratio > 0.0);
        let s = weighted_r_bound_check(c(0.0, 1.0), 1.0, RGrid::default(), 10, RBoundOptions::default()).unwrap();
        assert!(s.shifted && s.bound == 2.0 && s.pass);
    }

    #[test]
    fn kernel_terms_for_free_hill() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let d = decompose_resolvent_kernel(&spec, c(PI * PI / 4.0, 0.0), 64, DEFAULT_TOL).unwrap();
        assert_eq!(d.terms.len(), 2);
        assert!(d.terms.iter().all(|t| t.k == 0));
        let mut ims: Vec<f64> = d.terms.iter().map(|t| t.lambda_alpha.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + PI / 2.0).abs() < 1e-8 && (ims[1] - PI / 2.0).abs() < 1e-8);

        let d = decompose_resolvent_kernel(&spec, c(0.0, 0.0), 64, DEFAULT_TOL).unwrap();
        let ks: Vec<usize> = d.terms.iter().map(|t| t.k).collect();
        assert!(ks.contains(&0) && ks.contains(&1));
        for (i, j) in [(0, 5), (3, 70), (10, 200)] {
            assert!((d.reconstruct(i, j) - d.direct(i, j).unwrap()).norm() < 1e-6);
        }
        assert!(d.periodicity_defect() < 1e-6);
    }
}
