//! Companion systems of periodic ODE operators and their matriciants.
//!
//! The eigenvalue equation `Σ a_j(t) (i d/dt)^j u = λu` with `a_n ≡ 1` is
//! written as `x' = A(t, λ) x` in derivative coordinates
//! `x = (u, u', …, u^{(n-1)})`.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr, ParseError, Var};
use crate::linalg::{CMatrix, C64};

/// Default local error target of the integrator.
pub const DEFAULT_TOL: f64 = 1e-10;

const PERIODICITY_SAMPLES: usize = 64;
const BLOW_UP_NORM: f64 = 1e12;
const MIN_STEP_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("invalid operator: {0}")]
    InvalidSpec(String),
    #[error("coefficient a_{index}: {message}")]
    Parse { index: usize, message: String },
    #[error("coefficient a_{index} at t = {t}: {source}")]
    Domain {
        index: usize,
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("step size underflow at t = {t} (step {step:e}): {reason}")]
    StepUnderflow { t: f64, step: f64, reason: String },
}

/// Operator `Σ_{j=0}^{n} a_j(t) D^j`, `D = i d/dt`, with `T`-periodic real
/// coefficients and `a_n ≡ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    order: usize,
    period: f64,
    coefficients: Vec<Expr>,
    constants: Vec<Option<f64>>,
}

impl OperatorSpec {
    /// Validates order, period, `a_n ≡ 1`, absence of `s` and periodicity.
    pub fn new(order: usize, period: f64, coefficients: Vec<Expr>) -> Result<Self, OdeError> {
        if order == 0 {
            return Err(OdeError::InvalidSpec("order must be positive".into()));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(OdeError::InvalidSpec(format!("period must be positive, got {period}")));
        }
        if coefficients.len() != order + 1 {
            return Err(OdeError::InvalidSpec(format!(
                "expected {} coefficients for order {order}, got {}",
                order + 1,
                coefficients.len()
            )));
        }
        for (j, a) in coefficients.iter().enumerate() {
            if a.mentions(Var::S) {
                return Err(OdeError::InvalidSpec(format!("coefficient a_{j} must depend on t only")));
            }
        }
        let constants = coefficients.iter().map(Expr::constant_value).collect();
        let spec = OperatorSpec {
            order,
            period,
            coefficients,
            constants,
        };
        spec.validate_samples()?;
        Ok(spec)
    }

    pub fn parse(order: usize, period: f64, coefficients: &[&str]) -> Result<Self, OdeError> {
        let exprs = coefficients
            .iter()
            .enumerate()
            .map(|(index, src)| {
                Expr::parse(src).map_err(|e: ParseError| OdeError::Parse {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(order, period, exprs)
    }

    /// Hill operator `D² + p = −d²/dt² + p`.
    pub fn hill(p: &str, period: f64) -> Result<Self, OdeError> {
        Self::parse(2, period, &[p, "0", "1"])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn coefficients(&self) -> &[Expr] {
        &self.coefficients
    }

    fn validate_samples(&self) -> Result<(), OdeError> {
        let n = self.order;
        let period = self.period;
        for k in 0..PERIODICITY_SAMPLES {
            let t = (k as f64 + 0.3819660112501051) * period / PERIODICITY_SAMPLES as f64;
            let a = self.coefficients_at(t)?;
            if (a[n] - 1.0).abs() > 1e-12 {
                return Err(OdeError::InvalidSpec(format!(
                    "leading coefficient a_{n} must be identically 1 (a_{n}({t}) = {})",
                    a[n]
                )));
            }
            let shifted = self.coefficients_at(t + period)?;
            for (j, (x, y)) in a.iter().zip(&shifted).enumerate() {
                if (x - y).abs() > 1e-10 * (1.0 + x.abs()) {
                    return Err(OdeError::InvalidSpec(format!(
                        "coefficient a_{j} is not {period}-periodic: a({t}) = {x}, a({}) = {y}",
                        t + period
                    )));
                }
            }
        }
        Ok(())
    }

    /// Coefficient values `a_0(t) … a_n(t)`.
    pub fn coefficients_at(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        self.coefficients
            .iter()
            .zip(&self.constants)
            .enumerate()
            .map(|(index, (a, c))| match c {
                Some(v) => Ok(*v),
                None => a.eval_t(t).map_err(|source| OdeError::Domain { index, t, source }),
            })
            .collect()
    }

    /// Whether every coefficient is constant.
    pub fn is_autonomous(&self) -> bool {
        self.constants.iter().all(Option::is_some)
    }
}

/// `i^k`.
pub fn i_pow(k: usize) -> C64 {
    match k % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

fn companion_from_values(a: &[f64], lambda: C64) -> CMatrix {
    let n = a.len() - 1;
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n - 1 {
        m[(k, k + 1)] = C64::new(1.0, 0.0);
    }
    let inv_in = C64::new(1.0, 0.0) / i_pow(n);
    m[(n - 1, 0)] += (lambda - a[0]) * inv_in;
    for (j, &aj) in a.iter().enumerate().take(n).skip(1) {
        m[(n - 1, j)] += -aj * i_pow(j) * inv_in;
    }
    m
}

/// Companion matrix in derivative coordinates.
pub fn companion_matrix(spec: &OperatorSpec, t: f64, lambda: C64) -> Result<CMatrix, OdeError> {
    Ok(companion_from_values(&spec.coefficients_at(t)?, lambda))
}

/// Companion matrix in the coordinates `(u, Du, …, D^{n-1}u)`, `D = i d/dt`:
/// `−i` on the superdiagonal, last row `(−i(λ − a_0), i a_1, …, i a_{n-1})`.
/// Similar to [`companion_matrix`] via `diag(i^k)`.
pub fn companion_matrix_dpower(spec: &OperatorSpec, t: f64, lambda: C64) -> Result<CMatrix, OdeError> {
    let a = spec.coefficients_at(t)?;
    let n = spec.order;
    let minus_i = C64::new(0.0, -1.0);
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n - 1 {
        m[(k, k + 1)] = minus_i;
    }
    m[(n - 1, 0)] += minus_i * (lambda - a[0]);
    for (j, &aj) in a.iter().enumerate().take(n).skip(1) {
        m[(n - 1, j)] += C64::new(0.0, aj);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IntegratorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    /// Sum of accepted local error estimates in the max norm, a crude bound
    /// on the accumulated error.
    pub local_error_bound: f64,
}

/// Fundamental matrix samples over one period.
#[derive(Debug, Clone)]
pub struct Matriciant {
    pub lambda: C64,
    pub samples: Vec<(f64, CMatrix)>,
    pub monodromy: CMatrix,
    /// `∫_0^T tr A(t, λ) dt`, integrated alongside `U`.
    pub trace_integral: C64,
    pub stats: IntegratorStats,
}

impl Matriciant {
    /// `|det U(T) − exp(∫ tr A)|`.
    pub fn liouville_defect(&self) -> f64 {
        let det = self.monodromy.det().unwrap_or(C64::new(f64::NAN, f64::NAN));
        (det - self.trace_integral.exp()).norm()
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// State `(U, ∫ tr A)` flattened; the trace integral is the last entry.
struct System<'a> {
    spec: &'a OperatorSpec,
    lambda: C64,
    n: usize,
}

impl System<'_> {
    fn rhs(&self, t: f64, y: &[C64], out: &mut [C64]) -> Result<(), OdeError> {
        let n = self.n;
        let a = self.spec.coefficients_at(t)?;
        let m = companion_from_values(&a, self.lambda);
        // Rows 0..n-1 shift up; only the last row is dense.
        for i in 0..n - 1 {
            for j in 0..n {
                out[i * n + j] = y[(i + 1) * n + j];
            }
        }
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += m[(n - 1, k)] * y[k * n + j];
            }
            out[(n - 1) * n + j] = acc;
        }
        out[n * n] = m.trace();
        Ok(())
    }
}

fn max_abs(y: &[C64]) -> f64 {
    y.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Integrates `U' = A(t, λ) U`, `U(0) = I`, over `[0, T]` recording `U` at
/// each of `ts` (sorted, within `[0, T]`).
pub fn matriciant_samples(spec: &OperatorSpec, lambda: C64, ts: &[f64], tol: f64) -> Result<Matriciant, OdeError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(OdeError::InvalidSpec(format!("tolerance must be positive, got {tol}")));
    }
    let period = spec.period;
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::InvalidSpec("sample times must be sorted".into()));
    }
    if ts.iter().any(|&t| !(0.0..=period).contains(&t)) {
        return Err(OdeError::InvalidSpec(format!("sample times must lie in [0, {period}]")));
    }
    if !(lambda.re.is_finite() && lambda.im.is_finite()) {
        return Err(OdeError::InvalidSpec("lambda must be finite".into()));
    }

    let n = spec.order;
    let dim = n * n + 1;
    let system = System { spec, lambda, n };
    let mut y = vec![C64::new(0.0, 0.0); dim];
    for i in 0..n {
        y[i * n + i] = C64::new(1.0, 0.0);
    }
    let to_matrix = |y: &[C64]| CMatrix::from_row_major(n, n, y[..n * n].to_vec());

    let mut samples = Vec::with_capacity(ts.len());
    let mut pending = ts.iter().copied().peekable();
    while let Some(&t) = pending.peek() {
        if t > 0.0 {
            break;
        }
        samples.push((t, CMatrix::identity(n)));
        pending.next();
    }

    let mut stats = IntegratorStats::default();
    let mut k: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); dim]; 7];
    let mut stage = vec![C64::new(0.0, 0.0); dim];
    let mut y5 = vec![C64::new(0.0, 0.0); dim];
    let mut t = 0.0;
    let mut h = period / 64.0;
    let h_min = MIN_STEP_REL * period;
    system.rhs(t, &y, &mut k[0])?;
    stats.rhs_evaluations += 1;

    while t < period {
        let target = pending.peek().copied().unwrap_or(period);
        let step = h.min(target - t);
        let lands_on_target = step >= target - t;
        if step < h_min && !lands_on_target {
            return Err(OdeError::StepUnderflow {
                t,
                step,
                reason: "step size control demands a step below 1e-14·T".into(),
            });
        }
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (r, a) in A[s].iter().enumerate().take(s) {
                    if *a != 0.0 {
                        acc += k[r][i] * (step * a);
                    }
                }
                stage[i] = acc;
            }
            system.rhs(t + C[s] * step, &stage, &mut k[s])?;
            stats.rhs_evaluations += 1;
        }
        // Stage 7 was evaluated at the fifth-order solution (FSAL).
        y5.copy_from_slice(&stage);
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut diff = C64::new(0.0, 0.0);
            for s in 0..7 {
                let w = B5[s] - B4[s];
                if w != 0.0 {
                    diff += k[s][i] * w;
                }
            }
            let scale = tol * (1.0 + y[i].norm().max(y5[i].norm()));
            err = err.max((diff * step).norm() / scale);
        }
        if !err.is_finite() {
            return Err(OdeError::StepUnderflow {
                t,
                step,
                reason: "non-finite state".into(),
            });
        }
        if err <= 1.0 {
            t = if lands_on_target { target } else { t + step };
            std::mem::swap(&mut y, &mut y5);
            k.swap(0, 6);
            stats.accepted_steps += 1;
            stats.local_error_bound += err * tol;
            if max_abs(&y[..n * n]) > BLOW_UP_NORM {
                return Err(OdeError::StepUnderflow {
                    t,
                    step,
                    reason: format!("matriciant norm exceeds {BLOW_UP_NORM:e}"),
                });
            }
            if lands_on_target {
                while let Some(&next) = pending.peek() {
                    if next > t {
                        break;
                    }
                    samples.push((next, to_matrix(&y)));
                    pending.next();
                }
            }
        } else {
            stats.rejected_steps += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        // A step shortened to hit a sample time says little about the
        // natural step size.
        if !(lands_on_target && err <= 1.0 && step < h) {
            h = step * factor;
        }
        if h < h_min && t < period {
            return Err(OdeError::StepUnderflow {
                t,
                step: h,
                reason: "step size control demands a step below 1e-14·T".into(),
            });
        }
    }

    Ok(Matriciant {
        lambda,
        monodromy: to_matrix(&y),
        trace_integral: y[n * n],
        samples,
        stats,
    })
}

/// Monodromy matrix `U(T)`.
pub fn monodromy(spec: &OperatorSpec, lambda: C64, tol: f64) -> Result<Matriciant, OdeError> {
    matriciant_samples(spec, lambda, &[], tol)
}

/// Fixed-step classical RK4 fundamental matrix at `t_end`, used as an
/// independent reference in tests.
pub fn rk4_fundamental(spec: &OperatorSpec, lambda: C64, t_end: f64, steps: usize) -> Result<CMatrix, OdeError> {
    let n = spec.order;
    let h = t_end / steps as f64;
    let mut u = CMatrix::identity(n);
    let mut t = 0.0;
    for _ in 0..steps {
        let a1 = companion_matrix(spec, t, lambda)?;
        let a2 = companion_matrix(spec, t + 0.5 * h, lambda)?;
        let a4 = companion_matrix(spec, t + h, lambda)?;
        let k1 = &a1 * &u;
        let k2 = &a2 * &(&u + &k1.scale_real(0.5 * h));
        let k3 = &a2 * &(&u + &k2.scale_real(0.5 * h));
        let k4 = &a4 * &(&u + &k3.scale_real(h));
        let incr = &(&k1 + &k2.scale_real(2.0)) + &(&k3.scale_real(2.0) + &k4);
        u = &u + &incr.scale_real(h / 6.0);
        t += h;
    }
    Ok(u)
}
