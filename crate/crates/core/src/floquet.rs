//! Multiplicators, their location relative to the unit circle, and the
//! Floquet factorization `U(t) = F(t) exp(tΓ)`.

use serde::Serialize;

use crate::error::Result;
use crate::linalg::{self, matrix_exp, matrix_log, CMatrix, ClusterOptions, MatrixLog, C64};
use crate::periodic_ode::{matriciant_samples, OperatorSpec};
use crate::Warning;

pub const DEFAULT_EPSILON_CIRCLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Inside,
    OnCircle,
    Outside,
}

impl Location {
    pub fn of(rho: C64, epsilon_circle: f64) -> Location {
        let r = rho.norm();
        if (r - 1.0).abs() <= epsilon_circle {
            Location::OnCircle
        } else if r < 1.0 {
            Location::Inside
        } else {
            Location::Outside
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Multiplicator {
    #[serde(with = "crate::serde_c64")]
    pub rho: C64,
    pub algebraic_mult: usize,
    pub geometric_mult: usize,
    pub block_orders: Vec<usize>,
    pub location: Location,
    /// `|ρ| − 1`.
    pub distance_to_circle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicatorSet {
    pub entries: Vec<Multiplicator>,
    pub epsilon_circle: f64,
    /// Largest Jordan block order among unimodular multiplicators, 0 if
    /// there are none.
    pub l: usize,
}

impl MultiplicatorSet {
    pub fn any_at(&self, location: Location) -> bool {
        self.entries.iter().any(|e| e.location == location)
    }

    pub fn all_unimodular(&self) -> bool {
        self.entries.iter().all(|e| e.location == Location::OnCircle)
    }
}

pub fn classify_multiplicators(u: &CMatrix, epsilon_circle: f64) -> Result<MultiplicatorSet> {
    let clusters = linalg::spectral_clusters(u, ClusterOptions::default())?;
    let entries: Vec<Multiplicator> = clusters
        .into_iter()
        .map(|c| Multiplicator {
            rho: c.value,
            algebraic_mult: c.jordan.algebraic_mult,
            geometric_mult: c.jordan.geometric_mult,
            location: Location::of(c.value, epsilon_circle),
            distance_to_circle: c.value.norm() - 1.0,
            block_orders: c.jordan.block_orders,
        })
        .collect();
    let l = entries
        .iter()
        .filter(|e| e.location == Location::OnCircle)
        .map(|e| e.block_orders.first().copied().unwrap_or(0))
        .max()
        .unwrap_or(0);
    Ok(MultiplicatorSet {
        entries,
        epsilon_circle,
        l,
    })
}

pub fn max_unimodular_jordan_order(u: &CMatrix, epsilon_circle: f64) -> Result<usize> {
    Ok(classify_multiplicators(u, epsilon_circle)?.l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HalflineVerdict {
    InverseExists,
    NoInverse,
}

/// On the half-line a multiplicator inside the unit circle gives a decaying
/// solution, so `A − λ` has no inverse there.
pub fn halfline_invertibility(ms: &MultiplicatorSet) -> HalflineVerdict {
    if ms.any_at(Location::Inside) {
        HalflineVerdict::NoInverse
    } else {
        HalflineVerdict::InverseExists
    }
}

/// On the whole line `λ` is in the spectrum iff some multiplicator is
/// unimodular.
pub fn wholeline_spectrum_membership(ms: &MultiplicatorSet) -> bool {
    ms.any_at(Location::OnCircle)
}

#[derive(Debug, Clone)]
pub struct FloquetDecomposition {
    pub lambda: C64,
    pub period: f64,
    pub monodromy: CMatrix,
    /// `(1/T) log U(T)`.
    pub gamma: CMatrix,
    /// `(t, F(t))` with `F(t) = U(t) exp(−tΓ)`.
    pub f_samples: Vec<(f64, CMatrix)>,
    /// The invariant-subspace decomposition behind `log U(T)`.
    pub log: MatrixLog,
    pub warnings: Vec<Warning>,
}

impl FloquetDecomposition {
    /// `‖F(T) − I‖_max`, evaluated from the monodromy directly.
    pub fn periodicity_defect(&self) -> Result<f64> {
        let n = self.monodromy.rows();
        let f_end = &self.monodromy * &matrix_exp(&self.gamma.scale_real(-self.period))?;
        Ok((&f_end - &CMatrix::identity(n)).max_abs())
    }
}

/// Floquet factorization at the sample times `ts` (sorted, within
/// `[0, T]`).
pub fn floquet_decomposition(spec: &OperatorSpec, lambda: C64, ts: &[f64], tol: f64) -> Result<FloquetDecomposition> {
    let period = spec.period();
    let matriciant = matriciant_samples(spec, lambda, ts, tol)?;
    let u_end = matriciant.monodromy;
    let log = matrix_log(&u_end, linalg::default_cluster_radius(&u_end))?;
    let gamma = log.value.scale_real(1.0 / period);
    let mut f_samples = Vec::with_capacity(matriciant.samples.len());
    for (t, u) in matriciant.samples {
        let f = &u * &matrix_exp(&gamma.scale_real(-t))?;
        f_samples.push((t, f));
    }
    Ok(FloquetDecomposition {
        lambda,
        period,
        monodromy: u_end,
        gamma,
        f_samples,
        warnings: log.warnings.clone(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic_ode::{monodromy, DEFAULT_TOL};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn free_monodromy(lambda: f64) -> CMatrix {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        monodromy(&spec, c(lambda, 0.0), DEFAULT_TOL).unwrap().monodromy
    }

    #[test]
    fn shear_is_order_two_on_circle() {
        let ms = classify_multiplicators(&CMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 1.0]]), 1e-6).unwrap();
        assert_eq!(ms.entries.len(), 1);
        let e = &ms.entries[0];
        assert_eq!((e.algebraic_mult, e.geometric_mult), (2, 1));
        assert_eq!(e.block_orders, vec![2]);
        assert_eq!(e.location, Location::OnCircle);
        assert_eq!(ms.l, 2);
    }

    #[test]
    fn free_hill_examples() {
        let ms = classify_multiplicators(&free_monodromy(PI * PI / 4.0), 1e-6).unwrap();
        assert_eq!(ms.entries.len(), 2);
        assert!(ms.entries.iter().all(|e| e.location == Location::OnCircle && e.algebraic_mult == 1));
        assert_eq!(ms.l, 1);
        assert_eq!(halfline_invertibility(&ms), HalflineVerdict::InverseExists);

        let ms = classify_multiplicators(&free_monodromy(-1.0), 1e-6).unwrap();
        let mut locs: Vec<_> = ms.entries.iter().map(|e| (e.rho.re, e.location)).collect();
        locs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((locs[0].0 - (-1f64).exp()).abs() < 1e-8 && locs[0].1 == Location::Inside);
        assert!((locs[1].0 - 1f64.exp()).abs() < 1e-8 && locs[1].1 == Location::Outside);
        assert_eq!(ms.l, 0);
        assert_eq!(halfline_invertibility(&ms), HalflineVerdict::NoInverse);
        assert!(!wholeline_spectrum_membership(&ms));

        let ms = classify_multiplicators(&free_monodromy(0.0), 1e-6).unwrap();
        assert_eq!(ms.l, 2);
        assert_eq!(halfline_invertibility(&ms), HalflineVerdict::InverseExists);

        assert!(wholeline_spectrum_membership(&classify_multiplicators(&free_monodromy(4.0), 1e-6).unwrap()));
    }

    #[test]
    fn complex_lambda_is_off_the_spectrum() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let u = monodromy(&spec, c(2.0, 3.0), DEFAULT_TOL).unwrap().monodromy;
        let ms = classify_multiplicators(&u, 1e-6).unwrap();
        assert!(!wholeline_spectrum_membership(&ms));
        let product: C64 = ms.entries.iter().map(|e| e.rho).product();
        assert!((product - c(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn decomposition_at_minus_identity_uses_upper_branch() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let d = floquet_decomposition(&spec, c(PI * PI, 0.0), &[0.0, 0.5, 1.0], DEFAULT_TOL).unwrap();
        let expect = CMatrix::diag(&[c(0.0, PI), c(0.0, PI)]);
        assert!((&d.gamma - &expect).max_abs() < 1e-6);
        assert_eq!(d.f_samples[0].1, CMatrix::identity(2));
        assert!((&d.f_samples[2].1 - &CMatrix::identity(2)).max_abs() < 1e-8);
    }

    #[test]
    fn decomposition_reproduces_monodromy() {
        let spec = OperatorSpec::hill("0", 1.0).unwrap();
        let d = floquet_decomposition(&spec, c(-1.0, 0.0), &[1.0], DEFAULT_TOL).unwrap();
        let back = matrix_exp(&d.gamma).unwrap();
        assert!((&back - &d.monodromy).max_abs() < 1e-8);
        let spec = OperatorSpec::hill("cos(2*pi*t)", 1.0).unwrap();
        let d = floquet_decomposition(&spec, c(5.0, 0.0), &[1.0], DEFAULT_TOL).unwrap();
        assert!((&d.f_samples[0].1 - &CMatrix::identity(2)).max_abs() < 1e-6);
        assert!(d.periodicity_defect().unwrap() < 1e-6);
    }
}
