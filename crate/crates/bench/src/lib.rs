//! Shared fixtures for the benchmarks.

use floquet_core::periodic_ode::OperatorSpec;
use floquet_core::perturbation::{Domain, PerturbationSpec};
use floquet_core::CMatrix;
use floquet_core::C64;

pub fn cos_hill(amplitude: f64) -> OperatorSpec {
    OperatorSpec::hill(&format!("{amplitude}*cos(2*pi*t)"), 1.0).expect("valid operator")
}

pub fn decaying_perturbation() -> PerturbationSpec {
    PerturbationSpec::parse(
        2,
        &["(1+t)^(-3)", "0", "0"],
        &["0.1*exp(-(s-t))*(1+t)^(-3)", "0", "0"],
        2.0,
        Domain::HalfLine,
        true,
    )
    .expect("valid perturbation")
}

/// Deterministic, well-conditioned `n × n` test matrix.
pub fn test_matrix(n: usize) -> CMatrix {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let mut m = CMatrix::from_fn(n, n, |_, _| C64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = C64::new(0.3 * next(), 0.3 * next()) + if i == j { C64::new(1.5, 0.0) } else { C64::new(0.0, 0.0) };
        }
    }
    m
}
