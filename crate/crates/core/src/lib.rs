//! Floquet analysis of ordinary differential operators with periodic
//! coefficients and decaying perturbations.

pub mod error;
pub mod discretize;
pub mod expr;
pub mod floquet;
pub mod hill;
pub mod io;
pub mod linalg;
pub mod periodic_ode;
pub mod perturbation;
pub mod resolvent;
pub mod stencil;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};

/// Complex number in its JSON form `{"re": .., "im": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for Complex {
    fn from(z: C64) -> Self {
        Complex { re: z.re, im: z.im }
    }
}

impl From<Complex> for C64 {
    fn from(z: Complex) -> Self {
        C64::new(z.re, z.im)
    }
}

/// Non-fatal diagnostics attached to results.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// A multiplicator lies on the negative real axis, where the principal
    /// logarithm is discontinuous.
    BranchAmbiguity { eigenvalue: Complex },
    /// Two band edges fell into one scan cell and were recovered from the
    /// extremum of the discriminant.
    ResolutionTooCoarse { lambda_lo: f64, lambda_hi: f64 },
    /// The basis used to split the kernel into Jordan blocks is poorly
    /// conditioned.
    IllConditionedSimilarity { condition: f64 },
}

/// Serializes [`C64`] fields as `{"re": .., "im": ..}`.
pub(crate) mod serde_c64 {
    use super::{Complex, C64};
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        Complex::from(*z).serialize(s)
    }

    pub mod vec {
        use super::{Complex, C64};
        use serde::{Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|z| Complex::from(*z)).collect::<Vec<_>>().serialize(s)
        }
    }
}
