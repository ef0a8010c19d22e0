//! JSON file formats for operator and perturbation specs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic_ode::OperatorSpec;
use crate::perturbation::{Domain, PerturbationSpec};

/// `{"order": n, "period": T, "coefficients": [a_0, …, a_n]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFile {
    pub order: usize,
    pub period: f64,
    pub coefficients: Vec<String>,
}

/// `{"order": n, "b": [..], "k": [..], "delta": δ, "domain": .., "zero_below_diagonal": ..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationFile {
    pub order: usize,
    pub b: Vec<String>,
    pub k: Vec<String>,
    pub delta: f64,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    #[serde(default)]
    pub zero_below_diagonal: bool,
}

fn default_domain() -> Domain {
    Domain::HalfLine
}

impl OperatorFile {
    pub fn build(&self) -> Result<OperatorSpec> {
        let refs: Vec<&str> = self.coefficients.iter().map(String::as_str).collect();
        Ok(OperatorSpec::parse(self.order, self.period, &refs)?)
    }
}

impl PerturbationFile {
    pub fn build(&self) -> Result<PerturbationSpec> {
        let b: Vec<&str> = self.b.iter().map(String::as_str).collect();
        let k: Vec<&str> = self.k.iter().map(String::as_str).collect();
        PerturbationSpec::parse(self.order, &b, &k, self.delta, self.domain, self.zero_below_diagonal)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn decode<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("invalid {what} spec: {e}")))
}

pub fn operator_from_json(text: &str) -> Result<OperatorSpec> {
    decode::<OperatorFile>(text, "operator")?.build()
}

pub fn perturbation_from_json(text: &str) -> Result<PerturbationSpec> {
    decode::<PerturbationFile>(text, "perturbation")?.build()
}

pub fn load_operator(path: impl AsRef<Path>) -> Result<OperatorSpec> {
    operator_from_json(&read(path.as_ref())?)
}

pub fn load_perturbation(path: impl AsRef<Path>) -> Result<PerturbationSpec> {
    perturbation_from_json(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_round_trip() {
        let op = operator_from_json(r#"{"order": 2, "period": 1, "coefficients": ["cos(2*pi*t)", "0", "1"]}"#).unwrap();
        assert_eq!(op.order(), 2);
        assert!((op.coefficients_at(0.0).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(operator_from_json(r#"{"order": 2, "period": 1}"#).unwrap_err().is_validation());
        assert!(operator_from_json(r#"{"order": 2, "period": 1, "coefficients": ["0", "0", "2"]}"#)
            .unwrap_err()
            .is_validation());
        assert!(operator_from_json(r#"{"order": 1, "period": 1, "coefficients": ["0", "1"], "x": 1}"#).is_err());
        assert!(load_operator("/nonexistent/op.json").unwrap_err().is_validation());
    }

    #[test]
    fn perturbation_defaults() {
        let p = perturbation_from_json(r#"{"order": 2, "b": ["(1+t)^(-3)", "0", "0"], "k": ["0", "0", "0"], "delta": 2}"#).unwrap();
        assert_eq!(p.domain(), Domain::HalfLine);
        assert!(!p.zero_below_diagonal());
        assert!(perturbation_from_json(r#"{"order": 2, "b": ["0", "0", "1"], "k": ["0", "0", "0"], "delta": 2}"#).is_err());
    }
}
