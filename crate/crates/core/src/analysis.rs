//! Per-symbol operation counts of the power-allocation algorithms, as
//! closed-form functions of `N`, `T` and the training-block length `M`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComplexityAlgorithm {
    PaMmse,
    JapaMmseSg,
    JapaMberSg,
    Opa,
    JapaMsrSg,
    PoPrSim,
}

impl ComplexityAlgorithm {
    pub const ALL: [ComplexityAlgorithm; 6] = [
        ComplexityAlgorithm::PaMmse,
        ComplexityAlgorithm::JapaMmseSg,
        ComplexityAlgorithm::JapaMberSg,
        ComplexityAlgorithm::Opa,
        ComplexityAlgorithm::JapaMsrSg,
        ComplexityAlgorithm::PoPrSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComplexityAlgorithm::PaMmse => "PA-MMSE",
            ComplexityAlgorithm::JapaMmseSg => "JAPA-MMSE-SG",
            ComplexityAlgorithm::JapaMberSg => "JAPA-MBER-SG",
            ComplexityAlgorithm::Opa => "OPA",
            ComplexityAlgorithm::JapaMsrSg => "JAPA-MSR-SG",
            ComplexityAlgorithm::PoPrSim => "PO-PR-SIM",
        }
    }
}

impl fmt::Display for ComplexityAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComplexityAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ComplexityAlgorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm '{s}' for complexity counts")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityReport {
    pub algorithm: ComplexityAlgorithm,
    pub multiplications: u64,
    pub additions: u64,
    pub n: u64,
    pub t: u64,
    pub m: u64,
}

/// Multiplications and additions per received symbol.
pub fn complexity_counts(algorithm: ComplexityAlgorithm, n: u64, t: u64, m: u64) -> Result<ComplexityReport> {
    if n == 0 || t == 0 {
        return Err(Error::InvalidConfig("N and T must be at least 1".into()));
    }
    if algorithm == ComplexityAlgorithm::JapaMberSg && m == 0 {
        return Err(Error::InvalidConfig("M must be at least 1".into()));
    }
    let t1 = t + 1;
    let (multiplications, additions) = match algorithm {
        ComplexityAlgorithm::PaMmse => (
            (t1 * n).pow(6) + t1 * n + 8 * t1 * n,
            7 * t1 * n + 2,
        ),
        ComplexityAlgorithm::JapaMmseSg => ((7 * t + 5) * n, 4 * t1 * n),
        ComplexityAlgorithm::JapaMberSg => ((m + 1) * t1 * n + m, (2 * m + 1) * t1 * n),
        ComplexityAlgorithm::Opa => (n.pow(4) + 2 * n * n + n * n * t * t, 2 * n * t - 1),
        ComplexityAlgorithm::JapaMsrSg => (7 * t1 * n + n + 1, 7 * t1 * n + n + 2),
        ComplexityAlgorithm::PoPrSim => (n.pow(4) + 2 * n * n, 2 * n * t),
    };
    Ok(ComplexityReport { algorithm, multiplications, additions, n, t, m })
}
