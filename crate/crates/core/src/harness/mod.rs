//! Monte Carlo experiment runner: BER versus SNR, feedback resolution,
//! sum rate and convergence, with results written as CSV.
//!
//! Every random draw is taken from a stream keyed by `(seed, point, trial,
//! purpose)`, so the algorithms under comparison see the same channels and
//! noise and the output does not depend on how trials are scheduled.

mod config;
mod output;
mod run;

pub use config::{apply_config_file, apply_config_str, apply_key, snr_range};
pub use output::{format_number, read_results, write_csv, write_results, CsvRow};
pub use run::{
    calibrate_noise, run_ber_vs_snr, run_convergence, run_experiment, run_feedback_bits, run_sum_rate,
    Calibration,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::japa::Algorithm;
use crate::model::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    BerVsSnr,
    FeedbackBits,
    SumRate,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BerVsSnr => "ber-vs-snr",
            ExperimentKind::FeedbackBits => "feedback-bits",
            ExperimentKind::SumRate => "sum-rate",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ber-vs-snr" | "ber" => Ok(ExperimentKind::BerVsSnr),
            "feedback-bits" | "feedback" => Ok(ExperimentKind::FeedbackBits),
            "sum-rate" | "sumrate" => Ok(ExperimentKind::SumRate),
            "convergence" => Ok(ExperimentKind::Convergence),
            other => Err(Error::InvalidConfig(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Payload detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Ml,
    Mmse,
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(Detector::Ml),
            "mmse" | "linear" => Ok(Detector::Mmse),
            other => Err(Error::InvalidConfig(format!("unknown detector '{other}'"))),
        }
    }
}

/// Step sizes `(μ, ν, τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub mu: f64,
    pub nu: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub algorithms: Vec<Algorithm>,
    /// Target received SNRs in dB, strictly increasing.
    pub snr_grid_db: Vec<f64>,
    /// Channel realizations per point (an upper bound when early stopping
    /// applies).
    pub trials: usize,
    /// Supervised adaptation blocks per realization.
    pub training_len: usize,
    /// Detected symbol vectors per realization.
    pub payload_len: usize,
    /// Stop a BER point once this many bit errors have accumulated.
    pub max_errors: u64,
    /// Realizations evaluated between early-stopping checks.
    pub chunk: usize,
    /// Payload vectors that must be seen before early stopping may apply.
    pub min_blocks: usize,
    pub detector: Detector,
    /// Training-block length `M` of the minimum-BER update.
    pub mber_window: usize,
    pub closed_form_iters: usize,
    /// Keep adapting on detected payload symbols.
    pub decision_directed: bool,
    pub feedback_bits: Vec<u32>,
    /// Variance of the additive feedback error.
    pub sigma_f: f64,
    /// Symbols per convergence run.
    pub symbols: usize,
    /// SNR of the convergence run in dB.
    pub snr_db: f64,
    /// Channels averaged when calibrating the noise level.
    pub calibration_channels: usize,
    /// Per-algorithm step sizes replacing the configuration defaults.
    pub step_overrides: BTreeMap<Algorithm, Steps>,
    pub output_path: Option<PathBuf>,
    pub cfg: SystemConfig,
}

impl ExperimentSpec {
    /// Defaults for an experiment kind at desk scale.
    pub fn new(experiment: ExperimentKind) -> Self {
        let algorithms = match experiment {
            ExperimentKind::FeedbackBits => vec![Algorithm::MberSg],
            _ => vec![Algorithm::Epa, Algorithm::MmseSg, Algorithm::MberSg, Algorithm::MsrSg],
        };
        let snr_grid_db = match experiment {
            ExperimentKind::SumRate => (0..=5).map(|i| 4.0 * i as f64).collect(),
            _ => (0..=6).map(|i| 2.0 * i as f64).collect(),
        };
        let mut step_overrides = BTreeMap::new();
        step_overrides.insert(Algorithm::MmseSg, Steps { mu: 0.05, nu: 0.006, tau: 0.006 });
        let mut cfg = SystemConfig::default();
        if experiment == ExperimentKind::Convergence {
            // cold start: a wide kernel keeps the filter gradient alive on
            // samples that start on the wrong side of the threshold
            cfg.kernel_scale = 10.0;
            step_overrides.insert(Algorithm::MberSg, Steps { mu: 3.0, nu: 0.02, tau: 0.02 });
        } else {
            step_overrides.insert(Algorithm::MberSg, Steps { mu: 1.0, nu: 0.02, tau: 0.02 });
        }
        step_overrides.insert(Algorithm::MsrSg, Steps { mu: 0.05, nu: 0.05, tau: 0.05 });
        Self {
            experiment,
            algorithms,
            snr_grid_db,
            trials: 2000,
            training_len: 200,
            payload_len: 50,
            max_errors: 100,
            chunk: 50,
            min_blocks: 10_000,
            detector: Detector::Ml,
            mber_window: 10,
            closed_form_iters: 5,
            decision_directed: false,
            feedback_bits: vec![2, 3, 4],
            sigma_f: 1e-4,
            symbols: 200,
            snr_db: 10.0,
            calibration_channels: 200,
            step_overrides,
            output_path: None,
            cfg,
        }
    }

    /// Step sizes used by `algorithm`.
    pub fn steps_for(&self, algorithm: Algorithm) -> Steps {
        self.step_overrides.get(&algorithm).copied().unwrap_or(Steps {
            mu: self.cfg.mu,
            nu: self.cfg.nu,
            tau: self.cfg.tau,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.cfg.validate()?;
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.chunk == 0 {
            return bad("chunk must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        if self.experiment != ExperimentKind::Convergence {
            if self.snr_grid_db.is_empty() {
                return bad("SNR grid is empty".into());
            }
            if self.snr_grid_db.iter().any(|x| !x.is_finite()) {
                return bad("SNR grid contains a non-finite value".into());
            }
            if self.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
                return bad("SNR grid must be strictly increasing".into());
            }
        } else if !self.snr_db.is_finite() {
            return bad("convergence SNR must be finite".into());
        }
        if self.mber_window == 0 {
            return bad("mber_window must be >= 1".into());
        }
        if matches!(self.experiment, ExperimentKind::BerVsSnr | ExperimentKind::FeedbackBits)
            && self.payload_len == 0
        {
            return bad("payload_len must be >= 1".into());
        }
        if self.experiment == ExperimentKind::Convergence && self.symbols == 0 {
            return bad("symbols must be >= 1".into());
        }
        if self.experiment == ExperimentKind::FeedbackBits {
            if self.feedback_bits.is_empty() {
                return bad("feedback experiment needs at least one bit width".into());
            }
            if self.feedback_bits.iter().any(|b| !(1..=16).contains(b)) {
                return bad("feedback bit widths must be in 1..=16".into());
            }
            if self.cfg.relays != 1 {
                return bad("feedback experiment is defined for a single relay".into());
            }
        }
        if !(self.sigma_f >= 0.0 && self.sigma_f.is_finite()) {
            return bad(format!("sigma_f must be >= 0, got {}", self.sigma_f));
        }
        if self.calibration_channels == 0 {
            return bad("calibration_channels must be >= 1".into());
        }
        for (alg, s) in &self.step_overrides {
            for v in [s.mu, s.nu, s.tau] {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(format!("step sizes for {alg} must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// One point of a result curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub algorithm: String,
    /// SNR in dB, bit width or symbol index.
    pub x: f64,
    /// BER, sum rate or windowed BER.
    pub y: f64,
    pub y_stderr: f64,
    /// Channel realizations that contributed.
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl ResultTable {
    /// Points of one curve, ordered by `x`.
    pub fn curve(&self, algorithm: &str) -> Vec<&CurvePoint> {
        let mut pts: Vec<&CurvePoint> = self.points.iter().filter(|p| p.algorithm == algorithm).collect();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        pts
    }

    /// Sorts rows by algorithm name, then `x`.
    pub fn sort(&mut self) {
        self.points
            .sort_by(|a, b| a.algorithm.cmp(&b.algorithm).then(a.x.total_cmp(&b.x)));
    }
}

/// SNR at which a BER curve crosses `target`, interpolating `log10(BER)`
/// linearly in dB. `None` if the curve never reaches the target.
pub fn required_snr(curve: &[&CurvePoint], target: f64) -> Option<f64> {
    let lt = target.log10();
    for w in curve.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.y >= target && b.y <= target {
            if b.y <= 0.0 {
                return Some(b.x);
            }
            let (la, lb) = (a.y.log10(), b.y.log10());
            if la == lb {
                return Some(a.x);
            }
            return Some(a.x + (lt - la) * (b.x - a.x) / (lb - la));
        }
    }
    curve.first().filter(|p| p.y <= target).map(|p| p.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip() {
        for k in [
            ExperimentKind::BerVsSnr,
            ExperimentKind::FeedbackBits,
            ExperimentKind::SumRate,
            ExperimentKind::Convergence,
        ] {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("waterfall".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn spec_validation() {
        let spec = ExperimentSpec::new(ExperimentKind::BerVsSnr);
        assert!(spec.validate().is_ok());
        let mut bad = spec.clone();
        bad.trials = 0;
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.snr_grid_db = vec![0.0, 5.0, 5.0];
        assert!(bad.validate().is_err());
        let mut bad = ExperimentSpec::new(ExperimentKind::FeedbackBits);
        bad.feedback_bits = vec![0];
        assert!(bad.validate().is_err());
    }

    fn pt(x: f64, y: f64) -> CurvePoint {
        CurvePoint { algorithm: "a".into(), x, y, y_stderr: 0.0, trials: 1 }
    }

    #[test]
    fn crossing_interpolation() {
        let pts = [pt(0.0, 1e-1), pt(10.0, 1e-3), pt(20.0, 1e-5)];
        let refs: Vec<&CurvePoint> = pts.iter().collect();
        assert!((required_snr(&refs, 1e-2).unwrap() - 5.0).abs() < 1e-12);
        assert!((required_snr(&refs, 1e-4).unwrap() - 15.0).abs() < 1e-12);
        assert!(required_snr(&refs, 1e-6).is_none());
    }
}
