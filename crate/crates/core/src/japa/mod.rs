//! Joint adaptive power allocation: the closed-form alternating MMSE design
//! and the three stochastic-gradient optimizers (MMSE, minimum BER, maximum
//! sum rate), plus the power normalization they share and the BER
//! expressions used by the minimum-BER criterion.
//!
//! Every public step is a pure `state -> state` transition that ends with
//! [`normalize_power`], so the returned allocation always meets both
//! budgets with equality.

mod ber;
mod closed_form;
mod mber;
mod mmse;
mod msr;

pub use ber::{kernel_density_ber, kernel_width, q_function, theoretical_ber, theoretical_ber_parts, BerEstimate};
pub use closed_form::{mmse_closed_form_iterate, total_mse};
pub use mber::{mber_gradients, sg_mber_step, MberGradients};
pub use mmse::{mmse_gradients, sg_mmse_step, MmseGradients};
pub use msr::{msr_gradients, sg_msr_step, MsrGradients};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{CMatrix, PowerAllocation, SystemConfig};
use crate::transceiver::ReceivedBlock;

/// Power-allocation schemes known to the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Epa,
    MmseClosedForm,
    MmseSg,
    MberSg,
    MsrSg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Epa,
        Algorithm::MmseClosedForm,
        Algorithm::MmseSg,
        Algorithm::MberSg,
        Algorithm::MsrSg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Epa => "EPA",
            Algorithm::MmseClosedForm => "MMSE-closed-form",
            Algorithm::MmseSg => "JAPA-MMSE-SG",
            Algorithm::MberSg => "JAPA-MBER-SG",
            Algorithm::MsrSg => "JAPA-MSR-SG",
        }
    }

    pub fn is_stochastic_gradient(self) -> bool {
        matches!(self, Algorithm::MmseSg | Algorithm::MberSg | Algorithm::MsrSg)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm '{s}'")))
    }
}

/// Receive filter, allocation and step sizes carried between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// `(T+1)N×N`, column `j` is `w_j`.
    pub w: CMatrix,
    pub pa: PowerAllocation,
    pub mu: f64,
    pub nu: f64,
    pub tau: f64,
    pub iter: u64,
}

impl OptimizerState {
    /// Cold start: every `w_j` is the `j`-th unit vector repeated over the
    /// `T+1` slots of the stacked vector, and all allocation entries start
    /// at one before normalization.
    pub fn initial(cfg: &SystemConfig) -> Result<Self> {
        let rows = cfg.stacked_len();
        let w = CMatrix::from_fn(rows, cfg.n, |r, c| {
            if r % cfg.n == c {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let ones = PowerAllocation {
            source: vec![1.0; cfg.n],
            relays: vec![vec![1.0; cfg.b]; cfg.relays],
        };
        Ok(Self {
            w,
            pa: normalize_power(&ones, cfg.p_t, cfg.p_r)?,
            mu: cfg.mu,
            nu: cfg.nu,
            tau: cfg.tau,
            iter: 0,
        })
    }

    pub fn with_steps(mut self, mu: f64, nu: f64, tau: f64) -> Self {
        self.mu = mu;
        self.nu = nu;
        self.tau = tau;
        self
    }

    fn check_finite(&self, algorithm: Algorithm) -> Result<()> {
        let w_ok = self.w.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if w_ok && self.pa.is_finite() {
            return Ok(());
        }
        let detail = if w_ok {
            format!("non-finite power allocation (nu={}, tau={})", self.nu, self.tau)
        } else {
            format!("non-finite receive filter (mu={})", self.mu)
        };
        Err(Error::Divergence {
            algorithm: algorithm.name().to_string(),
            iteration: self.iter,
            detail,
        })
    }
}

/// `M` received vectors with known BPSK symbols.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingBlock {
    pub samples: Vec<ReceivedBlock>,
}

impl TrainingBlock {
    pub fn new(samples: Vec<ReceivedBlock>) -> Result<Self> {
        let block = Self { samples };
        block.validate()?;
        Ok(block)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidConfig("training block must hold M >= 1 samples".into()));
        }
        let bpsk = self
            .samples
            .iter()
            .flat_map(|b| &b.s_true)
            .all(|&s| s == 1.0 || s == -1.0);
        if !bpsk {
            return Err(Error::InvalidConfig("training symbols must be +1 or -1".into()));
        }
        Ok(())
    }
}

/// Rescales `A_S` to `‖A_S‖_F² = P_T` and all relay matrices by one common
/// factor so that `Σ_k ‖A_k‖_F² = P_R`.
pub fn normalize_power(pa: &PowerAllocation, p_t: f64, p_r: f64) -> Result<PowerAllocation> {
    let es = pa.source_energy();
    let er = pa.relay_energy();
    if !(es > 0.0 && es.is_finite()) {
        return Err(Error::DegenerateAllocation("source allocation is all zero"));
    }
    if !(er > 0.0 && er.is_finite()) {
        return Err(Error::DegenerateAllocation("relay allocation is all zero"));
    }
    let gs = (p_t / es).sqrt();
    let gr = (p_r / er).sqrt();
    Ok(PowerAllocation {
        source: pa.source.iter().map(|a| a * gs).collect(),
        relays: pa
            .relays
            .iter()
            .map(|r| r.iter().map(|a| a * gr).collect())
            .collect(),
    })
}

/// Power normalization after an update. Entries are signed amplitudes, so
/// a sign change is a phase flip the receiver absorbs. The vectors are
/// prescaled by their peak so huge steps do not overflow the energy.
pub(crate) fn project(pa: &PowerAllocation, cfg: &SystemConfig) -> Result<PowerAllocation> {
    if !pa.is_finite() {
        return Err(Error::DegenerateAllocation("non-finite allocation"));
    }
    let peak = |v: &mut dyn Iterator<Item = &f64>| v.fold(0.0f64, |m, a| m.max(a.abs()));
    let ps = peak(&mut pa.source.iter());
    let pr = peak(&mut pa.relays.iter().flatten());
    let scaled = PowerAllocation {
        source: pa.source.iter().map(|a| if ps > 0.0 { a / ps } else { *a }).collect(),
        relays: pa
            .relays
            .iter()
            .map(|r| r.iter().map(|a| if pr > 0.0 { a / pr } else { *a }).collect())
            .collect(),
    };
    normalize_power(&scaled, cfg.p_t, cfg.p_r)
}

/// Derivative of the relay part of `r` with respect to `a_kj`, as the pair
/// (relay column `g_eq_k[:, j]`, scalar `f_kj^T A_S s`).
pub(crate) fn relay_input(
    channels: &crate::model::ChannelSet,
    pa: &PowerAllocation,
    k: usize,
    j: usize,
    s: &[f64],
) -> Complex64 {
    let f = &channels.f_sr[k];
    (0..f.ncols())
        .map(|c| f[(j, c)] * pa.source[c] * s[c])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{epa_init, stream_rng};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn normalize_examples() {
        let pa = PowerAllocation { source: vec![2.0, 0.0], relays: vec![vec![1.0, 1.0]] };
        let out = normalize_power(&pa, 1.0, 2.0).unwrap();
        assert_eq!(out.source, vec![1.0, 0.0]);
        assert!(out.relays[0].iter().all(|a| (a - 1.0).abs() < 1e-15));

        let cfg = SystemConfig::default();
        let epa = epa_init(&cfg);
        let again = normalize_power(&epa, cfg.p_t, cfg.p_r).unwrap();
        for (a, b) in epa.to_flat().iter().zip(again.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero_src = PowerAllocation { source: vec![0.0, 0.0], relays: vec![vec![1.0, 1.0]] };
        assert!(matches!(normalize_power(&zero_src, 1.0, 1.0), Err(Error::DegenerateAllocation(_))));
        let zero_rel = PowerAllocation { source: vec![1.0, 0.0], relays: vec![vec![0.0, 0.0]] };
        assert!(matches!(normalize_power(&zero_rel, 1.0, 1.0), Err(Error::DegenerateAllocation(_))));
    }

    #[test]
    fn normalize_preserves_direction_across_relays() {
        let mut rng = stream_rng(21, &[]);
        for _ in 0..100 {
            let pa = PowerAllocation {
                source: (0..2).map(|_| rng.gen_range(0.01..3.0)).collect(),
                relays: (0..2).map(|_| (0..2).map(|_| rng.gen_range(0.01..3.0)).collect()).collect(),
            };
            let out = normalize_power(&pa, 1.5, 0.7).unwrap();
            assert!(out.constraint_error(1.5, 0.7) < 1e-12);
            let a = pa.to_flat();
            let b = out.to_flat();
            assert!((b[1] / b[0] - a[1] / a[0]).abs() < 1e-12 * (a[1] / a[0]));
            for i in 3..6 {
                assert!((b[i] / b[2] - a[i] / a[2]).abs() < 1e-12 * (a[i] / a[2]).max(1.0));
            }
        }
    }

    #[test]
    fn initial_state_follows_cold_start() {
        let cfg = SystemConfig::default();
        let st = OptimizerState::initial(&cfg).unwrap();
        for (a, b) in st.pa.to_flat().iter().zip(epa_init(&cfg).to_flat()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(st.w.shape(), (6, 2));
        assert_eq!(st.w[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(st.w[(2, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(st.w[(1, 0)], Complex64::new(0.0, 0.0));
        assert_eq!(st.w[(5, 1)], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("OPA".parse::<Algorithm>().is_err());
    }

    #[test]
    fn projection_keeps_signs_and_survives_huge_steps() {
        let cfg = SystemConfig { p_t: 2.0, p_r: 3.0, ..SystemConfig::default() };
        let pa = PowerAllocation { source: vec![-1e300, 1e299], relays: vec![vec![-2.0, 0.0]] };
        let out = project(&pa, &cfg).unwrap();
        assert!(out.source[0] < 0.0 && out.source[1] > 0.0);
        assert!((out.source_energy() - 2.0).abs() < 1e-12);
        assert!((out.relay_energy() - 3.0).abs() < 1e-12);
        assert_eq!(out.relays[0][1], 0.0);
        let bad = PowerAllocation { source: vec![f64::NAN, 1.0], relays: vec![vec![1.0, 1.0]] };
        assert!(project(&bad, &cfg).is_err());
    }

    #[test]
    fn training_block_validation() {
        assert!(TrainingBlock::new(vec![]).is_err());
        let bad = ReceivedBlock { r: crate::model::CVector::zeros(6), s_true: vec![0.5, 1.0] };
        assert!(TrainingBlock::new(vec![bad]).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(
            src in proptest::collection::vec(0.0f64..5.0, 2),
            rel in proptest::collection::vec(0.0f64..5.0, 4),
            p_t in 0.1f64..10.0,
            p_r in 0.1f64..10.0,
        ) {
            prop_assume!(src.iter().any(|&a| a > 1e-6) && rel.iter().any(|&a| a > 1e-6));
            let pa = PowerAllocation { source: src, relays: vec![rel[..2].to_vec(), rel[2..].to_vec()] };
            let once = normalize_power(&pa, p_t, p_r).unwrap();
            prop_assert!(once.constraint_error(p_t, p_r) < 1e-12);
            let twice = normalize_power(&once, p_t, p_r).unwrap();
            for (a, b) in once.to_flat().iter().zip(twice.to_flat()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
