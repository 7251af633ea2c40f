//! Network configuration, random channel and noise generation, and the
//! diagonal power-allocation data model shared by every other module.
//!
//! All randomness flows through explicit [`rand::Rng`] arguments. Monte Carlo
//! trials derive their own streams with [`stream_rng`] so results do not
//! depend on the order in which trials are scheduled.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Symbol alphabet. Only BPSK is supported: the minimum-BER machinery is
/// derived for real antipodal symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Bpsk,
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            other => Err(Error::InvalidConfig(format!(
                "unsupported modulation '{other}' (only bpsk)"
            ))),
        }
    }
}

/// Dimensions, power budgets, noise level and adaptation step sizes of one
/// two-hop network.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Antennas at the source and at the destination.
    pub n: usize,
    /// Antennas per relay.
    pub b: usize,
    /// Number of relays.
    pub relays: usize,
    /// Space-time block length in slots.
    pub t: usize,
    /// Source power budget, `‖A_S‖_F²`.
    pub p_t: f64,
    /// Total relay power budget, `Σ_k ‖A_k‖_F²`.
    pub p_r: f64,
    /// Symbol power.
    pub sigma_s2: f64,
    /// Complex noise variance per receive antenna, identical at relays and
    /// destination.
    pub sigma_n2: f64,
    pub modulation: Modulation,
    /// Receive-filter step size.
    pub mu: f64,
    /// Source power-allocation step size.
    pub nu: f64,
    /// Relay power-allocation step size.
    pub tau: f64,
    /// Multiplier (at least one) on the minimum kernel width of the
    /// minimum-BER update.
    pub kernel_scale: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n: 2,
            b: 2,
            relays: 1,
            t: 2,
            p_t: 1.0,
            p_r: 1.0,
            sigma_s2: 1.0,
            sigma_n2: 0.1,
            modulation: Modulation::Bpsk,
            mu: 0.005,
            nu: 0.005,
            tau: 0.005,
            kernel_scale: 1.0,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 || self.b == 0 || self.relays == 0 || self.t == 0 {
            return bad("antenna counts, relay count and block length must be >= 1".into());
        }
        if self.b != self.n {
            return bad(format!("relay antennas B={} must equal N={}", self.b, self.n));
        }
        for (name, v) in [
            ("P_T", self.p_t),
            ("P_R", self.p_r),
            ("sigma_n2", self.sigma_n2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.sigma_s2 != 1.0 {
            return bad(format!("sigma_s2 must be 1, got {}", self.sigma_s2));
        }
        for (name, v) in [("mu", self.mu), ("nu", self.nu), ("tau", self.tau)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("step size {name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.kernel_scale.is_finite() && self.kernel_scale >= 1.0) {
            return bad(format!("kernel_scale must be >= 1, got {}", self.kernel_scale));
        }
        Ok(())
    }

    /// Length of the stacked received vector, `(T+1)·N`.
    pub fn stacked_len(&self) -> usize {
        (self.t + 1) * self.n
    }

    /// Real per-dimension noise standard deviation `√(σ²/2)`, the scale the
    /// Q-function expressions use.
    pub fn sigma_real(&self) -> f64 {
        (self.sigma_n2 / 2.0).sqrt()
    }
}

/// All link channels of one quasi-static block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Source to destination, `N×N`.
    pub h_sd: CMatrix,
    /// Source to relay `k`, `B×N`.
    pub f_sr: Vec<CMatrix>,
    /// Relay `k` to destination, `N×B`.
    pub g_rd: Vec<CMatrix>,
}

impl ChannelSet {
    pub fn relays(&self) -> usize {
        self.f_sr.len()
    }
}

/// Diagonals of the source and relay power-allocation matrices. Entries are
/// real; a negative entry is a sign flip the receiver absorbs.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub source: Vec<f64>,
    pub relays: Vec<Vec<f64>>,
}

impl PowerAllocation {
    /// `‖A_S‖_F²`.
    pub fn source_energy(&self) -> f64 {
        self.source.iter().map(|a| a * a).sum()
    }

    /// `Σ_k ‖A_k‖_F²`.
    pub fn relay_energy(&self) -> f64 {
        self.relays.iter().flatten().map(|a| a * a).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.source.iter().chain(self.relays.iter().flatten()).all(|a| a.is_finite())
    }

    /// Largest absolute violation of the two power constraints, relative to
    /// the budgets.
    pub fn constraint_error(&self, p_t: f64, p_r: f64) -> f64 {
        let s = (self.source_energy() - p_t).abs() / p_t;
        let r = (self.relay_energy() - p_r).abs() / p_r;
        s.max(r)
    }

    /// All entries flattened as `[a_S, a_1, .., a_nr]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.source
            .iter()
            .chain(self.relays.iter().flatten())
            .copied()
            .collect()
    }

    /// Inverse of [`PowerAllocation::to_flat`] using `self` as the shape.
    pub fn with_flat(&self, flat: &[f64]) -> PowerAllocation {
        let mut it = flat.iter().copied();
        let source = self.source.iter().map(|_| it.next().unwrap()).collect();
        let relays = self
            .relays
            .iter()
            .map(|r| r.iter().map(|_| it.next().unwrap()).collect())
            .collect();
        PowerAllocation { source, relays }
    }
}

/// Circularly symmetric complex Gaussian sample with `E|z|² = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    // column-major fill keeps the draw order fixed
    let mut m = CMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_gaussian(rng, 1.0);
        }
    }
    m
}

/// Draws one block of i.i.d. unit-variance Rayleigh channels.
pub fn draw_channel_set<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ChannelSet {
    let h_sd = gaussian_matrix(rng, cfg.n, cfg.n);
    let mut f_sr = Vec::with_capacity(cfg.relays);
    let mut g_rd = Vec::with_capacity(cfg.relays);
    for _ in 0..cfg.relays {
        f_sr.push(gaussian_matrix(rng, cfg.b, cfg.n));
        g_rd.push(gaussian_matrix(rng, cfg.n, cfg.b));
    }
    ChannelSet { h_sd, f_sr, g_rd }
}

/// Zero-mean circular complex white Gaussian vector.
pub fn awgn_vector<R: Rng + ?Sized>(len: usize, variance: f64, rng: &mut R) -> CVector {
    if variance == 0.0 {
        return CVector::zeros(len);
    }
    CVector::from_fn(len, |_, _| complex_gaussian(rng, variance))
}

/// Equal power allocation meeting both budgets with equality.
pub fn epa_init(cfg: &SystemConfig) -> PowerAllocation {
    let a_s = (cfg.p_t / cfg.n as f64).sqrt();
    let a_r = (cfg.p_r / (cfg.b * cfg.relays) as f64).sqrt();
    PowerAllocation {
        source: vec![a_s; cfg.n],
        relays: vec![vec![a_r; cfg.b]; cfg.relays],
    }
}

/// Uniform BPSK symbol vector.
pub fn bpsk_symbols<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream identified by the master seed and a path of
/// indices (experiment point, trial, purpose, ...).
pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
