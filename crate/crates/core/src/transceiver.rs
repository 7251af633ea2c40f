//! End-to-end two-hop signal model, the stacked effective channel, and the
//! receivers (linear MMSE, maximum likelihood) together with the
//! instantaneous-SNR and sum-rate scores.
//!
//! Layout of the stacked received vector: the first `N` entries are the
//! direct-link reception, followed by `NT` entries from the relay slots with
//! the Alamouti conjugation already applied.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::Rng;

use crate::dstc::{alamouti_encode, apply_conjugation, build_equivalent_channel, conjugate_masked};
use crate::error::{Error, Result};
use crate::model::{awgn_vector, ChannelSet, CMatrix, CVector, PowerAllocation, SystemConfig};

/// One received symbol vector together with the symbols that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    pub r: CVector,
    pub s_true: Vec<f64>,
}

/// Stacked linear model `r = H_D·s + n_D` for a fixed channel and
/// power allocation.
#[derive(Debug, Clone)]
pub struct EffectiveModel {
    /// `(T+1)N×N` channel including both power allocations.
    pub h_d: CMatrix,
    /// `[H_SD ; Σ_k G_eq_k·A_k·F_k]`: `H_D` with `A_S` factored out.
    pub h_sda: CMatrix,
    /// Relay contribution to `H_D`, zero in the direct-link rows.
    pub h_rel: CMatrix,
    /// Per-relay equivalent channel `G_eq_k` (`NT×B`).
    pub g_eq: Vec<CMatrix>,
    /// Per-relay `G_eq_k·A_k`.
    pub g_eq_a: Vec<CMatrix>,
    pub conj_mask: Vec<bool>,
    /// Exact covariance of `n_D`:
    /// `σ²·blockdiag(I_N, I_NT + Σ_k G_eq_k A_k A_k^H G_eq_k^H)`.
    pub noise_cov: CMatrix,
    pub sigma_n2: f64,
}

impl EffectiveModel {
    pub fn stacked_len(&self) -> usize {
        self.h_d.nrows()
    }

    pub fn streams(&self) -> usize {
        self.h_d.ncols()
    }

    /// Rows of the stacked vector that belong to the direct link.
    pub fn direct_len(&self) -> usize {
        self.h_d.nrows() - self.g_eq.first().map_or(0, |g| g.nrows())
    }

    /// Scalar noise level of the isotropic approximation
    /// `σ²·(1 + ‖Σ_k G_eq_k A_k‖_F²)` used by the analytical expressions.
    pub fn isotropic_noise_variance(&self) -> f64 {
        let mut sum = self.g_eq_a[0].clone();
        for g in &self.g_eq_a[1..] {
            sum += g;
        }
        self.sigma_n2 * (1.0 + sum.norm_squared())
    }

    /// `(T+1)N×B` matrix `[0 ; Σ_k G_eq_k A_k]`.
    pub fn relay_gain_padded(&self) -> CMatrix {
        let rows = self.stacked_len();
        let d = self.direct_len();
        let b = self.g_eq_a[0].ncols();
        let mut y = CMatrix::zeros(rows, b);
        for g in &self.g_eq_a {
            let mut view = y.view_mut((d, 0), (g.nrows(), b));
            view += g;
        }
        y
    }

    /// Draws a received vector for symbols `s`. The noise is drawn in the
    /// same order as [`simulate_block`], so both produce the same vector for
    /// the same random stream.
    pub fn sample_received<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> CVector {
        let d = self.direct_len();
        let mut r = &self.h_d * real_vector(s);
        let n_sd = awgn_vector(d, self.sigma_n2, rng);
        let mut head = r.rows_mut(0, d);
        head += &n_sd;
        let mut relay_noise = CVector::zeros(r.len() - d);
        for g in &self.g_eq_a {
            let n_sr = awgn_vector(g.ncols(), self.sigma_n2, rng);
            relay_noise += g * n_sr;
        }
        let mut n_rd = awgn_vector(relay_noise.len(), self.sigma_n2, rng);
        conjugate_masked(&mut n_rd, &self.conj_mask);
        relay_noise += n_rd;
        let mut tail = r.rows_mut(d, relay_noise.len());
        tail += &relay_noise;
        r
    }
}

pub(crate) fn real_vector(s: &[f64]) -> CVector {
    CVector::from_iterator(s.len(), s.iter().map(|&x| Complex64::new(x, 0.0)))
}

pub(crate) fn real_diag(a: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&real_vector(a))
}

fn check_dims(cfg: &SystemConfig, channels: &ChannelSet, pa: &PowerAllocation) -> Result<()> {
    let ok = channels.h_sd.shape() == (cfg.n, cfg.n)
        && channels.relays() == cfg.relays
        && channels.g_rd.len() == cfg.relays
        && channels.f_sr.iter().all(|f| f.shape() == (cfg.b, cfg.n))
        && channels.g_rd.iter().all(|g| g.shape() == (cfg.n, cfg.b))
        && pa.source.len() == cfg.n
        && pa.relays.len() == cfg.relays
        && pa.relays.iter().all(|a| a.len() == cfg.b);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(
            "channel set or power allocation does not match the configuration".into(),
        ))
    }
}

/// Builds the stacked effective model for the given channels and allocation.
pub fn effective_model(
    channels: &ChannelSet,
    pa: &PowerAllocation,
    cfg: &SystemConfig,
) -> Result<EffectiveModel> {
    check_dims(cfg, channels, pa)?;
    let n = cfg.n;
    let nt = n * cfg.t;
    let rows = n + nt;
    let a_s = real_diag(&pa.source);

    let mut relay_sum = CMatrix::zeros(nt, n);
    let mut g_eq = Vec::with_capacity(cfg.relays);
    let mut g_eq_a = Vec::with_capacity(cfg.relays);
    let mut conj_mask = Vec::new();
    let mut relay_cov = CMatrix::identity(nt, nt);
    for k in 0..cfg.relays {
        let eq = build_equivalent_channel(&channels.g_rd[k])?;
        if eq.g_eq.nrows() != nt {
            return Err(Error::UnsupportedScheme(format!(
                "equivalent channel has {} rows, expected N·T = {nt}",
                eq.g_eq.nrows()
            )));
        }
        let ga = &eq.g_eq * real_diag(&pa.relays[k]);
        relay_sum += &ga * &channels.f_sr[k];
        relay_cov += &ga * ga.adjoint();
        g_eq.push(eq.g_eq);
        g_eq_a.push(ga);
        conj_mask = eq.conj_mask;
    }

    let mut h_sda = CMatrix::zeros(rows, n);
    h_sda.view_mut((0, 0), (n, n)).copy_from(&channels.h_sd);
    h_sda.view_mut((n, 0), (nt, n)).copy_from(&relay_sum);
    let h_d = &h_sda * &a_s;
    let mut h_rel = h_d.clone();
    h_rel.view_mut((0, 0), (n, n)).fill(Complex64::new(0.0, 0.0));

    let sigma = Complex64::new(cfg.sigma_n2, 0.0);
    let mut noise_cov = CMatrix::zeros(rows, rows);
    noise_cov
        .view_mut((0, 0), (n, n))
        .copy_from(&(CMatrix::identity(n, n) * sigma));
    noise_cov
        .view_mut((n, n), (nt, nt))
        .copy_from(&(relay_cov * sigma));

    Ok(EffectiveModel {
        h_d,
        h_sda,
        h_rel,
        g_eq,
        g_eq_a,
        conj_mask,
        noise_cov,
        sigma_n2: cfg.sigma_n2,
    })
}

/// Physical simulation of one symbol vector through both hops: first-hop
/// broadcast, per-relay amplification and Alamouti re-encoding, second-hop
/// propagation, then conjugation and stacking at the destination.
pub fn simulate_block<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    s: &[f64],
    rng: &mut R,
) -> Result<ReceivedBlock> {
    check_dims(cfg, channels, pa)?;
    if s.len() != cfg.n {
        return Err(Error::Dimension(format!(
            "symbol vector has {} entries, expected {}",
            s.len(),
            cfg.n
        )));
    }
    let sv = real_vector(s);
    let a_s = real_diag(&pa.source);
    let tx = &a_s * &sv;

    let r_sd = &channels.h_sd * &tx + awgn_vector(cfg.n, cfg.sigma_n2, rng);

    let mut received = CMatrix::zeros(cfg.n, cfg.t);
    let mut mask = Vec::new();
    for k in 0..cfg.relays {
        let r_sr = &channels.f_sr[k] * &tx + awgn_vector(cfg.b, cfg.sigma_n2, rng);
        let s_tilde = real_diag(&pa.relays[k]) * r_sr;
        let code = alamouti_encode(s_tilde.as_slice())?;
        if code.0.ncols() != cfg.t {
            return Err(Error::UnsupportedScheme(format!(
                "code block length {} differs from T = {}",
                code.0.ncols(),
                cfg.t
            )));
        }
        received += &channels.g_rd[k] * code.0;
        mask = build_equivalent_channel(&channels.g_rd[k])?.conj_mask;
    }
    let n_rd = awgn_vector(cfg.n * cfg.t, cfg.sigma_n2, rng);
    received += CMatrix::from_column_slice(cfg.n, cfg.t, n_rd.as_slice());
    let r_rd = apply_conjugation(&received, &mask)?;

    let mut r = CVector::zeros(cfg.stacked_len());
    r.rows_mut(0, cfg.n).copy_from(&r_sd);
    r.rows_mut(cfg.n, cfg.n * cfg.t).copy_from(&r_rd);
    Ok(ReceivedBlock {
        r,
        s_true: s.to_vec(),
    })
}

/// Solves the Hermitian positive-definite system `A·X = B`.
pub(crate) fn hpd_solve(a: &CMatrix, b: &CMatrix, what: &'static str) -> Result<CMatrix> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.solve(b));
    }
    a.clone().lu().solve(b).ok_or(Error::Singular(what))
}

/// Linear MMSE filter `W = (σ_s² H H^H + C)^{-1} H σ_s²`.
pub fn mmse_filter(h_d: &CMatrix, noise_cov: &CMatrix, sigma_s2: f64) -> Result<CMatrix> {
    let s2 = Complex64::new(sigma_s2, 0.0);
    let r = h_d * h_d.adjoint() * s2 + noise_cov;
    let p = h_d * s2;
    let w = hpd_solve(&r, &p, "MMSE second-moment matrix")?;
    if w.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(w)
    } else {
        Err(Error::Singular("MMSE second-moment matrix"))
    }
}

/// MMSE receive filter for the model, one column per stream.
pub fn mmse_receive_filter(model: &EffectiveModel, sigma_s2: f64) -> Result<CMatrix> {
    mmse_filter(&model.h_d, &model.noise_cov, sigma_s2)
}

/// Per-stream sign of `Re[w_j^H r]`; an exact zero decides `+1`.
pub fn linear_detect(w: &CMatrix, r: &CVector) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| {
            let y = w.column(j).dotc(r).re;
            if y < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Default enumeration cap for exhaustive detection: 2^16 candidates.
pub const DEFAULT_ML_CAP: u64 = 1 << 16;

/// Exhaustive-search BPSK detector with noise whitening.
#[derive(Debug, Clone)]
pub struct MlDetector {
    /// Lower Cholesky factor of the noise covariance.
    l: CMatrix,
    /// Whitened noise-free responses, one column per candidate.
    responses: CMatrix,
    n: usize,
}

impl MlDetector {
    pub fn new(model: &EffectiveModel, cap: u64) -> Result<Self> {
        let n = model.streams();
        let count = 1u64.checked_shl(n as u32).filter(|&c| c <= cap && n < 64);
        let Some(count) = count else {
            return Err(Error::EnumerationCap {
                candidates: if n < 64 { 1u64 << n } else { u64::MAX },
                cap,
            });
        };
        let l = Cholesky::new(model.noise_cov.clone())
            .ok_or(Error::Singular("stacked noise covariance"))?
            .l();
        let mut responses = CMatrix::zeros(model.stacked_len(), count as usize);
        for idx in 0..count as usize {
            let c = candidate(idx, n);
            responses.set_column(idx, &(&model.h_d * real_vector(&c)));
        }
        let responses = l
            .solve_lower_triangular(&responses)
            .ok_or(Error::Singular("stacked noise covariance"))?;
        Ok(Self { l, responses, n })
    }

    /// Number of candidate vectors scanned per detection.
    pub fn candidates(&self) -> usize {
        self.responses.ncols()
    }

    pub fn detect(&self, r: &CVector) -> Vec<f64> {
        let y = self
            .l
            .solve_lower_triangular(r)
            .expect("Cholesky factor is nonsingular");
        let mut best = 0;
        let mut best_metric = f64::INFINITY;
        for (idx, col) in self.responses.column_iter().enumerate() {
            let metric: f64 = y.iter().zip(col.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            if metric < best_metric {
                best_metric = metric;
                best = idx;
            }
        }
        candidate(best, self.n)
    }
}

/// Candidate `idx` in lexicographic order with `-1 < +1`; the first symbol
/// is the most significant position.
pub fn candidate(idx: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| if (idx >> (n - 1 - j)) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Maximum-likelihood detection under the model's exact noise covariance.
pub fn ml_detect(model: &EffectiveModel, r: &CVector) -> Result<Vec<f64>> {
    Ok(MlDetector::new(model, DEFAULT_ML_CAP)?.detect(r))
}

/// The instantaneous SNR evaluated three ways: directly from the
/// relay-path signal and noise traces, and through the two trace-cyclic
/// forms built on the source and relay allocations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrForms {
    pub direct: f64,
    pub via_source: f64,
    pub via_relays: f64,
    /// `n_eq = σ² Tr(W^H W + W^H Y Y^H W)`.
    pub noise_term: f64,
}

/// Evaluates the received SNR of filter `W`. The signal term counts the
/// relay path only, `H_rel = Σ_k G_eq_k A_k F_k A_S`; the noise term is
/// `σ² Tr(W^H (I + Y Y^H) W)` with `Y = Σ_k G_eq_k A_k`.
pub fn snr_forms(
    w: &CMatrix,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    cfg: &SystemConfig,
) -> Result<SnrForms> {
    let model = effective_model(channels, pa, cfg)?;
    snr_forms_for_model(w, &model, channels, pa, cfg.sigma_s2)
}

pub(crate) fn snr_forms_for_model(
    w: &CMatrix,
    model: &EffectiveModel,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    sigma_s2: f64,
) -> Result<SnrForms> {
    if w.shape() != model.h_d.shape() {
        return Err(Error::Dimension(format!(
            "filter is {:?}, expected {:?}",
            w.shape(),
            model.h_d.shape()
        )));
    }
    let y = model.relay_gain_padded();
    let wy = w.adjoint() * &y;
    let noise_term = model.sigma_n2 * (w.norm_squared() + wy.norm_squared());
    if noise_term <= 0.0 || !noise_term.is_finite() {
        return Err(Error::UndefinedSnr);
    }

    let wh_rel = w.adjoint() * &model.h_rel;
    let direct = sigma_s2 * wh_rel.norm_squared() / noise_term;

    // H_SDA restricted to the relay rows, with A_S factored out
    let d = model.direct_len();
    let mut h_sda_rel = model.h_sda.clone();
    h_sda_rel.rows_mut(0, d).fill(Complex64::new(0.0, 0.0));
    let a_s = real_diag(&pa.source);
    let wwh = w * w.adjoint();
    let r_sda = h_sda_rel.adjoint() * &wwh * &h_sda_rel * &a_s;
    let via_source = sigma_s2 * (r_sda * &a_s).trace().re / noise_term;

    let mut relay_trace = 0.0;
    for (k, g) in model.g_eq.iter().enumerate() {
        let mut g_pad = CMatrix::zeros(model.stacked_len(), g.ncols());
        g_pad.view_mut((d, 0), g.shape()).copy_from(g);
        let r_geq =
            g_pad.adjoint() * &wwh * &h_sda_rel * &a_s * &a_s * channels.f_sr[k].adjoint();
        relay_trace += (r_geq * real_diag(&pa.relays[k])).trace().re;
    }
    let via_relays = sigma_s2 * relay_trace / noise_term;

    Ok(SnrForms {
        direct,
        via_source,
        via_relays,
        noise_term,
    })
}

/// Instantaneous received SNR of filter `W` (relay-path signal over the
/// filtered noise power).
pub fn instantaneous_snr(
    w: &CMatrix,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    cfg: &SystemConfig,
) -> Result<f64> {
    Ok(snr_forms(w, channels, pa, cfg)?.direct)
}

/// `½·log2(1 + snr)` in bits per channel use.
pub fn sum_rate(snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::Domain(format!("SNR must be >= 0, got {snr}")));
    }
    Ok(0.5 * (1.0 + snr).log2())
}
