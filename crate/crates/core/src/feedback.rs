//! Limited feedback of the power allocation from the destination to the
//! source and relays: uniform scalar quantization, additive Gaussian
//! feedback errors, and closed-form MSE expressions for a single relay.

use log::debug;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ChannelSet, CMatrix, PowerAllocation, SystemConfig};
use crate::transceiver::{hpd_solve, real_diag};
use crate::dstc::build_equivalent_channel;

/// Uniform mid-rise quantizer with `2^bits` levels on `[-range, range]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub range: f64,
}

impl QuantizerSpec {
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::InvalidConfig(format!("quantizer bits must be in 1..=16, got {bits}")));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidConfig(format!("quantizer range must be positive, got {range}")));
        }
        Ok(Self { bits, range })
    }

    /// Range `√max(P_T, P_R)`, which bounds every normalized entry.
    pub fn for_config(bits: u32, cfg: &SystemConfig) -> Result<Self> {
        Self::new(bits, cfg.p_t.max(cfg.p_r).sqrt())
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / (1u64 << self.bits) as f64
    }

    /// Nearest level to `x`, and whether `x` had to be clipped.
    pub fn quantize(&self, x: f64) -> (f64, bool) {
        let levels = (1u64 << self.bits) as f64;
        let step = self.step();
        let clipped = x.abs() > self.range;
        let idx = ((x + self.range) / step).floor().clamp(0.0, levels - 1.0);
        (-self.range + step * (idx + 0.5), clipped)
    }

    /// Quantizes real and imaginary parts independently.
    pub fn quantize_complex(&self, z: Complex64) -> (Complex64, usize) {
        let (re, c_re) = self.quantize(z.re);
        let (im, c_im) = if z.im == 0.0 { (0.0, false) } else { self.quantize(z.im) };
        (Complex64::new(re, im), c_re as usize + c_im as usize)
    }
}

/// Additive entry-wise Gaussian feedback error of variance `sigma_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackErrorModel {
    pub sigma_f: f64,
}

impl FeedbackErrorModel {
    pub fn new(sigma_f: f64) -> Result<Self> {
        if !(sigma_f >= 0.0 && sigma_f.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_f must be >= 0, got {sigma_f}")));
        }
        Ok(Self { sigma_f })
    }

    pub fn perfect() -> Self {
        Self { sigma_f: 0.0 }
    }
}

/// A quantized allocation and the number of entries that saturated.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub pa: PowerAllocation,
    pub clipped: usize,
}

fn map_entries(pa: &PowerAllocation, mut f: impl FnMut(f64) -> f64) -> PowerAllocation {
    PowerAllocation {
        source: pa.source.iter().map(|&a| f(a)).collect(),
        relays: pa.relays.iter().map(|r| r.iter().map(|&a| f(a)).collect()).collect(),
    }
}

/// Quantizes every allocation entry. The entries are real, so only the
/// real path of the quantizer carries information.
pub fn quantize_pa(pa: &PowerAllocation, q: &QuantizerSpec) -> Feedback {
    let mut clipped = 0;
    let out = map_entries(pa, |a| {
        let (z, c) = q.quantize_complex(Complex64::new(a, 0.0));
        clipped += c;
        z.re
    });
    if clipped > 0 {
        debug!("quantizer saturated on {clipped} entries");
    }
    Feedback { pa: out, clipped }
}

/// Adds the feedback error to every entry.
pub fn perturb_pa<R: Rng + ?Sized>(pa: &PowerAllocation, model: &FeedbackErrorModel, rng: &mut R) -> PowerAllocation {
    if model.sigma_f == 0.0 {
        return pa.clone();
    }
    let sd = model.sigma_f.sqrt();
    map_entries(pa, |a| {
        let e: f64 = rng.sample(StandardNormal);
        a + sd * e
    })
}

/// Single-relay quantities `(G_eq, F)`.
fn single_relay(channels: &ChannelSet) -> Result<(CMatrix, CMatrix)> {
    if channels.relays() != 1 {
        return Err(Error::UnsupportedScenario(format!(
            "feedback MSE expressions are defined for one relay, got {}",
            channels.relays()
        )));
    }
    let eq = build_equivalent_channel(&channels.g_rd[0])?;
    Ok((eq.g_eq, channels.f_sr[0].clone()))
}

/// `Tr((G A F σ_s)^H (‖G A F‖²σ_s + (I + ‖G A‖²)σ)^{-1} (G A F σ_s))`,
/// where the bracket is a scaled identity.
pub fn mse_expression(g_eq: &CMatrix, a: &[f64], f: &CMatrix, sigma_s2: f64, sigma: f64) -> f64 {
    let sigma_s = sigma_s2.sqrt();
    let ga = g_eq * real_diag(a);
    let gaf = &ga * f;
    let c = gaf.norm_squared() * sigma_s + (1.0 + ga.norm_squared()) * sigma;
    if c == 0.0 {
        return 0.0;
    }
    sigma_s * sigma_s * gaf.norm_squared() / c
}

/// MSE with an accurate relay allocation.
pub fn mse_exact(channels: &ChannelSet, pa: &PowerAllocation, sigma_s2: f64, sigma_n2: f64) -> Result<f64> {
    let (g, f) = single_relay(channels)?;
    Ok(mse_expression(&g, &pa.relays[0], &f, sigma_s2, sigma_n2))
}

fn with_error(pa: &PowerAllocation, err: &[f64]) -> Result<Vec<f64>> {
    if err.len() != pa.relays[0].len() {
        return Err(Error::Dimension(format!(
            "error matrix has {} diagonal entries, relay has {}",
            err.len(),
            pa.relays[0].len()
        )));
    }
    Ok(pa.relays[0].iter().zip(err).map(|(a, e)| a + e).collect())
}

/// MSE when the relay applies `Â = A + E`.
pub fn mse_with_errors(
    channels: &ChannelSet,
    pa: &PowerAllocation,
    err: &[f64],
    sigma_s2: f64,
    sigma_f: f64,
) -> Result<f64> {
    let (g, f) = single_relay(channels)?;
    let a_hat = with_error(pa, err)?;
    Ok(mse_expression(&g, &a_hat, &f, sigma_s2, sigma_f))
}

/// Same quantity built from `p̂ = E[r̂ s^H]` and `R̂x = E[r̂ r̂^H]` under the
/// scaled-identity second-moment model, solved as a linear system.
pub fn mse_with_errors_moments(
    channels: &ChannelSet,
    pa: &PowerAllocation,
    err: &[f64],
    sigma_s2: f64,
    sigma_f: f64,
) -> Result<f64> {
    let (g, f) = single_relay(channels)?;
    let a_hat = with_error(pa, err)?;
    let sigma_s = sigma_s2.sqrt();
    let ga = &g * real_diag(&a_hat);
    let p_hat = &ga * &f * Complex64::new(sigma_s, 0.0);
    let level = (&ga * &f).norm_squared() * sigma_s + (1.0 + ga.norm_squared()) * sigma_f;
    let rows = g.nrows();
    let rx = CMatrix::identity(rows, rows) * Complex64::new(level, 0.0);
    let solved = hpd_solve(&rx, &p_hat, "feedback second-moment matrix")?;
    Ok((p_hat.adjoint() * solved).trace().re)
}

/// The error-only term `m_eo`.
pub fn mse_excess(channels: &ChannelSet, err: &[f64], sigma_s2: f64, sigma_n2: f64) -> Result<f64> {
    let (g, f) = single_relay(channels)?;
    if err.len() != g.ncols() {
        return Err(Error::Dimension(format!("error matrix has {} diagonal entries", err.len())));
    }
    Ok(mse_expression(&g, err, &f, sigma_s2, sigma_n2))
}

/// `|m_e − (m + m_eo)|` with all three terms at noise level `sigma_n2`.
pub fn decomposition_residual(
    channels: &ChannelSet,
    pa: &PowerAllocation,
    err: &[f64],
    sigma_s2: f64,
    sigma_n2: f64,
) -> Result<f64> {
    let m_e = mse_with_errors(channels, pa, err, sigma_s2, sigma_n2)?;
    let m = mse_exact(channels, pa, sigma_s2, sigma_n2)?;
    let m_eo = mse_excess(channels, err, sigma_s2, sigma_n2)?;
    Ok((m_e - (m + m_eo)).abs())
}
