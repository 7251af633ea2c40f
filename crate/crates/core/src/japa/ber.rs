use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::CMatrix;
use crate::transceiver::{candidate, real_vector, EffectiveModel};

use super::TrainingBlock;

/// Gaussian tail probability `Q(x) = ½·erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Kernel width `ρ = (4/(3M))^{1/5}·σ` for `M` training samples and real
/// noise standard deviation `σ`.
pub fn kernel_width(m: usize, sigma_real: f64) -> f64 {
    (4.0 / (3.0 * m as f64)).powf(0.2) * sigma_real
}

/// Per-stream bit error probabilities and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BerEstimate {
    pub per_stream: Vec<f64>,
    pub mean: f64,
}

impl BerEstimate {
    fn from_streams(per_stream: Vec<f64>) -> Self {
        let mean = per_stream.iter().sum::<f64>() / per_stream.len().max(1) as f64;
        Self { per_stream, mean }
    }
}

/// Exact BER of the fixed linear detector `sgn(Re[w_j^H r])` for BPSK,
/// averaging `Q(c_lj)` over all `2^N` symbol vectors. The margin of
/// candidate `l` on stream `j` is normalized by the standard deviation of
/// `Re[w_j^H n_D]`, i.e. `√(w_j^H C w_j / 2)`.
pub fn theoretical_ber(w: &CMatrix, model: &EffectiveModel) -> Result<BerEstimate> {
    theoretical_ber_parts(w, &model.h_d, &model.noise_cov, crate::transceiver::DEFAULT_ML_CAP)
}

pub fn theoretical_ber_parts(
    w: &CMatrix,
    h_d: &CMatrix,
    noise_cov: &CMatrix,
    cap: u64,
) -> Result<BerEstimate> {
    let n = h_d.ncols();
    if w.shape() != h_d.shape() || noise_cov.nrows() != h_d.nrows() {
        return Err(Error::Dimension("filter, channel and covariance disagree".into()));
    }
    let count = 1u64 << n.min(63);
    if n >= 63 || count > cap {
        return Err(Error::EnumerationCap { candidates: count, cap });
    }
    let response = w.adjoint() * h_d;
    let mut per_stream = Vec::with_capacity(n);
    for j in 0..n {
        let wj = w.column(j);
        let var = 0.5 * wj.dotc(&(noise_cov * wj)).re;
        if !(var > 0.0) {
            return Err(Error::SingularFilter(j));
        }
        let sd = var.sqrt();
        let mut acc = 0.0;
        for l in 0..count as usize {
            let s = candidate(l, n);
            let clean = (response.row(j) * real_vector(&s))[(0, 0)].re;
            acc += q_function(s[j].signum() * clean / sd);
        }
        per_stream.push(acc / count as f64);
    }
    Ok(BerEstimate::from_streams(per_stream))
}

/// Kernel-smoothed BER of the linear detector over a training block:
/// `(1/M)·Σ_m Q(sgn(s_mj)·Re[w_j^H r_m] / (ρ‖w_j‖))`.
pub fn kernel_density_ber(w: &CMatrix, block: &TrainingBlock, rho: f64) -> Result<BerEstimate> {
    block.validate()?;
    let n = w.ncols();
    let mut per_stream = Vec::with_capacity(n);
    for j in 0..n {
        let wj = w.column(j);
        let norm = wj.norm();
        if norm == 0.0 {
            return Err(Error::SingularFilter(j));
        }
        let scale = rho * norm;
        let acc: f64 = block
            .samples
            .iter()
            .map(|b| q_function(b.s_true[j] * wj.dotc(&b.r).re / scale))
            .sum();
        per_stream.push(acc / block.len() as f64);
    }
    Ok(BerEstimate::from_streams(per_stream))
}
