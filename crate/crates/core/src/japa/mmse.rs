use num_complex::Complex64;

use crate::error::Result;
use crate::model::{ChannelSet, CMatrix, CVector, PowerAllocation, SystemConfig};
use crate::transceiver::{effective_model, EffectiveModel, ReceivedBlock};

use super::{project, relay_input, Algorithm, OptimizerState};

/// Instantaneous gradients of `|e_j|²` with respect to the conjugated
/// filter and the real allocation entries. The allocation parts use the
/// Wirtinger convention, i.e. half the ordinary real derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseGradients {
    /// Column `j` is `∂|e_j|²/∂w_j*`.
    pub w: CMatrix,
    pub source: Vec<f64>,
    pub relays: Vec<Vec<f64>>,
    /// `e_j = s_j − w_j^H r`.
    pub errors: Vec<Complex64>,
}

/// Relay-path derivative of the received vector with respect to `a_kj`:
/// `[0 ; g_eq_k[:, j]·f_kj^T A_S s]`.
pub(crate) fn relay_direction(
    model: &EffectiveModel,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    k: usize,
    j: usize,
    s: &[f64],
) -> CVector {
    let d = model.direct_len();
    let mut v = CVector::zeros(model.stacked_len());
    let x = relay_input(channels, pa, k, j, s);
    let g = model.g_eq[k].column(j);
    v.rows_mut(d, g.len()).copy_from(&(g * x));
    v
}

pub fn mmse_gradients(
    w: &CMatrix,
    block: &ReceivedBlock,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    cfg: &SystemConfig,
) -> Result<MmseGradients> {
    let model = effective_model(channels, pa, cfg)?;
    let r = &block.r;
    let s = &block.s_true;
    let n = cfg.n;
    let mut gw = CMatrix::zeros(w.nrows(), n);
    let mut source = vec![0.0; n];
    let mut relays = vec![vec![0.0; cfg.b]; cfg.relays];
    let mut errors = Vec::with_capacity(n);
    for j in 0..n {
        let wj = w.column(j);
        let e = Complex64::new(s[j], 0.0) - wj.dotc(r);
        errors.push(e);
        gw.set_column(j, &(-r * e.conj()));
        let h = model.h_sda.column(j) * Complex64::new(s[j], 0.0);
        source[j] = -(e.conj() * wj.dotc(&h)).re;
        if j < cfg.b {
            for k in 0..cfg.relays {
                let v = relay_direction(&model, channels, pa, k, j, s);
                relays[k][j] = -(e.conj() * wj.dotc(&v)).re;
            }
        }
    }
    Ok(MmseGradients { w: gw, source, relays, errors })
}

/// One supervised MMSE update from a single received vector with known
/// symbols, followed by clipping and power normalization.
pub fn sg_mmse_step(
    state: &OptimizerState,
    block: &ReceivedBlock,
    channels: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<OptimizerState> {
    let g = mmse_gradients(&state.w, block, channels, &state.pa, cfg)?;
    let mut next = state.clone();
    next.iter += 1;
    next.w -= &g.w * Complex64::new(state.mu, 0.0);
    let mut pa = state.pa.clone();
    for (a, d) in pa.source.iter_mut().zip(&g.source) {
        *a -= state.nu * d;
    }
    for (ak, dk) in pa.relays.iter_mut().zip(&g.relays) {
        for (a, d) in ak.iter_mut().zip(dk) {
            *a -= state.tau * d;
        }
    }
    next.pa = pa;
    next.check_finite(Algorithm::MmseSg)?;
    next.pa = project(&next.pa, cfg)?;
    Ok(next)
}
