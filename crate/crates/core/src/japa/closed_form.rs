use log::{debug, warn};

use crate::error::Result;
use crate::model::{ChannelSet, CMatrix, PowerAllocation, SystemConfig};
use crate::transceiver::{effective_model, mmse_receive_filter, EffectiveModel};

use super::{project, OptimizerState};

/// Mean squared error `E‖s − W^H r‖²` summed over streams:
/// `σ_s²‖I − W^H H_D‖_F² + Tr(W^H C W)`.
pub fn total_mse(w: &CMatrix, model: &EffectiveModel, sigma_s2: f64) -> f64 {
    let n = model.streams();
    let resid = CMatrix::identity(n, n) - w.adjoint() * &model.h_d;
    let noise = (w.adjoint() * &model.noise_cov * w).trace().re;
    sigma_s2 * resid.norm_squared() + noise
}

fn mse_at(w: &CMatrix, channels: &ChannelSet, pa: &PowerAllocation, cfg: &SystemConfig) -> Result<f64> {
    Ok(total_mse(w, &effective_model(channels, pa, cfg)?, cfg.sigma_s2))
}

/// MSE after refreshing the receive filter for the allocation.
fn filtered_mse(channels: &ChannelSet, pa: &PowerAllocation, cfg: &SystemConfig) -> Result<(CMatrix, f64)> {
    let model = effective_model(channels, pa, cfg)?;
    let w = mmse_receive_filter(&model, cfg.sigma_s2)?;
    let mse = total_mse(&w, &model, cfg.sigma_s2);
    Ok((w, mse))
}

/// Alternating closed-form MMSE design. Each iteration sets `W` to the
/// MMSE filter, then visits every allocation entry in turn and moves it to
/// the exact minimizer of the MSE with everything else held fixed (the MSE
/// is quadratic in each entry). The sweep is normalized; if the
/// normalized point is worse than the current one, the move is halved
/// until it is not.
pub fn mmse_closed_form_iterate(
    state: &OptimizerState,
    channels: &ChannelSet,
    cfg: &SystemConfig,
    n_iters: usize,
) -> Result<OptimizerState> {
    let mut st = state.clone();
    for _ in 0..n_iters {
        let (w, current) = filtered_mse(channels, &st.pa, cfg)?;
        let mut flat = st.pa.to_flat();
        for idx in 0..flat.len() {
            let eval = |x: f64, flat: &[f64]| -> Result<f64> {
                let mut p = flat.to_vec();
                p[idx] = x;
                mse_at(&w, channels, &st.pa.with_flat(&p), cfg)
            };
            let x0 = flat[idx];
            let step = 0.5 * x0.abs().max(0.1);
            let (fm, f0, fp) = (eval(x0 - step, &flat)?, eval(x0, &flat)?, eval(x0 + step, &flat)?);
            let curvature = (fp - 2.0 * f0 + fm) / (step * step);
            if !(curvature > 0.0) {
                debug!("closed-form MMSE: flat objective in allocation entry {idx}, skipped");
                continue;
            }
            let slope = (fp - fm) / (2.0 * step);
            flat[idx] = (x0 - slope / curvature).max(0.0);
        }
        let candidate = match project(&st.pa.with_flat(&flat), cfg) {
            Ok(pa) => pa,
            Err(e) => {
                warn!("closed-form MMSE: {e}, keeping the previous allocation");
                st.w = w;
                st.iter += 1;
                continue;
            }
        };
        let old = st.pa.to_flat();
        let target = candidate.to_flat();
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..30 {
            let mixed: Vec<f64> = old.iter().zip(&target).map(|(a, b)| a + t * (b - a)).collect();
            let pa = project(&st.pa.with_flat(&mixed), cfg)?;
            let (w_new, mse) = filtered_mse(channels, &pa, cfg)?;
            if mse <= current {
                accepted = Some((pa, w_new));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((pa, w_new)) => {
                st.pa = pa;
                st.w = w_new;
            }
            None => st.w = w,
        }
        st.iter += 1;
    }
    Ok(st)
}
