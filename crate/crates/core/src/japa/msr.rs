use num_complex::Complex64;

use crate::error::Result;
use crate::model::{ChannelSet, CMatrix, PowerAllocation, SystemConfig};
use crate::transceiver::{effective_model, real_diag, snr_forms_for_model};

use super::{project, Algorithm, OptimizerState};

/// Gradients of the instantaneous SNR. `w` is `∂SNR/∂W*`; the allocation
/// entries use the Wirtinger convention (half the real derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct MsrGradients {
    pub w: CMatrix,
    pub source: Vec<f64>,
    pub relays: Vec<Vec<f64>>,
    pub snr: f64,
    pub noise_term: f64,
}

pub fn msr_gradients(
    w: &CMatrix,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    cfg: &SystemConfig,
) -> Result<MsrGradients> {
    let model = effective_model(channels, pa, cfg)?;
    let forms = snr_forms_for_model(w, &model, channels, pa, cfg.sigma_s2)?;
    let n_eq = forms.noise_term;
    let snr = forms.direct;
    let s2 = cfg.sigma_s2;
    let sigma = cfg.sigma_n2;
    let d = model.direct_len();
    let rows = model.stacked_len();

    let y = model.relay_gain_padded();
    let h_rel = &model.h_rel;
    let wh = w.adjoint();
    // signal power without the σ_s² factor
    let num = (&wh * h_rel).norm_squared();

    let s_w = h_rel * (h_rel.adjoint() * w);
    let q_w = w + &y * (y.adjoint() * w);
    let gw = (s_w - q_w * Complex64::new(num * sigma / n_eq, 0.0)) * Complex64::new(s2 / n_eq, 0.0);

    let mut h_sda_rel = model.h_sda.clone();
    h_sda_rel.rows_mut(0, d).fill(Complex64::new(0.0, 0.0));
    let whh = &wh * &h_sda_rel;
    let source = (0..cfg.n)
        .map(|j| s2 * pa.source[j] * whh.column(j).norm_squared() / n_eq)
        .collect();

    // d(W^H H_rel)/da_kj = W^H g_kj (F_k A_S)[j, :]
    let wwh = w * &wh;
    let a_s = real_diag(&pa.source);
    let mut relays = vec![vec![0.0; cfg.b]; cfg.relays];
    for (k, g) in model.g_eq.iter().enumerate() {
        let fa = &channels.f_sr[k] * &a_s;
        let mut g_pad = CMatrix::zeros(rows, g.ncols());
        g_pad.view_mut((d, 0), g.shape()).copy_from(g);
        let left = fa * h_rel.adjoint() * &wwh * &g_pad;
        let right = y.adjoint() * &wwh * &g_pad;
        for j in 0..cfg.b {
            let num_d = 2.0 * s2 * left[(j, j)].re;
            let den_d = 2.0 * sigma * right[(j, j)].re;
            relays[k][j] = 0.5 * (num_d * n_eq - s2 * num * den_d) / (n_eq * n_eq);
        }
    }
    Ok(MsrGradients { w: gw, source, relays, snr, noise_term: n_eq })
}

/// One sum-rate ascent step. The SNR gradients are scaled by
/// `d/dSNR ½·log2(1 + SNR)`, which keeps the step well conditioned as the
/// SNR grows.
pub fn sg_msr_step(state: &OptimizerState, channels: &ChannelSet, cfg: &SystemConfig) -> Result<OptimizerState> {
    let g = msr_gradients(&state.w, channels, &state.pa, cfg)?;
    let chain = 1.0 / (2.0 * std::f64::consts::LN_2 * (1.0 + g.snr));
    let mut next = state.clone();
    next.iter += 1;
    next.w += &g.w * Complex64::new(state.mu * chain, 0.0);
    for (a, d) in next.pa.source.iter_mut().zip(&g.source) {
        *a += state.nu * chain * d;
    }
    for (ak, dk) in next.pa.relays.iter_mut().zip(&g.relays) {
        for (a, d) in ak.iter_mut().zip(dk) {
            *a += state.tau * chain * d;
        }
    }
    next.check_finite(Algorithm::MsrSg)?;
    next.pa = project(&next.pa, cfg)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{complex_gaussian, draw_channel_set, stream_rng};
    use crate::transceiver::{instantaneous_snr, mmse_receive_filter};
    use rand::Rng;

    fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / numeric.abs().max(1e-4)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = SystemConfig { sigma_n2: 0.3, ..SystemConfig::default() };
        let h = 1e-6;
        for inst in 0..25 {
            let mut rng = stream_rng(61, &[inst]);
            let ch = draw_channel_set(&cfg, &mut rng);
            let pa = PowerAllocation {
                source: (0..2).map(|_| rng.gen_range(0.2..1.5)).collect(),
                relays: vec![(0..2).map(|_| rng.gen_range(0.2..1.5)).collect()],
            };
            let w = CMatrix::from_fn(6, 2, |_, _| complex_gaussian(&mut rng, 0.5));
            let g = msr_gradients(&w, &ch, &pa, &cfg).unwrap();
            let f = |w: &CMatrix, pa: &PowerAllocation| instantaneous_snr(w, &ch, pa, &cfg).unwrap();
            assert!((f(&w, &pa) - g.snr).abs() < 1e-12);
            for i in 0..6 {
                for j in 0..2 {
                    for (part, dir) in [(0, Complex64::new(h, 0.0)), (1, Complex64::new(0.0, h))] {
                        let mut wp = w.clone();
                        let mut wm = w.clone();
                        wp[(i, j)] += dir;
                        wm[(i, j)] -= dir;
                        let fd = (f(&wp, &pa) - f(&wm, &pa)) / (2.0 * h);
                        let an = 2.0 * if part == 0 { g.w[(i, j)].re } else { g.w[(i, j)].im };
                        assert!(rel_err(an, fd) < 1e-4, "w[{i},{j}] part {part}: {an} vs {fd}");
                    }
                }
            }
            let flat = pa.to_flat();
            let analytic = [g.source[0], g.source[1], g.relays[0][0], g.relays[0][1]];
            for (idx, an) in analytic.into_iter().enumerate() {
                let mut p = flat.clone();
                let mut m = flat.clone();
                p[idx] += h;
                m[idx] -= h;
                let fd = (f(&w, &pa.with_flat(&p)) - f(&w, &pa.with_flat(&m))) / (2.0 * h);
                assert!(rel_err(2.0 * an, fd) < 1e-4, "a[{idx}]: {} vs {fd}", 2.0 * an);
            }
        }
    }

    #[test]
    fn zero_steps_only_advance_the_counter() {
        let cfg = SystemConfig::default();
        let ch = draw_channel_set(&cfg, &mut stream_rng(62, &[]));
        let st = OptimizerState::initial(&cfg).unwrap().with_steps(0.0, 0.0, 0.0);
        let next = sg_msr_step(&st, &ch, &cfg).unwrap();
        assert_eq!(next.iter, 1);
        assert_eq!(next.w, st.w);
        for (a, b) in next.pa.to_flat().iter().zip(st.pa.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn snr_rises_from_equal_allocation() {
        let cfg = SystemConfig { sigma_n2: 0.2, ..SystemConfig::default() };
        for seed in 0..5 {
            let ch = draw_channel_set(&cfg, &mut stream_rng(63, &[seed]));
            let mut st = OptimizerState::initial(&cfg).unwrap().with_steps(0.05, 0.05, 0.05);
            st.w = mmse_receive_filter(&effective_model(&ch, &st.pa, &cfg).unwrap(), 1.0).unwrap();
            let start = instantaneous_snr(&st.w, &ch, &st.pa, &cfg).unwrap();
            for _ in 0..300 {
                st = sg_msr_step(&st, &ch, &cfg).unwrap();
                assert!(st.pa.constraint_error(cfg.p_t, cfg.p_r) < 1e-10);
            }
            let end = instantaneous_snr(&st.w, &ch, &st.pa, &cfg).unwrap();
            let gain_db = 10.0 * (end / start).log10();
            assert!(gain_db >= 0.1, "seed {seed}: {gain_db} dB");
        }
    }
}
