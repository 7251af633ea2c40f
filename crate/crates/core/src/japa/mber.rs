use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ChannelSet, CMatrix, CVector, PowerAllocation, SystemConfig};
use crate::transceiver::effective_model;

use super::ber::kernel_width;
use super::mmse::relay_direction;
use super::{project, Algorithm, OptimizerState, TrainingBlock};

/// Gradients of the kernel-smoothed BER of each stream, summed over the
/// training samples. Allocation entries use the Wirtinger convention.
#[derive(Debug, Clone, PartialEq)]
pub struct MberGradients {
    /// Column `j` is `∂P̂_j/∂w_j*`.
    pub w: CMatrix,
    pub source: Vec<f64>,
    pub relays: Vec<Vec<f64>>,
    /// Smoothed BER `P̂_j` at the current point.
    pub smoothed_ber: Vec<f64>,
}

fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn mber_gradients(
    w: &CMatrix,
    block: &TrainingBlock,
    channels: &ChannelSet,
    pa: &PowerAllocation,
    cfg: &SystemConfig,
    rho: f64,
) -> Result<MberGradients> {
    block.validate()?;
    let model = effective_model(channels, pa, cfg)?;
    let m = block.len() as f64;
    let n = cfg.n;
    let mut gw = CMatrix::zeros(w.nrows(), n);
    let mut source = vec![0.0; n];
    let mut relays = vec![vec![0.0; cfg.b]; cfg.relays];
    let mut smoothed_ber = vec![0.0; n];
    for j in 0..n {
        let wj = w.column(j).into_owned();
        let norm = wj.norm();
        if norm == 0.0 {
            return Err(Error::SingularFilter(j));
        }
        let scale = rho * norm;
        let norm2 = norm * norm;
        let mut col = CVector::zeros(wj.len());
        for sample in &block.samples {
            let s = &sample.s_true;
            let y = wj.dotc(&sample.r).re;
            let c = s[j] * y / scale;
            let phi = gaussian_pdf(c);
            smoothed_ber[j] += super::ber::q_function(c) / m;
            let coef = -phi * s[j] / (2.0 * scale * m);
            col += (&sample.r - &wj * Complex64::new(y / norm2, 0.0)) * Complex64::new(coef, 0.0);
            let h = model.h_sda.column(j) * Complex64::new(s[j], 0.0);
            source[j] += coef * wj.dotc(&h).re;
            if j < cfg.b {
                for k in 0..cfg.relays {
                    let v = relay_direction(&model, channels, pa, k, j, s);
                    relays[k][j] += coef * wj.dotc(&v).re;
                }
            }
        }
        gw.set_column(j, &col);
    }
    Ok(MberGradients { w: gw, source, relays, smoothed_ber })
}

/// One minimum-BER update from a block of `M` training vectors. The kernel
/// width is `kernel_scale` times `(4/(3M))^{1/5}·σ`, with the real noise deviation of
/// the configuration.
pub fn sg_mber_step(
    state: &OptimizerState,
    block: &TrainingBlock,
    channels: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<OptimizerState> {
    let rho = cfg.kernel_scale * kernel_width(block.len().max(1), cfg.sigma_real());
    let g = mber_gradients(&state.w, block, channels, &state.pa, cfg, rho)?;
    let mut next = state.clone();
    next.iter += 1;
    next.w -= &g.w * Complex64::new(state.mu, 0.0);
    for (a, d) in next.pa.source.iter_mut().zip(&g.source) {
        *a -= state.nu * d;
    }
    for (ak, dk) in next.pa.relays.iter_mut().zip(&g.relays) {
        for (a, d) in ak.iter_mut().zip(dk) {
            *a -= state.tau * d;
        }
    }
    next.check_finite(Algorithm::MberSg)?;
    next.pa = project(&next.pa, cfg)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::japa::kernel_density_ber;
    use crate::model::{awgn_vector, bpsk_symbols, complex_gaussian, draw_channel_set, stream_rng};
    use crate::transceiver::{real_vector, ReceivedBlock};
    use rand::Rng;

    struct Instance {
        cfg: SystemConfig,
        ch: ChannelSet,
        pa: PowerAllocation,
        w: CMatrix,
        symbols: Vec<Vec<f64>>,
        noise: Vec<CVector>,
    }

    impl Instance {
        fn new(seed: u64, m: usize) -> Self {
            let cfg = SystemConfig { sigma_n2: 0.4, ..SystemConfig::default() };
            let mut rng = stream_rng(51, &[seed]);
            let ch = draw_channel_set(&cfg, &mut rng);
            let pa = PowerAllocation {
                source: (0..2).map(|_| rng.gen_range(0.2..1.5)).collect(),
                relays: vec![(0..2).map(|_| rng.gen_range(0.2..1.5)).collect()],
            };
            let w = CMatrix::from_fn(6, 2, |_, _| complex_gaussian(&mut rng, 0.5));
            let symbols = (0..m).map(|_| bpsk_symbols(2, &mut rng)).collect();
            let noise = (0..m).map(|_| awgn_vector(6, 0.6, &mut rng)).collect();
            Self { cfg, ch, pa, w, symbols, noise }
        }

        /// Fixed-residual training block at allocation `pa`.
        fn block(&self, pa: &PowerAllocation) -> TrainingBlock {
            let model = effective_model(&self.ch, pa, &self.cfg).unwrap();
            TrainingBlock::new(
                self.symbols
                    .iter()
                    .zip(&self.noise)
                    .map(|(s, n)| ReceivedBlock { r: &model.h_d * real_vector(s) + n, s_true: s.clone() })
                    .collect(),
            )
            .unwrap()
        }

        fn objective(&self, w: &CMatrix, pa: &PowerAllocation, j: usize, rho: f64) -> f64 {
            kernel_density_ber(w, &self.block(pa), rho).unwrap().per_stream[j]
        }
    }

    fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / numeric.abs().max(1e-4)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for inst in 0..20 {
            let t = Instance::new(inst, 10);
            let rho = kernel_width(10, t.cfg.sigma_real());
            let g = mber_gradients(&t.w, &t.block(&t.pa), &t.ch, &t.pa, &t.cfg, rho).unwrap();
            for j in 0..2 {
                let base = t.objective(&t.w, &t.pa, j, rho);
                assert!((base - g.smoothed_ber[j]).abs() < 1e-12);
                for i in 0..6 {
                    for (part, dir) in [(0, Complex64::new(h, 0.0)), (1, Complex64::new(0.0, h))] {
                        let mut wp = t.w.clone();
                        let mut wm = t.w.clone();
                        wp[(i, j)] += dir;
                        wm[(i, j)] -= dir;
                        let fd = (t.objective(&wp, &t.pa, j, rho) - t.objective(&wm, &t.pa, j, rho)) / (2.0 * h);
                        let an = 2.0 * if part == 0 { g.w[(i, j)].re } else { g.w[(i, j)].im };
                        assert!(rel_err(an, fd) < 1e-4, "inst {inst} w[{i},{j}] part {part}: {an} vs {fd}");
                    }
                }
                let flat = t.pa.to_flat();
                for (idx, an) in [(j, g.source[j]), (2 + j, g.relays[0][j])] {
                    let mut p = flat.clone();
                    let mut m = flat.clone();
                    p[idx] += h;
                    m[idx] -= h;
                    let fd = (t.objective(&t.w, &t.pa.with_flat(&p), j, rho)
                        - t.objective(&t.w, &t.pa.with_flat(&m), j, rho))
                        / (2.0 * h);
                    assert!(rel_err(2.0 * an, fd) < 1e-4, "inst {inst} a[{idx}]: {} vs {fd}", 2.0 * an);
                }
            }
        }
    }

    #[test]
    fn zero_filter_is_rejected() {
        let t = Instance::new(0, 3);
        let mut w = t.w.clone();
        w.column_mut(1).fill(Complex64::new(0.0, 0.0));
        assert!(matches!(
            mber_gradients(&w, &t.block(&t.pa), &t.ch, &t.pa, &t.cfg, 0.3),
            Err(Error::SingularFilter(1))
        ));
    }

    #[test]
    fn zero_steps_only_advance_the_counter() {
        let t = Instance::new(1, 5);
        let cfg = t.cfg.clone();
        let st = OptimizerState::initial(&cfg).unwrap().with_steps(0.0, 0.0, 0.0);
        let next = sg_mber_step(&st, &t.block(&st.pa), &t.ch, &cfg).unwrap();
        assert_eq!(next.iter, 1);
        assert_eq!(next.w, st.w);
        for (a, b) in next.pa.to_flat().iter().zip(st.pa.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_ber_trends_down() {
        let cfg = SystemConfig { sigma_n2: 0.3, ..SystemConfig::default() };
        let mut rng = stream_rng(52, &[]);
        let ch = draw_channel_set(&cfg, &mut rng);
        let mut st = OptimizerState::initial(&cfg).unwrap().with_steps(0.05, 0.01, 0.01);
        let rho = kernel_width(10, cfg.sigma_real());
        let mut trace = Vec::new();
        for _ in 0..500 {
            let model = effective_model(&ch, &st.pa, &cfg).unwrap();
            let samples = (0..10)
                .map(|_| {
                    let s = bpsk_symbols(2, &mut rng);
                    ReceivedBlock { r: model.sample_received(&s, &mut rng), s_true: s }
                })
                .collect();
            let block = TrainingBlock::new(samples).unwrap();
            trace.push(kernel_density_ber(&st.w, &block, rho).unwrap().mean);
            st = sg_mber_step(&st, &block, &ch, &cfg).unwrap();
            assert!(st.pa.constraint_error(cfg.p_t, cfg.p_r) < 1e-10);
        }
        let first: f64 = trace[..100].iter().sum();
        let last: f64 = trace[400..].iter().sum();
        assert!(last < first, "{last} vs {first}");
    }
}
