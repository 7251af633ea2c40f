use std::collections::VecDeque;

use log::{debug, info};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feedback::{perturb_pa, quantize_pa, FeedbackErrorModel, QuantizerSpec};
use crate::japa::{
    mmse_closed_form_iterate, normalize_power, sg_mber_step, sg_mmse_step, sg_msr_step, Algorithm, OptimizerState, TrainingBlock,
};
use crate::model::{bpsk_symbols, draw_channel_set, epa_init, stream_rng, ChannelSet, CMatrix, PowerAllocation, SystemConfig};
use crate::transceiver::{
    effective_model, instantaneous_snr, linear_detect, mmse_receive_filter, snr_forms_for_model, sum_rate,
    EffectiveModel, MlDetector, ReceivedBlock, DEFAULT_ML_CAP,
};

use super::{CurvePoint, Detector, ExperimentKind, ExperimentSpec, ResultTable};

const TAG_CHANNEL: u64 = 0;
const TAG_TRAIN: u64 = 1;
const TAG_PAYLOAD: u64 = 2;
const TAG_FEEDBACK: u64 = 3;
const TAG_CALIBRATION: u64 = u64::MAX;

/// Noise level that puts the equal-allocation received SNR on target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub target_db: f64,
    pub sigma_n2: f64,
    pub measured_db: f64,
}

fn mean_epa_snr(cfg: &SystemConfig, channels: &[ChannelSet], sigma_n2: f64) -> Result<f64> {
    let cfg = SystemConfig { sigma_n2, ..cfg.clone() };
    let pa = epa_init(&cfg);
    let mut sum = 0.0;
    for ch in channels {
        let model = effective_model(ch, &pa, &cfg)?;
        let w = mmse_receive_filter(&model, cfg.sigma_s2)?;
        sum += snr_forms_for_model(&w, &model, ch, &pa, cfg.sigma_s2)?.direct;
    }
    Ok(sum / channels.len() as f64)
}

/// Solves for `σ²` by bisection on `log σ²` so that the average
/// instantaneous SNR of equal allocation with the MMSE filter, over a fixed
/// set of calibration channels, is within 0.05 dB of `target_db`.
pub fn calibrate_noise(cfg: &SystemConfig, target_db: f64, channels: usize) -> Result<Calibration> {
    let mut rng = stream_rng(cfg.seed, &[TAG_CALIBRATION]);
    let set: Vec<ChannelSet> = (0..channels).map(|_| draw_channel_set(cfg, &mut rng)).collect();
    let db = |log_s: f64| -> Result<f64> { Ok(10.0 * mean_epa_snr(cfg, &set, 10f64.powf(log_s))?.log10()) };
    let (mut lo, mut hi) = (-8.0f64, 8.0f64);
    if db(lo)? < target_db || db(hi)? > target_db {
        return Err(Error::InvalidConfig(format!("target SNR {target_db} dB is out of the calibratable range")));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if db(mid)? > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let log_s = 0.5 * (lo + hi);
    let measured_db = db(log_s)?;
    if (measured_db - target_db).abs() > 0.05 {
        return Err(Error::InvalidConfig(format!(
            "SNR calibration missed {target_db} dB (reached {measured_db} dB)"
        )));
    }
    debug!("calibrated {target_db} dB: sigma_n2 = {:.6e}", 10f64.powf(log_s));
    Ok(Calibration { target_db, sigma_n2: 10f64.powf(log_s), measured_db })
}

/// Quantization and error applied to every allocation sent back to the
/// transmitters, which rescale what they receive to their power budgets.
#[derive(Debug, Clone, Copy)]
struct FeedbackPath {
    quantizer: Option<QuantizerSpec>,
    error: FeedbackErrorModel,
}

impl FeedbackPath {
    fn apply<R: Rng + ?Sized>(&self, pa: &PowerAllocation, cfg: &SystemConfig, rng: &mut R) -> Result<PowerAllocation> {
        let q = match &self.quantizer {
            Some(q) => quantize_pa(pa, q).pa,
            None => pa.clone(),
        };
        normalize_power(&perturb_pa(&q, &self.error, rng), cfg.p_t, cfg.p_r)
    }
}

/// Adaptation state of one algorithm within one channel realization.
struct Adapter<'a> {
    alg: Algorithm,
    spec: &'a ExperimentSpec,
    cfg: &'a SystemConfig,
    channels: &'a ChannelSet,
    state: OptimizerState,
    window: VecDeque<ReceivedBlock>,
    /// LMS receive filter for schemes without a symbol-driven filter.
    lms: Option<OptimizerState>,
}

impl<'a> Adapter<'a> {
    fn new(alg: Algorithm, spec: &'a ExperimentSpec, cfg: &'a SystemConfig, channels: &'a ChannelSet) -> Result<Self> {
        let steps = spec.steps_for(alg);
        let mut state = OptimizerState::initial(cfg)?.with_steps(steps.mu, steps.nu, steps.tau);
        match alg {
            Algorithm::Epa => {
                state.w = mmse_receive_filter(&effective_model(channels, &state.pa, cfg)?, cfg.sigma_s2)?;
            }
            Algorithm::MmseClosedForm => {
                state = mmse_closed_form_iterate(&state, channels, cfg, spec.closed_form_iters)?;
            }
            _ => {}
        }
        Ok(Self { alg, spec, cfg, channels, state, window: VecDeque::new(), lms: None })
    }

    /// Consumes one received vector with its reference symbols.
    fn adapt(&mut self, block: ReceivedBlock) -> Result<()> {
        match self.alg {
            Algorithm::MmseSg => self.state = sg_mmse_step(&self.state, &block, self.channels, self.cfg)?,
            Algorithm::MberSg => {
                self.window.push_back(block);
                while self.window.len() > self.spec.mber_window {
                    self.window.pop_front();
                }
                let tb = TrainingBlock::new(self.window.iter().cloned().collect())?;
                self.state = sg_mber_step(&self.state, &tb, self.channels, self.cfg)?;
            }
            Algorithm::MsrSg => self.state = sg_msr_step(&self.state, self.channels, self.cfg)?,
            Algorithm::Epa | Algorithm::MmseClosedForm => {}
        }
        Ok(())
    }

    /// Linear filter used for symbol-by-symbol detection while adapting.
    fn adapt_lms(&mut self, block: &ReceivedBlock) -> Result<()> {
        if matches!(self.alg, Algorithm::MmseSg | Algorithm::MberSg) {
            return Ok(());
        }
        let lms = match self.lms.take() {
            Some(l) => l,
            None => {
                let steps = self.spec.steps_for(Algorithm::MmseSg);
                let mut l = self.state.clone().with_steps(steps.mu, 0.0, 0.0);
                l.w = OptimizerState::initial(self.cfg)?.w;
                l
            }
        };
        let mut next = sg_mmse_step(&OptimizerState { pa: self.state.pa.clone(), ..lms }, block, self.channels, self.cfg)?;
        next.pa = self.state.pa.clone();
        self.lms = Some(next);
        Ok(())
    }

    fn tracking_filter(&self) -> Result<CMatrix> {
        match (self.alg, &self.lms) {
            (Algorithm::MmseSg | Algorithm::MberSg, _) => Ok(self.state.w.clone()),
            (_, Some(l)) => Ok(l.w.clone()),
            (_, None) => Ok(OptimizerState::initial(self.cfg)?.w),
        }
    }
}

fn draw_block<R: Rng + ?Sized>(model: &EffectiveModel, n: usize, rng: &mut R) -> ReceivedBlock {
    let s = bpsk_symbols(n, rng);
    ReceivedBlock { r: model.sample_received(&s, rng), s_true: s }
}

/// Supervised training over `training_len` blocks.
fn train<'a>(
    alg: Algorithm,
    spec: &'a ExperimentSpec,
    cfg: &'a SystemConfig,
    channels: &'a ChannelSet,
    feedback: Option<&FeedbackPath>,
    point: u64,
    trial: u64,
) -> Result<Adapter<'a>> {
    let mut ad = Adapter::new(alg, spec, cfg, channels)?;
    let mut rng = stream_rng(cfg.seed, &[point, trial, TAG_TRAIN]);
    let mut fb_rng = stream_rng(cfg.seed, &[point, trial, TAG_FEEDBACK]);
    if alg.is_stochastic_gradient() {
        for _ in 0..spec.training_len {
            let tx = match feedback {
                Some(f) => f.apply(&ad.state.pa, cfg, &mut fb_rng)?,
                None => ad.state.pa.clone(),
            };
            let model = effective_model(channels, &tx, cfg)?;
            let block = draw_block(&model, cfg.n, &mut rng);
            ad.adapt(block)?;
        }
    }
    Ok(ad)
}

struct Tally {
    errors: u64,
    bits: u64,
}

enum Receiver {
    Ml(MlDetector),
    Linear(CMatrix),
}

impl Receiver {
    fn new(detector: Detector, model: &EffectiveModel, sigma_s2: f64) -> Result<Self> {
        Ok(match detector {
            Detector::Ml => Receiver::Ml(MlDetector::new(model, DEFAULT_ML_CAP)?),
            Detector::Mmse => Receiver::Linear(mmse_receive_filter(model, sigma_s2)?),
        })
    }

    fn detect(&self, r: &crate::model::CVector) -> Vec<f64> {
        match self {
            Receiver::Ml(d) => d.detect(r),
            Receiver::Linear(w) => linear_detect(w, r),
        }
    }
}

/// Train on one realization, then count payload bit errors. The receiver
/// is built from the allocation the destination computed; the transmitters
/// use what they received over the feedback path.
fn ber_trial(
    alg: Algorithm,
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    feedback: Option<&FeedbackPath>,
    point: u64,
    trial: u64,
) -> Result<Tally> {
    let channels = draw_channel_set(cfg, &mut stream_rng(cfg.seed, &[point, trial, TAG_CHANNEL]));
    let mut ad = train(alg, spec, cfg, &channels, feedback, point, trial)?;
    let mut rng = stream_rng(cfg.seed, &[point, trial, TAG_PAYLOAD]);
    let mut fb_rng = stream_rng(cfg.seed, &[point, trial, TAG_FEEDBACK, 1]);
    let fed_back = |pa: &PowerAllocation, rng: &mut rand_chacha::ChaCha8Rng| match feedback {
        Some(f) => f.apply(pa, cfg, rng),
        None => Ok(pa.clone()),
    };
    let mut nominal = effective_model(&channels, &ad.state.pa, cfg)?;
    let mut tx = effective_model(&channels, &fed_back(&ad.state.pa, &mut fb_rng)?, cfg)?;
    let mut rx = Receiver::new(spec.detector, &nominal, cfg.sigma_s2)?;
    let mut tally = Tally { errors: 0, bits: 0 };
    for _ in 0..spec.payload_len {
        let block = draw_block(&tx, cfg.n, &mut rng);
        let decided = rx.detect(&block.r);
        tally.errors += decided.iter().zip(&block.s_true).filter(|(a, b)| a != b).count() as u64;
        tally.bits += cfg.n as u64;
        if spec.decision_directed && alg.is_stochastic_gradient() {
            ad.adapt(ReceivedBlock { r: block.r, s_true: decided })?;
            nominal = effective_model(&channels, &ad.state.pa, cfg)?;
            tx = effective_model(&channels, &fed_back(&ad.state.pa, &mut fb_rng)?, cfg)?;
            rx = Receiver::new(spec.detector, &nominal, cfg.sigma_s2)?;
        }
    }
    Ok(tally)
}

/// Runs trials in fixed-size chunks until `trials` realizations are done or,
/// once `min_blocks` payload vectors have been seen, `max_errors` errors
/// have accumulated. Chunks are evaluated in parallel and reduced in order.
fn ber_point(
    alg: Algorithm,
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    feedback: Option<&FeedbackPath>,
    point: u64,
) -> Result<(u64, u64, u64)> {
    let mut errors = 0u64;
    let mut bits = 0u64;
    let mut done = 0usize;
    while done < spec.trials {
        let end = (done + spec.chunk).min(spec.trials);
        let tallies: Vec<Result<Tally>> = (done..end)
            .into_par_iter()
            .map(|t| ber_trial(alg, spec, cfg, feedback, point, t as u64))
            .collect();
        for t in tallies {
            let t = t?;
            errors += t.errors;
            bits += t.bits;
        }
        done = end;
        let blocks = done * spec.payload_len;
        if errors >= spec.max_errors && blocks >= spec.min_blocks {
            break;
        }
    }
    Ok((errors, bits, done as u64))
}

fn binomial_point(algorithm: String, x: f64, errors: u64, bits: u64, trials: u64) -> CurvePoint {
    let p = if bits == 0 { 0.0 } else { errors as f64 / bits as f64 };
    let se = if bits == 0 { 0.0 } else { (p * (1.0 - p) / bits as f64).sqrt() };
    CurvePoint { algorithm, x, y: p, y_stderr: se, trials }
}

fn calibrated(spec: &ExperimentSpec, target_db: f64) -> Result<(SystemConfig, Calibration)> {
    let cal = calibrate_noise(&spec.cfg, target_db, spec.calibration_channels)?;
    Ok((SystemConfig { sigma_n2: cal.sigma_n2, ..spec.cfg.clone() }, cal))
}

/// BER versus received SNR for each algorithm.
pub fn run_ber_vs_snr(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let mut points = Vec::new();
    for (p, &target) in spec.snr_grid_db.iter().enumerate() {
        let (cfg, cal) = calibrated(spec, target)?;
        for &alg in &spec.algorithms {
            let (errors, bits, trials) = ber_point(alg, spec, &cfg, None, p as u64)?;
            info!("{alg} at {:.2} dB: {errors}/{bits} errors over {trials} realizations", cal.measured_db);
            points.push(binomial_point(alg.name().to_string(), cal.measured_db, errors, bits, trials));
        }
    }
    let mut table = ResultTable { experiment: ExperimentKind::BerVsSnr, seed: spec.cfg.seed, points };
    table.sort();
    Ok(table)
}

/// Curve label of a feedback configuration.
pub(crate) fn feedback_label(alg: Algorithm, bits: Option<u32>) -> String {
    match bits {
        Some(b) => format!("{}/{b}-bit", alg.name()),
        None => format!("{}/perfect", alg.name()),
    }
}

/// BER versus SNR with the allocation fed back through a `b`-bit quantizer
/// and an additive error, for each configured bit width, plus a
/// perfect-feedback reference.
pub fn run_feedback_bits(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let error = FeedbackErrorModel::new(spec.sigma_f)?;
    let mut variants: Vec<(Option<u32>, Option<FeedbackPath>)> = vec![(None, None)];
    for &b in &spec.feedback_bits {
        let q = QuantizerSpec::for_config(b, &spec.cfg)?;
        variants.push((Some(b), Some(FeedbackPath { quantizer: Some(q), error })));
    }
    let mut points = Vec::new();
    for (p, &target) in spec.snr_grid_db.iter().enumerate() {
        let (cfg, cal) = calibrated(spec, target)?;
        for &alg in &spec.algorithms {
            for (bits, path) in &variants {
                let (errors, nbits, trials) = ber_point(alg, spec, &cfg, path.as_ref(), p as u64)?;
                points.push(binomial_point(feedback_label(alg, *bits), cal.measured_db, errors, nbits, trials));
            }
        }
    }
    let mut table = ResultTable { experiment: ExperimentKind::FeedbackBits, seed: spec.cfg.seed, points };
    table.sort();
    Ok(table)
}

/// Average sum rate after training. Equal allocation and the closed-form
/// design use the MMSE filter; the adaptive schemes use their own filter.
pub fn run_sum_rate(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let mut points = Vec::new();
    for (p, &target) in spec.snr_grid_db.iter().enumerate() {
        let (cfg, cal) = calibrated(spec, target)?;
        for &alg in &spec.algorithms {
            let rates: Vec<Result<f64>> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let channels = draw_channel_set(&cfg, &mut stream_rng(cfg.seed, &[p as u64, t as u64, TAG_CHANNEL]));
                    let ad = train(alg, spec, &cfg, &channels, None, p as u64, t as u64)?;
                    let w = if alg.is_stochastic_gradient() {
                        ad.state.w.clone()
                    } else {
                        mmse_receive_filter(&effective_model(&channels, &ad.state.pa, &cfg)?, cfg.sigma_s2)?
                    };
                    sum_rate(instantaneous_snr(&w, &channels, &ad.state.pa, &cfg)?)
                })
                .collect();
            let rates = rates.into_iter().collect::<Result<Vec<f64>>>()?;
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let var = if rates.len() > 1 {
                rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            points.push(CurvePoint {
                algorithm: alg.name().to_string(),
                x: cal.measured_db,
                y: mean,
                y_stderr: (var / n).sqrt(),
                trials: rates.len() as u64,
            });
        }
    }
    let mut table = ResultTable { experiment: ExperimentKind::SumRate, seed: spec.cfg.seed, points };
    table.sort();
    Ok(table)
}

/// Per-symbol BER from a cold start. Each received vector is detected with
/// the current linear filter, then used as a pilot. Schemes whose own
/// update does not produce a detection filter are paired with an LMS
/// filter.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let (cfg, _) = calibrated(spec, spec.snr_db)?;
    let mut points = Vec::new();
    for &alg in &spec.algorithms {
        let per_trial: Vec<Result<Vec<u64>>> = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let channels = draw_channel_set(&cfg, &mut stream_rng(cfg.seed, &[0, t as u64, TAG_CHANNEL]));
                let mut ad = Adapter::new(alg, spec, &cfg, &channels)?;
                let mut rng = stream_rng(cfg.seed, &[0, t as u64, TAG_TRAIN]);
                let mut errs = Vec::with_capacity(spec.symbols);
                for _ in 0..spec.symbols {
                    let model = effective_model(&channels, &ad.state.pa, &cfg)?;
                    let block = draw_block(&model, cfg.n, &mut rng);
                    let decided = linear_detect(&ad.tracking_filter()?, &block.r);
                    errs.push(decided.iter().zip(&block.s_true).filter(|(a, b)| a != b).count() as u64);
                    ad.adapt_lms(&block)?;
                    ad.adapt(block)?;
                }
                Ok(errs)
            })
            .collect();
        let mut totals = vec![0u64; spec.symbols];
        for errs in per_trial {
            for (tot, e) in totals.iter_mut().zip(errs?) {
                *tot += e;
            }
        }
        let bits = (spec.trials * cfg.n) as u64;
        for (i, &e) in totals.iter().enumerate() {
            points.push(binomial_point(alg.name().to_string(), (i + 1) as f64, e, bits, spec.trials as u64));
        }
    }
    let mut table = ResultTable { experiment: ExperimentKind::Convergence, seed: spec.cfg.seed, points };
    table.sort();
    Ok(table)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    match spec.experiment {
        ExperimentKind::BerVsSnr => run_ber_vs_snr(spec),
        ExperimentKind::FeedbackBits => run_feedback_bits(spec),
        ExperimentKind::SumRate => run_sum_rate(spec),
        ExperimentKind::Convergence => run_convergence(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_hits_target() {
        let cfg = SystemConfig::default();
        for target in [0.0, 7.5, 15.0] {
            let cal = calibrate_noise(&cfg, target, 50).unwrap();
            assert!((cal.measured_db - target).abs() < 0.05);
            assert!(cal.sigma_n2 > 0.0);
        }
        let lo = calibrate_noise(&cfg, 0.0, 50).unwrap().sigma_n2;
        let hi = calibrate_noise(&cfg, 10.0, 50).unwrap().sigma_n2;
        assert!(hi < lo);
    }

    fn small(kind: ExperimentKind) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(kind);
        spec.trials = 8;
        spec.chunk = 4;
        spec.training_len = 20;
        spec.payload_len = 5;
        spec.min_blocks = 0;
        spec.calibration_channels = 20;
        spec.snr_grid_db = vec![0.0, 10.0];
        spec.symbols = 30;
        spec
    }

    #[test]
    fn noise_dominated_ber_is_one_half() {
        let mut spec = small(ExperimentKind::BerVsSnr);
        spec.snr_grid_db = vec![-40.0];
        spec.trials = 100;
        spec.chunk = 100;
        let table = run_ber_vs_snr(&spec).unwrap();
        for p in &table.points {
            assert!((p.y - 0.5).abs() < 3.0 * p.y_stderr.max(0.005) + 0.01, "{p:?}");
        }
    }

    #[test]
    fn results_do_not_depend_on_chunking() {
        let mut a = small(ExperimentKind::BerVsSnr);
        a.max_errors = u64::MAX;
        let mut b = a.clone();
        b.chunk = 3;
        assert_eq!(run_ber_vs_snr(&a).unwrap(), run_ber_vs_snr(&b).unwrap());
    }

    #[test]
    fn every_experiment_runs() {
        for kind in [
            ExperimentKind::BerVsSnr,
            ExperimentKind::FeedbackBits,
            ExperimentKind::SumRate,
            ExperimentKind::Convergence,
        ] {
            let mut spec = small(kind);
            if kind != ExperimentKind::FeedbackBits {
                spec.algorithms = Algorithm::ALL.to_vec();
            }
            let table = run_experiment(&spec).unwrap();
            assert!(!table.points.is_empty());
            for p in &table.points {
                assert!(p.y.is_finite() && p.y_stderr >= 0.0);
            }
        }
    }

    #[test]
    fn divergence_surfaces() {
        let mut spec = small(ExperimentKind::BerVsSnr);
        spec.algorithms = vec![Algorithm::MmseSg];
        spec.step_overrides.insert(
            Algorithm::MmseSg,
            super::super::Steps { mu: 1e300, nu: 1e300, tau: 1e300 },
        );
        match run_ber_vs_snr(&spec) {
            Err(Error::Divergence { algorithm, .. }) => assert_eq!(algorithm, "JAPA-MMSE-SG"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
