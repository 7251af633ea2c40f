use std::path::Path;

use crate::error::{Error, Result};
use crate::japa::Algorithm;

use super::ExperimentSpec;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

/// Builds an evenly spaced grid from `min` to `max` inclusive.
pub fn snr_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "SNR range needs min <= max and step > 0, got {min}..{max} step {step}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| min + step * i as f64).collect())
}

/// Applies one `key = value` setting.
pub fn apply_key(spec: &mut ExperimentSpec, key: &str, value: &str) -> Result<()> {
    let key = key.trim();
    if let Some((kind, alg)) = key.split_once('.') {
        let alg: Algorithm = alg.parse()?;
        let v: f64 = parse(key, value)?;
        let default = spec.steps_for(alg);
        let entry = spec.step_overrides.entry(alg).or_insert(default);
        match kind {
            "mu" => entry.mu = v,
            "nu" => entry.nu = v,
            "tau" => entry.tau = v,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        return Ok(());
    }
    let cfg = &mut spec.cfg;
    match key {
        "n" => cfg.n = parse(key, value)?,
        "b" => cfg.b = parse(key, value)?,
        "relays" | "n_r" => cfg.relays = parse(key, value)?,
        "t" => cfg.t = parse(key, value)?,
        "p_t" => cfg.p_t = parse(key, value)?,
        "p_r" => cfg.p_r = parse(key, value)?,
        "sigma_s2" => cfg.sigma_s2 = parse(key, value)?,
        "sigma_n2" => cfg.sigma_n2 = parse(key, value)?,
        "modulation" => cfg.modulation = parse(key, value)?,
        "mu" | "nu" | "tau" => {
            // a global step size applies to every algorithm
            let v: f64 = parse(key, value)?;
            match key {
                "mu" => cfg.mu = v,
                "nu" => cfg.nu = v,
                _ => cfg.tau = v,
            }
            for s in spec.step_overrides.values_mut() {
                match key {
                    "mu" => s.mu = v,
                    "nu" => s.nu = v,
                    _ => s.tau = v,
                }
            }
        }
        "kernel_scale" => cfg.kernel_scale = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "experiment" => spec.experiment = parse(key, value)?,
        "algorithms" => spec.algorithms = parse_list(key, value)?,
        "snr_grid_db" => spec.snr_grid_db = parse_list(key, value)?,
        "trials" => spec.trials = parse(key, value)?,
        "training_len" => spec.training_len = parse(key, value)?,
        "payload_len" => spec.payload_len = parse(key, value)?,
        "max_errors" => spec.max_errors = parse(key, value)?,
        "chunk" => spec.chunk = parse(key, value)?,
        "min_blocks" => spec.min_blocks = parse(key, value)?,
        "detector" => spec.detector = parse(key, value)?,
        "mber_window" | "m" => spec.mber_window = parse(key, value)?,
        "closed_form_iters" => spec.closed_form_iters = parse(key, value)?,
        "decision_directed" => spec.decision_directed = parse_bool(key, value)?,
        "feedback_bits" => spec.feedback_bits = parse_list(key, value)?,
        "sigma_f" => spec.sigma_f = parse(key, value)?,
        "symbols" => spec.symbols = parse(key, value)?,
        "snr_db" => spec.snr_db = parse(key, value)?,
        "calibration_channels" => spec.calibration_channels = parse(key, value)?,
        "output_path" => spec.output_path = Some(value.trim().into()),
        _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
    }
    Ok(())
}

/// Applies a `key = value` document. Blank lines and `#` comments are
/// ignored. `snr_min`, `snr_max` and `snr_step` must appear together.
pub fn apply_config_str(spec: &mut ExperimentSpec, text: &str) -> Result<()> {
    let mut range = [None; 3];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
        })?;
        match key.trim() {
            "snr_min" => range[0] = Some(parse::<f64>("snr_min", value)?),
            "snr_max" => range[1] = Some(parse::<f64>("snr_max", value)?),
            "snr_step" => range[2] = Some(parse::<f64>("snr_step", value)?),
            k => apply_key(spec, k, value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?,
        }
    }
    match range {
        [None, None, None] => Ok(()),
        [Some(a), Some(b), Some(c)] => {
            spec.snr_grid_db = snr_range(a, b, c)?;
            Ok(())
        }
        _ => Err(Error::InvalidConfig("snr_min, snr_max and snr_step must be given together".into())),
    }
}

pub fn apply_config_file(spec: &mut ExperimentSpec, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    apply_config_str(spec, &text)
}
