use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::ResultTable;

pub const CSV_HEADER: &str = "experiment,algorithm,x,y,y_stderr,trials,seed";

/// `%.12g`: 12 significant digits, trailing zeros removed, exponent form
/// outside `1e-4 ..= 1e12`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (11 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, v)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Writes the table as CSV to any sink, rows sorted by algorithm then `x`.
pub fn write_csv<W: Write>(table: &ResultTable, out: &mut W) -> std::io::Result<()> {
    let mut sorted = table.clone();
    sorted.sort();
    writeln!(out, "{CSV_HEADER}")?;
    for p in &sorted.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            sorted.experiment,
            p.algorithm,
            format_number(p.x),
            format_number(p.y),
            format_number(p.y_stderr),
            p.trials,
            sorted.seed
        )?;
    }
    out.flush()
}

pub fn write_results(table: &ResultTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_csv(table, &mut BufWriter::new(file)).map_err(|e| io_err(path, e))
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub experiment: String,
    pub algorithm: String,
    pub x: f64,
    pub y: f64,
    pub y_stderr: f64,
    pub trials: u64,
    pub seed: u64,
}

pub fn read_results(path: &Path) -> Result<Vec<CsvRow>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |m: String| Error::Io { path: path.display().to_string(), message: m };
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        _ => return Err(bad("missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {}: bad number '{s}'", i + 1)));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("row {}: bad integer '{s}'", i + 1)));
        rows.push(CsvRow {
            experiment: f[0].to_string(),
            algorithm: f[1].to_string(),
            x: num(f[2])?,
            y: num(f[3])?,
            y_stderr: num(f[4])?,
            trials: int(f[5])?,
            seed: int(f[6])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (123456.789, "123456.789"),
            (1e-5, "1e-05"),
            (0.00012345, "0.00012345"),
            (2.0 / 3.0 * 1e-7, "6.66666666667e-08"),
            (1e12, "1e+12"),
            (999999999999.0, "999999999999"),
            (9.9999999999999e-5, "0.0001"),
        ];
        for (v, s) in cases {
            assert_eq!(format_number(v), s, "{v}");
        }
    }

    #[test]
    fn twelve_digits_round_trip() {
        for v in [std::f64::consts::PI, 1.0 / 7.0, 6.02214076e23, -1.602e-19, 0.5] {
            let back: f64 = format_number(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 5e-12);
        }
    }
}
