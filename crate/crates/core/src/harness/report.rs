//! Metrics rows and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "T,max_err,min_err,mean_consensus,max_gradnorm,empirical_G";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: usize,
    pub max_err: f64,
    pub min_err: f64,
    pub mean_consensus: f64,
    pub max_gradnorm: f64,
    pub empirical_g: f64,
}

impl MetricsRow {
    pub fn check(&self) -> Result<()> {
        let values = [
            self.max_err,
            self.min_err,
            self.mean_consensus,
            self.max_gradnorm,
            self.empirical_g,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite metric at T={}: {self:?}",
                self.t
            )));
        }
        if self.max_err < self.min_err {
            return Err(Error::InvalidParameter(format!(
                "max_err < min_err at T={}",
                self.t
            )));
        }
        Ok(())
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.t,
            format_sig(self.max_err),
            format_sig(self.min_err),
            format_sig(self.mean_consensus),
            format_sig(self.max_gradnorm),
            format_sig(self.empirical_g)
        )
    }
}

/// Twelve significant digits, trailing zeros dropped, exponent form outside
/// `[1e-4, 1e12)`; the same output as C's `%.12g`.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn csv_string(rows: &[MetricsRow], metadata: &[String]) -> String {
    let mut out = String::new();
    for line in metadata {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Header and one line per row.
pub fn emit_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    emit_csv_with_metadata(rows, &[], path)
}

/// As [`emit_csv`], preceded by `# `-prefixed comment lines.
pub fn emit_csv_with_metadata(rows: &[MetricsRow], metadata: &[String], path: &Path) -> Result<()> {
    for row in rows {
        row.check()?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(csv_string(rows, metadata).as_bytes())?;
    Ok(())
}

/// `fig2.csv` with label `m30` becomes `fig2_m30.csv`.
pub fn labelled_path(path: &Path, label: &str) -> std::path::PathBuf {
    if label.is_empty() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{label}.{ext}"),
        None => format!("{stem}_{label}"),
    };
    path.with_file_name(name)
}
