// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sample stream readers: line-delimited `x,y` pairs or two single-column files.

use std::io::BufRead;

use crate::CliError;

/// Parses `x,y` lines. Blank lines and `#` comments are skipped, and a
/// non-numeric first line is treated as a header.
pub fn read_pairs(reader: impl BufRead, source: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| CliError::input(format!("{source}: line {lineno}: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(CliError::input(format!(
                "{source}: line {lineno}: expected two comma-separated values, got {line:?}"
            )));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
                xs.push(x);
                ys.push(y);
            }
            _ if lineno == 1 && is_header(a) && is_header(b) => {}
            _ => {
                return Err(CliError::input(format!(
                    "{source}: line {lineno}: not a pair of finite numbers: {line:?}"
                )))
            }
        }
    }
    if xs.is_empty() {
        return Err(CliError::input(format!("{source}: no samples")));
    }
    Ok((xs, ys))
}

/// Single-column CSV as written by `simulate`.
pub fn read_column(reader: impl BufRead, source: &str) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| CliError::input(format!("{source}: line {lineno}: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if lineno == 1 && is_header(line) => {}
            _ => {
                return Err(CliError::input(format!(
                    "{source}: line {lineno}: not a finite number: {line:?}"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::input(format!("{source}: no samples")));
    }
    Ok(out)
}

fn is_header(field: &str) -> bool {
    field.parse::<f64>().is_err() && field.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
}
