//! Fixed-precision crystal text encoding (format v1).
//!
//! ```text
//! 5.0 5.0 5.0        lattice lengths, one decimal
//! 90 90 90           lattice angles, integers
//! Na                 element symbol, one line per site
//! 0.00 0.00 0.00     fractional coordinates, two decimals, in [0.00, 1.00)
//! ```
//!
//! Lines are joined with single `\n` and there is no trailing newline.
//! Rounding is to nearest, ties to even; a coordinate that rounds to 1.00
//! is written as 0.00.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crystal::{format_fixed, Crystal, Lattice, Site};

pub const FORMAT_VERSION: u32 = 1;
pub const LENGTH_DECIMALS: usize = 1;
pub const COORD_DECIMALS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedCrystal(String);

impl EncodedCrystal {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for EncodedCrystal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for EncodedCrystal {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct DecodeError {
    /// 1-based; 0 when the error concerns the whole text.
    pub line: usize,
    pub reason: String,
}

fn fail<T>(line: usize, reason: impl Into<String>) -> Result<T, DecodeError> {
    Err(DecodeError { line, reason: reason.into() })
}

fn coordinate_token(v: f64) -> String {
    let s = format_fixed(v, COORD_DECIMALS);
    if s == "1.00" {
        "0.00".to_string()
    } else {
        s
    }
}

pub fn encode(crystal: &Crystal) -> EncodedCrystal {
    let [a, b, c, alpha, beta, gamma] = crystal.lattice.parameters();
    let mut lines = Vec::with_capacity(2 + 2 * crystal.num_sites());
    lines.push(
        [a, b, c]
            .map(|v| format_fixed(v, LENGTH_DECIMALS))
            .join(" "),
    );
    lines.push([alpha, beta, gamma].map(|v| format_fixed(v, 0)).join(" "));
    for site in crystal.sites() {
        lines.push(site.element.clone());
        lines.push(site.frac().map(coordinate_token).join(" "));
    }
    EncodedCrystal(lines.join("\n"))
}

fn parse_decimal(tok: &str, line: usize) -> Result<f64, DecodeError> {
    let well_formed = !tok.is_empty()
        && tok.chars().all(|c| c.is_ascii_digit() || c == '.')
        && tok.chars().filter(|&c| c == '.').count() <= 1
        && tok.chars().any(|c| c.is_ascii_digit());
    if !well_formed {
        return fail(line, format!("unparsable number {tok:?}"));
    }
    tok.parse::<f64>().or_else(|_| fail(line, format!("unparsable number {tok:?}")))
}

fn triple(line_text: &str, line: usize, what: &str) -> Result<[f64; 3], DecodeError> {
    let toks: Vec<&str> = line_text.split(' ').collect();
    if toks.len() != 3 {
        return fail(line, format!("expected 3 {what}, found {} tokens", toks.len()));
    }
    Ok([
        parse_decimal(toks[0], line)?,
        parse_decimal(toks[1], line)?,
        parse_decimal(toks[2], line)?,
    ])
}

/// Strict inverse of [`encode`]. Unknown element symbols are kept (see
/// [`Crystal::unknown_elements`]); structural deviations are errors.
pub fn decode(text: &str) -> Result<Crystal, DecodeError> {
    let body = text.trim_end();
    if body.is_empty() {
        return fail(0, "empty text");
    }
    let lines: Vec<&str> = body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    if lines.len() < 4 {
        return fail(lines.len(), "need lattice lengths, angles and at least one site");
    }
    if lines.len() % 2 != 0 {
        return fail(lines.len(), "site without a coordinate line");
    }

    let lengths = triple(lines[0], 1, "lattice lengths")?;
    for tok in lines[1].split(' ') {
        if tok.is_empty() || tok.len() > 3 || !tok.chars().all(|c| c.is_ascii_digit()) {
            return fail(2, format!("angle {tok:?} is not a 1-3 digit integer"));
        }
    }
    let angles = triple(lines[1], 2, "lattice angles")?;
    let lattice = Lattice::new(lengths[0], lengths[1], lengths[2], angles[0], angles[1], angles[2])
        .or_else(|e| fail(1, e.to_string()))?;

    let mut sites = Vec::with_capacity((lines.len() - 2) / 2);
    for (k, pair) in lines[2..].chunks(2).enumerate() {
        let element_line = 3 + 2 * k;
        let element = pair[0];
        if element.is_empty() || !element.chars().all(|c| c.is_ascii_alphabetic()) {
            return fail(element_line, format!("bad element token {element:?}"));
        }
        let frac = triple(pair[1], element_line + 1, "coordinates")?;
        for v in frac {
            if v > 1.0 {
                return fail(element_line + 1, format!("coordinate {v} outside [0, 1]"));
            }
        }
        // 1.00 wraps to 0.00 inside Site::new
        sites.push(Site::new(element, frac).or_else(|e| fail(element_line + 1, e.to_string()))?);
    }
    Crystal::new(lattice, sites).or_else(|e| fail(0, e.to_string()))
}

/// Applies encode-level precision: lengths to 1 decimal, angles to integers,
/// coordinates to 2 decimals (wrapped).
pub fn quantize(crystal: &Crystal) -> Result<Crystal, DecodeError> {
    decode(encode(crystal).as_str())
}
