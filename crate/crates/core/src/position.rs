//! Positional-information kernels: sinusoidal tables, ALiBi biases, and
//! rotary query/key rotations.
//!
//! All three are generated on demand for any sequence length. Nothing here
//! is keyed to a training length.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Matrix;

pub const DEFAULT_ROPE_BASE: f64 = 10000.0;
const SINUSOID_BASE: f64 = 10000.0;

#[derive(Debug, Error, PartialEq)]
pub enum PositionError {
    #[error("dimension {0} must be even")]
    OddDimension(usize),
    #[error("slope list must be non-empty")]
    NoSlopes,
    #[error("rotary base must be greater than 1, got {0}")]
    InvalidBase(f64),
    #[error("unknown positional scheme {0:?} (expected sape, alibi or rope)")]
    UnknownScheme(String),
    #[error("cannot parse ALiBi slope {0:?}")]
    BadSlope(String),
}

/// Scheme names as they appear in configs, CLIs and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Sape,
    Alibi,
    Rope,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Sape, SchemeKind::Alibi, SchemeKind::Rope];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Sape => "sape",
            SchemeKind::Alibi => "alibi",
            SchemeKind::Rope => "rope",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = PositionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sape" | "sinusoidal" => Ok(SchemeKind::Sape),
            "alibi" => Ok(SchemeKind::Alibi),
            "rope" | "rotary" => Ok(SchemeKind::Rope),
            _ => Err(PositionError::UnknownScheme(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PositionalScheme {
    Sinusoidal,
    /// One slope per head, added as `slope * |i - j|` to attention scores.
    Alibi {
        slopes: Vec<f64>,
    },
    Rotary {
        base: f64,
    },
}

impl PositionalScheme {
    /// Resolves a scheme name with default parameters for `num_heads` heads.
    pub fn with_defaults(kind: SchemeKind, num_heads: usize) -> Self {
        match kind {
            SchemeKind::Sape => Self::Sinusoidal,
            SchemeKind::Alibi => Self::Alibi {
                slopes: default_alibi_slopes(num_heads),
            },
            SchemeKind::Rope => Self::Rotary {
                base: DEFAULT_ROPE_BASE,
            },
        }
    }

    pub fn kind(&self) -> SchemeKind {
        match self {
            Self::Sinusoidal => SchemeKind::Sape,
            Self::Alibi { .. } => SchemeKind::Alibi,
            Self::Rotary { .. } => SchemeKind::Rope,
        }
    }
}

/// Parses a comma-separated slope override such as `-0.5,-0.25`.
pub fn parse_slopes(text: &str) -> Result<Vec<f64>, PositionError> {
    let slopes = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PositionError::BadSlope(s.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if slopes.is_empty() {
        return Err(PositionError::NoSlopes);
    }
    Ok(slopes)
}

#[inline]
fn frequency(base: f64, pair: usize, dim: usize) -> f64 {
    base.powf(-((2 * pair) as f64) / dim as f64)
}

/// `(pos, 2i) = sin(pos / 10000^(2i/d))`, `(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn sinusoid_table(max_len: usize, d_model: usize) -> Result<Matrix, PositionError> {
    if !d_model.is_multiple_of(2) {
        return Err(PositionError::OddDimension(d_model));
    }
    let freqs: Vec<f64> = (0..d_model / 2)
        .map(|i| frequency(SINUSOID_BASE, i, d_model))
        .collect();
    let mut table = Matrix::zeros(max_len, d_model);
    for pos in 0..max_len {
        let row = table.row_mut(pos);
        for (i, f) in freqs.iter().enumerate() {
            let angle = pos as f64 * f;
            row[2 * i] = angle.sin();
            row[2 * i + 1] = angle.cos();
        }
    }
    Ok(table)
}

/// `m_h = -2^(-8h/H)` for `h = 1..=H`.
pub fn default_alibi_slopes(num_heads: usize) -> Vec<f64> {
    (1..=num_heads)
        .map(|h| -(2f64).powf(-8.0 * h as f64 / num_heads as f64))
        .collect()
}

/// One `seq_len x seq_len` matrix per slope with entries `slope * |i - j|`.
pub fn alibi_bias(seq_len: usize, slopes: &[f64]) -> Result<Vec<Matrix>, PositionError> {
    if slopes.is_empty() {
        return Err(PositionError::NoSlopes);
    }
    Ok(slopes
        .iter()
        .map(|&m| Matrix::from_fn(seq_len, seq_len, |i, j| m * i.abs_diff(j) as f64))
        .collect())
}

/// Rotates each adjacent pair `(x[2i], x[2i+1])` by `pos / base^(2i/d)`.
pub fn rope_rotate(vec: &[f64], pos: usize, base: f64) -> Result<Vec<f64>, PositionError> {
    let mut out = vec.to_vec();
    rope_rotate_in_place(&mut out, pos, base, false)?;
    Ok(out)
}

/// In-place rotation; `inverse` rotates by the negated angles.
pub fn rope_rotate_in_place(
    x: &mut [f64],
    pos: usize,
    base: f64,
    inverse: bool,
) -> Result<(), PositionError> {
    let d = x.len();
    if !d.is_multiple_of(2) {
        return Err(PositionError::OddDimension(d));
    }
    if !(base > 1.0) {
        return Err(PositionError::InvalidBase(base));
    }
    let sign = if inverse { -1.0 } else { 1.0 };
    for i in 0..d / 2 {
        let theta = pos as f64 * frequency(base, i, d);
        let (s, c) = (sign * theta).sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = c * a - s * b;
        x[2 * i + 1] = s * a + c * b;
    }
    Ok(())
}

/// Cosine/sine tables for rotating `head_dim`-wide vectors at positions
/// `0..seq_len`; used by the encoder to avoid recomputing angles per head.
#[derive(Clone, Debug)]
pub(crate) struct RopeTable {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub(crate) fn new(seq_len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq_len * half);
        let mut sin = Vec::with_capacity(seq_len * half);
        for pos in 0..seq_len {
            for i in 0..half {
                let (s, c) = (pos as f64 * frequency(base, i, head_dim)).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates every row of `m` (row index = position).
    pub(crate) fn apply(&self, m: &mut Matrix, inverse: bool) {
        let sign = if inverse { -1.0 } else { 1.0 };
        for pos in 0..m.rows() {
            let cs = &self.cos[pos * self.half..(pos + 1) * self.half];
            let sn = &self.sin[pos * self.half..(pos + 1) * self.half];
            let row = m.row_mut(pos);
            for i in 0..self.half {
                let (c, s) = (cs[i], sign * sn[i]);
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                row[2 * i] = c * a - s * b;
                row[2 * i + 1] = s * a + c * b;
            }
        }
    }
}
