//! Distances between concept activations. Inputs are compared positionally as flat vectors
//! (a whole `[N × K]` activation matrix or a single `[N]` concept column).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Cosine,
    Absolute,
    #[serde(alias = "percent")]
    PercentDisagreement,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] =
        [MetricKind::Euclidean, MetricKind::Cosine, MetricKind::Absolute, MetricKind::PercentDisagreement];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::Cosine => "cosine",
            MetricKind::Absolute => "absolute",
            MetricKind::PercentDisagreement => "percentdisagreement",
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            MetricKind::Euclidean => dist_euclidean(a, b),
            MetricKind::Cosine => dist_cosine(a, b),
            MetricKind::Absolute => dist_absolute(a, b),
            MetricKind::PercentDisagreement => dist_percent(a, b),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "euc" => Ok(MetricKind::Euclidean),
            "cosine" | "cos" => Ok(MetricKind::Cosine),
            "absolute" | "abs" => Ok(MetricKind::Absolute),
            "percentdisagreement" | "percent" | "pct" => Ok(MetricKind::PercentDisagreement),
            other => Err(Error::Input(format!("unknown metric {other:?}"))),
        }
    }
}

/// Binarizes an activation; 0.5 rounds up.
#[inline]
pub fn round_activation(v: f64) -> u8 {
    u8::from(v >= 0.5)
}

fn same_shape(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cannot compare {} values with {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn dist_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `1 - cos(a, b)`.
pub fn dist_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    same_shape(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine distance of an all-zero vector".into()));
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok((1.0 - cos).max(0.0))
}

pub fn dist_absolute(a: &[f64], b: &[f64]) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Fraction of entries whose rounded values disagree.
pub fn dist_percent(a: &[f64], b: &[f64]) -> Result<f64> {
    same_shape(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let disagree = a.iter().zip(b).filter(|(x, y)| round_activation(**x) != round_activation(**y)).count();
    Ok(disagree as f64 / a.len() as f64)
}
