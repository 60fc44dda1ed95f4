//! Per-dimension normalization of point data.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Maps every dimension onto `[0, 1]`.
    MinMax,
    /// Zero mean, unit population standard deviation.
    ZScore,
}

impl NormalizeMode {
    pub const ALL: [NormalizeMode; 2] = [NormalizeMode::MinMax, NormalizeMode::ZScore];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizeMode::MinMax => "minmax",
            NormalizeMode::ZScore => "zscore",
        }
    }
}

impl std::str::FromStr for NormalizeMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        NormalizeMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::InvalidParameter(format!("unknown normalization `{s}`")))
    }
}

/// Normalizes the columns of a row-major `n × d` matrix. Constant
/// dimensions map to 0 in both modes.
pub fn normalize(values: &[f32], n: usize, d: usize, mode: NormalizeMode) -> Vec<f32> {
    assert_eq!(values.len(), n * d);
    let mut out = vec![0.0f32; values.len()];
    for c in 0..d {
        let col = || (0..n).map(|r| values[r * d + c] as f64);
        let (offset, scale) = match mode {
            NormalizeMode::MinMax => {
                let lo = col().fold(f64::INFINITY, f64::min);
                let hi = col().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
            NormalizeMode::ZScore => {
                let mean = col().sum::<f64>() / n as f64;
                let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                (mean, var.sqrt())
            }
        };
        if scale > 0.0 && scale.is_finite() {
            for r in 0..n {
                out[r * d + c] = ((values[r * d + c] as f64 - offset) / scale) as f32;
            }
        }
    }
    out
}
