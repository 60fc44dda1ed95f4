//! The built-in 1D color maps every view can rely on.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMapName {
    Viridis,
    Plasma,
    Grayscale,
    Coolwarm,
}

// Control points sampled from the reference maps at t = 0, 0.25, 0.5, 0.75, 1.
const VIRIDIS: [[u8; 3]; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];
const PLASMA: [[u8; 3]; 5] = [
    [13, 8, 135],
    [126, 3, 168],
    [204, 71, 120],
    [248, 149, 64],
    [240, 249, 33],
];
const GRAYSCALE: [[u8; 3]; 2] = [[0, 0, 0], [255, 255, 255]];
const COOLWARM: [[u8; 3]; 3] = [[59, 76, 192], [221, 221, 221], [180, 4, 38]];

impl ColorMapName {
    pub const ALL: [ColorMapName; 4] = [
        ColorMapName::Viridis,
        ColorMapName::Plasma,
        ColorMapName::Grayscale,
        ColorMapName::Coolwarm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ColorMapName::Viridis => "viridis",
            ColorMapName::Plasma => "plasma",
            ColorMapName::Grayscale => "grayscale",
            ColorMapName::Coolwarm => "coolwarm",
        }
    }

    fn stops(self) -> &'static [[u8; 3]] {
        match self {
            ColorMapName::Viridis => &VIRIDIS,
            ColorMapName::Plasma => &PLASMA,
            ColorMapName::Grayscale => &GRAYSCALE,
            ColorMapName::Coolwarm => &COOLWARM,
        }
    }

    /// Maps `t` (clamped to [0, 1]) to an opaque RGBA color by piecewise
    /// linear interpolation between the map's control points.
    pub fn sample(self, t: f32) -> [u8; 4] {
        let stops = self.stops();
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let x = t * (stops.len() - 1) as f32;
        let i = (x.floor() as usize).min(stops.len() - 2);
        let f = x - i as f32;
        let lerp = |a: u8, b: u8| (a as f32 + (b as f32 - a as f32) * f).round() as u8;
        let (a, b) = (stops[i], stops[i + 1]);
        [lerp(a[0], b[0]), lerp(a[1], b[1]), lerp(a[2], b[2]), 255]
    }
}

impl std::str::FromStr for ColorMapName {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, CoreError> {
        ColorMapName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CoreError::InvalidParameter(format!("unknown color map `{s}`")))
    }
}
