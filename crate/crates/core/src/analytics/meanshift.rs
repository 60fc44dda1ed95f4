//! Mean-shift clustering by gradient ascent on a KDE grid.

use super::kde::{kde_grid, KdeGrid};
use crate::error::Result;
use crate::payload::{Cluster, ClusterPayload};

pub const MAX_STEPS: usize = 200;
/// Ascent stops once a step moves less than this many σ.
pub const STOP_FRACTION: f64 = 0.01;
/// Converged positions closer than this many σ share a mode.
pub const MERGE_FRACTION: f64 = 0.5;

/// Qualitative palette, cycled when there are more clusters than colors.
pub const PALETTE: [[u8; 4]; 10] = [
    [31, 119, 180, 255],
    [255, 127, 14, 255],
    [44, 160, 44, 255],
    [214, 39, 40, 255],
    [148, 103, 189, 255],
    [140, 86, 75, 255],
    [227, 119, 194, 255],
    [127, 127, 127, 255],
    [188, 189, 34, 255],
    [23, 190, 207, 255],
];

#[derive(Clone, Debug)]
pub struct MeanShift {
    pub grid: KdeGrid,
    /// Converged position of every point, row-major.
    pub modes: Vec<f64>,
    pub clusters: ClusterPayload,
}

/// Moves `(x, y)` uphill until it settles and returns where it ended.
pub fn climb(grid: &KdeGrid, gx: &[f64], gy: &[f64], mut x: f64, mut y: f64) -> (f64, f64) {
    let sigma = grid.sigma;
    let max_step = 3.0 * sigma;
    for _ in 0..MAX_STEPS {
        let f = grid.interpolate(&grid.density, x, y);
        if f <= 0.0 {
            break;
        }
        // mean-shift vector of a Gaussian kernel: σ² ∇f / f
        let mut sx = sigma * sigma * grid.interpolate(gx, x, y) / f;
        let mut sy = sigma * sigma * grid.interpolate(gy, x, y) / f;
        let len = (sx * sx + sy * sy).sqrt();
        if !len.is_finite() {
            break;
        }
        if len > max_step {
            sx *= max_step / len;
            sy *= max_step / len;
        }
        x += sx;
        y += sy;
        if len < STOP_FRACTION * sigma {
            break;
        }
    }
    (x, y)
}

/// Clusters row-major 2-D `points`. Clusters are ordered by their first
/// member and named `Cluster 1`, `Cluster 2`, ...
pub fn mean_shift(points: &[f64], sigma: f64, resolution: usize) -> Result<MeanShift> {
    let grid = kde_grid(points, sigma, resolution)?;
    let (gx, gy) = grid.gradient_fields();
    let modes: Vec<f64> = points
        .chunks_exact(2)
        .flat_map(|p| {
            let (x, y) = climb(&grid, &gx, &gy, p[0], p[1]);
            [x, y]
        })
        .collect();

    let merge2 = (MERGE_FRACTION * sigma).powi(2);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, m) in modes.chunks_exact(2).enumerate() {
        let found = centers
            .iter()
            .position(|&(cx, cy)| (cx - m[0]).powi(2) + (cy - m[1]).powi(2) <= merge2);
        match found {
            Some(c) => members[c].push(i),
            None => {
                centers.push((m[0], m[1]));
                members.push(vec![i]);
            }
        }
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(c, members)| Cluster {
            name: format!("Cluster {}", c + 1),
            color: PALETTE[c % PALETTE.len()],
            members,
        })
        .collect();
    Ok(MeanShift {
        grid,
        modes,
        clusters: ClusterPayload { clusters },
    })
}
