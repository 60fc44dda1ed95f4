//! KDE grid and mean-shift clustering: total mass, agreement with a naive
//! per-cell evaluation, recovery of three blobs, and clusters that
//! partition the points.

use rand::rngs::StdRng;
use rand::Rng;
use vault_core::analytics::kde::{kde_grid, KdeGrid};
use vault_core::analytics::meanshift::mean_shift;
use vault_core::payload::ClusterPayload;

use crate::oracle::{blobs, normal, purity, rng};
use crate::{ensure, err, Outcome};

const MASS_CASES: usize = 100;
const NAIVE_CASES: usize = 30;
const BLOB_SEEDS: u64 = 10;

fn random_points(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let sx = rng.random_range(0.1..20.0);
    let sy = rng.random_range(0.1..20.0);
    (0..n).flat_map(|_| [sx * normal(rng), sy * normal(rng)]).collect()
}

/// Density at every cell, evaluated point by point over the whole grid:
/// a Gaussian cut off beyond 3σ, scaled so each point adds unit mass, or
/// all of it in the containing cell when no cell center is in reach.
fn naive_density(g: &KdeGrid, points: &[f64]) -> Vec<f64> {
    let (w, h) = (g.width, g.height);
    let cw = (g.bounds[1] - g.bounds[0]) / w as f64;
    let ch = (g.bounds[3] - g.bounds[2]) / h as f64;
    let area = cw * ch;
    let mut out = vec![0.0; w * h];
    let mut weights = vec![0.0; w * h];
    for p in points.chunks_exact(2) {
        let mut total = 0.0;
        for iy in 0..h {
            for ix in 0..w {
                let cx = g.bounds[0] + (ix as f64 + 0.5) * cw;
                let cy = g.bounds[2] + (iy as f64 + 0.5) * ch;
                let r2 = (cx - p[0]).powi(2) + (cy - p[1]).powi(2);
                let k = if r2 <= (3.0 * g.sigma).powi(2) { (-r2 / (2.0 * g.sigma * g.sigma)).exp() } else { 0.0 };
                weights[iy * w + ix] = k;
                total += k;
            }
        }
        if total > 0.0 {
            for (o, k) in out.iter_mut().zip(&weights) {
                *o += k / total / area;
            }
        } else {
            let ix = (((p[0] - g.bounds[0]) / cw).floor().max(0.0) as usize).min(w - 1);
            let iy = (((p[1] - g.bounds[2]) / ch).floor().max(0.0) as usize).min(h - 1);
            out[iy * w + ix] += 1.0 / area;
        }
    }
    out
}

fn check_partition(c: &ClusterPayload, n: usize, what: &str) -> Result<(), String> {
    let mut seen = vec![0u32; n];
    for cluster in &c.clusters {
        ensure(!cluster.members.is_empty(), || format!("{what}: empty cluster"))?;
        for &m in &cluster.members {
            ensure(m < n, || format!("{what}: member {m} out of range"))?;
            seen[m] += 1;
        }
    }
    ensure(seen.iter().all(|&s| s == 1), || format!("{what}: clusters do not partition the points"))
}

pub fn density_and_modes() -> Outcome {
    let mut rng = rng(0xde5);
    let mut worst_mass: f64 = 0.0;
    for case in 0..MASS_CASES {
        let n = rng.random_range(1..=500);
        let points = random_points(&mut rng, n);
        let sigma = rng.random_range(0.05..5.0);
        let resolution = rng.random_range(8..=256);
        let g = kde_grid(&points, sigma, resolution).map_err(err)?;
        let rel = (g.mass() - n as f64).abs() / n as f64;
        worst_mass = worst_mass.max(rel);
        ensure(rel <= 0.01, || format!("mass case {case}: {} for {n} points", g.mass()))?;
        // square cells covering the data padded by 3σ
        ensure(((g.bounds[1] - g.bounds[0]) / g.width as f64 - (g.bounds[3] - g.bounds[2]) / g.height as f64).abs() <= 1e-9 * g.cell_width(), || {
            format!("mass case {case}: cells are not square")
        })?;
        ensure(g.width.max(g.height) <= resolution, || format!("mass case {case}: grid larger than the resolution"))?;
        for p in points.chunks_exact(2) {
            ensure(p[0] - 3.0 * sigma >= g.bounds[0] - 1e-9 && p[0] + 3.0 * sigma <= g.bounds[1] + 1e-9, || {
                format!("mass case {case}: grid misses a kernel along x")
            })?;
            ensure(p[1] - 3.0 * sigma >= g.bounds[2] - 1e-9 && p[1] + 3.0 * sigma <= g.bounds[3] + 1e-9, || {
                format!("mass case {case}: grid misses a kernel along y")
            })?;
        }
    }

    let mut worst_naive: f64 = 0.0;
    for case in 0..NAIVE_CASES {
        let n = rng.random_range(1..=150);
        let points = random_points(&mut rng, n);
        let sigma = rng.random_range(0.2..4.0);
        let g = kde_grid(&points, sigma, rng.random_range(8..=64)).map_err(err)?;
        let want = naive_density(&g, &points);
        let peak = want.iter().copied().fold(0.0, f64::max);
        let dev = g.density.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;
        worst_naive = worst_naive.max(dev);
        ensure(dev <= 1e-6, || format!("naive case {case}: grid deviates by {dev:e} of the peak"))?;
    }

    let mut worst_purity: f64 = 1.0;
    for seed in 0..BLOB_SEEDS {
        let mut r = crate::oracle::rng(0x3b10b + seed);
        let centers = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 8.66]];
        let (points, labels) = blobs(&mut r, &centers, 150, 1.0);
        let n = labels.len();
        let ms = mean_shift(&points, 1.0, 128).map_err(err)?;
        check_partition(&ms.clusters, n, &format!("blobs seed {seed}"))?;
        let mut assign = vec![0; n];
        for (c, cluster) in ms.clusters.clusters.iter().enumerate() {
            for &m in &cluster.members {
                assign[m] = c;
            }
        }
        let p = purity(&assign, &labels);
        let big = ms.clusters.clusters.iter().filter(|c| c.members.len() * 20 >= n).count();
        worst_purity = worst_purity.min(p);
        ensure(p >= 0.95, || format!("blobs seed {seed}: purity {p}"))?;
        ensure(big == 3, || format!("blobs seed {seed}: {big} substantial clusters"))?;
    }
    for case in 0..20 {
        let n = rng.random_range(1..=300);
        let points = random_points(&mut rng, n);
        let ms = mean_shift(&points, rng.random_range(0.1..5.0), 64).map_err(err)?;
        check_partition(&ms.clusters, n, &format!("random case {case}"))?;
    }
    Ok(format!(
        "mass error {worst_mass:.1e}, naive deviation {worst_naive:.1e}, worst three-blob purity {:.1}%",
        worst_purity * 100.0
    ))
}
