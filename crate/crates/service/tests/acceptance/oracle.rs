//! Data generators and scoring shared by several criteria.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut StdRng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Isotropic Gaussian blobs around `centers` (each of dimension `d`),
/// `per_blob` points each. Returns row-major points and labels.
pub fn blobs(rng: &mut StdRng, centers: &[Vec<f64>], per_blob: usize, spread: f64) -> (Vec<f64>, Vec<usize>) {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.extend(c.iter().map(|&x| x + spread * normal(rng)));
            labels.push(label);
        }
    }
    (points, labels)
}

/// Fraction of items whose cluster's majority label equals their own.
pub fn purity(assignment: &[usize], labels: &[usize]) -> f64 {
    let mut counts: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&a, &l) in assignment.iter().zip(labels) {
        *counts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / labels.len() as f64
}

/// 2-means on row-major 2-D points. Lloyd's iteration is started from
/// every pair of points and the partition with the least within-cluster
/// sum of squares wins, so a single far-flung point cannot trap it.
pub fn two_means(points: &[f64]) -> Vec<usize> {
    let n = points.len() / 2;
    let p = |i: usize| (points[2 * i], points[2 * i + 1]);
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let mut centers = [p(i), p(j)];
            let mut assign = vec![usize::MAX; n];
            for _ in 0..100 {
                let next: Vec<usize> = (0..n).map(|x| usize::from(d2(p(x), centers[1]) < d2(p(x), centers[0]))).collect();
                if next == assign {
                    break;
                }
                assign = next;
                for (c, center) in centers.iter_mut().enumerate() {
                    let members: Vec<usize> = (0..n).filter(|&x| assign[x] == c).collect();
                    if !members.is_empty() {
                        let m = members.len() as f64;
                        *center = (
                            members.iter().map(|&x| p(x).0).sum::<f64>() / m,
                            members.iter().map(|&x| p(x).1).sum::<f64>() / m,
                        );
                    }
                }
            }
            let inertia: f64 = (0..n).map(|x| d2(p(x), centers[assign[x]])).sum();
            if best.as_ref().is_none_or(|b| inertia < b.0) {
                best = Some((inertia, assign));
            }
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| vec![0; n])
}

/// Random subset of `0..n`, sorted, each index kept with probability `keep`.
pub fn random_subset(rng: &mut StdRng, n: usize, keep: f64) -> Vec<usize> {
    (0..n).filter(|_| rng.random_bool(keep)).collect()
}
