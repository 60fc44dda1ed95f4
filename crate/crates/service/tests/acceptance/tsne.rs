//! t-SNE: the gradient against central differences of an independently
//! computed KL divergence, the joint affinities, the perplexity search
//! against a grid scan, convergence, separation of two blobs and
//! reproducibility.

use rand::rngs::StdRng;
use rand::Rng;
use vault_core::analytics::tsne::{affinities, calibrate_row, gradient, Metric, Tsne, TsneParams};

use crate::oracle::{blobs, two_means, normal, purity, rng};
use crate::{ensure, err, Outcome};

/// KL(P‖Q) with the Student-t kernel, written out directly.
fn kl(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d2 = (y[2 * i] - y[2 * j]).powi(2) + (y[2 * i + 1] - y[2 * j + 1]).powi(2);
                w[i * n + j] = 1.0 / (1.0 + d2);
                z += w[i * n + j];
            }
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                total += pij * (pij / (w[i * n + j] / z)).ln();
            }
        }
    }
    total
}

fn gradient_check(rng: &mut StdRng) -> Result<f64, String> {
    let (n, d) = (30, 5);
    let mut worst: f64 = 0.0;
    for metric in [Metric::Euclidean, Metric::Cosine] {
        for _ in 0..3 {
            let data: Vec<f64> = (0..n * d).map(|_| normal(rng)).collect();
            let p = affinities(&data, n, d, 5.0, metric);
            let y: Vec<f64> = (0..2 * n).map(|_| normal(rng)).collect();
            let g = gradient(&p, &y, n, 1.0);
            let h = 1e-5;
            let mut diff = 0.0;
            let mut norm = 0.0;
            for k in 0..2 * n {
                let mut plus = y.clone();
                let mut minus = y.clone();
                plus[k] += h;
                minus[k] -= h;
                let numeric = (kl(&p, &plus, n) - kl(&p, &minus, n)) / (2.0 * h);
                diff += (g[k] - numeric).powi(2);
                norm += numeric * numeric;
            }
            worst = worst.max((diff / norm).sqrt());
        }
    }
    ensure(worst < 1e-3, || format!("gradient relative error {worst:e}"))?;
    Ok(worst)
}

fn affinity_check(rng: &mut StdRng) -> Result<(), String> {
    for case in 0..20 {
        let n = rng.random_range(10..120);
        let d = rng.random_range(1..8);
        let data: Vec<f64> = (0..n * d).map(|_| normal(rng) * 3.0).collect();
        let metric = if case % 2 == 0 { Metric::Euclidean } else { Metric::Cosine };
        let perplexity = rng.random_range(2.0..((n - 1) as f64 / 3.0).max(2.5));
        let p = affinities(&data, n, d, perplexity, metric);
        let sum: f64 = p.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-6, || format!("affinities {case}: sum {sum}"))?;
        for i in 0..n {
            ensure(p[i * n + i] == 0.0, || format!("affinities {case}: diagonal {i}"))?;
            for j in 0..n {
                ensure((p[i * n + j] - p[j * n + i]).abs() <= 1e-6 * sum, || {
                    format!("affinities {case}: asymmetric at ({i}, {j})")
                })?;
                ensure(p[i * n + j] >= 0.0, || format!("affinities {case}: negative"))?;
            }
        }
    }
    Ok(())
}

/// Perplexity `2^H` (H in bits) of the Gaussian row distribution at `beta`.
fn row_perplexity(dis: &[f64], beta: f64) -> f64 {
    let min = dis.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = dis.iter().map(|&x| (-beta * (x - min)).exp()).collect();
    let z: f64 = w.iter().sum();
    let h: f64 = w.iter().map(|&x| x / z).filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum();
    h.exp2()
}

fn entropy_perplexity(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum::<f64>().exp2()
}

/// Grid scan over log β, then bisection inside the bracketing cell.
fn scan_beta(dis: &[f64], target: f64) -> f64 {
    let spread = dis.iter().copied().fold(f64::NEG_INFINITY, f64::max) - dis.iter().copied().fold(f64::INFINITY, f64::min);
    let (lo_exp, hi_exp, steps) = (-8.0f64, 8.0f64, 4000);
    let at = |k: usize| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / steps as f64) / spread;
    // perplexity falls as β grows
    let k = (0..steps).find(|&k| row_perplexity(dis, at(k + 1)) <= target).expect("target bracketed");
    let (mut lo, mut hi) = (at(k).ln(), at(k + 1).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if row_perplexity(dis, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn perplexity_check(rng: &mut StdRng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let len = rng.random_range(10..300);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let dis: Vec<f64> = (0..len).map(|_| scale * rng.random_range(0.0..1.0f64).powi(2)).collect();
        let target = rng.random_range(2.0..(len as f64 / 3.0).min(60.0).max(2.5));
        let (p, _beta) = calibrate_row(&dis, target);
        let oracle = scan_beta(&dis, target);
        let got = entropy_perplexity(&p);
        let want = row_perplexity(&dis, oracle);
        let e = (got - want).abs();
        worst = worst.max(e);
        ensure(e <= 1e-4, || format!("row {case}: 2^H = {got}, grid scan gives {want} (target {target})"))?;
    }
    Ok(worst)
}

fn params(seed: u64, perplexity: f64) -> TsneParams {
    TsneParams {
        perplexity,
        seed,
        ..TsneParams::default()
    }
}

fn convergence_and_purity(rng: &mut StdRng) -> Result<(f64, f64), String> {
    let d = 10;
    // KL(P‖Q) at iteration 500 is below the value at iteration 10
    let centers: Vec<Vec<f64>> = (0..3).map(|c| (0..d).map(|j| if j == c { 8.0 } else { 0.0 }).collect()).collect();
    let (data, _) = blobs(rng, &centers, 60, 1.0);
    let n = data.len() / d;
    let mut t = Tsne::new(&data, n, d, params(1, 20.0)).map_err(err)?;
    t.run(10).map_err(err)?;
    let early = kl(t.affinities(), t.embedding(), n);
    t.run(490).map_err(err)?;
    let late = kl(t.affinities(), t.embedding(), n);
    ensure(late < early, || format!("KL after 500 iterations {late} not below {early} after 10"))?;

    let mut worst_purity: f64 = 1.0;
    for seed in 0..5 {
        let mut far = vec![0.0; d];
        far[0] = 12.0;
        let (data, labels) = blobs(rng, &[vec![0.0; d], far], 25, 1.0);
        let n = labels.len();
        // the default rate of 200 overshoots at N = 50 and can fling a tail
        // point far from its blob; 50 is the usual rate for small N
        let mut t = Tsne::new(&data, n, d, TsneParams { learning_rate: 50.0, ..params(seed, 10.0) }).map_err(err)?;
        t.run(500).map_err(err)?;
        let p = purity(&two_means(t.embedding()), &labels);
        worst_purity = worst_purity.min(p);
        ensure(p == 1.0, || format!("two blobs, seed {seed}: purity {p}"))?;
    }
    Ok((late / early, worst_purity))
}

fn determinism(rng: &mut StdRng) -> Result<(), String> {
    let (n, d) = (80, 6);
    let data: Vec<f64> = (0..n * d).map(|_| normal(rng)).collect();
    let run = |seed| -> Result<Vec<u64>, String> {
        let mut t = Tsne::new(&data, n, d, params(seed, 10.0)).map_err(err)?;
        t.run(300).map_err(err)?;
        Ok(t.embedding().iter().map(|v| v.to_bits()).collect())
    };
    let a = run(7)?;
    ensure(a == run(7)?, || "same seed, different embedding".into())?;
    ensure(a != run(8)?, || "different seeds, same embedding".into())?;
    Ok(())
}

pub fn correctness() -> Outcome {
    let mut rng = rng(0x75e);
    let grad = gradient_check(&mut rng)?;
    affinity_check(&mut rng)?;
    let perp = perplexity_check(&mut rng)?;
    let (ratio, purity) = convergence_and_purity(&mut rng)?;
    determinism(&mut rng)?;
    Ok(format!(
        "gradient error {grad:.1e}, perplexity error {perp:.1e}, KL(500)/KL(10) = {ratio:.3}, two-blob purity {:.0}%",
        purity * 100.0
    ))
}
