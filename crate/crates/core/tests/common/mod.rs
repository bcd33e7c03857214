//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the scoring code paths it is used to check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sisom::data::Dataset;
use sisom::tensor_nn::{Matrix, MlpModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn golden_config_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/golden.json")
}

/// Re-runs the network from hidden layer `l` (post-ReLU values `h`) to the
/// logits, written out longhand.
pub fn logits_from_hidden(model: &MlpModel, l: usize, h: &[f64]) -> Vec<f64> {
    let mut a = h.to_vec();
    let layers = model.weights().len();
    for k in (l + 1)..layers {
        let w = &model.weights()[k];
        let b = &model.biases()[k];
        let mut next = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s = b[r];
            for c in 0..w.cols() {
                s += w.get(r, c) * a[c];
            }
            next[r] = if k + 1 < layers { s.max(0.0) } else { s };
        }
        a = next;
    }
    a
}

/// Smallest |pre-activation| over all hidden units for input `x`.
pub fn min_abs_preactivation(model: &MlpModel, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut smallest = f64::INFINITY;
    for k in 0..model.weights().len() - 1 {
        let w = &model.weights()[k];
        let mut next = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s = model.biases()[k][r];
            for c in 0..w.cols() {
                s += w.get(r, c) * a[c];
            }
            smallest = smallest.min(s.abs());
            next[r] = s.max(0.0);
        }
        a = next;
    }
    smallest
}

/// `D_KL(u ‖ softmax(logits))` from its definition, `Σ u ln(u / p)`.
pub fn kl_uniform(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let c = logits.len() as f64;
    let u = 1.0 / c;
    logits
        .iter()
        .map(|v| {
            let p = (v - m).exp() / z;
            u * (u / p).ln()
        })
        .sum()
}

/// Five-point central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let at = |delta: f64| {
        let mut y = x.to_vec();
        y[i] += delta;
        f(&y)
    };
    (-at(2.0 * step) + 8.0 * at(step) - 8.0 * at(-step) + at(-2.0 * step)) / (12.0 * step)
}

pub fn brute_min_distance(q: &[f64], points: &[&[f64]]) -> f64 {
    points
        .iter()
        .map(|p| {
            let mut s = 0.0;
            for k in 0..q.len() {
                let d = q[k] - p[k];
                s += d * d;
            }
            s.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `[#(a > b) + ½·#(a = b)] / (|a|·|b|)` by enumerating every pair.
pub fn pairwise_auroc(ind: &[f64], ood: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in ind {
        for &b in ood {
            if a > b {
                twice += 2;
            } else if a == b {
                twice += 1;
            }
        }
    }
    twice as f64 / 2.0 / (ind.len() as f64 * ood.len() as f64)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_model(rng: &mut impl Rng) -> MlpModel {
    let depth = rng.gen_range(1..=3);
    let mut dims = vec![rng.gen_range(2..=6)];
    for _ in 0..depth {
        dims.push(rng.gen_range(3..=8));
    }
    dims.push(rng.gen_range(2..=5));
    let mut capture: Vec<usize> = (0..depth).filter(|_| rng.gen_bool(0.6)).collect();
    if capture.is_empty() {
        capture.push(rng.gen_range(0..depth));
    }
    MlpModel::new(&dims, &capture, rng.gen()).unwrap()
}

/// Labeled Gaussian clusters; `clusters` lists (center, class, count) and ids
/// are `{prefix}{cluster}-{i}`.
pub fn clusters(clusters: &[(Vec<f64>, usize, usize)], sigma: f64, prefix: &str, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, (center, class, count)) in clusters.iter().enumerate() {
        for i in 0..*count {
            ids.push(format!("{prefix}{k}-{i}"));
            rows.push(center.iter().map(|c| c + noise.sample(&mut r)).collect::<Vec<f64>>());
            labels.push(*class);
        }
    }
    Dataset::new(ids, Matrix::from_rows(&rows).unwrap(), Some(labels)).unwrap()
}
