//! Shared test oracles: central finite differences and random instances.
#![allow(dead_code)]

pub mod gradsuite;
pub mod voxel_oracle;

use hvr::diffcore::{Rng, Tensor};

pub const H: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`, restricted to `coords`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut x = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(&x);
            x[i] = orig - H;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute gap when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_tensor(dims: &[usize], rng: &mut Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

pub fn random_dims(rng: &mut Rng, max_edge: usize) -> [usize; 3] {
    std::array::from_fn(|_| 1 + rng.below(max_edge))
}

/// Up to `k` distinct coordinates of a length-`n` vector.
pub fn sample_coords(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut all: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut all);
    all.truncate(k);
    all.sort_unstable();
    all
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.uniform_open()).collect();
    let t: f64 = v.iter().sum();
    v.iter().map(|x| x / t).collect()
}
