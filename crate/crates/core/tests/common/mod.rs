#![allow(dead_code)]

use lrgw::costs::PointCloud;
use lrgw::linalg::uniform;
use lrgw::lr_dykstra::KernelTriple;
use lrgw::sinkhorn::{kl_project, Coupling};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    PointCloud::new(Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0))).unwrap()
}

/// Entries `exp(U[-2, 2])`.
pub fn positive(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-2.0f64..2.0).exp())
}

pub fn probability(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let w = Array1::from_shape_fn(n, |_| rng.random_range(0.2..1.0));
    let s = w.sum();
    w / s
}

/// A feasible coupling with uniform marginals.
pub fn random_coupling(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Coupling {
    let (a, b) = (uniform(n), uniform(m));
    kl_project(positive(rng, (n, m)).view(), a.view(), b.view(), 1e-13, 100_000).unwrap().0
}

pub fn kernel_triple(rng: &mut ChaCha8Rng, n: usize, m: usize, r: usize) -> KernelTriple {
    let g = positive(rng, (r, 1)).column(0).to_owned();
    KernelTriple::new(positive(rng, (n, r)), positive(rng, (m, r)), g).unwrap()
}

pub fn max_abs_diff(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    (x - y).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn max_abs(x: &Array2<f64>) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
