#![allow(dead_code)]

use om2p::nn::{MlpParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-half..half))
}

/// Relative error with a floor on the denominator for near-zero entries.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` over every parameter, in `tensors()` order.
pub fn central_diff(params: &MlpParams, h: f64, mut f: impl FnMut(&MlpParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (ti, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let orig = p.tensors()[ti].data()[k];
            p.tensors_mut()[ti].data_mut()[k] = orig + h;
            let up = f(&p);
            p.tensors_mut()[ti].data_mut()[k] = orig - h;
            let down = f(&p);
            p.tensors_mut()[ti].data_mut()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Largest relative error between an analytic gradient and an oracle.
pub fn max_rel_err(analytic: &MlpParams, oracle: &[f64]) -> f64 {
    let flat = analytic.flatten();
    assert_eq!(flat.len(), oracle.len());
    flat.iter()
        .zip(oracle)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

/// Perturbs every parameter by a small random amount so that norm gains and
/// zero biases do not hide mistakes.
pub fn jitter(params: &mut MlpParams, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
}
