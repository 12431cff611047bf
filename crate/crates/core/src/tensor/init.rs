//! Deterministic weight initialization. All randomness flows through the
//! caller's seeded RNG in a fixed fill order.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(shape), 1.0)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<f64> {
    // Box-Muller keeps us off extra distribution deps.
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// He-style uniform init for rectifier networks: U(+-sqrt(6 / fan_in)).
pub fn kaiming_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    uniform(rng, shape, (6.0 / fan_in as f64).sqrt())
}

/// Plain linear-layer init: U(+-1/sqrt(fan_in)).
pub fn linear_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    uniform(rng, shape, 1.0 / (fan_in as f64).sqrt())
}
