//! Central finite-difference verification of tape gradients.
//!
//! The numeric side re-evaluates the checked function at perturbed inputs,
//! never touching the backward pass, so it stays an independent oracle for
//! whatever the forward computes.

use super::{Tape, Tensor};
use ndarray::ArrayD;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Compare tape gradients of a scalar-valued function against central
/// finite differences. Relative error per element is
/// |a - n| / max(1e-6, |a| + |n|).
pub fn check<F>(f: F, inputs: &[ArrayD<f64>], eps: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t>,
{
    let analytic: Vec<ArrayD<f64>> = {
        let tape = Tape::new();
        let leaves: Vec<Tensor<'_>> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let y = f(&tape, &leaves);
        assert_eq!(y.len(), 1, "gradcheck target must be scalar");
        let grads = tape.backward(y);
        leaves
            .iter()
            .zip(inputs)
            .map(|(l, v)| {
                grads
                    .get(*l)
                    .cloned()
                    .unwrap_or_else(|| ArrayD::zeros(v.raw_dim()))
            })
            .collect()
    };

    let eval = |xs: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Tensor<'_>> = xs.iter().map(|v| tape.leaf(v.clone())).collect();
        f(&tape, &leaves).scalar_value()
    };

    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        for flat in 0..input.len() {
            let orig = work[i].as_slice_mut().unwrap()[flat];
            work[i].as_slice_mut().unwrap()[flat] = orig + eps;
            let up = eval(&work);
            work[i].as_slice_mut().unwrap()[flat] = orig - eps;
            let down = eval(&work);
            work[i].as_slice_mut().unwrap()[flat] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i].as_slice().unwrap()[flat];
            let abs_err = (a - numeric).abs();
            let rel_err = abs_err / f64::max(1e-6, a.abs() + numeric.abs());
            report.max_abs_err = report.max_abs_err.max(abs_err);
            report.max_rel_err = report.max_rel_err.max(rel_err);
            report.checked += 1;
        }
    }
    report
}

/// Panic unless every gradient element matches finite differences within
/// `tol` relative error.
pub fn assert_close<F>(f: F, inputs: &[ArrayD<f64>], eps: f64, tol: f64)
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t>,
{
    let report = check(f, inputs, eps);
    assert!(
        report.max_rel_err < tol,
        "gradient check failed: max relative error {:.3e} (abs {:.3e}) over {} elements, tolerance {:.1e}",
        report.max_rel_err,
        report.max_abs_err,
        report.checked,
        tol
    );
}
