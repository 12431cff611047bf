//! Differentiable axis-angle to rotation-matrix materialization.
//!
//! R = I + A(s)·K + B(s)·K² with K = skew(w), s = |w|², A = sin θ/θ,
//! B = (1 − cos θ)/θ². Series expansions take over near θ = 0 so the
//! identity limit and its gradient are exact.

use super::{ops::Op, Tensor};
use ndarray::{ArrayD, IxDyn};

const SERIES_THRESHOLD: f64 = 1e-6;

/// (A, B, dA/ds, dB/ds) as functions of s = θ².
fn coefficients(s: f64) -> (f64, f64, f64, f64) {
    if s < SERIES_THRESHOLD {
        let a = 1.0 - s / 6.0 + s * s / 120.0;
        let b = 0.5 - s / 24.0 + s * s / 720.0;
        let da = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0;
        let db = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0;
        (a, b, da, db)
    } else {
        let theta = s.sqrt();
        let (sin_t, cos_t) = theta.sin_cos();
        let half = (theta / 2.0).sin();
        let one_minus_cos = 2.0 * half * half;
        let a = sin_t / theta;
        let b = one_minus_cos / s;
        let da = (theta * cos_t - sin_t) / (2.0 * theta * s);
        let db = (theta * sin_t - 2.0 * one_minus_cos) / (2.0 * s * s);
        (a, b, da, db)
    }
}

fn skew(w: &[f64; 3]) -> [[f64; 3]; 3] {
    [
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

/// Rotation matrix for a single axis-angle vector.
pub fn rotation_from_axis_angle(w: &[f64; 3]) -> [[f64; 3]; 3] {
    let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b, _, _) = coefficients(s);
    let k = skew(w);
    let k2 = matmul3(&k, &k);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

pub(crate) fn rodrigues_forward(w: &ArrayD<f64>) -> ArrayD<f64> {
    let shape = w.shape();
    assert_eq!(shape.len(), 2, "axis-angle input must be B x 3");
    assert_eq!(shape[1], 3);
    let b = shape[0];
    let ws = w.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, 3, 3]));
    let os = out.as_slice_mut().unwrap();
    for bi in 0..b {
        let wv = [ws[bi * 3], ws[bi * 3 + 1], ws[bi * 3 + 2]];
        let r = rotation_from_axis_angle(&wv);
        for i in 0..3 {
            for j in 0..3 {
                os[bi * 9 + i * 3 + j] = r[i][j];
            }
        }
    }
    out
}

pub(crate) fn rodrigues_backward(w: &ArrayD<f64>, grad: &ArrayD<f64>) -> ArrayD<f64> {
    let b = w.shape()[0];
    let ws = w.as_slice().unwrap();
    let gs = grad.as_slice().unwrap();
    let mut gw = ArrayD::<f64>::zeros(w.raw_dim());
    let gws = gw.as_slice_mut().unwrap();
    let basis: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for bi in 0..b {
        let wv = [ws[bi * 3], ws[bi * 3 + 1], ws[bi * 3 + 2]];
        let s = wv[0] * wv[0] + wv[1] * wv[1] + wv[2] * wv[2];
        let (a, bcoef, da, db) = coefficients(s);
        let k = skew(&wv);
        let k2 = matmul3(&k, &k);
        for (axis, e) in basis.iter().enumerate() {
            let ei = skew(e);
            let eik = matmul3(&ei, &k);
            let kei = matmul3(&k, &ei);
            let ds = 2.0 * wv[axis];
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    // dR/dw = A'·ds·K + A·E + B'·ds·K² + B·(E·K + K·E)
                    let dr = da * ds * k[i][j]
                        + a * ei[i][j]
                        + db * ds * k2[i][j]
                        + bcoef * (eik[i][j] + kei[i][j]);
                    acc += gs[bi * 9 + i * 3 + j] * dr;
                }
            }
            gws[bi * 3 + axis] = acc;
        }
    }
    gw
}

impl<'t> Tensor<'t> {
    /// Materialize B x 3 axis-angle vectors into B x 3 x 3 rotation matrices.
    pub fn rodrigues(self) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            rodrigues_forward(&nodes[self.idx].value)
        };
        self.tape.push_op(out, vec![self.idx], Op::Rodrigues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_axis_angle_is_identity() {
        let r = rotation_from_axis_angle(&[0.0, 0.0, 0.0]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((r[i][j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = rotation_from_axis_angle(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let p = [1.0, 0.0, 0.0];
        let mut q = [0.0; 3];
        for i in 0..3 {
            for (j, pj) in p.iter().enumerate() {
                q[i] += r[i][j] * pj;
            }
        }
        assert!((q[0]).abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12 && (q[2]).abs() < 1e-12);
    }

    #[test]
    fn series_and_closed_form_agree_near_threshold() {
        for &s in &[0.5e-6, 0.9e-6, 1.1e-6, 2e-6] {
            let direct = {
                let theta = f64::sqrt(s);
                let half = (theta / 2.0).sin();
                (theta.sin() / theta, 2.0 * half * half / s)
            };
            let (a, b, _, _) = coefficients(s);
            assert!((a - direct.0).abs() < 1e-12);
            assert!((b - direct.1).abs() < 1e-12);
        }
    }
}
