//! Differentiable bilinear sampling of an image at continuous pixel
//! coordinates, with gradients w.r.t. both the source and the grid.
//!
//! Coordinates outside the image are edge-clamped; the caller receives a
//! separate validity mask (not a tape node) marking in-bounds samples.

use super::{ops::Op, Tensor};
use ndarray::{ArrayD, IxDyn};

struct Taps {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
    // 0 when the coordinate was clamped: kills the grid gradient there
    dx: f64,
    dy: f64,
}

fn taps(u: f64, v: f64, h: usize, w: usize) -> Taps {
    let (wm1, hm1) = ((w - 1) as f64, (h - 1) as f64);
    let uc = u.clamp(0.0, wm1);
    let vc = v.clamp(0.0, hm1);
    let dx = if u > 0.0 && u < wm1 && w > 1 { 1.0 } else { 0.0 };
    let dy = if v > 0.0 && v < hm1 && h > 1 { 1.0 } else { 0.0 };
    let x0 = (uc.floor() as usize).min(w.saturating_sub(2));
    let y0 = (vc.floor() as usize).min(h.saturating_sub(2));
    let fx = if w > 1 { uc - x0 as f64 } else { 0.0 };
    let fy = if h > 1 { vc - y0 as f64 } else { 0.0 };
    Taps {
        x0,
        y0,
        fx,
        fy,
        dx,
        dy,
    }
}

/// Forward pass. `src` is B x C x H x W, `grid` is B x 2 x gh x gw holding
/// (u, v) pixel coordinates into `src`. Returns the sampled B x C x gh x gw
/// array and a B x 1 x gh x gw in-bounds mask.
pub(crate) fn grid_sample_forward(
    src: &ArrayD<f64>,
    grid: &ArrayD<f64>,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (b, c, h, w) = super::conv::dims4(src);
    let gs = grid.shape();
    assert_eq!(gs.len(), 4, "grid must be B x 2 x gh x gw");
    assert_eq!(gs[0], b, "grid batch mismatch");
    assert_eq!(gs[1], 2, "grid needs 2 coordinate channels");
    let (gh, gw) = (gs[2], gs[3]);
    let ss = src.as_slice().unwrap();
    let grids = grid.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, gh, gw]));
    let os = out.as_slice_mut().unwrap();
    let mut mask = ArrayD::<f64>::zeros(IxDyn(&[b, 1, gh, gw]));
    let ms = mask.as_slice_mut().unwrap();
    let plane = gh * gw;
    for bi in 0..b {
        let ubase = bi * 2 * plane;
        let vbase = ubase + plane;
        for p in 0..plane {
            let u = grids[ubase + p];
            let v = grids[vbase + p];
            let inb = u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64;
            ms[bi * plane + p] = if inb { 1.0 } else { 0.0 };
            let t = taps(u, v, h, w);
            let (w00, w01, w10, w11) = (
                (1.0 - t.fy) * (1.0 - t.fx),
                (1.0 - t.fy) * t.fx,
                t.fy * (1.0 - t.fx),
                t.fy * t.fx,
            );
            let x1 = (t.x0 + 1).min(w - 1);
            let y1 = (t.y0 + 1).min(h - 1);
            for ci in 0..c {
                let sbase = (bi * c + ci) * h * w;
                let s00 = ss[sbase + t.y0 * w + t.x0];
                let s01 = ss[sbase + t.y0 * w + x1];
                let s10 = ss[sbase + y1 * w + t.x0];
                let s11 = ss[sbase + y1 * w + x1];
                os[(bi * c + ci) * plane + p] = w00 * s00 + w01 * s01 + w10 * s10 + w11 * s11;
            }
        }
    }
    (out, mask)
}

pub(crate) fn grid_sample_backward(
    src: &ArrayD<f64>,
    grid: &ArrayD<f64>,
    grad: &ArrayD<f64>,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (b, c, h, w) = super::conv::dims4(src);
    let gs = grid.shape();
    let (gh, gw) = (gs[2], gs[3]);
    let ss = src.as_slice().unwrap();
    let grids = grid.as_slice().unwrap();
    let gos = grad.as_slice().unwrap();
    let mut gsrc = ArrayD::<f64>::zeros(src.raw_dim());
    let gss = gsrc.as_slice_mut().unwrap();
    let mut ggrid = ArrayD::<f64>::zeros(grid.raw_dim());
    let ggs = ggrid.as_slice_mut().unwrap();
    let plane = gh * gw;
    for bi in 0..b {
        let ubase = bi * 2 * plane;
        let vbase = ubase + plane;
        for p in 0..plane {
            let u = grids[ubase + p];
            let v = grids[vbase + p];
            let t = taps(u, v, h, w);
            let (w00, w01, w10, w11) = (
                (1.0 - t.fy) * (1.0 - t.fx),
                (1.0 - t.fy) * t.fx,
                t.fy * (1.0 - t.fx),
                t.fy * t.fx,
            );
            let x1 = (t.x0 + 1).min(w - 1);
            let y1 = (t.y0 + 1).min(h - 1);
            let (mut gu, mut gv) = (0.0, 0.0);
            for ci in 0..c {
                let sbase = (bi * c + ci) * h * w;
                let g = gos[(bi * c + ci) * plane + p];
                gss[sbase + t.y0 * w + t.x0] += g * w00;
                gss[sbase + t.y0 * w + x1] += g * w01;
                gss[sbase + y1 * w + t.x0] += g * w10;
                gss[sbase + y1 * w + x1] += g * w11;
                let s00 = ss[sbase + t.y0 * w + t.x0];
                let s01 = ss[sbase + t.y0 * w + x1];
                let s10 = ss[sbase + y1 * w + t.x0];
                let s11 = ss[sbase + y1 * w + x1];
                // d out / d u at fixed taps, then masked by the clamp
                gu += g * ((1.0 - t.fy) * (s01 - s00) + t.fy * (s11 - s10));
                gv += g * ((1.0 - t.fx) * (s10 - s00) + t.fx * (s11 - s01));
            }
            ggs[ubase + p] = gu * t.dx;
            ggs[vbase + p] = gv * t.dy;
        }
    }
    (gsrc, ggrid)
}

impl<'t> Tensor<'t> {
    /// Sample `self` (B x C x H x W) at the pixel coordinates in `grid`
    /// (B x 2 x gh x gw). Out-of-range coordinates are edge-clamped and
    /// reported in the returned mask (B x 1 x gh x gw, not on the tape).
    pub fn grid_sample(self, grid: Tensor<'t>) -> (Tensor<'t>, ArrayD<f64>) {
        let (out, mask) = {
            let nodes = self.tape.nodes.borrow();
            grid_sample_forward(&nodes[self.idx].value, &nodes[grid.idx].value)
        };
        let t = self
            .tape
            .push_op(out, vec![self.idx, grid.idx], Op::GridSample);
        (t, mask)
    }
}
