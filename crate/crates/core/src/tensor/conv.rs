//! Convolution, pooling, padding and 2x bilinear upsampling kernels.
//!
//! Convolution lowers to a single GEMM over an im2col buffer spanning the
//! whole batch; the buffer is rebuilt in the backward pass instead of being
//! stored on the tape.

use super::{ops::Op, Tensor};
use ndarray::{Array2, ArrayD, IxDyn};
use rayon::prelude::*;

pub(crate) fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "kernel {kernel} larger than padded input {input}+2*{pad}"
    );
    (input + 2 * pad - kernel) / stride + 1
}

/// im2col: (Cin*kh*kw) x (B*OH*OW), batch folded into the column axis.
fn im2col(x: &ArrayD<f64>, kh: usize, kw: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (b, cin, h, w) = dims4(x);
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let rows = cin * kh * kw;
    let cols = b * oh * ow;
    let xs = x.as_slice().expect("im2col: input must be standard layout");
    let mut col = Array2::<f64>::zeros((rows, cols));
    col.as_slice_mut()
        .unwrap()
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(r, crow)| {
            let ci = r / (kh * kw);
            let ki = (r / kw) % kh;
            let kj = r % kw;
            for bi in 0..b {
                for oy in 0..oh {
                    let iy = oy * stride + ki;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    let xbase = ((bi * cin + ci) * h + iy) * w;
                    let cbase = (bi * oh + oy) * ow;
                    for ox in 0..ow {
                        let ix = ox * stride + kj;
                        if ix >= pad && ix < w + pad {
                            crow[cbase + ox] = xs[xbase + ix - pad];
                        }
                    }
                }
            }
        });
    col
}

/// Adjoint of im2col: scatter-add columns back into input layout.
fn col2im(
    gcol: &Array2<f64>,
    shape: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ArrayD<f64> {
    let (b, cin, h, w) = shape;
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, cin, h, w]));
    let gxs = gx.as_slice_mut().unwrap();
    let gc = gcol.as_slice().expect("col2im: gcol standard layout");
    let cols = b * oh * ow;
    for r in 0..cin * kh * kw {
        let ci = r / (kh * kw);
        let ki = (r / kw) % kh;
        let kj = r % kw;
        let crow = &gc[r * cols..(r + 1) * cols];
        for bi in 0..b {
            for oy in 0..oh {
                let iy = oy * stride + ki;
                if iy < pad || iy >= h + pad {
                    continue;
                }
                let iy = iy - pad;
                let xbase = ((bi * cin + ci) * h + iy) * w;
                let cbase = (bi * oh + oy) * ow;
                for ox in 0..ow {
                    let ix = ox * stride + kj;
                    if ix >= pad && ix < w + pad {
                        gxs[xbase + ix - pad] += crow[cbase + ox];
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn dims4(x: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 4, "expected a 4-D array, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

pub(crate) fn conv2d_forward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> ArrayD<f64> {
    let (b, cin, h, wd) = dims4(x);
    let (cout, wcin, kh, kw) = dims4(w);
    assert_eq!(cin, wcin, "conv2d: channel mismatch {cin} vs {wcin}");
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(wd, kw, stride, pad);
    let col = im2col(x, kh, kw, stride, pad);
    let wmat = w
        .view()
        .into_shape_with_order((cout, cin * kh * kw))
        .unwrap();
    let out_mat = wmat.dot(&col); // (cout, b*oh*ow)
    // (cout, b, oh*ow) -> (b, cout, oh*ow) -> (b, cout, oh, ow)
    let out = out_mat
        .into_shape_with_order((cout, b, oh * ow))
        .unwrap()
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .to_owned();
    out.into_shape_with_order(IxDyn(&[b, cout, oh, ow])).unwrap()
}

pub(crate) fn conv2d_backward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    grad: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (b, cin, h, wd) = dims4(x);
    let (cout, _, kh, kw) = dims4(w);
    let (gb, gc, goh, gow) = dims4(grad);
    assert_eq!((gb, gc), (b, cout));
    // (b, cout, oh*ow) -> (cout, b*oh*ow)
    let g_mat = grad
        .view()
        .into_shape_with_order((b, cout, goh * gow))
        .unwrap()
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((cout, b * goh * gow))
        .unwrap();
    let col = im2col(x, kh, kw, stride, pad);
    let gw = g_mat
        .dot(&col.t())
        .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
        .unwrap();
    let wmat = w
        .view()
        .into_shape_with_order((cout, cin * kh * kw))
        .unwrap();
    let gcol = wmat.t().dot(&g_mat);
    let gx = col2im(&gcol, (b, cin, h, wd), kh, kw, stride, pad);
    (gx, gw)
}

pub(crate) fn max_pool2d_forward(
    x: &ArrayD<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, Vec<u32>) {
    let (b, c, h, w) = dims4(x);
    let oh = conv_out_dim(h, kernel, stride, pad);
    let ow = conv_out_dim(w, kernel, stride, pad);
    let xs = x.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
    let os = out.as_slice_mut().unwrap();
    let mut argmax = vec![0u32; b * c * oh * ow];
    for bc in 0..b * c {
        let plane = &xs[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ki in 0..kernel {
                    let iy = oy * stride + ki;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for kj in 0..kernel {
                        let ix = ox * stride + kj;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        let ix = ix - pad;
                        let v = plane[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                let o = (bc * oh + oy) * ow + ox;
                os[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn max_pool2d_backward(
    xshape: &[usize],
    grad: &ArrayD<f64>,
    argmax: &[u32],
) -> ArrayD<f64> {
    let (b, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (gb, gc, goh, gow) = dims4(grad);
    assert_eq!((gb, gc), (b, c));
    let gs = grad.as_slice().unwrap();
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
    let gxs = gx.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let pbase = bc * h * w;
        let obase = bc * goh * gow;
        for o in 0..goh * gow {
            gxs[pbase + argmax[obase + o] as usize] += gs[obase + o];
        }
    }
    gx
}

/// Average pooling with stride 1 and no padding (pair with `reflect_pad`
/// to keep spatial dims).
pub(crate) fn avg_pool2d_forward(x: &ArrayD<f64>, kernel: usize) -> ArrayD<f64> {
    let (b, c, h, w) = dims4(x);
    let oh = h + 1 - kernel;
    let ow = w + 1 - kernel;
    let inv = 1.0 / (kernel * kernel) as f64;
    let xs = x.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
    let os = out.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let plane = &xs[bc * h * w..(bc + 1) * h * w];
        let obase = bc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ki in 0..kernel {
                    let row = &plane[(oy + ki) * w + ox..(oy + ki) * w + ox + kernel];
                    for v in row {
                        s += v;
                    }
                }
                os[obase + oy * ow + ox] = s * inv;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2d_backward(
    xshape: &[usize],
    grad: &ArrayD<f64>,
    kernel: usize,
) -> ArrayD<f64> {
    let (b, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (_, _, oh, ow) = dims4(grad);
    let inv = 1.0 / (kernel * kernel) as f64;
    let gs = grad.as_slice().unwrap();
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
    let gxs = gx.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let pbase = bc * h * w;
        let obase = bc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gs[obase + oy * ow + ox] * inv;
                for ki in 0..kernel {
                    let base = pbase + (oy + ki) * w + ox;
                    for kj in 0..kernel {
                        gxs[base + kj] += g;
                    }
                }
            }
        }
    }
    gx
}

/// Mirror index without repeating the border sample (n >= 2 for p >= 1).
fn reflect_index(t: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut t = t % period;
    if t < 0 {
        t += period;
    }
    if t >= n {
        t = period - t;
    }
    t as usize
}

pub(crate) fn reflect_pad_forward(x: &ArrayD<f64>, pad: usize) -> ArrayD<f64> {
    let (b, c, h, w) = dims4(x);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let xs = x.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, ph, pw]));
    let os = out.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let plane = &xs[bc * h * w..(bc + 1) * h * w];
        let obase = bc * ph * pw;
        for oy in 0..ph {
            let iy = reflect_index(oy as isize - pad as isize, h);
            for ox in 0..pw {
                let ix = reflect_index(ox as isize - pad as isize, w);
                os[obase + oy * pw + ox] = plane[iy * w + ix];
            }
        }
    }
    out
}

pub(crate) fn reflect_pad_backward(
    xshape: &[usize],
    grad: &ArrayD<f64>,
    pad: usize,
) -> ArrayD<f64> {
    let (b, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (_, _, ph, pw) = dims4(grad);
    let gs = grad.as_slice().unwrap();
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
    let gxs = gx.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let pbase = bc * h * w;
        let obase = bc * ph * pw;
        for oy in 0..ph {
            let iy = reflect_index(oy as isize - pad as isize, h);
            for ox in 0..pw {
                let ix = reflect_index(ox as isize - pad as isize, w);
                gxs[pbase + iy * w + ix] += gs[obase + oy * pw + ox];
            }
        }
    }
    gx
}

// 2x bilinear upsampling, half-pixel-center convention. Along each axis:
// out[2i] = 0.25*x[i-1] + 0.75*x[i], out[2i+1] = 0.75*x[i] + 0.25*x[i+1],
// with edge clamping.
fn up_taps(o: usize, n: usize) -> [(usize, f64); 2] {
    let i = o / 2;
    if o % 2 == 0 {
        let im1 = i.saturating_sub(1);
        [(im1, 0.25), (i, 0.75)]
    } else {
        let ip1 = (i + 1).min(n - 1);
        [(i, 0.75), (ip1, 0.25)]
    }
}

pub(crate) fn upsample2x_forward(x: &ArrayD<f64>) -> ArrayD<f64> {
    let (b, c, h, w) = dims4(x);
    let (oh, ow) = (2 * h, 2 * w);
    let xs = x.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
    let os = out.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let plane = &xs[bc * h * w..(bc + 1) * h * w];
        let obase = bc * oh * ow;
        for oy in 0..oh {
            let ty = up_taps(oy, h);
            for ox in 0..ow {
                let tx = up_taps(ox, w);
                let mut v = 0.0;
                for (iy, wy) in ty {
                    for (ix, wx) in tx {
                        v += wy * wx * plane[iy * w + ix];
                    }
                }
                os[obase + oy * ow + ox] = v;
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(xshape: &[usize], grad: &ArrayD<f64>) -> ArrayD<f64> {
    let (b, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let gs = grad.as_slice().unwrap();
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
    let gxs = gx.as_slice_mut().unwrap();
    for bc in 0..b * c {
        let pbase = bc * h * w;
        let obase = bc * oh * ow;
        for oy in 0..oh {
            let ty = up_taps(oy, h);
            for ox in 0..ow {
                let g = gs[obase + oy * ow + ox];
                let tx = up_taps(ox, w);
                for (iy, wy) in ty {
                    for (ix, wx) in tx {
                        gxs[pbase + iy * w + ix] += wy * wx * g;
                    }
                }
            }
        }
    }
    gx
}

impl<'t> Tensor<'t> {
    /// 2-D convolution (zero padding). Input B x Cin x H x W, weight
    /// Cout x Cin x kh x kw. Bias is applied separately by the caller.
    pub fn conv2d(self, w: Tensor<'t>, stride: usize, pad: usize) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            conv2d_forward(&nodes[self.idx].value, &nodes[w.idx].value, stride, pad)
        };
        self.tape
            .push_op(out, vec![self.idx, w.idx], Op::Conv2d { stride, pad })
    }

    pub fn max_pool2d(self, kernel: usize, stride: usize, pad: usize) -> Tensor<'t> {
        let (out, argmax) = {
            let nodes = self.tape.nodes.borrow();
            max_pool2d_forward(&nodes[self.idx].value, kernel, stride, pad)
        };
        self.tape.push_op(
            out,
            vec![self.idx],
            Op::MaxPool2d {
                kernel,
                stride,
                pad,
                argmax,
            },
        )
    }

    /// Box filter with stride 1 and no padding.
    pub fn avg_pool2d(self, kernel: usize) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            avg_pool2d_forward(&nodes[self.idx].value, kernel)
        };
        self.tape
            .push_op(out, vec![self.idx], Op::AvgPool2d { kernel })
    }

    pub fn reflect_pad(self, pad: usize) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            reflect_pad_forward(&nodes[self.idx].value, pad)
        };
        self.tape
            .push_op(out, vec![self.idx], Op::ReflectPad { pad })
    }

    /// Bilinear 2x spatial upsampling.
    pub fn upsample2x(self) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            upsample2x_forward(&nodes[self.idx].value)
        };
        self.tape.push_op(out, vec![self.idx], Op::Upsample2x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn reflect_index_mirrors_without_border_repeat() {
        // n = 4: indices ... 2 1 | 0 1 2 3 | 2 1 ...
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(-2, 4), 2);
        assert_eq!(reflect_index(0, 4), 0);
        assert_eq!(reflect_index(3, 4), 3);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(5, 4), 1);
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 1, 4, 5]), |ix| (ix[2] * 5 + ix[3]) as f64);
        let mut w = ArrayD::zeros(IxDyn(&[1, 1, 3, 3]));
        w[[0, 0, 1, 1]] = 1.0;
        let y = conv2d_forward(&x, &w, 1, 1);
        assert_eq!(y.shape(), x.shape());
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn upsample_doubles_dims_and_preserves_constants() {
        let x = ArrayD::from_elem(IxDyn(&[2, 3, 4, 6]), 2.5);
        let y = upsample2x_forward(&x);
        assert_eq!(y.shape(), &[2, 3, 8, 12]);
        assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }
}
