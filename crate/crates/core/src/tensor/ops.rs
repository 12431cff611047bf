//! Elementwise, reduction, shape and linear-algebra operations with their
//! backward rules. Structured ops (convolution, sampling, Rodrigues) live in
//! sibling modules; their backward entry points are dispatched from here.

use super::{conv, rodrigues, sample, Node, Tensor};
use ndarray::{concatenate, ArrayD, Axis, Ix2, IxDyn, Slice};

/// Operation recorded on the tape, carrying whatever context the backward
/// pass needs.
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MinElem,
    MaxElem,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Relu,
    Abs,
    Square,
    Recip,
    AddScalar(f64),
    MulScalar(f64),
    ClampMin(f64),
    PowScalar(f64),
    Softmax {
        axis: usize,
    },
    MatMul,
    BatchMatMul,
    Conv2d {
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
        pad: usize,
        argmax: Vec<u32>,
    },
    AvgPool2d {
        kernel: usize,
    },
    ReflectPad {
        pad: usize,
    },
    Upsample2x,
    GridSample,
    Rodrigues,
    SumAll,
    SumAxes {
        axes: Vec<usize>,
        keepdims: bool,
    },
    MaxAxis {
        axis: usize,
        argmax: Vec<u32>,
    },
    Reshape,
    Permute {
        axes: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Narrow {
        axis: usize,
        start: usize,
    },
}

/// Shape of `a` and `b` combined under NumPy broadcasting rules.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => panic!("incompatible broadcast dims {x} vs {y} in {a:?} x {b:?}"),
        };
    }
    out
}

/// Sum `g` down to `target` shape, undoing a broadcast.
pub(crate) fn reduce_to_shape(g: &ArrayD<f64>, target: &[usize]) -> ArrayD<f64> {
    if g.shape() == target {
        return g.clone();
    }
    let mut out = g.clone();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for ax in 0..target.len() {
        if target[ax] == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn bcast_zip(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> ArrayD<f64> {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        return out;
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    let mut out = av.to_owned();
    out.zip_mut_with(&bv, |x, &y| *x = f(*x, y));
    out
}

pub(crate) fn accum(
    nodes: &[Node],
    grads: &mut [Option<ArrayD<f64>>],
    parent: usize,
    g: ArrayD<f64>,
) {
    if !nodes[parent].requires_grad {
        return;
    }
    match &mut grads[parent] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Dispatch the backward rule of node `i`, accumulating into `grads`.
pub(crate) fn backward_step(
    nodes: &[Node],
    i: usize,
    grad: &ArrayD<f64>,
    grads: &mut [Option<ArrayD<f64>>],
) {
    let node = &nodes[i];
    let p = &node.parents;
    let val = |j: usize| -> &ArrayD<f64> { &nodes[j].value };
    match &node.op {
        Op::Leaf => {}
        Op::Add => {
            accum(nodes, grads, p[0], reduce_to_shape(grad, val(p[0]).shape()));
            accum(nodes, grads, p[1], reduce_to_shape(grad, val(p[1]).shape()));
        }
        Op::Sub => {
            accum(nodes, grads, p[0], reduce_to_shape(grad, val(p[0]).shape()));
            let gb = reduce_to_shape(grad, val(p[1]).shape());
            accum(nodes, grads, p[1], -gb);
        }
        Op::Mul => {
            let ga = bcast_zip(grad, val(p[1]), |g, b| g * b);
            accum(nodes, grads, p[0], reduce_to_shape(&ga, val(p[0]).shape()));
            let gb = bcast_zip(grad, val(p[0]), |g, a| g * a);
            accum(nodes, grads, p[1], reduce_to_shape(&gb, val(p[1]).shape()));
        }
        Op::Div => {
            let ga = bcast_zip(grad, val(p[1]), |g, b| g / b);
            accum(nodes, grads, p[0], reduce_to_shape(&ga, val(p[0]).shape()));
            let num = bcast_zip(val(p[0]), val(p[1]), |a, b| -a / (b * b));
            let gb = bcast_zip(grad, &num, |g, x| g * x);
            accum(nodes, grads, p[1], reduce_to_shape(&gb, val(p[1]).shape()));
        }
        Op::MinElem | Op::MaxElem => {
            let take_a = bcast_zip(val(p[0]), val(p[1]), |a, b| {
                let first = if matches!(node.op, Op::MinElem) { a <= b } else { a >= b };
                if first {
                    1.0
                } else {
                    0.0
                }
            });
            let ga = bcast_zip(grad, &take_a, |g, m| g * m);
            accum(nodes, grads, p[0], reduce_to_shape(&ga, val(p[0]).shape()));
            let gb = bcast_zip(grad, &take_a, |g, m| g * (1.0 - m));
            accum(nodes, grads, p[1], reduce_to_shape(&gb, val(p[1]).shape()));
        }
        Op::Neg => accum(nodes, grads, p[0], -grad),
        Op::Exp => {
            let mut g = grad.clone();
            g.zip_mut_with(&node.value, |x, &y| *x *= y);
            accum(nodes, grads, p[0], g);
        }
        Op::Ln => {
            let mut g = grad.clone();
            g.zip_mut_with(val(p[0]), |x, &v| *x /= v);
            accum(nodes, grads, p[0], g);
        }
        Op::Sqrt => {
            let mut g = grad.clone();
            g.zip_mut_with(&node.value, |x, &y| *x *= 0.5 / y);
            accum(nodes, grads, p[0], g);
        }
        Op::Sigmoid => {
            let mut g = grad.clone();
            g.zip_mut_with(&node.value, |x, &y| *x *= y * (1.0 - y));
            accum(nodes, grads, p[0], g);
        }
        Op::Relu => {
            let mut g = grad.clone();
            g.zip_mut_with(val(p[0]), |x, &v| {
                if v <= 0.0 {
                    *x = 0.0
                }
            });
            accum(nodes, grads, p[0], g);
        }
        Op::Abs => {
            let mut g = grad.clone();
            g.zip_mut_with(val(p[0]), |x, &v| *x *= if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
            accum(nodes, grads, p[0], g);
        }
        Op::Square => {
            let mut g = grad.clone();
            g.zip_mut_with(val(p[0]), |x, &v| *x *= 2.0 * v);
            accum(nodes, grads, p[0], g);
        }
        Op::Recip => {
            let mut g = grad.clone();
            g.zip_mut_with(&node.value, |x, &y| *x *= -y * y);
            accum(nodes, grads, p[0], g);
        }
        Op::AddScalar(_) => accum(nodes, grads, p[0], grad.clone()),
        Op::MulScalar(c) => accum(nodes, grads, p[0], grad.mapv(|g| g * c)),
        Op::ClampMin(c) => {
            let mut g = grad.clone();
            g.zip_mut_with(val(p[0]), |x, &v| {
                if v <= *c {
                    *x = 0.0
                }
            });
            accum(nodes, grads, p[0], g);
        }
        Op::PowScalar(e) => {
            let mut g = grad.clone();
            g.zip_mut_with(val(p[0]), |x, &v| *x *= e * v.powf(e - 1.0));
            accum(nodes, grads, p[0], g);
        }
        Op::Softmax { axis } => {
            let y = &node.value;
            let gy = bcast_zip(grad, y, |g, v| g * v);
            let s = gy.sum_axis(Axis(*axis)).insert_axis(Axis(*axis));
            let sb = s.broadcast(y.raw_dim()).expect("softmax sum broadcast");
            let mut ga = grad.clone();
            ndarray::Zip::from(&mut ga).and(y).and(&sb).for_each(|g, &v, &sv| {
                *g = v * (*g - sv);
            });
            accum(nodes, grads, p[0], ga);
        }
        Op::MatMul => {
            let a = val(p[0]).view().into_dimensionality::<Ix2>().unwrap();
            let b = val(p[1]).view().into_dimensionality::<Ix2>().unwrap();
            let g = grad.view().into_dimensionality::<Ix2>().unwrap();
            accum(nodes, grads, p[0], g.dot(&b.t()).into_dyn());
            accum(nodes, grads, p[1], a.t().dot(&g).into_dyn());
        }
        Op::BatchMatMul => {
            let a = val(p[0]);
            let b = val(p[1]);
            let nb = a.shape()[0];
            let mut ga = ArrayD::zeros(a.raw_dim());
            let mut gb = ArrayD::zeros(b.raw_dim());
            for k in 0..nb {
                let ak = a.index_axis(Axis(0), k).into_dimensionality::<Ix2>().unwrap();
                let bk = b.index_axis(Axis(0), k).into_dimensionality::<Ix2>().unwrap();
                let gk = grad.index_axis(Axis(0), k).into_dimensionality::<Ix2>().unwrap();
                ga.index_axis_mut(Axis(0), k).assign(&gk.dot(&bk.t()));
                gb.index_axis_mut(Axis(0), k).assign(&ak.t().dot(&gk));
            }
            accum(nodes, grads, p[0], ga);
            accum(nodes, grads, p[1], gb);
        }
        Op::Conv2d { stride, pad } => {
            let (gx, gw) = conv::conv2d_backward(val(p[0]), val(p[1]), grad, *stride, *pad);
            accum(nodes, grads, p[0], gx);
            accum(nodes, grads, p[1], gw);
        }
        Op::MaxPool2d { argmax, .. } => {
            let gx = conv::max_pool2d_backward(val(p[0]).shape(), grad, argmax);
            accum(nodes, grads, p[0], gx);
        }
        Op::AvgPool2d { kernel } => {
            let gx = conv::avg_pool2d_backward(val(p[0]).shape(), grad, *kernel);
            accum(nodes, grads, p[0], gx);
        }
        Op::ReflectPad { pad } => {
            let gx = conv::reflect_pad_backward(val(p[0]).shape(), grad, *pad);
            accum(nodes, grads, p[0], gx);
        }
        Op::Upsample2x => {
            let gx = conv::upsample2x_backward(val(p[0]).shape(), grad);
            accum(nodes, grads, p[0], gx);
        }
        Op::GridSample => {
            let (gsrc, ggrid) = sample::grid_sample_backward(val(p[0]), val(p[1]), grad);
            accum(nodes, grads, p[0], gsrc);
            accum(nodes, grads, p[1], ggrid);
        }
        Op::Rodrigues => {
            let gw = rodrigues::rodrigues_backward(val(p[0]), grad);
            accum(nodes, grads, p[0], gw);
        }
        Op::SumAll => {
            let g0 = *grad.iter().next().unwrap();
            accum(
                nodes,
                grads,
                p[0],
                ArrayD::from_elem(val(p[0]).raw_dim(), g0),
            );
        }
        Op::SumAxes { axes, keepdims } => {
            let mut g = grad.clone();
            if !keepdims {
                let mut sorted = axes.clone();
                sorted.sort_unstable();
                for &ax in &sorted {
                    g = g.insert_axis(Axis(ax));
                }
            }
            let gb = g
                .broadcast(val(p[0]).raw_dim())
                .expect("sum backward broadcast")
                .to_owned();
            accum(nodes, grads, p[0], gb);
        }
        Op::MaxAxis { axis, argmax } => {
            let x = val(p[0]);
            let mut gx = ArrayD::zeros(x.raw_dim());
            let stride = x.strides()[*axis] as usize;
            // grad has the reduced axis as size 1; iterate lanes in tandem.
            {
                let gx_slice = gx.as_slice_memory_order_mut().unwrap();
                let mut lane_starts: Vec<usize> = Vec::with_capacity(argmax.len());
                collect_lane_offsets(x.shape(), *axis, &mut lane_starts);
                for (lane_idx, (&am, &g)) in argmax.iter().zip(grad.iter()).enumerate() {
                    let base = lane_starts[lane_idx];
                    gx_slice[base + am as usize * stride] += g;
                }
            }
            accum(nodes, grads, p[0], gx);
        }
        Op::Reshape => {
            let g = reshape_standard(grad.clone(), val(p[0]).shape());
            accum(nodes, grads, p[0], g);
        }
        Op::Permute { axes } => {
            let mut inv = vec![0usize; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inv[a] = i;
            }
            let g = grad
                .view()
                .permuted_axes(IxDyn(&inv))
                .as_standard_layout()
                .to_owned();
            accum(nodes, grads, p[0], g);
        }
        Op::Concat { axis } => {
            let mut start = 0usize;
            for &pi in p {
                let len = val(pi).shape()[*axis];
                let g = grad
                    .slice_axis(Axis(*axis), Slice::from(start..start + len))
                    .to_owned();
                accum(nodes, grads, pi, g);
                start += len;
            }
        }
        Op::Narrow { axis, start } => {
            let mut gx = ArrayD::zeros(val(p[0]).raw_dim());
            let len = grad.shape()[*axis];
            gx.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len))
                .assign(grad);
            accum(nodes, grads, p[0], gx);
        }
    }
}

/// Flat memory offsets of the first element of each lane along `axis`,
/// in the iteration order of the reduced array (standard layout assumed).
fn collect_lane_offsets(shape: &[usize], axis: usize, out: &mut Vec<usize>) {
    let ndim = shape.len();
    let mut strides = vec![1usize; ndim];
    for i in (0..ndim - 1).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let mut idx = vec![0usize; ndim];
    loop {
        let off: usize = idx
            .iter()
            .zip(&strides)
            .enumerate()
            .map(|(d, (&i, &s))| if d == axis { 0 } else { i * s })
            .sum();
        out.push(off);
        // advance multi-index, skipping the reduced axis
        let mut d = ndim;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if d == axis {
                continue;
            }
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn reshape_standard(arr: ArrayD<f64>, dims: &[usize]) -> ArrayD<f64> {
    let arr = if arr.is_standard_layout() {
        arr
    } else {
        arr.as_standard_layout().to_owned()
    };
    arr.into_shape_with_order(IxDyn(dims))
        .expect("reshape: element count mismatch")
}

fn same_tape(a: Tensor<'_>, b: Tensor<'_>) {
    debug_assert!(std::ptr::eq(a.tape, b.tape), "tensors from different tapes");
}

impl<'t> Tensor<'t> {
    fn binary(self, other: Tensor<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor<'t> {
        same_tape(self, other);
        let out = {
            let nodes = self.tape.nodes.borrow();
            bcast_zip(&nodes[self.idx].value, &nodes[other.idx].value, f)
        };
        self.tape.push_op(out, vec![self.idx, other.idx], op)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.idx].value.mapv(&f)
        };
        self.tape.push_op(out, vec![self.idx], op)
    }

    pub fn add(self, o: Tensor<'t>) -> Tensor<'t> {
        self.binary(o, Op::Add, |a, b| a + b)
    }
    pub fn sub(self, o: Tensor<'t>) -> Tensor<'t> {
        self.binary(o, Op::Sub, |a, b| a - b)
    }
    pub fn mul(self, o: Tensor<'t>) -> Tensor<'t> {
        self.binary(o, Op::Mul, |a, b| a * b)
    }
    pub fn div(self, o: Tensor<'t>) -> Tensor<'t> {
        self.binary(o, Op::Div, |a, b| a / b)
    }
    pub fn min_elem(self, o: Tensor<'t>) -> Tensor<'t> {
        self.binary(o, Op::MinElem, f64::min)
    }
    pub fn max_elem(self, o: Tensor<'t>) -> Tensor<'t> {
        self.binary(o, Op::MaxElem, f64::max)
    }

    pub fn neg(self) -> Tensor<'t> {
        self.unary(Op::Neg, |v| -v)
    }
    pub fn exp(self) -> Tensor<'t> {
        self.unary(Op::Exp, f64::exp)
    }
    pub fn ln(self) -> Tensor<'t> {
        self.unary(Op::Ln, f64::ln)
    }
    pub fn sqrt(self) -> Tensor<'t> {
        self.unary(Op::Sqrt, f64::sqrt)
    }
    pub fn sigmoid(self) -> Tensor<'t> {
        self.unary(Op::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }
    pub fn relu(self) -> Tensor<'t> {
        self.unary(Op::Relu, |v| v.max(0.0))
    }
    pub fn abs(self) -> Tensor<'t> {
        self.unary(Op::Abs, f64::abs)
    }
    pub fn square(self) -> Tensor<'t> {
        self.unary(Op::Square, |v| v * v)
    }
    pub fn recip(self) -> Tensor<'t> {
        self.unary(Op::Recip, |v| 1.0 / v)
    }
    pub fn add_scalar(self, c: f64) -> Tensor<'t> {
        self.unary(Op::AddScalar(c), |v| v + c)
    }
    pub fn mul_scalar(self, c: f64) -> Tensor<'t> {
        self.unary(Op::MulScalar(c), |v| v * c)
    }
    pub fn clamp_min(self, c: f64) -> Tensor<'t> {
        self.unary(Op::ClampMin(c), |v| v.max(c))
    }
    pub fn powf_scalar(self, e: f64) -> Tensor<'t> {
        self.unary(Op::PowScalar(e), |v| v.powf(e))
    }

    pub fn softmax(self, axis: usize) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let mut y = nodes[self.idx].value.clone();
            for mut lane in y.lanes_mut(Axis(axis)) {
                let m = lane.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                let mut s = 0.0;
                for x in lane.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                for x in lane.iter_mut() {
                    *x /= s;
                }
            }
            y
        };
        self.tape.push_op(out, vec![self.idx], Op::Softmax { axis })
    }

    /// 2-D matrix product.
    pub fn matmul(self, o: Tensor<'t>) -> Tensor<'t> {
        same_tape(self, o);
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.idx].value.view().into_dimensionality::<Ix2>().unwrap();
            let b = nodes[o.idx].value.view().into_dimensionality::<Ix2>().unwrap();
            a.dot(&b).into_dyn()
        };
        self.tape.push_op(out, vec![self.idx, o.idx], Op::MatMul)
    }

    /// Batched matrix product over the leading axis: (B,m,k)·(B,k,n).
    pub fn batch_matmul(self, o: Tensor<'t>) -> Tensor<'t> {
        same_tape(self, o);
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let b = &nodes[o.idx].value;
            assert_eq!(a.ndim(), 3, "batch_matmul lhs must be 3-D");
            assert_eq!(b.ndim(), 3, "batch_matmul rhs must be 3-D");
            assert_eq!(a.shape()[0], b.shape()[0], "batch dims differ");
            let (nb, m, n) = (a.shape()[0], a.shape()[1], b.shape()[2]);
            let mut out = ArrayD::zeros(IxDyn(&[nb, m, n]));
            for k in 0..nb {
                let ak = a.index_axis(Axis(0), k).into_dimensionality::<Ix2>().unwrap();
                let bk = b.index_axis(Axis(0), k).into_dimensionality::<Ix2>().unwrap();
                out.index_axis_mut(Axis(0), k).assign(&ak.dot(&bk));
            }
            out
        };
        self.tape.push_op(out, vec![self.idx, o.idx], Op::BatchMatMul)
    }

    pub fn sum_all(self) -> Tensor<'t> {
        let s = self.with_value(|v| v.sum());
        self.tape
            .push_op(ArrayD::from_elem(IxDyn(&[]), s), vec![self.idx], Op::SumAll)
    }

    pub fn mean_all(self) -> Tensor<'t> {
        let n = self.len() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    pub fn sum_axes(self, axes: &[usize], keepdims: bool) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let mut v = nodes[self.idx].value.clone();
            let mut sorted = axes.to_vec();
            sorted.sort_unstable();
            for &ax in sorted.iter().rev() {
                v = v.sum_axis(Axis(ax));
                if keepdims {
                    v = v.insert_axis(Axis(ax));
                }
            }
            v
        };
        self.tape.push_op(
            out,
            vec![self.idx],
            Op::SumAxes {
                axes: axes.to_vec(),
                keepdims,
            },
        )
    }

    pub fn mean_axes(self, axes: &[usize], keepdims: bool) -> Tensor<'t> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keepdims).mul_scalar(1.0 / n as f64)
    }

    /// Maximum along `axis`, keeping the axis with size 1.
    pub fn max_axis(self, axis: usize) -> Tensor<'t> {
        let (out, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.idx].value;
            let mut arg: Vec<u32> = Vec::with_capacity(v.len() / v.shape()[axis]);
            let mut maxes: Vec<f64> = Vec::with_capacity(arg.capacity());
            for lane in v.lanes(Axis(axis)) {
                let (mut bi, mut bv) = (0usize, f64::NEG_INFINITY);
                for (i, &x) in lane.iter().enumerate() {
                    if x > bv {
                        bv = x;
                        bi = i;
                    }
                }
                arg.push(bi as u32);
                maxes.push(bv);
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = 1;
            (
                ArrayD::from_shape_vec(IxDyn(&shape), maxes).unwrap(),
                arg,
            )
        };
        self.tape
            .push_op(out, vec![self.idx], Op::MaxAxis { axis, argmax })
    }

    pub fn reshape(self, dims: &[usize]) -> Tensor<'t> {
        let out = reshape_standard(self.value(), dims);
        self.tape.push_op(out, vec![self.idx], Op::Reshape)
    }

    pub fn permute(self, axes: &[usize]) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.idx]
                .value
                .view()
                .permuted_axes(IxDyn(axes))
                .as_standard_layout()
                .to_owned()
        };
        self.tape.push_op(
            out,
            vec![self.idx],
            Op::Permute {
                axes: axes.to_vec(),
            },
        )
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Tensor<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.idx]
                .value
                .slice_axis(Axis(axis), Slice::from(start..start + len))
                .as_standard_layout()
                .to_owned()
        };
        self.tape
            .push_op(out, vec![self.idx], Op::Narrow { axis, start })
    }
}

/// Concatenate tensors along `axis`.
pub fn concat<'t>(tensors: &[Tensor<'t>], axis: usize) -> Tensor<'t> {
    assert!(!tensors.is_empty(), "concat of zero tensors");
    let tape = tensors[0].tape;
    let out = {
        let nodes = tape.nodes.borrow();
        let views: Vec<_> = tensors.iter().map(|t| nodes[t.idx].value.view()).collect();
        concatenate(Axis(axis), &views).expect("concat shape mismatch")
    };
    tape.push_op(
        out,
        tensors.iter().map(|t| t.idx).collect(),
        Op::Concat { axis },
    )
}
