//! Parameterized layers built on the tape: linear, convolution and
//! batch-size-independent normalization. Layers hold [`ParamId`]s into a
//! [`ParamStore`]; forward passes borrow the store and a tape.

use crate::tensor::{init, ParamId, ParamStore, Tape, Tensor};
use rand::Rng;

/// Fully connected layer; weight stored (in, out) so the forward pass is a
/// plain matmul.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            init::linear_uniform(rng, &[in_dim, out_dim], in_dim),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), init::zeros(&[out_dim])));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// Zero-initialized variant (pose head: identity transform at start).
    pub fn new_zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), init::zeros(&[in_dim, out_dim]));
        let b = Some(store.add(format!("{name}.b"), init::zeros(&[out_dim])));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// Input `... x in_dim`, output `... x out_dim`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Tensor<'t>) -> Tensor<'t> {
        let shape = x.shape();
        let d = *shape.last().expect("linear input needs >= 1 dim");
        assert_eq!(d, self.in_dim, "linear expects {} features, got {d}", self.in_dim);
        let m: usize = shape[..shape.len() - 1].iter().product();
        let w = tape.param(store, self.w);
        let mut y = x.reshape(&[m, self.in_dim]).matmul(w);
        if let Some(b) = self.b {
            y = y.add(tape.param(store, b));
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        y.reshape(&out_shape)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    cout: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            init::kaiming_uniform(rng, &[cout, cin, kernel, kernel], fan_in),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), init::zeros(&[cout])));
        Conv2d {
            w,
            b,
            stride,
            pad,
            cout,
        }
    }

    /// Set the kernel to zeros (residual units whose last conv starts as a no-op).
    pub fn zero_fill(&self, store: &mut ParamStore) {
        store.value_mut(self.w).fill(0.0);
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Tensor<'t>) -> Tensor<'t> {
        let w = tape.param(store, self.w);
        let mut y = x.conv2d(w, self.stride, self.pad);
        if let Some(b) = self.b {
            let bt = tape.param(store, b).reshape(&[1, self.cout, 1, 1]);
            y = y.add(bt);
        }
        y
    }
}

/// Normalization over the last axis with a learnable affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
    dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), init::ones(&[dim]));
        let beta = store.add(format!("{name}.beta"), init::zeros(&[dim]));
        LayerNorm {
            gamma,
            beta,
            eps: 1e-5,
            dim,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Tensor<'t>) -> Tensor<'t> {
        let last = x.ndim() - 1;
        assert_eq!(x.shape()[last], self.dim, "layer norm width mismatch");
        let mu = x.mean_axes(&[last], true);
        let centered = x.sub(mu);
        let var = centered.square().mean_axes(&[last], true);
        let normed = centered.div(var.add_scalar(self.eps).sqrt());
        normed
            .mul(tape.param(store, self.gamma))
            .add(tape.param(store, self.beta))
    }
}

/// Group normalization for B x C x H x W maps: batch-independent, no
/// running statistics, so evaluation equals training and checkpoints carry
/// no extra state.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f64,
    channels: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "groups must divide channels");
        let gamma = store.add(format!("{name}.gamma"), init::ones(&[channels]));
        let beta = store.add(format!("{name}.beta"), init::zeros(&[channels]));
        GroupNorm {
            gamma,
            beta,
            groups,
            eps: 1e-5,
            channels,
        }
    }

    pub fn with_default_groups(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let groups = if channels % 8 == 0 { 8 } else { 1 };
        Self::new(store, name, channels, groups)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Tensor<'t>) -> Tensor<'t> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "group norm expects B x C x H x W");
        assert_eq!(s[1], self.channels, "group norm channel mismatch");
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let g = self.groups;
        let xg = x.reshape(&[b, g, (c / g) * h * w]);
        let mu = xg.mean_axes(&[2], true);
        let centered = xg.sub(mu);
        let var = centered.square().mean_axes(&[2], true);
        let normed = centered.div(var.add_scalar(self.eps).sqrt()).reshape(&[b, c, h, w]);
        let gamma = tape.param(store, self.gamma).reshape(&[1, c, 1, 1]);
        let beta = tape.param(store, self.beta).reshape(&[1, c, 1, 1]);
        normed.mul(gamma).add(beta)
    }
}

/// Conv -> group norm -> ReLU, the building block of the conv stacks.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: GroupNorm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), cin, cout, kernel, stride, pad, false),
            norm: GroupNorm::with_default_groups(store, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Tensor<'t>) -> Tensor<'t> {
        self.norm
            .forward(tape, store, self.conv.forward(tape, store, x))
            .relu()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut rng, "lin", 4, 3, true);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 5, 4]), |ix| (ix[0] + ix[1] + ix[2]) as f64 * 0.1);
        let tape = Tape::new();
        let y = lin.forward(&tape, &store, tape.constant(x.clone()));
        assert_eq!(y.shape(), vec![2, 5, 3]);

        // gradcheck through the weight
        let w0 = store.value(lin.w).clone();
        gradcheck::assert_close(
            |tp, xs| {
                let mut st = ParamStore::new();
                let id = st.add("w", xs[0].value());
                let _ = id;
                let xt = tp.constant(x.clone());
                let m = xt.reshape(&[10, 4]).matmul(xs[0]);
                m.square().sum_all()
            },
            &[w0],
            1e-5,
            1e-3,
        );
    }

    #[test]
    fn layer_norm_normalizes_last_axis() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 6);
        let x = ArrayD::from_shape_fn(IxDyn(&[3, 6]), |ix| (ix[0] * 6 + ix[1]) as f64);
        let tape = Tape::new();
        let y = ln.forward(&tape, &store, tape.constant(x)).value();
        for row in y.rows() {
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn group_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gn = GroupNorm::new(&mut store, "gn", 4, 2);
        let x = crate::tensor::init::uniform(&mut rng, &[2, 4, 3, 3], 1.0);
        gradcheck::assert_close(
            move |tp, xs| {
                let mut st = ParamStore::new();
                let gn2 = GroupNorm::new(&mut st, "gn", 4, 2);
                *st.value_mut(gn2.gamma) = xs[1].value();
                *st.value_mut(gn2.beta) = xs[2].value();
                let y = {
                    // forward against leaf input by rebuilding the op chain
                    let s = xs[0].shape();
                    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let xg = xs[0].reshape(&[b, 2, (c / 2) * h * w]);
                    let mu = xg.mean_axes(&[2], true);
                    let centered = xg.sub(mu);
                    let var = centered.square().mean_axes(&[2], true);
                    let normed = centered.div(var.add_scalar(1e-5).sqrt()).reshape(&[b, c, h, w]);
                    normed
                        .mul(xs[1].reshape(&[1, c, 1, 1]))
                        .add(xs[2].reshape(&[1, c, 1, 1]))
                };
                y.square().sum_all()
            },
            &[
                x,
                store.value(gn.gamma).clone(),
                store.value(gn.beta).clone(),
            ],
            1e-5,
            1e-3,
        );
    }
}
