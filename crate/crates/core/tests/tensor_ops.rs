//! Gradient and semantics checks for every tape operation, verified against
//! central finite differences in double precision.

use duodepth_core::tensor::{concat, gradcheck, Tape};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-3;

#[test]
fn elementwise_binary_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_array(&mut rng, &[2, 3, 4], 0.2, 2.0);
    let b = rand_array(&mut rng, &[2, 3, 4], 0.2, 2.0);
    gradcheck::assert_close(
        |_, xs| xs[0].add(xs[1]).mul(xs[0]).sub(xs[1].div(xs[0])).sum_all(),
        &[a.clone(), b.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(
        |_, xs| xs[0].min_elem(xs[1]).add(xs[0].max_elem(xs[1])).sum_all(),
        &[a, b],
        EPS,
        TOL,
    );
}

#[test]
fn broadcast_gradients_reduce_correctly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_array(&mut rng, &[2, 3, 2, 2], 0.2, 1.0);
    let c = rand_array(&mut rng, &[1, 3, 1, 1], 0.2, 1.0);
    let v = rand_array(&mut rng, &[2, 2], 0.2, 1.0);
    gradcheck::assert_close(
        |_, xs| xs[0].mul(xs[1]).add(xs[2]).square().sum_all(),
        &[x, c, v],
        EPS,
        TOL,
    );
}

#[test]
fn unary_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pos = rand_array(&mut rng, &[3, 4], 0.3, 2.0);
    gradcheck::assert_close(
        |_, xs| {
            xs[0]
                .exp()
                .add(xs[0].ln())
                .add(xs[0].sqrt())
                .add(xs[0].recip())
                .add(xs[0].powf_scalar(1.7))
                .sum_all()
        },
        &[pos],
        EPS,
        TOL,
    );
    let any = rand_array(&mut rng, &[3, 4], -2.0, 2.0);
    gradcheck::assert_close(
        |_, xs| {
            xs[0]
                .sigmoid()
                .add(xs[0].relu())
                .add(xs[0].abs())
                .add(xs[0].neg().mul_scalar(0.3).add_scalar(1.0))
                .sum_all()
        },
        &[any],
        EPS,
        TOL,
    );
}

#[test]
fn softmax_rows_sum_to_one_and_gradients_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_array(&mut rng, &[2, 5], -3.0, 3.0);
    let tape = Tape::new();
    let t = tape.leaf(x.clone());
    let y = t.softmax(1);
    let sums = y.value().sum_axis(ndarray::Axis(1));
    for &s in sums.iter() {
        assert!((s - 1.0).abs() < 1e-12, "softmax row sum {s}");
    }
    let w = rand_array(&mut rng, &[2, 5], -1.0, 1.0);
    gradcheck::assert_close(
        move |tp, xs| xs[0].softmax(1).mul(tp.constant(w.clone())).sum_all(),
        &[x],
        EPS,
        TOL,
    );
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_array(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_array(&mut rng, &[4, 2], -1.0, 1.0);
    gradcheck::assert_close(
        |_, xs| xs[0].matmul(xs[1]).square().sum_all(),
        &[a, b],
        EPS,
        TOL,
    );
    let a3 = rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b3 = rand_array(&mut rng, &[2, 4, 2], -1.0, 1.0);
    gradcheck::assert_close(
        |_, xs| xs[0].batch_matmul(xs[1]).square().sum_all(),
        &[a3, b3],
        EPS,
        TOL,
    );
}

#[test]
fn conv2d_gradients_and_strided_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_array(&mut rng, &[2, 3, 6, 7], -1.0, 1.0);
    let w = rand_array(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    gradcheck::assert_close(
        |_, xs| xs[0].conv2d(xs[1], 1, 1).square().sum_all(),
        &[x.clone(), w.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(
        |_, xs| xs[0].conv2d(xs[1], 2, 1).square().sum_all(),
        &[x, w],
        EPS,
        TOL,
    );
}

#[test]
fn pooling_and_padding_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_array(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
    gradcheck::assert_close(
        |_, xs| xs[0].max_pool2d(3, 2, 1).square().sum_all(),
        &[x.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(
        |_, xs| xs[0].reflect_pad(1).avg_pool2d(3).square().sum_all(),
        &[x.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(|_, xs| xs[0].upsample2x().square().sum_all(), &[x], EPS, TOL);
}

#[test]
fn grid_sample_gradients_wrt_source_and_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let src = rand_array(&mut rng, &[1, 2, 5, 6], 0.0, 1.0);
    // interior, non-integer coordinates so the kink set is avoided
    let n = 2 * 3 * 4;
    let coords: Vec<f64> = (0..n)
        .map(|i| {
            if i < n / 2 {
                rng.gen_range(0.3..4.6) // u in (0, W-1)
            } else {
                rng.gen_range(0.3..3.6) // v in (0, H-1)
            }
        })
        .map(|c: f64| if c.fract() < 0.05 { c + 0.07 } else { c })
        .collect();
    let grid = ArrayD::from_shape_vec(IxDyn(&[1, 2, 3, 4]), coords).unwrap();
    gradcheck::assert_close(
        |_, xs| xs[0].grid_sample(xs[1]).0.square().sum_all(),
        &[src, grid],
        EPS,
        TOL,
    );
}

#[test]
fn grid_sample_identity_and_out_of_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let src = rand_array(&mut rng, &[1, 3, 4, 5], 0.0, 1.0);
    let mut coords = Vec::new();
    for v in 0..4 {
        for u in 0..5 {
            let _ = v;
            coords.push(u as f64);
        }
    }
    for v in 0..4 {
        for _ in 0..5 {
            coords.push(v as f64);
        }
    }
    let grid = ArrayD::from_shape_vec(IxDyn(&[1, 2, 4, 5]), coords).unwrap();
    let tape = Tape::new();
    let s = tape.constant(src.clone());
    let g = tape.constant(grid);
    let (out, mask) = s.grid_sample(g);
    assert!(mask.iter().all(|&m| m == 1.0), "identity grid fully valid");
    let diff = (&out.value() - &src).mapv(f64::abs).sum();
    assert!(diff < 1e-12, "identity grid must reproduce source, diff {diff}");

    let far = tape.constant(ArrayD::from_elem(IxDyn(&[1, 2, 4, 5]), 100.0));
    let (_, mask2) = s.grid_sample(far);
    assert!(mask2.iter().all(|&m| m == 0.0), "all-out-of-bounds masked");
}

#[test]
fn rodrigues_gradients_including_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let w = rand_array(&mut rng, &[2, 3], -1.5, 1.5);
    let m = rand_array(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let m2 = m.clone();
    gradcheck::assert_close(
        move |tp, xs| {
            xs[0]
                .rodrigues()
                .mul(tp.constant(m.clone()))
                .sum_all()
        },
        &[w],
        EPS,
        TOL,
    );
    let tiny = rand_array(&mut rng, &[2, 3], -1e-4, 1e-4);
    gradcheck::assert_close(
        move |tp, xs| {
            xs[0]
                .rodrigues()
                .mul(tp.constant(m2.clone()))
                .sum_all()
        },
        &[tiny],
        EPS,
        TOL,
    );
}

#[test]
fn reductions_and_shape_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0);
    gradcheck::assert_close(
        |_, xs| xs[0].sum_axes(&[1], true).square().sum_all(),
        &[x.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(
        |_, xs| xs[0].mean_axes(&[0, 2], false).square().sum_all(),
        &[x.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(
        |_, xs| {
            xs[0]
                .permute(&[2, 0, 1])
                .reshape(&[4, 6])
                .narrow(1, 1, 3)
                .square()
                .sum_all()
        },
        &[x.clone()],
        EPS,
        TOL,
    );
    gradcheck::assert_close(|_, xs| xs[0].max_axis(1).square().sum_all(), &[x], EPS, TOL);
}

#[test]
fn concat_and_clamp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = rand_array(&mut rng, &[2, 2, 3], -1.0, 1.0);
    let b = rand_array(&mut rng, &[2, 4, 3], -1.0, 1.0);
    gradcheck::assert_close(
        |_, xs| concat(&[xs[0], xs[1]], 1).square().sum_all(),
        &[a, b],
        EPS,
        TOL,
    );
    // keep values away from the clamp threshold
    let x = rand_array(&mut rng, &[3, 3], 0.5, 2.0)
        .mapv(|v| if v > 1.2 { v } else { v - 2.0 });
    gradcheck::assert_close(
        |_, xs| xs[0].clamp_min(0.1).square().sum_all(),
        &[x],
        EPS,
        TOL,
    );
}

#[test]
fn weight_sharing_accumulates_parameter_gradients() {
    let mut store = duodepth_core::ParamStore::new();
    let id = store.add("shared", ArrayD::from_elem(IxDyn(&[2]), 3.0));
    let tape = Tape::new();
    let p1 = tape.param(&store, id);
    let p2 = tape.param(&store, id);
    assert_eq!(p1.node_index(), p2.node_index());
    let y = p1.mul(p2).sum_all(); // y = sum(p^2), dy/dp = 2p = 6
    let grads = tape.backward(y);
    let g = grads.by_param(&tape, id).expect("param grad");
    assert!(g.iter().all(|&v| (v - 6.0).abs() < 1e-12));
}

#[test]
fn backward_keep_all_exposes_intermediate_gradients() {
    let tape = Tape::new();
    let x = tape.leaf(ArrayD::from_elem(IxDyn(&[3]), 2.0));
    let mid = x.square();
    let y = mid.sum_all();
    let grads = tape.backward_keep_all(y);
    let gm = grads.get(mid).expect("intermediate grad kept");
    assert!(gm.iter().all(|&v| (v - 1.0).abs() < 1e-12));
}
