use approx::assert_abs_diff_eq;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{run_check, sample_coords, CheckReport};
use super::*;

const H_STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn rand_array(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

/// Flow values that stay a safe margin away from the bilinear lattice and
/// from the clamping boundary, so central differences see a smooth function.
fn safe_flow(rng: &mut impl Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let whole = rng.gen_range(-1i32..=1) as f64;
        let frac = rng.gen_range(0.1..0.9);
        whole + frac
    })
}

fn fd_check(
    store: &mut ParamStore,
    build: impl Fn(&Graph, &ParamStore) -> Tensor,
    n_coords: usize,
) -> CheckReport {
    fd_check_with(store, build, n_coords, H_STEP, TOL)
}

fn fd_check_with(
    store: &mut ParamStore,
    build: impl Fn(&Graph, &ParamStore) -> Tensor,
    n_coords: usize,
    h: f64,
    tol: f64,
) -> CheckReport {
    let g = Graph::new();
    let loss = build(&g, store);
    let grads = g.backward(loss);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let coords = sample_coords(store, &mut rng, n_coords);
    run_check(
        store,
        |s| {
            let g = Graph::new();
            let l = build(&g, s);
            g.scalar(l)
        },
        &grads,
        &coords,
        h,
        tol,
    )
}

fn assert_ok(report: &CheckReport) {
    assert!(
        report.ok(),
        "{} of {} coords failed, worst {:?}",
        report.failures.len(),
        report.checked,
        report.failures.first()
    );
}

#[test]
fn elementwise_chain_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.insert("a", rand_array(&mut rng, &[2, 4, 4], -1.0, 1.0));
    store.insert("b", rand_array(&mut rng, &[2, 4, 4], -1.0, 1.0));
    let report = fd_check(
        &mut store,
        |g, s| {
            let a = g.param(s, s.id("a").unwrap());
            let b = g.param(s, s.id("b").unwrap());
            let prod = g.mul(a, b);
            let act = g.leaky_relu(g.sub(prod, g.sigmoid(b)), 0.1);
            let denom = g.max_scalar(g.sigmoid(a), 0.2);
            let q = g.div(act, denom);
            let scaled = g.scale(g.add(q, g.neg(b)), 0.7);
            g.mean_abs(scaled)
        },
        60,
    );
    assert_ok(&report);
}

#[test]
fn broadcast_mul_div_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    store.insert("img", rand_array(&mut rng, &[3, 4, 5], -1.0, 1.0));
    store.insert("mask", rand_array(&mut rng, &[1, 4, 5], 0.3, 1.5));
    let report = fd_check(
        &mut store,
        |g, s| {
            let img = g.param(s, s.id("img").unwrap());
            let mask = g.param(s, s.id("mask").unwrap());
            let weighted = g.mul(img, mask);
            let ratio = g.div(img, g.max_scalar(mask, 0.25));
            let a = g.mean(g.mul(weighted, weighted));
            let b = g.mean_abs(ratio);
            g.add(a, b)
        },
        60,
    );
    assert_ok(&report);
}

#[test]
fn broadcast_forward_values() {
    let g = Graph::new();
    let a = g.constant(ArrayD::from_elem(IxDyn(&[2, 2, 2]), 3.0));
    let m = g.constant(ArrayD::from_elem(IxDyn(&[1, 2, 2]), 0.5));
    assert_eq!(g.value(g.mul(a, m)), ArrayD::from_elem(IxDyn(&[2, 2, 2]), 1.5));
    assert_eq!(g.value(g.add(m, a)), ArrayD::from_elem(IxDyn(&[2, 2, 2]), 3.5));
}

#[test]
fn reused_parameter_accumulates_gradient() {
    let mut store = ParamStore::new();
    store.insert("a", ArrayD::from_elem(IxDyn(&[4]), 1.5));
    let g = Graph::new();
    let a = g.param(&store, store.id("a").unwrap());
    let loss = g.sum(g.mul(a, a));
    let grads = g.backward(loss);
    // d(sum a^2)/da = 2a.
    assert_eq!(grads.len(), 1);
    assert_eq!(grads[0].1, ArrayD::from_elem(IxDyn(&[4]), 3.0));
}

#[test]
fn constants_get_no_gradients() {
    let mut store = ParamStore::new();
    store.insert("a", ArrayD::from_elem(IxDyn(&[4]), 1.0));
    store.insert("unused", ArrayD::from_elem(IxDyn(&[4]), 1.0));
    let g = Graph::new();
    let a = g.param(&store, store.id("a").unwrap());
    let c = g.constant(ArrayD::from_elem(IxDyn(&[4]), 2.0));
    let loss = g.mean(g.mul(a, c));
    let grads = g.backward(loss);
    assert_eq!(grads.len(), 1);
    assert_eq!(grads[0].0, store.id("a").unwrap().index());
}

#[test]
fn concat_and_slice_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    store.insert("x", rand_array(&mut rng, &[2, 3, 3], -1.0, 1.0));
    store.insert("y", rand_array(&mut rng, &[3, 3, 3], -1.0, 1.0));
    let report = fd_check(
        &mut store,
        |g, s| {
            let x = g.param(s, s.id("x").unwrap());
            let y = g.param(s, s.id("y").unwrap());
            let joined = g.concat(&[x, y]); // 5 channels
            let mid = g.slice_channels(joined, 1, 4);
            let tail = g.slice_channels(joined, 3, 5);
            let a = g.mean_abs(mid);
            let b = g.mean(g.mul(tail, tail));
            g.add(a, b)
        },
        50,
    );
    assert_ok(&report);
}

fn conv_naive(
    input: &ArrayD<f64>,
    weight: &ArrayD<f64>,
    bias: &ArrayD<f64>,
    stride: usize,
) -> ArrayD<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oc = weight.shape()[0];
    let (oh, ow) = ((h + 2 - 3) / stride + 1, (w + 2 - 3) / stride + 1);
    let mut out = ArrayD::zeros(IxDyn(&[oc, oh, ow]));
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for ci in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as isize - 1;
                            let ix = (ox * stride + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += input[[ci, iy as usize, ix as usize]]
                                * weight[[o, ci, ky, kx]];
                        }
                    }
                }
                out[[o, oy, ox]] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for stride in [1, 2] {
        let input = rand_array(&mut rng, &[3, 6, 8], -1.0, 1.0);
        let weight = rand_array(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
        let bias = rand_array(&mut rng, &[4], -0.2, 0.2);
        let g = Graph::new();
        let out = g.conv2d(g.constant(input.clone()), g.constant(weight.clone()), g.constant(bias.clone()), stride);
        let expect = conv_naive(&input, &weight, &bias, stride);
        assert_eq!(g.shape(out), expect.shape().to_vec());
        for (a, b) in g.value(out).iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn conv2d_gradcheck_both_strides() {
    for (seed, stride) in [(15u64, 1usize), (16, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert("input", rand_array(&mut rng, &[2, 6, 6], -1.0, 1.0));
        store.insert("w", rand_array(&mut rng, &[3, 2, 3, 3], -0.5, 0.5));
        store.insert("b", rand_array(&mut rng, &[3], -0.2, 0.2));
        let report = fd_check(
            &mut store,
            |g, s| {
                let x = g.param(s, s.id("input").unwrap());
                let w = g.param(s, s.id("w").unwrap());
                let b = g.param(s, s.id("b").unwrap());
                let y = g.conv2d(x, w, b, stride);
                g.mean(g.mul(y, y))
            },
            60,
        );
        assert_ok(&report);
    }
}

#[test]
fn upsample_forward_and_gradcheck() {
    let g = Graph::new();
    let x = g.constant(ArrayD::from_shape_fn(IxDyn(&[1, 2, 2]), |ix| {
        (ix[1] * 2 + ix[2]) as f64
    }));
    let y = g.upsample2x(x);
    assert_eq!(g.shape(y), vec![1, 4, 4]);
    let v = g.value(y);
    assert_eq!(v[[0, 0, 1]], 0.0);
    assert_eq!(v[[0, 1, 1]], 0.0);
    assert_eq!(v[[0, 2, 3]], 3.0);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    store.insert("x", rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0));
    let report = fd_check(
        &mut store,
        |g, s| {
            let x = g.param(s, s.id("x").unwrap());
            let y = g.upsample2x(x);
            g.mean(g.mul(y, y))
        },
        30,
    );
    assert_ok(&report);
}

#[test]
fn spatial_diff_forward_and_gradcheck() {
    let g = Graph::new();
    let x = g.constant(ArrayD::from_shape_fn(IxDyn(&[1, 2, 3]), |ix| {
        (ix[1] * 3 + ix[2]) as f64
    }));
    assert_eq!(g.value(g.diff_x(x)), ArrayD::from_elem(IxDyn(&[1, 2, 2]), 1.0));
    assert_eq!(g.value(g.diff_y(x)), ArrayD::from_elem(IxDyn(&[1, 1, 3]), 3.0));

    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut store = ParamStore::new();
    store.insert("f", rand_array(&mut rng, &[2, 5, 5], -2.0, 2.0));
    let report = fd_check(
        &mut store,
        |g, s| {
            let f = g.param(s, s.id("f").unwrap());
            let tv = g.add(g.mean_abs(g.diff_x(f)), g.mean_abs(g.diff_y(f)));
            g.scale(tv, 0.5)
        },
        40,
    );
    assert_ok(&report);
}

#[test]
fn warp_zero_flow_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let img = rand_array(&mut rng, &[3, 5, 7], 0.0, 1.0);
    let g = Graph::new();
    let out = g.warp(g.constant(img.clone()), g.constant(ArrayD::zeros(IxDyn(&[2, 5, 7]))));
    assert_eq!(g.value(out), img);
}

#[test]
fn warp_unit_shift_matches_bilinear_oracle() {
    // Horizontal ramp image: I(x) = x / 8. Flow (+1, 0) samples x+1, so the
    // interior becomes I(x) + 1/8 and the right border clamps.
    let w = 8;
    let img = ArrayD::from_shape_fn(IxDyn(&[1, 3, w]), |ix| ix[2] as f64 / 8.0);
    let mut flow = ArrayD::zeros(IxDyn(&[2, 3, w]));
    flow.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
    let g = Graph::new();
    let out = g.value(g.warp(g.constant(img.clone()), g.constant(flow)));
    for y in 0..3 {
        for x in 0..w - 1 {
            assert_abs_diff_eq!(out[[0, y, x]], (x + 1) as f64 / 8.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(out[[0, y, w - 1]], (w - 1) as f64 / 8.0, epsilon = 1e-12);
    }
}

#[test]
fn warp_half_pixel_averages_neighbors() {
    // Two-pixel checker along x; +0.5 flow lands midway between neighbors.
    let img = ArrayD::from_shape_fn(IxDyn(&[1, 2, 6]), |ix| (ix[2] % 2) as f64);
    let mut flow = ArrayD::zeros(IxDyn(&[2, 2, 6]));
    flow.index_axis_mut(ndarray::Axis(0), 0).fill(0.5);
    let g = Graph::new();
    let out = g.value(g.warp(g.constant(img), g.constant(flow)));
    for y in 0..2 {
        for x in 0..5 {
            assert_abs_diff_eq!(out[[0, y, x]], 0.5, epsilon = 1e-12);
        }
    }
}

#[test]
fn warp_is_linear_in_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let a = rand_array(&mut rng, &[2, 6, 6], 0.0, 1.0);
    let b = rand_array(&mut rng, &[2, 6, 6], 0.0, 1.0);
    let flow = safe_flow(&mut rng, &[2, 6, 6]);
    let g = Graph::new();
    let fl = g.constant(flow);
    let combo = g.add(g.scale(g.constant(a.clone()), 0.3), g.scale(g.constant(b.clone()), 0.7));
    let lhs = g.value(g.warp(combo, fl));
    let rhs_t = g.add(
        g.scale(g.warp(g.constant(a), fl), 0.3),
        g.scale(g.warp(g.constant(b), fl), 0.7),
    );
    let rhs = g.value(rhs_t);
    for (x, y) in lhs.iter().zip(rhs.iter()) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-12);
    }
}

#[test]
fn warp_gradcheck_image_and_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    store.insert("img", rand_array(&mut rng, &[2, 6, 7], 0.0, 1.0));
    store.insert("flow", safe_flow(&mut rng, &[2, 6, 7]));
    let mut target_rng = ChaCha8Rng::seed_from_u64(22);
    let target = rand_array(&mut target_rng, &[2, 6, 7], 0.0, 1.0);
    let report = fd_check(
        &mut store,
        |g, s| {
            let img = g.param(s, s.id("img").unwrap());
            let flow = g.param(s, s.id("flow").unwrap());
            let warped = g.warp(img, flow);
            let diff = g.sub(warped, g.constant(target.clone()));
            g.mean(g.mul(diff, diff))
        },
        80,
    );
    assert_ok(&report);
}

#[test]
fn mean_and_sum_backward_are_uniform() {
    let mut store = ParamStore::new();
    store.insert("x", ArrayD::from_elem(IxDyn(&[2, 3]), 2.0));
    let g = Graph::new();
    let x = g.param(&store, store.id("x").unwrap());
    let grads = g.backward(g.mean(x));
    assert_eq!(grads[0].1, ArrayD::from_elem(IxDyn(&[2, 3]), 1.0 / 6.0));

    let g = Graph::new();
    let x = g.param(&store, store.id("x").unwrap());
    let grads = g.backward(g.sum(x));
    assert_eq!(grads[0].1, ArrayD::from_elem(IxDyn(&[2, 3]), 1.0));
}

#[test]
fn encoder_decoder_end_to_end_gradcheck() {
    // A miniature network through every op class the model uses.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    let net = nn::EncoderDecoder::init(&mut store, &mut rng, "net", 2, 2, &[4, 6]);
    let input = rand_array(&mut rng, &[2, 8, 8], -0.5, 0.5);
    let target = rand_array(&mut rng, &[2, 8, 8], 0.0, 1.0);
    // Nudge the head away from zero so its gradients are generic.
    let head_w = store.id("net.head.w").unwrap();
    let nudged = rand_array(&mut rng, &store.value(head_w).shape().to_vec(), -0.05, 0.05);
    *store.value_mut(head_w) = nudged;

    let build = |g: &Graph, s: &ParamStore| {
        let x = g.constant(input.clone());
        let y = net.apply(g, s, x);
        let diff = g.sub(y, g.constant(target.clone()));
        g.mean(g.mul(diff, diff))
    };
    // A perturbation of size h shifts every downstream pre-activation, and
    // any that cross the leaky-relu kink turn the central difference into a
    // one-sided estimate. A smaller step keeps the crossing band negligible;
    // per-op checks above still run at the standard step.
    let report = fd_check_with(&mut store, build, 80, 1e-5, TOL);
    assert_ok(&report);
}
