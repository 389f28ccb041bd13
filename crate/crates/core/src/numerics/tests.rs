use proptest::prelude::*;
use rand::Rng;

use super::gradcheck::{analytic, check};
use super::*;
use crate::seed;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so relu kinks stay out of the FD stencil.
fn rand_away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn reference_conv(x: &Tensor, w: &Tensor, b: &[f64], s: usize, p: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [co, _, k, _] = w.dims4().unwrap();
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (wd + 2 * p - k) / s + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for bi in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn identity_kernel() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]));
    let w = g.constant(t(&[1, 1, 1, 1], &[1.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2., 3., 4., 5., 6.]);
}

#[test]
fn constant_field_conv() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn(&[1, 1, 5, 5], |_| 1.0));
    let w = g.constant(Tensor::from_fn(&[1, 1, 3, 3], |_| 1.0));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
    assert!(g.value(y).data().iter().all(|&v| v == 9.0));
}

#[test]
fn conv_matches_reference_loops() {
    let mut rng = seed::rng(11);
    for &(s, p, k) in &[(1, 0, 3), (2, 1, 3), (1, 1, 3), (2, 0, 1), (1, 0, 1), (3, 2, 3)] {
        let x = rand_tensor(&mut rng, &[2, 3, 7, 6]);
        let w = rand_tensor(&mut rng, &[4, 3, k, k]);
        let b = rand_tensor(&mut rng, &[4]);
        let want = reference_conv(&x, &w, b.data(), s, p);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d(xv, wv, Some(bv), s, p).unwrap();
        assert_eq!(g.value(y).numel(), want.len());
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_shape_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(g.conv2d(x, w, None, 1, 1).is_err());
    let w2 = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
    assert!(g.conv2d(x, w2, None, 0, 1).is_err());
    let b = g.constant(Tensor::zeros(&[2]));
    assert!(g.conv2d(x, w2, Some(b), 1, 1).is_err());
}

#[test]
fn trivial_nonlinearities() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);
}

#[test]
fn upsample_repeats_blocks() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
    let u = g.upsample2x(x).unwrap();
    assert_eq!(
        g.value(u).data(),
        &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
}

#[test]
fn broadcast_mismatch_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
    let b = g.constant(Tensor::zeros(&[2]));
    assert!(g.add(a, b).is_err());
    let c = g.constant(Tensor::zeros(&[3]));
    assert!(g.mul(a, c).is_ok());
}

#[test]
fn non_finite_trips_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(1e308));
    assert!(matches!(g.scale(a, 10.0), Err(crate::Error::NonFinite(_))));
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[3.0, -2.0]));
    let l = g.sum_squares(x).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[6.0, -4.0]);
    assert!(g.is_empty(), "tape resets after backward");
}

#[test]
fn sigmoid_slope_at_zero() {
    let mut g = Graph::new();
    let w = g.param(t(&[1, 1, 1, 1], &[0.0]));
    let x = g.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    let s = g.sigmoid(y).unwrap();
    let l = g.sum_all(s).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).unwrap(), &[0.25]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn shared_subexpression_accumulates() {
    // d/dx (x*x + x) = 2x + 1
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.5));
    let xx = g.mul(x, x).unwrap();
    let y = g.add(xx, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[4.0]);
}

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

#[test]
fn gradcheck_conv() {
    let mut rng = seed::rng(1);
    for i in 0..20 {
        let (s, p) = if i % 2 == 0 { (1, 1) } else { (2, 1) };
        let ins = vec![
            rand_tensor(&mut rng, &[2, 2, 5, 4]),
            rand_tensor(&mut rng, &[3, 2, 3, 3]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[2, 3, (5 + 2 - 3) / s + 1, (4 + 2 - 3) / s + 1]),
        ];
        let f = move |g: &mut Graph, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), s, p)?;
            let m = g.mul(y, v[3])?;
            g.sum_all(m)
        };
        let e = check(&f, &ins, H).unwrap();
        assert!(e < TOL, "conv rel err {e}");
    }
}

#[test]
fn gradcheck_pointwise_and_reductions() {
    let mut rng = seed::rng(2);
    for _ in 0..20 {
        let ins = vec![
            rand_away_from_zero(&mut rng, &[2, 3, 2, 2]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[2, 3, 4, 4]),
        ];
        let f = |g: &mut Graph, v: &[Var]| {
            let r = g.relu(v[0])?;
            let a = g.add(r, v[1])?;
            let s = g.sigmoid(a)?;
            let m = g.mul(s, v[1])?;
            let d = g.sub(m, v[0])?;
            let u = g.upsample2x(d)?;
            let w = g.mul(u, v[2])?;
            let ax = g.sum_axis(w, 1)?;
            let sq = g.sum_squares(ax)?;
            let mn = g.mean_all(w)?;
            let sc = g.scale(mn, 3.0)?;
            g.add(sq, sc)
        };
        let e = check(&f, &ins, H).unwrap();
        assert!(e < TOL, "pointwise rel err {e}");
    }
}

#[test]
fn backward_is_linear() {
    let mut rng = seed::rng(3);
    let ins = vec![rand_tensor(&mut rng, &[1, 2, 3, 3]), rand_tensor(&mut rng, &[2, 2, 3, 3])];
    let l1 = |g: &mut Graph, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], None, 1, 1)?;
        let s = g.sigmoid(y)?;
        g.sum_all(s)
    };
    let l2 = |g: &mut Graph, v: &[Var]| g.sum_squares(v[1]);
    let combo = |g: &mut Graph, v: &[Var]| {
        let a = l1(g, v)?;
        let b = l2(g, v)?;
        let a2 = g.scale(a, 0.5)?;
        let b2 = g.scale(b, 4.0)?;
        g.add(a2, b2)
    };
    let ga = analytic(&l1, &ins).unwrap();
    let gb = analytic(&l2, &ins).unwrap();
    let gc = analytic(&combo, &ins).unwrap();
    for i in 0..2 {
        for j in 0..gc[i].len() {
            assert_eq!(gc[i][j], 0.5 * ga[i][j] + 4.0 * gb[i][j]);
        }
    }
}

#[test]
fn forward_backward_deterministic() {
    let mut rng = seed::rng(4);
    let ins = vec![rand_tensor(&mut rng, &[2, 3, 6, 6]), rand_tensor(&mut rng, &[4, 3, 3, 3])];
    let f = |g: &mut Graph, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], None, 2, 1)?;
        g.sum_squares(y)
    };
    assert_eq!(analytic(&f, &ins).unwrap(), analytic(&f, &ins).unwrap());
}

proptest! {
    #[test]
    fn upsample_then_sum_scales_by_four(vals in prop::collection::vec(-10.0f64..10.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3, 2, 2], vals.clone()).unwrap());
        let u = g.upsample2x(x).unwrap();
        let s = g.sum_all(u).unwrap();
        let want: f64 = vals.iter().sum::<f64>() * 4.0;
        prop_assert!((g.value(s).item() - want).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_in_unit_interval(v in -800.0f64..800.0) {
        let s = sigmoid(v);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((sigmoid(-v) - (1.0 - s)).abs() < 1e-12);
    }
}
