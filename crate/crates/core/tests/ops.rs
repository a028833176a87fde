mod common;

use common::{max_rel_diff, random};
use proptest::prelude::*;
use witunet::ops::{conv2d, conv_transpose2d, gelu, layer_norm, linear, softmax, ConvSpec, DEFAULT_LN_EPS};
use witunet::rng::SplitMix64;
use witunet::{Tape, Tensor};

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let (cin, h, wd) = (x.dims()[1], x.dims()[2], x.dims()[3]);
    let (cout, k) = (w.dims()[0], w.dims()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for r in 0..ho {
            for c in 0..wo {
                let mut s = 0.0;
                for i in 0..cin {
                    for kr in 0..k {
                        for kc in 0..k {
                            let (ir, ic) = ((r * stride + kr) as isize - pad as isize, (c * stride + kc) as isize - pad as isize);
                            if ir >= 0 && ic >= 0 && (ir as usize) < h && (ic as usize) < wd {
                                s += w.data()[((o * cin + i) * k + kr) * k + kc] * x.data()[(i * h + ir as usize) * wd + ic as usize];
                            }
                        }
                    }
                }
                out[(o * ho + r) * wo + c] = s;
            }
        }
    }
    (out, ho, wo)
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = SplitMix64::new(1);
    let x = random::<f64>(&[1, 2, 5, 5], 1.0, &mut rng);
    let w = random::<f64>(&[3, 2, 3, 3], 1.0, &mut rng);
    let got = conv2d(&x, &w, None, &ConvSpec::new(2, 3, 3, 2, 1)).unwrap();
    let (want, ho, wo) = naive_conv(&x, &w, 2, 1);
    assert_eq!(got.dims(), &[1, 3, ho, wo]);
    assert!(max_rel_diff(got.data(), &want) <= 1e-5);
}

#[test]
fn conv_transpose_is_dot_product_adjoint() {
    let mut rng = SplitMix64::new(2);
    let x = random::<f32>(&[1, 2, 4, 4], 1.0, &mut rng);
    let w = random::<f32>(&[2, 3, 2, 2], 1.0, &mut rng);
    let y = random::<f32>(&[1, 3, 8, 8], 1.0, &mut rng);
    // conv_transpose with weight (Cin=2, Cout=3) is the adjoint of conv 3 → 2
    let up = conv_transpose2d(&x, &w, None, 2).unwrap();
    let down = conv2d(&y, &w, None, &ConvSpec::new(3, 2, 2, 2, 0)).unwrap();
    let (lhs, rhs) = (up.dot(&y), x.dot(&down));
    assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
}

#[test]
fn linear_matches_loops() {
    let mut rng = SplitMix64::new(3);
    let x = random::<f64>(&[2, 3, 5], 1.0, &mut rng);
    let w = random::<f64>(&[4, 5], 1.0, &mut rng);
    let b = random::<f64>(&[4], 1.0, &mut rng);
    let got = linear(&x, &w, Some(&b)).unwrap();
    assert_eq!(got.dims(), &[2, 3, 4]);
    for t in 0..6 {
        for o in 0..4 {
            let want: f64 = b.data()[o] + (0..5).map(|i| w.data()[o * 5 + i] * x.data()[t * 5 + i]).sum::<f64>();
            assert!((got.data()[t * 4 + o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_output_statistics() {
    let mut rng = SplitMix64::new(4);
    let x = random::<f64>(&[16, 32], 3.0, &mut rng);
    let (y, _) = layer_norm(&x, &Tensor::full(&[32], 1.0), &Tensor::zeros(&[32]), DEFAULT_LN_EPS).unwrap();
    for row in y.data().chunks(32) {
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() <= 1e-5);
        assert!((var - 1.0).abs() <= 1e-3);
    }
}

#[test]
fn gelu_reference_values() {
    let g = gelu(&Tensor::<f64>::from_vec(&[3], vec![-10.0, 0.0, 10.0]).unwrap());
    assert!(g.data()[0].abs() <= 1e-4);
    assert_eq!(g.data()[1], 0.0);
    assert!((g.data()[2] - 10.0).abs() <= 1e-4);
}

#[test]
fn ops_are_pure() {
    let mut rng = SplitMix64::new(5);
    let x = random::<f32>(&[2, 4, 9, 7], 1.0, &mut rng);
    let w = random::<f32>(&[6, 4, 3, 3], 1.0, &mut rng);
    let spec = ConvSpec::new(4, 6, 3, 1, 1);
    let a = conv2d(&x, &w, None, &spec).unwrap();
    let b = conv2d(&x, &w, None, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(softmax(&x), softmax(&x));
}

#[test]
fn mse_loss_gradient_formula() {
    let mut tape = Tape::<f64>::new();
    let p = tape.param("p", Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let t = tape.constant(Tensor::from_vec(&[4], vec![0.5, 2.5, 3.0, 3.0]).unwrap());
    let loss = witunet::train::loss_mse(&mut tape, &p, &t).unwrap();
    assert!((loss.value().data()[0] - (0.25 + 0.25 + 0.0 + 1.0) / 4.0).abs() < 1e-15);
    let g = tape.backward(&loss).unwrap().params();
    let want = [0.25, -0.25, 0.0, 0.5];
    for (a, b) in g["p"].data().iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let offset = tape.constant(Tensor::full(&[4], 1.5));
    let shifted = tape.constant(Tensor::full(&[4], 1.0));
    let l = witunet::train::loss_mse(&mut tape, &offset, &shifted).unwrap();
    assert_eq!(l.value().data()[0], 0.25);
}

fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 2usize..9).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(-5.0f64..5.0, r * c))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((r, c, data) in small_matrix(), shift in -50.0f64..50.0) {
        let x = Tensor::from_vec(&[r, c], data).unwrap();
        let y = softmax(&x);
        for row in y.data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        let ys = softmax(&x.map(|v| v + shift));
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_shift_and_scale_invariance((r, c, data) in small_matrix(), a in -10.0f64..10.0, b in 0.5f64..4.0) {
        let x = Tensor::from_vec(&[r, c], data).unwrap();
        prop_assume!(x.data().chunks(c).all(|row| {
            let m = row.iter().sum::<f64>() / c as f64;
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c as f64 > 1.0
        }));
        let (g, bt) = (Tensor::full(&[c], 1.0), Tensor::zeros(&[c]));
        let (base, _) = layer_norm(&x, &g, &bt, DEFAULT_LN_EPS).unwrap();
        let (shifted, _) = layer_norm(&x.map(|v| v + a), &g, &bt, DEFAULT_LN_EPS).unwrap();
        let (scaled, _) = layer_norm(&x.map(|v| v * b), &g, &bt, DEFAULT_LN_EPS).unwrap();
        for i in 0..base.numel() {
            prop_assert!((base.data()[i] - shifted.data()[i]).abs() <= 1e-5);
            prop_assert!((base.data()[i] - scaled.data()[i]).abs() <= 1e-4);
        }
    }
}
