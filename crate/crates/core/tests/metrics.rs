mod common;

use common::{brute_mse, brute_psnr, brute_ssim};
use proptest::prelude::*;
use witunet::metrics::{gaussian_kernel, psnr, report, rmse, ssim, MetricConfig, SsimMode, Summary};
use witunet::rng::SplitMix64;
use witunet::Tensor;

fn image(rng: &mut SplitMix64, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, h, w], |_| rng.next_f64() as f32)
}

/// Windowed SSIM from direct 2-D weighted sums at every valid position.
fn brute_windowed_ssim(x: &[f32], y: &[f32], h: usize, w: usize, win: usize, sigma: f64, max: f64) -> f64 {
    let r = (win / 2) as f64;
    let mut g = vec![0.0; win * win];
    for i in 0..win {
        for j in 0..win {
            let (di, dj) = (i as f64 - r, j as f64 - r);
            g[i * win + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let z: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = ((0.01 * max).powi(2), (0.03 * max).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r0 in 0..=h - win {
        for c0 in 0..=w - win {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let p = (r0 + i) * w + c0 + j;
                    mx += g[i * win + j] * x[p] as f64;
                    my += g[i * win + j] * y[p] as f64;
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let p = (r0 + i) * w + c0 + j;
                    let (a, b) = (x[p] as f64 - mx, y[p] as f64 - my);
                    vx += g[i * win + j] * a * a;
                    vy += g[i * win + j] * b * b;
                    cxy += g[i * win + j] * a * b;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn metrics_match_brute_force_on_random_pairs() {
    let mut rng = SplitMix64::new(21);
    for max in [1.0, 400.0] {
        let cfg = MetricConfig::for_range(max);
        for i in 0..50 {
            let (h, w) = (8 + i % 9, 12 + i % 5);
            let x = image(&mut rng, h, w);
            let y = image(&mut rng, h, w);
            assert!((psnr(&x, &y, &cfg).unwrap() - brute_psnr(x.data(), y.data(), max)).abs() <= 1e-6);
            assert!((ssim(&x, &y, &cfg).unwrap() - brute_ssim(x.data(), y.data(), max)).abs() <= 1e-6);
            assert!((rmse(&x, &y).unwrap() - brute_mse(x.data(), y.data()).sqrt()).abs() <= 1e-6);
        }
    }
}

#[test]
fn windowed_ssim_matches_direct_windows() {
    let mut rng = SplitMix64::new(22);
    let cfg = MetricConfig { mode: SsimMode::windowed_default(), ..MetricConfig::for_range(1.0) };
    for _ in 0..10 {
        let x = image(&mut rng, 16, 19);
        let y = image(&mut rng, 16, 19);
        let want = brute_windowed_ssim(x.data(), y.data(), 16, 19, 11, 1.5, 1.0);
        assert!((ssim(&x, &y, &cfg).unwrap() - want).abs() <= 1e-6);
    }
    let small = image(&mut rng, 8, 8);
    assert!(ssim(&small, &small, &cfg).is_err());
    let k = gaussian_kernel(11, 1.5);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(k[0], k[10]);
}

#[test]
fn identical_images_and_summaries() {
    let mut rng = SplitMix64::new(23);
    let x = image(&mut rng, 16, 16);
    let cfg = MetricConfig::default();
    assert_eq!(psnr(&x, &x, &cfg).unwrap(), f64::INFINITY);
    assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    let y = x.map(|v| v + 0.5);
    assert!((rmse(&x, &y).unwrap() - 0.5).abs() < 1e-6);
    let r = report(&[(&x, &y), (&y, &x)], &cfg).unwrap();
    assert_eq!(r.len(), 2);
    assert!(report(&[], &cfg).is_err());

    let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((s.min, s.max, s.mean), (1.0, 4.0, 2.5));
    assert!((s.std - 1.25f64.sqrt()).abs() < 1e-12);
    assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    assert!(Summary::of(&[]).is_err());
}

proptest! {
    #[test]
    fn global_ssim_identity_and_symmetry(seed in any::<u64>(), h in 4usize..20, w in 4usize..20) {
        let mut rng = SplitMix64::new(seed);
        let x = image(&mut rng, h, w);
        let y = image(&mut rng, h, w);
        let cfg = MetricConfig::default();
        prop_assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() <= 1e-6);
        prop_assert_eq!(ssim(&x, &y, &cfg).unwrap().to_bits(), ssim(&y, &x, &cfg).unwrap().to_bits());
        let s = ssim(&x, &y, &cfg).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn metrics_invariant_under_joint_pixel_permutation(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let (x, y) = (image(&mut rng, 8, 8), image(&mut rng, 8, 8));
        let mut perm: Vec<usize> = (0..64).collect();
        rng.shuffle(&mut perm);
        let px = Tensor::from_fn(&[1, 8, 8], |i| x.data()[perm[i]]);
        let py = Tensor::from_fn(&[1, 8, 8], |i| y.data()[perm[i]]);
        let cfg = MetricConfig::default();
        prop_assert!((psnr(&x, &y, &cfg).unwrap() - psnr(&px, &py, &cfg).unwrap()).abs() < 1e-9);
        prop_assert!((ssim(&x, &y, &cfg).unwrap() - ssim(&px, &py, &cfg).unwrap()).abs() < 1e-9);
    }
}
