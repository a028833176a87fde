use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use witunet::data::*;
use witunet::metrics::mse;
use witunet::rng::SplitMix64;
use witunet::Tensor;

#[test]
fn noise_std_matches_sigma() {
    let clean = Tensor::full(&[1, 256, 256], 0.5f32);
    for seed in [1, 2, 3] {
        let spec = NoiseSpec { gaussian_sigma: 0.1, poisson_photons: None, seed };
        let y = degrade(&clean, &spec).unwrap();
        let d: Vec<f64> = y.data().iter().zip(clean.data()).map(|(a, b)| (a - b) as f64).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 0.1).abs() <= 0.005, "seed {seed}: std {std}");
        assert_eq!(y, degrade(&clean, &spec).unwrap());
    }
    let off = NoiseSpec { gaussian_sigma: 0.0, poisson_photons: None, seed: 4 };
    assert_eq!(degrade(&clean, &off).unwrap(), clean);
    let poisson = NoiseSpec { gaussian_sigma: 0.0, poisson_photons: Some(1e4), seed: 4 };
    let y = degrade(&clean, &poisson).unwrap();
    let var = y.data().iter().map(|&v| (v as f64 - 0.5).powi(2)).sum::<f64>() / y.numel() as f64;
    // Poisson(0.5·N)/N has variance 0.5/N
    assert!((var / (0.5 / 1e4) - 1.0).abs() < 0.05, "{var}");
    assert!(degrade(&Tensor::full(&[1, 4, 4], 1.5f32), &off).is_err());
    assert!(NoiseSpec { gaussian_sigma: -1.0, ..off.clone() }.validate().is_err());
    assert!(NoiseSpec { poisson_photons: Some(0.0), ..off }.validate().is_err());
}

#[test]
fn phantoms_are_deterministic_and_structured() {
    for seed in 0..10 {
        let spec = PhantomSpec { min_ellipses: 3, max_ellipses: 6, seed, ..PhantomSpec::default() };
        let a = make_phantom(&spec).unwrap();
        assert_eq!(a, make_phantom(&spec).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let bins: BTreeSet<usize> = a.data().iter().map(|&v| ((v * 10.0) as usize).min(9)).collect();
        assert!(bins.len() > 1, "seed {seed}: single histogram bin");
    }
    let empty = PhantomSpec { min_ellipses: 0, max_ellipses: 0, ..PhantomSpec::default() };
    assert!(make_phantom(&empty).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(make_phantom(&PhantomSpec { size: 8, ..PhantomSpec::default() }).is_err());
}

#[test]
fn augment_preserves_pair_error() {
    let mut rng = SplitMix64::new(5);
    let x = Tensor::from_fn(&[1, 8, 8], |_| rng.next_f64() as f32);
    let y = Tensor::from_fn(&[1, 8, 8], |_| rng.next_f64() as f32);
    let base = mse(&x, &y).unwrap();
    for _ in 0..24 {
        let a = Augment::draw(&mut rng);
        assert_eq!(mse(&a.apply(&x).unwrap(), &a.apply(&y).unwrap()).unwrap(), base);
    }
    let r = rotate(&Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 1).unwrap();
    assert_eq!(r.data(), &[2.0, 4.0, 1.0, 3.0]);
    let wide = Tensor::<f32>::zeros(&[1, 2, 3]);
    assert!(rotate(&wide, 1).is_err());
    assert!(rotate(&wide, 2).is_ok());
}

#[test]
fn corpus_build_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let phantom = PhantomSpec { size: 32, seed: 7, ..PhantomSpec::default() };
    let noise = NoiseSpec { seed: 7, ..NoiseSpec::default() };
    let m = build_corpus(5, 3, &phantom, &noise, a.path()).unwrap();
    build_corpus(5, 3, &phantom, &noise, b.path()).unwrap();
    let text = fs::read_to_string(a.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert_eq!(text, fs::read_to_string(b.path().join(MANIFEST_NAME)).unwrap());
    for e in &m.entries {
        for f in [&e.ldct, &e.fdct] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }
    let corpus = Corpus::load(&a.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!((corpus.train.len(), corpus.test.len()), (5, 3));
    let train: BTreeSet<u64> = corpus.train.iter().map(|p| p.seed).collect();
    let test: BTreeSet<u64> = corpus.test.iter().map(|p| p.seed).collect();
    assert_eq!(train.len() + test.len(), 8);
    assert!(train.is_disjoint(&test));
    for p in corpus.train.iter().chain(&corpus.test) {
        let clean = make_phantom(&PhantomSpec { seed: p.seed, ..phantom.clone() }).unwrap();
        assert_eq!(p.fdct, clean);
        assert_ne!(p.ldct, p.fdct);
    }
}

#[test]
fn corpus_errors() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("corpus");
    assert!(build_corpus(2, 1, &PhantomSpec::default(), &NoiseSpec::default(), &out).is_err());
    assert!(!out.join(MANIFEST_NAME).exists());
    assert!(build_corpus(0, 1, &PhantomSpec::default(), &NoiseSpec::default(), dir.path()).is_err());
    assert!(Corpus::load(&dir.path().join("missing.tsv")).is_err());
    assert!(Manifest::parse("0\tonly-two\n").is_err());
    let parsed = Manifest::parse("# comment\n\n3\ttest/a.wten\ttest/b.wten\t12\n").unwrap();
    assert_eq!(parsed.entries.len(), 1);
    assert_eq!(parsed.entries[0].split(), Split::Test);
}

fn square_image() -> impl Strategy<Value = Tensor<f32>> {
    (1usize..9).prop_flat_map(|n| {
        prop::collection::vec(-1.0f32..1.0, n * n).prop_map(move |v| Tensor::from_vec(&[1, n, n], v).unwrap())
    })
}

proptest! {
    #[test]
    fn augmentation_is_a_group_action(x in square_image(), seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let a = Augment::draw(&mut rng);
        prop_assert_eq!(a.invert(&a.apply(&x).unwrap()).unwrap(), x.clone());
        let mut r = x.clone();
        for _ in 0..4 {
            r = rotate(&r, 1).unwrap();
        }
        prop_assert_eq!(&r, &x);
        for f in [Flip::Horizontal, Flip::Vertical] {
            prop_assert_eq!(flip(&flip(&x, f).unwrap(), f).unwrap(), x.clone());
        }
    }

    #[test]
    fn normalize_inverts_denormalize(u in prop::collection::vec(0.0f32..=1.0, 1..64)) {
        let x = Tensor::from_vec(&[u.len()], u).unwrap();
        let back = normalize(&denormalize(&x, HU_LO, HU_HI).unwrap(), HU_LO, HU_HI).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}
