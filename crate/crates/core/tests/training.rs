use std::collections::BTreeMap;

use witunet::data::{build_corpus, Corpus, NoiseSpec, PhantomSpec, MANIFEST_NAME};
use witunet::metrics::MetricConfig;
use witunet::net::{Checkpoint, NetConfig};
use witunet::train::{adamw_step, evaluate, train, OptimConfig, TrainOutputs, Trainer};
use witunet::Tensor;

fn small_corpus(dir: &std::path::Path) -> Corpus {
    let phantom = PhantomSpec { size: 16, seed: 3, ..PhantomSpec::default() };
    let noise = NoiseSpec { seed: 3, ..NoiseSpec::default() };
    build_corpus(4, 1, &phantom, &noise, dir).unwrap();
    Corpus::load(&dir.join(MANIFEST_NAME)).unwrap()
}

fn optim(epochs: u64) -> OptimConfig {
    OptimConfig { epochs, seed: 5, ..OptimConfig::desk() }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let run = || {
        let mut t = Trainer::new(NetConfig::desk(), optim(3)).unwrap();
        let log = t.fit(&corpus, None).unwrap();
        (log, t.checkpoint().to_bytes().unwrap())
    };
    let (la, ca) = run();
    let (lb, cb) = run();
    assert_eq!(ca, cb);
    assert_eq!(la.steps, lb.steps);
    assert_eq!(la.steps.len(), 12);
    assert!(la.steps.iter().all(|s| s.loss.is_finite() && s.loss >= 0.0));
}

#[test]
fn resume_reproduces_subsequent_losses() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let mut full = Trainer::new(NetConfig::desk(), optim(4)).unwrap();
    let full_log = full.fit(&corpus, None).unwrap();

    let mut first = Trainer::new(NetConfig::desk(), optim(4)).unwrap();
    first.run_epoch(&corpus.train, &corpus.test).unwrap();
    first.run_epoch(&corpus.train, &corpus.test).unwrap();
    let path = dir.path().join("mid.witu");
    first.checkpoint().save(&path).unwrap();

    let mut resumed = Trainer::resume(Checkpoint::load(&path).unwrap(), optim(4)).unwrap();
    let tail = resumed.fit(&corpus, None).unwrap();
    assert_eq!(tail.steps.len(), 8);
    for (a, b) in tail.steps.iter().zip(&full_log.steps[8..]) {
        assert_eq!((a.step, a.epoch), (b.step, b.epoch));
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    assert_eq!(resumed.checkpoint().params, full.checkpoint().params);
}

#[test]
fn zero_init_evaluation_equals_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ck = Checkpoint::initial(NetConfig::desk(), 1).unwrap();
    let pairs: Vec<_> = corpus.train.iter().chain(&corpus.test).cloned().collect();
    let e = evaluate(&ck, &pairs, &MetricConfig::for_range(400.0)).unwrap();
    assert_eq!(e.model, e.baseline);
    let csv = e.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * pairs.len());
    assert!(csv.lines().any(|l| l.contains("input-baseline")));
}

#[test]
fn train_writes_checkpoints_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let out = dir.path().join("run.witu");
    let log = train(NetConfig::desk(), optim(2), &dir.path().join(MANIFEST_NAME), &out).unwrap();
    let files = TrainOutputs::for_checkpoint(&out);
    for f in [&files.checkpoint, &files.best, &files.steps_csv, &files.epochs_csv, &files.log_json] {
        assert!(f.exists(), "{} missing", f.display());
    }
    let steps = std::fs::read_to_string(&files.steps_csv).unwrap();
    assert!(steps.starts_with("step,epoch,loss"));
    assert_eq!(steps.lines().count(), 1 + log.steps.len());
    let ck = Checkpoint::load(&files.checkpoint).unwrap();
    assert_eq!((ck.progress.step, ck.progress.epoch), (8, 2));
    assert!(train(NetConfig::desk(), optim(1), &dir.path().join("none.tsv"), &out).is_err());
}

#[test]
fn adamw_hand_evaluated_steps() {
    let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
    let mut store = witunet::params::ParamStore::<f32>::new();
    store.insert("p", Tensor::full(&[1], 1.0)).unwrap();
    let grads: BTreeMap<String, Tensor<f32>> = [("p".to_string(), Tensor::full(&[1], 0.3))].into();
    adamw_step(&mut store, &grads, &cfg, 0.01).unwrap();
    // m̂ = g and v̂ = g² at t = 1, so the step is lr·g/(|g| + ε)
    let want = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
    assert!((store.value("p").unwrap().data()[0] as f64 - want).abs() < 1e-7);

    let decay = OptimConfig { weight_decay: 0.1, ..OptimConfig::default() };
    let mut store = witunet::params::ParamStore::<f32>::new();
    store.insert("p", Tensor::full(&[1], 2.0)).unwrap();
    let zero: BTreeMap<String, Tensor<f32>> = [("p".to_string(), Tensor::zeros(&[1]))].into();
    adamw_step(&mut store, &zero, &decay, 0.5).unwrap();
    assert!((store.value("p").unwrap().data()[0] - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-6);
    assert!(adamw_step(&mut store, &BTreeMap::new(), &decay, 0.5).is_err());
}
