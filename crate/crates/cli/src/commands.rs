use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};
use witunet::bench::{fitted_exponents, BenchConfig};
use witunet::data::{build_corpus, Corpus, NoiseSpec, PhantomSpec};
use witunet::gradcheck::{check_group, GradCheckConfig, SUITE_GROUPS};
use witunet::metrics::{MetricConfig, SsimMode};
use witunet::net::{Checkpoint, NetConfig, WiTUnet};
use witunet::tape::Fault;
use witunet::tensor::write_atomic;
use witunet::train::{evaluate_with, OptimConfig, TrainOutputs, Trainer};
use witunet::{Error, Result, Tensor};

use crate::pgm;
use crate::settings::{apply_file, read_config_file, settings};

fn load_file(config: &Option<PathBuf>) -> Result<BTreeMap<String, String>> {
    match config {
        Some(p) => read_config_file(p),
        None => Ok(BTreeMap::new()),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Usage(format!("missing required setting `{what}`")));
    }
    Ok(())
}

fn opt_path(p: &Path) -> Option<&Path> {
    (!p.as_os_str().is_empty()).then_some(p)
}

settings! {
    MakeData / MakeDataArgs {
        out: PathBuf = PathBuf::from("corpus"), "out", "Output directory";
        n_train: usize = 8, "n-train", "Number of training pairs";
        n_test: usize = 2, "n-test", "Number of test pairs";
        size: usize = 64, "size", "Image side in pixels";
        seed: u64 = 0, "seed", "Base seed for phantoms and noise";
        sigma: f64 = NoiseSpec::default().gaussian_sigma, "sigma", "Gaussian noise standard deviation";
        photons: f64 = 0.0, "photons", "Simulated photon count for Poisson noise (0 disables)";
        min_ellipses: usize = PhantomSpec::default().min_ellipses, "min-ellipses", "Fewest ellipses per phantom";
        max_ellipses: usize = PhantomSpec::default().max_ellipses, "max-ellipses", "Most ellipses per phantom";
        intensity_lo: f64 = PhantomSpec::default().intensity_lo, "intensity-lo", "Smallest ellipse intensity";
        intensity_hi: f64 = PhantomSpec::default().intensity_hi, "intensity-hi", "Largest ellipse intensity";
        pgm: bool = false, "pgm", "Also write a PGM preview next to every image", [num_args = 0..=1, default_missing_value = "true"];
    }
}

#[derive(Args, Debug)]
pub struct MakeDataCmd {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: MakeDataArgs,
}

pub fn make_data(cmd: &MakeDataCmd) -> Result<()> {
    let mut s = MakeData::default();
    apply_file(&load_file(&cmd.config)?, MakeData::KEYS, |k, v| s.set(k, v))?;
    s.apply_flags(&cmd.args);
    require(&s.out, "out")?;
    let phantom = PhantomSpec {
        size: s.size,
        min_ellipses: s.min_ellipses,
        max_ellipses: s.max_ellipses,
        intensity_lo: s.intensity_lo,
        intensity_hi: s.intensity_hi,
        seed: s.seed,
    };
    let noise = NoiseSpec {
        gaussian_sigma: s.sigma,
        poisson_photons: (s.photons > 0.0).then_some(s.photons),
        seed: s.seed,
    };
    let manifest = build_corpus(s.n_train, s.n_test, &phantom, &noise, &s.out)?;
    if s.pgm {
        for e in &manifest.entries {
            for p in [&e.ldct, &e.fdct] {
                let img = Tensor::load_wten(s.out.join(p))?;
                pgm::write(&img, &s.out.join(p).with_extension("pgm"))?;
            }
        }
    }
    println!(
        "wrote {} pairs ({} train, {} test) and {}",
        manifest.entries.len(),
        s.n_train,
        s.n_test,
        s.out.join(witunet::data::corpus::MANIFEST_NAME).display()
    );
    Ok(())
}

settings! {
    TrainSettings / TrainArgs {
        manifest: PathBuf = PathBuf::from("corpus/manifest.tsv"), "manifest", "Corpus manifest";
        out: PathBuf = PathBuf::from("witunet.witu"), "out", "Final checkpoint path (best checkpoint and logs are written beside it)";
        preset: String = "full".to_string(), "preset", "Base settings: `full` or `desk`";
        base_channels: usize = NetConfig::default().base_channels, "base-channels", "Channels at the first level";
        depth: usize = NetConfig::default().depth, "depth", "Encoder/decoder levels";
        window: usize = NetConfig::default().window, "window", "Attention window side";
        blocks: usize = NetConfig::default().blocks_per_level, "blocks", "Transformer blocks per stack";
        head_dim: usize = NetConfig::default().head_dim, "head-dim", "Channels per attention head";
        expansion: usize = NetConfig::default().lipe_expansion, "expansion", "Feed-forward hidden-width multiplier";
        ablate_lipe: bool = false, "ablate-lipe", "Replace the convolutional feed-forward by a plain MLP", [num_args = 0..=1, default_missing_value = "true"];
        ablate_nested: bool = false, "ablate-nested", "Use plain U-shaped skips instead of nested pathways", [num_args = 0..=1, default_missing_value = "true"];
        projection_after: bool = false, "projection-after", "Reduce decoder channels after the blocks", [num_args = 0..=1, default_missing_value = "true"];
        depthwise_lipe: bool = false, "depthwise-lipe", "Depthwise 3x3 conv in the feed-forward", [num_args = 0..=1, default_missing_value = "true"];
        shared_bias: bool = false, "shared-bias", "Share one relative position bias table across heads", [num_args = 0..=1, default_missing_value = "true"];
        lr: f64 = OptimConfig::default().lr, "lr", "Learning rate";
        beta1: f64 = OptimConfig::default().beta1, "beta1", "AdamW first-moment decay";
        beta2: f64 = OptimConfig::default().beta2, "beta2", "AdamW second-moment decay";
        weight_decay: f64 = OptimConfig::default().weight_decay, "weight-decay", "Decoupled weight decay";
        epochs: u64 = OptimConfig::default().epochs, "epochs", "Training epochs";
        batch_size: usize = OptimConfig::default().batch_size, "batch-size", "Images per step";
        seed: u64 = 0, "seed", "Seed for initialization, shuffling, and augmentation";
        grad_clip: f64 = 0.0, "grad-clip", "Global gradient-norm limit (0 disables)";
        cosine: bool = false, "cosine", "Cosine learning-rate decay", [num_args = 0..=1, default_missing_value = "true"];
        augment: bool = true, "augment", "Random rotations and flips", [num_args = 0..=1, default_missing_value = "true"];
        resume: PathBuf = PathBuf::new(), "resume", "Checkpoint to continue from";
    }
}

impl TrainSettings {
    fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "full" => {}
            "desk" => {
                let n = NetConfig::desk();
                self.base_channels = n.base_channels;
                self.depth = n.depth;
                self.window = n.window;
                self.blocks = n.blocks_per_level;
                self.head_dim = n.head_dim;
                let o = OptimConfig::desk();
                self.epochs = o.epochs;
                self.lr = o.lr;
            }
            other => return Err(Error::Usage(format!("unknown preset `{other}` (known: full, desk)"))),
        }
        self.preset = name.to_string();
        Ok(())
    }

    fn net(&self) -> NetConfig {
        NetConfig {
            base_channels: self.base_channels,
            depth: self.depth,
            window: self.window,
            blocks_per_level: self.blocks,
            head_dim: self.head_dim,
            lipe_expansion: self.expansion,
            use_lipe: !self.ablate_lipe,
            use_nested: !self.ablate_nested,
            projection_after: self.projection_after,
            depthwise_lipe: self.depthwise_lipe,
            shared_bias_table: self.shared_bias,
        }
    }

    fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            cosine: self.cosine,
            augment: self.augment,
            ..OptimConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: TrainArgs,
}

pub fn train(cmd: &TrainCmd) -> Result<()> {
    let file = load_file(&cmd.config)?;
    let mut s = TrainSettings::default();
    let preset = match (&cmd.args.preset, file.get("preset")) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p.clone(),
        (None, None) => s.preset.clone(),
    };
    s.apply_preset(&preset)?;
    info!("preset: {preset}");
    apply_file(&file, TrainSettings::KEYS, |k, v| s.set(k, v))?;
    s.apply_flags(&cmd.args);
    require(&s.out, "out")?;

    let manifest = &s.manifest;
    if !manifest.is_file() {
        return Err(Error::Usage(format!("corpus manifest not found: {}", manifest.display())));
    }
    let corpus = Corpus::load(manifest)?;
    let optim = s.optim();
    let mut trainer = match opt_path(&s.resume) {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.net != s.net() {
                warn!("resuming with the architecture stored in {}", p.display());
            }
            info!("resuming at epoch {}, step {}", ck.progress.epoch, ck.progress.step);
            Trainer::resume(ck, optim)?
        }
        None => Trainer::new(s.net(), optim)?,
    };
    info!(
        "{} parameters, {} train / {} test pairs",
        trainer.model.param_count(),
        corpus.train.len(),
        corpus.test.len()
    );
    let outputs = TrainOutputs::for_checkpoint(&s.out);
    let log = trainer.fit(&corpus, Some(&outputs))?;
    if let Some(last) = log.epochs.last() {
        println!(
            "epoch {}: train loss {:.4e}, test psnr {:.3} dB, ssim {:.4}, rmse {:.4}",
            last.epoch, last.train_loss, last.psnr, last.ssim, last.rmse
        );
    }
    println!("checkpoint: {}", outputs.checkpoint.display());
    Ok(())
}

settings! {
    DenoiseSettings / DenoiseArgs {
        checkpoint: PathBuf = PathBuf::new(), "checkpoint", "Model checkpoint";
        input: PathBuf = PathBuf::new(), "input", "Input WTEN image ([H,W], [1,H,W] or [N,1,H,W])";
        output: PathBuf = PathBuf::new(), "output", "Output WTEN path";
        pgm: PathBuf = PathBuf::new(), "pgm", "Optional PGM preview of the output";
    }
}

#[derive(Args, Debug)]
pub struct DenoiseCmd {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: DenoiseArgs,
}

pub fn denoise(cmd: &DenoiseCmd) -> Result<()> {
    let mut s = DenoiseSettings::default();
    apply_file(&load_file(&cmd.config)?, DenoiseSettings::KEYS, |k, v| s.set(k, v))?;
    s.apply_flags(&cmd.args);
    require(&s.checkpoint, "checkpoint")?;
    require(&s.input, "input")?;
    require(&s.output, "output")?;
    let ck = Checkpoint::load(&s.checkpoint)?;
    let model = WiTUnet::new(ck.net.clone())?;
    let input = Tensor::load_wten(&s.input)?;
    let dims = input.dims().to_vec();
    let batch = match *dims.as_slice() {
        [h, w] | [1, h, w] => vec![1, 1, h, w],
        [n, 1, h, w] => vec![n, 1, h, w],
        _ => return Err(Error::Usage(format!("input must be [H,W], [1,H,W] or [N,1,H,W], got {dims:?}"))),
    };
    let out = model.denoise(&ck.params, &input.reshape(&batch)?)?.reshape(&dims)?;
    out.save_wten(&s.output)?;
    if let Some(p) = opt_path(&s.pgm) {
        pgm::write(&out, p)?;
    }
    println!("wrote {} {:?}", s.output.display(), dims);
    Ok(())
}

settings! {
    EvalSettings / EvalArgs {
        checkpoint: PathBuf = PathBuf::new(), "checkpoint", "Model checkpoint";
        manifest: PathBuf = PathBuf::from("corpus/manifest.tsv"), "manifest", "Corpus manifest";
        out_dir: PathBuf = PathBuf::from("eval"), "out-dir", "Directory for eval.csv and eval.json";
        metric_max: f64 = 1.0, "metric-max", "Data range MAX for PSNR and SSIM";
        ssim: String = "global".to_string(), "ssim", "SSIM mode: `global` or `windowed`";
        split: String = "test".to_string(), "split", "Pairs to evaluate: `test`, `train` or `all`";
    }
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: EvalArgs,
}

pub fn eval(cmd: &EvalCmd) -> Result<()> {
    let mut s = EvalSettings::default();
    apply_file(&load_file(&cmd.config)?, EvalSettings::KEYS, |k, v| s.set(k, v))?;
    s.apply_flags(&cmd.args);
    require(&s.checkpoint, "checkpoint")?;
    require(&s.out_dir, "out-dir")?;
    let mut metric = MetricConfig::for_range(s.metric_max);
    metric.mode = match s.ssim.as_str() {
        "global" => SsimMode::Global,
        "windowed" => SsimMode::windowed_default(),
        other => return Err(Error::Usage(format!("unknown SSIM mode `{other}` (known: global, windowed)"))),
    };
    metric.validate()?;
    let ck = Checkpoint::load(&s.checkpoint)?;
    if !s.manifest.is_file() {
        return Err(Error::Usage(format!("corpus manifest not found: {}", s.manifest.display())));
    }
    let corpus = Corpus::load(&s.manifest)?;
    let pairs = match s.split.as_str() {
        "test" => corpus.test,
        "train" => corpus.train,
        "all" => corpus.train.into_iter().chain(corpus.test).collect(),
        other => return Err(Error::Usage(format!("unknown split `{other}` (known: test, train, all)"))),
    };
    let model = WiTUnet::new(ck.net.clone())?;
    let e = evaluate_with(&model, &ck.params, &pairs, &metric)?;
    std::fs::create_dir_all(&s.out_dir).map_err(|err| Error::io(&s.out_dir, err))?;
    let json = e.to_json(&metric);
    write_atomic(&s.out_dir.join("eval.csv"), e.to_csv().as_bytes())?;
    write_atomic(&s.out_dir.join("eval.json"), json.as_bytes())?;
    print!("{json}");
    Ok(())
}

settings! {
    GradcheckSettings / GradcheckArgs {
        f64: bool = false, "f64", "Check in 64-bit precision with tighter tolerances", [num_args = 0..=1, default_missing_value = "true"];
        inject_wrong_sign: bool = false, "inject-wrong-sign", "Flip the sign of the GELU backward (detector self-test)", [num_args = 0..=1, default_missing_value = "true"];
        samples: usize = 100, "samples", "Coordinates sampled per group";
        seed: u64 = GradCheckConfig::single().seed, "seed", "Sampling seed";
        group: String = "all".to_string(), "group", "Group to check, or `all`";
    }
}

#[derive(Args, Debug)]
pub struct GradcheckCmd {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: GradcheckArgs,
}

pub fn gradcheck(cmd: &GradcheckCmd) -> Result<()> {
    let mut s = GradcheckSettings::default();
    apply_file(&load_file(&cmd.config)?, GradcheckSettings::KEYS, |k, v| s.set(k, v))?;
    s.apply_flags(&cmd.args);
    let mut cfg = if s.f64 { GradCheckConfig::double() } else { GradCheckConfig::single() };
    cfg.min_samples = s.samples;
    cfg.seed = s.seed;
    cfg.fault = s.inject_wrong_sign.then_some(Fault::NegateGeluGrad);
    let groups: Vec<&str> = if s.group == "all" {
        SUITE_GROUPS.to_vec()
    } else {
        vec![s.group.as_str()]
    };
    println!(
        "{:<18} {:>7} {:>12} {:>10}  result",
        "group", "samples", "worst err", "tolerance"
    );
    let mut failed = Vec::new();
    for g in groups {
        let report = if s.f64 {
            check_group::<f64>(g, &cfg)?
        } else {
            check_group::<f32>(g, &cfg)?
        };
        let worst = report.worst().map(|c| c.rel_error).unwrap_or(0.0);
        let ok = report.passed();
        println!(
            "{g:<18} {:>7} {worst:>12.3e} {:>10.0e}  {}",
            report.checks.len(),
            cfg.tolerance,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            if let Some(c) = report.worst() {
                println!(
                    "    worst: {}[{}] analytic {:.6e} numeric {:.6e}",
                    c.param, c.index, c.analytic, c.numeric
                );
            }
            failed.push(g);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

settings! {
    BenchSettings / BenchArgs {
        sizes: String = "32,64,128".to_string(), "sizes", "Comma-separated map sides H (= W)";
        window: usize = 8, "window", "Window side M";
        channels: usize = 16, "channels", "Channels C";
        repeats: usize = 3, "repeats", "Timed repetitions per size (minimum is kept)";
        seed: u64 = 0, "seed", "Seed for the random feature maps";
        out: PathBuf = PathBuf::new(), "out", "Optional CSV of the table";
    }
}

#[derive(Args, Debug)]
pub struct BenchCmd {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub args: BenchArgs,
}

pub fn bench(cmd: &BenchCmd) -> Result<()> {
    let mut s = BenchSettings::default();
    apply_file(&load_file(&cmd.config)?, BenchSettings::KEYS, |k, v| s.set(k, v))?;
    s.apply_flags(&cmd.args);
    let sides = s
        .sizes
        .split(',')
        .map(|t| crate::settings::parse_value::<usize>("sizes", t.trim()))
        .collect::<Result<Vec<_>>>()?;
    if sides.len() < 2 {
        return Err(Error::Usage("bench needs at least two sizes to fit an exponent".into()));
    }
    let cfg = BenchConfig {
        sides,
        window: s.window,
        channels: s.channels,
        repeats: s.repeats,
        seed: s.seed,
        ..BenchConfig::default()
    };
    let rows = witunet::bench::run(&cfg)?;
    let mut csv = String::from("side,tokens,flops_windowed,flops_global,flop_ratio,seconds_windowed,seconds_global\n");
    println!(
        "{:>5} {:>7} {:>14} {:>16} {:>9} {:>12} {:>12}",
        "H", "H*W", "FLOPs window", "FLOPs global", "ratio", "t window s", "t global s"
    );
    for r in &rows {
        let ratio = r.flops_global as f64 / r.flops_windowed as f64;
        println!(
            "{:>5} {:>7} {:>14} {:>16} {:>9.1} {:>12.4e} {:>12.4e}",
            r.side,
            r.tokens,
            r.flops_windowed,
            r.flops_global,
            ratio,
            r.windowed.as_secs_f64(),
            r.global.as_secs_f64()
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{:e},{:e}\n",
            r.side,
            r.tokens,
            r.flops_windowed,
            r.flops_global,
            ratio,
            r.windowed.as_secs_f64(),
            r.global.as_secs_f64()
        ));
    }
    let (ew, eg) = fitted_exponents(&rows);
    println!("fitted exponent vs H*W: windowed {ew:.3}, global {eg:.3}");
    if let Some(p) = opt_path(&s.out) {
        write_atomic(p, csv.as_bytes())?;
    }
    Ok(())
}
