use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::Serialize;

use crate::data::{Augment, Corpus, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::net::{Checkpoint, NetConfig, TrainProgress, WiTUnet};
use crate::params::ParamStore;
use crate::rng::{derive_seed, SplitMix64};
use crate::tape::Tape;
use crate::tensor::{write_atomic, Tensor};
use crate::train::eval::evaluate_with;
use crate::train::optim::{adamw_step, clip_grad_norm, OptimConfig};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub seconds: f64,
    /// Corpus indices in the order they were visited.
    pub order: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss\n");
        for r in &self.steps {
            s.push_str(&format!("{},{},{:e}\n", r.step, r.epoch, r.loss));
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,psnr,ssim,rmse\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.epoch, r.psnr, r.ssim, r.rmse));
        }
        s
    }
}

/// File locations derived from the final checkpoint path `run.witu`:
/// `run.best.witu`, `run.steps.csv`, `run.epochs.csv`, `run.log.json`.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub best: PathBuf,
    pub steps_csv: PathBuf,
    pub epochs_csv: PathBuf,
    pub log_json: PathBuf,
}

impl TrainOutputs {
    pub fn for_checkpoint(path: &Path) -> Self {
        let with = |suffix: &str| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            path.with_file_name(format!("{stem}.{suffix}"))
        };
        Self {
            checkpoint: path.to_path_buf(),
            best: with("best.witu"),
            steps_csv: with("steps.csv"),
            epochs_csv: with("epochs.csv"),
            log_json: with("log.json"),
        }
    }
}

/// Stateful training loop; one call to [`Trainer::run_epoch`] per epoch.
pub struct Trainer {
    pub model: WiTUnet,
    pub optim: OptimConfig,
    pub metric: MetricConfig,
    pub store: ParamStore<f32>,
    pub progress: TrainProgress,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(net: NetConfig, optim: OptimConfig) -> Result<Self> {
        optim.validate()?;
        let model = WiTUnet::new(net)?;
        let store = model.init_params(derive_seed(optim.seed, INIT_STREAM))?;
        Ok(Self::assemble(model, optim, store, TrainProgress::default()))
    }

    /// Continues from a checkpoint's weights, moments, and counters.
    pub fn resume(ck: Checkpoint, optim: OptimConfig) -> Result<Self> {
        optim.validate()?;
        let model = WiTUnet::new(ck.net)?;
        Ok(Self::assemble(model, optim, ck.params, ck.progress))
    }

    fn assemble(model: WiTUnet, optim: OptimConfig, store: ParamStore<f32>, progress: TrainProgress) -> Self {
        Self {
            log: TrainLog {
                seed: optim.seed,
                ..TrainLog::default()
            },
            model,
            optim,
            metric: MetricConfig::default(),
            store,
            progress,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.model.cfg.clone(),
            progress: self.progress.clone(),
            params: self.store.clone(),
        }
    }

    fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.optim.batch_size) as u64
    }

    /// Visit order of the training pairs in `epoch`.
    pub fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::new(derive_seed(derive_seed(self.optim.seed, SHUFFLE_STREAM), epoch)).shuffle(&mut order);
        order
    }

    fn augment_for(&self, epoch: u64, position: usize) -> Augment {
        if !self.optim.augment {
            return Augment::IDENTITY;
        }
        let base = derive_seed(derive_seed(self.optim.seed, AUGMENT_STREAM), epoch);
        Augment::draw(&mut SplitMix64::new(derive_seed(base, position as u64)))
    }

    fn stack(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let dims = images[0].dims().to_vec();
        if let Some(bad) = images.iter().find(|t| t.dims() != dims.as_slice()) {
            return Err(Error::shape(
                "batch",
                format!("batched images must share dims, got {dims:?} and {:?}", bad.dims()),
            ));
        }
        let mut data = Vec::with_capacity(images.len() * images[0].numel());
        for t in images {
            data.extend_from_slice(t.data());
        }
        let mut full = vec![images.len()];
        full.extend_from_slice(&dims);
        Tensor::from_vec(&full, data)
    }

    /// One forward/backward/update on a batch of `[1, H, W]` pairs; returns
    /// the loss before the update.
    pub fn train_step(&mut self, ldct: &[Tensor<f32>], fdct: &[Tensor<f32>], total_steps: u64) -> Result<f64> {
        let y = Self::stack(ldct)?;
        let x = Self::stack(fdct)?;
        let mut tape = Tape::new();
        let vars = self.store.register(&mut tape);
        let yv = tape.constant(y);
        let xv = tape.constant(x);
        let out = self.model.forward(&mut tape, &vars, &yv)?;
        let loss_var = tape.mse(&out.output, &xv)?;
        let loss = loss_var.value().data()[0] as f64;
        let mut grads = tape.backward(&loss_var)?.params();
        let step = self.store.step + 1;
        if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at step {step} (loss {loss}); largest gradient in `{}`",
                max_grad_param(&grads)
            )));
        }
        if let Some(c) = self.optim.grad_clip {
            let norm = clip_grad_norm(&mut grads, c);
            debug!("step {step}: grad norm {norm:.4e}");
        }
        let lr = self.optim.lr_at(step, total_steps);
        adamw_step(&mut self.store, &grads, &self.optim, lr)?;
        self.progress.step = self.store.step;
        Ok(loss)
    }

    /// Trains one epoch over `train`, then validates on `val`.
    pub fn run_epoch(&mut self, train: &[ImagePair], val: &[ImagePair]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Usage("training split is empty".into()));
        }
        let start = Instant::now();
        let epoch = self.progress.epoch;
        let total_steps = self.optim.epochs * self.steps_per_epoch(train.len());
        let order = self.epoch_order(epoch, train.len());
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(self.optim.batch_size).enumerate() {
            let mut ys = Vec::with_capacity(chunk.len());
            let mut xs = Vec::with_capacity(chunk.len());
            for (j, &i) in chunk.iter().enumerate() {
                let aug = self.augment_for(epoch, b * self.optim.batch_size + j);
                ys.push(aug.apply(&train[i].ldct)?);
                xs.push(aug.apply(&train[i].fdct)?);
            }
            let loss = self.train_step(&ys, &xs, total_steps)?;
            self.log.steps.push(StepRecord {
                step: self.store.step,
                epoch,
                loss,
            });
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (psnr, ssim, rmse) = if val.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let e = evaluate_with(&self.model, &self.store, val, &self.metric)?;
            (
                e.model.psnr_summary().mean,
                e.model.ssim_summary().mean,
                e.model.rmse_summary().mean,
            )
        };
        self.progress.epoch = epoch + 1;
        let rec = EpochRecord {
            epoch,
            train_loss,
            psnr,
            ssim,
            rmse,
            seconds: start.elapsed().as_secs_f64(),
            order: order.iter().map(|&i| train[i].index).collect(),
        };
        info!(
            "epoch {epoch}: train loss {train_loss:.4e}, val psnr {psnr:.3} dB, ssim {ssim:.4}, rmse {rmse:.4} ({:.1}s)",
            rec.seconds
        );
        self.log.epochs.push(rec.clone());
        Ok(rec)
    }

    /// Runs the remaining epochs, writing the best-by-PSNR and final
    /// checkpoints plus logs.
    pub fn fit(&mut self, corpus: &Corpus, out: Option<&TrainOutputs>) -> Result<TrainLog> {
        while self.progress.epoch < self.optim.epochs {
            let rec = self.run_epoch(&corpus.train, &corpus.test)?;
            let improved = rec.psnr.is_finite() && self.progress.best_psnr.is_none_or(|b| rec.psnr > b);
            if improved {
                self.progress.best_psnr = Some(rec.psnr);
                if let Some(out) = out {
                    self.checkpoint().save(&out.best)?;
                }
            }
        }
        if let Some(out) = out {
            self.checkpoint().save(&out.checkpoint)?;
            self.write_logs(out)?;
        }
        Ok(self.log.clone())
    }

    pub fn write_logs(&self, out: &TrainOutputs) -> Result<()> {
        write_atomic(&out.steps_csv, self.log.steps_csv().as_bytes())?;
        write_atomic(&out.epochs_csv, self.log.epochs_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(&self.log).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&out.log_json, json.as_bytes())
    }
}

fn max_grad_param(grads: &BTreeMap<String, Tensor<f32>>) -> String {
    let key = |g: &Tensor<f32>| {
        g.data()
            .iter()
            .map(|v| if v.is_finite() { v.abs() } else { f32::INFINITY })
            .fold(0.0f32, f32::max)
    };
    grads
        .iter()
        .max_by(|a, b| key(a.1).total_cmp(&key(b.1)))
        .map(|(n, _)| n.clone())
        .unwrap_or_default()
}

/// Trains on the corpus behind `manifest`, writing `out_checkpoint` and its
/// sibling best checkpoint and logs.
pub fn train(net: NetConfig, optim: OptimConfig, manifest: &Path, out_checkpoint: &Path) -> Result<TrainLog> {
    let corpus = Corpus::load(manifest)?;
    let mut trainer = Trainer::new(net, optim)?;
    trainer.fit(&corpus, Some(&TrainOutputs::for_checkpoint(out_checkpoint)))
}
