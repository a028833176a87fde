use rayon::prelude::*;
use serde_json::{json, Value};

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::{report, MetricConfig, MetricReport, Summary};
use crate::net::{Checkpoint, WiTUnet};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Metrics of the denoised output and of the raw LDCT input, both against
/// the FDCT target.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub indices: Vec<usize>,
    pub model: MetricReport,
    pub baseline: MetricReport,
}

/// Denoises one `[1, H, W]` image.
pub fn denoise_image(model: &WiTUnet, params: &ParamStore<f32>, ldct: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = match *ldct.dims() {
        [1, h, w] => (h, w),
        ref d => return Err(Error::Config(format!("model expects single-channel 1,H,W images, got {d:?}"))),
    };
    let out = model.denoise(params, &ldct.clone().reshape(&[1, 1, h, w])?)?;
    out.reshape(&[1, h, w])
}

pub fn evaluate_with(
    model: &WiTUnet,
    params: &ParamStore<f32>,
    pairs: &[ImagePair],
    metric: &MetricConfig,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::Usage("evaluation needs at least one image pair".into()));
    }
    let denoised: Vec<Tensor<f32>> = pairs
        .par_iter()
        .map(|p| denoise_image(model, params, &p.ldct))
        .collect::<Result<_>>()?;
    let model_pairs: Vec<_> = denoised.iter().zip(pairs).map(|(d, p)| (d, &p.fdct)).collect();
    let base_pairs: Vec<_> = pairs.iter().map(|p| (&p.ldct, &p.fdct)).collect();
    Ok(Evaluation {
        indices: pairs.iter().map(|p| p.index).collect(),
        model: report(&model_pairs, metric)?,
        baseline: report(&base_pairs, metric)?,
    })
}

/// Loads the network described by a checkpoint and evaluates it.
pub fn evaluate(ck: &Checkpoint, pairs: &[ImagePair], metric: &MetricConfig) -> Result<Evaluation> {
    let model = WiTUnet::new(ck.net.clone())?;
    evaluate_with(&model, &ck.params, pairs, metric)
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

fn json_number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(fmt_metric(v))
    }
}

fn summary_json(s: &Summary) -> Value {
    json!({
        "mean": json_number(s.mean),
        "std": json_number(s.std),
        "min": json_number(s.min),
        "max": json_number(s.max),
        "q1": json_number(s.q1),
        "median": json_number(s.median),
        "q3": json_number(s.q3),
    })
}

fn report_json(r: &MetricReport) -> Value {
    json!({
        "psnr": summary_json(&r.psnr_summary()),
        "ssim": summary_json(&r.ssim_summary()),
        "rmse": summary_json(&r.rmse_summary()),
    })
}

impl Evaluation {
    /// `index,source,psnr,ssim,rmse` with one `model` and one
    /// `input-baseline` row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,source,psnr,ssim,rmse\n");
        for (i, &idx) in self.indices.iter().enumerate() {
            for (source, r) in [("model", &self.model), ("input-baseline", &self.baseline)] {
                s.push_str(&format!(
                    "{idx},{source},{},{},{}\n",
                    fmt_metric(r.psnr[i]),
                    fmt_metric(r.ssim[i]),
                    fmt_metric(r.rmse[i])
                ));
            }
        }
        s
    }

    /// Aggregate block; non-finite values are written as strings.
    pub fn to_json(&self, metric: &MetricConfig) -> String {
        let v = json!({
            "images": self.indices.len(),
            "metric": {
                "max": metric.max,
                "c1": metric.c1,
                "c2": metric.c2,
                "ssim_mode": match metric.mode {
                    crate::metrics::SsimMode::Global => "global".to_string(),
                    crate::metrics::SsimMode::Windowed { window, sigma } => format!("windowed({window},{sigma})"),
                },
            },
            "model": report_json(&self.model),
            "input-baseline": report_json(&self.baseline),
        });
        serde_json::to_string_pretty(&v).expect("JSON values serialize") + "\n"
    }
}
