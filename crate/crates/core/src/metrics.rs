//! Image quality metrics, computed in f64: MSE, PSNR, SSIM (global or
//! Gaussian-windowed), RMSE, and per-corpus distribution summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Span of the default HU display window.
pub const HU_WINDOW_SPAN: f64 = 400.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SsimMode {
    /// Whole-image means, variances and covariance.
    Global,
    /// Mean of local SSIM over every fully contained Gaussian window.
    Windowed { window: usize, sigma: f64 },
}

impl SsimMode {
    pub fn windowed_default() -> Self {
        SsimMode::Windowed {
            window: 11,
            sigma: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Data range `MAX`.
    pub max: f64,
    pub c1: f64,
    pub c2: f64,
    pub mode: SsimMode,
}

impl MetricConfig {
    /// Standard constants `C1 = (K1·MAX)²`, `C2 = (K2·MAX)²`, global SSIM.
    pub fn for_range(max: f64) -> Self {
        Self {
            max,
            c1: (K1 * max).powi(2),
            c2: (K2 * max).powi(2),
            mode: SsimMode::Global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max > 0.0 && self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config(format!(
                "metric constants must be positive (max={}, c1={}, c2={})",
                self.max, self.c1, self.c2
            )));
        }
        if let SsimMode::Windowed { window, sigma } = self.mode {
            if window == 0 || window % 2 == 0 || sigma <= 0.0 {
                return Err(Error::Config(format!(
                    "SSIM window must be odd and sigma positive (window={window}, sigma={sigma})"
                )));
            }
        }
        Ok(())
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

fn same_dims(op: &'static str, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    if x.numel() == 0 {
        return Err(Error::shape(op, "empty image"));
    }
    Ok(())
}

/// Squared errors are exact in f64 and summed in ascending order, so any
/// joint pixel permutation gives a bit-identical result.
pub fn mse(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
    same_dims("mse", x, y)?;
    let mut sq: Vec<f64> = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .collect();
    sq.sort_unstable_by(f64::total_cmp);
    let s: f64 = sq.iter().sum();
    Ok(s / x.numel() as f64)
}

/// PSNR in dB; identical images give `f64::INFINITY`.
pub fn psnr(x: &Tensor<f32>, y: &Tensor<f32>, cfg: &MetricConfig) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (cfg.max * cfg.max / m).log10())
}

pub fn rmse(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
    Ok(mse(x, y)?.sqrt())
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn ssim(x: &Tensor<f32>, y: &Tensor<f32>, cfg: &MetricConfig) -> Result<f64> {
    same_dims("ssim", x, y)?;
    match cfg.mode {
        SsimMode::Global => Ok(global_ssim(x.data(), y.data(), cfg.c1, cfg.c2)),
        SsimMode::Windowed { window, sigma } => windowed_ssim(x, y, window, sigma, cfg.c1, cfg.c2),
    }
}

fn global_ssim(x: &[f32], y: &[f32], c1: f64, c2: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    ssim_from_moments(mx, my, vx / n, vy / n, cov / n, c1, c2)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filter over the last two axes.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|t| k[t] * src[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|t| k[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

fn windowed_ssim(x: &Tensor<f32>, y: &Tensor<f32>, window: usize, sigma: f64, c1: f64, c2: f64) -> Result<f64> {
    let d = x.dims();
    if d.len() < 2 || d[d.len() - 2] < window || d[d.len() - 1] < window {
        return Err(Error::shape(
            "ssim",
            format!("windowed SSIM needs both extents ≥ {window}, got {d:?}"),
        ));
    }
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let k = gaussian_kernel(window, sigma);
    let planes = x.numel() / (h * w);
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..planes {
        let xs: Vec<f64> = x.data()[p * h * w..(p + 1) * h * w].iter().map(|&v| v as f64).collect();
        let ys: Vec<f64> = y.data()[p * h * w..(p + 1) * h * w].iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let [mx, my, exx, eyy, exy] = [&xs, &ys, &xx, &yy, &xy].map(|s| filter_valid(s, h, w, &k));
        for i in 0..mx.len() {
            let (vx, vy, cov) = (exx[i] - mx[i] * mx[i], eyy[i] - my[i] * my[i], exy[i] - mx[i] * my[i]);
            total += ssim_from_moments(mx[i], my[i], vx, vy, cov, c1, c2);
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Descriptive statistics of one metric across images. `std` is the
/// population standard deviation; quartiles interpolate linearly between
/// order statistics at position `p·(n−1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let f = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * f
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("cannot summarize an empty metric list".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if mean.is_finite() {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        } else {
            f64::NAN
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            std,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub rmse: Vec<f64>,
}

impl MetricReport {
    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    pub fn psnr_summary(&self) -> Summary {
        Summary::of(&self.psnr).expect("report is nonempty")
    }

    pub fn ssim_summary(&self) -> Summary {
        Summary::of(&self.ssim).expect("report is nonempty")
    }

    pub fn rmse_summary(&self) -> Summary {
        Summary::of(&self.rmse).expect("report is nonempty")
    }
}

/// Metrics for each `(denoised, target)` pair.
pub fn report(pairs: &[(&Tensor<f32>, &Tensor<f32>)], cfg: &MetricConfig) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Usage("metric report needs at least one image pair".into()));
    }
    cfg.validate()?;
    let mut r = MetricReport {
        psnr: Vec::with_capacity(pairs.len()),
        ssim: Vec::with_capacity(pairs.len()),
        rmse: Vec::with_capacity(pairs.len()),
    };
    for (x, y) in pairs {
        r.psnr.push(psnr(x, y, cfg)?);
        r.ssim.push(ssim(x, y, cfg)?);
        r.rmse.push(rmse(x, y)?);
    }
    Ok(r)
}
