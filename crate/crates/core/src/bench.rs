//! Attention cost harness: one streaming softmax-attention kernel timed
//! over non-overlapping windows and over the whole map.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::window::attention_flops;

/// Single-head attention of `nq` queries over `nk` keys, `c` channels,
/// without materializing the score matrix.
#[allow(clippy::too_many_arguments)]
pub fn attend(q: &[f32], k: &[f32], v: &[f32], nq: usize, nk: usize, c: usize, out: &mut [f32], scores: &mut Vec<f32>) {
    let scale = 1.0 / (c as f32).sqrt();
    scores.resize(nk, 0.0);
    for i in 0..nq {
        let qi = &q[i * c..(i + 1) * c];
        let mut max = f32::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * c..(j + 1) * c];
            let d: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
            *s = d;
            max = max.max(d);
        }
        let mut denom = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        let oi = &mut out[i * c..(i + 1) * c];
        oi.iter_mut().for_each(|o| *o = 0.0);
        for (j, &s) in scores.iter().enumerate() {
            let w = s / denom;
            for (o, &vv) in oi.iter_mut().zip(&v[j * c..(j + 1) * c]) {
                *o += w * vv;
            }
        }
    }
}

/// Attention over the full `h·w` token map (`x` is `[h·w, c]`, used as Q,
/// K and V).
pub fn global_attention(x: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let n = h * w;
    let mut out = vec![0.0; n * c];
    let mut scores = Vec::new();
    attend(x, x, x, n, n, c, &mut out, &mut scores);
    out
}

/// Attention within each `m×m` window of an `h×w` map.
pub fn windowed_attention(x: &[f32], h: usize, w: usize, c: usize, m: usize) -> Result<Vec<f32>> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::Precondition(format!("{h}×{w} map does not tile into {m}×{m} windows")));
    }
    let t = m * m;
    let mut win = vec![0.0; t * c];
    let mut res = vec![0.0; t * c];
    let mut out = vec![0.0; h * w * c];
    let mut scores = Vec::new();
    for wr in 0..h / m {
        for wc in 0..w / m {
            for i in 0..m {
                let src = ((wr * m + i) * w + wc * m) * c;
                win[i * m * c..(i + 1) * m * c].copy_from_slice(&x[src..src + m * c]);
            }
            attend(&win, &win, &win, t, t, c, &mut res, &mut scores);
            for i in 0..m {
                let dst = ((wr * m + i) * w + wc * m) * c;
                out[dst..dst + m * c].copy_from_slice(&res[i * m * c..(i + 1) * m * c]);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub side: usize,
    pub tokens: usize,
    pub flops_windowed: u128,
    pub flops_global: u128,
    pub windowed: Duration,
    pub global: Duration,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sides: Vec<usize>,
    pub window: usize,
    pub channels: usize,
    /// Timed repetitions per measurement; the minimum is kept.
    pub repeats: usize,
    /// Each windowed measurement loops until at least this long.
    pub min_time: Duration,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sides: vec![32, 64, 128],
            window: 8,
            channels: 16,
            repeats: 3,
            min_time: Duration::from_millis(20),
            seed: 0,
        }
    }
}

/// Minimum over `repeats` of the mean per-call time, with each sample
/// looping until `min_time` has elapsed.
fn time_min(repeats: usize, min_time: Duration, mut f: impl FnMut()) -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut calls = 0u32;
        loop {
            f();
            calls += 1;
            if start.elapsed() >= min_time {
                break;
            }
        }
        best = best.min(start.elapsed() / calls);
    }
    best
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rng = SplitMix64::new(cfg.seed);
    let mut rows = Vec::new();
    for &side in &cfg.sides {
        let n = side * side;
        let x: Vec<f32> = (0..n * cfg.channels).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        windowed_attention(&x, side, side, cfg.channels, cfg.window)?;
        let windowed = time_min(cfg.repeats, cfg.min_time, || {
            std::hint::black_box(windowed_attention(&x, side, side, cfg.channels, cfg.window).expect("tiles"));
        });
        let global = time_min(cfg.repeats, Duration::ZERO, || {
            std::hint::black_box(global_attention(&x, side, side, cfg.channels));
        });
        let (fw, fg) = attention_flops(side, side, cfg.channels, cfg.window);
        rows.push(BenchRow {
            side,
            tokens: n,
            flops_windowed: fw,
            flops_global: fg,
            windowed,
            global,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Fitted exponents of windowed and global time against token count.
pub fn fitted_exponents(rows: &[BenchRow]) -> (f64, f64) {
    let n: Vec<f64> = rows.iter().map(|r| r.tokens as f64).collect();
    let tw: Vec<f64> = rows.iter().map(|r| r.windowed.as_secs_f64()).collect();
    let tg: Vec<f64> = rows.iter().map(|r| r.global.as_secs_f64()).collect();
    (log_log_slope(&n, &tw), log_log_slope(&n, &tg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((log_log_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn single_window_equals_global() {
        let mut rng = SplitMix64::new(2);
        let x: Vec<f32> = (0..16 * 4).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let g = global_attention(&x, 4, 4, 4);
        let w = windowed_attention(&x, 4, 4, 4, 4).unwrap();
        assert_eq!(g, w);
        assert!(windowed_attention(&x, 4, 4, 4, 3).is_err());
    }
}
