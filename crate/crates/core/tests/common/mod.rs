//! Independent loop-based oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use witunet::params::{ParamStore, VarMap};
use witunet::rng::SplitMix64;
use witunet::{Real, Tape, Tensor};

pub fn random<T: Real>(dims: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::of(rng.uniform(-scale, scale)))
}

pub fn register<T: Real>(tape: &mut Tape<T>, params: &BTreeMap<String, Tensor<T>>) -> VarMap<T> {
    params.iter().map(|(k, v)| (k.clone(), tape.param(k, v.clone()))).collect()
}

pub fn store_from<T: Real>(params: &BTreeMap<String, Tensor<T>>) -> ParamStore<T> {
    let mut s = ParamStore::new();
    for (k, v) in params {
        s.insert(k, v.clone()).unwrap();
    }
    s
}

/// Largest absolute difference divided by the largest reference magnitude.
pub fn max_rel_diff(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// Multi-head self-attention over `n` tokens (`x` row-major `[n, c]`), by
/// explicit loops. Weights are `[out, in]`; `bias(h, i, j)` is added to the
/// logit of query `i` and key `j` in head `h`.
#[allow(clippy::too_many_arguments)]
pub fn brute_mha(
    x: &[f64],
    n: usize,
    c: usize,
    heads: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    wo: &[f64],
    bo: &[f64],
    bias: &dyn Fn(usize, usize, usize) -> f64,
) -> Vec<f64> {
    let proj = |w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n * c];
        for t in 0..n {
            for o in 0..c {
                let mut s = 0.0;
                for i in 0..c {
                    s += w[o * c + i] * x[t * c + i];
                }
                out[t * c + o] = s;
            }
        }
        out
    };
    let (q, k, v) = (proj(wq), proj(wk), proj(wv));
    let dk = c / heads;
    let mut cat = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let mut s = 0.0;
                for d in 0..dk {
                    s += q[i * c + h * dk + d] * k[j * c + h * dk + d];
                }
                logits[j] = s / (dk as f64).sqrt() + bias(h, i, j);
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..dk {
                let mut s = 0.0;
                for j in 0..n {
                    s += e[j] / z * v[j * c + h * dk + d];
                }
                cat[i * c + h * dk + d] = s;
            }
        }
    }
    let mut out = vec![0.0; n * c];
    for t in 0..n {
        for o in 0..c {
            let mut s = bo[o];
            for i in 0..c {
                s += wo[o * c + i] * cat[t * c + i];
            }
            out[t * c + o] = s;
        }
    }
    out
}

pub fn brute_mse(x: &[f32], y: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let d = x[i] as f64 - y[i] as f64;
        s += d * d;
    }
    s / x.len() as f64
}

pub fn brute_psnr(x: &[f32], y: &[f32], max: f64) -> f64 {
    10.0 * (max * max / brute_mse(x, y)).log10()
}

/// Whole-image SSIM with two-pass moments.
pub fn brute_ssim(x: &[f32], y: &[f32], max: f64) -> f64 {
    let n = x.len() as f64;
    let (c1, c2) = ((0.01 * max).powi(2), (0.03 * max).powi(2));
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..x.len() {
        mx += x[i] as f64;
        my += y[i] as f64;
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let a = x[i] as f64 - mx;
        let b = y[i] as f64 - my;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let (vx, vy, cxy) = (sxx / n, syy / n, sxy / n);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Runs an instrumented forward for depth `d` and checks level widths,
/// decoder input widths, node enumeration, and in-degrees. Returns the
/// node count.
pub fn check_architecture(d: usize, nested: bool) -> Result<usize, String> {
    use witunet::net::{NetConfig, NodeId, NodeRole, WiTUnet};
    let c = 4;
    let cfg = NetConfig {
        base_channels: c,
        depth: d,
        window: 4,
        blocks_per_level: 1,
        head_dim: 4,
        use_nested: nested,
        ..NetConfig::default()
    };
    let net = WiTUnet::new(cfg).map_err(|e| e.to_string())?;
    let params = net.init_params::<f32>(3).map_err(|e| e.to_string())?;
    let side = 16;
    let mut tape = Tape::inference();
    let vars = params.register(&mut tape);
    let mut rng = SplitMix64::new(4);
    let y = tape.constant(random::<f32>(&[1, 1, side, side], 1.0, &mut rng));
    let out = net.forward(&mut tape, &vars, &y).map_err(|e| e.to_string())?;

    let mut expected: Vec<(usize, usize)> = Vec::new();
    for k in 0..=d {
        for v in 0..=d - k {
            if nested || v == 0 || v == d - k {
                expected.push((k, v));
            }
        }
    }
    let mut seen: Vec<(usize, usize)> = out.trace.iter().map(|t| (t.node.k, t.node.v)).collect();
    seen.sort();
    expected.sort();
    if seen != expected {
        return Err(format!("D={d}: nodes {seen:?}, expected {expected:?}"));
    }
    for t in &out.trace {
        let (k, v) = (t.node.k, t.node.v);
        let width = (1 << k) * c;
        let extent = side >> k;
        if t.out_dims != [1, width, extent, extent] {
            return Err(format!("D={d} {}: output {:?}, expected width {width}", t.node, t.out_dims));
        }
        if t.role != NodeId::new(k, v).role(d) {
            return Err(format!("D={d} {}: role mismatch", t.node));
        }
        let want_in = match t.role {
            NodeRole::Decoder if nested => (d - k + 1) * width,
            NodeRole::Decoder => 2 * width,
            NodeRole::Intermediate => (v + 1) * width,
            NodeRole::Encoder | NodeRole::Bottleneck => {
                if k == 0 {
                    c
                } else {
                    width
                }
            }
        };
        if t.in_channels != want_in {
            return Err(format!("D={d} {}: input width {}, expected {want_in}", t.node, t.in_channels));
        }
        let want_degree = if nested || v == 0 { v + 1 } else { 2 };
        if t.inputs != want_degree {
            return Err(format!("D={d} {}: in-degree {}, expected {want_degree}", t.node, t.inputs));
        }
    }
    if out.output.dims() != [1, 1, side, side] {
        return Err(format!("D={d}: output dims {:?}", out.output.dims()));
    }
    Ok(out.trace.len())
}
