//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SplitMix64;
use crate::tape::{Fault, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
    /// Additional floor as a fraction of the RMS analytic gradient over all
    /// parameters, so rounding noise on near-zero coordinates is judged
    /// against the overall gradient scale.
    pub scale_floor: f64,
    /// Minimum number of coordinates sampled over all parameters.
    pub min_samples: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl GradCheckConfig {
    /// Settings for 32-bit checks: h = 1e-3, tolerance 1e-2.
    pub fn single() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-2,
            floor: 1e-6,
            scale_floor: 0.1,
            min_samples: 100,
            seed: 0x5eed,
            fault: None,
        }
    }

    /// Settings for 64-bit checks: h = 1e-5, tolerance 1e-4.
    pub fn double() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            scale_floor: 0.0,
            ..Self::single()
        }
    }

    pub fn for_precision<T: Real>() -> Self {
        if std::mem::size_of::<T>() == 8 {
            Self::double()
        } else {
            Self::single()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.rel_error <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordCheck> {
        self.checks.iter().filter(|c| c.rel_error > self.tolerance)
    }

    /// Worst relative error and sample count per group, where the group of a
    /// parameter is whatever `group_of` maps its name to.
    pub fn by_group(&self, group_of: impl Fn(&str) -> String) -> BTreeMap<String, (usize, f64)> {
        let mut out: BTreeMap<String, (usize, f64)> = BTreeMap::new();
        for c in &self.checks {
            let e = out.entry(group_of(&c.param)).or_insert((0, 0.0));
            e.0 += 1;
            e.1 = e.1.max(c.rel_error);
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of a scalar loss with central differences on
/// randomly sampled coordinates of every parameter.
///
/// `loss` receives a tape and the parameters registered on it and must
/// return a scalar.
pub fn check_gradients<T, F>(params: &BTreeMap<String, Tensor<T>>, loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &BTreeMap<String, Var<T>>) -> Result<Var<T>>,
{
    let eval = |tape: &mut Tape<T>, values: &BTreeMap<String, Tensor<T>>| -> Result<Var<T>> {
        let vars = values
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(k, v.clone())))
            .collect();
        loss(tape, &vars)
    };

    let mut tape = Tape::new();
    if let Some(f) = cfg.fault {
        tape = tape.with_fault(f);
    }
    let out = eval(&mut tape, params)?;
    let analytic = tape.backward(&out)?.params();

    let mut rng = SplitMix64::new(cfg.seed);
    let plan = sample_plan(params, cfg.min_samples, &mut rng);
    let (sq, count) = analytic
        .values()
        .flat_map(|g| g.data().iter())
        .fold((0.0, 0usize), |(s, n), g| (s + g.as_f64().powi(2), n + 1));
    let rms = (sq / count.max(1) as f64).sqrt();
    let mut working = params.clone();
    let mut checks = Vec::new();
    for (name, coords) in plan {
        let value = &params[&name];
        let zero = Tensor::zeros(value.dims());
        let grad = analytic.get(&name).unwrap_or(&zero);
        let name = &name;
        let floor = cfg.floor.max(cfg.scale_floor * rms);
        for idx in coords {
            let orig = value.data()[idx];
            let mut probe = |delta: f64| -> Result<f64> {
                working.get_mut(name).unwrap().data_mut()[idx] = T::of(orig.as_f64() + delta);
                let mut t = Tape::inference();
                let v = eval(&mut t, &working)?;
                Ok(v.value().data()[0].as_f64())
            };
            let plus = probe(cfg.step)?;
            let minus = probe(-cfg.step)?;
            working.get_mut(name).unwrap().data_mut()[idx] = orig;
            // Use the step actually representable in T.
            let hp = T::of(orig.as_f64() + cfg.step).as_f64() - T::of(orig.as_f64() - cfg.step).as_f64();
            let numeric = (plus - minus) / hp;
            let a = grad.data()[idx].as_f64();
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at {name}[{idx}]")));
            }
            checks.push(CoordCheck {
                param: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric, floor),
            });
        }
    }
    Ok(GradCheckReport {
        checks,
        tolerance: cfg.tolerance,
    })
}

/// Coordinates to check per parameter: one from every parameter, the rest
/// drawn uniformly from all remaining coordinates, `min_samples` in total
/// (or every coordinate when there are fewer).
fn sample_plan<T: Real>(params: &BTreeMap<String, Tensor<T>>, min_samples: usize, rng: &mut SplitMix64) -> Vec<(String, Vec<usize>)> {
    let mut plan: Vec<(String, Vec<usize>)> = Vec::new();
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (p, (name, value)) in params.iter().enumerate() {
        let n = value.numel();
        if n == 0 {
            continue;
        }
        let first = rng.below(n);
        plan.push((name.clone(), vec![first]));
        pool.extend((0..n).filter(|&i| i != first).map(|i| (p, i)));
    }
    let extra = min_samples.saturating_sub(plan.len()).min(pool.len());
    // Partial Fisher-Yates: the first `extra` slots become a uniform sample.
    for i in 0..extra {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    let names: Vec<&String> = params.keys().collect();
    for &(p, idx) in &pool[..extra] {
        let slot = plan.iter_mut().find(|(n, _)| n == names[p]).expect("planned");
        slot.1.push(idx);
    }
    for (_, coords) in &mut plan {
        coords.sort_unstable();
    }
    plan
}

/// Fixed pseudo-random weights for turning a tensor output into a scalar
/// loss without the symmetries of a plain sum.
pub fn probe_weights<T: Real>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(dims, |_| T::of(rng.uniform(-1.0, 1.0)))
}

/// Uniform random tensor in `[-scale, scale)`.
pub fn random_tensor<T: Real>(dims: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::of(rng.uniform(-scale, scale)))
}

/// Result of checking one parameterized operation.
#[derive(Clone, Debug)]
pub struct GroupResult {
    pub group: &'static str,
    pub report: GradCheckReport,
}

/// Operations covered by [`run_suite`].
pub const SUITE_GROUPS: [&str; 7] = [
    "conv2d",
    "conv_transpose2d",
    "linear",
    "layer_norm",
    "w_msa",
    "lipe",
    "network",
];

fn group_params<T: Real>(decls: &[(&str, &[usize], f64)], rng: &mut SplitMix64) -> BTreeMap<String, Tensor<T>> {
    decls
        .iter()
        .map(|&(name, dims, scale)| (name.to_string(), random_tensor(dims, scale, rng)))
        .collect()
}

/// Checks `op` through the probe loss `Σ w·(op(p) − op(p₀))`. Subtracting
/// the base output is exact near `p₀`, so the scalar keeps full precision
/// even in 32-bit.
fn check_op<T, F>(params: &BTreeMap<String, Tensor<T>>, op: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &BTreeMap<String, Var<T>>) -> Result<Var<T>>,
{
    let mut t = Tape::inference();
    let vars = params.iter().map(|(k, v)| (k.clone(), t.param(k, v.clone()))).collect();
    let base = op(&mut t, &vars)?.value().map(|v| -v);
    let weights = probe_weights::<T>(base.dims(), cfg.seed);
    check_gradients(
        params,
        |t, v| {
            let y = op(t, v)?;
            let offset = t.constant(base.clone());
            let d = t.add(&y, &offset)?;
            t.weighted_sum(&d, weights.clone())
        },
        cfg,
    )
}

/// Checks one group by name; inputs are included as parameters so input
/// gradients are verified too.
pub fn check_group<T: Real>(group: &str, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use crate::block::FeedForward;
    use crate::net::{NetConfig, WiTUnet};
    use crate::ops::ConvSpec;
    use crate::window::WindowAttention;

    let mut rng = SplitMix64::new(cfg.seed ^ 0xA5A5);
    match group {
        "conv2d" => {
            let spec = ConvSpec::new(3, 4, 3, 2, 1);
            let p = group_params::<T>(&[("x", &[2, 3, 5, 6], 1.0), ("w", &spec.weight_dims(), 0.5), ("b", &[4], 0.5)], &mut rng);
            check_op(
                &p,
                |t, v| t.conv2d(&v["x"], &v["w"], Some(&v["b"]), spec),
                cfg,
            )
        }
        "conv_transpose2d" => {
            let p = group_params::<T>(&[("x", &[2, 4, 3, 3], 1.0), ("w", &[4, 2, 2, 2], 0.5), ("b", &[2], 0.5)], &mut rng);
            check_op(
                &p,
                |t, v| t.conv_transpose2d(&v["x"], &v["w"], Some(&v["b"]), 2),
                cfg,
            )
        }
        "linear" => {
            let p = group_params::<T>(&[("x", &[3, 4, 8], 1.0), ("w", &[6, 8], 0.5), ("b", &[6], 0.5)], &mut rng);
            check_op(
                &p,
                |t, v| t.linear(&v["x"], &v["w"], Some(&v["b"])),
                cfg,
            )
        }
        "layer_norm" => {
            let p = group_params::<T>(&[("x", &[4, 3, 8], 1.0), ("g", &[8], 1.0), ("b", &[8], 0.5)], &mut rng);
            check_op(
                &p,
                |t, v| t.layer_norm(&v["x"], &v["g"], &v["b"], crate::ops::DEFAULT_LN_EPS),
                cfg,
            )
        }
        "w_msa" => {
            // A 6×6 map with 4×4 windows exercises padding and key masking.
            let attn = WindowAttention::new(8, 2, 4)?;
            let mut decls = Vec::new();
            attn.declare("a", &mut decls);
            let mut p: BTreeMap<String, Tensor<T>> = decls
                .iter()
                .map(|d| (d.name.clone(), random_tensor(&d.dims, 0.5, &mut rng)))
                .collect();
            p.insert("x".into(), random_tensor(&[1, 8, 6, 6], 1.0, &mut rng));
            check_op(
                &p,
                |t, v| attn.forward_map(t, v, "a", &v["x"], |_, tok| Ok(tok.clone())),
                cfg,
            )
        }
        "lipe" => {
            let ffn = FeedForward::LiPe {
                expansion: 2,
                depthwise: false,
            };
            let mut decls = Vec::new();
            ffn.declare(4, "f", &mut decls);
            let mut p: BTreeMap<String, Tensor<T>> = decls
                .iter()
                .map(|d| (d.name.clone(), random_tensor(&d.dims, 0.5, &mut rng)))
                .collect();
            p.insert("x".into(), random_tensor(&[1, 4, 5, 5], 1.0, &mut rng));
            check_op(
                &p,
                |t, v| ffn.forward(t, v, "f", &v["x"]),
                cfg,
            )
        }
        "network" => {
            let net = WiTUnet::new(NetConfig::desk())?;
            let mut p: BTreeMap<String, Tensor<T>> = BTreeMap::new();
            for d in net.declare() {
                let scale = match d.init {
                    crate::params::Init::FanIn(f) => 1.0 / (f as f64).sqrt(),
                    _ => 0.2,
                };
                let mut t = random_tensor::<T>(&d.dims, scale, &mut rng);
                if matches!(d.init, crate::params::Init::Ones) {
                    t = t.map(|v| v + T::one());
                }
                p.insert(d.name, t);
            }
            let y = random_tensor::<T>(&[1, 1, 16, 16], 1.0, &mut rng).map(|v| v.abs());
            // A target near the input keeps the loss small, which keeps its
            // rounding quantum small relative to the gradients.
            let noise = random_tensor::<T>(&[1, 1, 16, 16], 0.01, &mut rng);
            let x = Tensor::from_fn(y.dims(), |i| y.data()[i] + noise.data()[i]);
            check_gradients(
                &p,
                |t, v| {
                    let yv = t.constant(y.clone());
                    let xv = t.constant(x.clone());
                    let out = net.forward(t, v, &yv)?;
                    t.mse(&out.output, &xv)
                },
                cfg,
            )
        }
        other => Err(Error::Usage(format!(
            "unknown gradient-check group `{other}` (known: {})",
            SUITE_GROUPS.join(", ")
        ))),
    }
}

/// Checks every group in [`SUITE_GROUPS`].
pub fn run_suite<T: Real>(cfg: &GradCheckConfig) -> Result<Vec<GroupResult>> {
    SUITE_GROUPS
        .iter()
        .map(|&group| {
            Ok(GroupResult {
                group,
                report: check_group::<T>(group, cfg)?,
            })
        })
        .collect()
}
