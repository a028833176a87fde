use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Overlapping-ellipse phantom recipe. The first ellipse is a large body
/// outline; the rest are smaller structures that add or remove intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Range of the absolute intensity contributed by each ellipse.
    pub intensity_lo: f64,
    pub intensity_hi: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            min_ellipses: 4,
            max_ellipses: 8,
            intensity_lo: 0.1,
            intensity_hi: 0.5,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Config(format!("phantom size must be at least 16, got {}", self.size)));
        }
        if self.min_ellipses > self.max_ellipses {
            return Err(Error::Config(format!(
                "ellipse count range is empty ({}..={})",
                self.min_ellipses, self.max_ellipses
            )));
        }
        if !(0.0 <= self.intensity_lo && self.intensity_lo <= self.intensity_hi && self.intensity_hi <= 1.0) {
            return Err(Error::Config(format!(
                "intensity range must satisfy 0 ≤ lo ≤ hi ≤ 1, got [{}, {}]",
                self.intensity_lo, self.intensity_hi
            )));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Deterministic `[1, size, size]` phantom clamped to `[0, 1]`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Tensor<f32>> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let count = spec.min_ellipses + rng.below(spec.max_ellipses - spec.min_ellipses + 1);
    let mut ellipses = Vec::with_capacity(count);
    for i in 0..count {
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let e = if i == 0 {
            Ellipse {
                cx: rng.uniform(-0.05, 0.05),
                cy: rng.uniform(-0.05, 0.05),
                a: rng.uniform(0.7, 0.9),
                b: rng.uniform(0.55, 0.8),
                cos: theta.cos(),
                sin: theta.sin(),
                value: spec.intensity_hi,
            }
        } else {
            let sign = if rng.next_f64() < 0.3 { -1.0 } else { 1.0 };
            Ellipse {
                cx: rng.uniform(-0.5, 0.5),
                cy: rng.uniform(-0.5, 0.5),
                a: rng.uniform(0.08, 0.35),
                b: rng.uniform(0.08, 0.35),
                cos: theta.cos(),
                sin: theta.sin(),
                value: sign * rng.uniform(spec.intensity_lo, spec.intensity_hi),
            }
        };
        ellipses.push(e);
    }
    let n = spec.size;
    let coord = |i: usize| (2.0 * i as f64 + 1.0) / n as f64 - 1.0;
    Ok(Tensor::from_fn(&[1, n, n], |idx| {
        let (r, c) = (idx / n, idx % n);
        let (x, y) = (coord(c), coord(r));
        let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.value).sum();
        v.clamp(0.0, 1.0) as f32
    }))
}
