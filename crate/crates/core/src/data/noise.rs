use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Dose-reduction stand-in: additive Gaussian noise and an optional
/// photon-count Poisson perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    pub poisson_photons: Option<f64>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.08,
            poisson_photons: None,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be ≥ 0, got {}", self.gaussian_sigma)));
        }
        if let Some(p) = self.poisson_photons {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("photon count must be positive, got {p}")));
            }
        }
        Ok(())
    }
}

/// `clamp(poisson(x·N)/N + gaussian(σ), 0, 1)`, deterministic in the seed.
pub fn degrade(x: &Tensor<f32>, spec: &NoiseSpec) -> Result<Tensor<f32>> {
    spec.validate()?;
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Precondition("clean image must lie in [0, 1]".into()));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let normal = Normal::new(0.0, spec.gaussian_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = x.clone();
    for v in out.data_mut() {
        let mut y = *v as f64;
        if let Some(n) = spec.poisson_photons {
            let lambda = y * n;
            if lambda > 0.0 {
                let p = Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?;
                y = p.sample(&mut rng) / n;
            }
        }
        if spec.gaussian_sigma > 0.0 {
            y += normal.sample(&mut rng);
        }
        *v = y.clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}
