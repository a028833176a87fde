//! Synthetic low-dose/full-dose corpora: ellipse phantoms, noise
//! simulation, intensity windowing, dihedral augmentation, and manifests.

pub mod augment;
pub mod corpus;
pub mod noise;
pub mod phantom;

pub use augment::{flip, rotate, Augment, Flip};
pub use corpus::{build_corpus, image_seed, Corpus, ImagePair, Manifest, ManifestEntry, Split, MANIFEST_NAME};

pub use noise::{degrade, NoiseSpec};
pub use phantom::{make_phantom, PhantomSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default HU display window.
pub const HU_LO: f32 = -160.0;
pub const HU_HI: f32 = 240.0;

fn check_window(lo: f32, hi: f32) -> Result<()> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("intensity window needs lo < hi, got [{lo}, {hi}]")));
    }
    Ok(())
}

/// Affine map of `[lo, hi]` onto `[0, 1]`, clamping outside values.
pub fn normalize(raw: &Tensor<f32>, lo: f32, hi: f32) -> Result<Tensor<f32>> {
    check_window(lo, hi)?;
    let span = (hi as f64) - (lo as f64);
    Ok(raw.map(|v| (((v as f64 - lo as f64) / span).clamp(0.0, 1.0)) as f32))
}

/// Inverse of [`normalize`] on unclamped values.
pub fn denormalize(x: &Tensor<f32>, lo: f32, hi: f32) -> Result<Tensor<f32>> {
    check_window(lo, hi)?;
    let span = (hi as f64) - (lo as f64);
    Ok(x.map(|v| (v as f64 * span + lo as f64) as f32))
}
