use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    None,
    /// Mirror columns.
    Horizontal,
    /// Mirror rows.
    Vertical,
}

/// Flip followed by `quarter_turns` counter-clockwise rotations, applied to
/// the last two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub quarter_turns: u8,
    pub flip: Flip,
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        quarter_turns: 0,
        flip: Flip::None,
    };

    /// Uniform over the 4×3 rotation/flip combinations.
    pub fn draw(rng: &mut SplitMix64) -> Self {
        let k = rng.below(12);
        Self {
            quarter_turns: (k % 4) as u8,
            flip: [Flip::None, Flip::Horizontal, Flip::Vertical][k / 4],
        }
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let x = flip(x, self.flip)?;
        rotate(&x, self.quarter_turns)
    }

    /// Undoes [`Augment::apply`].
    pub fn invert(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let x = rotate(x, (4 - self.quarter_turns % 4) % 4)?;
        flip(&x, self.flip)
    }
}

fn plane_dims(x: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    let d = x.dims();
    if d.len() < 2 {
        return Err(Error::shape("augment", format!("need at least 2 axes, got {d:?}")));
    }
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    Ok((x.numel() / (h * w).max(1), h, w))
}

pub fn flip(x: &Tensor<f32>, f: Flip) -> Result<Tensor<f32>> {
    let (planes, h, w) = plane_dims(x)?;
    if f == Flip::None {
        return Ok(x.clone());
    }
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = match f {
                    Flip::Horizontal => (i, w - 1 - j),
                    Flip::Vertical => (h - 1 - i, j),
                    Flip::None => unreachable!(),
                };
                out.push(src[base + si * w + sj]);
            }
        }
    }
    Tensor::from_vec(x.dims(), out)
}

/// Counter-clockwise rotation by `k` quarter turns. Odd turns need a square
/// plane.
pub fn rotate(x: &Tensor<f32>, k: u8) -> Result<Tensor<f32>> {
    let (planes, h, w) = plane_dims(x)?;
    let k = k % 4;
    if k % 2 == 1 && h != w {
        return Err(Error::Precondition(format!("rotation needs a square image, got {h}×{w}")));
    }
    if k == 0 {
        return Ok(x.clone());
    }
    let n = h;
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = match k {
                    1 => (j, n - 1 - i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (n - 1 - j, i),
                };
                out.push(src[base + si * w + sj]);
            }
        }
    }
    Tensor::from_vec(x.dims(), out)
}
