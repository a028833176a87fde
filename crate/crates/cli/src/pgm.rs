//! 8-bit binary PGM (P5) previews of `[0, 1]` images.

use std::path::Path;

use witunet::tensor::write_atomic;
use witunet::{Error, Result, Tensor};

/// Encodes the last two axes of `img` (leading axes must be 1) with values
/// clamped to `[0, 1]`.
pub fn encode(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let d = img.dims();
    if d.len() < 2 || d[..d.len() - 2].iter().any(|&e| e != 1) {
        return Err(Error::shape("pgm", format!("expected a single image plane, got {d:?}")));
    }
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write(img: &Tensor<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(img)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_pixels() {
        let img = Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.5]).unwrap();
        let b = encode(&img).unwrap();
        assert_eq!(&b[..11], b"P5\n2 1\n255\n");
        assert_eq!(&b[11..], &[0, 255]);
        assert!(encode(&Tensor::zeros(&[2, 2, 2])).is_err());
    }
}
