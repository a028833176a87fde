use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the backward pass.
pub struct LayerNormCache<T: Real> {
    /// Normalized values before the affine transform.
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<usize> {
    let d = x.last_dim();
    if gamma.dims() != [d] || beta.dims() != [d] {
        return Err(Error::shape(
            "layer_norm",
            format!("gamma {:?} / beta {:?} must be [{d}]", gamma.dims(), beta.dims()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    Ok(d)
}

/// Normalizes each trailing-axis vector to zero mean and unit (biased)
/// variance, then applies `gamma`/`beta`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = check(x, gamma, beta, eps)?;
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(eps);
    let mut xhat = Tensor::zeros(x.dims());
    let mut out = Tensor::zeros(x.dims());
    let mut inv_std = Vec::with_capacity(x.numel() / d);
    for ((row, hrow), orow) in x
        .data()
        .chunks(d)
        .zip(xhat.data_mut().chunks_mut(d))
        .zip(out.data_mut().chunks_mut(d))
    {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        inv_std.push(r);
        for (i, (&v, h)) in row.iter().zip(hrow.iter_mut()).enumerate() {
            *h = (v - mean) * r;
            orow[i] = *h * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok((out, LayerNormCache { xhat, inv_std }))
}

pub struct LayerNormGrads<T: Real> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> LayerNormGrads<T> {
    let d = gamma.numel();
    let inv_d = T::of(1.0 / d as f64);
    let mut dx = Tensor::zeros(dy.dims());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let mut g = vec![T::zero(); d];
    for (((dyr, hr), dxr), &r) in dy
        .data()
        .chunks(d)
        .zip(cache.xhat.data().chunks(d))
        .zip(dx.data_mut().chunks_mut(d))
        .zip(&cache.inv_std)
    {
        for i in 0..d {
            dgamma.data_mut()[i] += dyr[i] * hr[i];
            dbeta.data_mut()[i] += dyr[i];
            g[i] = dyr[i] * gamma.data()[i];
        }
        let mean_g = g.iter().copied().sum::<T>() * inv_d;
        let mean_gh = g.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        for i in 0..d {
            dxr[i] = r * (g[i] - mean_g - hr[i] * mean_gh);
        }
    }
    LayerNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: &[f64], eps: f64) -> Vec<f64> {
        let d = x.len();
        let t = Tensor::from_vec(&[d], x.to_vec()).unwrap();
        let g = Tensor::full(&[d], 1.0);
        let b = Tensor::zeros(&[d]);
        layer_norm(&t, &g, &b, eps).unwrap().0.into_data()
    }

    #[test]
    fn hand_computed_row() {
        let y = ln(&[1.0, 2.0, 3.0], 1e-12);
        for (a, e) in y.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((a - e).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_row_maps_to_beta() {
        let t = Tensor::<f32>::full(&[2, 5], 7.25);
        let g = Tensor::full(&[5], 3.0);
        let b = Tensor::from_vec(&[5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let (y, _) = layer_norm(&t, &g, &b, DEFAULT_LN_EPS).unwrap();
        for row in y.data().chunks(5) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn rejects_bad_eps_and_shapes() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        let g = Tensor::full(&[3], 1.0);
        assert!(layer_norm(&t, &g, &g, 0.0).is_err());
        let g4 = Tensor::full(&[4], 1.0);
        assert!(layer_norm(&t, &g4, &g4, 1e-5).is_err());
    }
}
