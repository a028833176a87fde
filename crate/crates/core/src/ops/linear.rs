use super::matmul::matmul;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn check<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
    let (dout, din) = match *weight.dims() {
        [o, i] => (o, i),
        ref d => return Err(Error::shape("linear", format!("weight must be [Dout, Din], got {d:?}"))),
    };
    if x.last_dim() != din {
        return Err(Error::shape(
            "linear",
            format!("trailing dim {} of input {:?} does not match Din={din}", x.last_dim(), x.dims()),
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [dout] {
            return Err(Error::shape("linear", format!("bias dims {:?}, expected [{dout}]", b.dims())));
        }
    }
    Ok((x.numel() / din, din, dout))
}

/// `x · weightᵀ + bias` over the trailing axis.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, din, dout) = check(x, weight, bias)?;
    let mut dims = x.dims().to_vec();
    *dims.last_mut().unwrap() = dout;
    let mut out = Tensor::zeros(&dims);
    matmul(x.data(), false, weight.data(), true, out.data_mut(), rows, din, dout, false);
    if let Some(b) = bias {
        for row in out.data_mut().chunks_mut(dout) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    Ok(out)
}

pub struct LinearGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (rows, din, dout) = check(x, weight, None)?;
    if dy.numel() != rows * dout || dy.last_dim() != dout {
        return Err(Error::shape("linear_backward", format!("output grad dims {:?}", dy.dims())));
    }
    let mut dx = Tensor::zeros(x.dims());
    matmul(dy.data(), false, weight.data(), false, dx.data_mut(), rows, dout, din, false);
    let mut dw = Tensor::zeros(weight.dims());
    matmul(dy.data(), true, x.data(), false, dw.data_mut(), dout, rows, din, false);
    let mut db = Tensor::zeros(&[dout]);
    for row in dy.data().chunks(dout) {
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
