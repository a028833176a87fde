//! Reverse-mode autodiff over whole-tensor ops.
//!
//! Every op executed through a [`Tape`] computes its value eagerly and, when
//! recording, appends a record holding the inputs it needs for the backward
//! pass. [`Tape::backward`] replays the records in reverse.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ops::{self, conv, norm::LayerNormCache, shape, ConvSpec};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value produced on a tape.
#[derive(Clone, Debug)]
pub struct Var<T: Real = f32> {
    id: usize,
    value: Rc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }
}

/// Deliberate backward corruptions used to prove the gradient checker
/// notices broken derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    NegateGeluGrad,
}

enum Op<T: Real> {
    Leaf,
    Conv2d {
        x: Var<T>,
        w: Var<T>,
        b: Option<usize>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        x: Var<T>,
        w: Var<T>,
        b: Option<usize>,
        stride: usize,
    },
    Linear {
        x: Var<T>,
        w: Var<T>,
        b: Option<usize>,
    },
    LayerNorm {
        x: usize,
        gamma: Var<T>,
        beta: usize,
        cache: LayerNormCache<T>,
    },
    Softmax {
        x: usize,
        y: Rc<Tensor<T>>,
    },
    Gelu {
        x: Var<T>,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddBroadcast {
        a: usize,
        b: usize,
        b_dims: Vec<usize>,
    },
    Scale {
        x: usize,
        s: T,
    },
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Reshape {
        x: usize,
        dims: Vec<usize>,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
        sizes: Vec<usize>,
    },
    Pad {
        x: usize,
        h: usize,
        w: usize,
    },
    Crop {
        x: usize,
        dims: Vec<usize>,
    },
    Bmm {
        a: Var<T>,
        b: Var<T>,
        trans_b: bool,
    },
    Gather {
        table: usize,
        table_dims: Vec<usize>,
        index: Rc<Vec<(usize, usize)>>,
    },
    WeightedSum {
        x: usize,
        weights: Rc<Tensor<T>>,
    },
    Mse {
        pred: Var<T>,
        target: Var<T>,
    },
}

struct Record<T: Real> {
    out: usize,
    out_dims: Vec<usize>,
    op: Op<T>,
}

/// Recorded op sequence for one forward/backward pair.
pub struct Tape<T: Real = f32> {
    records: Vec<Record<T>>,
    next_id: usize,
    recording: bool,
    params: Vec<(String, usize)>,
    fault: Option<Fault>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            next_id: 0,
            recording: true,
            params: Vec::new(),
            fault: None,
        }
    }

    /// A tape that computes values without keeping anything for backward.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let id = self.next_id;
        self.next_id += 1;
        if self.recording {
            self.records.push(Record {
                out: id,
                out_dims: value.dims().to_vec(),
                op,
            });
        }
        Var {
            id,
            value: Rc::new(value),
        }
    }

    /// Registers a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf)
    }

    /// Registers a named trainable parameter.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Var<T> {
        let v = self.push(value, Op::Leaf);
        if self.recording {
            self.params.push((name.to_string(), v.id));
        }
        v
    }

    pub fn conv2d(&mut self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, spec: ConvSpec) -> Result<Var<T>> {
        let y = conv::conv2d(x.value(), w.value(), b.map(|b| b.value()), &spec)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x: x.clone(),
                w: w.clone(),
                b: b.map(|b| b.id),
                spec,
            },
        ))
    }

    pub fn conv_transpose2d(&mut self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, stride: usize) -> Result<Var<T>> {
        let y = conv::conv_transpose2d(x.value(), w.value(), b.map(|b| b.value()), stride)?;
        Ok(self.push(
            y,
            Op::ConvTranspose2d {
                x: x.clone(),
                w: w.clone(),
                b: b.map(|b| b.id),
                stride,
            },
        ))
    }

    pub fn linear(&mut self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let y = ops::linear(x.value(), w.value(), b.map(|b| b.value()))?;
        Ok(self.push(
            y,
            Op::Linear {
                x: x.clone(),
                w: w.clone(),
                b: b.map(|b| b.id),
            },
        ))
    }

    pub fn layer_norm(&mut self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let (y, cache) = ops::layer_norm(x.value(), gamma.value(), beta.value(), eps)?;
        Ok(self.push(
            y,
            Op::LayerNorm {
                x: x.id,
                gamma: gamma.clone(),
                beta: beta.id,
                cache,
            },
        ))
    }

    pub fn softmax(&mut self, x: &Var<T>) -> Var<T> {
        let y = Rc::new(ops::softmax(x.value()));
        let id = self.next_id;
        self.next_id += 1;
        if self.recording {
            self.records.push(Record {
                out: id,
                out_dims: y.dims().to_vec(),
                op: Op::Softmax { x: x.id, y: y.clone() },
            });
        }
        Var { id, value: y }
    }

    pub fn gelu(&mut self, x: &Var<T>) -> Var<T> {
        let y = ops::gelu(x.value());
        self.push(y, Op::Gelu { x: x.clone() })
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if a.dims() != b.dims() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", a.dims(), b.dims())));
        }
        let mut y = a.value().clone();
        y.add_assign(b.value());
        Ok(self.push(y, Op::Add { a: a.id, b: b.id }))
    }

    /// `a + b` with `b` broadcast over `a`'s leading axes.
    pub fn add_broadcast(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = shape::add_broadcast(a.value(), b.value())?;
        Ok(self.push(
            y,
            Op::AddBroadcast {
                a: a.id,
                b: b.id,
                b_dims: b.dims().to_vec(),
            },
        ))
    }

    pub fn scale(&mut self, x: &Var<T>, s: T) -> Var<T> {
        let y = x.value().map(|v| v * s);
        self.push(y, Op::Scale { x: x.id, s })
    }

    pub fn permute(&mut self, x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let y = shape::permute(x.value(), perm)?;
        Ok(self.push(
            y,
            Op::Permute {
                x: x.id,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: &Var<T>, dims: &[usize]) -> Result<Var<T>> {
        let y = (*x.value).clone().reshape(dims)?;
        Ok(self.push(
            y,
            Op::Reshape {
                x: x.id,
                dims: x.dims().to_vec(),
            },
        ))
    }

    pub fn concat(&mut self, xs: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|v| v.value()).collect();
        let y = shape::concat(&vals, axis)?;
        Ok(self.push(
            y,
            Op::Concat {
                xs: xs.iter().map(|v| v.id).collect(),
                axis,
                sizes: xs.iter().map(|v| v.dims()[axis]).collect(),
            },
        ))
    }

    pub fn pad_bottom_right(&mut self, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let nd = x.value().ndim();
        if nd >= 2 && x.dims()[nd - 2] == h && x.dims()[nd - 1] == w {
            return Ok(x.clone());
        }
        let y = shape::pad_bottom_right(x.value(), h, w)?;
        let (ih, iw) = (x.dims()[nd - 2], x.dims()[nd - 1]);
        Ok(self.push(y, Op::Pad { x: x.id, h: ih, w: iw }))
    }

    pub fn crop_top_left(&mut self, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let nd = x.value().ndim();
        if x.dims()[nd - 2] == h && x.dims()[nd - 1] == w {
            return Ok(x.clone());
        }
        let y = shape::crop_top_left(x.value(), h, w)?;
        Ok(self.push(
            y,
            Op::Crop {
                x: x.id,
                dims: x.dims().to_vec(),
            },
        ))
    }

    pub fn bmm(&mut self, a: &Var<T>, b: &Var<T>, trans_b: bool) -> Result<Var<T>> {
        let y = shape::bmm(a.value(), b.value(), trans_b)?;
        Ok(self.push(
            y,
            Op::Bmm {
                a: a.clone(),
                b: b.clone(),
                trans_b,
            },
        ))
    }

    pub fn gather_pairs(&mut self, table: &Var<T>, index: Rc<Vec<(usize, usize)>>, out_tail: &[usize]) -> Result<Var<T>> {
        let y = shape::gather_pairs(table.value(), &index, out_tail)?;
        Ok(self.push(
            y,
            Op::Gather {
                table: table.id,
                table_dims: table.dims().to_vec(),
                index,
            },
        ))
    }

    /// Scalar `Σ x·weights`; with all-ones weights this is a plain sum.
    pub fn weighted_sum(&mut self, x: &Var<T>, weights: Tensor<T>) -> Result<Var<T>> {
        if weights.dims() != x.dims() {
            return Err(Error::shape("weighted_sum", format!("{:?} vs {:?}", weights.dims(), x.dims())));
        }
        let s = T::of(
            x.value()
                .data()
                .iter()
                .zip(weights.data())
                .map(|(&a, &b)| a.as_f64() * b.as_f64())
                .sum::<f64>(),
        );
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x: x.id,
                weights: Rc::new(weights),
            },
        ))
    }

    pub fn sum(&mut self, x: &Var<T>) -> Var<T> {
        let ones = Tensor::full(x.dims(), T::one());
        self.weighted_sum(x, ones).expect("matching dims")
    }

    /// Mean squared error between `pred` and `target`.
    pub fn mse(&mut self, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
        if pred.dims() != target.dims() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", pred.dims(), target.dims())));
        }
        let n = pred.value().numel() as f64;
        let s: f64 = pred
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(&a, &b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(T::of(s / n)),
            Op::Mse {
                pred: pred.clone(),
                target: target.clone(),
            },
        ))
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, output: &Var<T>) -> Result<Gradients<T>> {
        if output.value().numel() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar output, got dims {:?}",
                output.dims()
            )));
        }
        self.backward_with(output, Tensor::full(output.dims(), T::one()))
    }

    /// Backpropagates an arbitrary output cotangent.
    pub fn backward_with(&self, output: &Var<T>, seed: Tensor<T>) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::State("backward on an inference tape".into()));
        }
        if self.records.is_empty() {
            return Err(Error::State("backward called before any forward op was recorded".into()));
        }
        if output.id >= self.next_id || !self.records.iter().any(|r| r.out == output.id) {
            return Err(Error::State(format!("value {} was not produced on this tape", output.id)));
        }
        if seed.dims() != output.dims() {
            return Err(Error::shape("backward", format!("seed {:?} vs output {:?}", seed.dims(), output.dims())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.next_id).map(|_| None).collect();
        grads[output.id] = Some(seed);
        for rec in self.records.iter().rev() {
            let Some(g) = grads[rec.out].take() else {
                continue;
            };
            debug_assert_eq!(g.dims(), rec.out_dims.as_slice());
            self.backprop(rec, &g, &mut grads)?;
            grads[rec.out] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop(&self, rec: &Record<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |id: usize, t: Tensor<T>| match &mut grads[id] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &rec.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let cg = conv::conv2d_backward(x.value(), w.value(), g, spec, true)?;
                acc(x.id, cg.input.expect("input grad requested"));
                acc(w.id, cg.weight);
                if let Some(b) = b {
                    acc(*b, cg.bias);
                }
            }
            Op::ConvTranspose2d { x, w, b, stride } => {
                let cg = conv::conv_transpose2d_backward(x.value(), w.value(), g, *stride, true)?;
                acc(x.id, cg.input.expect("input grad requested"));
                acc(w.id, cg.weight);
                if let Some(b) = b {
                    acc(*b, cg.bias);
                }
            }
            Op::Linear { x, w, b } => {
                let lg = ops::linear_backward(x.value(), w.value(), g)?;
                acc(x.id, lg.input);
                acc(w.id, lg.weight);
                if let Some(b) = b {
                    acc(*b, lg.bias);
                }
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let lg = ops::layer_norm_backward(cache, gamma.value(), g);
                acc(*x, lg.input);
                acc(gamma.id, lg.gamma);
                acc(*beta, lg.beta);
            }
            Op::Softmax { x, y } => acc(*x, ops::softmax_backward(y, g)),
            Op::Gelu { x } => {
                let mut dx = ops::gelu_backward(x.value(), g);
                if self.fault == Some(Fault::NegateGeluGrad) {
                    dx = dx.map(|v| -v);
                }
                acc(x.id, dx);
            }
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddBroadcast { a, b, b_dims } => {
                acc(*a, g.clone());
                acc(*b, shape::reduce_to_suffix(g, b_dims));
            }
            Op::Scale { x, s } => acc(*x, g.map(|v| v * *s)),
            Op::Permute { x, perm } => acc(*x, shape::permute(g, &shape::inverse_permutation(perm))?),
            Op::Reshape { x, dims } => acc(*x, g.clone().reshape(dims)?),
            Op::Concat { xs, axis, sizes } => {
                for (id, part) in xs.iter().zip(shape::split(g, *axis, sizes)?) {
                    acc(*id, part);
                }
            }
            Op::Pad { x, h, w } => acc(*x, shape::crop_top_left(g, *h, *w)?),
            Op::Crop { x, dims } => {
                let nd = dims.len();
                acc(*x, shape::pad_bottom_right(g, dims[nd - 2], dims[nd - 1])?)
            }
            Op::Bmm { a, b, trans_b } => {
                let (da, db) = shape::bmm_backward(a.value(), b.value(), *trans_b, g)?;
                acc(a.id, da);
                acc(b.id, db);
            }
            Op::Gather { table, table_dims, index } => {
                acc(*table, shape::gather_pairs_backward(table_dims, index, g));
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                acc(*x, weights.map(|w| w * s));
            }
            Op::Mse { pred, target } => {
                let n = pred.value().numel() as f64;
                let k = g.data()[0] * T::of(2.0 / n);
                let mut d = pred.value().clone();
                for (v, &t) in d.data_mut().iter_mut().zip(target.value().data()) {
                    *v = (*v - t) * k;
                }
                acc(target.id, d.map(|v| -v));
                acc(pred.id, d);
            }
        }
        Ok(())
    }
}

/// Result of a backward pass.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to any value on the tape; `None` when the value
    /// did not influence the output.
    pub fn wrt(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients, summed over every use of the same name.
    /// Parameters that did not reach the output get zero gradients.
    pub fn params(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (name, id) in &self.params {
            let Some(Some(g)) = self.grads.get(*id) else {
                continue;
            };
            match out.get_mut(name) {
                Some(e) => e.add_assign(g),
                None => {
                    out.insert(name.clone(), g.clone());
                }
            }
        }
        out
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_forward() {
        let tape = Tape::<f32>::new();
        let v = Var {
            id: 0,
            value: Rc::new(Tensor::scalar(1.0)),
        };
        assert!(matches!(tape.backward(&v), Err(Error::State(_))));
        let mut inf = Tape::<f32>::inference();
        let x = inf.constant(Tensor::full(&[2], 1.0));
        let s = inf.sum(&x);
        assert!(matches!(inf.backward(&s), Err(Error::State(_))));
    }

    #[test]
    fn conv_bias_grad_counts_outputs() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 1, 4, 4], |i| i as f32 * 0.1));
        let w = tape.param("w", Tensor::full(&[3, 1, 3, 3], 0.2));
        let b = tape.param("b", Tensor::zeros(&[3]));
        let y = tape.conv2d(&x, &w, Some(&b), ConvSpec::new(1, 3, 3, 2, 1)).unwrap();
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap().params();
        // 2 images × 2×2 outputs per channel
        assert_eq!(grads["b"].data(), &[8.0, 8.0, 8.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::from_fn(&[3, 5], |i| (i as f64).sin() * 3.0));
        let y = tape.softmax(&x);
        let loss = tape.sum(&y);
        let g = tape.backward(&loss).unwrap();
        assert!(g.wrt(&x).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn reused_param_accumulates() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", Tensor::full(&[2], 3.0));
        let a2 = tape.param("a", Tensor::full(&[2], 3.0));
        let s = tape.add(&a, &a2).unwrap();
        let loss = tape.sum(&s);
        let g = tape.backward(&loss).unwrap().params();
        assert_eq!(g["a"].data(), &[2.0, 2.0]);
    }

    #[test]
    fn mse_gradient_formula() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", Tensor::from_vec(&[4], vec![1.0, 2.0, 0.0, -1.0]).unwrap());
        let t = tape.constant(Tensor::from_vec(&[4], vec![0.5, 2.0, 1.0, -1.0]).unwrap());
        let l = tape.mse(&p, &t).unwrap();
        assert!((l.value().data()[0] - (0.25 + 1.0) / 4.0).abs() < 1e-12);
        let g = tape.backward(&l).unwrap().params();
        assert_eq!(g["p"].data(), &[0.25, 0.0, -0.5, 0.0]);
    }
}
