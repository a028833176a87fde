//! Named parameter storage shared by every layer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Parameters registered on a tape, keyed by hierarchical name.
pub type VarMap<T> = BTreeMap<String, Var<T>>;

pub(crate) fn lookup<'a, T: Real>(vars: &'a VarMap<T>, name: &str) -> Result<&'a Var<T>> {
    vars.get(name)
        .ok_or_else(|| Error::State(format!("parameter `{name}` is not registered")))
}

/// Initialization scheme for a declared parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    FanIn(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    pub fn new(name: impl Into<String>, dims: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            dims: dims.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// One trainable tensor with its gradient accumulator and AdamW moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let z = Tensor::zeros(value.dims());
        Self {
            grad: z.clone(),
            m: z.clone(),
            v: z,
            value,
        }
    }
}

/// Parameter tensors plus gradient and optimizer slots, iterated in name
/// order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: BTreeMap<String, Param<T>>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    /// Builds every declared parameter, drawing random inits in declaration
    /// order from `seed`.
    pub fn from_decls(decls: &[ParamDecl], seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let mut store = Self::new();
        for d in decls {
            let value = match d.init {
                Init::Zeros => Tensor::zeros(&d.dims),
                Init::Ones => Tensor::full(&d.dims, T::one()),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Tensor::from_fn(&d.dims, |_| T::of(rng.uniform(-bound, bound)))
                }
            };
            store.insert(&d.name, value)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Values only, e.g. for gradient checking.
    pub fn values(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }

    /// Registers every parameter on `tape`.
    pub fn register(&self, tape: &mut Tape<T>) -> VarMap<T> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), tape.param(k, p.value.clone())))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds gradients from a backward pass; every name must be known.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::State(format!("gradient for unknown parameter `{name}`")))?;
            if p.grad.dims() != g.dims() {
                return Err(Error::shape("accumulate_grads", format!("{name}: {:?} vs {:?}", p.grad.dims(), g.dims())));
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    /// Overwrites every value with a copy from `other` (names must match).
    pub fn set_values(&mut self, values: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, v) in values {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))?;
            if p.value.dims() != v.dims() {
                return Err(Error::shape("set_values", format!("{name}: {:?} vs {:?}", p.value.dims(), v.dims())));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                            m: p.m.cast(),
                            v: p.v.cast(),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_schemes_and_duplicates() {
        let decls = vec![
            ParamDecl::new("a.w", &[4, 9], Init::FanIn(9)),
            ParamDecl::new("a.b", &[4], Init::Zeros),
            ParamDecl::new("ln.g", &[4], Init::Ones),
        ];
        let s = ParamStore::<f32>::from_decls(&decls, 1).unwrap();
        assert_eq!(s.numel(), 36 + 8);
        let w = s.value("a.w").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(w.max_abs() > 0.0);
        assert_eq!(s.value("ln.g").unwrap().data(), &[1.0; 4]);
        let again = ParamStore::<f32>::from_decls(&decls, 1).unwrap();
        assert_eq!(s, again);
        let dup = vec![decls[0].clone(), decls[0].clone()];
        assert!(ParamStore::<f32>::from_decls(&dup, 1).is_err());
    }
}
