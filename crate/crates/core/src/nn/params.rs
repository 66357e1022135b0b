use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// What a parameter is, which decides how it gets initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// `[C_o, C_i, k, k]` convolution weight.
    ConvWeight,
    /// `[E, C_i, k, k]` candidate kernels shared by every output channel.
    KernelBasis,
    /// Whole-kernel candidates of dynamic convolution, `[E, C_o, C_i, k, k]`
    /// stored as `[E, C_o * C_i, k, k]`.
    DynamicBases {
        c_in: usize,
    },
    /// `[C_o * E, C_i, 1, 1]` weight of a control module.
    ControlWeight {
        num_bases: usize,
    },
    /// Bias of a control module.
    ControlBias {
        num_bases: usize,
    },
    Bias,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
}

/// Named learnable tensors with paired gradient buffers, in registration
/// order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        kind: ParamKind,
    ) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let grad = Tensor::zeros(value.shape())?;
        self.params.insert(name, Param { value, grad, kind });
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.param(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.param(name)?.grad)
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self.param_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        self.param_mut(name)?.grad.add_assign(grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn max_abs_value(&self) -> T {
        self.params
            .values()
            .fold(T::zero(), |m, p| m.max(p.value.max_abs()))
    }

    pub fn cast<U: Element>(&self) -> Result<ParamStore<U>> {
        let mut out = ParamStore::new();
        for (name, p) in self.iter() {
            out.register(name, p.value.cast()?, p.kind)?;
        }
        Ok(out)
    }
}
