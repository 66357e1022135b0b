use crate::error::Result;
use crate::nn::params::{ParamKind, ParamStore};
use crate::tensor::{conv2d, conv2d_grad, Conv2dParams, Element, Tensor};

/// A same-resolution `k x k` convolution whose weight (and optional bias)
/// live in a [`ParamStore`] under `{name}.weight` / `{name}.bias`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub bias: bool,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, bias: bool) -> Self {
        ConvLayer {
            name: name.into(),
            c_in,
            c_out,
            k,
            bias,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Registers zero-valued parameters; see [`crate::nn::init_params`].
    pub fn register<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.register(
            self.weight_name(),
            Tensor::zeros(&[self.c_out, self.c_in, self.k, self.k])?,
            ParamKind::ConvWeight,
        )?;
        if self.bias {
            store.register(
                self.bias_name(),
                Tensor::zeros(&[self.c_out])?,
                ParamKind::Bias,
            )?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k + if self.bias { self.c_out } else { 0 }
    }

    fn params(&self) -> Conv2dParams {
        Conv2dParams::same(self.k)
    }

    pub fn forward<T: Element>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = store.value(&self.weight_name())?;
        let b = if self.bias {
            Some(store.value(&self.bias_name())?)
        } else {
            None
        };
        conv2d(x, w, b, self.params())
    }

    /// Adds the parameter gradients into `store` and returns the gradient
    /// with respect to `x`.
    pub fn backward<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let grads = conv2d_grad(
            x,
            store.value(&self.weight_name())?,
            grad_out,
            self.params(),
        )?;
        store.accumulate_grad(&self.weight_name(), &grads.weight)?;
        if self.bias {
            store.accumulate_grad(&self.bias_name(), &grads.bias)?;
        }
        Ok(grads.input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::Rng;

    fn layer_with_store(bias: bool) -> (ConvLayer, ParamStore<f64>) {
        let layer = ConvLayer::new("c", 2, 3, 3, bias);
        let mut store = ParamStore::new();
        layer.register(&mut store).unwrap();
        let w = Rng::new(1).normal(&[3, 2, 3, 3], 0.0, 1.0).unwrap();
        store.set_value("c.weight", w).unwrap();
        (layer, store)
    }

    #[test]
    fn same_resolution() {
        let (layer, store) = layer_with_store(false);
        let x = Tensor::ones(&[2, 2, 5, 7]).unwrap();
        assert_eq!(layer.forward(&store, &x).unwrap().shape(), &[2, 3, 5, 7]);
    }

    #[test]
    fn disabled_bias_has_no_parameter() {
        let (layer, store) = layer_with_store(false);
        assert!(!store.contains("c.bias"));
        assert_eq!(store.num_scalars(), layer.num_params());
        let (layer_b, mut store_b) = layer_with_store(true);
        let x = Rng::new(2).normal(&[1, 2, 4, 4], 0.0, 1.0).unwrap();
        let before = layer_b.forward(&store_b, &x).unwrap();
        store_b
            .set_value("c.bias", Tensor::full(&[3], 0.5).unwrap())
            .unwrap();
        let after = layer_b.forward(&store_b, &x).unwrap();
        assert_ne!(before, after);
        // Without a bias the layer never reads a bias entry.
        assert_eq!(layer.forward(&store, &x).unwrap(), before);
    }

    #[test]
    fn unregistered_name() {
        let layer = ConvLayer::new("missing", 1, 1, 1, false);
        let store = ParamStore::<f64>::new();
        let x = Tensor::ones(&[1, 1, 2, 2]).unwrap();
        assert!(matches!(
            layer.forward(&store, &x),
            Err(Error::UnknownParam(_))
        ));
    }

    #[test]
    fn gradients_accumulate_across_passes() {
        let (layer, mut store) = layer_with_store(true);
        let mut rng = Rng::new(3);
        let x = rng.normal(&[1, 2, 4, 4], 0.0, 1.0).unwrap();
        let g = rng.normal(&[1, 3, 4, 4], 0.0, 1.0).unwrap();
        layer.backward(&mut store, &x, &g).unwrap();
        let once = store.grad("c.weight").unwrap().clone();
        let once_b = store.grad("c.bias").unwrap().clone();
        layer.backward(&mut store, &x, &g).unwrap();
        assert_eq!(store.grad("c.weight").unwrap(), &once.scale(2.0).unwrap());
        assert_eq!(store.grad("c.bias").unwrap(), &once_b.scale(2.0).unwrap());
    }
}
