use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Element, Tensor};

/// Mean of `sqrt((pred - target)^2 + eps^2)` and its gradient with respect
/// to `pred`.
pub fn charbonnier_loss<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    eps: f64,
) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "charbonnier_loss",
            target.shape(),
            pred.shape(),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "charbonnier eps must be positive, got {eps}"
        )));
    }
    let n = pred.len() as f64;
    let eps2 = eps * eps;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        let r = (d * d + eps2).sqrt();
        sum += r;
        grad.push(T::from_f64(d / r / n));
    }
    let loss = sum / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "charbonnier_loss",
        });
    }
    Ok((loss, Tensor::new(pred.shape(), grad)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments for every parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub(crate) step: u64,
    pub(crate) moments: Vec<(String, Tensor<T>, Tensor<T>)>,
}

impl<T: Element> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Result<Self> {
        let moments = store
            .iter()
            .map(|(name, p)| {
                Ok((
                    name.to_string(),
                    Tensor::zeros(p.value.shape())?,
                    Tensor::zeros(p.value.shape())?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(AdamState { step: 0, moments })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `(name, m, v)` per parameter.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<T>, &Tensor<T>)> {
        self.moments.iter().map(|(n, m, v)| (n.as_str(), m, v))
    }

    pub(crate) fn from_parts(step: u64, moments: Vec<(String, Tensor<T>, Tensor<T>)>) -> Self {
        AdamState { step, moments }
    }
}

/// One bias-corrected Adam update of every parameter, then clears the
/// gradients. A store without parameters is a no-op apart from the step
/// counter.
pub fn adam_step<T: Element>(
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    if state.moments.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer tracks {} parameters, store has {}",
            state.moments.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for ((name, p), (mname, m, v)) in store.iter_mut().zip(state.moments.iter_mut()) {
        if name != mname || p.value.shape() != m.shape() {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                got: m.shape().to_vec(),
            });
        }
        let values = p.value.data_mut();
        let grads = p.grad.data_mut();
        for (((w, g), mi), vi) in values
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gf = g.to_f64();
            let mf = hp.beta1 * mi.to_f64() + (1.0 - hp.beta1) * gf;
            let vf = hp.beta2 * vi.to_f64() + (1.0 - hp.beta2) * gf * gf;
            *mi = T::from_f64(mf);
            *vi = T::from_f64(vf);
            let update = lr * (mf / c1) / ((vf / c2).sqrt() + hp.eps);
            *w = T::from_f64(w.to_f64() - update);
            *g = T::zero();
        }
        p.value.ensure_finite("adam_step")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    const HP: AdamParams = AdamParams {
        beta1: 0.9,
        beta2: 0.9999,
        eps: 1e-8,
    };

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, &v) in values.iter().enumerate() {
            s.register(
                format!("p{i}"),
                Tensor::full(&[1], v).unwrap(),
                ParamKind::Bias,
            )
            .unwrap();
        }
        s
    }

    #[test]
    fn charbonnier_cases() {
        let a = Tensor::new(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (l, g) = charbonnier_loss(&a, &a, 1e-3).unwrap();
        assert!((l - 1e-3).abs() < 1e-18);
        assert_eq!(g.max_abs(), 0.0);
        let p = Tensor::new(&[1], vec![3.0]).unwrap();
        let t = Tensor::new(&[1], vec![0.0]).unwrap();
        let (l, g) = charbonnier_loss(&p, &t, 1e-3).unwrap();
        assert!((l - (9.0f64 + 1e-6).sqrt()).abs() < 1e-15);
        assert!(g.data()[0] < 1.0 && g.data()[0] > 0.0);
        assert!(charbonnier_loss(&a, &p, 1e-3).is_err());
    }

    #[test]
    fn charbonnier_gradient_matches_finite_difference() {
        let p = Tensor::new(&[4], vec![0.3, -0.2, 0.0004, 1.5]).unwrap();
        let t = Tensor::new(&[4], vec![0.1, 0.1, 0.0, -0.5]).unwrap();
        let (_, g) = charbonnier_loss(&p, &t, 1e-3).unwrap();
        let num =
            crate::gradcheck::numeric_grad(&p, 1e-7, |x| charbonnier_loss(x, &t, 1e-3).unwrap().0);
        assert!(crate::gradcheck::max_rel_error(&g, &num, 1e-9) < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[0.5, -2.0]);
        let mut st = AdamState::new(&s).unwrap();
        adam_step(&mut s, &mut st, 0.1, HP).unwrap();
        assert_eq!(s.value("p0").unwrap().data(), &[0.5]);
        assert_eq!(s.value("p1").unwrap().data(), &[-2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[1.0]);
        let mut st = AdamState::new(&s).unwrap();
        s.accumulate_grad("p0", &Tensor::full(&[1], 1.0).unwrap())
            .unwrap();
        adam_step(&mut s, &mut st, 0.1, HP).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.value("p0").unwrap().data()[0] - expected).abs() < 1e-12);
        assert_eq!(s.grad("p0").unwrap().data(), &[0.0]);
    }

    #[test]
    fn equal_grads_equal_updates_and_sign_limit() {
        let mut s = store(&[0.0, 0.0, 0.0]);
        let mut st = AdamState::new(&s).unwrap();
        s.accumulate_grad("p0", &Tensor::full(&[1], 7.0).unwrap())
            .unwrap();
        s.accumulate_grad("p1", &Tensor::full(&[1], 7.0).unwrap())
            .unwrap();
        s.accumulate_grad("p2", &Tensor::full(&[1], -1e6).unwrap())
            .unwrap();
        adam_step(&mut s, &mut st, 0.01, HP).unwrap();
        let v = |n: &str| s.value(n).unwrap().data()[0];
        assert_eq!(v("p0"), v("p1"));
        assert!((v("p0") + 0.01).abs() < 1e-9);
        assert!((v("p2") - 0.01).abs() < 1e-9);
    }

    #[test]
    fn empty_store_is_noop() {
        let mut s = ParamStore::<f64>::new();
        let mut st = AdamState::new(&s).unwrap();
        adam_step(&mut s, &mut st, 0.1, HP).unwrap();
        assert_eq!(st.step(), 1);
    }
}
