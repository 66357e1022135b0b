use log::info;

use crate::error::{Error, Result};
use crate::nn::params::{ParamKind, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    /// Zero-mean normal weights with standard deviation `sqrt(2 / fan_in)`.
    #[default]
    HeNormal,
    /// He-normal, then `+1` on the centre tap `[o, o, k/2, k/2]` of every
    /// convolution with equal input and output channels, which makes the
    /// layer start out as `conv(x) + x`.
    ResidualEquivalent,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he_normal" => Ok(InitScheme::HeNormal),
            "residual_equivalent" => Ok(InitScheme::ResidualEquivalent),
            other => Err(Error::InvalidArgument(format!(
                "unknown init scheme `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::HeNormal => "he_normal",
            InitScheme::ResidualEquivalent => "residual_equivalent",
        })
    }
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Initialises every parameter of `store` in registration order.
///
/// Kernel-shaped parameters get He-normal values. Control modules start with
/// small weights and a bias drawn from `N(0, 1/E)`, so each output channel
/// begins with its own random mix of the candidates at He scale. Plain
/// biases start at zero.
///
/// Returns one notice per layer the residual-equivalent step had to skip.
pub fn init_params<T: Element>(
    store: &mut ParamStore<T>,
    scheme: InitScheme,
    rng: &mut Rng,
) -> Result<Vec<String>> {
    let mut notices = Vec::new();
    for (name, p) in store.iter_mut() {
        let shape = p.value.shape().to_vec();
        p.value = match p.kind {
            ParamKind::ConvWeight => {
                let mut w = rng.normal(&shape, 0.0, he_std(shape[1] * shape[2] * shape[3]))?;
                if scheme == InitScheme::ResidualEquivalent {
                    if let Err(why) = add_identity_taps(&mut w) {
                        notices.push(format!("{name}: {why}"));
                    }
                }
                w
            }
            ParamKind::KernelBasis => {
                if scheme == InitScheme::ResidualEquivalent {
                    notices.push(format!(
                        "{name}: kernel bases are shared across output channels, no identity tap"
                    ));
                }
                rng.normal(&shape, 0.0, he_std(shape[1] * shape[2] * shape[3]))?
            }
            ParamKind::DynamicBases { c_in } => {
                if scheme == InitScheme::ResidualEquivalent {
                    notices.push(format!(
                        "{name}: dynamic bases are mixed by learned weights, no identity tap"
                    ));
                }
                rng.normal(&shape, 0.0, he_std(c_in * shape[2] * shape[3]))?
            }
            ParamKind::ControlWeight { num_bases } => {
                rng.normal(&shape, 0.0, (1.0 / (shape[1] * num_bases) as f64).sqrt())?
            }
            ParamKind::ControlBias { num_bases } => {
                rng.normal(&shape, 0.0, (1.0 / num_bases as f64).sqrt())?
            }
            ParamKind::Bias => Tensor::zeros(&shape)?,
        };
    }
    for n in &notices {
        info!("residual-equivalent init skipped {n}");
    }
    Ok(notices)
}

/// Adds 1 to the centre tap `[o, o, k/2, k/2]` of a square-channel kernel.
pub fn add_identity_taps<T: Element>(w: &mut Tensor<T>) -> std::result::Result<(), String> {
    let [c_out, c_in, kh, kw] = w.dims4().map_err(|e| e.to_string())?;
    if c_out != c_in {
        return Err(format!(
            "identity tap undefined for {c_in} -> {c_out} channels"
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(format!("even kernel {kh}x{kw} has no centre tap"));
    }
    let data = w.data_mut();
    for o in 0..c_out {
        data[((o * c_in + o) * kh + kh / 2) * kw + kw / 2] += T::one();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvLayer;

    #[test]
    fn identity_tap_on_zero_weight_is_identity_map() {
        let layer = ConvLayer::new("c", 2, 2, 3, false);
        let mut store = ParamStore::<f64>::new();
        layer.register(&mut store).unwrap();
        let mut w = store.value("c.weight").unwrap().clone();
        add_identity_taps(&mut w).unwrap();
        store.set_value("c.weight", w).unwrap();
        let x = Rng::new(8).normal(&[2, 2, 5, 6], 0.0, 1.0).unwrap();
        assert_eq!(layer.forward(&store, &x).unwrap(), x);
    }

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        ConvLayer::new("sq", 4, 4, 3, true)
            .register(&mut s)
            .unwrap();
        ConvLayer::new("wide", 4, 8, 3, false)
            .register(&mut s)
            .unwrap();
        s
    }

    #[test]
    fn he_normal_reproducible() {
        let mut a = store();
        let mut b = store();
        init_params(&mut a, InitScheme::HeNormal, &mut Rng::new(5)).unwrap();
        init_params(&mut b, InitScheme::HeNormal, &mut Rng::new(5)).unwrap();
        for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
            assert_eq!(pa.value, pb.value);
        }
        assert_eq!(a.value("sq.bias").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn residual_equivalent_only_touches_centre_diagonal() {
        let mut he = store();
        let mut re = store();
        init_params(&mut he, InitScheme::HeNormal, &mut Rng::new(5)).unwrap();
        let notices =
            init_params(&mut re, InitScheme::ResidualEquivalent, &mut Rng::new(5)).unwrap();
        assert_eq!(notices.len(), 1);
        assert!(notices[0].starts_with("wide.weight"));
        assert_eq!(
            he.value("wide.weight").unwrap(),
            re.value("wide.weight").unwrap()
        );

        let a = he.value("sq.weight").unwrap().data();
        let b = re.value("sq.weight").unwrap().data();
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            let (o, c, tap) = (i / 36, (i / 9) % 4, i % 9);
            if o == c && tap == 4 {
                assert_eq!(y, x + 1.0);
            } else {
                assert_eq!(x, y);
            }
        }
    }
}
