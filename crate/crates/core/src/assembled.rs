//! Assembled convolution and its dynamic-convolution baseline.
//!
//! An assembled convolution builds a separate kernel for every sample in the
//! batch. A control module pools the input feature map and maps it through a
//! 1x1 convolution to `C_o * E` coefficients; output channel `j` of sample
//! `b` then uses the kernel `sum_e coeff[b, j, e] * basis[e]`, where `basis`
//! holds `E` candidate kernels of shape `[C_i, ks, ks]`. The assembly is one
//! matrix product, `[(B*C_o), E] x [E, (C_i*ks*ks)]`, and the per-sample
//! kernels are applied in a single grouped convolution by folding the batch
//! into the channel axis (`groups = B`).
//!
//! Dynamic convolution is the coarser scheme: one coefficient vector per
//! sample mixes `E` whole kernels of shape `[C_o, C_i, ks, ks]`. It is the
//! special case of assembly in which every output channel shares the same
//! coefficients.

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};
use crate::tensor::{conv2d, conv2d_grad, global_avg_pool_backward, Conv2dParams, Element, Tensor};

/// `E` candidate kernels, `[E, C_i, ks, ks]`.
#[derive(Clone, Copy, Debug)]
pub struct KernelBasis<'a, T> {
    tensor: &'a Tensor<T>,
}

impl<'a, T: Element> KernelBasis<'a, T> {
    pub fn new(tensor: &'a Tensor<T>) -> Result<Self> {
        tensor.dims4()?;
        Ok(KernelBasis { tensor })
    }

    pub fn num_bases(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &'a Tensor<T> {
        self.tensor
    }
}

/// Mixing weights `[B, C_o, E]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients<T> {
    tensor: Tensor<T>,
}

impl<T: Element> Coefficients<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::InvalidShape {
                shape: tensor.shape().to_vec(),
                reason: "coefficients must be [B, C_o, E]".into(),
            });
        }
        Ok(Coefficients { tensor })
    }

    pub fn batch(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn num_bases(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }
}

/// Weights of a control module: a `[C_o * E, C_i, 1, 1]` convolution and its
/// optional bias.
#[derive(Clone, Copy, Debug)]
pub struct ControlParams<'a, T> {
    pub weight: &'a Tensor<T>,
    pub bias: Option<&'a Tensor<T>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoeffNormalization {
    #[default]
    None,
    /// Softmax over the `E` axis.
    Softmax,
}

impl std::str::FromStr for CoeffNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CoeffNormalization::None),
            "softmax" => Ok(CoeffNormalization::Softmax),
            other => Err(Error::InvalidArgument(format!(
                "unknown coefficient normalization `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for CoeffNormalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CoeffNormalization::None => "none",
            CoeffNormalization::Softmax => "softmax",
        })
    }
}

/// Values kept from [`control_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ControlCache<T> {
    input_shape: Vec<usize>,
    pooled: Tensor<T>,
    normalization: CoeffNormalization,
    /// Post-normalisation coefficients, needed by the softmax gradient.
    coeff: Tensor<T>,
}

/// Pools `f_in` and maps it to `[B, c_out, E]` coefficients.
pub fn control_forward<T: Element>(
    f_in: &Tensor<T>,
    params: ControlParams<'_, T>,
    c_out: usize,
    num_bases: usize,
    normalization: CoeffNormalization,
) -> Result<(Coefficients<T>, ControlCache<T>)> {
    let [b, c_in, _, _] = f_in.dims4()?;
    let expected = [c_out * num_bases, c_in, 1, 1];
    if params.weight.shape() != expected {
        return Err(Error::shape(
            "control_forward",
            &expected,
            params.weight.shape(),
        ));
    }
    let pooled = f_in.global_avg_pool()?;
    let logits = conv2d(&pooled, params.weight, params.bias, Conv2dParams::default())?;
    let mut coeff = logits.into_reshape(&[b, c_out, num_bases])?;
    if normalization == CoeffNormalization::Softmax {
        softmax_rows(&mut coeff, num_bases);
    }
    let cache = ControlCache {
        input_shape: f_in.shape().to_vec(),
        pooled,
        normalization,
        coeff: coeff.clone(),
    };
    Ok((Coefficients::new(coeff)?, cache))
}

fn softmax_rows<T: Element>(t: &mut Tensor<T>, row: usize) {
    for r in t.data_mut().chunks_exact_mut(row) {
        let m = r.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v = *v / sum;
        }
    }
}

pub struct ControlGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn control_backward<T: Element>(
    cache: &ControlCache<T>,
    params: ControlParams<'_, T>,
    grad_coeff: &Tensor<T>,
) -> Result<ControlGrads<T>> {
    if grad_coeff.shape() != cache.coeff.shape() {
        return Err(Error::shape(
            "control_backward",
            cache.coeff.shape(),
            grad_coeff.shape(),
        ));
    }
    let row = cache.coeff.shape()[2];
    let mut g_logits = grad_coeff.clone();
    if cache.normalization == CoeffNormalization::Softmax {
        for (g, p) in g_logits
            .data_mut()
            .chunks_exact_mut(row)
            .zip(cache.coeff.data().chunks_exact(row))
        {
            let dot = g
                .iter()
                .zip(p)
                .fold(T::zero(), |acc, (&gi, &pi)| acc + gi * pi);
            for (gi, &pi) in g.iter_mut().zip(p) {
                *gi = pi * (*gi - dot);
            }
        }
    }
    let [b, c_in, _, _] = cache.pooled.dims4()?;
    let g_logits = g_logits.into_reshape(&[b, row * cache.coeff.shape()[1], 1, 1])?;
    let grads = conv2d_grad(
        &cache.pooled,
        params.weight,
        &g_logits,
        Conv2dParams::default(),
    )?;
    debug_assert_eq!(grads.input.shape(), [b, c_in, 1, 1]);
    Ok(ControlGrads {
        input: global_avg_pool_backward(&grads.input, &cache.input_shape)?,
        weight: grads.weight,
        bias: grads.bias,
    })
}

/// `K[b, j] = sum_e coeff[b, j, e] * basis[e]`, computed as one matmul.
/// Returns `[B, C_o, C_i, ks, ks]` flattened to `[B * C_o, C_i, ks, ks]`.
pub fn assemble_kernels<T: Element>(
    coeff: &Coefficients<T>,
    basis: KernelBasis<'_, T>,
) -> Result<Tensor<T>> {
    let (b, co, e) = (coeff.batch(), coeff.c_out(), coeff.num_bases());
    if e != basis.num_bases() {
        return Err(Error::shape("assemble_kernels", &[basis.num_bases()], &[e]));
    }
    let (ci, ks) = (basis.c_in(), basis.kernel_size());
    let lhs = coeff.tensor().reshape(&[b * co, e])?;
    let rhs = basis.tensor().reshape(&[e, ci * ks * ks])?;
    lhs.matmul(&rhs)?.into_reshape(&[b * co, ci, ks, ks])
}

/// Gradients of [`assemble_kernels`] with respect to the coefficients
/// (`[B, C_o, E]`) and the basis (`[E, C_i, ks, ks]`).
pub fn assemble_kernels_backward<T: Element>(
    coeff: &Coefficients<T>,
    basis: KernelBasis<'_, T>,
    grad_kernels: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, co, e) = (coeff.batch(), coeff.c_out(), coeff.num_bases());
    let (ci, ks) = (basis.c_in(), basis.kernel_size());
    let n = ci * ks * ks;
    if grad_kernels.shape() != [b * co, ci, ks, ks] {
        return Err(Error::shape(
            "assemble_kernels_backward",
            &[b * co, ci, ks, ks],
            grad_kernels.shape(),
        ));
    }
    let gk = grad_kernels.reshape(&[b * co, n])?;
    let g_coeff = gk.matmul(&basis.tensor().reshape(&[e, n])?.transpose2d()?)?;
    let g_basis = coeff
        .tensor()
        .reshape(&[b * co, e])?
        .transpose2d()?
        .matmul(&gk)?;
    Ok((
        g_coeff.into_reshape(&[b, co, e])?,
        g_basis.into_reshape(basis.tensor().shape())?,
    ))
}

fn per_sample_geometry<T: Element>(
    f_in: &Tensor<T>,
    kernels: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let [b, ci, _, _] = f_in.dims4()?;
    let [bco, kci, kh, kw] = kernels.dims4()?;
    if bco % b != 0 || kci != ci || kh != kw {
        return Err(Error::shape(
            "assembled_conv",
            &[b, ci, kh, kh],
            kernels.shape(),
        ));
    }
    Ok((b, ci, bco / b, kh))
}

fn tiled_bias<T: Element>(bias: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(bias.len() * batch);
    for _ in 0..batch {
        data.extend_from_slice(bias.data());
    }
    Tensor::new(&[data.len()], data)
}

/// Convolves every sample with its own kernels (`[B * C_o, C_i, ks, ks]`)
/// using one grouped convolution with `groups = B` and padding `ks / 2`.
pub fn assembled_conv_forward<T: Element>(
    f_in: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (b, ci, co, ks) = per_sample_geometry(f_in, kernels)?;
    let [_, _, h, w] = f_in.dims4()?;
    let folded = f_in.reshape(&[1, b * ci, h, w])?;
    let bias = bias.map(|t| tiled_bias(t, b)).transpose()?;
    let out = conv2d(
        &folded,
        kernels,
        bias.as_ref(),
        Conv2dParams::same(ks).with_groups(b),
    )?;
    out.into_reshape(&[b, co, h, w])
}

/// Gradients of [`assembled_conv_forward`]: `(input, kernels, bias)`, with
/// the bias gradient summed over the batch.
pub fn assembled_conv_backward<T: Element>(
    f_in: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, ci, co, ks) = per_sample_geometry(f_in, kernels)?;
    let [_, _, h, w] = f_in.dims4()?;
    let folded = f_in.reshape(&[1, b * ci, h, w])?;
    let g_out = grad_out.reshape(&[1, b * co, h, w])?;
    let g = conv2d_grad(
        &folded,
        kernels,
        &g_out,
        Conv2dParams::same(ks).with_groups(b),
    )?;
    let mut g_bias = vec![T::zero(); co];
    for chunk in g.bias.data().chunks_exact(co) {
        for (acc, &v) in g_bias.iter_mut().zip(chunk) {
            *acc += v;
        }
    }
    Ok((
        g.input.into_reshape(f_in.shape())?,
        g.weight,
        Tensor::new(&[co], g_bias)?,
    ))
}

/// Whole-kernel mixing: `K[b] = sum_e coeff_vec[b, e] * bases[e]` with
/// `bases: [E, C_o, C_i, ks, ks]` passed flattened as `[E, C_o * C_i * ks * ks]`
/// or in full rank via `bases_shape`. Returns `[B * C_o, C_i, ks, ks]`.
pub fn dynamic_assemble<T: Element>(
    coeff_vec: &Tensor<T>,
    bases: &Tensor<T>,
    bases_shape: [usize; 5],
) -> Result<Tensor<T>> {
    let [e, co, ci, kh, kw] = bases_shape;
    let b = match *coeff_vec.shape() {
        [b, ce] if ce == e => b,
        _ => {
            return Err(Error::shape(
                "dynamic_assemble",
                &[coeff_vec.shape()[0], e],
                coeff_vec.shape(),
            ))
        }
    };
    if bases.len() != e * co * ci * kh * kw {
        return Err(Error::shape(
            "dynamic_assemble",
            &[e, co * ci * kh * kw],
            bases.shape(),
        ));
    }
    let flat = bases.reshape(&[e, co * ci * kh * kw])?;
    coeff_vec.matmul(&flat)?.into_reshape(&[b * co, ci, kh, kw])
}

/// Gradients of [`dynamic_assemble`]: `(coeff_vec [B, E], bases [E, ...])`,
/// the latter in the flattened `[E, C_o * C_i * ks * ks]` layout.
pub fn dynamic_assemble_backward<T: Element>(
    coeff_vec: &Tensor<T>,
    bases: &Tensor<T>,
    bases_shape: [usize; 5],
    grad_kernels: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [e, co, ci, kh, kw] = bases_shape;
    let b = coeff_vec.shape()[0];
    let n = co * ci * kh * kw;
    if grad_kernels.len() != b * n {
        return Err(Error::shape(
            "dynamic_assemble_backward",
            &[b * co, ci, kh, kw],
            grad_kernels.shape(),
        ));
    }
    let gk = grad_kernels.reshape(&[b, n])?;
    let flat = bases.reshape(&[e, n])?;
    let g_coeff = gk.matmul(&flat.transpose2d()?)?;
    let g_bases = coeff_vec.transpose2d()?.matmul(&gk)?;
    Ok((g_coeff, g_bases))
}

/// The full gradient of one assembled convolution driven by its own control
/// module: `f_out = conv(f_in; assemble(control(f_in), basis))`.
pub struct AssembledGrads<T> {
    pub input: Tensor<T>,
    pub basis: Tensor<T>,
    pub control: ControlGrads<T>,
}

pub fn assembled_backward<T: Element>(
    f_in: &Tensor<T>,
    kernels: &Tensor<T>,
    coeff: &Coefficients<T>,
    basis: KernelBasis<'_, T>,
    control: ControlParams<'_, T>,
    control_cache: &ControlCache<T>,
    grad_out: &Tensor<T>,
) -> Result<AssembledGrads<T>> {
    let (g_in_conv, g_kernels, _) = assembled_conv_backward(f_in, kernels, grad_out)?;
    let (g_coeff, g_basis) = assemble_kernels_backward(coeff, basis, &g_kernels)?;
    let control = control_backward(control_cache, control, &g_coeff)?;
    Ok(AssembledGrads {
        input: g_in_conv.add(&control.input)?,
        basis: g_basis,
        control,
    })
}

/// Parameter layout of a control module in a [`ParamStore`]:
/// `{name}.weight` (`[C_o * E, C_i, 1, 1]`) and optionally `{name}.bias`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlModule {
    pub name: String,
    pub c_in: usize,
    /// Number of coefficient rows; 1 for dynamic convolution.
    pub c_out: usize,
    pub num_bases: usize,
    pub bias: bool,
    pub normalization: CoeffNormalization,
}

impl ControlModule {
    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn register<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let kind_e = self.num_bases;
        store.register(
            self.weight_name(),
            Tensor::zeros(&[self.c_out * self.num_bases, self.c_in, 1, 1])?,
            ParamKind::ControlWeight { num_bases: kind_e },
        )?;
        if self.bias {
            store.register(
                self.bias_name(),
                Tensor::zeros(&[self.c_out * self.num_bases])?,
                ParamKind::ControlBias { num_bases: kind_e },
            )?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let out = self.c_out * self.num_bases;
        out * self.c_in + if self.bias { out } else { 0 }
    }

    pub fn params<'a, T: Element>(&self, store: &'a ParamStore<T>) -> Result<ControlParams<'a, T>> {
        Ok(ControlParams {
            weight: store.value(&self.weight_name())?,
            bias: if self.bias {
                Some(store.value(&self.bias_name())?)
            } else {
                None
            },
        })
    }

    pub fn forward<T: Element>(
        &self,
        store: &ParamStore<T>,
        f_in: &Tensor<T>,
    ) -> Result<(Coefficients<T>, ControlCache<T>)> {
        control_forward(
            f_in,
            self.params(store)?,
            self.c_out,
            self.num_bases,
            self.normalization,
        )
    }

    /// Accumulates parameter gradients and returns the gradient for `f_in`.
    pub fn backward<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        cache: &ControlCache<T>,
        grad_coeff: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g = control_backward(cache, self.params(store)?, grad_coeff)?;
        store.accumulate_grad(&self.weight_name(), &g.weight)?;
        if self.bias {
            store.accumulate_grad(&self.bias_name(), &g.bias)?;
        }
        Ok(g.input)
    }
}

/// How an adaptive convolution turns coefficients into kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixingMode {
    /// Per-output-channel coefficients over `[E, C_i, ks, ks]` bases.
    Assembled,
    /// One coefficient vector over `[E, C_o, C_i, ks, ks]` bases.
    Dynamic,
}

/// A convolution whose kernels are mixed per sample from learned bases.
/// Parameters: `{name}.basis` (assembled) or `{name}.bases` (dynamic), and
/// optionally `{name}.bias`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveConv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub num_bases: usize,
    pub ks: usize,
    pub bias: bool,
    pub mode: MixingMode,
}

/// Forward values of an [`AdaptiveConv`] kept for its backward pass.
#[derive(Clone, Debug)]
pub struct AdaptiveCache<T> {
    kernels: Tensor<T>,
}

impl AdaptiveConv {
    pub fn basis_name(&self) -> String {
        match self.mode {
            MixingMode::Assembled => format!("{}.basis", self.name),
            MixingMode::Dynamic => format!("{}.bases", self.name),
        }
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    fn dynamic_shape(&self) -> [usize; 5] {
        [self.num_bases, self.c_out, self.c_in, self.ks, self.ks]
    }

    pub fn register<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        match self.mode {
            MixingMode::Assembled => store.register(
                self.basis_name(),
                Tensor::zeros(&[self.num_bases, self.c_in, self.ks, self.ks])?,
                ParamKind::KernelBasis,
            )?,
            MixingMode::Dynamic => {
                // Rank is capped at 4, so the fifth axis is folded into the second.
                let [e, co, ci, kh, kw] = self.dynamic_shape();
                store.register(
                    self.basis_name(),
                    Tensor::zeros(&[e, co * ci, kh, kw])?,
                    ParamKind::DynamicBases { c_in: ci },
                )?
            }
        }
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
        let per_base = match self.mode {
            MixingMode::Assembled => self.c_in * self.ks * self.ks,
            MixingMode::Dynamic => self.c_out * self.c_in * self.ks * self.ks,
        };
        self.num_bases * per_base + if self.bias { self.c_out } else { 0 }
    }

    /// Builds the per-sample kernels `[B * C_o, C_i, ks, ks]`.
    pub fn kernels<T: Element>(
        &self,
        store: &ParamStore<T>,
        coeff: &Coefficients<T>,
    ) -> Result<Tensor<T>> {
        let bases = store.value(&self.basis_name())?;
        match self.mode {
            MixingMode::Assembled => assemble_kernels(coeff, KernelBasis::new(bases)?),
            MixingMode::Dynamic => {
                let vec = coeff
                    .tensor()
                    .reshape(&[coeff.batch(), coeff.c_out() * coeff.num_bases()])?;
                dynamic_assemble(&vec, bases, self.dynamic_shape())
            }
        }
    }

    pub fn forward<T: Element>(
        &self,
        store: &ParamStore<T>,
        f_in: &Tensor<T>,
        coeff: &Coefficients<T>,
    ) -> Result<(Tensor<T>, AdaptiveCache<T>)> {
        let kernels = self.kernels(store, coeff)?;
        let bias = if self.bias {
            Some(store.value(&self.bias_name())?)
        } else {
            None
        };
        let out = assembled_conv_forward(f_in, &kernels, bias)?;
        Ok((out, AdaptiveCache { kernels }))
    }

    /// Accumulates basis/bias gradients; returns `(grad f_in, grad coeff)`.
    pub fn backward<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        f_in: &Tensor<T>,
        coeff: &Coefficients<T>,
        cache: &AdaptiveCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (g_in, g_kernels, g_bias) = assembled_conv_backward(f_in, &cache.kernels, grad_out)?;
        let bases = store.value(&self.basis_name())?;
        let (g_coeff, g_bases) = match self.mode {
            MixingMode::Assembled => {
                assemble_kernels_backward(coeff, KernelBasis::new(bases)?, &g_kernels)?
            }
            MixingMode::Dynamic => {
                let vec = coeff
                    .tensor()
                    .reshape(&[coeff.batch(), coeff.num_bases()])?;
                let (gc, gb) =
                    dynamic_assemble_backward(&vec, bases, self.dynamic_shape(), &g_kernels)?;
                (
                    gc.into_reshape(coeff.tensor().shape())?,
                    gb.into_reshape(bases.shape())?,
                )
            }
        };
        store.accumulate_grad(&self.basis_name(), &g_bases)?;
        if self.bias {
            store.accumulate_grad(&self.bias_name(), &g_bias)?;
        }
        Ok((g_in, g_coeff))
    }
}
