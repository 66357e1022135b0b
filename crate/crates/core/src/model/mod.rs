//! The AsConvSR network.
//!
//! ```text
//! x ─ unshuffle(r) ─ head 3x3 ─ act ─ [block]×N ─ tail 3x3 ─ shuffle(r) ─(+)─ shuffle(2) ─ y
//!  └──────────────────── repeat_upscale(2) ──────────────────────────────┘
//! ```
//!
//! A block is three 3x3 convolutions `C -> C` with the activation between
//! them. In assembled or dynamic mode the convolutions mix their kernels per
//! sample from coefficients produced by a control module reading the block
//! input (one shared module, or one per convolution).

mod config;
mod flops;

pub(crate) use config::parse as parse_value;
pub use config::{Activation, ConvMode, ModelConfig};
pub use flops::{conv_flops, conv_macs, flops_estimate, FlopsReport, LayerFlops};

use crate::assembled::{
    AdaptiveCache, AdaptiveConv, Coefficients, ControlCache, ControlModule, MixingMode,
};
use crate::error::{Error, Result};
use crate::nn::{
    init_params, pixel_shuffle, pixel_shuffle_backward, pixel_unshuffle, repeat_upscale, ConvLayer,
    ParamStore,
};
use crate::rng::Rng;
use crate::tensor::{relu_backward, Element, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockConv {
    Plain(ConvLayer),
    Adaptive(AdaptiveConv),
}

impl BlockConv {
    pub fn name(&self) -> &str {
        match self {
            BlockConv::Plain(c) => &c.name,
            BlockConv::Adaptive(c) => &c.name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub convs: [BlockConv; 3],
    /// Empty in plain mode; one entry when coefficients are shared, three
    /// otherwise.
    pub controls: Vec<ControlModule>,
    pub residual: bool,
}

/// One entry of the layer graph, in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerRecord {
    PixelUnshuffle {
        factor: usize,
    },
    Conv {
        name: String,
        c_in: usize,
        c_out: usize,
        k: usize,
        bias: bool,
    },
    Control {
        name: String,
        c_in: usize,
        outputs: usize,
        bias: bool,
    },
    AdaptiveConv {
        name: String,
        c_in: usize,
        c_out: usize,
        k: usize,
        num_bases: usize,
        dynamic: bool,
        bias: bool,
    },
    Activation,
    PixelShuffle {
        factor: usize,
    },
    AddRepeatUpscaled {
        factor: usize,
    },
}

struct ConvStep<T> {
    input: Tensor<T>,
    /// Output before the activation; `None` for the last convolution.
    pre_activation: Option<Tensor<T>>,
    adaptive: Option<AdaptiveCache<T>>,
    /// Control cache when this convolution owns its control module.
    control: Option<(Coefficients<T>, ControlCache<T>)>,
}

struct BlockCache<T> {
    shared: Option<(Coefficients<T>, ControlCache<T>)>,
    steps: Vec<ConvStep<T>>,
}

/// Activations kept by a training forward pass.
pub struct ForwardCache<T> {
    unshuffled: Tensor<T>,
    head_pre: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    tail_input: Tensor<T>,
    output_shape: Vec<usize>,
}

impl<T: Element> ForwardCache<T> {
    /// Which pre-activation entries are positive, in forward order. Two
    /// inputs with the same pattern lie on the same linear piece of every
    /// ReLU.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let steps = self.blocks.iter().flat_map(|b| &b.steps);
        std::iter::once(&self.head_pre)
            .chain(steps.filter_map(|s| s.pre_activation.as_ref()))
            .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AsConvSr<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    head: ConvLayer,
    blocks: Vec<Block>,
    tail: ConvLayer,
}

impl<T: Element> AsConvSr<T> {
    /// Builds the layer graph and registers zero-valued parameters.
    pub fn new_uninit(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (head, blocks, tail) = build_layers(&config);

        let mut params = ParamStore::new();
        head.register(&mut params)?;
        for block in &blocks {
            for ctrl in &block.controls {
                ctrl.register(&mut params)?;
            }
            for conv in &block.convs {
                match conv {
                    BlockConv::Plain(c) => c.register(&mut params)?,
                    BlockConv::Adaptive(c) => c.register(&mut params)?,
                }
            }
        }
        tail.register(&mut params)?;
        Ok(AsConvSr {
            config,
            params,
            head,
            blocks,
            tail,
        })
    }

    /// Builds the model and initialises its parameters with `config.init`.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut model = Self::new_uninit(config)?;
        init_params(&mut model.params, model.config.init, rng)?;
        if model.config.zero_init_tail {
            let w = model.tail.weight_name();
            let zero = Tensor::zeros(model.params.value(&w)?.shape())?;
            model.params.set_value(&w, zero)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn head(&self) -> &ConvLayer {
        &self.head
    }

    pub fn tail(&self) -> &ConvLayer {
        &self.tail
    }

    /// Total learnable scalars: weights, enabled biases, bases and control
    /// parameters.
    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same model, different element precision.
    pub fn cast<U: Element>(&self) -> Result<AsConvSr<U>> {
        Ok(AsConvSr {
            config: self.config.clone(),
            params: self.params.cast()?,
            head: self.head.clone(),
            blocks: self.blocks.clone(),
            tail: self.tail.clone(),
        })
    }

    pub fn layers(&self) -> Vec<LayerRecord> {
        layer_graph(&self.config)
    }

    fn activate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.config.activation {
            Activation::Relu => x.relu(),
            Activation::None => Ok(x.clone()),
        }
    }

    fn activate_backward(&self, pre: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self.config.activation {
            Activation::Relu => relu_backward(pre, grad),
            Activation::None => Ok(grad.clone()),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, _, _] = x.dims4()?;
        if c != 3 {
            return Err(Error::shape("model_forward", &[3], &[c]));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        self.check_input(x)?;
        let cfg = &self.config;
        let unshuffled = pixel_unshuffle(x, cfg.unshuffle_factor)?;
        let head_pre = self.head.forward(&self.params, &unshuffled)?;
        let mut feat = self.activate(&head_pre)?;

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let block_in = feat;
            let shared = match block.controls.as_slice() {
                [ctrl] => Some(ctrl.forward(&self.params, &block_in)?),
                _ => None,
            };
            let mut steps = Vec::with_capacity(3);
            let mut cur = block_in.clone();
            for (i, bc) in block.convs.iter().enumerate() {
                let own = if block.controls.len() == 3 {
                    Some(block.controls[i].forward(&self.params, &cur)?)
                } else {
                    None
                };
                let (out, adaptive) = match bc {
                    BlockConv::Plain(c) => (c.forward(&self.params, &cur)?, None),
                    BlockConv::Adaptive(a) => {
                        let coeff = own
                            .as_ref()
                            .or(shared.as_ref())
                            .map(|(c, _)| c)
                            .expect("adaptive convolution without a control module");
                        let (o, cache) = a.forward(&self.params, &cur, coeff)?;
                        (o, Some(cache))
                    }
                };
                let last = i == 2;
                let next = if last {
                    out.clone()
                } else {
                    self.activate(&out)?
                };
                if keep {
                    steps.push(ConvStep {
                        input: std::mem::replace(&mut cur, next),
                        pre_activation: if last { None } else { Some(out) },
                        adaptive,
                        control: own,
                    });
                } else {
                    cur = next;
                }
            }
            if block.residual {
                cur = cur.add(&block_in)?;
            }
            feat = cur;
            if keep {
                block_caches.push(BlockCache { shared, steps });
            }
        }

        let tail_out = self.tail.forward(&self.params, &feat)?;
        let mut up = pixel_shuffle(&tail_out, cfg.unshuffle_factor)?;
        if cfg.global_skip {
            up = up.add(&repeat_upscale(x, cfg.scale)?)?;
        }
        let y = pixel_shuffle(&up, cfg.scale)?;
        let cache = keep.then(|| ForwardCache {
            unshuffled,
            head_pre,
            blocks: block_caches,
            tail_input: feat,
            output_shape: y.shape().to_vec(),
        });
        Ok((y, cache))
    }

    /// Unclamped forward pass, `[B, 3, H, W] -> [B, 3, 2H, 2W]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    /// Evaluation-mode forward: output clamped to `[0, 1]`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x)?.clamp(T::zero(), T::one())
    }

    /// Training forward pass that also returns the activations needed by
    /// [`AsConvSr::backward`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (y, cache) = self.run(x, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    /// Accumulates `d loss / d param` into the parameter store given
    /// `grad_out = d loss / d output`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<()> {
        if grad_out.shape() != cache.output_shape.as_slice() {
            return Err(Error::shape(
                "model_backward",
                &cache.output_shape,
                grad_out.shape(),
            ));
        }
        let cfg = self.config.clone();
        let g_up = pixel_shuffle_backward(grad_out, cfg.scale)?;
        let g_tail = pixel_shuffle_backward(&g_up, cfg.unshuffle_factor)?;
        let mut g = self
            .tail
            .backward(&mut self.params, &cache.tail_input, &g_tail)?;

        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut g_block_in = if block.residual {
                Some(g.clone())
            } else {
                None
            };
            let mut g_shared_coeff: Option<Tensor<T>> = None;
            for (i, step) in bc.steps.iter().enumerate().rev() {
                if let Some(pre) = &step.pre_activation {
                    g = match cfg.activation {
                        Activation::Relu => relu_backward(pre, &g)?,
                        Activation::None => g,
                    };
                }
                g = match &block.convs[i] {
                    BlockConv::Plain(c) => c.backward(&mut self.params, &step.input, &g)?,
                    BlockConv::Adaptive(a) => {
                        let (coeff, own) = match (&step.control, &bc.shared) {
                            (Some((c, cc)), _) => (c, Some(cc)),
                            (None, Some((c, _))) => (c, None),
                            (None, None) => return Err(Error::NoForwardCache),
                        };
                        let adaptive = step.adaptive.as_ref().ok_or(Error::NoForwardCache)?;
                        let (mut g_in, g_coeff) =
                            a.backward(&mut self.params, &step.input, coeff, adaptive, &g)?;
                        match own {
                            Some(ctrl_cache) => {
                                let g_ctrl = block.controls[i].backward(
                                    &mut self.params,
                                    ctrl_cache,
                                    &g_coeff,
                                )?;
                                g_in = g_in.add(&g_ctrl)?;
                            }
                            None => match &mut g_shared_coeff {
                                Some(acc) => acc.add_assign(&g_coeff)?,
                                slot @ None => *slot = Some(g_coeff),
                            },
                        }
                        g_in
                    }
                };
            }
            if let (Some((_, ctrl_cache)), Some(g_coeff)) = (&bc.shared, &g_shared_coeff) {
                let g_ctrl = block.controls[0].backward(&mut self.params, ctrl_cache, g_coeff)?;
                g = g.add(&g_ctrl)?;
            }
            if let Some(res) = g_block_in.take() {
                g = g.add(&res)?;
            }
        }

        let g_head = self.activate_backward(&cache.head_pre, &g)?;
        self.head
            .backward(&mut self.params, &cache.unshuffled, &g_head)?;
        Ok(())
    }
}

fn build_layers(cfg: &ModelConfig) -> (ConvLayer, Vec<Block>, ConvLayer) {
    let r = cfg.unshuffle_factor;
    let c = cfg.channels;
    let ks = cfg.kernel_size;
    let head = ConvLayer::new("head", 3 * r * r, c, ks, cfg.bias_enabled);
    let tail = ConvLayer::new("tail", c, cfg.tail_channels(), ks, cfg.bias_enabled);
    let blocks = (0..cfg.num_blocks).map(|i| make_block(cfg, i)).collect();
    (head, blocks, tail)
}

/// The layer graph a model built from `cfg` executes, in order.
pub fn layer_graph(cfg: &ModelConfig) -> Vec<LayerRecord> {
    let (head, blocks, tail) = build_layers(cfg);
    let conv = |c: &ConvLayer| LayerRecord::Conv {
        name: c.name.clone(),
        c_in: c.c_in,
        c_out: c.c_out,
        k: c.k,
        bias: c.bias,
    };
    let act = cfg.activation != Activation::None;
    let mut out = vec![
        LayerRecord::PixelUnshuffle {
            factor: cfg.unshuffle_factor,
        },
        conv(&head),
    ];
    if act {
        out.push(LayerRecord::Activation);
    }
    for block in &blocks {
        for (i, bc) in block.convs.iter().enumerate() {
            let ctrl = match block.controls.len() {
                3 => block.controls.get(i),
                _ if i == 0 => block.controls.first(),
                _ => None,
            };
            if let Some(ctrl) = ctrl {
                out.push(LayerRecord::Control {
                    name: ctrl.name.clone(),
                    c_in: ctrl.c_in,
                    outputs: ctrl.c_out * ctrl.num_bases,
                    bias: ctrl.bias,
                });
            }
            out.push(match bc {
                BlockConv::Plain(c) => conv(c),
                BlockConv::Adaptive(a) => LayerRecord::AdaptiveConv {
                    name: a.name.clone(),
                    c_in: a.c_in,
                    c_out: a.c_out,
                    k: a.ks,
                    num_bases: a.num_bases,
                    dynamic: a.mode == MixingMode::Dynamic,
                    bias: a.bias,
                },
            });
            if i < 2 && act {
                out.push(LayerRecord::Activation);
            }
        }
    }
    out.push(conv(&tail));
    out.push(LayerRecord::PixelShuffle {
        factor: cfg.unshuffle_factor,
    });
    if cfg.global_skip {
        out.push(LayerRecord::AddRepeatUpscaled { factor: cfg.scale });
    }
    out.push(LayerRecord::PixelShuffle { factor: cfg.scale });
    out
}

fn make_block(cfg: &ModelConfig, index: usize) -> Block {
    let name = format!("block{index}");
    let c = cfg.channels;
    let ks = cfg.kernel_size;
    let mode = match cfg.conv_mode {
        ConvMode::Plain => None,
        ConvMode::Assembled => Some(MixingMode::Assembled),
        ConvMode::Dynamic => Some(MixingMode::Dynamic),
    };
    let conv = |j: usize| {
        let conv_name = format!("{name}.conv{j}");
        match mode {
            None => BlockConv::Plain(ConvLayer::new(conv_name, c, c, ks, cfg.bias_enabled)),
            Some(mode) => BlockConv::Adaptive(AdaptiveConv {
                name: conv_name,
                c_in: c,
                c_out: c,
                num_bases: cfg.num_bases,
                ks,
                bias: cfg.bias_enabled,
                mode,
            }),
        }
    };
    let control = |suffix: String| ControlModule {
        name: format!("{name}.control{suffix}"),
        c_in: c,
        c_out: if mode == Some(MixingMode::Dynamic) {
            1
        } else {
            c
        },
        num_bases: cfg.num_bases,
        bias: cfg.control_bias,
        normalization: cfg.coeff_normalization,
    };
    let controls = match (mode, cfg.shared_coefficients) {
        (None, _) => Vec::new(),
        (Some(_), true) => vec![control(String::new())],
        (Some(_), false) => (0..3).map(|j| control(j.to_string())).collect(),
    };
    let convs = [conv(0), conv(1), conv(2)];
    Block {
        name,
        convs,
        controls,
        residual: cfg.residual_in_block,
    }
}
