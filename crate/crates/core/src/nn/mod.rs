//! Structural layers: pixel (un)shuffle, repeat upscaling, parameter storage,
//! parameterised convolutions and their initialisation.

mod conv_layer;
mod init;
mod params;
mod shuffle;

pub use conv_layer::ConvLayer;
pub use init::{add_identity_taps, init_params, InitScheme};
pub use params::{Param, ParamKind, ParamStore};
pub use shuffle::{
    pixel_shuffle, pixel_shuffle_backward, pixel_unshuffle, pixel_unshuffle_backward,
    repeat_upscale, repeat_upscale_backward,
};
