//! Transformer encoder, generator/discriminator heads, parameter storage,
//! and checkpoint IO.

pub mod checkpoint;
mod config;
mod encoder;
mod params;

pub use config::{derive_generator_config, parameter_count, ModelConfig};
pub use encoder::{
    cls_logits, disc_logits, forward_encoder, mlm_logits, qa_logits, token_logits, EncoderInput,
    LAYER_NORM_EPS,
};
pub use params::{
    bind, collect_grads, init_encoder_params, init_pretrain_params, BoundParams, Param, ParamStore,
};
