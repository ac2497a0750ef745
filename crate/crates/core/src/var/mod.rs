//! Next-scale autoregressive generator conditioned on `[S_c, F_q]`, and the
//! synthesis pipelines built on it.

pub mod model;
pub mod sampler;
pub mod sequence;
pub mod synth;
pub mod train;

pub use model::{next_scale_loss, pyramid_targets, ConditionMode, VarConfig, VarModel};
pub use sampler::{argmax, sample_token, SamplerConfig};
pub use sequence::{flatten_pyramid, scale_coords, scale_offsets, unflatten, ScaleSequence, PREFIX_LEN};
pub use synth::{Synthesis, SynthesisPipeline, SynthesisRequest};
pub use train::{
    evaluate_var_loss, load_var, prepare_var_data, save_var, train_var, VarEpochRecord, VarTrainingReport,
    VarTrainingSet,
};
