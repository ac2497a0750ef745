//! Multi-scale residual VQ-VAE: encoder/decoder, the residual quantisation
//! cascade, the training objective and the training loop.

pub mod loss;
pub mod model;
pub mod pyramid;
pub mod quantizer;
pub mod resample;
pub mod train;

pub use loss::{lesion_focus_term, vqvae_loss, LossBreakdown, LossHeads, LossInputs, LossTerms};
pub use model::{VqVae, VqVaeConfig};
pub use pyramid::{build_mask_pyramid, validate_scales, MaskPyramid, Scale, TokenPyramid};
pub use quantizer::{CascadeOutput, Codebook, LatentGrid, MultiScaleQuantizer};
pub use resample::ScaleResampler;
pub use train::{load_tokenizer, save_tokenizer, train_vqvae, train_vqvae_on, EpochRecord, TrainingReport};
