//! Image-set metrics (FID, IS, FID confusion matrix), the frozen feature
//! extractor, and the downstream augmentation protocol.

pub mod classifier;
pub mod downstream;
pub mod features;
pub mod fid;
pub mod inception;
pub mod report;

pub use classifier::{train_classifier, ClassifierConfig, ConvClassifier, Sampling};
pub use downstream::{
    balance_with_synthetic, downstream_augment_eval, ConditionRecall, DownstreamConfig, LabeledSet, RecallReport,
    CONDITIONS,
};
pub use features::{export_features, write_feature_csv, ExportSkip, FeatureExtractor, DEFAULT_EXTRACTOR_SEED};
pub use fid::{compute_fid, fid_confusion_matrix, fid_from_moments, fid_from_rows, moments, FeatureSet, FidMatrix, FID_JITTER};
pub use inception::compute_is;
pub use report::{format_table, pm};
