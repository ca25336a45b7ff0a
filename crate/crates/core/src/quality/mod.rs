//! Full-reference quality prediction from appearance features: feature
//! extraction, linear regressors, correlation metrics and evaluation.

mod eval;
mod features;
mod metrics;
mod regress;

pub use eval::{
    ablate, cross_validate, read_records, split_indices, AblationRow, AblationTable, CvConfig, EvalReport,
    FeaturePair, FoldReport, QualityRecord, RecordRow,
};
pub use features::{
    extract_batch, extract_features, feature_len, fr_feature, model_checksum, pooled_stats, video_features,
    CacheKey, FeatureCache, Pool, QualityFeatures, Scale, Variant, SEGMENTS,
};
pub use metrics::{metrics, pearson, ranks, rmse, spearman, Metrics};
pub use regress::{fit_regressor, fit_regressor_grouped, fit_with, Grids, Hyper, LinearModel, Method};
