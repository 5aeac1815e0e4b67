//! Weighted cross-entropy training, leave-one-subject-out evaluation and
//! the UF1/UAR metrics.

mod fit;
mod loso;
mod manifest;
mod metrics;

pub use fit::{argmax, class_weights, fit, fit_monitored, predict, Adam, FitOutcome, TrainConfig};
pub use loso::{
    evaluate_loso, folds_by_subject, loso_split, Fold, FoldReport, HtNetLearner, Learner, LosoReport, MetricSummary,
    Sample, SamplePrediction,
};
pub use manifest::{Class, Dataset, Manifest, ManifestEntry, NUM_CLASSES};
pub use metrics::{uar, uf1, ConfusionMatrix};
