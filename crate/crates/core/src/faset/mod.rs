//! Two-stage training of a multi-view encoder/decoder with a set aggregator.
//!
//! Stage 1 fits the base network on single views, where every aggregator is
//! the identity and the attention gradient vanishes. Stage 2 freezes the base
//! network and fits only the aggregation parameters on multi-view sets. The
//! joint baseline trains everything at once.

mod experiment;
mod model;
mod train;

pub use experiment::{
    average_over_seeds, make_splits, run_experiment, Curve, ExperimentConfig, ExperimentResult, IouRecord, Regime,
    TEST_OFFSET,
};
pub use model::{FasetModel, ModelConfig, SetPredictor, ATT, BASE};
pub use train::{
    evaluate_over_view_counts, finetune_base, sample_batch, train_joint, train_stage1, train_stage2, TrainConfig,
    ViewCount, EVAL_THRESHOLD,
};
