//! Single-stage instance segmentation of point clouds. A shared point
//! backbone feeds a fixed set of scored boxes; each kept box gets a point mask.

mod blocks;
mod infer;
mod loss;
mod model;
mod train;

pub use blocks::{block_merge, block_partition, same_partition, Block, BlockConfig};
pub use infer::{eval_mprec_mrec, infer_scene, infer_scene_blocks, point_iou, InferConfig, Labeling, PrecRec, Prediction};
pub use loss::{scene_losses, semantic_loss, LossConfig, LossTerms, TrainScene};
pub use model::{BonetConfig, BonetModel, SceneForward};
pub use train::{
    augment_scene, evaluate_bonet, make_scene_splits, mean_losses, model_config_for, run_bonet_experiment, train_bonet, BonetExperimentConfig,
    BonetResult, BonetTrainConfig, LossRecord, TEST_OFFSET,
};
pub use crate::synth::Scene;
