//! Box association: pairing costs built on soft point-in-box membership,
//! optimal assignment, and the losses that depend on it.

mod cost;
mod geometry;
mod hungarian;
mod loss;

pub use cost::{
    cost_ces, cost_ces_var, cost_euclidean, cost_euclidean_var, cost_matrix, cost_siou, cost_siou_var, BoxSet,
    CostCriteria, CostMatrix, GtInstances,
};
pub use geometry::{
    hard_point_in_box, points_tensor, soft_point_in_box, soft_point_in_box_var, BBox, HardMask, SoftBoxParams,
    SoftMask,
};
pub use hungarian::{hungarian, Assignment};
pub use loss::{assoc_and_losses, focal_mask_loss, AssocConfig, AssocLosses, FOCAL_ALPHA, FOCAL_GAMMA};
