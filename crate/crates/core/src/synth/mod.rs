//! Deterministic synthetic data: latent voxel shapes with noisy linear views,
//! and labeled multi-object point-cloud scenes with their voxelizations.
//!
//! Every sample `i` draws from its own stream `derive_rng(seed, i)`, so a
//! dataset is a pure function of its [`SynthConfig`] and can be generated in
//! any order.

mod scene;
mod views;
mod voxelize;

pub use scene::{make_scene, make_scenes, Scene, SemanticClass, CLUTTER};
pub use views::{make_multiview_dataset, make_projections, make_view_set, make_voxel_shape, MultiViewDataset, MultiViewSample};
pub use voxelize::{partial_view, voxel_index, voxelize_points, PARTIAL_COLUMNS};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Side of the cubic target grid.
    pub grid: usize,
    pub samples: usize,
    /// Views per multi-view sample.
    pub views: usize,
    /// Width of one projected view.
    pub view_dim: usize,
    /// Standard deviation of additive view noise.
    pub noise: f64,
    /// Scene extent in meters, anchored at the origin.
    pub extent: [f64; 3],
    pub min_objects: usize,
    pub max_objects: usize,
    pub points: usize,
    /// Fraction of scene points that are clutter, in `[0, 1)`.
    pub clutter: f64,
    /// Emit per-point colors as three extra channels.
    pub colors: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            grid: 8,
            samples: 64,
            views: 8,
            view_dim: 48,
            noise: 0.1,
            extent: [4.0, 4.0, 2.0],
            min_objects: 2,
            max_objects: 5,
            points: 512,
            clutter: 0.1,
            colors: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.grid < 2 {
            return bad("grid must be at least 2");
        }
        if self.samples == 0 || self.views == 0 || self.view_dim == 0 || self.points == 0 {
            return bad("samples, views, view_dim and points must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative number");
        }
        if self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("extent must be positive");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object range must satisfy 1 <= min_objects <= max_objects");
        }
        if !(0.0..1.0).contains(&self.clutter) {
            return bad("clutter fraction must lie in [0, 1)");
        }
        Ok(())
    }
}
