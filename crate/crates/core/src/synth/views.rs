use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SynthConfig;
use crate::error::{Error, Result};
use crate::metrics::VoxelGrid;
use crate::rng::derive_rng;
use crate::tensor::Tensor;

/// Stream index of the shared projection matrices; samples use `0..samples`.
const PROJECTION_STREAM: u64 = u64::MAX;

/// Random solid cuboid with every side at least 2 cells.
pub fn make_voxel_shape(cfg: &SynthConfig, rng: &mut impl Rng) -> VoxelGrid {
    let d = cfg.grid;
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let side = rng.gen_range(2..=d);
        lo[a] = rng.gen_range(0..=d - side);
        hi[a] = lo[a] + side;
    }
    let mut g = VoxelGrid::empty(d);
    for x in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for z in lo[2]..hi[2] {
                g.set(x, y, z, 1.0);
            }
        }
    }
    g
}

/// One `view_dim × D³` matrix per view index, entries `N(0, 8 / D³)`.
pub fn make_projections(cfg: &SynthConfig) -> Vec<Tensor> {
    let cells = cfg.grid.pow(3);
    let scale = (8.0 / cells as f64).sqrt();
    let mut rng = derive_rng(cfg.seed, PROJECTION_STREAM);
    (0..cfg.views)
        .map(|_| {
            let data = (0..cfg.view_dim * cells)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    scale * e
                })
                .collect();
            Tensor::matrix(cfg.view_dim, cells, data).expect("positive dims")
        })
        .collect()
}

/// `V × view_dim` matrix whose row `v` is `P_v · flatten(shape) + noise`.
pub fn make_view_set(shape: &VoxelGrid, projections: &[Tensor], noise: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let first = projections.first().ok_or(Error::EmptySet("projections"))?;
    let din = first.rows();
    let x = Tensor::matrix(shape.len(), 1, shape.data().to_vec())?;
    let mut data = Vec::with_capacity(projections.len() * din);
    for p in projections {
        let v = p.matmul(&x)?;
        data.extend(v.data().iter().map(|&c| {
            let e: f64 = StandardNormal.sample(rng);
            c + noise * e
        }));
    }
    Tensor::matrix(projections.len(), din, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewSample {
    /// `V × view_dim`.
    pub views: Tensor,
    pub target: VoxelGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub samples: Vec<MultiViewSample>,
}

impl MultiViewDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn view_count(&self) -> usize {
        self.samples.first().map_or(0, |s| s.views.rows())
    }

    pub fn view_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.views.cols())
    }
}

/// Samples `offset..offset + cfg.samples` of the stream family under `cfg.seed`.
///
/// Disjoint offsets give disjoint train and test splits over one shared set
/// of projections.
pub fn make_multiview_dataset(cfg: &SynthConfig, offset: u64) -> Result<MultiViewDataset> {
    cfg.validate()?;
    let projections = make_projections(cfg);
    let samples = (0..cfg.samples as u64)
        .map(|i| {
            let mut rng = derive_rng(cfg.seed, offset + i);
            let target = make_voxel_shape(cfg, &mut rng);
            let views = make_view_set(&target, &projections, cfg.noise, &mut rng)?;
            Ok(MultiViewSample { views, target })
        })
        .collect::<Result<_>>()?;
    Ok(MultiViewDataset { samples })
}
