use rand::Rng;

use crate::aggregate::{AttentionMode, Aggregator};
use crate::error::{Error, Result};
use crate::metrics::{bce_loss, VoxelGrid};
use crate::tensor::nn::{uniform_init, Mlp};
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Group tag of the encoder/decoder parameters.
pub const BASE: &str = "base";
/// Group tag of the aggregation parameters.
pub const ATT: &str = "att";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub view_dim: usize,
    pub hidden: usize,
    /// Width of the per-view feature that gets aggregated.
    pub feature: usize,
    pub decoder_hidden: usize,
    pub grid: usize,
    pub aggregator: Aggregator,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            view_dim: 48,
            hidden: 64,
            feature: 32,
            decoder_hidden: 128,
            grid: 8,
            aggregator: Aggregator::AttSets,
        }
    }
}

/// Per-view encoder whose aggregated set feature feeds a voxel decoder.
///
/// Parameters tagged [`BASE`] and [`ATT`] are disjoint and together cover
/// the whole store.
#[derive(Clone, Debug, PartialEq)]
pub struct FasetModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    attention: Option<ParamId>,
}

impl FasetModel {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let encoder = Mlp::new(&mut store, rng, "encoder", BASE, &[cfg.view_dim, cfg.hidden, cfg.feature]);
        let cells = cfg.grid.pow(3);
        let decoder = Mlp::new(&mut store, rng, "decoder", BASE, &[cfg.feature, cfg.decoder_hidden, cells]);
        let attention = cfg.aggregator.attention_mode().map(|mode| {
            let cols = match mode {
                AttentionMode::Feature => cfg.feature,
                AttentionMode::Element => 1,
            };
            store.add("attention.weight", ATT, uniform_init(rng, cfg.feature, vec![cfg.feature, cols]))
        });
        FasetModel {
            cfg,
            store,
            encoder,
            decoder,
            attention,
        }
    }

    pub fn base_ids(&self) -> Vec<ParamId> {
        self.store.ids_in_group(BASE).collect()
    }

    pub fn att_ids(&self) -> Vec<ParamId> {
        self.store.ids_in_group(ATT).collect()
    }

    pub fn attention_weight(&self) -> Option<&Tensor> {
        self.attention.map(|id| self.store.get(id))
    }

    /// Voxel probabilities (`M × D³`) for a batch of view sets.
    ///
    /// All views are encoded in one stacked pass; each set is then aggregated
    /// separately, so sets may differ in size.
    pub fn forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, sets: &[&Tensor]) -> Result<Var<'t>> {
        if sets.is_empty() {
            return Err(Error::EmptySet("view sets"));
        }
        let rows: Vec<Vec<f64>> = sets
            .iter()
            .flat_map(|s| (0..s.rows()).map(|r| s.row(r).to_vec()))
            .collect();
        let x = tape.constant(Tensor::from_rows(&rows)?);
        if x.value().cols() != self.cfg.view_dim {
            return Err(Error::shape("FasetModel::forward", &x.shape(), &[rows.len(), self.cfg.view_dim]));
        }
        let feats = self.encoder.forward(p, x, true)?;
        let w = self.attention.map(|id| p.var(id));
        let mut start = 0;
        let mut pooled = Vec::with_capacity(sets.len());
        for s in sets {
            let idx: Vec<usize> = (start..start + s.rows()).collect();
            start += s.rows();
            pooled.push(self.cfg.aggregator.apply(feats.gather_rows(&idx)?, w)?);
        }
        let z = Var::concat(&pooled, 0)?;
        Ok(self.decoder.forward(p, z, false)?.sigmoid())
    }

    /// Mean BCE of the batch predictions against the targets.
    pub fn loss<'t>(&self, p: &Bound<'t>, tape: &'t Tape, sets: &[&Tensor], targets: &[&VoxelGrid]) -> Result<Var<'t>> {
        let pred = self.forward(p, tape, sets)?;
        let rows: Vec<Vec<f64>> = targets.iter().map(|t| t.data().to_vec()).collect();
        bce_loss(pred, &Tensor::from_rows(&rows)?)
    }
}

/// Maps one set of views to a voxel probability grid.
pub trait SetPredictor {
    fn predict(&self, views: &Tensor) -> Result<VoxelGrid>;
}

impl SetPredictor for FasetModel {
    fn predict(&self, views: &Tensor) -> Result<VoxelGrid> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let y = self.forward(&p, &tape, &[views])?;
        let v = y.value();
        VoxelGrid::new(self.cfg.grid, v.data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn groups_partition_the_store() {
        let m = FasetModel::new(ModelConfig::default(), &mut derive_rng(0, 0));
        let base = m.base_ids();
        let att = m.att_ids();
        assert_eq!(att.len(), 1);
        assert!(base.iter().all(|id| !att.contains(id)));
        assert_eq!(base.len() + att.len(), m.store.len());
        let pooled = FasetModel::new(
            ModelConfig {
                aggregator: Aggregator::Mean,
                ..ModelConfig::default()
            },
            &mut derive_rng(0, 0),
        );
        assert!(pooled.att_ids().is_empty());
    }

    #[test]
    fn ragged_batches_decode_per_set() {
        let m = FasetModel::new(ModelConfig::default(), &mut derive_rng(1, 0));
        let a = Tensor::full(vec![3, 48], 0.1);
        let b = Tensor::full(vec![1, 48], -0.2);
        let tape = Tape::new();
        let p = m.store.bind_frozen(&tape);
        let y = m.forward(&p, &tape, &[&a, &b]).unwrap();
        assert_eq!(y.shape(), vec![2, 512]);
        let alone = m.predict(&b).unwrap();
        assert_eq!(y.value().row(1), alone.data());
    }
}
