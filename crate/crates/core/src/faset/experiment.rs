use std::fmt;

use super::model::{FasetModel, ModelConfig};
use super::train::{
    evaluate_over_view_counts, finetune_base, train_joint, train_stage1, train_stage2, TrainConfig, ViewCount,
};
use crate::aggregate::Aggregator;
use crate::error::Result;
use crate::rng::{derive_rng, mix_seed};
use crate::synth::{make_multiview_dataset, MultiViewDataset, SynthConfig};

/// Stream offset of test samples; train samples start at 0.
pub const TEST_OFFSET: u64 = 1 << 32;

/// Training regime of a compared model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// Stage 1 then stage 2.
    Faset,
    /// All parameters from scratch on multi-view sets.
    Joint,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Faset => "faset",
            Regime::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub model: ModelConfig,
    pub batch: usize,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    /// Stage-2 learning rate of pooling baselines, which fine-tune the base network.
    pub finetune_lr: f64,
    pub joint_lr: f64,
    pub stage2_views: ViewCount,
    pub joint_views: ViewCount,
    /// Pooling baselines to compare against.
    pub baselines: Vec<Aggregator>,
    pub eval_views: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SynthConfig::default(),
            train_samples: 1024,
            test_samples: 256,
            model: ModelConfig::default(),
            batch: 32,
            stage1_iterations: 2000,
            stage2_iterations: 500,
            stage1_lr: 3e-3,
            stage2_lr: 3e-3,
            finetune_lr: 1e-5,
            joint_lr: 3e-3,
            stage2_views: ViewCount::Fixed(8),
            joint_views: ViewCount::Fixed(8),
            baselines: vec![Aggregator::Max, Aggregator::Mean, Aggregator::Sum],
            eval_views: (1..=8).collect(),
        }
    }
}

/// One row of the view-count table.
#[derive(Clone, Debug, PartialEq)]
pub struct IouRecord {
    pub model: Aggregator,
    pub regime: Regime,
    pub views: usize,
    pub iou: f64,
    pub seed: u64,
}

/// Loss curve of one training phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub name: String,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<IouRecord>,
    pub curves: Vec<Curve>,
}

impl ExperimentResult {
    pub fn iou(&self, model: Aggregator, regime: Regime, views: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.model == model && r.regime == regime && r.views == views)
            .map(|r| r.iou)
    }
}

pub fn make_splits(cfg: &ExperimentConfig, seed: u64) -> Result<(MultiViewDataset, MultiViewDataset)> {
    let base = SynthConfig {
        seed,
        ..cfg.data.clone()
    };
    let train = make_multiview_dataset(
        &SynthConfig {
            samples: cfg.train_samples,
            ..base.clone()
        },
        0,
    )?;
    let test = make_multiview_dataset(
        &SynthConfig {
            samples: cfg.test_samples,
            ..base
        },
        TEST_OFFSET,
    )?;
    Ok((train, test))
}

/// AttSets under both regimes plus every pooling baseline under the two-stage
/// regime, all evaluated on one test split.
///
/// Models of one seed start from the same initial base network, and the
/// single-view stage 1 is run once and shared, since every aggregator is the
/// identity on a one-element set.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentResult> {
    let (train, test) = make_splits(cfg, seed)?;
    let mut records = Vec::new();
    let mut curves = Vec::new();
    let tc = |views, iterations, lr, stream| TrainConfig {
        views,
        batch: cfg.batch,
        iterations,
        lr,
        seed: mix_seed(seed, stream),
    };
    let mut push = |m: &FasetModel, regime: Regime| -> Result<()> {
        for (views, iou) in evaluate_over_view_counts(m, &test, &cfg.eval_views)? {
            records.push(IouRecord {
                model: m.cfg.aggregator,
                regime,
                views,
                iou,
                seed,
            });
        }
        Ok(())
    };

    let att_cfg = ModelConfig {
        aggregator: Aggregator::AttSets,
        ..cfg.model.clone()
    };
    let init = FasetModel::new(att_cfg, &mut derive_rng(seed, 1));

    let mut stage1 = init.clone();
    let c1 = train_stage1(&mut stage1, &train, &tc(ViewCount::Fixed(1), cfg.stage1_iterations, cfg.stage1_lr, 2))?;
    curves.push(Curve {
        name: "stage1".into(),
        losses: c1,
    });

    let mut faset = stage1.clone();
    let c2 = train_stage2(&mut faset, &train, &tc(cfg.stage2_views, cfg.stage2_iterations, cfg.stage2_lr, 3))?;
    curves.push(Curve {
        name: "attsets-stage2".into(),
        losses: c2,
    });
    push(&faset, Regime::Faset)?;

    for (k, &agg) in cfg.baselines.iter().enumerate() {
        let mut pooled = with_aggregator(&stage1, agg);
        let c = finetune_base(
            &mut pooled,
            &train,
            &tc(cfg.stage2_views, cfg.stage2_iterations, cfg.finetune_lr, 10 + k as u64),
        )?;
        curves.push(Curve {
            name: format!("{agg}-stage2"),
            losses: c,
        });
        push(&pooled, Regime::Faset)?;
    }

    let mut joint = init;
    let budget = cfg.stage1_iterations + cfg.stage2_iterations;
    let cj = train_joint(&mut joint, &train, &tc(cfg.joint_views, budget, cfg.joint_lr, 4))?;
    curves.push(Curve {
        name: "attsets-joint".into(),
        losses: cj,
    });
    push(&joint, Regime::Joint)?;
    Ok(ExperimentResult { records, curves })
}

/// Copy of `model`'s base network under another aggregator.
fn with_aggregator(model: &FasetModel, agg: Aggregator) -> FasetModel {
    let cfg = ModelConfig {
        aggregator: agg,
        ..model.cfg.clone()
    };
    let mut out = FasetModel::new(cfg, &mut derive_rng(0, 0));
    for (dst, src) in out.base_ids().into_iter().zip(model.base_ids()) {
        *out.store.get_mut(dst) = model.store.get(src).clone();
    }
    out
}

/// Seed-averaged IoU per (model, regime, views), in first-seen order.
pub fn average_over_seeds(results: &[ExperimentResult]) -> Vec<IouRecord> {
    let mut out: Vec<(IouRecord, usize)> = Vec::new();
    for r in results.iter().flat_map(|r| &r.records) {
        match out
            .iter_mut()
            .find(|(o, _)| o.model == r.model && o.regime == r.regime && o.views == r.views)
        {
            Some((o, n)) => {
                o.iou += r.iou;
                *n += 1;
            }
            None => out.push((r.clone(), 1)),
        }
    }
    out.into_iter()
        .map(|(mut r, n)| {
            r.iou /= n as f64;
            r.seed = 0;
            r
        })
        .collect()
}
