use rand::seq::index::sample;
use rand::Rng;

use super::model::{FasetModel, SetPredictor, ATT, BASE};
use crate::error::{Error, Result};
use crate::metrics::voxel_iou;
use crate::rng::derive_rng;
use crate::synth::MultiViewDataset;
use crate::tensor::{Adam, Param, Tape, Tensor};

/// Views per training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewCount {
    Fixed(usize),
    /// Drawn uniformly from `1..=max` for every set.
    Uniform { max: usize },
}

/// `8` for a fixed count, `uniform:8` for a uniform draw from `1..=8`.
impl std::fmt::Display for ViewCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ViewCount::Fixed(n) => write!(f, "{n}"),
            ViewCount::Uniform { max } => write!(f, "uniform:{max}"),
        }
    }
}

impl std::str::FromStr for ViewCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("view count `{s}` is neither `N` nor `uniform:N`"));
        match s.strip_prefix("uniform:") {
            Some(max) => Ok(ViewCount::Uniform {
                max: max.parse().map_err(|_| bad())?,
            }),
            None => Ok(ViewCount::Fixed(s.parse().map_err(|_| bad())?)),
        }
    }
}

impl ViewCount {
    fn max(self) -> usize {
        match self {
            ViewCount::Fixed(n) => n,
            ViewCount::Uniform { max } => max,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub views: ViewCount,
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self, data: &MultiViewDataset) -> Result<()> {
        let n = self.views.max();
        if n == 0 || self.batch == 0 {
            return Err(Error::Config("view count and batch size must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptySet("training data"));
        }
        if n > data.view_count() {
            return Err(Error::Config(format!("{n} views requested, samples have {}", data.view_count())));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `M` random sets: a sample index and the chosen view rows, without replacement.
pub fn sample_batch(
    rng: &mut impl Rng,
    data: &MultiViewDataset,
    batch: usize,
    views: ViewCount,
) -> Vec<(usize, Vec<usize>)> {
    (0..batch)
        .map(|_| {
            let i = rng.gen_range(0..data.len());
            let n = match views {
                ViewCount::Fixed(n) => n,
                ViewCount::Uniform { max } => rng.gen_range(1..=max),
            };
            (i, sample(rng, data.view_count(), n).into_vec())
        })
        .collect()
}

/// Which parameter groups a training run updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Trainable {
    Base,
    Att,
    All,
}

impl Trainable {
    fn accepts(self, p: &Param) -> bool {
        match self {
            Trainable::Base => p.group == BASE,
            Trainable::Att => p.group == ATT,
            Trainable::All => true,
        }
    }
}

fn run(model: &mut FasetModel, data: &MultiViewDataset, cfg: &TrainConfig, which: Trainable) -> Result<Vec<f64>> {
    cfg.validate(data)?;
    let ids = match which {
        Trainable::Base => model.base_ids(),
        Trainable::Att => model.att_ids(),
        Trainable::All => model.store.iter().map(|(id, _)| id).collect(),
    };
    if ids.is_empty() {
        return Err(Error::Config("no trainable parameters for this stage".into()));
    }
    let mut opt = Adam::new(ids, cfg.lr);
    let mut rng = derive_rng(cfg.seed, 0);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let batch = sample_batch(&mut rng, data, cfg.batch, cfg.views);
        let sets: Vec<Tensor> = batch
            .iter()
            .map(|(i, v)| data.samples[*i].views.gather_rows(v))
            .collect::<Result<_>>()?;
        let set_refs: Vec<&Tensor> = sets.iter().collect();
        let targets: Vec<_> = batch.iter().map(|(i, _)| &data.samples[*i].target).collect();
        let tape = Tape::new();
        let p = model.store.bind(&tape, |q| which.accepts(q));
        let loss = model.loss(&p, &tape, &set_refs, &targets)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        curve.push(value);
        let grads = p.grads(&tape.backward(loss)?);
        opt.step(&mut model.store, &grads)?;
    }
    Ok(curve)
}

/// Stage 1: the encoder and decoder learn from single views; attention is untouched.
pub fn train_stage1(model: &mut FasetModel, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if cfg.views != ViewCount::Fixed(1) {
        return Err(Error::Config("stage 1 trains on exactly one view per set".into()));
    }
    run(model, data, cfg, Trainable::Base)
}

/// Stage 2: only the aggregation parameters learn, on multi-view sets.
pub fn train_stage2(model: &mut FasetModel, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    run(model, data, cfg, Trainable::Att)
}

/// Fine-tunes the base network of a model without aggregation parameters.
pub fn finetune_base(model: &mut FasetModel, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    run(model, data, cfg, Trainable::Base)
}

/// Joint baseline: every parameter learns from one loss.
pub fn train_joint(model: &mut FasetModel, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    run(model, data, cfg, Trainable::All)
}

/// Voxel threshold used by the view-count evaluation.
pub const EVAL_THRESHOLD: f64 = 0.35;

/// Mean IoU per view count, aggregating the first `N` views of every sample.
pub fn evaluate_over_view_counts(
    model: &impl SetPredictor,
    data: &MultiViewDataset,
    counts: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if counts.is_empty() {
        return Err(Error::EmptySet("view counts"));
    }
    if data.is_empty() {
        return Err(Error::EmptySet("test data"));
    }
    counts
        .iter()
        .map(|&n| {
            if n == 0 || n > data.view_count() {
                return Err(Error::InvalidArgument(format!(
                    "view count {n} outside 1..={}",
                    data.view_count()
                )));
            }
            let first: Vec<usize> = (0..n).collect();
            let mut total = 0.0;
            for s in &data.samples {
                let pred = model.predict(&s.views.gather_rows(&first)?)?;
                total += voxel_iou(&pred, &s.target, EVAL_THRESHOLD)?;
            }
            Ok((n, total / data.len() as f64))
        })
        .collect()
}
