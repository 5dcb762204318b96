use rand::seq::index::sample;
use rand::Rng;

use super::blocks::BlockConfig;
use super::infer::{eval_mprec_mrec, infer_scene, infer_scene_blocks, InferConfig, Labeling, PrecRec};
use super::loss::{scene_losses, LossConfig, TrainScene};
use super::model::{BonetConfig, BonetModel};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, mix_seed};
use crate::synth::{make_scenes, Scene, SynthConfig};
use crate::tensor::{Adam, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct BonetTrainConfig {
    pub iterations: usize,
    /// Scenes per step; their losses are averaged.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Points drawn without replacement from each scene per step; `None` uses all.
    pub subsample: Option<usize>,
    /// Apply a random symmetry of the scene footprint to each drawn scene.
    pub augment: bool,
    /// Learning rate at the last step as a fraction of `lr`, reached by cosine decay.
    pub final_lr_fraction: f64,
}

impl Default for BonetTrainConfig {
    fn default() -> Self {
        BonetTrainConfig {
            iterations: 1500,
            batch: 4,
            lr: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
            subsample: None,
            augment: false,
            final_lr_fraction: 1.0,
        }
    }
}

/// Mirror and axis-swap symmetries about `center` in the xy plane; the swap
/// is used only when both horizontal axes share center and scale.
pub fn augment_scene(scene: &Scene, cfg: &BonetConfig, rng: &mut impl Rng) -> Scene {
    let flip = [rng.gen_bool(0.5), rng.gen_bool(0.5)];
    let square = cfg.center[0] == cfg.center[1] && cfg.scale[0] == cfg.scale[1];
    let swap = square && rng.gen_bool(0.5);
    let mut out = scene.clone();
    for p in &mut out.points {
        for a in 0..2 {
            if flip[a] {
                p[a] = 2.0 * cfg.center[a] - p[a];
            }
        }
        if swap {
            p.swap(0, 1);
        }
    }
    out
}

/// Batch-mean loss terms of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRecord {
    pub total: f64,
    pub semantic: f64,
    pub bbox: f64,
    /// Zero without a score branch.
    pub bbs: f64,
    pub pmask: f64,
}

/// Adam on every parameter; returns the loss terms of each step.
pub fn train_bonet(model: &mut BonetModel, scenes: &[TrainScene], cfg: &BonetTrainConfig) -> Result<Vec<LossRecord>> {
    if scenes.is_empty() {
        return Err(Error::EmptySet("training scenes"));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch and learning rate must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.final_lr_fraction) {
        return Err(Error::Config("final learning-rate fraction must lie in [0, 1]".into()));
    }
    let mut opt = Adam::new(model.store.iter().map(|(id, _)| id).collect(), cfg.lr);
    let mut rng = derive_rng(cfg.seed, 0);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let progress = step as f64 / cfg.iterations.max(2).saturating_sub(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.set_lr(cfg.lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cosine));
        let tape = Tape::new();
        let p = model.store.bind_all(&tape);
        let mut total = tape.scalar(0.0);
        let mut rec = LossRecord::default();
        for _ in 0..cfg.batch {
            let s = &scenes[rng.gen_range(0..scenes.len())];
            let term = if cfg.subsample.is_some() || cfg.augment {
                let mut scene = match cfg.subsample {
                    Some(k) if k < s.scene.len() => {
                        let mut idx = sample(&mut rng, s.scene.len(), k).into_vec();
                        idx.sort_unstable();
                        s.scene.subset(&idx)?
                    }
                    _ => s.scene.clone(),
                };
                if cfg.augment {
                    scene = augment_scene(&scene, &model.cfg, &mut rng);
                }
                scene_losses(model, &p, &tape, &TrainScene::new(model, scene)?, &cfg.loss)?
            } else {
                scene_losses(model, &p, &tape, s, &cfg.loss)?
            };
            rec.semantic += term.semantic.item();
            rec.bbox += term.bbox.item();
            rec.bbs += term.bbs.map_or(0.0, |b| b.item());
            rec.pmask += term.pmask.item();
            total = total.add(term.total)?;
        }
        let loss = total.scale(1.0 / cfg.batch as f64);
        let k = cfg.batch as f64;
        rec = LossRecord {
            total: loss.item(),
            semantic: rec.semantic / k,
            bbox: rec.bbox / k,
            bbs: rec.bbs / k,
            pmask: rec.pmask / k,
        };
        if !rec.total.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        curve.push(rec);
        let grads = p.grads(&tape.backward(loss)?);
        opt.step(&mut model.store, &grads)?;
    }
    Ok(curve)
}

/// Instance precision and recall of `model` on `scenes`, whole or block by block.
pub fn evaluate_bonet(
    model: &BonetModel,
    scenes: &[Scene],
    infer: &InferConfig,
    blocks: Option<&BlockConfig>,
    iou: f64,
) -> Result<PrecRec> {
    let pairs = scenes
        .iter()
        .map(|s| {
            let pred = match blocks {
                Some(b) => infer_scene_blocks(model, s, infer, b)?,
                None => infer_scene(model, s, infer)?.labels,
            };
            Ok((pred, Labeling::from_scene(s)))
        })
        .collect::<Result<Vec<_>>>()?;
    eval_mprec_mrec(&pairs, iou)
}

/// Loss terms averaged over `scenes` at the current parameters.
pub fn mean_losses(model: &BonetModel, scenes: &[TrainScene], loss: &LossConfig) -> Result<LossRecord> {
    if scenes.is_empty() {
        return Err(Error::EmptySet("scenes"));
    }
    let mut rec = LossRecord::default();
    for s in scenes {
        let tape = Tape::new();
        let p = model.store.bind_frozen(&tape);
        let t = scene_losses(model, &p, &tape, s, loss)?;
        rec.total += t.total.item();
        rec.semantic += t.semantic.item();
        rec.bbox += t.bbox.item();
        rec.bbs += t.bbs.map_or(0.0, |b| b.item());
        rec.pmask += t.pmask.item();
    }
    let k = scenes.len() as f64;
    Ok(LossRecord {
        total: rec.total / k,
        semantic: rec.semantic / k,
        bbox: rec.bbox / k,
        bbs: rec.bbs / k,
        pmask: rec.pmask / k,
    })
}

/// Stream offset of held-out scenes; training scenes start at 0.
pub const TEST_OFFSET: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct BonetExperimentConfig {
    pub data: SynthConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub model: BonetConfig,
    pub train: BonetTrainConfig,
    pub iou: f64,
    /// Also train and evaluate a copy without the score branch.
    pub ablation: bool,
}

impl Default for BonetExperimentConfig {
    fn default() -> Self {
        BonetExperimentConfig {
            data: SynthConfig {
                colors: true,
                ..SynthConfig::default()
            },
            train_scenes: 1024,
            test_scenes: 64,
            model: BonetConfig::default(),
            train: BonetTrainConfig {
                iterations: 20_000,
                lr: 2e-3,
                subsample: Some(128),
                augment: true,
                final_lr_fraction: 0.05,
                ..BonetTrainConfig::default()
            },
            iou: 0.5,
            ablation: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BonetResult {
    pub seed: u64,
    pub full: PrecRec,
    pub curve: Vec<LossRecord>,
    pub ablated: Option<PrecRec>,
    pub ablated_curve: Vec<LossRecord>,
}

/// Model configuration whose coordinate map sends the scene extent to `[-1, 1]`.
pub fn model_config_for(data: &SynthConfig, base: &BonetConfig) -> BonetConfig {
    let half = data.extent.map(|e| e / 2.0);
    BonetConfig {
        channels: if data.colors { 6 } else { 3 },
        center: half,
        scale: half,
        ..base.clone()
    }
}

pub fn make_scene_splits(cfg: &BonetExperimentConfig, seed: u64) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let base = SynthConfig {
        seed,
        ..cfg.data.clone()
    };
    let train = make_scenes(
        &SynthConfig {
            samples: cfg.train_scenes,
            ..base.clone()
        },
        0,
    )?;
    let test = make_scenes(
        &SynthConfig {
            samples: cfg.test_scenes,
            ..base
        },
        TEST_OFFSET,
    )?;
    Ok((train, test))
}

/// Train on one seed's scenes and score the held-out split; with ablation,
/// a copy of the same initial model trains without the score branch.
pub fn run_bonet_experiment(cfg: &BonetExperimentConfig, seed: u64) -> Result<(BonetModel, BonetResult)> {
    let (train, test) = make_scene_splits(cfg, seed)?;
    let init = BonetModel::new(model_config_for(&cfg.data, &cfg.model), &mut derive_rng(seed, 1))?;
    let prepared = train
        .into_iter()
        .map(|s| TrainScene::new(&init, s))
        .collect::<Result<Vec<_>>>()?;
    let run = |loss: LossConfig| -> Result<(BonetModel, Vec<LossRecord>, PrecRec)> {
        let mut m = init.clone();
        let tc = BonetTrainConfig {
            seed: mix_seed(seed, 2),
            loss,
            ..cfg.train.clone()
        };
        let curve = train_bonet(&mut m, &prepared, &tc)?;
        let pr = evaluate_bonet(&m, &test, &InferConfig::for_loss(&loss), None, cfg.iou)?;
        Ok((m, curve, pr))
    };
    let (model, curve, full) = run(cfg.train.loss)?;
    let (ablated, ablated_curve) = if cfg.ablation {
        let (_, c, pr) = run(LossConfig {
            score_branch: false,
            ..cfg.train.loss
        })?;
        (Some(pr), c)
    } else {
        (None, Vec::new())
    };
    Ok((
        model,
        BonetResult {
            seed,
            full,
            curve,
            ablated,
            ablated_curve,
        },
    ))
}
