use super::model::{BonetModel, SceneForward};
use crate::assoc::{assoc_and_losses, focal_mask_loss, AssocConfig, Assignment, GtInstances, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::error::{Error, Result};
use crate::metrics::PROB_EPS;
use crate::synth::Scene;
use crate::tensor::{Bound, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub assoc: AssocConfig,
    /// Off removes the score loss and keeps every box at inference.
    pub score_branch: bool,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Let the mask loss reach the box and score outputs through the mask branch inputs.
    pub mask_box_gradient: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            assoc: AssocConfig::default(),
            score_branch: true,
            focal_alpha: FOCAL_ALPHA,
            focal_gamma: FOCAL_GAMMA,
            mask_box_gradient: false,
        }
    }
}

/// A scene with its network input and targets precomputed.
#[derive(Clone, Debug)]
pub struct TrainScene {
    pub scene: Scene,
    pub input: Tensor,
    pub gt: GtInstances,
    /// `N × S` one-hot semantic labels.
    pub semantic: Tensor,
    /// `T × N` instance masks in ground-truth order.
    pub masks: Tensor,
}

impl TrainScene {
    pub fn new(model: &BonetModel, scene: Scene) -> Result<Self> {
        if scene.classes != model.cfg.classes {
            return Err(Error::Config(format!(
                "scene has {} classes, model predicts {}",
                scene.classes, model.cfg.classes
            )));
        }
        let input = model.cfg.encode_points(&scene.points, scene.colors.as_deref())?;
        let gt = scene.gt_instances()?;
        if gt.is_empty() {
            return Err(Error::EmptySet("scene instances"));
        }
        let n = scene.len();
        let mut onehot = vec![0.0; n * scene.classes];
        for (k, &s) in scene.semantic.iter().enumerate() {
            onehot[k * scene.classes + s] = 1.0;
        }
        let semantic = Tensor::matrix(n, scene.classes, onehot)?;
        let rows: Vec<Vec<f64>> = gt.masks.iter().map(|m| m.0.clone()).collect();
        let masks = Tensor::from_rows(&rows)?;
        Ok(TrainScene {
            scene,
            input,
            gt,
            semantic,
            masks,
        })
    }
}

pub struct LossTerms<'t> {
    pub semantic: Var<'t>,
    pub bbox: Var<'t>,
    pub bbs: Option<Var<'t>>,
    pub pmask: Var<'t>,
    pub total: Var<'t>,
    pub assignment: Assignment,
}

/// Mean cross-entropy of `N × S` probabilities against one-hot rows.
pub fn semantic_loss<'t>(probs: Var<'t>, onehot: &Tensor) -> Result<Var<'t>> {
    if probs.shape() != onehot.shape() {
        return Err(Error::shape("semantic_loss", &probs.shape(), onehot.shape()));
    }
    let n = onehot.rows() as f64;
    let y = probs.tape().constant(onehot.clone());
    Ok(probs.clamp(PROB_EPS, 1.0)?.log()?.mul(y)?.sum().scale(-1.0 / n))
}

/// Score column fed to the mask branch: predicted scores, or ones without a score branch.
pub(crate) fn mask_scores<'t>(f: &SceneForward<'t>, rows: &[usize], cfg: &LossConfig) -> Result<Var<'t>> {
    if cfg.score_branch {
        f.scores.gather_rows(rows)
    } else {
        Ok(f.scores.tape().constant(Tensor::ones(vec![rows.len(), 1])))
    }
}

fn detach(v: Var<'_>) -> Var<'_> {
    v.tape().constant((*v.value()).clone())
}

/// Every loss term of one scene, and their sum.
pub fn scene_losses<'t>(
    model: &BonetModel,
    p: &Bound<'t>,
    tape: &'t Tape,
    s: &TrainScene,
    cfg: &LossConfig,
) -> Result<LossTerms<'t>> {
    let f = model.forward(p, tape, &s.input)?;
    let semantic = semantic_loss(f.semantics, &s.semantic)?;
    let assoc = assoc_and_losses(f.boxes, f.scores, &s.scene.points, &s.gt, &cfg.assoc)?;
    let matched = &assoc.assignment.pred_of;
    let (boxes, scores) = (f.boxes.gather_rows(matched)?, mask_scores(&f, matched, cfg)?);
    let masks = if cfg.mask_box_gradient {
        model.masks(p, &f, boxes, scores)?
    } else {
        model.masks(p, &f, detach(boxes), detach(scores))?
    };
    let pmask = focal_mask_loss(masks, &s.masks, cfg.focal_alpha, cfg.focal_gamma)?;
    let mut total = semantic.add(assoc.bbox)?.add(pmask)?;
    let bbs = cfg.score_branch.then_some(assoc.bbs);
    if let Some(b) = bbs {
        total = total.add(b)?;
    }
    Ok(LossTerms {
        semantic,
        bbox: assoc.bbox,
        bbs,
        pmask,
        total,
        assignment: assoc.assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bonet::model::BonetConfig;
    use crate::rng::derive_rng;
    use crate::synth::{make_scene, SynthConfig};
    use crate::tensor::grad_check;
    use crate::tensor::ParamId;

    fn small_scene(points: usize, seed: u64) -> Scene {
        let cfg = SynthConfig {
            points,
            ..SynthConfig::default()
        };
        make_scene(&cfg, &mut derive_rng(seed, 0)).unwrap()
    }

    fn model() -> BonetModel {
        BonetModel::new(BonetConfig::default(), &mut derive_rng(5, 0)).unwrap()
    }

    fn total(m: &BonetModel, s: &TrainScene, cfg: &LossConfig) -> f64 {
        let tape = Tape::new();
        let p = m.store.bind_frozen(&tape);
        scene_losses(m, &p, &tape, s, cfg).unwrap().total.item()
    }

    #[test]
    fn semantic_loss_of_uniform_probs_is_log_s() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::full(vec![4, 3], 1.0 / 3.0));
        let y = Tensor::matrix(4, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 0., 0.]).unwrap();
        assert!((semantic_loss(p, &y).unwrap().item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn terms_are_finite_and_sum_to_total() {
        let m = model();
        let s = TrainScene::new(&m, small_scene(64, 1)).unwrap();
        let tape = Tape::new();
        let p = m.store.bind_frozen(&tape);
        let t = scene_losses(&m, &p, &tape, &s, &LossConfig::default()).unwrap();
        let parts = t.semantic.item() + t.bbox.item() + t.bbs.unwrap().item() + t.pmask.item();
        assert!((parts - t.total.item()).abs() < 1e-12);
        assert_eq!(t.assignment.pred_of.len(), s.gt.len());
        let ablated = LossConfig {
            score_branch: false,
            ..LossConfig::default()
        };
        let t2 = scene_losses(&m, &p, &tape, &s, &ablated).unwrap();
        assert!(t2.bbs.is_none());
        assert!(t2.total.item().is_finite());
    }

    #[test]
    fn total_is_invariant_to_point_order() {
        let m = model();
        let scene = small_scene(48, 2);
        let mut perm: Vec<usize> = (0..48).collect();
        perm.reverse();
        perm.swap(3, 17);
        let a = TrainScene::new(&m, scene.clone()).unwrap();
        let b = TrainScene::new(&m, scene.permuted(&perm).unwrap()).unwrap();
        let cfg = LossConfig::default();
        assert!((total(&m, &a, &cfg) - total(&m, &b, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = model();
        let s = TrainScene::new(&m, small_scene(16, 3)).unwrap();
        let cfg = LossConfig::default();
        let mut checked: Vec<ParamId> = m.store.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
        checked.push(m.store.find("mask.box.weight").unwrap());
        let cfg = LossConfig {
            mask_box_gradient: true,
            ..cfg
        };
        let all = m.store.values();
        let init: Vec<Tensor> = checked.iter().map(|id| all[id.0].clone()).collect();
        let r = grad_check(
            "bonet total",
            |tape, v| {
                let mut vars: Vec<Var> = all.iter().map(|t| tape.constant(t.clone())).collect();
                for (id, var) in checked.iter().zip(v) {
                    vars[id.0] = *var;
                }
                let p = Bound::from_vars(vars);
                scene_losses(&m, &p, tape, &s, &cfg).map(|t| t.total)
            },
            &init,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
