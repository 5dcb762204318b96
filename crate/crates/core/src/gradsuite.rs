//! Finite-difference checks of every differentiable building block and
//! composite loss, on small fixed inputs.

use rand::Rng;

use crate::aggregate::{Aggregator, AttentionMode};
use crate::assoc::{
    assoc_and_losses, cost_ces_var, cost_euclidean_var, cost_siou_var, focal_mask_loss, points_tensor,
    soft_point_in_box_var, AssocConfig, SoftBoxParams, FOCAL_ALPHA, FOCAL_GAMMA,
};
use crate::bonet::{scene_losses, BonetConfig, BonetModel, LossConfig, TrainScene};
use crate::error::Result;
use crate::faset::{FasetModel, ModelConfig};
use crate::metrics::gan::{mean_feature_rows, wgan_gp_losses};
use crate::metrics::{joint_gen_loss_var, weighted_bce_loss, VoxelGrid, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::rng::derive_rng;
use crate::synth::{make_scene, SynthConfig};
use crate::tensor::{grad_check, Bound, GradCheckReport, ParamId, ParamStore, Tape, Tensor, Var};

/// Relative-error tolerance of every check.
pub const SUITE_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn random(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).expect("sized data")
}

/// Check `loss` with respect to the chosen parameters of `store`, all other
/// parameters held constant.
fn check_params<F>(name: &str, store: &ParamStore, checked: &[ParamId], loss: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let all = store.values();
    let init: Vec<Tensor> = checked.iter().map(|id| all[id.0].clone()).collect();
    grad_check(
        name,
        |tape, v| {
            let mut vars: Vec<Var> = all.iter().map(|t| tape.constant(t.clone())).collect();
            for (id, var) in checked.iter().zip(v) {
                vars[id.0] = *var;
            }
            loss(tape, &Bound::from_vars(vars))
        },
        &init,
        STEP,
        SUITE_TOL,
    )
}

/// Run every check; the caller decides what a failure means.
pub fn gradient_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = derive_rng(2024, 0);
    let mut out = Vec::new();

    let set = random(&mut rng, 5, 4, -1.0, 1.0);
    let readout = random(&mut rng, 1, 4, -1.0, 1.0);
    for agg in Aggregator::ALL {
        let mut params = vec![set.clone(), readout.clone()];
        match agg.attention_mode() {
            Some(AttentionMode::Feature) => params.push(random(&mut rng, 4, 4, -0.5, 0.5)),
            Some(AttentionMode::Element) => params.push(random(&mut rng, 4, 1, -0.5, 0.5)),
            None => {}
        }
        out.push(grad_check(
            &format!("aggregate {agg}"),
            |_, v| agg.apply(v[0], v.get(2).copied())?.mul(v[1]).map(Var::sum),
            &params,
            STEP,
            SUITE_TOL,
        )?);
    }

    let faset_cfg = ModelConfig {
        view_dim: 6,
        hidden: 5,
        feature: 4,
        decoder_hidden: 6,
        grid: 2,
        aggregator: Aggregator::AttSets,
    };
    let faset = FasetModel::new(faset_cfg, &mut rng);
    let views = [random(&mut rng, 3, 6, -1.0, 1.0), random(&mut rng, 2, 6, -1.0, 1.0)];
    let targets: Vec<VoxelGrid> = (0..2)
        .map(|_| VoxelGrid::new(2, (0..8).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect()))
        .collect::<Result<_>>()?;
    let all_ids: Vec<ParamId> = faset.store.iter().map(|(id, _)| id).collect();
    out.push(check_params("attsets forward + bce", &faset.store, &all_ids, |tape, p| {
        let sets: Vec<&Tensor> = views.iter().collect();
        let t: Vec<&VoxelGrid> = targets.iter().collect();
        faset.loss(p, tape, &sets, &t)
    })?);

    let probs = random(&mut rng, 3, 4, 0.05, 0.95);
    let target = Tensor::matrix(3, 4, (0..12).map(|i| f64::from(i % 3 == 0)).collect())?;
    out.push(grad_check(
        "weighted bce",
        |_, v| weighted_bce_loss(v[0], &target, DEFAULT_ALPHA, 1.0 - DEFAULT_ALPHA),
        &[probs.clone()],
        STEP,
        SUITE_TOL,
    )?);
    out.push(grad_check(
        "focal mask loss",
        |_, v| focal_mask_loss(v[0], &target, FOCAL_ALPHA, FOCAL_GAMMA),
        &[probs],
        STEP,
        SUITE_TOL,
    )?);

    let scene = make_scene(
        &SynthConfig {
            points: 16,
            clutter: 0.0,
            ..SynthConfig::default()
        },
        &mut derive_rng(7, 0),
    )?;
    let gt = scene.gt_instances()?;
    let mut rows: Vec<f64> = gt
        .boxes
        .iter()
        .flat_map(|b| b.to_row().into_iter().enumerate().map(|(k, v)| v + if k < 3 { -0.07 } else { 0.05 }))
        .collect();
    rows.extend([0.3, 0.2, 0.1, 1.1, 0.9, 0.8]);
    let boxes = Tensor::matrix(gt.len() + 1, 6, rows)?;
    let scores = random(&mut rng, gt.len() + 1, 1, 0.2, 0.8);
    let assoc = AssocConfig::default();
    out.push(grad_check(
        "box loss, fixed assignment",
        |tape, v| assoc_and_losses(v[0], tape.constant(scores.clone()), &scene.points, &gt, &assoc).map(|l| l.bbox),
        &[boxes.clone()],
        STEP,
        SUITE_TOL,
    )?);
    out.push(grad_check(
        "score loss",
        |tape, v| assoc_and_losses(tape.constant(boxes.clone()), v[0], &scene.points, &gt, &assoc).map(|l| l.bbs),
        &[scores],
        STEP,
        SUITE_TOL,
    )?);

    let pts = points_tensor(&scene.points)?;
    let one_box = Tensor::row_vector(boxes.row(0).to_vec());
    let qbar = gt.masks[0].to_column();
    let soft = SoftBoxParams::default();
    out.push(grad_check(
        "soft point in box",
        |tape, v| Ok(soft_point_in_box_var(tape.constant(pts.clone()), v[0], soft)?.sum()),
        &[one_box.clone()],
        STEP,
        SUITE_TOL,
    )?);
    out.push(grad_check(
        "euclidean cost",
        |tape, v| cost_euclidean_var(v[0], tape.constant(Tensor::row_vector(gt.boxes[0].to_row().to_vec()))),
        &[one_box.clone()],
        STEP,
        SUITE_TOL,
    )?);
    out.push(grad_check(
        "soft iou cost",
        |tape, v| cost_siou_var(soft_point_in_box_var(tape.constant(pts.clone()), v[0], soft)?, &qbar),
        &[one_box.clone()],
        STEP,
        SUITE_TOL,
    )?);
    out.push(grad_check(
        "cross-entropy cost",
        |tape, v| cost_ces_var(soft_point_in_box_var(tape.constant(pts.clone()), v[0], soft)?, &qbar),
        &[one_box],
        STEP,
        SUITE_TOL,
    )?);

    let model = BonetModel::new(
        BonetConfig {
            boxes: 4,
            ..BonetConfig::default()
        },
        &mut derive_rng(7, 1),
    )?;
    let ts = TrainScene::new(&model, scene)?;
    // The full gradient; the stop-gradient variant is not a derivative of the loss.
    let loss_cfg = LossConfig {
        mask_box_gradient: true,
        ..LossConfig::default()
    };
    let mut checked: Vec<ParamId> = model.store.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
    checked.extend(model.store.find("mask.box.weight"));
    out.push(check_params("combined instance loss, 16 points", &model.store, &checked, |tape, p| {
        scene_losses(&model, p, tape, &ts, &loss_cfg).map(|t| t.total)
    })?);

    let feats = random(&mut rng, 3, 5, -1.0, 1.0);
    out.push(grad_check("mean feature", |_, v| Ok(mean_feature_rows(v[0])?.square()?.sum()), &[feats], STEP, SUITE_TOL)?);

    let (l_en, l_gan) = (Tensor::scalar(0.7), Tensor::scalar(-0.3));
    out.push(grad_check(
        "joint generator loss",
        |_, v| joint_gen_loss_var(v[0].square()?, v[1], DEFAULT_BETA),
        &[l_en, l_gan],
        STEP,
        SUITE_TOL,
    )?);

    let (fake, real, cond) = (
        random(&mut rng, 3, 2, -1.0, 1.0),
        random(&mut rng, 3, 2, -1.0, 1.0),
        random(&mut rng, 3, 2, 0.0, 1.0),
    );
    let critic_w = random(&mut rng, 4, 3, -1.0, 1.0);
    let mix = [0.2, 0.5, 0.9];
    out.push(grad_check(
        "gradient penalty critic loss",
        |tape, v| {
            let w = v[0];
            let critic = |x, c| mean_feature_rows(Var::concat(&[x, c], 1)?.matmul(w)?.sigmoid());
            let l = wgan_gp_losses(critic, tape.constant(cond.clone()), tape.constant(fake.clone()), tape.constant(real.clone()), &mix, 10.0, 1e-4)?;
            Ok(l.disc)
        },
        &[critic_w],
        STEP,
        SUITE_TOL,
    )?);
    Ok(out)
}
