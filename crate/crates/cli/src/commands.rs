use std::path::PathBuf;

use setlab_core::assoc::BBox;
use setlab_core::bonet::{
    evaluate_bonet, make_scene_splits, mean_losses, model_config_for, run_bonet_experiment, BlockConfig,
    BonetExperimentConfig, BonetModel, InferConfig, LossRecord, TrainScene,
};
use setlab_core::faset::{average_over_seeds, run_experiment, ExperimentConfig, Regime};
use setlab_core::gradsuite::gradient_suite;
use setlab_core::io::{read_params, write_multiview, write_params, write_scenes, write_voxgrid, Settings};
use setlab_core::metrics::gan::{run_gan_demo, GanDemoConfig};
use setlab_core::rng::derive_rng;
use setlab_core::synth::{make_multiview_dataset, make_scenes, voxelize_points, SynthConfig};
use setlab_core::{Error, Result};

use crate::output::{csv, run_parallel, Output};
use crate::resolve::{synth_config, Resolver};
use crate::svg::{line_plot, Series};
use crate::Outcome;

pub struct Context {
    pub settings: Settings,
    pub out: PathBuf,
    pub jobs: usize,
}

/// Master seed and the number of consecutive seeds to run.
fn seeds(r: &mut Resolver) -> Result<(u64, u64)> {
    let (mut seed, mut count) = (0u64, 3u64);
    r.field("seed", &mut seed)?;
    r.field("seeds", &mut count)?;
    if count == 0 {
        return Err(Error::Config("seeds must be positive".into()));
    }
    Ok((seed, count))
}

pub fn synth(ctx: Context) -> Result<Outcome> {
    let mut r = Resolver::new(ctx.settings);
    let mut cfg = SynthConfig::default();
    r.field("seed", &mut cfg.seed)?;
    synth_config(&mut r, &mut cfg)?;
    let (mut multiview, mut scenes) = (cfg.samples, 16usize);
    r.field("synth.multiview_samples", &mut multiview)?;
    r.field("synth.scenes", &mut scenes)?;
    let snapshot = r.finish()?;

    let views = make_multiview_dataset(&SynthConfig { samples: multiview, ..cfg.clone() }, 0)?;
    let scene_set = make_scenes(&SynthConfig { samples: scenes, ..cfg.clone() }, 0)?;
    let mut out = Output::new(ctx.out);
    out.add("multiview.txt", write_multiview(&views));
    out.add("scenes.txt", write_scenes(&scene_set));
    if let Some(first) = scene_set.first() {
        let extent = BBox::new([0.0; 3], cfg.extent);
        out.add("scene0_voxels.txt", write_voxgrid(&voxelize_points(&first.points, cfg.grid, &extent)));
    }
    out.add(
        "manifest.txt",
        format!(
            "seed = {}\nmultiview_samples = {}\nscenes = {}\nscene_points = {}\nfiles = multiview.txt,scenes.txt,scene0_voxels.txt\n",
            cfg.seed,
            views.len(),
            scene_set.len(),
            scene_set.iter().map(|s| s.len()).sum::<usize>()
        ),
    );
    out.add("config.txt", snapshot);
    out.commit()?;
    println!("wrote {} multi-view samples and {} scenes", views.len(), scene_set.len());
    Ok(Outcome::Success)
}

pub fn gradcheck(ctx: Context) -> Result<Outcome> {
    let mut r = Resolver::new(ctx.settings);
    r.field("seed", &mut 0u64)?;
    let snapshot = r.finish()?;
    let reports = gradient_suite()?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    for rep in &reports {
        println!("{:<40} {:>12.3e} {}", rep.name, rep.max_rel_error, if rep.passed { "ok" } else { "FAIL" });
    }
    let rows = reports.iter().map(|rep| {
        vec![rep.name.clone(), rep.max_rel_error.to_string(), rep.tol.to_string(), rep.passed.to_string()]
    });
    let mut out = Output::new(ctx.out);
    out.add("gradcheck.csv", csv(&["check", "max_rel_error", "tol", "passed"], rows));
    out.add("config.txt", snapshot);
    out.commit()?;
    println!("{} of {} checks passed", reports.len() - failed.len(), reports.len());
    Ok(if failed.is_empty() {
        Outcome::Success
    } else {
        Outcome::CheckFailed(format!("gradient checks failed: {}", failed.join(", ")))
    })
}

fn faset_config(r: &mut Resolver) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    synth_config(r, &mut cfg.data)?;
    r.field("faset.train_samples", &mut cfg.train_samples)?;
    r.field("faset.test_samples", &mut cfg.test_samples)?;
    r.field("faset.batch", &mut cfg.batch)?;
    r.field("faset.stage1_iterations", &mut cfg.stage1_iterations)?;
    r.field("faset.stage2_iterations", &mut cfg.stage2_iterations)?;
    r.field("faset.stage1_lr", &mut cfg.stage1_lr)?;
    r.field("faset.stage2_lr", &mut cfg.stage2_lr)?;
    r.field("faset.finetune_lr", &mut cfg.finetune_lr)?;
    r.field("faset.joint_lr", &mut cfg.joint_lr)?;
    r.field("faset.stage2_views", &mut cfg.stage2_views)?;
    r.field("faset.joint_views", &mut cfg.joint_views)?;
    r.list("faset.baselines", &mut cfg.baselines)?;
    r.list("faset.eval_views", &mut cfg.eval_views)?;
    r.field("model.hidden", &mut cfg.model.hidden)?;
    r.field("model.feature", &mut cfg.model.feature)?;
    r.field("model.decoder_hidden", &mut cfg.model.decoder_hidden)?;
    cfg.model.view_dim = cfg.data.view_dim;
    cfg.model.grid = cfg.data.grid;
    if cfg.eval_views.is_empty() || cfg.eval_views.iter().any(|&n| n == 0 || n > cfg.data.views) {
        return Err(Error::Config(format!("eval_views must lie in 1..={}", cfg.data.views)));
    }
    Ok(cfg)
}

fn series_name(model: impl std::fmt::Display, regime: Regime) -> String {
    format!("{model}+{regime}")
}

pub fn faset(ctx: Context) -> Result<Outcome> {
    let mut r = Resolver::new(ctx.settings);
    let (seed, count) = seeds(&mut r)?;
    let cfg = faset_config(&mut r)?;
    let mut log_every = 50usize;
    r.field("faset.log_every", &mut log_every)?;
    let log_every = log_every.max(1);
    let snapshot = r.finish()?;

    let results = run_parallel(ctx.jobs, (seed..seed + count).collect(), |s| run_experiment(&cfg, s))?;
    let mean = average_over_seeds(&results);
    let mut out = Output::new(ctx.out);
    out.add(
        "faset.csv",
        csv(
            &["model", "regime", "views", "iou"],
            mean.iter().map(|m| vec![m.model.to_string(), m.regime.to_string(), m.views.to_string(), m.iou.to_string()]),
        ),
    );
    out.add(
        "faset_seeds.csv",
        csv(
            &["seed", "model", "regime", "views", "iou"],
            results.iter().flat_map(|res| &res.records).map(|m| {
                vec![m.seed.to_string(), m.model.to_string(), m.regime.to_string(), m.views.to_string(), m.iou.to_string()]
            }),
        ),
    );
    let mut curve_rows = Vec::new();
    for (s, res) in (seed..).zip(&results) {
        for c in &res.curves {
            for (step, loss) in c.losses.iter().enumerate() {
                if step % log_every == 0 || step + 1 == c.losses.len() {
                    curve_rows.push(vec![s.to_string(), c.name.clone(), step.to_string(), loss.to_string()]);
                }
            }
        }
    }
    out.add("faset_curves.csv", csv(&["seed", "curve", "step", "loss"], curve_rows));
    let mut series: Vec<Series> = Vec::new();
    for m in &mean {
        let name = series_name(m.model, m.regime);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((m.views as f64, m.iou)),
            None => series.push(Series {
                name,
                points: vec![(m.views as f64, m.iou)],
            }),
        }
    }
    out.add("faset.svg", line_plot("Voxel IoU by number of views", "views N", "IoU", &series));
    out.add("config.txt", snapshot);
    out.commit()?;
    for m in &mean {
        println!("{:<24} N={:<2} IoU {:.4}", series_name(m.model, m.regime), m.views, m.iou);
    }
    Ok(Outcome::Success)
}

fn bonet_config(r: &mut Resolver) -> Result<BonetExperimentConfig> {
    let mut cfg = BonetExperimentConfig::default();
    synth_config(r, &mut cfg.data)?;
    r.field("bonet.train_scenes", &mut cfg.train_scenes)?;
    r.field("bonet.test_scenes", &mut cfg.test_scenes)?;
    r.field("bonet.iou", &mut cfg.iou)?;
    r.field("bonet.ablation", &mut cfg.ablation)?;
    let m = &mut cfg.model;
    r.field("model.boxes", &mut m.boxes)?;
    r.list("model.embed_hidden", &mut m.embed_hidden)?;
    r.field("model.feature", &mut m.feature)?;
    r.field("model.mask_width", &mut m.mask_width)?;
    r.field("model.box_hidden", &mut m.box_hidden)?;
    r.field("model.embed_gain", &mut m.embed_gain)?;
    let t = &mut cfg.train;
    r.field("train.iterations", &mut t.iterations)?;
    r.field("train.batch", &mut t.batch)?;
    r.field("train.lr", &mut t.lr)?;
    r.field("train.final_lr_fraction", &mut t.final_lr_fraction)?;
    let mut subsample = t.subsample.unwrap_or(0);
    r.field("train.subsample", &mut subsample)?;
    t.subsample = (subsample > 0).then_some(subsample);
    r.field("train.augment", &mut t.augment)?;
    let l = &mut t.loss;
    r.field("loss.focal_alpha", &mut l.focal_alpha)?;
    r.field("loss.focal_gamma", &mut l.focal_gamma)?;
    r.field("loss.mask_box_gradient", &mut l.mask_box_gradient)?;
    r.field("loss.score_branch", &mut l.score_branch)?;
    r.field("loss.euclidean", &mut l.assoc.criteria.euclidean)?;
    r.field("loss.siou", &mut l.assoc.criteria.siou)?;
    r.field("loss.ces", &mut l.assoc.criteria.ces)?;
    r.field("loss.theta1", &mut l.assoc.soft_box.theta1)?;
    r.field("loss.theta2", &mut l.assoc.soft_box.theta2)?;
    r.field("loss.straight_through", &mut l.assoc.straight_through)?;
    cfg.model.classes = setlab_core::synth::SemanticClass::COUNT;
    model_config_for(&cfg.data, &cfg.model).validate()?;
    Ok(cfg)
}

fn block_config(r: &mut Resolver) -> Result<BlockConfig> {
    let mut b = BlockConfig::default();
    r.field("blocks.size", &mut b.size)?;
    r.field("blocks.overlap", &mut b.overlap)?;
    r.field("blocks.cell", &mut b.cell)?;
    b.validate()?;
    Ok(b)
}

fn checkpoint_name(seed: u64) -> String {
    format!("bonet_seed{seed}.ckpt")
}

fn loss_row(prefix: Vec<String>, rec: &LossRecord) -> Vec<String> {
    let mut row = prefix;
    row.extend([rec.total, rec.semantic, rec.bbox, rec.bbs, rec.pmask].map(|v| v.to_string()));
    row
}

const LOSS_COLUMNS: [&str; 5] = ["total", "semantic", "bbox", "bbs", "pmask"];

pub fn bonet_train(ctx: Context) -> Result<Outcome> {
    let mut r = Resolver::new(ctx.settings);
    let (seed, count) = seeds(&mut r)?;
    let cfg = bonet_config(&mut r)?;
    block_config(&mut r)?;
    let mut log_every = 100usize;
    r.field("train.log_every", &mut log_every)?;
    let log_every = log_every.max(1);
    let snapshot = r.finish()?;

    let runs = run_parallel(ctx.jobs, (seed..seed + count).collect(), |s| run_bonet_experiment(&cfg, s))?;
    let mut out = Output::new(ctx.out);
    let mut metric_rows = Vec::new();
    let mut curve_rows = Vec::new();
    let (mut full_sum, mut abl_sum, mut abl_n) = ([0.0; 2], [0.0; 2], 0usize);
    for (model, res) in &runs {
        out.add(checkpoint_name(res.seed), write_params(&model.store));
        metric_rows.push(vec![res.seed.to_string(), "full".into(), res.full.mprec.to_string(), res.full.mrec.to_string()]);
        full_sum[0] += res.full.mprec;
        full_sum[1] += res.full.mrec;
        if let Some(a) = &res.ablated {
            metric_rows.push(vec![res.seed.to_string(), "no-score-branch".into(), a.mprec.to_string(), a.mrec.to_string()]);
            abl_sum[0] += a.mprec;
            abl_sum[1] += a.mrec;
            abl_n += 1;
        }
        for (variant, curve) in [("full", &res.curve), ("no-score-branch", &res.ablated_curve)] {
            for (step, rec) in curve.iter().enumerate() {
                if step % log_every == 0 || step + 1 == curve.len() {
                    curve_rows.push(loss_row(vec![variant.into(), res.seed.to_string(), step.to_string()], rec));
                }
            }
        }
    }
    let n = runs.len() as f64;
    metric_rows.push(vec!["mean".into(), "full".into(), (full_sum[0] / n).to_string(), (full_sum[1] / n).to_string()]);
    if abl_n > 0 {
        let k = abl_n as f64;
        metric_rows.push(vec!["mean".into(), "no-score-branch".into(), (abl_sum[0] / k).to_string(), (abl_sum[1] / k).to_string()]);
    }
    for row in &metric_rows {
        println!("seed {:<5} {:<16} mPrec {:>8} mRec {:>8}", row[0], row[1], &row[2][..row[2].len().min(6)], &row[3][..row[3].len().min(6)]);
    }
    out.add("metrics.csv", csv(&["seed", "variant", "mprec", "mrec"], metric_rows));
    let mut header = vec!["variant", "seed", "step"];
    header.extend(LOSS_COLUMNS);
    out.add("curves.csv", csv(&header, curve_rows));
    out.add("config.txt", snapshot);
    out.commit()?;
    Ok(Outcome::Success)
}

pub fn bonet_eval(ctx: Context, blocks: bool) -> Result<Outcome> {
    let mut r = Resolver::new(ctx.settings);
    let (seed, count) = seeds(&mut r)?;
    let cfg = bonet_config(&mut r)?;
    let block_cfg = block_config(&mut r)?;
    // One file drives both modes.
    r.field("train.log_every", &mut 100usize)?;
    let snapshot = r.finish()?;
    let mode = if blocks { "blocks" } else { "whole" };

    let rows = run_parallel(ctx.jobs, (seed..seed + count).collect(), |s| -> Result<Vec<Vec<String>>> {
        let path = ctx.out.join(checkpoint_name(s));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let mut model = BonetModel::new(model_config_for(&cfg.data, &cfg.model), &mut derive_rng(s, 1))?;
        read_params(&mut model.store, &text)?;
        let (train, test) = make_scene_splits(&cfg, s)?;
        let infer = InferConfig::for_loss(&cfg.train.loss);
        let mut rows = Vec::new();
        for (split, scenes) in [("train", train), ("test", test)] {
            let pr = evaluate_bonet(&model, &scenes, &infer, blocks.then_some(&block_cfg), cfg.iou)?;
            let prepared = scenes.into_iter().map(|sc| TrainScene::new(&model, sc)).collect::<Result<Vec<_>>>()?;
            let losses = mean_losses(&model, &prepared, &cfg.train.loss)?;
            rows.push(loss_row(
                vec![s.to_string(), split.into(), mode.into(), pr.mprec.to_string(), pr.mrec.to_string()],
                &losses,
            ));
        }
        Ok(rows)
    })?;
    let rows: Vec<Vec<String>> = rows.into_iter().flatten().collect();
    for row in &rows {
        println!("seed {:<5} {:<5} {:<6} mPrec {} mRec {}", row[0], row[1], row[2], row[3], row[4]);
    }
    let mut header = vec!["seed", "split", "mode", "mprec", "mrec"];
    header.extend(LOSS_COLUMNS);
    let mut out = Output::new(ctx.out);
    out.add(format!("eval_{mode}.csv"), csv(&header, rows));
    out.add(format!("eval_{mode}_config.txt"), snapshot);
    out.commit()?;
    Ok(Outcome::Success)
}

pub fn gandemo(ctx: Context) -> Result<Outcome> {
    let mut r = Resolver::new(ctx.settings);
    let mut cfg = GanDemoConfig::default();
    r.field("seed", &mut cfg.seed)?;
    r.field("gan.batch", &mut cfg.batch)?;
    r.field("gan.critic_steps", &mut cfg.critic_steps)?;
    r.field("gan.gen_rounds", &mut cfg.gen_rounds)?;
    r.field("gan.critic_per_gen", &mut cfg.critic_per_gen)?;
    r.field("gan.lambda", &mut cfg.lambda)?;
    r.field("gan.beta", &mut cfg.beta)?;
    r.field("gan.lr", &mut cfg.lr)?;
    r.field("gan.hidden", &mut cfg.hidden)?;
    r.field("gan.features", &mut cfg.features)?;
    r.field("gan.shift", &mut cfg.shift)?;
    r.field("gan.noise", &mut cfg.noise)?;
    r.field("gan.fd_step", &mut cfg.fd_step)?;
    let snapshot = r.finish()?;
    let log = run_gan_demo(&cfg)?;
    let rows = log.iter().map(|s| {
        vec![
            s.step.to_string(),
            s.phase.to_string(),
            s.wasserstein.to_string(),
            s.penalty.to_string(),
            (cfg.lambda * s.penalty).to_string(),
            s.disc_loss.to_string(),
            s.gen_loss.to_string(),
        ]
    });
    let mut out = Output::new(ctx.out);
    out.add("gandemo.csv", csv(&["step", "phase", "wasserstein", "penalty", "gp_term", "disc_loss", "gen_loss"], rows));
    out.add("config.txt", snapshot);
    out.commit()?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!(
            "{} critic steps; wasserstein {:.4} -> {:.4}; penalty {:.4} -> {:.4}",
            log.len(),
            first.wasserstein,
            last.wasserstein,
            first.penalty,
            last.penalty
        );
    }
    Ok(Outcome::Success)
}
