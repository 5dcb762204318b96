//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use setlab_core::aggregate::{Aggregator, AttentionMode, AttentionParams, FeatureSet};
use setlab_core::assoc::{
    cost_siou, focal_mask_loss, hard_point_in_box, hungarian, soft_point_in_box, BBox, CostMatrix, HardMask,
    SoftBoxParams, SoftMask,
};
use setlab_core::bonet::{
    run_bonet_experiment, scene_losses, BonetConfig, BonetExperimentConfig, BonetModel, LossConfig, TrainScene,
};
use setlab_core::faset::{
    average_over_seeds, run_experiment, train_stage1, train_stage2, ExperimentConfig, ExperimentResult, FasetModel,
    ModelConfig, Regime, TrainConfig, ViewCount,
};
use setlab_core::gradsuite::gradient_suite;
use setlab_core::metrics::gan::wgan_gp_losses;
use setlab_core::metrics::{bce_loss, voxel_ce, weighted_bce, VoxelGrid};
use setlab_core::rng::derive_rng;
use setlab_core::synth::{make_multiview_dataset, make_scene, SynthConfig};
use setlab_core::{Tape, Tensor};

const GRAD_SUITE_BUDGET: Duration = Duration::from_secs(60);
const PERMUTATION_TOL: f64 = 1e-9;
const ASSIGNMENT_BUDGET: Duration = Duration::from_secs(10);
const FACE_MARGIN: f64 = 1e-6;
const FASET_BUDGET: Duration = Duration::from_secs(300);
const FASET_GAP: f64 = 0.02;
const POOLING_SLACK: f64 = 0.01;
const BONET_BUDGET: Duration = Duration::from_secs(600);
const BONET_TARGET: f64 = 0.7;
const IDENTITY_TOL: f64 = 1e-12;
const GP_TOL: f64 = 1e-6;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let reports = gradient_suite().map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    check(
        failed.is_empty() && reports.len() >= 12 && took < GRAD_SUITE_BUDGET,
        format!("{} checks, worst relative error {worst:.2e}, failed {failed:?}, {took:.1?}", reports.len()),
    )
}

fn permutation_invariance() -> Verdict {
    let mut rng = derive_rng(11, 0);
    let mut worst: f64 = 0.0;
    for agg in Aggregator::ALL {
        for _ in 0..100 {
            let (n, d) = (rng.gen_range(1..16), 8);
            let x = random(&mut rng, n, d);
            let params = agg.attention_mode().map(|mode| {
                let cols = if mode == AttentionMode::Feature { d } else { 1 };
                AttentionParams::new(mode, random(&mut rng, d, cols)).unwrap()
            });
            let base = agg.eval(&FeatureSet::new(x.clone()).unwrap(), params.as_ref()).unwrap();
            for _ in 0..10 {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let y = agg.eval(&FeatureSet::new(x.gather_rows(&perm).unwrap()).unwrap(), params.as_ref()).unwrap();
                for (a, b) in base.data().iter().zip(y.data()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let model = BonetModel::new(BonetConfig::default(), &mut derive_rng(11, 1)).unwrap();
    let scene = make_scene(&SynthConfig::default(), &mut derive_rng(11, 2)).unwrap();
    let loss = |s: &TrainScene| {
        let tape = Tape::new();
        let p = model.store.bind_frozen(&tape);
        scene_losses(&model, &p, &tape, s, &LossConfig::default()).unwrap().total.item()
    };
    let base = loss(&TrainScene::new(&model, scene.clone()).unwrap());
    let mut scene_worst: f64 = 0.0;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..scene.len()).collect();
        perm.shuffle(&mut rng);
        let permuted = TrainScene::new(&model, scene.permuted(&perm).unwrap()).unwrap();
        scene_worst = scene_worst.max((loss(&permuted) - base).abs());
    }
    check(
        worst < PERMUTATION_TOL && scene_worst < PERMUTATION_TOL,
        format!("aggregator deviation {worst:.1e}, scene loss deviation {scene_worst:.1e}"),
    )
}

fn bits(ts: &[Tensor]) -> Vec<u64> {
    ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

fn faset_structure() -> Verdict {
    let data = make_multiview_dataset(&SynthConfig { samples: 16, ..SynthConfig::default() }, 0).unwrap();
    let mut m = FasetModel::new(ModelConfig::default(), &mut derive_rng(12, 0));
    let get = |m: &FasetModel, ids: Vec<_>| -> Vec<Tensor> { ids.into_iter().map(|id| m.store.get(id).clone()).collect() };
    let tc = |views, seed| TrainConfig { views, batch: 8, iterations: 40, lr: 3e-3, seed };
    let att0 = get(&m, m.att_ids());
    train_stage1(&mut m, &data, &tc(ViewCount::Fixed(1), 1)).unwrap();
    let att_kept = bits(&att0) == bits(&get(&m, m.att_ids()));
    let base1 = get(&m, m.base_ids());
    train_stage2(&mut m, &data, &tc(ViewCount::Uniform { max: 8 }, 2)).unwrap();
    let base_kept = bits(&base1) == bits(&get(&m, m.base_ids()));
    let att_moved = bits(&get(&m, m.att_ids())) != bits(&att0);

    let tape = Tape::new();
    let p = m.store.bind_all(&tape);
    let sets: Vec<Tensor> = data.samples.iter().map(|s| s.views.gather_rows(&[0]).unwrap()).collect();
    let targets: Vec<&VoxelGrid> = data.samples.iter().map(|s| &s.target).collect();
    let loss = m.loss(&p, &tape, &sets.iter().collect::<Vec<_>>(), &targets).unwrap();
    let grads = p.grads(&tape.backward(loss).unwrap());
    let att_zero = m.att_ids().iter().all(|id| grads[id.0].as_ref().unwrap().data().iter().all(|&g| g == 0.0));
    check(
        att_kept && base_kept && att_moved && att_zero,
        format!("attention kept by stage 1: {att_kept}, base kept by stage 2: {base_kept}, attention gradient at N=1 exactly zero: {att_zero}"),
    )
}

fn assignment_oracle() -> Verdict {
    fn brute(c: &CostMatrix, j: usize, used: &mut [bool], acc: f64) -> f64 {
        if j == c.t {
            return acc;
        }
        let mut best = f64::INFINITY;
        for i in 0..c.h {
            if !used[i] {
                used[i] = true;
                best = best.min(brute(c, j + 1, used, acc + c.at(i, j)));
                used[i] = false;
            }
        }
        best
    }
    let start = Instant::now();
    let mut rng = derive_rng(13, 0);
    let (mut mismatches, mut violations) = (0, 0);
    for _ in 0..500 {
        let h = rng.gen_range(1..=6);
        let t = rng.gen_range(1..=h);
        let c = CostMatrix::from_total(h, t, (0..h * t).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let a = hungarian(&c).unwrap();
        let mut used = vec![false; h];
        for &i in &a.pred_of {
            if i >= h || std::mem::replace(&mut used[i], true) {
                violations += 1;
            }
        }
        violations += usize::from(a.pred_of.len() != t);
        let total: f64 = a.pred_of.iter().enumerate().map(|(j, &i)| c.at(i, j)).sum();
        mismatches += usize::from(total != brute(&c, 0, &mut vec![false; h], 0.0));
    }
    let took = start.elapsed();
    check(
        mismatches == 0 && violations == 0 && took < ASSIGNMENT_BUDGET,
        format!("500 matrices, {mismatches} cost mismatches, {violations} constraint violations, {took:.1?}"),
    )
}

fn point_in_box() -> Verdict {
    let mut rng = derive_rng(14, 0);
    let (mut compared, mut disagree) = (0, 0);
    for _ in 0..10_000 {
        let lo: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let hi: [f64; 3] = std::array::from_fn(|a| lo[a] + rng.gen_range(0.01..3.0));
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-3.0..5.0));
        let b = BBox::new(lo, hi);
        if b.face_distance(&p) <= FACE_MARGIN {
            continue;
        }
        compared += 1;
        let soft = soft_point_in_box(&[p], &b, SoftBoxParams::default()).unwrap().0[0] >= 0.5;
        let hard = hard_point_in_box(&[p], &b).0[0] == 1.0;
        disagree += usize::from(soft != hard);
    }
    check(disagree == 0, format!("{compared} pairs compared, {disagree} disagreements"))
}

fn faset_trend() -> Verdict {
    let cfg = ExperimentConfig { eval_views: vec![1, 8], ..ExperimentConfig::default() };
    let start = Instant::now();
    let results: Vec<ExperimentResult> = (0..3).map(|s| run_experiment(&cfg, s).unwrap()).collect();
    let took = start.elapsed();
    let mean = ExperimentResult { records: average_over_seeds(&results), curves: Vec::new() };
    let iou = |m, r, n| mean.iou(m, r, n).unwrap();
    let faset1 = iou(Aggregator::AttSets, Regime::Faset, 1);
    let faset8 = iou(Aggregator::AttSets, Regime::Faset, 8);
    let joint1 = iou(Aggregator::AttSets, Regime::Joint, 1);
    let pools: Vec<(Aggregator, f64)> =
        [Aggregator::Max, Aggregator::Mean, Aggregator::Sum].into_iter().map(|a| (a, iou(a, Regime::Faset, 8))).collect();
    let a = faset1 - joint1 >= FASET_GAP;
    let b = faset8 >= faset1;
    let c = pools.iter().all(|&(_, v)| faset8 >= v - POOLING_SLACK);
    let pools: Vec<String> = pools.iter().map(|(a, v)| format!("{a} {v:.4}")).collect();
    check(
        a && b && c && took < FASET_BUDGET,
        format!(
            "(a) faset N=1 {faset1:.4} vs joint N=1 {joint1:.4}: {a}; (b) faset N=8 {faset8:.4}: {b}; (c) pooling N=8 [{}]: {c}; {took:.0?}",
            pools.join(", ")
        ),
    )
}

fn bonet_toy() -> Verdict {
    let full_cfg = BonetExperimentConfig { ablation: false, ..BonetExperimentConfig::default() };
    let ablated_cfg = BonetExperimentConfig {
        train: setlab_core::bonet::BonetTrainConfig {
            loss: LossConfig { score_branch: false, ..full_cfg.train.loss },
            ..full_cfg.train.clone()
        },
        ..full_cfg.clone()
    };
    let start = Instant::now();
    let full: Vec<_> = (0..3).map(|s| run_bonet_experiment(&full_cfg, s).unwrap().1.full).collect();
    let took = start.elapsed();
    let ablated: Vec<_> = (0..3).map(|s| run_bonet_experiment(&ablated_cfg, s).unwrap().1.full).collect();
    let mean = |v: &[setlab_core::bonet::PrecRec], f: fn(&setlab_core::bonet::PrecRec) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let (prec, rec) = (mean(&full, |p| p.mprec), mean(&full, |p| p.mrec));
    let abl_prec = mean(&ablated, |p| p.mprec);
    let per_seed: Vec<String> = full.iter().map(|p| format!("{:.3}/{:.3}", p.mprec, p.mrec)).collect();
    check(
        prec >= BONET_TARGET && rec >= BONET_TARGET && abl_prec <= prec && took < BONET_BUDGET,
        format!(
            "mPrec {prec:.4} mRec {rec:.4} (per seed {}), without score branch mPrec {abl_prec:.4}, training {took:.0?}",
            per_seed.join(", ")
        ),
    )
}

fn loss_identities() -> Verdict {
    let mut rng = derive_rng(16, 0);
    let pred = VoxelGrid::new(4, (0..64).map(|_| rng.gen_range(0.01..0.99)).collect()).unwrap();
    let gt = VoxelGrid::new(4, (0..64).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect()).unwrap();
    let wbce = (weighted_bce(&pred, &gt, 0.5).unwrap() - 0.5 * voxel_ce(&pred, &gt).unwrap()).abs();
    let tape = Tape::new();
    let m = tape.constant(pred.to_tensor());
    let target = gt.to_tensor();
    let focal = (focal_mask_loss(m, &target, 0.5, 0.0).unwrap().item() - 0.5 * bce_loss(m, &target).unwrap().item()).abs();
    let mask: Vec<f64> = gt.data().to_vec();
    let siou = cost_siou(&SoftMask(mask.clone()), &HardMask(mask)).unwrap();
    let u = [0.6, -0.8];
    let fake = random(&mut rng, 6, 2);
    let real = random(&mut rng, 6, 2);
    let cond = random(&mut rng, 6, 1);
    let mix: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ucol = tape.constant(Tensor::matrix(2, 1, u.to_vec()).unwrap());
    let gp = wgan_gp_losses(|x, _| x.matmul(ucol), tape.constant(cond), tape.constant(fake), tape.constant(real), &mix, 10.0, 1e-4)
        .unwrap()
        .penalty
        .item();
    check(
        wbce < IDENTITY_TOL && focal < IDENTITY_TOL && siou == -1.0 && gp.abs() < GP_TOL,
        format!("weighted-bce gap {wbce:.1e}, focal gap {focal:.1e}, siou {siou}, gradient penalty {gp:.1e}"),
    )
}

fn run_cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_setlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let runs: [&[&str]; 6] = [
        &["synth", "--seed", "5", "--set", "synth.scenes=4", "--set", "synth.multiview_samples=8"],
        &["gradcheck"],
        &["gandemo", "--set", "gan.critic_steps=20", "--set", "gan.gen_rounds=4"],
        &[
            "faset", "--set", "seeds=1", "--set", "faset.train_samples=16", "--set", "faset.test_samples=8",
            "--set", "faset.stage1_iterations=10", "--set", "faset.stage2_iterations=5", "--set", "faset.eval_views=1,2",
            "--set", "faset.batch=4",
        ],
        &[
            "bonet", "train", "--set", "seeds=1", "--set", "bonet.train_scenes=4", "--set", "bonet.test_scenes=2",
            "--set", "train.iterations=10", "--set", "bonet.ablation=false", "--set", "train.log_every=2",
        ],
        &[
            "bonet", "eval", "--set", "seeds=1", "--set", "bonet.train_scenes=4", "--set", "bonet.test_scenes=2",
            "--set", "train.iterations=10", "--set", "bonet.ablation=false",
        ],
    ];
    let root = std::env::temp_dir().join(format!("setlab-acceptance-{}", std::process::id()));
    let mut compared = 0;
    let mut result = Ok(());
    'outer: for (k, args) in runs.iter().enumerate() {
        // The eval step reads the checkpoint written by the train step in the same directory.
        let sub = if args[0] == "bonet" { "bonet".to_string() } else { format!("run{k}") };
        let dirs = [root.join("a").join(&sub), root.join("b").join(&sub)];
        for d in &dirs {
            if let Err(e) = run_cli(d, args) {
                result = Err(e);
                break 'outer;
            }
        }
        if args[0] == "bonet" && args[1] == "train" {
            continue;
        }
        let (a, b) = (dir_contents(&dirs[0]), dir_contents(&dirs[1]));
        compared += a.len();
        if a != b {
            result = Err(format!("outputs of {args:?} differ"));
            break;
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    result?;
    check(compared > 0, format!("{compared} files byte-identical across reruns of every subcommand"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("1 gradient suite", gradient_checks),
        ("2 permutation invariance", permutation_invariance),
        ("3 two-stage structure", faset_structure),
        ("4 assignment oracle", assignment_oracle),
        ("5 point-in-box consistency", point_in_box),
        ("6 set-aggregation trends", faset_trend),
        ("7 toy instance segmentation", bonet_toy),
        ("8 loss identities", loss_identities),
        ("9 determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
