//! Wasserstein adversarial losses with gradient penalty, plus a small
//! two-moons demo that exercises them.
//!
//! The critic's input gradient is taken by central differences over the
//! sample coordinates. Each difference quotient is an ordinary tape
//! expression, so the penalty stays differentiable in the critic weights
//! without second-order autodiff.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::joint_gen_loss_var;
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensor::nn::Mlp;
use crate::tensor::{Adam, ParamStore, Tape, Tensor, Var};

/// Critic feature vector reduced to its mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscOutput {
    pub features: Vec<f64>,
    pub mean: f64,
}

pub fn mean_feature(features: &[f64]) -> Result<DiscOutput> {
    if features.is_empty() {
        return Err(Error::EmptySet("mean_feature"));
    }
    let mean = features.iter().sum::<f64>() / features.len() as f64;
    Ok(DiscOutput {
        features: features.to_vec(),
        mean,
    })
}

/// Per-row mean of a `B × F` feature matrix on the tape (`B × 1`).
pub fn mean_feature_rows<'t>(features: Var<'t>) -> Result<Var<'t>> {
    let f = features.value().cols();
    Ok(features.sum_axis(1)?.scale(1.0 / f as f64))
}

#[derive(Clone, Copy, Debug)]
pub struct GanLosses<'t> {
    /// `-E[D(fake)]`
    pub gen: Var<'t>,
    /// `E[D(fake)] - E[D(real)] + λ·penalty`
    pub disc: Var<'t>,
    /// `E[(‖∇D(ŷ)‖ - 1)²]`, before weighting.
    pub penalty: Var<'t>,
    /// `E[D(real)] - E[D(fake)]`
    pub wasserstein: f64,
}

/// WGAN-GP generator and critic losses.
///
/// `critic(samples, cond)` must return one scalar per row (`B × 1`).
/// `mix[b]` is the interpolation weight of row `b`:
/// `ŷ_b = mix_b·real_b + (1 - mix_b)·fake_b`. Interpolants are detached
/// from the generator. `h` is the central-difference step.
pub fn wgan_gp_losses<'t, C>(
    critic: C,
    cond: Var<'t>,
    fake: Var<'t>,
    real: Var<'t>,
    mix: &[f64],
    lambda: f64,
    h: f64,
) -> Result<GanLosses<'t>>
where
    C: Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    let tape = fake.tape();
    let (fv, rv, cv) = (fake.value(), real.value(), cond.value());
    if fv.shape() != rv.shape() || fv.rank() != 2 {
        return Err(Error::shape("wgan_gp_losses", fv.shape(), rv.shape()));
    }
    let (b, k) = (fv.rows(), fv.cols());
    if cv.rows() != b || mix.len() != b {
        return Err(Error::shape("wgan_gp_losses", &[b], &[cv.rows(), mix.len()]));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("difference step must be positive, got {h}")));
    }
    let scored = |x: Var<'t>, c: Var<'t>, rows: usize| -> Result<Var<'t>> {
        let out = critic(x, c)?;
        if out.shape() != [rows, 1] {
            return Err(Error::domain(
                "critic",
                format!("expected one scalar per sample ({rows}×1), got {:?}", out.shape()),
            ));
        }
        Ok(out)
    };
    let d_fake = scored(fake, cond, b)?.mean();
    let d_real = scored(real, cond, b)?.mean();

    // Rows [2(bk + j)] = ŷ_b + h e_j, [2(bk + j) + 1] = ŷ_b - h e_j.
    let mut probe = Vec::with_capacity(2 * b * k * k);
    let mut probe_rows = Vec::with_capacity(2 * b * k);
    for row in 0..b {
        let m = mix[row];
        let base: Vec<f64> = (0..k)
            .map(|j| m * rv.at(row, j) + (1.0 - m) * fv.at(row, j))
            .collect();
        for j in 0..k {
            for sign in [1.0, -1.0] {
                let mut p = base.clone();
                p[j] += sign * h;
                probe.extend(p);
                probe_rows.push(row);
            }
        }
    }
    let probe = tape.constant(Tensor::matrix(2 * b * k, k, probe)?);
    let probe_cond = cond.gather_rows(&probe_rows)?;
    let scores = scored(probe, probe_cond, 2 * b * k)?;
    let plus: Vec<usize> = (0..b * k).map(|i| 2 * i).collect();
    let minus: Vec<usize> = (0..b * k).map(|i| 2 * i + 1).collect();
    let grad = scores
        .gather_rows(&plus)?
        .sub(scores.gather_rows(&minus)?)?
        .scale(1.0 / (2.0 * h))
        .reshape(vec![b, k])?;
    let norm = grad.square()?.sum_axis(1)?.sqrt()?;
    let penalty = norm.add_scalar(-1.0).square()?.mean();

    let gen = d_fake.neg();
    let disc = d_fake.sub(d_real)?.add(penalty.scale(lambda))?;
    Ok(GanLosses {
        gen,
        disc,
        penalty,
        wasserstein: d_real.item() - d_fake.item(),
    })
}

/// Settings of the two-moons WGAN-GP demo.
#[derive(Clone, Debug, PartialEq)]
pub struct GanDemoConfig {
    pub seed: u64,
    pub batch: usize,
    /// Critic-only updates before any generator update.
    pub critic_steps: usize,
    /// Alternating rounds after the critic warm-up.
    pub gen_rounds: usize,
    /// Critic updates per generator update in the alternating phase.
    pub critic_per_gen: usize,
    pub lambda: f64,
    pub beta: f64,
    pub lr: f64,
    pub hidden: usize,
    pub features: usize,
    /// Offset of the fake distribution from the real one.
    pub shift: f64,
    pub noise: f64,
    pub fd_step: f64,
}

impl Default for GanDemoConfig {
    fn default() -> Self {
        GanDemoConfig {
            seed: 0,
            batch: 32,
            critic_steps: 300,
            gen_rounds: 100,
            critic_per_gen: 5,
            lambda: 10.0,
            beta: super::DEFAULT_BETA,
            lr: 1e-3,
            hidden: 32,
            features: 8,
            shift: 1.0,
            noise: 0.05,
            fd_step: 1e-4,
        }
    }
}

/// One logged demo step.
#[derive(Clone, Debug, PartialEq)]
pub struct GanStep {
    pub step: usize,
    pub phase: &'static str,
    pub wasserstein: f64,
    pub penalty: f64,
    pub disc_loss: f64,
    pub gen_loss: f64,
}

/// Two-moons samples; returns `(points B×2, one-hot moon labels B×2)`.
pub fn two_moons(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> Result<(Tensor, Tensor)> {
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut pts = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let upper = rng.gen_bool(0.5);
        let t = rng.gen_range(0.0..std::f64::consts::PI);
        let (x, y) = if upper {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        pts.push(x + normal.sample(rng));
        pts.push(y + normal.sample(rng));
        labels.extend(if upper { [1.0, 0.0] } else { [0.0, 1.0] });
    }
    Ok((Tensor::matrix(n, 2, pts)?, Tensor::matrix(n, 2, labels)?))
}

/// Trains a conditional critic (mean-feature output) against a shifted copy
/// of the real data, then alternates critic updates with updates of a
/// learnable generator offset under the joint reconstruction + adversarial
/// loss. Returns one record per critic update.
pub fn run_gan_demo(cfg: &GanDemoConfig) -> Result<Vec<GanStep>> {
    if cfg.batch == 0 || cfg.hidden == 0 || cfg.features == 0 {
        return Err(Error::Config("batch, hidden and features must be positive".into()));
    }
    if !(cfg.lr > 0.0 && cfg.fd_step > 0.0 && cfg.lambda >= 0.0 && cfg.noise > 0.0) {
        return Err(Error::Config("lr, fd_step and noise must be positive and lambda non-negative".into()));
    }
    if !(0.0..=1.0).contains(&cfg.beta) {
        return Err(Error::Config("beta must lie in [0, 1]".into()));
    }
    let mut init_rng = derive_rng(cfg.seed, 0);
    let mut store = ParamStore::new();
    let critic = Mlp::new(&mut store, &mut init_rng, "critic", "critic", &[4, cfg.hidden, cfg.hidden, cfg.features]);
    // Zero output layer: the critic starts as the constant 0.
    let last = *critic.layers.last().expect("critic has layers");
    *store.get_mut(last.weight) = Tensor::zeros(vec![cfg.hidden, cfg.features]);
    if let Some(b) = last.bias {
        *store.get_mut(b) = Tensor::zeros(vec![1, cfg.features]);
    }
    let offset = store.add("gen.offset", "gen", Tensor::zeros(vec![1, 2]));
    let critic_ids: Vec<_> = store.ids_in_group("critic").collect();
    let mut critic_opt = Adam::new(critic_ids, cfg.lr);
    let mut gen_opt = Adam::new(vec![offset], cfg.lr * 10.0);

    let mut data_rng = derive_rng(cfg.seed, 1);
    let mut log = Vec::new();
    let total = cfg.critic_steps + cfg.gen_rounds * cfg.critic_per_gen.max(1);
    let gen_step_due = |k: usize| k >= cfg.critic_steps && (k - cfg.critic_steps + 1) % cfg.critic_per_gen.max(1) == 0;

    for step in 0..total {
        let (real, labels) = two_moons(&mut data_rng, cfg.batch, cfg.noise)?;
        let source = real.map(|v| v + cfg.shift);
        let mix: Vec<f64> = (0..cfg.batch).map(|_| data_rng.gen_range(0.0..1.0)).collect();

        let tape = Tape::new();
        let train_critic = |p: &crate::tensor::Param| p.group == "critic";
        let bound = store.bind(&tape, train_critic);
        let cond = tape.constant(labels.clone());
        let off = bound.var(offset).broadcast_rows(cfg.batch)?;
        let fake = tape.constant(source.clone()).add(off)?;
        let real_v = tape.constant(real.clone());
        // The generator is frozen here, so `fake` acts as a constant.
        let losses = wgan_gp_losses(
            |x, c| mean_feature_rows(critic.forward(&bound, Var::concat(&[x, c], 1)?, false)?),
            cond,
            fake,
            real_v,
            &mix,
            cfg.lambda,
            cfg.fd_step,
        )?;
        losses.disc.value().ensure_finite("critic loss")?;
        let grads = tape.backward(losses.disc)?;
        critic_opt.step(&mut store, &bound.grads(&grads))?;
        log.push(GanStep {
            step,
            phase: if step < cfg.critic_steps { "critic" } else { "joint" },
            wasserstein: losses.wasserstein,
            penalty: losses.penalty.item(),
            disc_loss: losses.disc.item(),
            gen_loss: losses.gen.item(),
        });

        if gen_step_due(step) {
            let tape = Tape::new();
            let bound = store.bind(&tape, |p| p.group == "gen");
            let off = bound.var(offset).broadcast_rows(cfg.batch)?;
            let fake = tape.constant(source).add(off)?;
            let cond = tape.constant(labels);
            let feats = critic.forward(&bound, Var::concat(&[fake, cond], 1)?, false)?;
            let l_gan = mean_feature_rows(feats)?.mean().neg();
            let l_en = fake.sub(tape.constant(real))?.square()?.mean();
            let loss = joint_gen_loss_var(l_en, l_gan, cfg.beta)?;
            let grads = tape.backward(loss)?;
            gen_opt.step(&mut store, &bound.grads(&grads))?;
        }
    }
    Ok(log)
}
