//! Voxel reconstruction losses and metrics.

pub mod gan;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub use gan::{mean_feature, wgan_gp_losses, DiscOutput, GanLosses};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Default positive-class weight of [`weighted_bce`].
pub const DEFAULT_ALPHA: f64 = 0.85;

/// Default weight of the reconstruction term in [`joint_gen_loss`].
pub const DEFAULT_BETA: f64 = 0.2;

/// Cubic occupancy grid, row-major with z fastest: index `(x·D + y)·D + z`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    d: usize,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() != d * d * d {
            return Err(Error::InvalidArgument(format!(
                "voxel grid of side {d} needs {} values, got {}",
                d * d * d,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("voxel value {bad} outside [0, 1]")));
        }
        Ok(VoxelGrid { d, data })
    }

    pub fn empty(d: usize) -> Self {
        VoxelGrid {
            d,
            data: vec![0.0; d * d * d],
        }
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.d + y) * self.d + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn occupied(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    /// `1 × D³` row.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::row_vector(self.data.clone())
    }

    /// Binarize with the rule `value > p`.
    pub fn threshold(&self, p: f64) -> VoxelGrid {
        VoxelGrid {
            d: self.d,
            data: self.data.iter().map(|&v| if v > p { 1.0 } else { 0.0 }).collect(),
        }
    }
}

fn check_pair(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<()> {
    if pred.d != gt.d {
        return Err(Error::shape("voxel grids", &[pred.d; 3], &[gt.d; 3]));
    }
    if !gt.is_binary() {
        return Err(Error::InvalidArgument("ground-truth grid must be binary".into()));
    }
    Ok(())
}

/// `|{pred > p} ∩ {gt = 1}| / |{pred > p} ∪ {gt = 1}|`.
pub fn voxel_iou(pred: &VoxelGrid, gt: &VoxelGrid, p: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&y, &t) in pred.data.iter().zip(&gt.data) {
        let a = y > p;
        let b = t == 1.0;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        return Err(Error::domain("voxel_iou", "both occupied sets are empty"));
    }
    Ok(inter as f64 / union as f64)
}

/// Mean binary cross-entropy with per-class weights on the tape:
/// `-mean(w_pos·ȳ·log y + w_neg·(1-ȳ)·log(1-y))`, `y` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`. `target` is a constant of the same shape.
pub fn weighted_bce_loss<'t>(pred: Var<'t>, target: &Tensor, w_pos: f64, w_neg: f64) -> Result<Var<'t>> {
    let tape = pred.tape();
    let shape = pred.shape();
    if shape != target.shape() {
        return Err(Error::shape("bce", &shape, target.shape()));
    }
    let y = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let pos = tape.constant(target.map(|t| w_pos * t));
    let neg = tape.constant(target.map(|t| w_neg * (1.0 - t)));
    let ll = pos.mul(y.log()?)?.add(neg.mul(y.one_minus().log()?)?)?;
    Ok(ll.mean().neg())
}

/// Standard mean binary cross-entropy on the tape.
pub fn bce_loss<'t>(pred: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    weighted_bce_loss(pred, target, 1.0, 1.0)
}

fn eval_bce(pred: &VoxelGrid, gt: &VoxelGrid, w_pos: f64, w_neg: f64) -> Result<f64> {
    if pred.d != gt.d {
        return Err(Error::shape("voxel grids", &[pred.d; 3], &[gt.d; 3]));
    }
    let tape = Tape::new();
    let y = tape.constant(pred.to_tensor());
    Ok(weighted_bce_loss(y, &gt.to_tensor(), w_pos, w_neg)?.item())
}

/// Mean cross-entropy between a probability grid and a target grid.
pub fn voxel_ce(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    eval_bce(pred, gt, 1.0, 1.0)
}

/// Class-weighted cross-entropy: `α` on occupied targets, `1 - α` on empty ones.
pub fn weighted_bce(pred: &VoxelGrid, gt: &VoxelGrid, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    eval_bce(pred, gt, alpha, 1.0 - alpha)
}

/// `β·ℓ_en + (1-β)·ℓ_gan` on the tape.
pub fn joint_gen_loss_var<'t>(l_en: Var<'t>, l_gan: Var<'t>, beta: f64) -> Result<Var<'t>> {
    l_en.scale(beta).add(l_gan.scale(1.0 - beta))
}

pub fn joint_gen_loss(l_en: f64, l_gan: f64, beta: f64) -> f64 {
    beta * l_en + (1.0 - beta) * l_gan
}

/// Threshold sweep bounds, inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsConfig {
    pub threshold: f64,
    pub search_lo: f64,
    pub search_hi: f64,
    pub search_step: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            threshold: 0.35,
            search_lo: 0.1,
            search_hi: 0.9,
            search_step: 0.05,
        }
    }
}

impl MetricsConfig {
    /// Grid points `lo, lo + step, …, hi`, computed on a 1e-4 lattice so
    /// that e.g. 0.35 is the nearest double to 0.35.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let (lo, hi, step) = (self.search_lo, self.search_hi, self.search_step);
        if !(step > 0.0) || !(lo > 0.0) || !(hi < 1.0) || lo > hi {
            return Err(Error::Config(format!(
                "bad threshold grid lo={lo} hi={hi} step={step}"
            )));
        }
        let (lo_i, hi_i, st_i) = (
            (lo * 1e4).round() as i64,
            (hi * 1e4).round() as i64,
            (step * 1e4).round() as i64,
        );
        if st_i == 0 {
            return Err(Error::Config(format!("threshold step {step} below 1e-4")));
        }
        Ok((0..)
            .map(|k| lo_i + k * st_i)
            .take_while(|&v| v <= hi_i)
            .map(|v| v as f64 / 1e4)
            .collect())
    }
}

/// Mean IoU over `(pred, gt)` pairs at threshold `p`.
pub fn mean_iou(pairs: &[(VoxelGrid, VoxelGrid)], p: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySet("mean_iou"));
    }
    let mut total = 0.0;
    for (pred, gt) in pairs {
        total += voxel_iou(pred, gt, p)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Threshold on the configured grid maximizing mean IoU over validation
/// pairs; ties go to the smaller threshold.
pub fn threshold_search(pairs: &[(VoxelGrid, VoxelGrid)], cfg: &MetricsConfig) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for p in cfg.grid()? {
        let iou = mean_iou(pairs, p)?;
        if best.map_or(true, |(_, b)| iou > b) {
            best = Some((p, iou));
        }
    }
    best.ok_or(Error::EmptySet("threshold grid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(v: [f64; 8]) -> VoxelGrid {
        VoxelGrid::new(2, v.to_vec()).unwrap()
    }

    #[test]
    fn iou_examples() {
        let gt = grid2([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(voxel_iou(&gt, &gt, 0.5).unwrap(), 1.0);
        let disjoint = grid2([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(voxel_iou(&disjoint, &gt, 0.5).unwrap(), 0.0);
        let half = grid2([0.0, 0.9, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((voxel_iou(&half, &gt, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = VoxelGrid::empty(2);
        assert!(voxel_iou(&empty, &empty, 0.5).is_err());
    }

    #[test]
    fn iou_requires_binary_gt_and_matching_side() {
        let soft = grid2([0.5; 8]);
        assert!(voxel_iou(&soft, &soft, 0.5).is_err());
        assert!(voxel_iou(&VoxelGrid::empty(3), &grid2([1.0; 8]), 0.5).is_err());
    }

    #[test]
    fn ce_examples() {
        let gt = grid2([1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let perfect = grid2(gt.data().try_into().unwrap());
        assert!(voxel_ce(&perfect, &gt).unwrap() < 1e-6);
        let half = grid2([0.5; 8]);
        assert!((voxel_ce(&half, &gt).unwrap() - 2f64.ln()).abs() < 1e-12);
        let a = voxel_ce(&grid2([0.3; 8]), &grid2([1.0; 8])).unwrap();
        let b = voxel_ce(&grid2([0.7; 8]), &grid2([0.0; 8])).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn weighted_bce_examples() {
        let gt = grid2([1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let pred = grid2([0.9, 0.2, 0.6, 0.4, 0.99, 0.3, 0.05, 0.5]);
        let w = weighted_bce(&pred, &gt, 0.5).unwrap();
        assert!((w - 0.5 * voxel_ce(&pred, &gt).unwrap()).abs() < 1e-12);

        let ones = grid2([1.0; 8]);
        let expected: f64 = pred.data().iter().map(|y| -y.ln()).sum::<f64>() / 8.0;
        assert!((weighted_bce(&pred, &ones, 0.85).unwrap() - 0.85 * expected).abs() < 1e-12);

        for alpha in [0.1, 0.5, 0.85] {
            let l = weighted_bce(&grid2([0.5; 8]), &gt, alpha).unwrap();
            assert!((l - 0.5 * 2f64.ln()).abs() < 1e-12);
        }
        assert!(weighted_bce(&pred, &gt, 1.5).is_err());
    }

    #[test]
    fn joint_weighting() {
        assert_eq!(joint_gen_loss(1.0, 2.0, 1.0), 1.0);
        assert_eq!(joint_gen_loss(1.0, 2.0, 0.0), 2.0);
        assert!((joint_gen_loss(1.0, 2.0, DEFAULT_BETA) - 1.8).abs() < 1e-15);
    }

    #[test]
    fn grid_points() {
        let g = MetricsConfig::default().grid().unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[5], 0.35);
        assert_eq!(g[16], 0.9);
    }

    #[test]
    fn binary_predictions_pick_smallest_threshold() {
        let gt = grid2([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let pairs = vec![(gt.clone(), gt)];
        let (p, iou) = threshold_search(&pairs, &MetricsConfig::default()).unwrap();
        assert_eq!(p, 0.1);
        assert_eq!(iou, 1.0);
    }

    #[test]
    fn constructed_fixture_selects_035() {
        // Occupied cells predicted at 0.36..0.4, empty cells at 0.34 / 0.31:
        // only thresholds in [0.34, 0.36) separate them and 0.35 is the sole grid point there.
        let gt = grid2([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pred = grid2([0.36, 0.4, 0.38, 0.34, 0.31, 0.34, 0.0, 0.0]);
        let pairs = vec![(pred, gt)];
        let (p, iou) = threshold_search(&pairs, &MetricsConfig::default()).unwrap();
        assert_eq!(p, 0.35);
        assert_eq!(iou, 1.0);
        assert!(iou >= mean_iou(&pairs, 0.5).unwrap());
    }
}
