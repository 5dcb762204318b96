use super::cost::{
    cost_ces_var, cost_euclidean_var, cost_matrix, cost_siou_var, BoxSet, CostCriteria, CostMatrix, GtInstances,
};
use super::geometry::{points_tensor, soft_point_in_box_var, SoftBoxParams};
use super::hungarian::{hungarian, Assignment};
use crate::error::{Error, Result};
use crate::metrics::{bce_loss, PROB_EPS};
use crate::tensor::{Tensor, Var};

/// Focal-loss defaults for the point-mask branch.
pub const FOCAL_ALPHA: f64 = 0.75;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssocConfig {
    pub criteria: CostCriteria,
    pub soft_box: SoftBoxParams,
    /// Experimental: route gradient through a softmin relaxation of the
    /// assignment. Off means the assignment is a constant in the backward pass.
    pub straight_through: bool,
    /// Softmin temperature of the straight-through relaxation.
    pub st_temperature: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig {
            criteria: CostCriteria::default(),
            soft_box: SoftBoxParams::default(),
            straight_through: false,
            st_temperature: 1.0,
        }
    }
}

pub struct AssocLosses<'t> {
    /// Mean association cost over matched pairs.
    pub bbox: Var<'t>,
    /// Score BCE: matched predictions target 1, the rest 0, averaged over H.
    pub bbs: Var<'t>,
    pub assignment: Assignment,
    pub costs: CostMatrix,
}

/// Associate `H × 6` predicted boxes with the ground truth and build both box losses.
///
/// `scores` is `H × 1`. The assignment is computed on values and then held fixed.
pub fn assoc_and_losses<'t>(
    boxes: Var<'t>,
    scores: Var<'t>,
    points: &[[f64; 3]],
    gt: &GtInstances,
    cfg: &AssocConfig,
) -> Result<AssocLosses<'t>> {
    let tape = boxes.tape();
    let h = boxes.value().rows();
    if boxes.shape() != [h, 6] || scores.shape() != [h, 1] {
        return Err(Error::shape("assoc_and_losses", &boxes.shape(), &scores.shape()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySet("ground-truth instances"));
    }
    let pred = BoxSet::from_tensors(&boxes.value(), &scores.value())?;
    let costs = cost_matrix(&pred, gt, points, cfg.criteria, cfg.soft_box)?;
    let assignment = hungarian(&costs)?;
    let t = gt.len();
    let p = tape.constant(points_tensor(points)?);

    let pair_cost = |i: usize, j: usize| -> Result<Var<'t>> {
        let b = boxes.gather_rows(&[i])?;
        let mut terms = Vec::with_capacity(3);
        if cfg.criteria.euclidean {
            let g = tape.constant(Tensor::row_vector(gt.boxes[j].to_row().to_vec()));
            terms.push(cost_euclidean_var(b, g)?);
        }
        if cfg.criteria.siou || cfg.criteria.ces {
            let q = soft_point_in_box_var(p, b, cfg.soft_box)?;
            let qbar = gt.masks[j].to_column();
            if cfg.criteria.siou {
                terms.push(cost_siou_var(q, &qbar)?);
            }
            if cfg.criteria.ces {
                terms.push(cost_ces_var(q, &qbar)?);
            }
        }
        let (first, rest) = terms.split_first().ok_or(Error::EmptySet("cost criteria"))?;
        rest.iter().try_fold(*first, |acc, v| acc.add(*v))
    };

    let bbox = if cfg.straight_through {
        straight_through_loss(&pair_cost, &costs, &assignment, h, t, cfg.st_temperature, tape)?
    } else {
        let matched: Vec<Var<'t>> = assignment
            .pred_of
            .iter()
            .enumerate()
            .map(|(j, &i)| pair_cost(i, j)?.reshape(vec![1, 1]))
            .collect::<Result<_>>()?;
        Var::concat(&matched, 0)?.mean()
    };

    let mut target = vec![0.0; h];
    for &i in &assignment.pred_of {
        target[i] = 1.0;
    }
    let bbs = bce_loss(scores, &Tensor::matrix(h, 1, target)?)?;
    Ok(AssocLosses {
        bbox,
        bbs,
        assignment,
        costs,
    })
}

/// Forward value equals the hard-assignment loss; the backward pass also
/// sees the column-wise softmin of the costs.
fn straight_through_loss<'t>(
    pair_cost: &dyn Fn(usize, usize) -> Result<Var<'t>>,
    costs: &CostMatrix,
    assignment: &Assignment,
    h: usize,
    t: usize,
    temperature: f64,
    tape: &'t crate::tensor::Tape,
) -> Result<Var<'t>> {
    if !(temperature > 0.0) {
        return Err(Error::domain("straight_through", "temperature must be positive"));
    }
    let mut rows = Vec::with_capacity(h);
    for i in 0..h {
        let row: Vec<Var<'t>> = (0..t).map(|j| pair_cost(i, j)?.reshape(vec![1, 1])).collect::<Result<_>>()?;
        rows.push(Var::concat(&row, 1)?);
    }
    let c = Var::concat(&rows, 0)?;
    let soft = c.scale(-1.0 / temperature).softmax(0)?;
    let soft_value = tape.constant((*soft.value()).clone());
    let hard = tape.constant(Tensor::matrix(h, t, assignment.to_matrix(h))?);
    let a = hard.add(soft)?.sub(soft_value)?;
    debug_assert_eq!(costs.h * costs.t, h * t);
    Ok(a.mul(c)?.sum().scale(1.0 / t as f64))
}

/// Focal loss between `T × N` predicted masks and hard targets of the same shape.
pub fn focal_mask_loss<'t>(pred: Var<'t>, target: &Tensor, alpha: f64, gamma: f64) -> Result<Var<'t>> {
    let tape = pred.tape();
    if pred.shape() != target.shape() {
        return Err(Error::shape("focal_mask_loss", &pred.shape(), target.shape()));
    }
    let m = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let pos = tape.constant(target.map(|t| alpha * t));
    let neg = tape.constant(target.map(|t| (1.0 - alpha) * (1.0 - t)));
    let pos_term = pos.mul(m.one_minus().powf(gamma)?)?.mul(m.log()?)?;
    let neg_term = neg.mul(m.powf(gamma)?)?.mul(m.one_minus().log()?)?;
    Ok(pos_term.add(neg_term)?.mean().neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::geometry::{hard_point_in_box, BBox, HardMask};
    use crate::tensor::{grad_check, AdamState, Tape};

    fn scene() -> (Vec<[f64; 3]>, GtInstances) {
        let mut points = Vec::new();
        for i in 0..4 {
            for k in 0..2 {
                let x = 0.25 + 0.5 * (i % 2) as f64;
                let y = 0.25 + 0.5 * (i / 2) as f64;
                points.push([x + 3.0 * k as f64, y, 0.5]);
            }
        }
        let a = BBox::new([0.0; 3], [1.0; 3]);
        let b = BBox::new([3.0, 0.0, 0.0], [4.0, 1.0, 1.0]);
        let masks = vec![hard_point_in_box(&points, &a), hard_point_in_box(&points, &b)];
        let gt = GtInstances {
            boxes: vec![a, b],
            masks,
        };
        (points, gt)
    }

    #[test]
    fn exact_predictions_give_minimal_losses() {
        let (points, gt) = scene();
        let mut rows: Vec<f64> = gt.boxes.iter().flat_map(|b| b.to_row()).collect();
        rows.extend([10.0, 10.0, 10.0, 11.0, 11.0, 11.0]);
        let tape = Tape::new();
        let boxes = tape.param(Tensor::matrix(3, 6, rows).unwrap());
        let scores = tape.param(Tensor::matrix(3, 1, vec![1.0, 1.0, 0.0]).unwrap());
        let out = assoc_and_losses(boxes, scores, &points, &gt, &AssocConfig::default()).unwrap();
        assert_eq!(out.assignment.pred_of, vec![0, 1]);
        assert!(out.bbs.item() < 1e-6);
        assert!((out.bbox.item() + 1.0).abs() < 1e-6, "{}", out.bbox.item());
    }

    #[test]
    fn siou_and_ces_only_with_half_scores() {
        let (points, gt) = scene();
        let grown: Vec<f64> = gt
            .boxes
            .iter()
            .flat_map(|b| BBox::new(b.vmin.map(|v| v - 0.2), b.vmax.map(|v| v + 0.2)).to_row())
            .collect();
        let tape = Tape::new();
        let boxes = tape.param(Tensor::matrix(2, 6, grown).unwrap());
        let scores = tape.param(Tensor::matrix(2, 1, vec![0.5, 0.5]).unwrap());
        let cfg = AssocConfig {
            criteria: CostCriteria {
                euclidean: false,
                ..CostCriteria::default()
            },
            ..AssocConfig::default()
        };
        let out = assoc_and_losses(boxes, scores, &points, &gt, &cfg).unwrap();
        assert!((out.bbox.item() + 1.0).abs() < 1e-6);
        assert!((out.bbs.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn losses_pass_grad_check() {
        let (points, gt) = scene();
        let boxes = Tensor::matrix(
            3,
            6,
            vec![
                0.1, 0.05, 0.02, 0.8, 0.9, 0.95, 2.9, 0.1, 0.1, 3.8, 0.85, 1.05, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0,
            ],
        )
        .unwrap();
        let scores = Tensor::matrix(3, 1, vec![0.6, 0.3, 0.2]).unwrap();
        for criteria in [CostCriteria::default(), CostCriteria::euclidean_only()] {
            let cfg = AssocConfig {
                criteria,
                ..AssocConfig::default()
            };
            let r = grad_check(
                "bbox+bbs",
                |_, v| {
                    let out = assoc_and_losses(v[0], v[1], &points, &gt, &cfg)?;
                    out.bbox.add(out.bbs)
                },
                &[boxes.clone(), scores.clone()],
                1e-6,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn straight_through_keeps_forward_value() {
        let (points, gt) = scene();
        let boxes = Tensor::matrix(2, 6, vec![0.1, 0.0, 0.0, 1.1, 0.9, 1.0, 3.0, 0.2, 0.0, 4.2, 1.0, 0.9]).unwrap();
        let scores = Tensor::matrix(2, 1, vec![0.7, 0.4]).unwrap();
        let eval = |st: bool| {
            let tape = Tape::new();
            let cfg = AssocConfig {
                straight_through: st,
                ..AssocConfig::default()
            };
            let out = assoc_and_losses(tape.param(boxes.clone()), tape.param(scores.clone()), &points, &gt, &cfg)
                .unwrap();
            out.bbox.item()
        };
        assert!((eval(false) - eval(true)).abs() < 1e-12);
    }

    #[test]
    fn descent_reduces_box_loss() {
        let (points, gt) = scene();
        let mut boxes = vec![
            Tensor::matrix(2, 6, vec![0.3, 0.2, 0.1, 1.4, 1.3, 1.2, 2.6, -0.3, 0.2, 3.7, 0.8, 1.4]).unwrap(),
        ];
        let mut state = AdamState::new(0.01);
        let mut history = Vec::new();
        for _ in 0..200 {
            let tape = Tape::new();
            let b = tape.param(boxes[0].clone());
            let s = tape.constant(Tensor::matrix(2, 1, vec![0.5, 0.5]).unwrap());
            let out = assoc_and_losses(b, s, &points, &gt, &AssocConfig::default()).unwrap();
            history.push(out.bbox.item());
            let g = tape.backward(out.bbox).unwrap().wrt(b);
            crate::tensor::adam_step(&mut boxes, &[g], &mut state).unwrap();
        }
        assert!(history[199] < history[0] - 0.5, "{} -> {}", history[0], history[199]);
    }

    #[test]
    fn focal_examples() {
        let tape = Tape::new();
        let m = tape.constant(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap());
        let l = focal_mask_loss(m, &Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(), 0.75, 2.0).unwrap();
        assert!((l.item() - 0.75 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let target = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(focal_mask_loss(perfect, &target, 0.75, 2.0).unwrap().item() < 1e-12);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let tape = Tape::new();
        let pred = Tensor::matrix(2, 3, vec![0.1, 0.4, 0.8, 0.65, 0.3, 0.99]).unwrap();
        let target = Tensor::matrix(2, 3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let m = tape.constant(pred);
        let f = focal_mask_loss(m, &target, 0.5, 0.0).unwrap().item();
        let b = bce_loss(m, &target).unwrap().item();
        assert!((f - 0.5 * b).abs() < 1e-12);
    }

    #[test]
    fn focal_grad_check() {
        let target = Tensor::matrix(2, 3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let pred = Tensor::matrix(2, 3, vec![0.1, 0.4, 0.8, 0.65, 0.3, 0.9]).unwrap();
        let r = grad_check(
            "focal",
            |_, v| focal_mask_loss(v[0], &target, FOCAL_ALPHA, FOCAL_GAMMA),
            &[pred],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn hard_mask_column_shape() {
        assert_eq!(HardMask(vec![1.0, 0.0]).to_column().shape(), &[2, 1]);
    }
}
