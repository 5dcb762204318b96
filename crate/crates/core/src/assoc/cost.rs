use super::geometry::{points_tensor, soft_point_in_box_var, BBox, HardMask, SoftBoxParams, SoftMask};
use crate::error::{Error, Result};
use crate::metrics::{bce_loss, PROB_EPS};
use crate::tensor::{Tape, Tensor, Var};

/// Mean squared difference over the six vertex coordinates.
pub fn cost_euclidean(a: &BBox, b: &BBox) -> f64 {
    let (ra, rb) = (a.to_row(), b.to_row());
    ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 6.0
}

/// Negated soft IoU in `[-1, 0]`.
pub fn cost_siou(q: &SoftMask, qbar: &HardMask) -> Result<f64> {
    check_lengths("cost_siou", q.0.len(), qbar.0.len())?;
    let inter: f64 = q.0.iter().zip(&qbar.0).map(|(a, b)| a * b).sum();
    let sq: f64 = q.0.iter().sum();
    let sb: f64 = qbar.0.iter().sum();
    if sq + sb <= 0.0 {
        return Err(Error::domain("cost_siou", "both masks are identically zero"));
    }
    Ok(-inter / (sq + sb - inter))
}

/// Mean binary cross-entropy of `q` against `qbar`.
pub fn cost_ces(q: &SoftMask, qbar: &HardMask) -> Result<f64> {
    check_lengths("cost_ces", q.0.len(), qbar.0.len())?;
    if q.0.is_empty() {
        return Err(Error::EmptySet("cost_ces"));
    }
    let total: f64 = q
        .0
        .iter()
        .zip(&qbar.0)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / q.0.len() as f64)
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, &[a], &[b]));
    }
    Ok(())
}

/// `1 × 6` rows in, scalar out.
pub fn cost_euclidean_var<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
    Ok(pred.sub(gt)?.square()?.sum().scale(1.0 / 6.0))
}

/// `q` is an `N × 1` soft mask, `qbar` a constant hard mask of the same shape.
pub fn cost_siou_var<'t>(q: Var<'t>, qbar: &Tensor) -> Result<Var<'t>> {
    let tape = q.tape();
    let sb = qbar.sum();
    if q.value().sum() + sb <= 0.0 {
        return Err(Error::domain("cost_siou", "both masks are identically zero"));
    }
    let inter = q.mul(tape.constant(qbar.clone()))?.sum();
    let union = q.sum().add_scalar(sb).sub(inter)?;
    Ok(inter.div(union)?.neg())
}

pub fn cost_ces_var<'t>(q: Var<'t>, qbar: &Tensor) -> Result<Var<'t>> {
    bce_loss(q, qbar)
}

/// Which criteria enter the summed cost. All three carry weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostCriteria {
    pub euclidean: bool,
    pub siou: bool,
    pub ces: bool,
}

impl Default for CostCriteria {
    fn default() -> Self {
        CostCriteria {
            euclidean: true,
            siou: true,
            ces: true,
        }
    }
}

impl CostCriteria {
    pub fn euclidean_only() -> Self {
        CostCriteria {
            euclidean: true,
            siou: false,
            ces: false,
        }
    }

    fn needs_masks(&self) -> bool {
        self.siou || self.ces
    }
}

/// Predicted boxes (`H × 6` rows of `[vmin, vmax]`) with their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    pub boxes: Vec<BBox>,
    pub scores: Vec<f64>,
}

impl BoxSet {
    pub fn new(boxes: Vec<BBox>, scores: Vec<f64>) -> Result<Self> {
        if boxes.len() != scores.len() {
            return Err(Error::shape("BoxSet", &[boxes.len()], &[scores.len()]));
        }
        if boxes.is_empty() {
            return Err(Error::EmptySet("BoxSet"));
        }
        Ok(BoxSet { boxes, scores })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn from_tensors(boxes: &Tensor, scores: &Tensor) -> Result<Self> {
        if boxes.cols() != 6 {
            return Err(Error::shape("BoxSet", boxes.shape(), &[boxes.rows(), 6]));
        }
        let b = (0..boxes.rows()).map(|i| BBox::from_row(boxes.row(i))).collect();
        BoxSet::new(b, scores.data().to_vec())
    }

    pub fn boxes_tensor(&self) -> Tensor {
        let data = self.boxes.iter().flat_map(|b| b.to_row()).collect();
        Tensor::matrix(self.boxes.len(), 6, data).expect("non-empty box set")
    }
}

/// Ground-truth instances of one scene: boxes with their hard point masks.
#[derive(Clone, Debug, PartialEq)]
pub struct GtInstances {
    pub boxes: Vec<BBox>,
    pub masks: Vec<HardMask>,
}

impl GtInstances {
    /// Boxes are the tight bounds of each mask's points.
    pub fn from_masks(points: &[[f64; 3]], masks: Vec<HardMask>) -> Result<Self> {
        let mut boxes = Vec::with_capacity(masks.len());
        for m in &masks {
            check_lengths("GtInstances", m.0.len(), points.len())?;
            let inside: Vec<[f64; 3]> =
                points.iter().zip(&m.0).filter(|(_, &v)| v == 1.0).map(|(p, _)| *p).collect();
            boxes.push(BBox::from_points(&inside)?);
        }
        Ok(GtInstances { boxes, masks })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// `H × T` association costs, row-major by prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub h: usize,
    pub t: usize,
    pub total: Vec<f64>,
    pub euclidean: Vec<f64>,
    pub siou: Vec<f64>,
    pub ces: Vec<f64>,
}

impl CostMatrix {
    /// Plain matrix with no component breakdown.
    pub fn from_total(h: usize, t: usize, total: Vec<f64>) -> Result<Self> {
        if total.len() != h * t {
            return Err(Error::shape("CostMatrix", &[h, t], &[total.len()]));
        }
        let zeros = vec![0.0; h * t];
        Ok(CostMatrix {
            h,
            t,
            total,
            euclidean: zeros.clone(),
            siou: zeros.clone(),
            ces: zeros,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.total[i * self.t + j]
    }
}

/// Costs between every prediction and every ground-truth instance.
pub fn cost_matrix(
    pred: &BoxSet,
    gt: &GtInstances,
    points: &[[f64; 3]],
    criteria: CostCriteria,
    params: SoftBoxParams,
) -> Result<CostMatrix> {
    let (h, t) = (pred.len(), gt.len());
    if h < t {
        return Err(Error::domain("cost_matrix", format!("{h} predictions for {t} instances")));
    }
    let mut m = CostMatrix::from_total(h, t, vec![0.0; h * t])?;
    let soft: Vec<SoftMask> = if criteria.needs_masks() {
        let tape = Tape::new();
        let p = tape.constant(points_tensor(points)?);
        pred.boxes
            .iter()
            .map(|b| {
                let bv = tape.constant(Tensor::row_vector(b.to_row().to_vec()));
                Ok(SoftMask(soft_point_in_box_var(p, bv, params)?.value().data().to_vec()))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    for i in 0..h {
        for j in 0..t {
            let k = i * t + j;
            if criteria.euclidean {
                m.euclidean[k] = cost_euclidean(&pred.boxes[i], &gt.boxes[j]);
            }
            if criteria.siou {
                m.siou[k] = cost_siou(&soft[i], &gt.masks[j])?;
            }
            if criteria.ces {
                m.ces[k] = cost_ces(&soft[i], &gt.masks[j])?;
            }
            m.total[k] = m.euclidean[k] + m.siou[k] + m.ces[k];
            if !m.total[k].is_finite() {
                return Err(Error::NonFinite(format!("cost ({i}, {j})")));
            }
        }
    }
    Ok(m)
}
