use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Axis-aligned box given by its min and max vertices (meters).
///
/// Ground-truth boxes satisfy `vmin <= vmax`; predicted boxes may not, and
/// every operation here stays finite on them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub vmin: [f64; 3],
    pub vmax: [f64; 3],
}

impl BBox {
    pub fn new(vmin: [f64; 3], vmax: [f64; 3]) -> Self {
        BBox { vmin, vmax }
    }

    /// Tight box around `points`.
    pub fn from_points(points: &[[f64; 3]]) -> Result<Self> {
        let (first, rest) = points.split_first().ok_or(Error::EmptySet("BBox::from_points"))?;
        let mut b = BBox::new(*first, *first);
        for p in rest {
            for a in 0..3 {
                b.vmin[a] = b.vmin[a].min(p[a]);
                b.vmax[a] = b.vmax[a].max(p[a]);
            }
        }
        Ok(b)
    }

    /// `[xmin, ymin, zmin, xmax, ymax, zmax]`
    pub fn to_row(&self) -> [f64; 6] {
        let [a, b, c] = self.vmin;
        let [d, e, f] = self.vmax;
        [a, b, c, d, e, f]
    }

    pub fn from_row(r: &[f64]) -> Self {
        BBox::new([r[0], r[1], r[2]], [r[3], r[4], r[5]])
    }

    pub fn is_proper(&self) -> bool {
        (0..3).all(|a| self.vmin[a] <= self.vmax[a])
    }

    /// Closed containment test.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| self.vmin[a] <= p[a] && p[a] <= self.vmax[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.vmin[a] + self.vmax[a]))
    }

    /// Smallest distance from `p` to any of the six face planes.
    pub fn face_distance(&self, p: &[f64; 3]) -> f64 {
        (0..3)
            .flat_map(|a| [(p[a] - self.vmin[a]).abs(), (p[a] - self.vmax[a]).abs()])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-point membership probabilities in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask(pub Vec<f64>);

/// Per-point membership in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HardMask(pub Vec<f64>);

impl HardMask {
    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        HardMask(bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1.0).count()
    }

    /// `N × 1` column.
    pub fn to_column(&self) -> Tensor {
        Tensor::matrix(self.0.len(), 1, self.0.clone()).expect("non-empty mask")
    }
}

/// Scale and saturation of the soft point-in-box test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftBoxParams {
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for SoftBoxParams {
    fn default() -> Self {
        SoftBoxParams {
            theta1: 100.0,
            theta2: 20.0,
        }
    }
}

pub fn points_tensor(points: &[[f64; 3]]) -> Result<Tensor> {
    if points.is_empty() {
        return Err(Error::EmptySet("point cloud"));
    }
    Tensor::matrix(points.len(), 3, points.iter().flatten().copied().collect())
}

/// Soft membership of `N × 3` points in a `1 × 6` box, as an `N × 1` column.
///
/// Per axis `Δ = (vmin - P)(P - vmax)`, positive strictly inside the slab;
/// `Δ` is scaled by `θ1`, clamped to `[-θ2, θ2]` and squashed by a sigmoid.
/// The point's probability is the minimum over the three axes.
pub fn soft_point_in_box_var<'t>(points: Var<'t>, bbox: Var<'t>, params: SoftBoxParams) -> Result<Var<'t>> {
    let n = points.value().rows();
    if bbox.shape() != [1, 6] {
        return Err(Error::shape("soft_point_in_box", &bbox.shape(), &[1, 6]));
    }
    let vmin = bbox.slice_cols(0, 3)?.broadcast_rows(n)?;
    let vmax = bbox.slice_cols(3, 3)?.broadcast_rows(n)?;
    let delta = vmin.sub(points)?.mul(points.sub(vmax)?)?;
    delta
        .scale(params.theta1)
        .clamp(-params.theta2, params.theta2)?
        .sigmoid()
        .min_axis(1)
}

pub fn soft_point_in_box(points: &[[f64; 3]], bbox: &BBox, params: SoftBoxParams) -> Result<SoftMask> {
    let tape = Tape::new();
    let p = tape.constant(points_tensor(points)?);
    let b = tape.constant(Tensor::row_vector(bbox.to_row().to_vec()));
    let q = soft_point_in_box_var(p, b, params)?;
    Ok(SoftMask(q.value().data().to_vec()))
}

pub fn hard_point_in_box(points: &[[f64; 3]], bbox: &BBox) -> HardMask {
    HardMask::from_bools(points.iter().map(|p| bbox.contains(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;

    fn unit() -> BBox {
        BBox::new([0.0; 3], [1.0; 3])
    }

    #[test]
    fn soft_examples() {
        let q = soft_point_in_box(&[[0.5, 0.5, 0.5], [1.0, 0.5, 0.5], [2.0, 0.5, 0.5]], &unit(), SoftBoxParams::default())
            .unwrap();
        assert_eq!(q.0[0], sigmoid(20.0));
        assert!((q.0[0] - (1.0 - 2.06e-9)).abs() < 1e-11);
        assert_eq!(q.0[1], 0.5);
        assert_eq!(q.0[2], sigmoid(-20.0));
        assert!((q.0[2] - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn hard_examples() {
        let m = hard_point_in_box(&[[0.5, 0.5, 0.5], [1.0, 1.0, 0.0], [1.5, 0.5, 0.5]], &unit());
        assert_eq!(m.0, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn inverted_box_stays_finite() {
        // Δ is symmetric in vmin and vmax, so an inverted axis acts like its proper twin.
        let inverted = BBox::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]);
        let pts = [[0.5, 0.5, 0.5], [3.0, 3.0, 3.0]];
        let q = soft_point_in_box(&pts, &inverted, SoftBoxParams::default()).unwrap();
        assert!(q.0.iter().all(|v| v.is_finite() && *v < 1.0 && *v > 0.0));
        assert!(q.0[1] < 0.5);
        assert_eq!(q, soft_point_in_box(&pts, &unit(), SoftBoxParams::default()).unwrap());
    }

    #[test]
    fn from_points_is_tight() {
        let b = BBox::from_points(&[[1.0, 5.0, -1.0], [0.0, 6.0, 2.0]]).unwrap();
        assert_eq!(b, BBox::new([0.0, 5.0, -1.0], [1.0, 6.0, 2.0]));
        assert!(BBox::from_points(&[]).is_err());
    }
}
