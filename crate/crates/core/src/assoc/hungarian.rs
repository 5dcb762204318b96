use super::cost::CostMatrix;
use crate::error::{Error, Result};

/// Optimal pairing of every ground-truth instance with a distinct prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `pred_of[j]` is the prediction paired with ground truth `j`.
    pub pred_of: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    /// Predictions left unpaired, in increasing order.
    pub fn unmatched(&self, h: usize) -> Vec<usize> {
        let mut used = vec![false; h];
        for &i in &self.pred_of {
            used[i] = true;
        }
        (0..h).filter(|&i| !used[i]).collect()
    }

    /// Dense `H × T` 0/1 matrix, row-major by prediction.
    pub fn to_matrix(&self, h: usize) -> Vec<f64> {
        let t = self.pred_of.len();
        let mut a = vec![0.0; h * t];
        for (j, &i) in self.pred_of.iter().enumerate() {
            a[i * t + j] = 1.0;
        }
        a
    }
}

/// Minimum-cost injective map from the `T` columns to the `H` rows of `c`.
///
/// Shortest augmenting paths with potentials, `O(T² H)`.
pub fn hungarian(c: &CostMatrix) -> Result<Assignment> {
    let (h, t) = (c.h, c.t);
    if h < t {
        return Err(Error::domain("hungarian", format!("{h} predictions for {t} instances")));
    }
    if let Some(k) = c.total.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("cost entry {k}")));
    }
    // Solver rows are ground truths (1-based), columns are predictions.
    let cost = |j: usize, i: usize| c.total[(i - 1) * t + (j - 1)];
    let mut u = vec![0.0; t + 1];
    let mut v = vec![0.0; h + 1];
    let mut owner = vec![0usize; h + 1];
    let mut way = vec![0usize; h + 1];
    for row in 1..=t {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; h + 1];
        let mut used = vec![false; h + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=h {
                if used[col] {
                    continue;
                }
                let cur = cost(r0, col) - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=h {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut pred_of = vec![0; t];
    for col in 1..=h {
        if owner[col] != 0 {
            pred_of[owner[col] - 1] = col - 1;
        }
    }
    let total_cost = pred_of.iter().enumerate().map(|(j, &i)| c.at(i, j)).sum();
    Ok(Assignment { pred_of, total_cost })
}
