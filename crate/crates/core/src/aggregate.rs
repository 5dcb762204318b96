//! Permutation-invariant aggregation of feature sets.
//!
//! Every aggregator maps an `N × D` set (one row per element) to a `1 × D`
//! vector, and its output does not depend on row order.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// `N × D` matrix, one row per set element, `N ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    values: Tensor,
}

impl FeatureSet {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "feature set must be a matrix, got shape {:?}",
                values.shape()
            )));
        }
        values.ensure_finite("feature set")?;
        Ok(FeatureSet { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySet("feature set"));
        }
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// One score per element and feature; `W` is `D × D`.
    Feature,
    /// One score per element, shared across its features; `w` is `D × 1`.
    Element,
}

/// Attention weights of the activation function `g(x) = x W` (no bias).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub mode: AttentionMode,
    pub weight: Tensor,
}

impl AttentionParams {
    pub fn new(mode: AttentionMode, weight: Tensor) -> Result<Self> {
        let p = AttentionParams { mode, weight };
        p.check_width(p.weight.rows())?;
        Ok(p)
    }

    pub fn zeros(mode: AttentionMode, d: usize) -> Self {
        let cols = match mode {
            AttentionMode::Feature => d,
            AttentionMode::Element => 1,
        };
        AttentionParams {
            mode,
            weight: Tensor::zeros(vec![d, cols]),
        }
    }

    fn check_width(&self, d: usize) -> Result<()> {
        let want = match self.mode {
            AttentionMode::Feature => [d, d],
            AttentionMode::Element => [d, 1],
        };
        if self.weight.shape() != want {
            return Err(Error::shape("attention weight", self.weight.shape(), &want));
        }
        Ok(())
    }
}

fn check_set(op: &'static str, set: &Tensor) -> Result<(usize, usize)> {
    if set.rank() != 2 {
        return Err(Error::domain(op, format!("set must be N×D, got {:?}", set.shape())));
    }
    Ok((set.rows(), set.cols()))
}

/// Feature-wise attentional aggregation on the tape.
///
/// `c = x W`, `s = softmax over the N rows of c` (per column), and
/// `y = Σ_n x_n ∘ s_n`.
pub fn attsets_feature<'t>(set: Var<'t>, weight: Var<'t>) -> Result<Var<'t>> {
    let (_, d) = check_set("attsets_feature", &set.value())?;
    let w = weight.value();
    if w.shape() != [d, d] {
        return Err(Error::shape("attsets_feature", w.shape(), &[d, d]));
    }
    let scores = set.matmul(weight)?.softmax(0)?;
    set.mul(scores)?.sum_axis(0)
}

/// Element-wise attentional aggregation: one softmax score per row,
/// `y = Σ_n s_n x_n` with `s = softmax(x w)`.
pub fn attsets_element<'t>(set: Var<'t>, weight: Var<'t>) -> Result<Var<'t>> {
    let (_, d) = check_set("attsets_element", &set.value())?;
    let w = weight.value();
    if w.shape() != [d, 1] {
        return Err(Error::shape("attsets_element", w.shape(), &[d, 1]));
    }
    let scores = set.matmul(weight)?.softmax(0)?;
    scores.transpose()?.matmul(set)
}

pub fn pool_max<'t>(set: Var<'t>) -> Result<Var<'t>> {
    check_set("pool_max", &set.value())?;
    set.max_axis(0)
}

pub fn pool_mean<'t>(set: Var<'t>) -> Result<Var<'t>> {
    let (n, _) = check_set("pool_mean", &set.value())?;
    Ok(set.sum_axis(0)?.scale(1.0 / n as f64))
}

pub fn pool_sum<'t>(set: Var<'t>) -> Result<Var<'t>> {
    check_set("pool_sum", &set.value())?;
    set.sum_axis(0)
}

/// Selectable aggregation operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregator {
    AttSets,
    AttSetsElement,
    Max,
    Mean,
    Sum,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] = [
        Aggregator::AttSets,
        Aggregator::AttSetsElement,
        Aggregator::Max,
        Aggregator::Mean,
        Aggregator::Sum,
    ];

    /// Attention mode if the aggregator has trainable weights.
    pub fn attention_mode(self) -> Option<AttentionMode> {
        match self {
            Aggregator::AttSets => Some(AttentionMode::Feature),
            Aggregator::AttSetsElement => Some(AttentionMode::Element),
            _ => None,
        }
    }

    /// Aggregate on the tape. `weight` is required exactly for the attention modes.
    pub fn apply<'t>(self, set: Var<'t>, weight: Option<Var<'t>>) -> Result<Var<'t>> {
        let need = |w: Option<Var<'t>>| {
            w.ok_or_else(|| Error::InvalidArgument(format!("{self} needs attention weights")))
        };
        match self {
            Aggregator::AttSets => attsets_feature(set, need(weight)?),
            Aggregator::AttSetsElement => attsets_element(set, need(weight)?),
            Aggregator::Max => pool_max(set),
            Aggregator::Mean => pool_mean(set),
            Aggregator::Sum => pool_sum(set),
        }
    }

    /// Evaluate without recording gradients.
    pub fn eval(self, set: &FeatureSet, params: Option<&AttentionParams>) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(set.values.clone());
        let w = match (self.attention_mode(), params) {
            (Some(mode), Some(p)) => {
                if p.mode != mode {
                    return Err(Error::InvalidArgument(format!(
                        "{self} needs {mode:?} attention parameters, got {:?}",
                        p.mode
                    )));
                }
                p.check_width(set.width())?;
                Some(tape.constant(p.weight.clone()))
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument(format!("{self} needs attention weights")))
            }
            (None, _) => None,
        };
        let y = self.apply(x, w)?;
        Ok((*y.value()).clone())
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::AttSets => "attsets",
            Aggregator::AttSetsElement => "attsets-element",
            Aggregator::Max => "max",
            Aggregator::Mean => "mean",
            Aggregator::Sum => "sum",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregator `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// y^d = Σ_n x_n^d e^{x_n·w^d} / Σ_j e^{x_j·w^d}, computed directly.
    fn feature_oracle(x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<f64> {
        let d = w.len();
        (0..d)
            .map(|col| {
                let act: Vec<f64> = x
                    .iter()
                    .map(|row| (0..d).map(|k| row[k] * w[k][col]).sum::<f64>())
                    .collect();
                let num: f64 = x.iter().zip(&act).map(|(row, a)| row[col] * a.exp()).sum();
                let den: f64 = act.iter().map(|a| a.exp()).sum();
                num / den
            })
            .collect()
    }

    #[test]
    fn feature_single_element_is_identity() {
        let x = FeatureSet::from_rows(&[vec![0.3, -2.0, 7.0]]).unwrap();
        let w = AttentionParams::new(
            AttentionMode::Feature,
            Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 5.0, 6.0], vec![0.5, 0.0, -9.0]])
                .unwrap(),
        )
        .unwrap();
        let y = Aggregator::AttSets.eval(&x, Some(&w)).unwrap();
        assert_eq!(y.data(), x.values().data());
    }

    #[test]
    fn zero_weights_give_the_mean() {
        let x = FeatureSet::from_rows(&[vec![1.0, 4.0], vec![2.0, -1.0], vec![6.0, 0.5]]).unwrap();
        for agg in [Aggregator::AttSets, Aggregator::AttSetsElement] {
            let p = AttentionParams::zeros(agg.attention_mode().unwrap(), 2);
            let y = agg.eval(&x, Some(&p)).unwrap();
            assert!((y.data()[0] - 3.0).abs() < 1e-14);
            assert!((y.data()[1] - 3.5 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn feature_matches_direct_summation() {
        let x = vec![vec![0.4, -1.1], vec![2.0, 0.3], vec![-0.7, 0.9]];
        let w = vec![vec![0.5, -1.5], vec![1.2, 0.8]];
        let expected = feature_oracle(&x, &w);
        let set = FeatureSet::from_rows(&x).unwrap();
        let p = AttentionParams::new(AttentionMode::Feature, Tensor::from_rows(&w).unwrap()).unwrap();
        let y = Aggregator::AttSets.eval(&set, Some(&p)).unwrap();
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn element_saturates_to_dominant_row() {
        // a_n = x_n·w; rows chosen so a_2 - a_1 = 20.
        let x = FeatureSet::from_rows(&[vec![0.0, 1.0], vec![20.0, 3.0]]).unwrap();
        let p = AttentionParams::new(AttentionMode::Element, Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap())
            .unwrap();
        let y = Aggregator::AttSetsElement.eval(&x, Some(&p)).unwrap();
        assert!((y.data()[0] - 20.0).abs() < 1e-6 * 20.0);
        assert!((y.data()[1] - 3.0).abs() < 1e-6 * 3.0);
    }

    #[test]
    fn element_single_element_is_identity() {
        let x = FeatureSet::from_rows(&[vec![1.5, -0.25]]).unwrap();
        let p = AttentionParams::new(AttentionMode::Element, Tensor::matrix(2, 1, vec![3.0, -2.0]).unwrap())
            .unwrap();
        let y = Aggregator::AttSetsElement.eval(&x, Some(&p)).unwrap();
        assert_eq!(y.data(), x.values().data());
    }

    #[test]
    fn pooling_examples() {
        let single = FeatureSet::from_rows(&[vec![2.0, -3.0]]).unwrap();
        for agg in [Aggregator::Max, Aggregator::Mean, Aggregator::Sum] {
            assert_eq!(agg.eval(&single, None).unwrap().data(), &[2.0, -3.0]);
        }
        let x = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(Aggregator::Max.eval(&x, None).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(Aggregator::Mean.eval(&x, None).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(Aggregator::Sum.eval(&x, None).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(FeatureSet::from_rows(&[]).is_err());
        let x = FeatureSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let p = AttentionParams::zeros(AttentionMode::Feature, 3);
        assert!(Aggregator::AttSets.eval(&x, Some(&p)).is_err());
        assert!(Aggregator::AttSets.eval(&x, None).is_err());
    }

    #[test]
    fn n1_attention_gradient_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let x = tape.param(random(&mut rng, 1, 5));
        let w = tape.param(random(&mut rng, 5, 5));
        let y = attsets_feature(x, w).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn n4_attention_gradient_is_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let tape = Tape::new();
            let x = tape.constant(random(&mut rng, 4, 6));
            let w = tape.param(random(&mut rng, 6, 6));
            let y = attsets_feature(x, w).unwrap();
            let g = tape.backward(y.sum()).unwrap();
            assert!(g.get(w).unwrap().max_abs() > 0.0);
        }
    }

    #[test]
    fn all_aggregators_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 4, 3);
        let wf = random(&mut rng, 3, 3);
        let we = random(&mut rng, 3, 1);
        let coeffs = random(&mut rng, 1, 3);
        for agg in Aggregator::ALL {
            let w = match agg.attention_mode() {
                Some(AttentionMode::Feature) => Some(wf.clone()),
                Some(AttentionMode::Element) => Some(we.clone()),
                None => None,
            };
            let mut params = vec![x.clone(), coeffs.clone()];
            params.extend(w);
            let r = grad_check(
                &agg.to_string(),
                |_, v| {
                    let y = agg.apply(v[0], v.get(2).copied())?;
                    Ok(y.mul(v[1])?.sum())
                },
                &params,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}
