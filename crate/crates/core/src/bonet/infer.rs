use std::collections::BTreeMap;

use super::blocks::{block_merge, block_partition, BlockConfig};
use super::loss::LossConfig;
use super::model::BonetModel;
use crate::assoc::BBox;
use crate::error::{Error, Result};
use crate::synth::{Scene, CLUTTER};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferConfig {
    /// Boxes scoring below this are dropped.
    pub score_threshold: f64,
    /// Points below this mask probability stay unassigned for a box.
    pub mask_threshold: f64,
    /// Off keeps every box regardless of score.
    pub score_branch: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            score_threshold: 0.5,
            mask_threshold: 0.5,
            score_branch: true,
        }
    }
}

impl InferConfig {
    pub fn for_loss(loss: &LossConfig) -> Self {
        InferConfig {
            score_branch: loss.score_branch,
            ..InferConfig::default()
        }
    }
}

/// Per-point instance and semantic labels with the instance class table.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    /// Instance id per point, [`CLUTTER`] for none.
    pub instance: Vec<i64>,
    pub semantic: Vec<usize>,
    pub classes: usize,
}

impl Labeling {
    pub fn from_scene(scene: &Scene) -> Self {
        Labeling {
            instance: scene.instance.clone(),
            semantic: scene.semantic.clone(),
            classes: scene.classes,
        }
    }

    /// Point indices of every instance, by ascending id.
    pub fn instances(&self) -> BTreeMap<i64, Vec<usize>> {
        let mut out: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (k, &i) in self.instance.iter().enumerate() {
            if i != CLUTTER {
                out.entry(i).or_default().push(k);
            }
        }
        out
    }

    /// Majority semantic label over the given points, ties to the smaller class.
    pub fn class_of(&self, points: &[usize]) -> usize {
        let mut counts = vec![0usize; self.classes];
        for &k in points {
            counts[self.semantic[k]] += 1;
        }
        let best = counts.iter().copied().max().unwrap_or(0);
        counts.iter().position(|&c| c == best).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Labeling,
    /// Kept boxes and scores; instance `i` of `labels` comes from box `i`.
    pub boxes: Vec<BBox>,
    pub scores: Vec<f64>,
}

/// Instance segmentation of one scene.
///
/// Boxes are kept by score; each point joins the kept box with the highest
/// mask probability at or above the mask threshold, ties to the lower index.
pub fn infer_scene(model: &BonetModel, scene: &Scene, cfg: &InferConfig) -> Result<Prediction> {
    let input = model.cfg.encode_points(&scene.points, scene.colors.as_deref())?;
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    let f = model.forward(&p, &tape, &input)?;
    let scores_all = f.scores.value();
    let kept: Vec<usize> = (0..model.cfg.boxes)
        .filter(|&i| !cfg.score_branch || scores_all.data()[i] >= cfg.score_threshold)
        .collect();
    let n = scene.len();
    let probs = f.semantics.value();
    let semantic: Vec<usize> = (0..n).map(|k| argmax(probs.row(k))).collect();
    let boxes_t = f.boxes.value();
    let boxes: Vec<BBox> = kept.iter().map(|&i| BBox::from_row(boxes_t.row(i))).collect();
    let scores: Vec<f64> = kept.iter().map(|&i| scores_all.data()[i]).collect();
    let mut instance = vec![CLUTTER; n];
    if !kept.is_empty() {
        let score_col = if cfg.score_branch {
            f.scores.gather_rows(&kept)?
        } else {
            tape.constant(Tensor::ones(vec![kept.len(), 1]))
        };
        let masks = model.masks(&p, &f, f.boxes.gather_rows(&kept)?, score_col)?.value();
        for (k, label) in instance.iter_mut().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..kept.len() {
                let m = masks.at(i, k);
                if m >= cfg.mask_threshold && best.map_or(true, |(_, b)| m > b) {
                    best = Some((i, m));
                }
            }
            if let Some((i, _)) = best {
                *label = i as i64;
            }
        }
    }
    Ok(Prediction {
        labels: Labeling {
            instance,
            semantic,
            classes: scene.classes,
        },
        boxes,
        scores,
    })
}

/// Inference on each block of the scene, merged into scene-wide instance
/// ids. A point's semantic label comes from the first block containing it.
pub fn infer_scene_blocks(model: &BonetModel, scene: &Scene, cfg: &InferConfig, blocks: &BlockConfig) -> Result<Labeling> {
    let parts = block_partition(&scene.points, blocks)?;
    let mut semantic: Vec<Option<usize>> = vec![None; scene.len()];
    let mut labels = Vec::with_capacity(parts.len());
    for b in &parts {
        let pred = infer_scene(model, &scene.subset(&b.indices)?, cfg)?;
        for (&k, &s) in b.indices.iter().zip(&pred.labels.semantic) {
            semantic[k].get_or_insert(s);
        }
        labels.push(pred.labels.instance);
    }
    Ok(Labeling {
        instance: block_merge(&scene.points, &parts, &labels, blocks)?,
        semantic: semantic.into_iter().map(|s| s.expect("blocks cover every point")).collect(),
        classes: scene.classes,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Instance precision and recall, averaged over the classes present in the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecRec {
    pub mprec: f64,
    pub mrec: f64,
    /// `(class, precision, recall)` for every class with ground-truth instances.
    pub per_class: Vec<(usize, f64, f64)>,
}

/// Intersection over union of two point-index sets, each sorted ascending.
pub fn point_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy one-to-one matching within each class by descending IoU; a pair
/// counts as a true positive when its IoU reaches `iou`.
///
/// Counts are pooled over scenes per class. A class with ground truth but
/// no predictions has precision 0.
pub fn eval_mprec_mrec(scenes: &[(Labeling, Labeling)], iou: f64) -> Result<PrecRec> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Error::InvalidArgument(format!("IoU threshold {iou} outside [0, 1]")));
    }
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut npred: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ngt: BTreeMap<usize, usize> = BTreeMap::new();
    for (pred, gt) in scenes {
        if pred.instance.len() != gt.instance.len() {
            return Err(Error::shape("eval_mprec_mrec", &[pred.instance.len()], &[gt.instance.len()]));
        }
        let p: Vec<(usize, Vec<usize>)> = pred.instances().into_values().map(|v| (pred.class_of(&v), v)).collect();
        let g: Vec<(usize, Vec<usize>)> = gt.instances().into_values().map(|v| (gt.class_of(&v), v)).collect();
        for (c, _) in &p {
            *npred.entry(*c).or_default() += 1;
        }
        for (c, _) in &g {
            *ngt.entry(*c).or_default() += 1;
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (a, (cp, pp)) in p.iter().enumerate() {
            for (b, (cg, gp)) in g.iter().enumerate() {
                let v = point_iou(pp, gp);
                if cp == cg && v >= iou && v > 0.0 {
                    pairs.push((v, a, b));
                }
            }
        }
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut used_p = vec![false; p.len()];
        let mut used_g = vec![false; g.len()];
        for (_, a, b) in pairs {
            if !used_p[a] && !used_g[b] {
                used_p[a] = true;
                used_g[b] = true;
                *tp.entry(p[a].0).or_default() += 1;
            }
        }
    }
    if ngt.is_empty() {
        return Err(Error::EmptySet("ground-truth instances"));
    }
    let per_class: Vec<(usize, f64, f64)> = ngt
        .iter()
        .map(|(&c, &n)| {
            let t = tp.get(&c).copied().unwrap_or(0) as f64;
            let np = npred.get(&c).copied().unwrap_or(0);
            let prec = if np == 0 { 0.0 } else { t / np as f64 };
            (c, prec, t / n as f64)
        })
        .collect();
    let k = per_class.len() as f64;
    Ok(PrecRec {
        mprec: per_class.iter().map(|c| c.1).sum::<f64>() / k,
        mrec: per_class.iter().map(|c| c.2).sum::<f64>() / k,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bonet::model::BonetConfig;
    use crate::rng::derive_rng;
    use crate::synth::{make_scene, SynthConfig};

    fn lab(instance: Vec<i64>, semantic: Vec<usize>) -> Labeling {
        Labeling {
            instance,
            semantic,
            classes: 3,
        }
    }

    #[test]
    fn one_of_two_found_exactly() {
        let gt = lab(vec![0, 0, 1, 1, -1], vec![0; 5]);
        let pred = lab(vec![5, 5, -1, -1, -1], vec![0; 5]);
        let r = eval_mprec_mrec(&[(pred, gt)], 0.5).unwrap();
        assert_eq!((r.mprec, r.mrec), (1.0, 0.5));
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = lab(vec![0, 0, 1, 1, 2], vec![0, 0, 1, 1, 1]);
        let r = eval_mprec_mrec(&[(gt.clone(), gt.clone())], 0.5).unwrap();
        assert_eq!((r.mprec, r.mrec), (1.0, 1.0));
        let none = lab(vec![-1; 5], vec![0; 5]);
        let r = eval_mprec_mrec(&[(none, gt)], 0.5).unwrap();
        assert_eq!((r.mprec, r.mrec), (0.0, 0.0));
        assert!(eval_mprec_mrec(&[(lab(vec![-1], vec![0]), lab(vec![-1], vec![0]))], 0.5).is_err());
    }

    #[test]
    fn class_mismatch_is_not_a_hit() {
        let gt = lab(vec![0, 0], vec![0, 0]);
        let pred = lab(vec![0, 0], vec![1, 1]);
        let r = eval_mprec_mrec(&[(pred, gt)], 0.5).unwrap();
        assert_eq!(r.per_class, vec![(0, 0.0, 0.0)]);
    }

    #[test]
    fn greedy_matching_is_one_to_one() {
        // Two predictions overlap one ground-truth instance; only one can match.
        let gt = lab(vec![0, 0, 0, 0, -1, -1], vec![0; 6]);
        let pred = lab(vec![0, 0, 0, 0, 1, 1], vec![0; 6]);
        let pred2 = lab(vec![0, 0, 0, 1, 1, 1], vec![0; 6]);
        let r = eval_mprec_mrec(&[(pred, gt.clone())], 0.5).unwrap();
        assert_eq!((r.mprec, r.mrec), (0.5, 1.0));
        let r = eval_mprec_mrec(&[(pred2, gt)], 0.5).unwrap();
        assert_eq!((r.mprec, r.mrec), (0.5, 1.0));
    }

    #[test]
    fn point_iou_examples() {
        assert_eq!(point_iou(&[0, 1, 2], &[1, 2, 3]), 0.5);
        assert_eq!(point_iou(&[], &[]), 0.0);
        assert_eq!(point_iou(&[4], &[4]), 1.0);
    }

    #[test]
    fn inference_labels_every_point_consistently() {
        let scene = make_scene(&SynthConfig::default(), &mut derive_rng(1, 0)).unwrap();
        let m = BonetModel::new(BonetConfig::default(), &mut derive_rng(0, 0)).unwrap();
        let cfg = InferConfig {
            score_branch: false,
            ..InferConfig::default()
        };
        let pred = infer_scene(&m, &scene, &cfg).unwrap();
        assert_eq!(pred.boxes.len(), 8);
        assert_eq!(pred.labels.instance.len(), scene.len());
        assert!(pred.labels.instance.iter().all(|&i| i == CLUTTER || (0..8).contains(&i)));
        assert_eq!(pred, infer_scene(&m, &scene, &cfg).unwrap());
        let strict = InferConfig {
            score_threshold: 1.1,
            ..InferConfig::default()
        };
        let none = infer_scene(&m, &scene, &strict).unwrap();
        assert!(none.boxes.is_empty());
        assert!(none.labels.instance.iter().all(|&i| i == CLUTTER));
    }

    #[test]
    fn one_block_mode_matches_whole_scene_mode() {
        let m = BonetModel::new(BonetConfig::default(), &mut derive_rng(4, 0)).unwrap();
        let cfg = InferConfig {
            score_threshold: 0.0,
            ..InferConfig::default()
        };
        let one_block = BlockConfig {
            size: 5.0,
            ..BlockConfig::default()
        };
        for seed in 0..3 {
            let scene = make_scene(&SynthConfig::default(), &mut derive_rng(seed, 0)).unwrap();
            let whole = infer_scene(&m, &scene, &cfg).unwrap().labels;
            let blocks = infer_scene_blocks(&m, &scene, &cfg, &one_block).unwrap();
            assert_eq!(blocks.semantic, whole.semantic);
            assert!(crate::bonet::same_partition(&blocks.instance, &whole.instance, 0..scene.len()));
        }
    }
}
