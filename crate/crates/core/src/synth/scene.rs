use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SynthConfig;
use crate::assoc::{BBox, GtInstances, HardMask};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Instance id of clutter points.
pub const CLUTTER: i64 = -1;

const PLACEMENT_ATTEMPTS: usize = 100;
/// Minimum gap between the boxes of two objects, and between clutter and objects.
const GAP: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticClass {
    Box = 0,
    Sphere = 1,
    Clutter = 2,
}

impl SemanticClass {
    pub const COUNT: usize = 3;
}

/// Labeled point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
    /// Instance id per point; [`CLUTTER`] for none.
    pub instance: Vec<i64>,
    pub semantic: Vec<usize>,
    pub classes: usize,
}

impl Scene {
    pub fn new(
        points: Vec<[f64; 3]>,
        colors: Option<Vec<[f64; 3]>>,
        instance: Vec<i64>,
        semantic: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptySet("scene"));
        }
        if instance.len() != n || semantic.len() != n || colors.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::InvalidArgument(format!("scene of {n} points has mismatched label lengths")));
        }
        if let Some(&s) = semantic.iter().find(|&&s| s >= classes) {
            return Err(Error::InvalidArgument(format!("semantic id {s} outside {classes} classes")));
        }
        if let Some(&i) = instance.iter().find(|&&i| i < CLUTTER) {
            return Err(Error::InvalidArgument(format!("instance id {i} below -1")));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("scene points".into()));
        }
        Ok(Scene {
            points,
            colors,
            instance,
            semantic,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channels(&self) -> usize {
        if self.colors.is_some() {
            6
        } else {
            3
        }
    }

    /// Distinct non-clutter instance ids, ascending.
    pub fn instance_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.instance.iter().copied().filter(|&i| i != CLUTTER).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn instance_mask(&self, id: i64) -> HardMask {
        HardMask::from_bools(self.instance.iter().map(|&i| i == id))
    }

    /// One tight box and mask per instance, in ascending id order.
    pub fn gt_instances(&self) -> Result<GtInstances> {
        let masks = self.instance_ids().into_iter().map(|id| self.instance_mask(id)).collect();
        GtInstances::from_masks(&self.points, masks)
    }

    /// Semantic id of an instance: the majority over its points, ties to the smaller id.
    pub fn instance_semantic(&self, id: i64) -> usize {
        majority(self.instance.iter().zip(&self.semantic).filter(|(&i, _)| i == id).map(|(_, &s)| s), self.classes)
    }

    /// Scene with points reordered so that new point `k` is old point `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Scene> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("not a permutation of the scene points".into()));
        }
        self.subset(perm)
    }

    /// Sub-scene of the given points, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Scene> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("point {bad} out of range")));
        }
        Scene::new(
            gather(&self.points, idx),
            self.colors.as_ref().map(|c| gather(c, idx)),
            gather(&self.instance, idx),
            gather(&self.semantic, idx),
            self.classes,
        )
    }
}

fn gather<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

pub(crate) fn majority(labels: impl Iterator<Item = usize>, classes: usize) -> usize {
    let mut counts = vec![0usize; classes.max(1)];
    for s in labels {
        counts[s] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == best).unwrap_or(0)
}

struct Object {
    class: SemanticClass,
    center: [f64; 3],
    half: [f64; 3],
}

impl Object {
    fn bounds(&self, pad: f64) -> BBox {
        BBox::new(
            [0, 1, 2].map(|a| self.center[a] - self.half[a] - pad),
            [0, 1, 2].map(|a| self.center[a] + self.half[a] + pad),
        )
    }

    fn surface_point(&self, rng: &mut impl Rng) -> [f64; 3] {
        match self.class {
            SemanticClass::Sphere => {
                let mut d = [0.0; 3];
                let mut norm = 0.0;
                while norm < 1e-9 {
                    d = [0; 3].map(|_| StandardNormal.sample(rng));
                    norm = d.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
                }
                [0, 1, 2].map(|a| self.center[a] + self.half[a] * d[a] / norm)
            }
            _ => {
                let [hx, hy, hz] = self.half;
                let areas = [hy * hz, hx * hz, hx * hy];
                let mut r = rng.gen::<f64>() * areas.iter().sum::<f64>();
                let mut axis = 2;
                for (a, area) in areas.iter().enumerate() {
                    if r < *area {
                        axis = a;
                        break;
                    }
                    r -= area;
                }
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                [0, 1, 2].map(|a| {
                    let off = if a == axis {
                        side * self.half[a]
                    } else {
                        rng.gen_range(-self.half[a]..=self.half[a])
                    };
                    self.center[a] + off
                })
            }
        }
    }
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    (0..3).all(|k| a.vmin[k] <= b.vmax[k] && b.vmin[k] <= a.vmax[k])
}

fn base_color(class: SemanticClass) -> [f64; 3] {
    match class {
        SemanticClass::Box => [0.8, 0.3, 0.2],
        SemanticClass::Sphere => [0.2, 0.4, 0.8],
        SemanticClass::Clutter => [0.5, 0.5, 0.5],
    }
}

/// Random scene of separated boxes and ellipsoids plus uniform clutter.
///
/// Object points lie on object surfaces; clutter keeps a fixed gap from every
/// object. Instance ids are `0..k` in placement order.
pub fn make_scene(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Scene> {
    cfg.validate()?;
    let k = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<Object> = Vec::with_capacity(k);
    for o in 0..k {
        let class = if rng.gen_bool(0.5) {
            SemanticClass::Box
        } else {
            SemanticClass::Sphere
        };
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let half = [0, 1, 2].map(|a| rng.gen_range(0.2..=0.55_f64).min(0.45 * cfg.extent[a]));
            let center = [0, 1, 2].map(|a| rng.gen_range(half[a]..=cfg.extent[a] - half[a]));
            let cand = Object { class, center, half };
            let b = cand.bounds(GAP);
            if objects.iter().all(|other| !overlaps(&b, &other.bounds(0.0))) {
                objects.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::domain(
                "make_scene",
                format!("could not place object {o} of {k} after {PLACEMENT_ATTEMPTS} attempts"),
            ));
        }
    }

    let clutter = (cfg.points as f64 * cfg.clutter).round() as usize;
    let object_points = cfg.points - clutter;
    if object_points < k {
        return Err(Error::Config(format!("{} points cannot cover {k} objects", cfg.points)));
    }
    let mut points = Vec::with_capacity(cfg.points);
    let mut instance = Vec::with_capacity(cfg.points);
    let mut semantic = Vec::with_capacity(cfg.points);
    let mut classes = Vec::with_capacity(cfg.points);
    for (id, obj) in objects.iter().enumerate() {
        let count = object_points / k + usize::from(id < object_points % k);
        for _ in 0..count {
            points.push(obj.surface_point(rng));
            instance.push(id as i64);
            semantic.push(obj.class as usize);
            classes.push(obj.class);
        }
    }
    let padded: Vec<BBox> = objects.iter().map(|o| o.bounds(GAP)).collect();
    for _ in 0..clutter {
        let mut p = [0.0; 3];
        for _ in 0..1000 {
            p = [0, 1, 2].map(|a| rng.gen_range(0.0..=cfg.extent[a]));
            if padded.iter().all(|b| !b.contains(&p)) {
                break;
            }
        }
        points.push(p);
        instance.push(CLUTTER);
        semantic.push(SemanticClass::Clutter as usize);
        classes.push(SemanticClass::Clutter);
    }
    let colors = cfg.colors.then(|| {
        classes
            .iter()
            .map(|&c| base_color(c).map(|v| (v + 0.05 * rng.gen_range(-1.0..=1.0)).clamp(0.0, 1.0)))
            .collect()
    });
    Scene::new(points, colors, instance, semantic, SemanticClass::COUNT)
}

/// Scenes `offset..offset + cfg.samples`, each from its own derived stream.
pub fn make_scenes(cfg: &SynthConfig, offset: u64) -> Result<Vec<Scene>> {
    (0..cfg.samples as u64)
        .map(|i| {
            make_scene(cfg, &mut derive_rng(cfg.seed, offset + i)).map_err(|e| match e {
                Error::Domain { op, msg } => Error::Domain {
                    op,
                    msg: format!("{msg} (seed {}, scene {})", cfg.seed, offset + i),
                },
                other => other,
            })
        })
        .collect()
}
