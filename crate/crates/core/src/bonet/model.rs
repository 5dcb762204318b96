use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::nn::{Linear, Mlp, LEAKY_SLOPE};
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct BonetConfig {
    /// Input channels per point (3, or 6 with colors).
    pub channels: usize,
    /// Fixed number of predicted boxes.
    pub boxes: usize,
    pub classes: usize,
    /// Hidden widths of the per-point perceptron; its output width is `feature`.
    pub embed_hidden: Vec<usize>,
    /// Per-point feature width `k`.
    pub feature: usize,
    /// Width of the compressed local and global features in the mask branch.
    pub mask_width: usize,
    pub box_hidden: usize,
    /// Multiplier on the default initial weights of the per-point perceptron.
    pub embed_gain: f64,
    /// Affine map between meters and network coordinates:
    /// `net = (meters - center) / scale`.
    pub center: [f64; 3],
    pub scale: [f64; 3],
}

impl Default for BonetConfig {
    fn default() -> Self {
        BonetConfig {
            channels: 3,
            boxes: 8,
            classes: 3,
            embed_hidden: vec![32, 64],
            feature: 64,
            mask_width: 32,
            box_hidden: 128,
            embed_gain: 2.5,
            center: [2.0, 2.0, 1.0],
            scale: [2.0, 2.0, 1.0],
        }
    }
}

impl BonetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != 3 && self.channels != 6 {
            return Err(Error::Config(format!("channels must be 3 or 6, got {}", self.channels)));
        }
        if self.embed_hidden.contains(&0) {
            return Err(Error::Config("perceptron widths must be positive".into()));
        }
        if self.boxes == 0 || self.classes == 0 || self.feature == 0 || self.mask_width == 0 || self.box_hidden == 0 {
            return Err(Error::Config("network widths and counts must be positive".into()));
        }
        if !(self.embed_gain > 0.0 && self.embed_gain.is_finite()) {
            return Err(Error::Config("embedding gain must be positive".into()));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("coordinate scale must be positive".into()));
        }
        Ok(())
    }

    /// Per-point network input: normalized coordinates, then colors as given.
    pub fn encode_points(&self, points: &[[f64; 3]], colors: Option<&[[f64; 3]]>) -> Result<Tensor> {
        let mut data = Vec::with_capacity(points.len() * self.channels);
        for (k, p) in points.iter().enumerate() {
            data.extend((0..3).map(|a| (p[a] - self.center[a]) / self.scale[a]));
            if self.channels == 6 {
                let c = colors.ok_or_else(|| Error::InvalidArgument("model expects colors".into()))?;
                data.extend_from_slice(&c[k]);
            }
        }
        if points.is_empty() {
            return Err(Error::EmptySet("scene points"));
        }
        Tensor::matrix(points.len(), self.channels, data)
    }

    fn box_scale_row(&self) -> Tensor {
        Tensor::row_vector([self.scale, self.scale].concat())
    }

    fn box_center_row(&self) -> Tensor {
        Tensor::row_vector([self.center, self.center].concat())
    }
}

/// Initial half side of every anchor, in network units.
const ANCHOR_HALF: f64 = 0.15;
/// Shrinks the initial box-head weights so that slots start near their anchors.
const ANCHOR_WEIGHT_SCALE: f64 = 0.1;

/// Flattened `H × 6` rows of small boxes centered on an xy grid spanning
/// the network's unit square, at mid height.
pub fn anchor_boxes(h: usize) -> Vec<f64> {
    let cols = (h as f64).sqrt().ceil() as usize;
    let rows = h.div_ceil(cols);
    (0..h)
        .flat_map(|i| {
            let x = -1.0 + 2.0 * ((i % cols) as f64 + 0.5) / cols as f64;
            let y = -1.0 + 2.0 * ((i / cols) as f64 + 0.5) / rows as f64;
            let c = [x, y, 0.0];
            [0, 1, 2].map(|a| c[a] - ANCHOR_HALF).into_iter().chain([0, 1, 2].map(|a| c[a] + ANCHOR_HALF))
        })
        .collect()
}

/// Per-point backbone and its prediction heads.
#[derive(Clone, Debug, PartialEq)]
pub struct BonetModel {
    pub cfg: BonetConfig,
    pub store: ParamStore,
    embed: Mlp,
    local: Linear,
    box_trunk: Mlp,
    box_head: Linear,
    score_head: Linear,
    mask_local: Linear,
    mask_global: Linear,
    mask_fuse: Linear,
    mask_feat: Linear,
    mask_box: Linear,
    mask_head: Mlp,
    sem: Mlp,
}

/// Outputs of the shared part of a forward pass.
pub struct SceneForward<'t> {
    /// `N × k` per-point features.
    pub local: Var<'t>,
    /// `1 × k` global feature, the column max of the point embedding.
    pub global: Var<'t>,
    /// `H × 6` boxes in meters, rows `[vmin, vmax]`.
    pub boxes: Var<'t>,
    /// `H × 1` scores in `(0, 1)`.
    pub scores: Var<'t>,
    /// `N × S` class probabilities.
    pub semantics: Var<'t>,
    /// `N × w` box-independent part of the mask branch.
    mixed: Var<'t>,
}

impl BonetModel {
    pub fn new(cfg: BonetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let k = cfg.feature;
        let w = cfg.mask_width;
        let widths: Vec<usize> = std::iter::once(cfg.channels)
            .chain(cfg.embed_hidden.iter().copied())
            .chain(std::iter::once(k))
            .collect();
        let embed = Mlp::new(&mut s, rng, "backbone.embed", "backbone", &widths);
        for l in &embed.layers {
            *s.get_mut(l.weight) = s.get(l.weight).map(|w| w * cfg.embed_gain);
        }
        let local = Linear::new(&mut s, rng, "backbone.local", "backbone", 2 * k, k, true);
        let box_trunk = Mlp::new(&mut s, rng, "box.trunk", "box", &[k, cfg.box_hidden, cfg.box_hidden]);
        let box_head = Linear::new(&mut s, rng, "box.coords", "box", cfg.box_hidden, 6 * cfg.boxes, true);
        *s.get_mut(box_head.weight) = s.get(box_head.weight).map(|w| w * ANCHOR_WEIGHT_SCALE);
        *s.get_mut(box_head.bias.expect("bias")) = Tensor::row_vector(anchor_boxes(cfg.boxes));
        let score_head = Linear::new(&mut s, rng, "box.scores", "box", cfg.box_hidden, cfg.boxes, true);
        let mask_local = Linear::new(&mut s, rng, "mask.local", "mask", k, w, true);
        let mask_global = Linear::new(&mut s, rng, "mask.global", "mask", k, w, true);
        let mask_fuse = Linear::new(&mut s, rng, "mask.fuse", "mask", 2 * w, w, true);
        // The first box-aware layer acts on [mixed, box(7)] as two partial products.
        let mask_feat = Linear::new(&mut s, rng, "mask.feat", "mask", w, w, true);
        let mask_box = Linear::new(&mut s, rng, "mask.box", "mask", 7, w, false);
        let mask_head = Mlp::new(&mut s, rng, "mask.head", "mask", &[w, w, 1]);
        let sem = Mlp::new(&mut s, rng, "sem", "sem", &[k, 32, cfg.classes]);
        Ok(BonetModel {
            cfg,
            store: s,
            embed,
            local,
            box_trunk,
            box_head,
            score_head,
            mask_local,
            mask_global,
            mask_fuse,
            mask_feat,
            mask_box,
            mask_head,
            sem,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, input: &Tensor) -> Result<SceneForward<'t>> {
        if input.rank() != 2 || input.cols() != self.cfg.channels {
            return Err(Error::shape("BonetModel::forward", input.shape(), &[input.rows(), self.cfg.channels]));
        }
        let x = tape.constant(input.clone());
        let emb = self.embed.forward(p, x, true)?;
        let global = emb.max_axis(0)?;
        let local = self.local.forward_shared(p, emb, global)?.leaky_relu(LEAKY_SLOPE);

        let h = self.cfg.boxes;
        let trunk = self.box_trunk.forward(p, global, true)?;
        let raw = self.box_head.forward(p, trunk)?.reshape(vec![h, 6])?;
        let scale = tape.constant(self.cfg.box_scale_row()).broadcast_rows(h)?;
        let center = tape.constant(self.cfg.box_center_row()).broadcast_rows(h)?;
        let boxes = raw.mul(scale)?.add(center)?;
        let scores = self.score_head.forward(p, trunk)?.sigmoid().reshape(vec![h, 1])?;

        let ml = self.mask_local.forward(p, local)?.leaky_relu(LEAKY_SLOPE);
        let mg = self.mask_global.forward(p, global)?.leaky_relu(LEAKY_SLOPE);
        let mixed = self.mask_fuse.forward_shared(p, ml, mg)?.leaky_relu(LEAKY_SLOPE);
        let mixed = self.mask_feat.forward(p, mixed)?;

        let semantics = self.sem.forward(p, local, false)?.softmax(1)?;
        Ok(SceneForward {
            local,
            global,
            boxes,
            scores,
            semantics,
            mixed,
        })
    }

    /// Mask probabilities (`K × N`) for `K` boxes in meters with their scores.
    pub fn masks<'t>(&self, p: &Bound<'t>, f: &SceneForward<'t>, boxes: Var<'t>, scores: Var<'t>) -> Result<Var<'t>> {
        let tape = boxes.tape();
        let k = boxes.value().rows();
        let n = f.mixed.value().rows();
        let scale = tape.constant(self.cfg.box_scale_row()).broadcast_rows(k)?;
        let center = tape.constant(self.cfg.box_center_row()).broadcast_rows(k)?;
        let net_boxes = boxes.sub(center)?.div(scale)?;
        let box_rows = Var::concat(&[net_boxes, scores], 1)?;
        let box_terms = self.mask_box.forward(p, box_rows)?;
        let mut rows = Vec::with_capacity(k);
        for i in 0..k {
            let b = box_terms.gather_rows(&[i])?.broadcast_rows(n)?;
            let hidden = f.mixed.add(b)?.leaky_relu(LEAKY_SLOPE);
            rows.push(self.mask_head.forward(p, hidden, false)?.sigmoid().transpose()?);
        }
        Var::concat(&rows, 0)
    }
}
