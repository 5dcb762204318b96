use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::synth::CLUTTER;

/// A scene id links to a block instance when it covers this many of the
/// instance's points in labeled cells, or a fifth of them.
const LINK_POINTS: usize = 3;
const LINK_DIVISOR: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    /// Side of the square block footprint in the xy plane, meters.
    pub size: f64,
    /// Overlap of neighboring blocks, meters.
    pub overlap: f64,
    /// Side of the merge grid cells, meters.
    pub cell: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            size: 1.0,
            overlap: 0.5,
            cell: 0.1,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.size > 0.0 && self.cell > 0.0) {
            return Err(Error::Config("block size and cell size must be positive".into()));
        }
        if !(self.overlap >= 0.0 && self.overlap < self.size) {
            return Err(Error::Config("block overlap must lie in [0, size)".into()));
        }
        Ok(())
    }

    fn stride(&self) -> f64 {
        self.size - self.overlap
    }
}

/// Points whose xy position lies in `[origin, origin + size]` on both axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub origin: [f64; 2],
    /// Ascending point indices.
    pub indices: Vec<usize>,
}

/// Overlapping xy blocks covering every point, in x-major order; empty blocks are dropped.
///
/// A scene whose footprint fits in one block yields exactly one block.
pub fn block_partition(points: &[[f64; 3]], cfg: &BlockConfig) -> Result<Vec<Block>> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::EmptySet("scene points"));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let count = |a: usize| 1 + ((hi[a] - lo[a] - cfg.size).max(0.0) / cfg.stride()).ceil() as usize;
    let mut blocks = Vec::new();
    for bx in 0..count(0) {
        for by in 0..count(1) {
            let origin = [lo[0] + bx as f64 * cfg.stride(), lo[1] + by as f64 * cfg.stride()];
            let indices: Vec<usize> = points
                .iter()
                .enumerate()
                .filter(|(_, p)| (0..2).all(|a| p[a] >= origin[a] && p[a] <= origin[a] + cfg.size))
                .map(|(k, _)| k)
                .collect();
            if !indices.is_empty() {
                blocks.push(Block { origin, indices });
            }
        }
    }
    Ok(blocks)
}

/// Unify per-block instance labels into scene-wide ids.
///
/// `labels[b][k]` is the local label of point `blocks[b].indices[k]`. Blocks
/// are merged in order over a grid of cells. Among the points of a block
/// instance that fall in already-labeled cells, every scene id covering
/// enough of them is unified with the instance; with no such id the
/// instance opens a fresh one. Each point keeps the first non-clutter id it
/// receives. Ids are renumbered by first appearance in point order.
pub fn block_merge(points: &[[f64; 3]], blocks: &[Block], labels: &[Vec<i64>], cfg: &BlockConfig) -> Result<Vec<i64>> {
    cfg.validate()?;
    if blocks.len() != labels.len() {
        return Err(Error::shape("block_merge", &[blocks.len()], &[labels.len()]));
    }
    let cell_of = |k: usize| -> [i64; 3] {
        let p = points[k];
        [0, 1, 2].map(|a| (p[a] / cfg.cell).floor() as i64)
    };
    let mut cells: HashMap<[i64; 3], i64> = HashMap::new();
    let mut point_id: Vec<Option<i64>> = vec![None; points.len()];
    let mut parent: Vec<i64> = Vec::new();
    for (block, local) in blocks.iter().zip(labels) {
        if block.indices.len() != local.len() {
            return Err(Error::shape("block_merge", &[block.indices.len()], &[local.len()]));
        }
        if let Some(&bad) = block.indices.iter().find(|&&k| k >= points.len()) {
            return Err(Error::InvalidArgument(format!("point {bad} out of range")));
        }
        let mut groups: Vec<(i64, Vec<usize>)> = Vec::new();
        for (&k, &l) in block.indices.iter().zip(local) {
            if l == CLUTTER {
                continue;
            }
            match groups.iter_mut().find(|(g, _)| *g == l) {
                Some((_, v)) => v.push(k),
                None => groups.push((l, vec![k])),
            }
        }
        groups.sort_by_key(|(l, _)| *l);
        for (_, members) in groups {
            let mut votes: Vec<(i64, usize)> = Vec::new();
            let mut labeled = 0usize;
            for &k in &members {
                if let Some(&g) = cells.get(&cell_of(k)) {
                    labeled += 1;
                    match votes.iter_mut().find(|(v, _)| *v == g) {
                        Some((_, c)) => *c += 1,
                        None => votes.push((g, 1)),
                    }
                }
            }
            let linked: Vec<i64> = votes.iter().filter(|(_, c)| *c >= LINK_POINTS || c * LINK_DIVISOR >= labeled).map(|(g, _)| find(&mut parent, *g)).collect();
            let id = match linked.iter().min() {
                Some(&root) => {
                    for &g in &linked {
                        parent[g as usize] = root;
                    }
                    root
                }
                None => {
                    parent.push(parent.len() as i64);
                    parent.len() as i64 - 1
                }
            };
            for &k in &members {
                cells.entry(cell_of(k)).or_insert(id);
                point_id[k].get_or_insert(id);
            }
        }
    }
    let mut renumber: HashMap<i64, i64> = HashMap::new();
    Ok(point_id
        .into_iter()
        .map(|id| match id {
            None => CLUTTER,
            Some(g) => {
                let g = find(&mut parent, g);
                let n = renumber.len() as i64;
                *renumber.entry(g).or_insert(n)
            }
        })
        .collect())
}

fn find(parent: &mut [i64], mut g: i64) -> i64 {
    while parent[g as usize] != g {
        let up = parent[parent[g as usize] as usize];
        parent[g as usize] = up;
        g = up;
    }
    g
}

/// Whether two labelings induce the same partition of the given points, clutter matching clutter.
pub fn same_partition(a: &[i64], b: &[i64], points: impl IntoIterator<Item = usize>) -> bool {
    let mut fwd: HashMap<i64, i64> = HashMap::new();
    let mut back: HashMap<i64, i64> = HashMap::new();
    for k in points {
        let (x, y) = (a[k], b[k]);
        if (x == CLUTTER) != (y == CLUTTER) {
            return false;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}
