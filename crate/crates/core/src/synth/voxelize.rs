use rand::Rng;

use crate::assoc::BBox;
use crate::metrics::VoxelGrid;

/// Transverse resolution of [`partial_view`].
pub const PARTIAL_COLUMNS: usize = 32;

/// Cell of coordinate `c` when `[lo, hi]` is split into `d` cells.
///
/// Cells are `(a, b]` except the first, which is closed, so a point on a shared
/// face lands in the lower cell. `None` outside `[lo, hi]`.
pub fn voxel_index(c: f64, lo: f64, hi: f64, d: usize) -> Option<usize> {
    if !(c >= lo && c <= hi) {
        return None;
    }
    let width = hi - lo;
    if width <= 0.0 {
        return Some(0);
    }
    let t = (c - lo) / width * d as f64;
    let i = (t.ceil() as usize).saturating_sub(1);
    Some(i.min(d - 1))
}

/// Binary `d³` occupancy of the points inside `extent`; the rest are ignored.
pub fn voxelize_points(points: &[[f64; 3]], d: usize, extent: &BBox) -> VoxelGrid {
    let mut g = VoxelGrid::empty(d);
    for p in points {
        let idx: Option<Vec<usize>> = (0..3).map(|a| voxel_index(p[a], extent.vmin[a], extent.vmax[a], d)).collect();
        if let Some(i) = idx {
            g.set(i[0], i[1], i[2], 1.0);
        }
    }
    g
}

/// Points seen by an axis-aligned depth camera looking along a random
/// signed axis.
///
/// The cloud's bounding box is cut into `32 × 32` transverse columns and 32
/// depth cells; per column only points in the frontmost occupied depth cell
/// survive. Input order is preserved.
pub fn partial_view(points: &[[f64; 3]], rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let Ok(bbox) = BBox::from_points(points) else {
        return Vec::new();
    };
    let axis = rng.gen_range(0..3);
    let toward_max = rng.gen_bool(0.5);
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let n = PARTIAL_COLUMNS;
    let cell = |p: &[f64; 3], a: usize| voxel_index(p[a], bbox.vmin[a], bbox.vmax[a], n).expect("inside bbox");
    // Camera sits on the min side unless looking toward max.
    let depth = |p: &[f64; 3]| {
        let k = cell(p, axis);
        if toward_max {
            k
        } else {
            n - 1 - k
        }
    };
    let mut front = vec![usize::MAX; n * n];
    for p in points {
        let col = cell(p, u) * n + cell(p, v);
        front[col] = front[col].min(depth(p));
    }
    points
        .iter()
        .filter(|p| front[cell(p, u) * n + cell(p, v)] == depth(p))
        .copied()
        .collect()
}
