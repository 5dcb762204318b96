use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::VoxelGrid;
use crate::synth::{MultiViewDataset, MultiViewSample, Scene};
use crate::tensor::Tensor;

pub const SCENE_HEADER: &str = "scene";
pub const VOXGRID_HEADER: &str = "voxgrid";
pub const MULTIVIEW_HEADER: &str = "views";

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Scenes as consecutive records: a `scene points=N channels=K classes=S`
/// header, then one `x y z [r g b] inst sem` line per point.
pub fn write_scenes(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for s in scenes {
        let _ = writeln!(out, "{SCENE_HEADER} points={} channels={} classes={}", s.len(), s.channels(), s.classes);
        for k in 0..s.len() {
            let mut fields: Vec<String> = s.points[k].iter().map(f64::to_string).collect();
            if let Some(c) = &s.colors {
                fields.extend(c[k].iter().map(f64::to_string));
            }
            fields.push(s.instance[k].to_string());
            fields.push(s.semantic[k].to_string());
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
    }
    out
}

/// A `voxgrid d=D` header, then the `D³` values on one line, z fastest.
pub fn write_voxgrid(grid: &VoxelGrid) -> String {
    format!("{VOXGRID_HEADER} d={}\n{}\n", grid.side(), join(grid.data()))
}

/// Samples as consecutive records: a `views v=V din=W d=D` header, `V` view
/// rows, then the flattened target grid.
pub fn write_multiview(data: &MultiViewDataset) -> String {
    let mut out = String::new();
    for s in &data.samples {
        let (v, w) = (s.views.rows(), s.views.cols());
        let _ = writeln!(out, "{MULTIVIEW_HEADER} v={v} din={w} d={}", s.target.side());
        for row in s.views.data().chunks(w) {
            out.push_str(&join(row));
            out.push('\n');
        }
        out.push_str(&join(s.target.data()));
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Option<&'a str> {
        let (i, l) = self.inner.next()?;
        self.line = i + 1;
        Some(l)
    }

    fn require(&mut self) -> Result<&'a str> {
        let line = self.line;
        self.next_line().ok_or(Error::Parse {
            line: line + 1,
            msg: "unexpected end of file".into(),
        })
    }

    /// Parse a header `tag k1=v1 k2=v2 ...` whose keys appear in the given order.
    fn header(&self, line: &str, tag: &str, keys: &[&str]) -> Result<Vec<usize>> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(format!("expected `{tag}` header")));
        }
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let part = parts.next().ok_or_else(|| self.err(format!("missing `{key}`")))?;
            let v = part
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| self.err(format!("expected `{key}=`, found `{part}`")))?;
            out.push(v.parse().map_err(|_| self.err(format!("bad value for `{key}`")))?);
        }
        if parts.next().is_some() {
            return Err(self.err("trailing header fields"));
        }
        Ok(out)
    }

    fn values<T: FromStr>(&self, line: &str, count: usize) -> Result<Vec<T>> {
        let out = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(format!("bad number `{t}`"))))
            .collect::<Result<Vec<T>>>()?;
        if out.len() != count {
            return Err(self.err(format!("expected {count} values, found {}", out.len())));
        }
        Ok(out)
    }
}

fn invalid_at(line: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Parse {
        line,
        msg: e.to_string(),
    }
}

pub fn read_scenes(text: &str) -> Result<Vec<Scene>> {
    let mut lines = Lines::new(text);
    let mut scenes = Vec::new();
    while let Some(head) = lines.next_line() {
        if head.trim().is_empty() {
            continue;
        }
        let start = lines.line;
        let h = lines.header(head, SCENE_HEADER, &["points", "channels", "classes"])?;
        let (n, channels, classes) = (h[0], h[1], h[2]);
        if channels != 3 && channels != 6 {
            return Err(lines.err(format!("channels must be 3 or 6, found {channels}")));
        }
        let mut points = Vec::with_capacity(n);
        let mut colors = Vec::new();
        let (mut instance, mut semantic) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let line = lines.require()?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != channels + 2 {
                return Err(lines.err(format!("expected {} fields, found {}", channels + 2, fields.len())));
            }
            let floats: Vec<f64> = lines.values(&fields[..channels].join(" "), channels)?;
            points.push([floats[0], floats[1], floats[2]]);
            if channels == 6 {
                colors.push([floats[3], floats[4], floats[5]]);
            }
            instance.push(fields[channels].parse().map_err(|_| lines.err("bad instance id"))?);
            semantic.push(fields[channels + 1].parse().map_err(|_| lines.err("bad semantic id"))?);
        }
        let colors = (channels == 6).then_some(colors);
        scenes.push(Scene::new(points, colors, instance, semantic, classes).map_err(invalid_at(start))?);
    }
    Ok(scenes)
}

pub fn read_voxgrid(text: &str) -> Result<VoxelGrid> {
    let mut lines = Lines::new(text);
    let head = lines.require()?;
    let d = lines.header(head, VOXGRID_HEADER, &["d"])?[0];
    let row = lines.require()?;
    let data = lines.values(row, d * d * d)?;
    let grid = VoxelGrid::new(d, data).map_err(invalid_at(lines.line))?;
    if lines.next_line().is_some_and(|l| !l.trim().is_empty()) {
        return Err(lines.err("trailing content after grid"));
    }
    Ok(grid)
}

pub fn read_multiview(text: &str) -> Result<MultiViewDataset> {
    let mut lines = Lines::new(text);
    let mut samples = Vec::new();
    while let Some(head) = lines.next_line() {
        if head.trim().is_empty() {
            continue;
        }
        let h = lines.header(head, MULTIVIEW_HEADER, &["v", "din", "d"])?;
        let (v, w, d) = (h[0], h[1], h[2]);
        let mut views = Vec::with_capacity(v * w);
        for _ in 0..v {
            let row = lines.require()?;
            views.extend(lines.values::<f64>(row, w)?);
        }
        let views = Tensor::matrix(v, w, views).map_err(invalid_at(lines.line))?;
        let row = lines.require()?;
        let target = VoxelGrid::new(d, lines.values(row, d * d * d)?).map_err(invalid_at(lines.line))?;
        samples.push(MultiViewSample { views, target });
    }
    Ok(MultiViewDataset { samples })
}
