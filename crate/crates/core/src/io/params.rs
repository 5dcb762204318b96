use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const PARAM_HEADER: &str = "param";

/// Every parameter as a `param <name> shape=<d0>x<d1>...` line followed by its values.
pub fn write_params(store: &ParamStore) -> String {
    let mut out = String::new();
    for (_, p) in store.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{PARAM_HEADER} {} shape={}", p.name, shape.join("x"));
        let values: Vec<String> = p.value.data().iter().map(f64::to_string).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

/// Overwrite the parameters of `store` by name; every parameter must be
/// present exactly once with its current shape.
pub fn read_params(store: &mut ParamStore, text: &str) -> Result<()> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut seen = vec![false; store.len()];
    while let Some((i, head)) = lines.next() {
        let err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
        let fields: Vec<&str> = head.split_whitespace().collect();
        let (name, shape) = match fields.as_slice() {
            [PARAM_HEADER, name, shape] => (*name, *shape),
            _ => return Err(err(i, "expected `param <name> shape=<dims>`".into())),
        };
        let dims: Vec<usize> = shape
            .strip_prefix("shape=")
            .ok_or_else(|| err(i, "missing shape".into()))?
            .split('x')
            .map(|d| d.parse().map_err(|_| err(i, format!("bad dimension `{d}`"))))
            .collect::<Result<_>>()?;
        let id = store.find(name).ok_or_else(|| err(i, format!("unknown parameter `{name}`")))?;
        if store.get(id).shape() != dims.as_slice() {
            return Err(err(i, format!("parameter `{name}` has shape {:?}, file has {dims:?}", store.get(id).shape())));
        }
        if std::mem::replace(&mut seen[id.0], true) {
            return Err(err(i, format!("parameter `{name}` repeated")));
        }
        let (j, row) = lines.next().ok_or_else(|| err(i + 1, "missing values".into()))?;
        let values: Vec<f64> = row
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(j, format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        *store.get_mut(id) = Tensor::new(dims, values).map_err(|e| err(j, e.to_string()))?;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let name = &store.iter().nth(k).expect("index in range").1.name;
        return Err(Error::Config(format!("checkpoint lacks parameter `{name}`")));
    }
    Ok(())
}
