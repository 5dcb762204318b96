//! Fully connected layers over a [`ParamStore`].

use rand::Rng;

use super::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Slope used by every leaky ReLU in this crate.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
pub fn uniform_init(rng: &mut impl Rng, fan_in: usize, shape: Vec<usize>) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape and data built together")
}

/// `x W + b` with `W: in × out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            uniform_init(rng, fan_in, vec![fan_in, fan_out]),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                group,
                uniform_init(rng, fan_in, vec![1, fan_out]),
            )
        });
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(p.var(self.weight))?;
        match self.bias {
            Some(b) => {
                let rows = y.value().rows();
                y.add(p.var(b).broadcast_rows(rows)?)
            }
            None => Ok(y),
        }
    }

    /// Same as `forward` on `[rows, shared broadcast to every row]`, with the
    /// shared `1 × b` part multiplied once.
    pub fn forward_shared<'t>(&self, p: &Bound<'t>, rows: Var<'t>, shared: Var<'t>) -> Result<Var<'t>> {
        let (n, a) = (rows.value().rows(), rows.value().cols());
        if a >= self.fan_in || shared.shape() != [1, self.fan_in - a] {
            return Err(Error::shape("Linear::forward_shared", &[n, a], &shared.shape()));
        }
        let w = p.var(self.weight);
        let top = w.gather_rows(&(0..a).collect::<Vec<_>>())?;
        let bottom = w.gather_rows(&(a..self.fan_in).collect::<Vec<_>>())?;
        let mut row = shared.matmul(bottom)?;
        if let Some(b) = self.bias {
            row = row.add(p.var(b))?;
        }
        rows.matmul(top)?.add(row.broadcast_rows(n)?)
    }
}

/// Stack of linear layers with leaky ReLU between them (not after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: &str,
        widths: &[usize],
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), group, w[0], w[1], true))
            .collect();
        Mlp { layers }
    }

    /// Forward pass; `activate_last` applies the leaky ReLU after the final layer too.
    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Var<'t>, activate_last: bool) -> Result<Var<'t>> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x)?;
            if i + 1 < n || activate_last {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::tensor::Tape;

    #[test]
    fn shared_forward_matches_concatenated_input() {
        let mut rng = derive_rng(4, 0);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, &mut rng, "l", "g", 5, 3, true);
        let tape = Tape::new();
        let p = store.bind_all(&tape);
        let rows = tape.constant(uniform_init(&mut rng, 1, vec![4, 2]));
        let shared = tape.constant(uniform_init(&mut rng, 1, vec![1, 3]));
        let joined = layer.forward(&p, Var::concat(&[rows, shared.broadcast_rows(4).unwrap()], 1).unwrap()).unwrap();
        let split = layer.forward_shared(&p, rows, shared).unwrap();
        for (x, y) in joined.value().data().iter().zip(split.value().data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let gj = p.grads(&tape.backward(joined.sum()).unwrap());
        let gs = p.grads(&tape.backward(split.sum()).unwrap());
        for (a, b) in gj.iter().zip(&gs) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        assert!(layer.forward_shared(&p, rows, rows).is_err());
    }
}
