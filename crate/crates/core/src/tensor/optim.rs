use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    /// Partition tag, e.g. `"base"` / `"att"`.
    pub group: String,
    pub value: Tensor,
}

/// Named trainable tensors, partitioned by group tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group: group.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in_group<'a>(&'a self, group: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter().filter(move |(_, p)| p.group == group).map(|(id, _)| id)
    }

    /// Current values in id order.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Place every parameter on `tape`; only those accepted by `trainable`
    /// become gradient-tracked leaves.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(&Param) -> bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable(p)))
            .collect();
        Bound { vars }
    }

    pub fn bind_all<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind(tape, |_| true)
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind(tape, |_| false)
    }
}

/// Parameters of a [`ParamStore`] as vars on one tape.
#[derive(Debug)]
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Vars in store order, e.g. built by a caller that owns the leaves.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Per-parameter gradients; `None` for frozen or unreachable parameters.
    pub fn grads(&self, g: &Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| g.get(v).cloned()).collect()
    }
}

/// First/second moment buffers plus hyper-parameters of an Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len()
        || state.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
    {
        return Err(Error::InvalidArgument(
            "Adam moments are not congruent with the parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam over a subset of a [`ParamStore`]. Parameters outside the subset
/// are never written, which is how stage-wise freezing is enforced.
#[derive(Clone, Debug)]
pub struct Adam {
    ids: Vec<ParamId>,
    state: AdamState,
}

impl Adam {
    pub fn new(ids: Vec<ParamId>, lr: f64) -> Self {
        Adam {
            ids,
            state: AdamState::new(lr),
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.state.lr = lr;
    }

    /// `grads` is indexed by [`ParamId`]; missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        let mut params: Vec<Tensor> = self.ids.iter().map(|&id| store.get(id).clone()).collect();
        let gs: Vec<Tensor> = self
            .ids
            .iter()
            .zip(&params)
            .map(|(&id, p)| {
                grads
                    .get(id.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect();
        adam_step(&mut params, &gs, &mut self.state)?;
        for (&id, p) in self.ids.iter().zip(params) {
            *store.get_mut(id) = p;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::row_vector(vec![0.3, -2.0])];
        let before = p.clone();
        let mut st = AdamState::new(0.1);
        adam_step(&mut p, &[Tensor::zeros(vec![1, 2])], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(0.1);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st).unwrap();
        // m̂ = 1, v̂ = 1 -> Δ = 0.1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert!((1.0 - p[0].item() - 0.1).abs() < 1e-8);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![Tensor::row_vector(vec![0.1, 0.2, 0.3])];
            let mut st = AdamState::new(0.01);
            for k in 0..5 {
                let g = Tensor::row_vector(vec![0.5 * k as f64, -1.0, 0.25]);
                adam_step(&mut p, &[g], &mut st).unwrap();
            }
            (p, st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::row_vector(vec![0.1, 0.2])];
        let mut st = AdamState::new(0.01);
        assert!(adam_step(&mut p, &[Tensor::zeros(vec![2, 1])], &mut st).is_err());
    }

    #[test]
    fn store_step_only_touches_selected() {
        let mut store = ParamStore::new();
        let a = store.add("a", "base", Tensor::scalar(1.0));
        let b = store.add("b", "att", Tensor::scalar(1.0));
        let mut opt = Adam::new(vec![a], 0.1);
        let grads = vec![Some(Tensor::scalar(1.0)), Some(Tensor::scalar(1.0))];
        opt.step(&mut store, &grads).unwrap();
        assert!(store.get(a).item() < 1.0);
        assert_eq!(store.get(b).item(), 1.0);
    }
}
