use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `tape` as a leaf; `trainable` decides which
    /// ones receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> ParamVars {
        ParamVars(
            self.names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| tape.leaf(t.clone(), trainable(n)))
                .collect(),
        )
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl From<Vec<Var>> for ParamVars {
    /// Leaves in [`ParamStore`] registration order.
    fn from(vars: Vec<Var>) -> Self {
        Self(vars)
    }
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.0.iter().enumerate().map(|(i, v)| (ParamId(i), *v))
    }
}

/// Affine layer `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: store.add(format!("{name}.w"), Tensor::uniform(&[fan_in, fan_out], k, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Var {
        let h = tape.matmul(x, vars.get(self.w));
        tape.add(h, vars.get(self.b))
    }
}

/// Single GRU layer.
///
/// `r = s(x Wx_r + h Wh_r + b_r)`, `u = s(x Wx_u + h Wh_u + b_u)`,
/// `n = tanh(x Wx_n + b_n + r * (h Wh_n))`, `h' = (1 - u) * n + u * h`.
/// Gate blocks are stored side by side in the order `[r | u | n]`.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: store.add(format!("{name}.wx"), Tensor::uniform(&[input, 3 * hidden], k, rng)),
            wh: store.add(format!("{name}.wh"), Tensor::uniform(&[hidden, 3 * hidden], k, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[3 * hidden])),
            hidden,
        }
    }

    pub fn step(&self, tape: &mut Tape, vars: &ParamVars, x: Var, h: Var) -> Var {
        let hs = self.hidden;
        let gx = tape.matmul(x, vars.get(self.wx));
        let gx = tape.add(gx, vars.get(self.b));
        let gh = tape.matmul(h, vars.get(self.wh));

        let xr = tape.slice(gx, 0, hs);
        let hr = tape.slice(gh, 0, hs);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);

        let xu = tape.slice(gx, hs, 2 * hs);
        let hu = tape.slice(gh, hs, 2 * hs);
        let u = tape.add(xu, hu);
        let u = tape.sigmoid(u);

        let xn = tape.slice(gx, 2 * hs, 3 * hs);
        let hn = tape.slice(gh, 2 * hs, 3 * hs);
        let rn = tape.mul(r, hn);
        let n = tape.add(xn, rn);
        let n = tape.tanh(n);

        // n + u * (h - n)
        let d = tape.sub(h, n);
        let ud = tape.mul(u, d);
        tape.add(n, ud)
    }
}

/// Stacked GRU layers; each layer feeds its new state to the next.
#[derive(Clone, Debug)]
pub struct Gru {
    pub layers: Vec<GruCell>,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruCell::new(store, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    /// One time step through every layer; returns the new per-layer states.
    pub fn step(&self, tape: &mut Tape, vars: &ParamVars, x: Var, hs: &[Var]) -> Vec<Var> {
        assert_eq!(hs.len(), self.layers.len(), "one state per layer");
        let mut input = x;
        let mut out = Vec::with_capacity(hs.len());
        for (cell, &h) in self.layers.iter().zip(hs) {
            let h_new = cell.step(tape, vars, input, h);
            out.push(h_new);
            input = h_new;
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            table: store.add(format!("{name}.table"), Tensor::uniform(&[vocab, dim], 1.0, rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, ids: &[usize]) -> Var {
        tape.gather_rows(vars.get(self.table), ids)
    }
}
