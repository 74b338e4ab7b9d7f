use rand::Rng;

use super::{NnError, ParamId, ParamStore, Tape, Var};

/// One GRU layer.
///
/// ```text
/// r  = σ(x Wxr + bxr + h Whr)
/// z  = σ(x Wxz + bxz + h Whz)
/// n  = tanh(x Wxn + bxn + (r ⊙ h) Whn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    /// `[input, 3*hidden]`, gate order r, z, n.
    pub w_x: ParamId,
    /// `[1, 3*hidden]`
    pub b_x: ParamId,
    /// `[hidden, 2*hidden]` for r and z.
    pub w_h: ParamId,
    /// `[hidden, hidden]` applied to `r ⊙ h`.
    pub w_hn: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruCell {
            w_x: store.add_uniform(&format!("{prefix}.w_x"), &[input, 3 * hidden], rng),
            b_x: store.add_uniform(&format!("{prefix}.b_x"), &[1, 3 * hidden], rng),
            w_h: store.add_uniform(&format!("{prefix}.w_h"), &[hidden, 2 * hidden], rng),
            w_hn: store.add_uniform(&format!("{prefix}.w_hn"), &[hidden, hidden], rng),
            input,
            hidden,
        }
    }

    pub fn from_store(store: &ParamStore, prefix: &str, input: usize, hidden: usize) -> Option<Self> {
        Some(GruCell {
            w_x: store.id(&format!("{prefix}.w_x"))?,
            b_x: store.id(&format!("{prefix}.b_x"))?,
            w_h: store.id(&format!("{prefix}.w_h"))?,
            w_hn: store.id(&format!("{prefix}.w_hn"))?,
            input,
            hidden,
        })
    }

    /// Input projections `X Wx + bx` for a whole `[T, input]` sequence.
    pub fn project_inputs(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Var, NnError> {
        tape.linear(xs, self.w_x, self.b_x)
    }

    /// Step from a precomputed `[1, 3*hidden]` input projection.
    pub fn step_projected(&self, tape: &mut Tape<'_>, gx: Var, h: Var) -> Result<Var, NnError> {
        let hd = self.hidden;
        let w_h = tape.param(self.w_h);
        let w_hn = tape.param(self.w_hn);
        let gh = tape.matmul(h, w_h)?;
        let gx_rz = tape.slice(gx, 1, 0, 2 * hd)?;
        let rz = tape.add(gx_rz, gh)?;
        let rz = tape.sigmoid(rz)?;
        let r = tape.slice(rz, 1, 0, hd)?;
        let z = tape.slice(rz, 1, hd, hd)?;
        let rh = tape.mul(r, h)?;
        let hn = tape.matmul(rh, w_hn)?;
        let gx_n = tape.slice(gx, 1, 2 * hd, hd)?;
        let n = tape.add(gx_n, hn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// `gru_cell(x_t, h_prev) -> h_t` for a `[1, input]` input row.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var, NnError> {
        let gx = self.project_inputs(tape, x)?;
        self.step_projected(tape, gx, h)
    }
}

/// Stacked GRU layers with dropout between layers.
#[derive(Debug, Clone)]
pub struct Gru {
    pub layers: Vec<GruCell>,
    pub dropout: f64,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruCell::new(store, &format!("{prefix}.l{l}"), inp, hidden, rng)
            })
            .collect();
        Gru { layers, dropout }
    }

    pub fn from_store(
        store: &ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        dropout: f64,
    ) -> Option<Self> {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruCell::from_store(store, &format!("{prefix}.l{l}"), inp, hidden)
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Gru { layers, dropout })
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    /// Runs the full `[T, input]` sequence from initial states `h0` (one per
    /// layer). Returns top-layer outputs per step and final states per layer.
    pub fn run_sequence(
        &self,
        tape: &mut Tape<'_>,
        xs: Var,
        h0: &[Var],
        rng: &mut impl Rng,
    ) -> Result<(Vec<Var>, Vec<Var>), NnError> {
        let steps = tape.value(xs).rows();
        let mut layer_input = xs;
        let mut outputs = Vec::new();
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, cell) in self.layers.iter().enumerate() {
            if l > 0 {
                layer_input = tape.dropout(layer_input, self.dropout, rng)?;
            }
            let proj = cell.project_inputs(tape, layer_input)?;
            let mut h = h0[l];
            outputs.clear();
            for t in 0..steps {
                let gx = tape.slice(proj, 0, t, 1)?;
                h = cell.step_projected(tape, gx, h)?;
                outputs.push(h);
            }
            finals.push(h);
            if l + 1 < self.layers.len() {
                layer_input = tape.concat(&outputs, 0)?;
            }
        }
        Ok((outputs, finals))
    }

    /// One time step through every layer.
    pub fn step(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        states: &[Var],
        rng: &mut impl Rng,
    ) -> Result<Vec<Var>, NnError> {
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (l, cell) in self.layers.iter().enumerate() {
            if l > 0 {
                input = tape.dropout(input, self.dropout, rng)?;
            }
            let h = cell.step(tape, input, states[l])?;
            next.push(h);
            input = h;
        }
        Ok(next)
    }
}
