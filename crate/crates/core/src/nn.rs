//! Layer building blocks shared by the extractor, abstractor, predictor and
//! critic. Each layer only stores [`ParamId`]s; values live in the owning
//! network's [`ParamStore`].

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::seeds::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut Rng) -> Result<Self> {
        let w = store.add_glorot(&format!("{name}.w"), input, output, rng)?;
        let b = if bias { Some(store.add_zeros(&format!("{name}.b"), 1, output)?) } else { None };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Convolution filters for several kernel widths over a `[T, E]` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank {
    pub widths: Vec<usize>,
    kernels: Vec<(ParamId, ParamId)>,
    pub filters: usize,
}

impl ConvBank {
    pub fn new(store: &mut ParamStore, name: &str, embed: usize, filters: usize, widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut kernels = Vec::with_capacity(widths.len());
        for &k in widths {
            let w = store.add_glorot(&format!("{name}.k{k}.w"), k * embed, filters, rng)?;
            let b = store.add_zeros(&format!("{name}.k{k}.b"), 1, filters)?;
            kernels.push((w, b));
        }
        Ok(Self { widths: widths.to_vec(), kernels, filters })
    }

    /// One tanh feature map per width.
    pub fn feature_maps(&self, tape: &mut Tape, x: Var, same: bool) -> Result<Vec<Var>> {
        self.widths
            .iter()
            .zip(&self.kernels)
            .map(|(&k, &(w, b))| {
                let (w, b) = (tape.param(w), tape.param(b));
                let y = tape.conv1d(x, w, b, k, same)?;
                Ok(tape.tanh(y))
            })
            .collect()
    }

    /// Max-over-time pooled features of all widths, concatenated: `[1, widths·F]`.
    pub fn pooled(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let maps = self.feature_maps(tape, x, false)?;
        let pooled: Vec<Var> = maps.into_iter().map(|m| tape.max_over_time(m)).collect();
        tape.concat_cols(&pooled)
    }

    pub fn output_dim(&self) -> usize {
        self.filters * self.widths.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.add_glorot(&format!("{name}.w"), input + hidden, 4 * hidden, rng)?;
        let b = store.add_zeros(&format!("{name}.b"), 1, 4 * hidden)?;
        Ok(Self { w, b, hidden })
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(1, self.hidden));
        let c = tape.constant(Tensor::zeros(1, self.hidden));
        (h, c)
    }

    /// One step; returns the new `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: Var, state: (Var, Var)) -> Result<(Var, Var)> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let out = tape.lstm_cell(x, state.0, state.1, w, b)?;
        let h = tape.slice_cols(out, 0, self.hidden)?;
        let c = tape.slice_cols(out, self.hidden, self.hidden)?;
        Ok((h, c))
    }

    /// Hidden states for each input in order (or in reverse, returned in
    /// input order).
    pub fn run(&self, tape: &mut Tape, inputs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let mut state = self.zero_state(tape);
        let mut out = vec![None; inputs.len()];
        let order: Box<dyn Iterator<Item = usize>> =
            if reverse { Box::new((0..inputs.len()).rev()) } else { Box::new(0..inputs.len()) };
        for i in order {
            state = self.step(tape, inputs[i], state)?;
            out[i] = Some(state.0);
        }
        Ok(out.into_iter().map(|h| h.expect("every step visited")).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    /// `[h_fwd; h_bwd]` per position, each `[1, 2H]`.
    pub fn run(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Vec<Var>> {
        let f = self.fwd.run(tape, inputs, false)?;
        let b = self.bwd.run(tape, inputs, true)?;
        f.into_iter().zip(b).map(|(f, b)| tape.concat_cols(&[f, b])).collect()
    }
}

/// Probability-weighted sampling from unnormalised non-negative weights.
pub fn sample_index(weights: &[f64], rng: &mut Rng) -> usize {
    use rand::Rng as _;
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Index of the largest value; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}
