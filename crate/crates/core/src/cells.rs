//! Recurrent cells: first-order (RNN, LSTM), matrix lag (MRNN, MLSTM), dense
//! higher-order (HORNN) and tensor-train higher-order (HOT-RNN, HOT-LSTM).
//!
//! Every cell maps an input `x_t` and the last `L` hidden states to `h_t`.
//! Gate order for the LSTM family is `[i, g, f, o]`; `i, f, o` go through a
//! sigmoid and `g` through tanh, with
//!
//! ```text
//! c_t = c_(t-1) ∘ f_t + i_t ∘ g_t
//! h_t = c_t ∘ o_t
//! ```
//!
//! The RNN family uses tanh for the hidden activation. Higher-order cells
//! carry no separate bias; the leading `1` of the augmented state plays that role.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tt::{self, TTWeight};

/// Initial forget-gate bias for LSTM cells with an explicit bias.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Rnn,
    Lstm,
    Mrnn,
    Mlstm,
    Hornn,
    HotRnn,
    HotLstm,
}

impl CellKind {
    pub const ALL: [CellKind; 7] = [
        CellKind::Rnn,
        CellKind::Lstm,
        CellKind::Mrnn,
        CellKind::Mlstm,
        CellKind::Hornn,
        CellKind::HotRnn,
        CellKind::HotLstm,
    ];

    /// Number of gate blocks in the preactivation: 4 for the LSTM family, else 1.
    pub fn gates(self) -> usize {
        if self.is_lstm() {
            4
        } else {
            1
        }
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::Mlstm | CellKind::HotLstm)
    }

    /// Whether the cell looks further back than `h(t-1)`.
    pub fn uses_lag(self) -> bool {
        !matches!(self, CellKind::Rnn | CellKind::Lstm)
    }

    pub fn is_tensor_train(self) -> bool {
        matches!(self, CellKind::HotRnn | CellKind::HotLstm)
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        CellKind::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Mrnn => "mrnn",
            CellKind::Mlstm => "mlstm",
            CellKind::Hornn => "hornn",
            CellKind::HotRnn => "hot_rnn",
            CellKind::HotLstm => "hot_lstm",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown cell kind {s:?}")))
    }
}

/// Shape of one recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    /// Past hidden states fed to the transition; forced to 1 for RNN and LSTM.
    pub lag: usize,
    /// Polynomial order of the transition tensor (HORNN, HOT family).
    pub order: usize,
    /// Uniform interior tensor-train rank (HOT family).
    pub rank: usize,
}

impl CellSpec {
    pub fn new(kind: CellKind, input_dim: usize, hidden: usize) -> Self {
        CellSpec {
            kind,
            input_dim,
            hidden,
            lag: 1,
            order: 1,
            rank: 1,
        }
    }

    pub fn with_lag(mut self, lag: usize) -> Self {
        self.lag = lag;
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn effective_lag(&self) -> usize {
        if self.kind.uses_lag() {
            self.lag
        } else {
            1
        }
    }

    pub fn state_len(&self) -> usize {
        tt::state_len(self.hidden, self.effective_lag())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("input and hidden sizes must be positive".into()));
        }
        if self.lag == 0 {
            return Err(Error::Config("lag must be at least 1".into()));
        }
        if matches!(self.kind, CellKind::Hornn | CellKind::HotRnn | CellKind::HotLstm) && self.order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if self.kind.is_tensor_train() && self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        Ok(())
    }
}

/// Recurrent transition weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Transition {
    /// `(G·H, H·L)` map of the concatenated history.
    Matrix(Tensor),
    /// Full `(H, n, …, n)` transition tensor.
    Dense(Tensor),
    /// One tensor train per gate block.
    Train(Vec<TTWeight>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    spec: CellSpec,
    /// Input projection `(G·H, d)`.
    pub w_hx: Tensor,
    /// `(G·H)`, absent for higher-order cells.
    pub bias: Option<Tensor>,
    pub transition: Transition,
}

impl CellParams {
    pub fn init<R: Rng + ?Sized>(spec: CellSpec, rng: &mut R, dense_cap: usize) -> Result<Self> {
        spec.validate()?;
        let g = spec.kind.gates();
        let h = spec.hidden;
        let lag = spec.effective_lag();
        let w_hx = Tensor::randn(&[g * h, spec.input_dim], (spec.input_dim as f64).powf(-0.5), rng);
        let bias = match spec.kind {
            CellKind::Rnn | CellKind::Mrnn => Some(Tensor::zeros(&[h])),
            CellKind::Lstm | CellKind::Mlstm => {
                let mut b = Tensor::zeros(&[4 * h]);
                b.data_mut()[2 * h..3 * h].fill(FORGET_BIAS);
                Some(b)
            }
            _ => None,
        };
        let transition = match spec.kind {
            CellKind::Rnn | CellKind::Lstm | CellKind::Mrnn | CellKind::Mlstm => Transition::Matrix(
                Tensor::randn(&[g * h, h * lag], ((h * lag) as f64).powf(-0.5), rng),
            ),
            CellKind::Hornn => {
                let n = spec.state_len();
                let entries = h.saturating_mul(n.saturating_pow(spec.order as u32));
                if entries > dense_cap {
                    return Err(Error::CapExceeded { entries, cap: dense_cap });
                }
                let mut shape = vec![h];
                shape.extend(std::iter::repeat_n(n, spec.order));
                let fan = (n as f64).powi(spec.order as i32);
                Transition::Dense(Tensor::randn(&shape, fan.powf(-0.5), rng))
            }
            CellKind::HotRnn | CellKind::HotLstm => {
                let ranks = tt::uniform_ranks(spec.order, spec.rank);
                let trains = (0..g)
                    .map(|_| tt::init_tt_with(h, lag, spec.order, &ranks, rng))
                    .collect::<Result<Vec<_>>>()?;
                Transition::Train(trains)
            }
        };
        Ok(CellParams {
            spec,
            w_hx,
            bias,
            transition,
        })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(spec: CellSpec) -> Result<Self> {
        let mut p = CellParams::init(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0), usize::MAX)?;
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    /// Assembles parameters from explicit blocks after checking their shapes.
    pub fn from_parts(
        spec: CellSpec,
        w_hx: Tensor,
        bias: Option<Tensor>,
        transition: Transition,
    ) -> Result<Self> {
        let reference = CellParams::zeros(spec)?;
        let candidate = CellParams {
            spec,
            w_hx,
            bias,
            transition,
        };
        let shapes = |p: &CellParams| -> Vec<Vec<usize>> {
            p.tensors().iter().map(|t| t.shape().to_vec()).collect()
        };
        if shapes(&reference) != shapes(&candidate) {
            return Err(Error::Config(format!(
                "parameter shapes {:?} do not fit {:?}",
                shapes(&candidate),
                spec
            )));
        }
        Ok(candidate)
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    /// Parameters in a fixed order: input projection, bias, transition blocks.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w_hx];
        if let Some(b) = &self.bias {
            out.push(b);
        }
        match &self.transition {
            Transition::Matrix(w) | Transition::Dense(w) => out.push(w),
            Transition::Train(trains) => {
                for t in trains {
                    out.extend(t.cores());
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_hx];
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        match &mut self.transition {
            Transition::Matrix(w) | Transition::Dense(w) => out.push(w),
            Transition::Train(trains) => {
                for t in trains {
                    out.extend(t.cores_mut());
                }
            }
        }
        out
    }

    /// Names matching [`tensors`](Self::tensors) one-to-one.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["w_hx".to_string()];
        if self.bias.is_some() {
            out.push("bias".into());
        }
        match &self.transition {
            Transition::Matrix(_) => out.push("w_hh".into()),
            Transition::Dense(_) => out.push("w_dense".into()),
            Transition::Train(trains) => {
                for (g, t) in trains.iter().enumerate() {
                    for p in 0..t.cores().len() {
                        out.push(format!("tt{g}.core{p}"));
                    }
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape) -> BoundCell {
        let w_hx = tape.var(self.w_hx.clone());
        let bias = self.bias.as_ref().map(|b| tape.var(b.clone()));
        let transition = match &self.transition {
            Transition::Matrix(w) => BoundTransition::Matrix(tape.var(w.clone())),
            Transition::Dense(w) => BoundTransition::Dense(tape.var(w.clone())),
            Transition::Train(trains) => BoundTransition::Train(
                trains
                    .iter()
                    .map(|t| t.cores().iter().map(|c| tape.var(c.clone())).collect())
                    .collect(),
            ),
        };
        BoundCell {
            spec: self.spec,
            w_hx,
            bias,
            transition,
        }
    }
}

#[derive(Clone, Debug)]
pub enum BoundTransition {
    Matrix(Var),
    Dense(Var),
    Train(Vec<Vec<Var>>),
}

/// Cell parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundCell {
    pub spec: CellSpec,
    pub w_hx: Var,
    pub bias: Option<Var>,
    pub transition: BoundTransition,
}

impl BoundCell {
    /// Handles in the same order as [`CellParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.w_hx];
        out.extend(self.bias);
        match &self.transition {
            BoundTransition::Matrix(w) | BoundTransition::Dense(w) => out.push(*w),
            BoundTransition::Train(trains) => {
                for t in trains {
                    out.extend(t);
                }
            }
        }
        out
    }
}

/// Hidden-state history (most recent first) plus the LSTM cell memory.
#[derive(Clone, Debug)]
pub struct CellState {
    history: VecDeque<Var>,
    memory: Option<Var>,
}

impl CellState {
    /// Zero history of length `L` and zero memory, for `batch` rows
    /// (`None` for unbatched vectors).
    pub fn zeros(tape: &mut Tape, spec: &CellSpec, batch: Option<usize>) -> Self {
        let shape = match batch {
            Some(b) => vec![b, spec.hidden],
            None => vec![spec.hidden],
        };
        let zero = tape.var(Tensor::zeros(&shape));
        CellState {
            history: std::iter::repeat_n(zero, spec.effective_lag()).collect(),
            memory: spec.kind.is_lstm().then_some(zero),
        }
    }

    pub fn from_parts(history: Vec<Var>, memory: Option<Var>) -> Self {
        CellState {
            history: history.into(),
            memory,
        }
    }

    /// `h(t-1), …, h(t-L)`.
    pub fn history(&self) -> impl Iterator<Item = Var> + '_ {
        self.history.iter().copied()
    }

    pub fn latest(&self) -> Var {
        self.history[0]
    }

    pub fn memory(&self) -> Option<Var> {
        self.memory
    }

    fn advanced(&self, h: Var, memory: Option<Var>) -> Self {
        let mut history = self.history.clone();
        history.pop_back();
        history.push_front(h);
        CellState { history, memory }
    }
}

fn augmented_state(tape: &mut Tape, state: &CellState) -> Result<Var> {
    let latest = tape.value(state.latest());
    let ones_shape = match latest.rank() {
        2 => vec![latest.shape()[0], 1],
        _ => vec![1],
    };
    let ones = tape.var(Tensor::filled(&ones_shape, 1.0));
    let mut parts = vec![ones];
    parts.extend(state.history());
    Ok(tape.concat(&parts)?)
}

/// Linear preactivation of the matrix-transition cells.
fn matrix_preactivation(tape: &mut Tape, cell: &BoundCell, w_hh: Var, state: &CellState, x: Var) -> Result<Var> {
    let input = tape.linear(x, cell.w_hx)?;
    let hist = if state.history.len() == 1 {
        state.latest()
    } else {
        let parts: Vec<Var> = state.history().collect();
        tape.concat(&parts)?
    };
    let recurrent = tape.linear(hist, w_hh)?;
    let pre = tape.add(input, recurrent)?;
    match cell.bias {
        Some(b) => Ok(tape.add_bias(pre, b)?),
        None => Ok(pre),
    }
}

fn rnn_output(tape: &mut Tape, pre: Var, state: &CellState) -> Result<(Var, CellState)> {
    let h = tape.tanh(pre)?;
    Ok((h, state.advanced(h, None)))
}

fn lstm_output(tape: &mut Tape, gates: [Var; 4], state: &CellState) -> Result<(Var, CellState)> {
    let [i, g, f, o] = gates;
    let i = tape.sigmoid(i)?;
    let g = tape.tanh(g)?;
    let f = tape.sigmoid(f)?;
    let o = tape.sigmoid(o)?;
    let c_prev = state
        .memory
        .ok_or_else(|| Error::Config("LSTM state without cell memory".into()))?;
    let carry = tape.hadamard(c_prev, f)?;
    let write = tape.hadamard(i, g)?;
    let c = tape.add(carry, write)?;
    let h = tape.hadamard(c, o)?;
    Ok((h, state.advanced(h, Some(c))))
}

fn split_gates(tape: &mut Tape, pre: Var, hidden: usize) -> Result<[Var; 4]> {
    Ok([
        tape.slice(pre, 0, hidden)?,
        tape.slice(pre, hidden, hidden)?,
        tape.slice(pre, 2 * hidden, hidden)?,
        tape.slice(pre, 3 * hidden, hidden)?,
    ])
}

/// One recurrent step: `(h_t, advanced state)`.
///
/// `x` is `(batch, d)` or `(d)` and must match the shapes in `state`.
pub fn step(tape: &mut Tape, cell: &BoundCell, state: &CellState, x: Var) -> Result<(Var, CellState)> {
    let spec = cell.spec;
    let h = spec.hidden;
    match (&cell.transition, spec.kind) {
        (BoundTransition::Matrix(w_hh), CellKind::Rnn | CellKind::Mrnn) => {
            let pre = matrix_preactivation(tape, cell, *w_hh, state, x)?;
            rnn_output(tape, pre, state)
        }
        (BoundTransition::Matrix(w_hh), CellKind::Lstm | CellKind::Mlstm) => {
            let pre = matrix_preactivation(tape, cell, *w_hh, state, x)?;
            let gates = split_gates(tape, pre, h)?;
            lstm_output(tape, gates, state)
        }
        (BoundTransition::Dense(w), CellKind::Hornn) => {
            let s = augmented_state(tape, state)?;
            let input = tape.linear(x, cell.w_hx)?;
            let poly = tt::dense_contract_var(tape, *w, s)?;
            let pre = tape.add(input, poly)?;
            rnn_output(tape, pre, state)
        }
        (BoundTransition::Train(trains), CellKind::HotRnn) => {
            let s = augmented_state(tape, state)?;
            let input = tape.linear(x, cell.w_hx)?;
            let poly = tt::tt_contract_var(tape, &trains[0], s)?;
            let pre = tape.add(input, poly)?;
            rnn_output(tape, pre, state)
        }
        (BoundTransition::Train(trains), CellKind::HotLstm) => {
            let s = augmented_state(tape, state)?;
            let input = tape.linear(x, cell.w_hx)?;
            let input_gates = split_gates(tape, input, h)?;
            let mut gates = input_gates;
            for (gate, cores) in gates.iter_mut().zip(trains) {
                let poly = tt::tt_contract_var(tape, cores, s)?;
                *gate = tape.add(*gate, poly)?;
            }
            lstm_output(tape, gates, state)
        }
        (_, kind) => Err(Error::Config(format!("transition does not match cell kind {kind}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn run(params: &CellParams, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mut state = CellState::zeros(&mut tape, params.spec(), None);
        let mut out = Vec::new();
        for x in inputs {
            let xv = tape.var(Tensor::vector(x.clone()));
            let (h, next) = step(&mut tape, &bound, &state, xv).unwrap();
            out.push(tape.value(h).data().to_vec());
            state = next;
        }
        out
    }

    #[test]
    fn zero_rnn_gives_zero_state() {
        let p = CellParams::zeros(CellSpec::new(CellKind::Rnn, 2, 3)).unwrap();
        assert_eq!(run(&p, &[vec![0.3, -1.0]]), vec![vec![0.0; 3]]);
    }

    #[test]
    fn scalar_rnn_step() {
        let mut p = CellParams::zeros(CellSpec::new(CellKind::Rnn, 1, 1)).unwrap();
        p.w_hx.data_mut()[0] = 1.0;
        let h = run(&p, &[vec![0.5]])[0][0];
        assert!((h - 0.5f64.tanh()).abs() < 1e-15);
        assert!((h - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn zero_lstm_keeps_zero_memory() {
        let p = CellParams::zeros(CellSpec::new(CellKind::Lstm, 2, 3)).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let state = CellState::zeros(&mut tape, p.spec(), None);
        let x = tape.var(Tensor::vector(vec![0.0, 0.0]));
        let (h, next) = step(&mut tape, &bound, &state, x).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 3]);
        assert_eq!(tape.value(next.memory().unwrap()).data(), &[0.0; 3]);
    }

    #[test]
    fn saturated_forget_gate_carries_memory() {
        let spec = CellSpec::new(CellKind::Lstm, 1, 2);
        let mut p = CellParams::zeros(spec).unwrap();
        p.bias.as_mut().unwrap().data_mut()[4..6].fill(100.0);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let c0 = tape.var(Tensor::vector(vec![0.7, -1.3]));
        let h0 = tape.var(Tensor::vector(vec![0.0, 0.0]));
        let state = CellState::from_parts(vec![h0], Some(c0));
        let x = tape.var(Tensor::vector(vec![0.4]));
        let (_, next) = step(&mut tape, &bound, &state, x).unwrap();
        let c1 = tape.value(next.memory().unwrap());
        assert!((c1.data()[0] - 0.7).abs() < 1e-12);
        assert!((c1.data()[1] + 1.3).abs() < 1e-12);
    }

    #[test]
    fn history_is_shifted_and_zero_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = CellSpec::new(CellKind::Mrnn, 1, 2).with_lag(3);
        let p = CellParams::init(spec, &mut rng, usize::MAX).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let mut state = CellState::zeros(&mut tape, &spec, None);
        let mut hs = Vec::new();
        for k in 0..5 {
            let x = tape.var(Tensor::vector(vec![k as f64 * 0.1]));
            let (h, next) = step(&mut tape, &bound, &state, x).unwrap();
            hs.push(h);
            state = next;
            let hist: Vec<Var> = state.history().collect();
            assert_eq!(hist.len(), 3);
            for (j, v) in hist.iter().enumerate() {
                if j <= k {
                    assert_eq!(*v, hs[k - j]);
                } else {
                    assert!(tape.value(*v).data().iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn mrnn_on_zero_history_depends_only_on_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = CellSpec::new(CellKind::Mrnn, 2, 2).with_lag(2);
        let p = CellParams::init(spec, &mut rng, usize::MAX).unwrap();
        let h = run(&p, &[vec![0.2, -0.4]])[0].clone();
        let expect: Vec<f64> = (0..2)
            .map(|a| {
                let row = &p.w_hx.data()[a * 2..a * 2 + 2];
                (row[0] * 0.2 - row[1] * 0.4 + p.bias.as_ref().unwrap().data()[a]).tanh()
            })
            .collect();
        for (x, y) in h.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn mrnn_lag_two_by_hand() {
        // H=2, d=1, L=2 with explicit weights.
        let spec = CellSpec::new(CellKind::Mrnn, 1, 2).with_lag(2);
        let p = CellParams::from_parts(
            spec,
            Tensor::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            Some(Tensor::vector(vec![0.1, -0.2])),
            Transition::Matrix(
                Tensor::from_rows(&[vec![0.5, 0.0, 0.25, -0.5], vec![0.0, 1.0, 1.0, 0.5]]).unwrap(),
            ),
        )
        .unwrap();
        let out = run(&p, &[vec![0.3], vec![-0.6], vec![0.9]]);
        // Recompute by hand with plain arithmetic.
        let mut hist = [[0.0f64; 2]; 2];
        let xs = [0.3, -0.6, 0.9];
        for (t, &x) in xs.iter().enumerate() {
            let cat = [hist[0][0], hist[0][1], hist[1][0], hist[1][1]];
            let w = [[0.5, 0.0, 0.25, -0.5], [0.0, 1.0, 1.0, 0.5]];
            let h0 = (x + 0.1 + (0..4).map(|j| w[0][j] * cat[j]).sum::<f64>()).tanh();
            let h1 = (-x - 0.2 + (0..4).map(|j| w[1][j] * cat[j]).sum::<f64>()).tanh();
            hist[1] = hist[0];
            hist[0] = [h0, h1];
            assert!((out[t][0] - h0).abs() < 1e-15);
            assert!((out[t][1] - h1).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_transition_hot_cells_reduce_to_input_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [CellKind::HotRnn, CellKind::Hornn] {
            let spec = CellSpec::new(kind, 2, 3).with_lag(2).with_order(2).with_rank(2);
            let mut p = CellParams::init(spec, &mut rng, usize::MAX).unwrap();
            match &mut p.transition {
                Transition::Train(trains) => trains.iter_mut().for_each(|t| {
                    t.cores_mut().iter_mut().for_each(|c| c.data_mut().fill(0.0))
                }),
                Transition::Dense(w) => w.data_mut().fill(0.0),
                Transition::Matrix(_) => unreachable!(),
            }
            let x = vec![0.4, -0.8];
            let h = run(&p, std::slice::from_ref(&x))[0].clone();
            for a in 0..3 {
                let row = &p.w_hx.data()[a * 2..a * 2 + 2];
                let expect = (row[0] * x[0] + row[1] * x[1]).tanh();
                assert!((h[a] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CellKind::ALL {
            assert_eq!(k.name().parse::<CellKind>().unwrap(), k);
            assert_eq!(CellKind::from_tag(k.tag()), Some(k));
        }
        assert!("gru".parse::<CellKind>().is_err());
    }
}
