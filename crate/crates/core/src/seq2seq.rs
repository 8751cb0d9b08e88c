//! Encoder-decoder forecaster.
//!
//! The encoder consumes the observed window `x_0 … x_t`. The decoder starts
//! from the encoder's final state stack, takes the last observation `x_t`
//! as its first input and then feeds each prediction back as the next input.
//! Predictions come from a linear head `ŷ = W^{xh} h + b^x` on the top layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{self, BoundCell, CellKind, CellParams, CellSpec, CellState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tt::DEFAULT_DENSE_CAP;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    /// Observation dimension `d`.
    #[serde(default = "default_dim")]
    pub input_dim: usize,
    pub hidden: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "one")]
    pub lag: usize,
    #[serde(default = "one")]
    pub order: usize,
    #[serde(default = "one")]
    pub rank: usize,
}

fn one() -> usize {
    1
}

fn default_dim() -> usize {
    1
}

impl ModelConfig {
    pub fn new(cell: CellKind, input_dim: usize, hidden: usize) -> Self {
        ModelConfig {
            cell,
            input_dim,
            hidden,
            layers: 1,
            lag: 1,
            order: 1,
            rank: 1,
        }
    }

    pub fn layer_spec(&self, layer: usize) -> CellSpec {
        let input = if layer == 0 { self.input_dim } else { self.hidden };
        CellSpec::new(self.cell, input, self.hidden)
            .with_lag(self.lag)
            .with_order(self.order)
            .with_rank(self.rank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        (0..self.layers).try_for_each(|l| self.layer_spec(l).validate())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    pub encoder: Vec<CellParams>,
    pub decoder: Vec<CellParams>,
    /// Output head `(d, H)`.
    pub head_w: Tensor,
    /// `(d)`.
    pub head_b: Tensor,
}

impl Seq2SeqModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = |rng: &mut ChaCha8Rng| -> Result<Vec<CellParams>> {
            (0..config.layers)
                .map(|l| CellParams::init(config.layer_spec(l), rng, DEFAULT_DENSE_CAP))
                .collect()
        };
        let encoder = stack(&mut rng)?;
        let decoder = stack(&mut rng)?;
        let head_w = Tensor::randn(
            &[config.input_dim, config.hidden],
            (config.hidden as f64).powf(-0.5),
            &mut rng,
        );
        let head_b = Tensor::zeros(&[config.input_dim]);
        Ok(Seq2SeqModel {
            config,
            encoder,
            decoder,
            head_w,
            head_b,
        })
    }

    /// All-zero model of the given configuration.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Seq2SeqModel::init(config, 0)?;
        for t in m.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn from_parts(
        config: ModelConfig,
        encoder: Vec<CellParams>,
        decoder: Vec<CellParams>,
        head_w: Tensor,
        head_b: Tensor,
    ) -> Result<Self> {
        config.validate()?;
        let fits = |stack: &[CellParams]| {
            stack.len() == config.layers
                && stack
                    .iter()
                    .enumerate()
                    .all(|(l, c)| *c.spec() == config.layer_spec(l))
        };
        if !fits(&encoder) || !fits(&decoder) {
            return Err(Error::Config("layer stack does not match model config".into()));
        }
        if head_w.shape() != [config.input_dim, config.hidden] || head_b.shape() != [config.input_dim] {
            return Err(Error::Config("output head shape mismatch".into()));
        }
        Ok(Seq2SeqModel {
            config,
            encoder,
            decoder,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Encoder layers, then decoder layers, then the head weight and bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for c in self.encoder.iter().chain(&self.decoder) {
            out.extend(c.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(c.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (part, stack) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (l, c) in stack.iter().enumerate() {
                out.extend(c.tensor_names().into_iter().map(|n| format!("{part}.{l}.{n}")));
            }
        }
        out.push("head.w".into());
        out.push("head.b".into());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            encoder: self.encoder.iter().map(|c| c.bind(tape)).collect(),
            decoder: self.decoder.iter().map(|c| c.bind(tape)).collect(),
            head_w: tape.var(self.head_w.clone()),
            head_b: tape.var(self.head_b.clone()),
        }
    }
}

/// Model parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: Vec<BoundCell>,
    pub decoder: Vec<BoundCell>,
    pub head_w: Var,
    pub head_b: Var,
}

impl BoundModel {
    /// Handles in the same order as [`Seq2SeqModel::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for c in self.encoder.iter().chain(&self.decoder) {
            out.extend(c.vars());
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

fn batch_of(tape: &Tape, x: Var) -> Option<usize> {
    let v = tape.value(x);
    (v.rank() == 2).then(|| v.shape()[0])
}

/// Runs one input through a layer stack, returning the top hidden state.
pub fn stack_step(
    tape: &mut Tape,
    stack: &[BoundCell],
    states: &mut [CellState],
    x: Var,
) -> Result<Var> {
    let mut input = x;
    for (cell, state) in stack.iter().zip(states.iter_mut()) {
        let (h, next) = cells::step(tape, cell, state, input)?;
        *state = next;
        input = h;
    }
    Ok(input)
}

/// Consumes the whole window and returns the per-layer state stack.
pub fn encode(tape: &mut Tape, model: &BoundModel, window: &[Var]) -> Result<Vec<CellState>> {
    let first = *window
        .first()
        .ok_or_else(|| Error::Data("encoder window is empty".into()))?;
    let batch = batch_of(tape, first);
    let mut states: Vec<CellState> = model
        .encoder
        .iter()
        .map(|c| CellState::zeros(tape, &c.spec, batch))
        .collect();
    for &x in window {
        stack_step(tape, &model.encoder, &mut states, x)?;
    }
    Ok(states)
}

pub fn head(tape: &mut Tape, model: &BoundModel, h: Var) -> Result<Var> {
    let y = tape.linear(h, model.head_w)?;
    Ok(tape.add_bias(y, model.head_b)?)
}

/// Closed-loop rollout of `horizon` predictions from a handed-off state stack.
pub fn decode(
    tape: &mut Tape,
    model: &BoundModel,
    mut states: Vec<CellState>,
    last_obs: Var,
    horizon: usize,
) -> Result<Vec<Var>> {
    if horizon == 0 {
        return Err(Error::Config("decode horizon must be at least 1".into()));
    }
    let mut input = last_obs;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let h = stack_step(tape, &model.decoder, &mut states, input)?;
        let y = head(tape, model, h)?;
        out.push(y);
        input = y;
    }
    Ok(out)
}

/// Encodes `window` and decodes `horizon` steps.
pub fn forecast(tape: &mut Tape, model: &BoundModel, window: &[Var], horizon: usize) -> Result<Vec<Var>> {
    let states = encode(tape, model, window)?;
    let last = *window.last().expect("encode rejects empty windows");
    decode(tape, model, states, last, horizon)
}

/// Stacks a batch of `(steps × d)` sequences into per-step `(batch, d)` tensors.
pub fn time_major(batch: &[&[Vec<f64>]]) -> Result<Vec<Tensor>> {
    let steps = batch.first().map_or(0, |s| s.len());
    if batch.iter().any(|s| s.len() != steps) {
        return Err(Error::Data("ragged batch".into()));
    }
    (0..steps)
        .map(|t| {
            let rows: Vec<Vec<f64>> = batch.iter().map(|s| s[t].clone()).collect();
            Tensor::from_rows(&rows).map_err(Error::from)
        })
        .collect()
}

/// Gradient-free batch forecast: `windows[b]` is `(steps × d)`; returns `(b, horizon, d)`.
pub fn predict(model: &Seq2SeqModel, windows: &[&[Vec<f64>]], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let inputs: Vec<Var> = time_major(windows)?
        .into_iter()
        .map(|t| tape.var(t))
        .collect();
    let preds = forecast(&mut tape, &bound, &inputs, horizon)?;
    let d = model.config().input_dim;
    Ok((0..windows.len())
        .map(|b| {
            preds
                .iter()
                .map(|&p| tape.value(p).data()[b * d..(b + 1) * d].to_vec())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn zero_model_predicts_zero() {
        let cfg = ModelConfig::new(CellKind::HotLstm, 1, 4);
        let m = Seq2SeqModel::zeros(cfg).unwrap();
        let w = window(&[0.3]);
        let preds = predict(&m, &[&w], 5).unwrap();
        assert!(preds[0].iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn zero_model_encodes_to_zero_state() {
        let m = Seq2SeqModel::zeros(ModelConfig::new(CellKind::Rnn, 1, 3)).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let x = tape.var(Tensor::vector(vec![0.8]));
        let states = encode(&mut tape, &bound, &[x]).unwrap();
        assert!(tape.value(states[0].latest()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizon_one_and_prefix_consistency() {
        let mut cfg = ModelConfig::new(CellKind::HotLstm, 1, 4);
        cfg.lag = 2;
        cfg.order = 2;
        cfg.rank = 2;
        cfg.layers = 2;
        let m = Seq2SeqModel::init(cfg, 5).unwrap();
        let w = window(&[0.1, -0.2, 0.4, 0.0, 0.3]);
        let long = predict(&m, &[&w], 12).unwrap();
        let short = predict(&m, &[&w], 7).unwrap();
        assert_eq!(long[0][..7], short[0][..]);
        let one = predict(&m, &[&w], 1).unwrap();
        assert_eq!(one[0].len(), 1);
        assert_eq!(one[0][0], long[0][0]);
    }

    #[test]
    fn encoder_history_holds_last_hiddens() {
        let mut cfg = ModelConfig::new(CellKind::Mlstm, 1, 3);
        cfg.lag = 2;
        let m = Seq2SeqModel::init(cfg, 1).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let xs: Vec<Var> = [0.1, 0.2, 0.3]
            .iter()
            .map(|&v| tape.var(Tensor::vector(vec![v])))
            .collect();
        let states = encode(&mut tape, &bound, &xs).unwrap();

        // Replay the encoder cell by hand and compare the buffer.
        let mut state = CellState::zeros(&mut tape, &bound.encoder[0].spec, None);
        let mut hs = Vec::new();
        for &x in &xs {
            let (h, next) = cells::step(&mut tape, &bound.encoder[0], &state, x).unwrap();
            hs.push(tape.value(h).clone());
            state = next;
        }
        let hist: Vec<&Tensor> = states[0].history().map(|v| tape.value(v)).collect();
        assert_eq!(hist, vec![&hs[2], &hs[1]]);
    }

    #[test]
    fn batched_rows_match_single_rollouts() {
        let mut cfg = ModelConfig::new(CellKind::HotRnn, 1, 3);
        cfg.lag = 2;
        cfg.order = 2;
        cfg.rank = 2;
        let m = Seq2SeqModel::init(cfg, 2).unwrap();
        let a = window(&[0.1, 0.5]);
        let b = window(&[-0.3, 0.2]);
        let both = predict(&m, &[&a, &b], 4).unwrap();
        let only_b = predict(&m, &[&b], 4).unwrap();
        for (x, y) in both[1].iter().zip(&only_b[0]) {
            assert!((x[0] - y[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_window_is_rejected() {
        let m = Seq2SeqModel::zeros(ModelConfig::new(CellKind::Rnn, 1, 2)).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        assert!(encode(&mut tape, &bound, &[]).is_err());
    }
}
