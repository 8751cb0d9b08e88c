//! Sequence-loss training: RMSProp with step decay, global-norm clipping,
//! moving-average early stopping and grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::CellKind;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::seq2seq::{self, ModelConfig, Seq2SeqModel};
use crate::tensor::Tensor;

/// `Σ_t ‖ŷ_t − y_t‖²` over steps and dimensions.
pub fn sequence_loss(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} predicted steps for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, y) in predictions.iter().zip(targets) {
        if p.len() != y.len() {
            return Err(Error::Data(format!("step width {} vs {}", p.len(), y.len())));
        }
        total += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

/// Tape version of [`sequence_loss`]; also sums over the batch axis.
pub fn sequence_loss_var(tape: &mut Tape, predictions: &[Var], targets: &[Var]) -> Result<Var> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Data(format!(
            "{} predicted steps for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&p, &y) in predictions.iter().zip(targets) {
        if tape.shape(p) != tape.shape(y) {
            return Err(Error::Data("prediction and target shapes differ".into()));
        }
        let diff = tape.sub(p, y)?;
        let sq = tape.hadamard(diff, diff)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("non-empty"))
}

/// RMSProp state: second-moment accumulators, step counter and current rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    pub v: Vec<Tensor>,
    /// Applied updates.
    pub step: usize,
    /// Updates skipped because of a non-finite gradient.
    pub skipped: usize,
}

impl RmsProp {
    pub fn new(lr: f64, params: &[&Tensor]) -> Self {
        RmsProp {
            rho: 0.9,
            eps: 1e-8,
            lr,
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            skipped: 0,
        }
    }

    /// `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g/√(v+ε)`. Returns false and leaves
    /// everything untouched when any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<bool> {
        if params.len() != grads.len() || params.len() != self.v.len() {
            return Err(Error::Data("parameter, gradient and state counts differ".into()));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.v) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::Data(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::debug!("skipping update with non-finite gradient ({} so far)", self.skipped);
            return Ok(false);
        }
        let (rho, eps, lr) = (self.rho, self.eps, self.lr);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = rho * *vi + (1.0 - rho) * gi * gi;
                *pi -= lr * gi / (*vi + eps).sqrt();
            }
        }
        self.step += 1;
        Ok(true)
    }
}

/// Step decay: `lr · decay^⌊step / interval⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub interval: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        let k = step.checked_div(self.interval).unwrap_or(0);
        self.initial * self.decay.powi(k.min(i32::MAX as usize) as i32)
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

/// Trailing moving average; the first `window − 1` entries average what is
/// available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once the moving average has gone `patience` evaluations without
/// beating its best value.
pub fn early_stop_check(val_losses: &[f64], ma_window: usize, patience: usize) -> StopDecision {
    let ma = moving_average(val_losses, ma_window);
    let Some(best) = ma
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, b)) if !(v < b) => acc,
            _ if v.is_nan() => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return StopDecision::Continue;
    };
    if ma.len() - 1 - best >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    #[serde(default = "ma_window")]
    pub ma_window: usize,
    #[serde(default = "patience")]
    pub patience: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            ma_window: ma_window(),
            patience: patience(),
        }
    }
}

fn ma_window() -> usize {
    5
}
fn patience() -> usize {
    10
}
fn learning_rate() -> f64 {
    1e-3
}
fn lr_decay() -> f64 {
    0.8
}
fn decay_interval() -> usize {
    1000
}
fn max_steps() -> usize {
    10_000
}
fn batch_size() -> usize {
    32
}
fn eval_every() -> usize {
    100
}
fn clip_norm() -> Option<f64> {
    Some(5.0)
}
fn chunk_size() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "decay_interval")]
    pub decay_interval: usize,
    #[serde(default = "max_steps")]
    pub max_steps: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    /// Steps between validation evaluations.
    #[serde(default = "eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub early_stop: EarlyStopConfig,
    #[serde(default = "clip_norm")]
    pub clip_norm: Option<f64>,
    /// Evaluate on at most this many validation windows.
    #[serde(default)]
    pub val_subset: Option<usize>,
    /// Windows per tape; also the unit of parallel work.
    #[serde(default = "chunk_size")]
    pub chunk_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: learning_rate(),
            lr_decay: lr_decay(),
            decay_interval: decay_interval(),
            max_steps: max_steps(),
            batch_size: batch_size(),
            eval_every: eval_every(),
            early_stop: EarlyStopConfig::default(),
            clip_norm: clip_norm(),
            val_subset: None,
            chunk_size: chunk_size(),
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    /// Structural checks needed to run at all.
    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.chunk_size == 0 || self.decay_interval == 0 {
            return Err(Error::Config(
                "batch_size, eval_every, chunk_size and decay_interval must be positive".into(),
            ));
        }
        if self.early_stop.ma_window == 0 {
            return Err(Error::Config("early_stop.ma_window must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    /// Hyper-parameter search ranges: learning rate in `[1e-5, 1e-1]`.
    pub fn validate_ranges(&self) -> Result<()> {
        self.check()?;
        if !(1e-5..=1e-1).contains(&self.learning_rate) {
            return Err(Error::Config(format!(
                "learning rate {} outside [1e-5, 1e-1]",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.learning_rate,
            decay: self.lr_decay,
            interval: self.decay_interval,
        }
    }
}

/// Search ranges for model hyper-parameters.
pub fn validate_model_ranges(cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    let fail = |what: &str| Err(Error::Config(format!("{what} outside the search range")));
    if ![8, 16, 32, 64, 128].contains(&cfg.hidden) {
        return fail(&format!("hidden size {}", cfg.hidden));
    }
    if !(1..=16).contains(&cfg.rank) {
        return fail(&format!("rank {}", cfg.rank));
    }
    if !(1..=6).contains(&cfg.lag) {
        return fail(&format!("lag {}", cfg.lag));
    }
    if !(1..=3).contains(&cfg.order) {
        return fail(&format!("order {}", cfg.order));
    }
    if !(1..=3).contains(&cfg.layers) {
        return fail(&format!("layer count {}", cfg.layers));
    }
    Ok(())
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn write_log<W: std::io::Write>(writer: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: std::io::Read>(reader: R) -> Result<Vec<LogRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the lowest validation loss seen.
    pub model: Seq2SeqModel,
    pub log: Vec<LogRow>,
    pub best_val: f64,
    pub best_step: usize,
    /// Moving-average validation loss at termination.
    pub final_ma_val: f64,
    pub steps_run: usize,
    pub skipped_steps: usize,
    pub stopped_early: bool,
    pub diverged: bool,
}

/// Batch loss and gradients, both summed (not averaged) over `windows`.
pub fn loss_and_grads(model: &Seq2SeqModel, windows: &[&Window]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let inputs: Vec<&[Vec<f64>]> = windows.iter().map(|w| w.input.as_slice()).collect();
    let targets: Vec<&[Vec<f64>]> = windows.iter().map(|w| w.target.as_slice()).collect();
    let xs: Vec<Var> = seq2seq::time_major(&inputs)?.into_iter().map(|t| tape.var(t)).collect();
    let ys: Vec<Var> = seq2seq::time_major(&targets)?.into_iter().map(|t| tape.var(t)).collect();
    let preds = seq2seq::forecast(&mut tape, &bound, &xs, ys.len())?;
    let loss = sequence_loss_var(&mut tape, &preds, &ys)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((value, bound.vars().into_iter().map(|v| grads.take(v)).collect()))
}

/// Mean per-window sequence loss and gradient over a batch, computed in
/// fixed chunks and reduced in order.
pub fn batch_loss_and_grads(
    model: &Seq2SeqModel,
    windows: &[&Window],
    chunk: usize,
    exec: Exec,
) -> Result<(f64, Vec<Tensor>)> {
    if windows.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let chunks: Vec<&[&Window]> = windows.chunks(chunk.max(1)).collect();
    let parts = par::map(exec, &chunks, |c| loss_and_grads(model, c));
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.accumulate(b)),
        }
    }
    let n = windows.len() as f64;
    let mut grads = grads.expect("at least one chunk");
    grads.iter_mut().for_each(|g| g.scale_in_place(1.0 / n));
    Ok((loss / n, grads))
}

/// Mean per-window sequence loss without gradients.
pub fn mean_loss(model: &Seq2SeqModel, windows: &[Window], chunk: usize, exec: Exec) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let horizon = windows[0].target.len();
    let chunks: Vec<&[Window]> = windows.chunks(chunk.max(1)).collect();
    let parts = par::map(exec, &chunks, |c| -> Result<f64> {
        let inputs: Vec<&[Vec<f64>]> = c.iter().map(|w| w.input.as_slice()).collect();
        let preds = seq2seq::predict(model, &inputs, horizon)?;
        let mut total = 0.0;
        for (p, w) in preds.iter().zip(c.iter()) {
            total += sequence_loss(p, &w.target)?;
        }
        Ok(total)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / windows.len() as f64)
}

/// Epoch-shuffled minibatch indices.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batcher { order, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains `model` on normalized windows. Divergence (a non-finite
/// validation or training loss) ends the run and is reported in the outcome.
pub fn train(model: Seq2SeqModel, train_set: &[Window], val_set: &[Window], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.check()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training needs non-empty train and validation windows".into()));
    }
    let val: &[Window] = match cfg.val_subset {
        Some(k) if k > 0 && k < val_set.len() => &val_set[..k],
        _ => val_set,
    };
    let schedule = cfg.schedule();
    let mut model = model;
    let mut opt = RmsProp::new(cfg.learning_rate, &model.tensors());
    let mut batcher = Batcher::new(train_set.len(), cfg.seed);
    let mut log = Vec::new();
    let mut val_history = Vec::new();
    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut window_loss = (0.0, 0usize);
    let mut stopped_early = false;
    let mut diverged = false;
    let mut step = 0;

    loop {
        let at_eval = step % cfg.eval_every == 0 || step == cfg.max_steps;
        if at_eval {
            let val_loss = mean_loss(&model, val, cfg.chunk_size, cfg.exec)?;
            let train_loss = if window_loss.1 == 0 {
                let idx = batcher.next(cfg.batch_size);
                let batch: Vec<Window> = idx.iter().map(|&i| train_set[i].clone()).collect();
                mean_loss(&model, &batch, cfg.chunk_size, cfg.exec)?
            } else {
                window_loss.0 / window_loss.1 as f64
            };
            window_loss = (0.0, 0);
            log.push(LogRow {
                step,
                train_loss,
                val_loss,
                lr: opt.lr,
            });
            log::info!("step {step}: train {train_loss:.6} val {val_loss:.6} lr {:.3e}", opt.lr);
            if !val_loss.is_finite() || !train_loss.is_finite() {
                diverged = true;
                break;
            }
            val_history.push(val_loss);
            if val_loss < best.1 {
                best = (model.clone(), val_loss, step);
            }
            if early_stop_check(&val_history, cfg.early_stop.ma_window, cfg.early_stop.patience) == StopDecision::Stop {
                stopped_early = true;
                break;
            }
        }
        if step == cfg.max_steps {
            break;
        }

        let idx = batcher.next(cfg.batch_size);
        let batch: Vec<&Window> = idx.iter().map(|&i| &train_set[i]).collect();
        let (loss, mut grads) = batch_loss_and_grads(&model, &batch, cfg.chunk_size, cfg.exec)?;
        window_loss.0 += loss;
        window_loss.1 += 1;
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        opt.lr = schedule.lr_at(step);
        opt.step(&mut model.tensors_mut(), &grads)?;
        step += 1;
    }

    let ma = moving_average(&val_history, cfg.early_stop.ma_window);
    let final_ma_val = if diverged {
        f64::INFINITY
    } else {
        ma.last().copied().unwrap_or(f64::INFINITY)
    };
    Ok(TrainOutcome {
        model: best.0,
        log,
        best_val: best.1,
        best_step: best.2,
        final_ma_val,
        steps_run: step,
        skipped_steps: opt.skipped,
        stopped_early,
        diverged,
    })
}

/// Axes of a hyper-parameter grid. An empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub cell: Vec<CellKind>,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub lag: Vec<usize>,
    #[serde(default)]
    pub order: Vec<usize>,
    #[serde(default)]
    pub rank: Vec<usize>,
    #[serde(default)]
    pub learning_rate: Vec<f64>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Drops hyper-parameters that a cell kind ignores.
pub fn canonical(mut cfg: ModelConfig) -> ModelConfig {
    if !cfg.cell.uses_lag() {
        cfg.lag = 1;
    }
    if !cfg.cell.is_tensor_train() {
        cfg.rank = 1;
    }
    if !matches!(cfg.cell, CellKind::Hornn | CellKind::HotRnn | CellKind::HotLstm) {
        cfg.order = 1;
    }
    cfg
}

impl GridSpec {
    /// Cartesian product in lexicographic axis order, with configurations
    /// that collapse to the same model removed (first occurrence kept).
    pub fn candidates(&self, base_model: &ModelConfig, base_train: &TrainConfig) -> Vec<(ModelConfig, TrainConfig)> {
        let mut out: Vec<(ModelConfig, TrainConfig)> = Vec::new();
        for cell in axis(&self.cell, base_model.cell) {
            for hidden in axis(&self.hidden, base_model.hidden) {
                for layers in axis(&self.layers, base_model.layers) {
                    for lag in axis(&self.lag, base_model.lag) {
                        for order in axis(&self.order, base_model.order) {
                            for rank in axis(&self.rank, base_model.rank) {
                                for lr in axis(&self.learning_rate, base_train.learning_rate) {
                                    let m = canonical(ModelConfig {
                                        cell,
                                        hidden,
                                        layers,
                                        lag,
                                        order,
                                        rank,
                                        ..base_model.clone()
                                    });
                                    let t = TrainConfig {
                                        learning_rate: lr,
                                        ..base_train.clone()
                                    };
                                    if !out.iter().any(|(om, ot)| *om == m && ot.learning_rate == lr) {
                                        out.push((m, t));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Independent seed for run `index` of a search seeded with `seed`.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct GridRun {
    /// Position in the full candidate list.
    pub index: usize,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub param_count: usize,
    pub outcome: std::result::Result<TrainOutcome, String>,
}

impl GridRun {
    /// Selection score; `None` for failed or diverged runs.
    pub fn score(&self) -> Option<f64> {
        match &self.outcome {
            Ok(o) if !o.diverged && o.final_ma_val.is_finite() => Some(o.final_ma_val),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub runs: Vec<GridRun>,
    /// Position of the winner in `runs`.
    pub best: usize,
}

impl GridResult {
    pub fn best_run(&self) -> &GridRun {
        &self.runs[self.best]
    }
}

/// Trains every candidate (or a seeded random subset of `budget` of them)
/// and picks the lowest final moving-average validation loss. Ties go to
/// the smaller model, then the earlier candidate.
pub fn grid_search(
    train_set: &[Window],
    val_set: &[Window],
    candidates: &[(ModelConfig, TrainConfig)],
    budget: Option<usize>,
    seed: u64,
    exec: Exec,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    let mut chosen: Vec<usize> = (0..candidates.len()).collect();
    if let Some(b) = budget {
        if b == 0 {
            return Err(Error::Config("grid budget must be at least 1".into()));
        }
        if b < chosen.len() {
            chosen.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            chosen.truncate(b);
            chosen.sort_unstable();
        }
    }
    let inner = if exec.is_parallel() { Exec::Sequential } else { exec };
    let runs = par::map(exec, &chosen, |&index| {
        let (m, t) = &candidates[index];
        let run_seed = derive_seed(seed, index);
        let t = TrainConfig {
            seed: run_seed,
            exec: inner,
            ..t.clone()
        };
        let result = Seq2SeqModel::init(m.clone(), run_seed);
        let param_count = result.as_ref().map_or(0, Seq2SeqModel::param_count);
        let outcome = result
            .and_then(|model| train(model, train_set, val_set, &t))
            .map_err(|e| e.to_string());
        GridRun {
            index,
            model_config: m.clone(),
            train_config: t,
            param_count,
            outcome,
        }
    });
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(pos, r)| r.score().map(|s| (pos, s, r.param_count, r.index)))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        })
        .map(|(pos, ..)| pos);
    match best {
        Some(best) => Ok(GridResult { runs, best }),
        None => {
            let report: Vec<String> = runs
                .iter()
                .map(|r| match &r.outcome {
                    Ok(o) => format!("run {}: diverged after {} steps", r.index, o.steps_run),
                    Err(e) => format!("run {}: {e}", r.index),
                })
                .collect();
            Err(Error::Diverged(format!("every grid run failed: {}", report.join("; "))))
        }
    }
}
