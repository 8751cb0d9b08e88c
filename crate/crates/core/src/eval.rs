//! Forecast evaluation: RMSE by horizon, sensitivity sweeps and tidy CSV
//! output.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Normalizer, Sequence, Split, Window, WindowedDataset};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::seq2seq::{self, ModelConfig, Seq2SeqModel};
use crate::train::{self, TrainConfig};

/// Denormalized closed-loop forecasts for raw-unit windows.
pub fn forecast_windows(
    model: &Seq2SeqModel,
    windows: &[Window],
    normalizer: &Normalizer,
    horizon: usize,
    chunk: usize,
    exec: Exec,
) -> Result<Vec<Sequence>> {
    let chunks: Vec<&[Window]> = windows.chunks(chunk.max(1)).collect();
    let parts = par::map(exec, &chunks, |c| -> Result<Vec<Sequence>> {
        let inputs: Vec<Sequence> = c.iter().map(|w| normalizer.apply_seq(&w.input)).collect();
        let refs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
        let preds = seq2seq::predict(model, &refs, horizon)?;
        Ok(preds.iter().map(|p| normalizer.invert_seq(p)).collect())
    });
    let mut out = Vec::with_capacity(windows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `sqrt(mean(sq. error over windows, steps < h, dims))` per horizon, in the
/// units of the windows' targets.
pub fn rmse_from_forecasts(forecasts: &[Sequence], windows: &[Window], horizons: &[usize]) -> Result<Vec<(usize, f64)>> {
    if windows.is_empty() {
        return Err(Error::Data("no test windows".into()));
    }
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let w_out = windows.iter().map(|w| w.target.len()).min().unwrap_or(0);
    if horizons.contains(&0) || max_h > w_out {
        return Err(Error::Config(format!(
            "horizons {horizons:?} must lie in 1..={w_out}"
        )));
    }
    let dim = windows[0].target[0].len();
    // Cumulative squared error per step, summed over windows in order.
    let mut per_step = vec![0.0; max_h];
    for (f, w) in forecasts.iter().zip(windows) {
        if f.len() < max_h {
            return Err(Error::Data("forecast shorter than the largest horizon".into()));
        }
        for t in 0..max_h {
            per_step[t] += f[t]
                .iter()
                .zip(&w.target[t])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    let mut cum = Vec::with_capacity(max_h);
    let mut acc = 0.0;
    for s in per_step {
        acc += s;
        cum.push(acc);
    }
    Ok(horizons
        .iter()
        .map(|&h| {
            let n = (windows.len() * h * dim) as f64;
            (h, (cum[h - 1] / n).sqrt())
        })
        .collect())
}

pub fn rmse_by_horizon(
    model: &Seq2SeqModel,
    test: &[Window],
    normalizer: &Normalizer,
    horizons: &[usize],
    exec: Exec,
) -> Result<Vec<(usize, f64)>> {
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let w_out = test.iter().map(|w| w.target.len()).min().unwrap_or(0);
    if test.is_empty() || horizons.is_empty() || horizons.contains(&0) || max_h > w_out {
        return Err(Error::Config(format!(
            "horizons {horizons:?} must be non-empty and within 1..={w_out} on a non-empty test set"
        )));
    }
    let preds = forecast_windows(model, test, normalizer, max_h, 16, exec)?;
    rmse_from_forecasts(&preds, test, horizons)
}

/// One tidy result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub horizon: usize,
    pub model: String,
    pub seed: u64,
    pub rmse: f64,
}

pub fn write_rmse_csv<W: Write>(writer: W, rows: &[RmseRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rmse_csv<R: Read>(reader: R) -> Result<Vec<RmseRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Mean RMSE over seeds for one model label and horizon.
pub fn mean_rmse(rows: &[RmseRow], model: &str, horizon: usize) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.model == model && r.horizon == horizon)
        .map(|r| r.rmse)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Ground truth and forecast for one test window.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub source: usize,
    pub offset: usize,
    pub truth: Sequence,
    pub prediction: Sequence,
}

/// Rows `source,offset,step,truth_0..,pred_0..`.
pub fn write_traces<W: Write>(writer: W, traces: &[Trace]) -> Result<()> {
    let dim = traces.first().and_then(|t| t.truth.first()).map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["source".to_owned(), "offset".to_owned(), "step".to_owned()];
    header.extend((0..dim).map(|c| format!("truth_{c}")));
    header.extend((0..dim).map(|c| format!("pred_{c}")));
    w.write_record(&header)?;
    for tr in traces {
        for (t, (y, p)) in tr.truth.iter().zip(&tr.prediction).enumerate() {
            let mut rec = vec![tr.source.to_string(), tr.offset.to_string(), t.to_string()];
            rec.extend(y.iter().map(f64::to_string));
            rec.extend(p.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluation record for one trained model.
#[derive(Clone, Debug)]
pub struct ForecastRun {
    pub config: ModelConfig,
    pub checkpoint: PathBuf,
    pub rmse: Vec<(usize, f64)>,
    pub traces: Vec<Trace>,
}

impl ForecastRun {
    pub fn evaluate(
        model: &Seq2SeqModel,
        checkpoint: PathBuf,
        test: &[Window],
        normalizer: &Normalizer,
        horizons: &[usize],
        exec: Exec,
    ) -> Result<Self> {
        let max_h = horizons.iter().copied().max().unwrap_or(0);
        let w_out = test.iter().map(|w| w.target.len()).min().unwrap_or(0);
        if test.is_empty() || max_h == 0 || max_h > w_out || horizons.contains(&0) {
            return Err(Error::Config(format!(
                "horizons {horizons:?} must lie in 1..={w_out}"
            )));
        }
        let preds = forecast_windows(model, test, normalizer, max_h, 16, exec)?;
        let rmse = rmse_from_forecasts(&preds, test, horizons)?;
        let traces = test
            .iter()
            .zip(preds)
            .map(|(w, p)| Trace {
                source: w.source,
                offset: w.offset,
                truth: w.target[..max_h].to_vec(),
                prediction: p,
            })
            .collect();
        Ok(ForecastRun {
            config: model.config().clone(),
            checkpoint,
            rmse,
            traces,
        })
    }

    pub fn rows(&self, label: &str, seed: u64) -> Vec<RmseRow> {
        self.rmse
            .iter()
            .map(|&(horizon, rmse)| RmseRow {
                horizon,
                model: label.to_owned(),
                seed,
                rmse,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Rank,
    Lag,
}

impl SweepAxis {
    pub fn apply(self, cfg: &ModelConfig, value: usize) -> ModelConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::Rank => c.rank = value,
            SweepAxis::Lag => c.lag = value,
        }
        c
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Rank => "rank",
            SweepAxis::Lag => "lag",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(SweepAxis::Rank),
            "lag" => Ok(SweepAxis::Lag),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?} (expected rank or lag)"))),
        }
    }
}

/// Result of one (value, seed) cell of a sweep.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: usize,
    pub seed: u64,
    pub result: std::result::Result<Vec<(usize, f64)>, String>,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub horizons: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// `values × horizons` matrix of RMSE averaged over successful seeds;
    /// NaN where every seed failed.
    pub fn mean_table(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|&v| {
                self.horizons
                    .iter()
                    .enumerate()
                    .map(|(k, _)| {
                        let xs: Vec<f64> = self
                            .cells
                            .iter()
                            .filter(|c| c.value == v)
                            .filter_map(|c| c.result.as_ref().ok().map(|r| r[k].1))
                            .collect();
                        if xs.is_empty() {
                            f64::NAN
                        } else {
                            xs.iter().sum::<f64>() / xs.len() as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Tidy rows labelled `<axis><value>`, e.g. `rank4`.
    pub fn rows(&self, prefix: &str) -> Vec<RmseRow> {
        let mut out = Vec::new();
        for c in &self.cells {
            if let Ok(r) = &c.result {
                for &(horizon, rmse) in r {
                    out.push(RmseRow {
                        horizon,
                        model: format!("{prefix}{}{}", self.axis, c.value),
                        seed: c.seed,
                        rmse,
                    });
                }
            }
        }
        out
    }

    pub fn failures(&self) -> Vec<String> {
        self.cells
            .iter()
            .filter_map(|c| {
                c.result
                    .as_ref()
                    .err()
                    .map(|e| format!("{}={} seed {}: {e}", self.axis, c.value, c.seed))
            })
            .collect()
    }

    /// Wide CSV: one row per value, one column per horizon.
    pub fn write_wide<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.axis.to_string()];
        header.extend(self.horizons.iter().map(|h| format!("h{h}")));
        w.write_record(&header)?;
        for (v, row) in self.values.iter().zip(self.mean_table()) {
            let mut rec = vec![v.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per (value, seed) and reports test RMSE by horizon.
/// Training failures are recorded per cell rather than aborting the sweep.
pub fn sensitivity_sweep(
    axis: SweepAxis,
    values: &[usize],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &WindowedDataset,
    horizons: &[usize],
    seeds: &[u64],
    exec: Exec,
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() || horizons.is_empty() {
        return Err(Error::Config("sweep needs values, seeds and horizons".into()));
    }
    for &v in values {
        let cfg = axis.apply(base, v);
        train::validate_model_ranges(&cfg)?;
    }
    let train_set = data.normalized(Split::Train);
    let val_set = data.normalized(Split::Val);
    let jobs: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let inner = if exec.is_parallel() { Exec::Sequential } else { exec };
    let cells = par::map(exec, &jobs, |&(value, seed)| {
        let run = || -> Result<Vec<(usize, f64)>> {
            let cfg = axis.apply(base, value);
            let model = Seq2SeqModel::init(cfg, seed)?;
            let t = TrainConfig {
                seed,
                exec: inner,
                ..train_cfg.clone()
            };
            let out = train::train(model, &train_set, &val_set, &t)?;
            if out.diverged {
                return Err(Error::Diverged(format!("after {} steps", out.steps_run)));
            }
            rmse_by_horizon(&out.model, &data.test, &data.normalizer, horizons, inner)
        };
        SweepCell {
            value,
            seed,
            result: run().map_err(|e| e.to_string()),
        }
    });
    Ok(SweepTable {
        axis,
        values: values.to_vec(),
        horizons: horizons.to_vec(),
        cells,
    })
}
