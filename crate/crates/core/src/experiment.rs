//! JSON experiment configuration and the end-to-end pipelines behind each
//! CLI subcommand. Every pipeline reads and writes inside one output
//! directory:
//!
//! | file | written by |
//! |------|------------|
//! | `data.csv`, `data.json` | `gen`, `prep` |
//! | `manifest.json` | `prep`, `train` |
//! | `model.ckpt`, `train_log.csv`, `config.json` | `train` |
//! | `rmse.csv`, `traces.csv` | `eval` |
//! | `sweep.csv`, `sweep_wide.csv`, `<axis><v>_seed<s>/rmse.csv` | `sweep` |
//! | `grid.csv`, `best/` | `gridsearch` |

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointHeader};
use crate::data::{self, DatasetMeta, Manifest, Sequence, SeriesTable, Split, WindowedDataset};
use crate::dynamics::{self, GenzSpec, LorenzSpec};
use crate::error::{Error, Result};
use crate::eval::{self, ForecastRun, RmseRow, SweepAxis, SweepTable};
use crate::par::Exec;
use crate::seq2seq::{ModelConfig, Seq2SeqModel};
use crate::train::{self, GridResult, GridSpec, TrainConfig, TrainOutcome};

pub const DATA_FILE: &str = "data.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const RMSE_FILE: &str = "rmse.csv";
pub const TRACES_FILE: &str = "traces.csv";

/// Where the sequences come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DatasetConfig {
    Genz(GenzSpec),
    Lorenz(LorenzSpec),
    /// A sequence CSV as written by `gen` or `prep`.
    Csv { path: PathBuf },
}

/// Raw table preparation for `prep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    /// Timestamped CSV with one column per channel.
    pub input: PathBuf,
    /// Rows averaged into one, e.g. 4 for 5-minute to 20-minute readings.
    #[serde(default = "one")]
    pub resample_factor: usize,
    /// Rows per sequence after resampling.
    pub seq_len: usize,
    /// Cyclic rotation augmentation period in rows.
    #[serde(default)]
    pub rotate_period: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    #[serde(default = "five")]
    pub input_len: usize,
    #[serde(default = "eighty")]
    pub output_len: usize,
    #[serde(default = "hundred")]
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            input_len: five(),
            output_len: eighty(),
            stride: hundred(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizons: default_horizons(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(flatten)]
    pub axes: GridSpec,
    /// Train a random subset of this many candidates.
    #[serde(default)]
    pub budget: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

fn one() -> usize {
    1
}
fn five() -> usize {
    5
}
fn eighty() -> usize {
    80
}
fn hundred() -> usize {
    100
}
fn default_horizons() -> Vec<usize> {
    vec![5, 20, 40, 80]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub prep: Option<PrepConfig>,
    #[serde(default)]
    pub window: WindowConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses and validates; any failure is a configuration error.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Genz(s) => s.validate()?,
            DatasetConfig::Lorenz(s) => s.validate()?,
            DatasetConfig::Csv { .. } => {}
        }
        let w = &self.window;
        if w.input_len == 0 || w.output_len == 0 || w.stride == 0 {
            return Err(Error::Config("window lengths and stride must be positive".into()));
        }
        train::validate_model_ranges(&self.model)?;
        self.train.validate_ranges()?;
        if self.eval.horizons.is_empty() || self.eval.horizons.iter().any(|&h| h == 0 || h > w.output_len) {
            return Err(Error::Config(format!(
                "horizons {:?} must lie in 1..={}",
                self.eval.horizons, w.output_len
            )));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
        }
        if let Some(p) = &self.prep {
            if p.seq_len == 0 || p.resample_factor == 0 || p.rotate_period == Some(0) {
                return Err(Error::Config("prep lengths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Copy with the seed replaced and propagated to training.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.train.seed = seed;
        c
    }

    fn label(&self) -> String {
        self.model.cell.to_string()
    }
}

/// Synthetic sequences for a generated dataset.
pub fn generate(cfg: &DatasetConfig, seed: u64, exec: Exec) -> Result<Vec<Sequence>> {
    match cfg {
        DatasetConfig::Genz(s) => dynamics::gen_genz_dataset(s, seed, exec),
        DatasetConfig::Lorenz(s) => dynamics::gen_lorenz_dataset(s, seed, exec),
        DatasetConfig::Csv { path } => Err(Error::Config(format!(
            "{} is a file dataset; nothing to generate",
            path.display()
        ))),
    }
}

/// `<out>/data.csv` if present, else the configured file, else freshly
/// generated sequences.
pub fn load_sequences(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Sequence>> {
    let local = out.join(DATA_FILE);
    if local.exists() {
        return Ok(data::read_dataset(&local)?.0);
    }
    match &cfg.dataset {
        DatasetConfig::Csv { path } => Ok(data::read_dataset(path)?.0),
        other => generate(other, cfg.seed, cfg.train.exec),
    }
}

pub fn windowed(cfg: &ExperimentConfig, seqs: &[Sequence]) -> Result<WindowedDataset> {
    let w = &cfg.window;
    let ds = data::window_and_split(seqs, w.input_len, w.output_len, w.stride, cfg.seed)?;
    if ds.dim() != cfg.model.input_dim {
        return Err(Error::Config(format!(
            "model input_dim {} but data has {} channels",
            cfg.model.input_dim,
            ds.dim()
        )));
    }
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// `gen`: writes the synthetic dataset and its sidecar.
pub fn run_gen(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let seqs = generate(&cfg.dataset, cfg.seed, cfg.train.exec)?;
    let meta = DatasetMeta {
        source: serde_json::to_value(&cfg.dataset)?,
        seed: cfg.seed,
        n_sequences: seqs.len(),
        dim: seqs.first().and_then(|s| s.first()).map_or(0, Vec::len),
        seq_len: seqs.first().map_or(0, Vec::len),
        extra: Default::default(),
    };
    data::write_dataset(out, "data", &seqs, &meta)
}

/// `prep`: imputes, resamples, cuts and optionally rotates a raw table, then
/// writes the sequences and a split manifest.
pub fn run_prep(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let prep = cfg
        .prep
        .as_ref()
        .ok_or_else(|| Error::Config("prep needs a \"prep\" section".into()))?;
    let table = SeriesTable::read_csv(&prep.input)?;
    let (table, dropped) = data::impute_cross_sectional(&table);
    let table = data::resample(&table, prep.resample_factor)?;
    let mut seqs = data::table_to_sequences(&table, prep.seq_len)?;
    if let Some(period) = prep.rotate_period {
        seqs = data::rotate_augment(&seqs, period)?;
    }
    if seqs.is_empty() {
        return Err(Error::Data(format!(
            "{} rows are not enough for one sequence of {}",
            table.len(),
            prep.seq_len
        )));
    }
    let meta = DatasetMeta {
        source: serde_json::to_value(prep)?,
        seed: cfg.seed,
        n_sequences: seqs.len(),
        dim: table.channels().len(),
        seq_len: prep.seq_len,
        extra: [("channels".to_owned(), serde_json::to_value(table.channels())?)].into(),
    };
    data::write_dataset(out, "data", &seqs, &meta)?;
    let w = &cfg.window;
    let ds = data::window_and_split(&seqs, w.input_len, w.output_len, w.stride, cfg.seed)?;
    let manifest = Manifest::from_dataset(&ds, dropped, prep.input.display().to_string());
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// `train`: fits the configured model and writes checkpoint, log, manifest
/// and the resolved config.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let seqs = load_sequences(cfg, out)?;
    let ds = windowed(cfg, &seqs)?;
    let outcome = train_on(cfg, &ds, cfg.seed)?;
    save_run(cfg, &ds, &outcome, out)?;
    if outcome.diverged {
        return Err(Error::Diverged(format!(
            "non-finite loss after {} steps",
            outcome.steps_run
        )));
    }
    Ok(outcome)
}

/// Initializes with `seed` and trains on the normalized splits of `ds`.
pub fn train_on(cfg: &ExperimentConfig, ds: &WindowedDataset, seed: u64) -> Result<TrainOutcome> {
    let model = Seq2SeqModel::init(cfg.model.clone(), seed)?;
    let t = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    train::train(model, &ds.normalized(Split::Train), &ds.normalized(Split::Val), &t)
}

fn save_run(cfg: &ExperimentConfig, ds: &WindowedDataset, outcome: &TrainOutcome, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let header = CheckpointHeader {
        model: outcome.model.config().clone(),
        normalizer: Some(ds.normalizer.clone()),
        step: outcome.best_step,
        seed: cfg.seed,
    };
    checkpoint::save(&out.join(CHECKPOINT_FILE), &outcome.model, &header)?;
    train::write_log(File::create(out.join(LOG_FILE))?, &outcome.log)?;
    write_json(&out.join(MANIFEST_FILE), &Manifest::from_dataset(ds, 0, "train"))?;
    let mut resolved = cfg.clone();
    resolved.model = outcome.model.config().clone();
    write_json(&out.join(CONFIG_FILE), &resolved)?;
    Ok(())
}

/// `eval`: RMSE by horizon of `<out>/model.ckpt` on the test split.
pub fn run_eval(cfg: &ExperimentConfig, out: &Path, horizons: Option<&[usize]>) -> Result<ForecastRun> {
    let ckpt = out.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        return Err(Error::Config(format!("no checkpoint at {}", ckpt.display())));
    }
    let (model, header) = checkpoint::load(&ckpt)?;
    let seqs = load_sequences(cfg, out)?;
    let ds = windowed(cfg, &seqs)?;
    let normalizer = header.normalizer.unwrap_or_else(|| ds.normalizer.clone());
    let horizons = horizons.unwrap_or(&cfg.eval.horizons);
    let run = ForecastRun::evaluate(&model, ckpt, &ds.test, &normalizer, horizons, cfg.train.exec)?;
    eval::write_rmse_csv(File::create(out.join(RMSE_FILE))?, &run.rows(&cfg.label(), header.seed))?;
    eval::write_traces(File::create(out.join(TRACES_FILE))?, &run.traces)?;
    Ok(run)
}

/// `sweep`: one model per (value, seed), tidy and wide tables, and a
/// per-cell `rmse.csv` in its own subdirectory.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, sweep: &SweepConfig) -> Result<SweepTable> {
    std::fs::create_dir_all(out)?;
    let seqs = load_sequences(cfg, out)?;
    let ds = windowed(cfg, &seqs)?;
    let table = eval::sensitivity_sweep(
        sweep.axis,
        &sweep.values,
        &cfg.model,
        &cfg.train,
        &ds,
        &cfg.eval.horizons,
        &cfg.eval.seeds,
        cfg.train.exec,
    )?;
    let label = cfg.label();
    let prefix = format!("{label}_");
    for cell in &table.cells {
        let dir = out.join(format!("{}{}_seed{}", sweep.axis, cell.value, cell.seed));
        std::fs::create_dir_all(&dir)?;
        match &cell.result {
            Ok(r) => {
                let rows: Vec<RmseRow> = r
                    .iter()
                    .map(|&(horizon, rmse)| RmseRow {
                        horizon,
                        model: format!("{prefix}{}{}", sweep.axis, cell.value),
                        seed: cell.seed,
                        rmse,
                    })
                    .collect();
                eval::write_rmse_csv(File::create(dir.join(RMSE_FILE))?, &rows)?;
            }
            Err(e) => std::fs::write(dir.join("error.txt"), format!("{e}\n"))?,
        }
    }
    eval::write_rmse_csv(File::create(out.join("sweep.csv"))?, &table.rows(&prefix))?;
    table.write_wide(File::create(out.join("sweep_wide.csv"))?)?;
    let failures = table.failures();
    if failures.len() == table.cells.len() {
        return Err(Error::Diverged(format!("every sweep cell failed: {}", failures.join("; "))));
    }
    Ok(table)
}

#[derive(Serialize)]
struct GridRow<'a> {
    index: usize,
    cell: String,
    hidden: usize,
    layers: usize,
    lag: usize,
    order: usize,
    rank: usize,
    learning_rate: f64,
    param_count: usize,
    score: Option<f64>,
    status: &'a str,
}

/// `gridsearch`: trains the grid, writes `grid.csv` and the winner to `best/`.
pub fn run_gridsearch(cfg: &ExperimentConfig, out: &Path) -> Result<GridResult> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("gridsearch needs a \"grid\" section".into()))?;
    let candidates = grid.axes.candidates(&cfg.model, &cfg.train);
    for (m, t) in &candidates {
        train::validate_model_ranges(m)?;
        t.validate_ranges()?;
    }
    std::fs::create_dir_all(out)?;
    let seqs = load_sequences(cfg, out)?;
    let ds = windowed(cfg, &seqs)?;
    let result = train::grid_search(
        &ds.normalized(Split::Train),
        &ds.normalized(Split::Val),
        &candidates,
        grid.budget,
        cfg.seed,
        cfg.train.exec,
    )?;
    let mut w = csv::Writer::from_path(out.join("grid.csv"))?;
    for run in &result.runs {
        let m = &run.model_config;
        let status = match &run.outcome {
            Ok(o) if o.diverged => "diverged",
            Ok(_) => "ok",
            Err(_) => "failed",
        };
        w.serialize(GridRow {
            index: run.index,
            cell: m.cell.to_string(),
            hidden: m.hidden,
            layers: m.layers,
            lag: m.lag,
            order: m.order,
            rank: m.rank,
            learning_rate: run.train_config.learning_rate,
            param_count: run.param_count,
            score: run.score(),
            status,
        })?;
    }
    w.flush()?;
    let best = result.best_run();
    if let Ok(outcome) = &best.outcome {
        let mut best_cfg = cfg.clone();
        best_cfg.model = best.model_config.clone();
        best_cfg.train = best.train_config.clone();
        save_run(&best_cfg, &ds, outcome, &out.join("best"))?;
    }
    Ok(result)
}
