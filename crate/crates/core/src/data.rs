//! Tabular ingestion, imputation, resampling, augmentation, windowing and
//! the train/val/test split.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multivariate series, time-major: `seq[t][channel]`.
pub type Sequence = Vec<Vec<f64>>;

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.naive_utc());
    }
    for fmt in [TIME_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        .map_err(|_| Error::Data(format!("unparseable timestamp {s:?}")))
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Data(format!("unparseable value {s:?}")))?;
    Ok(if v.is_finite() { Some(v) } else { None })
}

/// Timestamped channels with explicit missing cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    timestamps: Vec<NaiveDateTime>,
    channels: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
    pub source: String,
}

impl SeriesTable {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        channels: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if timestamps.len() != rows.len() {
            return Err(Error::Data(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                rows.len()
            )));
        }
        if let Some(pos) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at row {}",
                pos + 1
            )));
        }
        if let Some(pos) = rows.iter().position(|r| r.len() != channels.len()) {
            return Err(Error::Data(format!(
                "row {pos} has {} cells, expected {}",
                rows[pos].len(),
                channels.len()
            )));
        }
        Ok(SeriesTable {
            timestamps,
            channels,
            rows,
            source: source.into(),
        })
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// Header `timestamp,<channel>...`; missing cells empty or `NaN`.
    pub fn from_reader<R: Read>(reader: R, source: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Data("expected a timestamp column and at least one channel".into()));
        }
        let channels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut timestamps = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            timestamps.push(parse_timestamp(&rec[0])?);
            rows.push(rec.iter().skip(1).map(parse_cell).collect::<Result<Vec<_>>>()?);
        }
        SeriesTable::new(timestamps, channels, rows, source)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        SeriesTable::from_reader(File::open(path)?, path.display().to_string())
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_owned()];
        header.extend(self.channels.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.timestamps.iter().zip(&self.rows) {
            let mut rec = vec![t.format(TIME_FORMAT).to_string()];
            rec.extend(row.iter().map(|c| c.map_or_else(String::new, |v| v.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_writer(File::create(path)?)
    }

    /// Dense values; fails if any cell is missing.
    pub fn dense_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .map(|c| c.ok_or_else(|| Error::Data(format!("missing value in row {i}"))))
                    .collect()
            })
            .collect()
    }
}

/// Replaces each missing cell by the mean of the non-missing cells in its
/// row. Rows with no observed cell are dropped; returns the dropped count.
pub fn impute_cross_sectional(table: &SeriesTable) -> (SeriesTable, usize) {
    let mut timestamps = Vec::with_capacity(table.len());
    let mut rows = Vec::with_capacity(table.len());
    let mut dropped = 0;
    for (t, row) in table.timestamps.iter().zip(&table.rows) {
        let observed: Vec<f64> = row.iter().flatten().copied().collect();
        if observed.is_empty() {
            dropped += 1;
            continue;
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        timestamps.push(*t);
        rows.push(row.iter().map(|c| Some(c.unwrap_or(mean))).collect());
    }
    if dropped > 0 {
        log::warn!("imputation dropped {dropped} fully missing rows");
    }
    let out = SeriesTable {
        timestamps,
        channels: table.channels.clone(),
        rows,
        source: table.source.clone(),
    };
    (out, dropped)
}

/// Non-overlapping block means of `factor` rows, stamped with the block
/// start. The ragged tail is dropped; missing cells are ignored.
pub fn resample(table: &SeriesTable, factor: usize) -> Result<SeriesTable> {
    if factor == 0 {
        return Err(Error::Config("resample factor must be at least 1".into()));
    }
    let blocks = table.len() / factor;
    let mut timestamps = Vec::with_capacity(blocks);
    let mut rows = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let block = &table.rows[b * factor..(b + 1) * factor];
        timestamps.push(table.timestamps[b * factor]);
        let row = (0..table.channels.len())
            .map(|c| {
                let vals: Vec<f64> = block.iter().filter_map(|r| r[c]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        rows.push(row);
    }
    Ok(SeriesTable {
        timestamps,
        channels: table.channels.clone(),
        rows,
        source: table.source.clone(),
    })
}

/// Cuts a fully observed table into consecutive sequences of `len` rows.
pub fn table_to_sequences(table: &SeriesTable, len: usize) -> Result<Vec<Sequence>> {
    if len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let dense = table.dense_rows()?;
    Ok(dense.chunks_exact(len).map(|c| c.to_vec()).collect())
}

/// Cyclic left rotations by `k * period` for `k < len / period`.
pub fn rotate_augment(seqs: &[Sequence], period: usize) -> Result<Vec<Sequence>> {
    if period == 0 {
        return Err(Error::Config("rotation period must be at least 1".into()));
    }
    let mut out = Vec::new();
    for seq in seqs {
        for k in 0..seq.len() / period {
            let mut r = seq.clone();
            r.rotate_left(k * period);
            out.push(r);
        }
    }
    Ok(out)
}

/// An input window and the horizon that immediately follows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub input: Sequence,
    pub target: Sequence,
    /// Index of the source sequence.
    pub source: usize,
    /// Start offset within the source sequence.
    pub offset: usize,
}

pub fn window_sequence(seq: &Sequence, w_in: usize, w_out: usize, stride: usize, source: usize) -> Result<Vec<Window>> {
    if w_in == 0 || w_out == 0 || stride == 0 {
        return Err(Error::Config("window lengths and stride must be positive".into()));
    }
    if w_in + w_out > seq.len() {
        return Err(Error::Data(format!(
            "window {w_in}+{w_out} longer than sequence {source} of length {}",
            seq.len()
        )));
    }
    Ok((0..=seq.len() - w_in - w_out)
        .step_by(stride)
        .map(|o| Window {
            input: seq[o..o + w_in].to_vec(),
            target: seq[o + w_in..o + w_in + w_out].to_vec(),
            source,
            offset: o,
        })
        .collect())
}

/// `(train, val, test)` sequence counts: 10% each for val and test,
/// rounded to nearest.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let tenth = (n as f64 * 0.1).round() as usize;
    let val = tenth.min(n);
    let test = tenth.min(n - val);
    (n - val - test, val, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Sequence indices per split, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn by_seed(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (_, n_val, n_test) = split_counts(n);
        let mut val = idx[..n_val].to_vec();
        let mut test = idx[n_val..n_val + n_test].to_vec();
        let mut train = idx[n_val + n_test..].to_vec();
        val.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        SplitAssignment { train, val, test }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Per-channel z-score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on every time step of the given sequences. Near-constant
    /// channels keep unit scale.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a Sequence>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for row in seqs.into_iter().flatten() {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
                sq = vec![0.0; row.len()];
            }
            if row.len() != sum.len() {
                return Err(Error::Data("inconsistent channel count".into()));
            }
            for (c, &v) in row.iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("cannot fit a normalizer on no data".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() < 1e-12 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_seq(&self, seq: &Sequence) -> Sequence {
        seq.iter().map(|r| self.apply(r)).collect()
    }

    pub fn invert_seq(&self, seq: &Sequence) -> Sequence {
        seq.iter().map(|r| self.invert(r)).collect()
    }

    pub fn apply_window(&self, w: &Window) -> Window {
        Window {
            input: self.apply_seq(&w.input),
            target: self.apply_seq(&w.target),
            source: w.source,
            offset: w.offset,
        }
    }
}

/// Windows in raw units, grouped by split, plus the train-fitted normalizer.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub w_in: usize,
    pub w_out: usize,
    pub stride: usize,
    pub seed: u64,
    pub assignment: SplitAssignment,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    pub normalizer: Normalizer,
}

impl WindowedDataset {
    pub fn windows(&self, split: Split) -> &[Window] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Windows of `split` in normalized units.
    pub fn normalized(&self, split: Split) -> Vec<Window> {
        self.windows(split)
            .iter()
            .map(|w| self.normalizer.apply_window(w))
            .collect()
    }
}

pub fn window_and_split(
    seqs: &[Sequence],
    w_in: usize,
    w_out: usize,
    stride: usize,
    seed: u64,
) -> Result<WindowedDataset> {
    if seqs.is_empty() {
        return Err(Error::Data("no sequences to window".into()));
    }
    let assignment = SplitAssignment::by_seed(seqs.len(), seed);
    let collect = |idx: &[usize]| -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for &i in idx {
            out.extend(window_sequence(&seqs[i], w_in, w_out, stride, i)?);
        }
        Ok(out)
    };
    let train = collect(&assignment.train)?;
    let val = collect(&assignment.val)?;
    let test = collect(&assignment.test)?;
    let fit_on: Vec<&Sequence> = if assignment.train.is_empty() {
        seqs.iter().collect()
    } else {
        assignment.train.iter().map(|&i| &seqs[i]).collect()
    };
    let normalizer = Normalizer::fit(fit_on)?;
    Ok(WindowedDataset {
        w_in,
        w_out,
        stride,
        seed,
        assignment,
        train,
        val,
        test,
        normalizer,
    })
}

/// JSON sidecar describing a generated or prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Generating spec or preparation settings.
    pub source: serde_json::Value,
    pub seed: u64,
    pub n_sequences: usize,
    pub dim: usize,
    pub seq_len: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// CSV rows `seq_id,step,x0,...` for each time step of each sequence.
pub fn write_sequences<W: Write>(writer: W, seqs: &[Sequence]) -> Result<()> {
    let dim = seqs.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["seq_id".to_owned(), "step".to_owned()];
    header.extend((0..dim).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    for (id, seq) in seqs.iter().enumerate() {
        for (t, row) in seq.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Data(format!("sequence {id} step {t} has {} channels, expected {dim}", row.len())));
            }
            let mut rec = vec![id.to_string(), t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequences<R: Read>(reader: R) -> Result<Vec<Sequence>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut seqs: Vec<Sequence> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Data("dataset rows need seq_id, step and features".into()));
        }
        let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Data(format!("bad index {s:?}")));
        let id = parse_idx(&rec[0])?;
        let step = parse_idx(&rec[1])?;
        let row = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Data(format!("bad value {s:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if id == seqs.len() {
            seqs.push(Vec::new());
        }
        if id + 1 != seqs.len() {
            return Err(Error::Data(format!("sequence ids out of order at id {id}")));
        }
        let seq = &mut seqs[id];
        if step != seq.len() {
            return Err(Error::Data(format!("sequence {id}: step {step} out of order")));
        }
        seq.push(row);
    }
    Ok(seqs)
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `<dir>/<name>.csv` and its `<name>.json` sidecar.
pub fn write_dataset(dir: &Path, name: &str, seqs: &[Sequence], meta: &DatasetMeta) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    write_sequences(File::create(&csv_path)?, seqs)?;
    std::fs::write(sidecar_path(&csv_path), serde_json::to_string_pretty(meta)?)?;
    Ok(csv_path)
}

pub fn read_dataset(csv_path: &Path) -> Result<(Vec<Sequence>, Option<DatasetMeta>)> {
    let seqs = read_sequences(File::open(csv_path)?)?;
    let side = sidecar_path(csv_path);
    let meta = if side.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(side)?)?)
    } else {
        None
    };
    Ok((seqs, meta))
}

/// Split membership and normalization constants for a prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub w_in: usize,
    pub w_out: usize,
    pub stride: usize,
    pub splits: SplitAssignment,
    pub normalizer: Normalizer,
    #[serde(default)]
    pub dropped_rows: usize,
    #[serde(default)]
    pub source: String,
}

impl Manifest {
    pub fn from_dataset(ds: &WindowedDataset, dropped_rows: usize, source: impl Into<String>) -> Self {
        Manifest {
            seed: ds.seed,
            w_in: ds.w_in,
            w_out: ds.w_out,
            stride: ds.stride,
            splits: ds.assignment.clone(),
            normalizer: ds.normalizer.clone(),
            dropped_rows,
            source: source.into(),
        }
    }
}
