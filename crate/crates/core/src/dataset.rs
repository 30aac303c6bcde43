//! Labeled variable-length time series: loading, synthesis and splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One multivariate signal stored row-major, `len() × channels()`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: Vec<f64>,
    channels: usize,
}

impl TimeSeries {
    /// Builds a series from a flat row-major buffer.
    pub fn new(data: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("series needs at least one channel".into()));
        }
        if data.is_empty() || data.len() % channels != 0 {
            return Err(Error::InvalidArgument(format!(
                "buffer of {} values is not a positive multiple of {} channels",
                data.len(),
                channels
            )));
        }
        Ok(Self { data, channels })
    }

    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        let channels = frames.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(frames.len() * channels);
        for (t, f) in frames.iter().enumerate() {
            if f.len() != channels {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} has {} channels, expected {channels}",
                    f.len()
                )));
            }
            data.extend_from_slice(f);
        }
        Self::new(data, channels)
    }

    /// Single-channel convenience constructor.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite()).map(|i| i / self.channels)
    }
}

/// Ordered collection of labeled series sharing one channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    ids: Vec<String>,
    series: Vec<TimeSeries>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    /// Validates and assembles a dataset. Every class must be nonempty.
    pub fn new(
        ids: Vec<String>,
        series: Vec<TimeSeries>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        Self::build(ids, series, labels, class_names, true)
    }

    fn build(
        ids: Vec<String>,
        series: Vec<TimeSeries>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        require_all_classes: bool,
    ) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::NoSeries);
        }
        if ids.len() != series.len() || labels.len() != series.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids, {} series, {} labels",
                ids.len(),
                series.len(),
                labels.len()
            )));
        }
        let channels = series[0].channels();
        let mut seen = vec![false; class_names.len()];
        for ((id, s), &l) in ids.iter().zip(&series).zip(&labels) {
            if s.channels() != channels {
                return Err(Error::ChannelMismatch { expected: channels, found: s.channels() });
            }
            if let Some(frame) = s.first_non_finite() {
                return Err(Error::NonFinite { id: id.clone(), frame });
            }
            if l >= class_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "series {id}: class index {l} out of range for {} classes",
                    class_names.len()
                )));
            }
            seen[l] = true;
        }
        if require_all_classes {
            if let Some(c) = seen.iter().position(|s| !s) {
                return Err(Error::ClassTooSmall { class: class_names[c].clone(), size: 0, needed: 1 });
            }
        }
        Ok(Self { ids, series, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.series[0].channels()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Sub-dataset over `indices` (in the given order). Keeps the full class
    /// list even when some classes are absent from the subset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            series: indices.iter().map(|&i| self.series[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Indices of each class's members, in dataset order.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    /// SHA-256 over the numeric content (lengths, channels, raw values).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.series.len() as u64).to_le_bytes());
        for s in &self.series {
            h.update((s.len() as u64).to_le_bytes());
            h.update((s.channels() as u64).to_le_bytes());
            for v in s.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// On-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// `series_id,label,t,c0,...` rows sorted by (series_id, t).
    CsvLong,
    /// One `{"id", "label", "frames"}` object per line.
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension (`.csv` or `.jsonl`/`.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::CsvLong),
            "jsonl" | "json" | "ndjson" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_long" | "csv" => Ok(Self::CsvLong),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// One jsonl record.
#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub id: serde_json::Value,
    pub label: String,
    pub frames: Vec<Vec<f64>>,
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

struct LabelTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
    fixed: bool,
}

impl LabelTable {
    fn new(fixed: Option<&[String]>) -> Self {
        let names = fixed.map(<[String]>::to_vec).unwrap_or_default();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index, fixed: fixed.is_some() }
    }

    fn lookup(&mut self, label: &str) -> Result<usize> {
        if let Some(&i) = self.index.get(label) {
            return Ok(i);
        }
        if self.fixed {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        let i = self.names.len();
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), i);
        Ok(i)
    }
}

/// Loads a dataset; class indices follow first appearance in the file.
pub fn load_dataset(path: &Path, format: Format) -> Result<LabeledDataset> {
    load_impl(path, format, None)
}

/// Loads a dataset against a fixed class list (e.g. a trained model's).
/// Labels outside the list are rejected; listed classes may be absent.
pub fn load_dataset_with_classes(
    path: &Path,
    format: Format,
    class_names: &[String],
) -> Result<LabeledDataset> {
    load_impl(path, format, Some(class_names))
}

fn load_impl(path: &Path, format: Format, classes: Option<&[String]>) -> Result<LabeledDataset> {
    let mut table = LabelTable::new(classes);
    let (ids, series, labels) = match format {
        Format::CsvLong => read_csv_long(path, &mut table)?,
        Format::Jsonl => read_jsonl(path, &mut table)?,
    };
    LabeledDataset::build(ids, series, labels, table.names, classes.is_none())
}

type Columns = (Vec<String>, Vec<TimeSeries>, Vec<usize>);

fn read_jsonl(path: &Path, table: &mut LabelTable) -> Result<Columns> {
    let reader = BufReader::new(File::open(path)?);
    let (mut ids, mut series, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut channels = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: lineno, msg };
        let rec: SeriesRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let id = id_string(&rec.id);
        let ts = TimeSeries::from_frames(&rec.frames).map_err(|e| parse_err(format!("series {id}: {e}")))?;
        check_channels(&mut channels, ts.channels())?;
        labels.push(table.lookup(&rec.label)?);
        ids.push(id);
        series.push(ts);
    }
    Ok((ids, series, labels))
}

fn check_channels(expected: &mut Option<usize>, found: usize) -> Result<()> {
    match *expected {
        Some(e) if e != found => Err(Error::ChannelMismatch { expected: e, found }),
        Some(_) => Ok(()),
        None => {
            *expected = Some(found);
            Ok(())
        }
    }
}

fn read_csv_long(path: &Path, table: &mut LabelTable) -> Result<Columns> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    if header.len() < 4
        || &header[0] != "series_id"
        || &header[1] != "label"
        || &header[2] != "t"
        || header.iter().skip(3).enumerate().any(|(c, h)| h != format!("c{c}"))
    {
        return Err(parse_err(1, "expected header series_id,label,t,c0,...".into()));
    }
    let channels = header.len() - 3;

    let (mut ids, mut series, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut done: HashMap<String, usize> = HashMap::new();
    let mut cur: Option<(String, String, Vec<f64>, f64)> = None;

    let mut flush = |cur: Option<(String, String, Vec<f64>, f64)>,
                     ids: &mut Vec<String>,
                     series: &mut Vec<TimeSeries>,
                     labels: &mut Vec<usize>|
     -> Result<()> {
        if let Some((id, label, data, _)) = cur {
            labels.push(table.lookup(&label)?);
            series.push(TimeSeries::new(data, channels)?);
            ids.push(id);
        }
        Ok(())
    };

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let id = rec[0].to_string();
        let label = rec[1].to_string();
        let t: f64 = rec[2].trim().parse().map_err(|_| parse_err(line, format!("bad time index {:?}", &rec[2])))?;
        let mut values = Vec::with_capacity(channels);
        for field in rec.iter().skip(3) {
            let v: f64 = field.trim().parse().map_err(|_| parse_err(line, format!("bad value {field:?}")))?;
            values.push(v);
        }
        match &mut cur {
            Some((cid, clabel, data, last_t)) if *cid == id => {
                if *clabel != label {
                    return Err(parse_err(line, format!("series {id} changes label")));
                }
                if t <= *last_t {
                    return Err(parse_err(line, format!("series {id}: rows not sorted by t")));
                }
                *last_t = t;
                data.extend(values);
            }
            _ => {
                if done.contains_key(&id) {
                    return Err(parse_err(line, format!("series {id} is not contiguous")));
                }
                flush(cur.take(), &mut ids, &mut series, &mut labels)?;
                done.insert(id.clone(), line);
                cur = Some((id, label, values, t));
            }
        }
    }
    flush(cur.take(), &mut ids, &mut series, &mut labels)?;
    Ok((ids, series, labels))
}

/// Writes a dataset in either format. Values are printed in shortest
/// round-trip form so a reload reproduces them exactly.
pub fn save_dataset(ds: &LabeledDataset, path: &Path, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(ds: &LabeledDataset, w: &mut W, format: Format) -> Result<()> {
    match format {
        Format::Jsonl => {
            for (i, s) in ds.series.iter().enumerate() {
                let rec = SeriesRecord {
                    id: serde_json::Value::String(ds.ids[i].clone()),
                    label: ds.class_names[ds.labels[i]].clone(),
                    frames: s.frames().map(<[f64]>::to_vec).collect(),
                };
                serde_json::to_writer(&mut *w, &rec)?;
                writeln!(w)?;
            }
        }
        Format::CsvLong => {
            let mut cw = csv::Writer::from_writer(w);
            let mut header = vec!["series_id".to_string(), "label".into(), "t".into()];
            header.extend((0..ds.channels()).map(|c| format!("c{c}")));
            cw.write_record(&header)?;
            for (i, s) in ds.series.iter().enumerate() {
                for (t, frame) in s.frames().enumerate() {
                    let mut row = vec![ds.ids[i].clone(), ds.class_names[ds.labels[i]].clone(), t.to_string()];
                    row.extend(frame.iter().map(|v| v.to_string()));
                    cw.write_record(&row)?;
                }
            }
            cw.flush()?;
        }
    }
    Ok(())
}

/// Parameters of the sinusoidal benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub noise_sd: f64,
    pub warp: bool,
    pub seed: u64,
    /// Nominal length; warped series vary by up to ±30% around it.
    pub base_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 3, per_class: 20, channels: 2, noise_sd: 0.05, warp: true, seed: 7, base_len: 48 }
    }
}

/// Class `c`, channel `ch` prototype at normalized time `u ∈ [0, 1]`.
fn prototype(c: usize, ch: usize, u: f64) -> f64 {
    let freq = 1.0 + 0.75 * c as f64;
    let phase = std::f64::consts::TAU * (0.37 * c as f64 + 0.21 * ch as f64);
    (std::f64::consts::TAU * freq * u + phase).sin()
}

/// Generates a class-balanced dataset of noisy, optionally warped sinusoids.
/// Series are ordered class by class.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<LabeledDataset> {
    if cfg.classes < 2 || cfg.per_class < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes and 2 series per class".into()));
    }
    if cfg.channels == 0 || cfg.base_len < 2 {
        return Err(Error::InvalidArgument("need at least 1 channel and base length 2".into()));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) {
        return Err(Error::InvalidArgument("noise_sd must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = cfg.classes * cfg.per_class;
    let (mut ids, mut series, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));

    for c in 0..cfg.classes {
        for m in 0..cfg.per_class {
            let (len, gamma) = if cfg.warp {
                let jitter: f64 = rng.random_range(-0.3..=0.3);
                let len = ((cfg.base_len as f64) * (1.0 + jitter)).round().max(2.0) as usize;
                let gamma: f64 = rng.random_range(-0.3f64..=0.3).exp();
                (len, gamma)
            } else {
                (cfg.base_len, 1.0)
            };
            let mut data = Vec::with_capacity(len * cfg.channels);
            for t in 0..len {
                // u -> u^gamma is a monotone bijection of [0, 1]
                let u = (t as f64 / (len - 1) as f64).powf(gamma);
                for ch in 0..cfg.channels {
                    let e = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(prototype(c, ch, u) + e);
                }
            }
            ids.push(format!("s{c}_{m}"));
            series.push(TimeSeries::new(data, cfg.channels)?);
            labels.push(c);
        }
    }
    let class_names = (0..cfg.classes).map(|c| format!("class{c}")).collect();
    LabeledDataset::new(ids, series, labels, class_names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
    Validation,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Test, Role::Validation];
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "validation" | "val" => Ok(Self::Validation),
            other => Err(Error::InvalidArgument(format!("unknown split role {other:?}"))),
        }
    }
}

/// Role of every sample index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    roles: Vec<Role>,
}

impl SplitAssignment {
    pub fn from_roles(roles: Vec<Role>) -> Self {
        Self { roles }
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Ascending indices holding `role`.
    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.roles.iter().enumerate().filter(|(_, r)| **r == role).map(|(i, _)| i).collect()
    }
}

/// Default train/test/validation fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.25, 0.25];

/// Per-class role counts: floors of the targets, with leftovers going to the
/// roles with the largest fractional parts. Ties prefer the role furthest
/// behind its dataset-wide target, then train, test, validation in that order.
fn role_counts(size: usize, fractions: &[f64; 3], deficit: &[f64; 3]) -> [usize; 3] {
    let targets = fractions.map(|f| f * size as f64);
    let mut counts = targets.map(|t| t.floor() as usize);
    let mut left = size - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(deficit[b].total_cmp(&deficit[a])).then(a.cmp(&b))
    });
    for &r in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[r] += 1;
        left -= 1;
    }
    counts
}

/// Stratified random split. Each class's counts are within one sample of its
/// targets and every role receives at least one member of every class.
pub fn split(ds: &LabeledDataset, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be positive and sum to 1")));
    }
    let members = ds.class_members();
    for (c, m) in members.iter().enumerate() {
        if m.len() < 3 {
            return Err(Error::ClassTooSmall { class: ds.class_names()[c].clone(), size: m.len(), needed: 3 });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roles = vec![Role::Train; ds.len()];
    let mut assigned = [0usize; 3];
    let mut seen = 0usize;
    for m in &members {
        let deficit: [f64; 3] = std::array::from_fn(|r| fractions[r] * (seen + m.len()) as f64 - assigned[r] as f64);
        let counts = role_counts(m.len(), &fractions, &deficit);
        if counts.contains(&0) {
            return Err(Error::ClassTooSmall {
                class: ds.class_names()[ds.labels()[m[0]]].clone(),
                size: m.len(),
                needed: 3,
            });
        }
        let mut shuffled = m.clone();
        shuffled.shuffle(&mut rng);
        let mut it = shuffled.into_iter();
        for (r, &n) in counts.iter().enumerate() {
            for i in it.by_ref().take(n) {
                roles[i] = Role::ALL[r];
            }
            assigned[r] += n;
        }
        seen += m.len();
    }
    Ok(SplitAssignment { roles })
}
