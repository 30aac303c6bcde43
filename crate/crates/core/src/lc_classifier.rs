//! Label-consistent NNKSC: the training kernel is augmented with label (H)
//! and discriminative-code (Q) terms, atoms are kept class-pure by masking
//! the ℓ1 shrinkage, and queries are labeled by `argmin_c |1 − (H A x)_c|`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Role, SeriesRecord, SplitAssignment, TimeSeries};
use crate::dictionary_learning::{
    init_dictionary, train_nnksc_with, EpochControl, EpochRecord, TrainConfig, TrainObserver, TrainTrace,
};
use crate::dtw_gram::{cross_kernel, distance_matrix, gaussian_kernel, gram_from_distances, DistanceMatrix, GramMatrix};
use crate::metrics::{accuracy, reconstruction_error};
use crate::sparse_coding::{code_with, Coder, Dictionary, SparseCodeMatrix};
use crate::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// `H`: `C × N` one-hot class indicators of the training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    h: DMatrix<f64>,
    labels: Vec<usize>,
}

impl LabelMatrix {
    pub fn new(labels: &[usize], n_classes: usize) -> Result<Self> {
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {n_classes} classes")));
        }
        let h = DMatrix::from_fn(n_classes, labels.len(), |i, j| if labels[j] == i { 1.0 } else { 0.0 });
        Ok(Self { h, labels: labels.to_vec() })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.h.nrows()
    }
}

/// `Q`: `k × N`, `Q(i, j) = 1` iff atom `i` belongs to the class of sample `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeMatrix {
    q: DMatrix<f64>,
    atom_class: Vec<usize>,
}

impl DiscriminativeMatrix {
    pub fn new(atom_class: &[usize], labels: &[usize]) -> Self {
        let q = DMatrix::from_fn(atom_class.len(), labels.len(), |i, j| if atom_class[i] == labels[j] { 1.0 } else { 0.0 });
        Self { q, atom_class: atom_class.to_vec() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn atom_class(&self) -> &[usize] {
        &self.atom_class
    }
}

/// Atom classes in blocks: `⌊k/C⌋` atoms per class, one extra for each of the
/// `k mod C` largest classes (ties to the lower index).
pub fn assign_atom_classes(class_sizes: &[usize], k: usize) -> Result<Vec<usize>> {
    let c = class_sizes.len();
    if c == 0 || k < c {
        return Err(Error::InvalidArgument(format!("need k ≥ C, got k={k}, C={c}")));
    }
    let mut per = vec![k / c; c];
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| class_sizes[b].cmp(&class_sizes[a]).then(a.cmp(&b)));
    for &i in order.iter().take(k % c) {
        per[i] += 1;
    }
    Ok((0..c).flat_map(|i| std::iter::repeat_n(i, per[i])).collect())
}

/// `H` from the labels and `Q` from the block atom-class assignment.
pub fn build_label_structures(
    labels: &[usize],
    n_classes: usize,
    k: usize,
) -> Result<(LabelMatrix, DiscriminativeMatrix)> {
    let h = LabelMatrix::new(labels, n_classes)?;
    let mut sizes = vec![0usize; n_classes];
    for &l in labels {
        sizes[l] += 1;
    }
    let atom_class = assign_atom_classes(&sizes, k)?;
    let q = DiscriminativeMatrix::new(&atom_class, labels);
    Ok((h, q))
}

/// `K~ = K + α QᵀQ + β HᵀH`. With `α = β = 0` the input is returned as is.
pub fn augment_kernel(
    gram: &GramMatrix,
    h: &LabelMatrix,
    q: &DiscriminativeMatrix,
    alpha: f64,
    beta: f64,
) -> Result<GramMatrix> {
    let n = gram.len();
    if h.matrix().ncols() != n || q.matrix().ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Gram is {n}×{n}, H has {} columns, Q has {}",
            h.matrix().ncols(),
            q.matrix().ncols()
        )));
    }
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidArgument("alpha and beta must be finite and non-negative".into()));
    }
    if alpha == 0.0 && beta == 0.0 {
        return Ok(gram.clone());
    }
    let qm = q.matrix();
    let hm = h.matrix();
    let values = gram.values() + (qm.transpose() * qm) * alpha + (hm.transpose() * hm) * beta;
    Ok(gram.with_values(values))
}

/// Dominant class of an atom: argmax of `H a_j`, ties to `assigned` when it
/// is among the maxima, else to the smallest index.
pub fn dominant_class(a_j: &DVector<f64>, h: &LabelMatrix, assigned: usize) -> usize {
    let c = h.matrix() * a_j;
    let top = c.max();
    if assigned < c.len() && c[assigned] == top {
        return assigned;
    }
    c.iter().position(|v| *v == top).unwrap_or(assigned)
}

/// Entries outside the dominant class receive shrinkage.
pub fn purity_mask(a_j: &DVector<f64>, h: &LabelMatrix, assigned: usize) -> Vec<bool> {
    let d = dominant_class(a_j, h, assigned);
    h.labels().iter().map(|&l| l != d).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcConfig {
    pub train: TrainConfig,
    pub alpha: f64,
    pub beta: f64,
    /// Gaussian bandwidth; `None` uses the mean squared training distance.
    pub sigma: Option<f64>,
    /// Consecutive test-error rises that stop training; `None` trains for the
    /// full epoch budget and keeps the last dictionary.
    pub patience: Option<usize>,
}

impl Default for LcConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), alpha: 1.0, beta: 5.0, sigma: None, patience: Some(3) }
    }
}

/// Dataset-specific (α, β) presets.
pub fn preset(name: &str) -> Option<(f64, f64)> {
    match name {
        "cmu" => Some((1.0, 5.0)),
        "cricket" => Some((0.5, 1.0)),
        "words" => Some((0.2, 0.5)),
        "squat" => Some((1.0, 0.2)),
        _ => None,
    }
}

/// Classification output for `M` queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<usize>,
    /// `k × M` non-negative codes under the base kernel.
    pub codes: SparseCodeMatrix,
    /// `C × M`, `|1 − (H A x)_c|`.
    pub scores: DMatrix<f64>,
}

/// Everything needed to classify new series.
#[derive(Debug, Clone, PartialEq)]
pub struct LcModel {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sparsity: usize,
    pub tol: f64,
    dictionary: Dictionary,
    h: LabelMatrix,
    q: DiscriminativeMatrix,
    class_names: Vec<String>,
    gram: GramMatrix,
    train_ids: Vec<String>,
    train_series: Vec<TimeSeries>,
    pub trace: TrainTrace,
    /// Test-split error (%) after each epoch; empty without a test split.
    pub test_error_percent: Vec<f64>,
    pub metadata: ModelMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub restart: usize,
    pub split_seed: Option<u64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Epoch whose dictionary was kept.
    pub best_epoch: usize,
    /// Base-kernel reconstruction error of the training codes, %.
    pub train_rec_error_percent: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    sigma: f64,
    alpha: f64,
    beta: f64,
    sparsity: usize,
    tol: f64,
    n_train: usize,
    k: usize,
    channels: usize,
    /// `N × k`, row-major.
    a: Vec<f64>,
    atom_class: Vec<usize>,
    /// `C × N` one-hot rows.
    h: Vec<Vec<u8>>,
    class_names: Vec<String>,
    /// Base (clipped) training Gram matrix, row-major.
    gram: Vec<f64>,
    training_series: Vec<SeriesRecord>,
    trace: TrainTrace,
    test_error_percent: Vec<f64>,
    metadata: ModelMeta,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl LcModel {
    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn label_matrix(&self) -> &LabelMatrix {
        &self.h
    }

    pub fn discriminative_matrix(&self) -> &DiscriminativeMatrix {
        &self.q
    }

    pub fn atom_class(&self) -> &[usize] {
        self.q.atom_class()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn train_series(&self) -> &[TimeSeries] {
        &self.train_series
    }

    pub fn channels(&self) -> usize {
        self.train_series[0].channels()
    }

    /// Codes and labels `queries` against the training series.
    pub fn classify(&self, queries: &[TimeSeries]) -> Result<Classification> {
        if let Some(q) = queries.iter().find(|q| q.channels() != self.channels()) {
            return Err(Error::ChannelMismatch { expected: self.channels(), found: q.channels() });
        }
        let kq = cross_kernel(queries, &self.train_series, self.sigma)?;
        self.classify_kernel(&kq)
    }

    /// Classification from precomputed base-kernel rows (`M × N`).
    pub fn classify_kernel(&self, kq: &DMatrix<f64>) -> Result<Classification> {
        classify_with(&self.gram, &self.dictionary, &self.h, self.sparsity, self.tol, kq)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_VERSION,
            sigma: self.sigma,
            alpha: self.alpha,
            beta: self.beta,
            sparsity: self.sparsity,
            tol: self.tol,
            n_train: self.train_series.len(),
            k: self.dictionary.n_atoms(),
            channels: self.channels(),
            a: row_major(self.dictionary.matrix()),
            atom_class: self.q.atom_class().to_vec(),
            h: self.h.matrix().row_iter().map(|r| r.iter().map(|v| *v as u8).collect()).collect(),
            class_names: self.class_names.clone(),
            gram: row_major(self.gram.values()),
            training_series: self
                .train_ids
                .iter()
                .zip(&self.train_series)
                .zip(self.h.labels())
                .map(|((id, s), &l)| SeriesRecord {
                    id: serde_json::Value::String(id.clone()),
                    label: self.class_names[l].clone(),
                    frames: s.frames().map(<[f64]>::to_vec).collect(),
                })
                .collect(),
            trace: self.trace.clone(),
            test_error_percent: self.test_error_percent.clone(),
            metadata: self.metadata.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        let bad = |m: String| Err(Error::Model(m));
        if f.version != MODEL_VERSION {
            return bad(format!("unsupported model version {}", f.version));
        }
        let (n, k, c) = (f.n_train, f.k, f.class_names.len());
        if n == 0 || k == 0 || c == 0 {
            return bad("empty model".into());
        }
        if f.a.len() != n * k || f.gram.len() != n * n || f.atom_class.len() != k || f.training_series.len() != n {
            return bad("array sizes disagree with n_train and k".into());
        }
        if f.h.len() != c || f.h.iter().any(|r| r.len() != n) {
            return bad(format!("H must be {c}×{n}"));
        }
        let mut labels = Vec::with_capacity(n);
        for j in 0..n {
            let ones: Vec<usize> = (0..c).filter(|&i| f.h[i][j] == 1).collect();
            if ones.len() != 1 || (0..c).any(|i| f.h[i][j] > 1) {
                return bad(format!("column {j} of H is not one-hot"));
            }
            labels.push(ones[0]);
        }
        if f.atom_class.iter().any(|&a| a >= c) {
            return bad("atom class out of range".into());
        }
        let mut ids = Vec::with_capacity(n);
        let mut series = Vec::with_capacity(n);
        for (rec, &l) in f.training_series.iter().zip(&labels) {
            if rec.label != f.class_names[l] {
                return bad(format!("training series label {:?} disagrees with H", rec.label));
            }
            let s = TimeSeries::from_frames(&rec.frames)?;
            if s.channels() != f.channels {
                return Err(Error::ChannelMismatch { expected: f.channels, found: s.channels() });
            }
            ids.push(match &rec.id {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            });
            series.push(s);
        }
        let dictionary = Dictionary::new(DMatrix::from_row_slice(n, k, &f.a))?;
        let gram = GramMatrix::from_psd(DMatrix::from_row_slice(n, n, &f.gram), f.sigma)?;
        Ok(Self {
            sigma: f.sigma,
            alpha: f.alpha,
            beta: f.beta,
            sparsity: f.sparsity,
            tol: f.tol,
            dictionary,
            h: LabelMatrix::new(&labels, c)?,
            q: DiscriminativeMatrix::new(&f.atom_class, &labels),
            class_names: f.class_names,
            gram,
            train_ids: ids,
            train_series: series,
            trace: f.trace,
            test_error_percent: f.test_error_percent,
            metadata: f.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::cli::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn classify_with(
    gram: &GramMatrix,
    dict: &Dictionary,
    h: &LabelMatrix,
    sparsity: usize,
    tol: f64,
    kq: &DMatrix<f64>,
) -> Result<Classification> {
    let coder = Coder::new(gram, dict, sparsity, tol)?;
    // Gaussian kernels have unit self-similarity
    let diag = vec![1.0; kq.nrows()];
    let codes = code_with(&coder, kq, &diag)?;
    let scores = (h.matrix() * dict.matrix() * codes.matrix()).map(|v| (1.0 - v).abs());
    let labels = scores
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for i in 1..col.len() {
                if col[i] < col[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(Classification { labels, codes, scores })
}

struct LcObserver<'a> {
    h: &'a LabelMatrix,
    atom_class: &'a [usize],
    masking: bool,
    gram: &'a GramMatrix,
    test_kernel: Option<(DMatrix<f64>, Vec<usize>)>,
    sparsity: usize,
    tol: f64,
    patience: Option<usize>,
    errors: Vec<f64>,
    rises: usize,
    best: Option<(f64, usize, Dictionary)>,
}

impl TrainObserver for LcObserver<'_> {
    fn shrink_mask(&self, atom: usize, a: &DVector<f64>) -> Option<Vec<bool>> {
        self.masking.then(|| purity_mask(a, self.h, self.atom_class[atom]))
    }

    fn after_epoch(&mut self, record: &EpochRecord, dict: &Dictionary, _codes: &SparseCodeMatrix) -> Result<EpochControl> {
        let Some((kt, truth)) = &self.test_kernel else {
            return Ok(EpochControl::Continue);
        };
        let pred = classify_with(self.gram, dict, self.h, self.sparsity, self.tol, kt)?.labels;
        let err = 100.0 - accuracy(&pred, truth)?;
        if self.errors.last().is_some_and(|&p| err > p) {
            self.rises += 1;
        } else {
            self.rises = 0;
        }
        self.errors.push(err);
        if self.patience.is_some() && self.best.as_ref().is_none_or(|(b, _, _)| err <= *b) {
            self.best = Some((err, record.epoch, dict.clone()));
        }
        Ok(match self.patience {
            Some(p) if self.rises >= p => EpochControl::Stop,
            _ => EpochControl::Continue,
        })
    }
}

/// LC-NNKSC training on the train split, with early stopping on the test
/// split. Computes all pairwise DTW distances first.
pub fn train_lc(ds: &LabeledDataset, split: &SplitAssignment, cfg: &LcConfig) -> Result<LcModel> {
    let dist = distance_matrix(ds.series())?;
    train_lc_with_distances(ds, split, &dist, cfg)
}

/// [`train_lc`] with distances over the whole dataset supplied by the caller.
pub fn train_lc_with_distances(
    ds: &LabeledDataset,
    split: &SplitAssignment,
    dist: &DistanceMatrix,
    cfg: &LcConfig,
) -> Result<LcModel> {
    if dist.len() != ds.len() || split.roles().len() != ds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} series, {} distances, {} split roles",
            ds.len(),
            dist.len(),
            split.roles().len()
        )));
    }
    cfg.train.validate()?;
    let train_idx = split.indices(Role::Train);
    let test_idx = split.indices(Role::Test);
    let n_classes = ds.n_classes();
    let labels: Vec<usize> = train_idx.iter().map(|&i| ds.labels()[i]).collect();
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return Err(Error::ClassTooSmall { class: ds.class_names()[c].clone(), size: 0, needed: 1 });
        }
    }
    let dist_train = dist.select(&train_idx);
    let gram = gram_from_distances(&dist_train, cfg.sigma)?;
    let sigma = gram.sigma();
    let (h, q) = build_label_structures(&labels, n_classes, cfg.train.k)?;
    let kt = augment_kernel(&gram, &h, &q, cfg.alpha, cfg.beta)?;
    let init = init_dictionary(&kt, cfg.train.k, Some((&labels, q.atom_class())), cfg.train.rng_seed)?;

    let test_kernel = if test_idx.is_empty() {
        None
    } else {
        let kt = gaussian_kernel(&dist.block(&test_idx, &train_idx), sigma)?;
        Some((kt, test_idx.iter().map(|&i| ds.labels()[i]).collect::<Vec<_>>()))
    };
    let mut obs = LcObserver {
        h: &h,
        atom_class: q.atom_class(),
        masking: cfg.alpha > 0.0 || cfg.beta > 0.0,
        gram: &gram,
        test_kernel,
        sparsity: cfg.train.sparsity,
        tol: cfg.train.tol,
        patience: cfg.patience,
        errors: Vec::new(),
        rises: 0,
        best: None,
    };
    let out = train_nnksc_with(&kt, &cfg.train, Some(init), &mut obs)?;
    let last_epoch = out.trace.len().saturating_sub(1);
    let (dictionary, best_epoch) = match obs.best.take() {
        Some((_, e, d)) => (d, e),
        None => (out.dictionary, last_epoch),
    };
    let test_kernel = obs.test_kernel.take();
    let errors = std::mem::take(&mut obs.errors);

    let k_train = gaussian_kernel(dist_train.values(), sigma)?;
    let train_cls = classify_with(&gram, &dictionary, &h, cfg.train.sparsity, cfg.train.tol, &k_train)?;
    let train_accuracy = accuracy(&train_cls.labels, &labels)?;
    let kqq = vec![1.0; labels.len()];
    let train_rec = reconstruction_error(&gram, &k_train, &kqq, dictionary.matrix(), train_cls.codes.matrix())?;
    let test_accuracy = match &test_kernel {
        Some((kt, truth)) => {
            let pred = classify_with(&gram, &dictionary, &h, cfg.train.sparsity, cfg.train.tol, kt)?.labels;
            Some(accuracy(&pred, truth)?)
        }
        None => None,
    };

    Ok(LcModel {
        sigma,
        alpha: cfg.alpha,
        beta: cfg.beta,
        sparsity: cfg.train.sparsity,
        tol: cfg.train.tol,
        dictionary,
        h,
        q,
        class_names: ds.class_names().to_vec(),
        gram,
        train_ids: train_idx.iter().map(|&i| ds.ids()[i].clone()).collect(),
        train_series: train_idx.iter().map(|&i| ds.series()[i].clone()).collect(),
        trace: out.trace,
        test_error_percent: errors,
        metadata: ModelMeta {
            seed: cfg.train.rng_seed,
            restart: 0,
            split_seed: None,
            train_accuracy,
            test_accuracy,
            best_epoch,
            train_rec_error_percent: train_rec,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split, SynthConfig, DEFAULT_FRACTIONS};
    use crate::dictionary_learning::{nnk_fista, residual_coefficients, train_nnksc, FistaParams};
    use crate::dtw_gram::psd_clip;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn atom_classes_in_blocks() {
        let (_, q) = build_label_structures(&[0, 0, 1, 1, 2, 2], 3, 6).unwrap();
        assert_eq!(q.atom_class(), &[0, 0, 1, 1, 2, 2]);
        assert_eq!(assign_atom_classes(&[2, 5, 5], 5).unwrap(), vec![0, 1, 1, 2, 2]);
        assert_eq!(assign_atom_classes(&[3, 3], 3).unwrap(), vec![0, 0, 1]);
        assert!(build_label_structures(&[0, 1, 2], 3, 2).is_err());
    }

    #[test]
    fn label_structures_small_cases() {
        let (h, q) = build_label_structures(&[0, 1], 2, 2).unwrap();
        assert_eq!(h.matrix(), &DMatrix::identity(2, 2));
        assert_eq!(q.matrix(), &DMatrix::identity(2, 2));
        let (h, q) = build_label_structures(&[0, 0, 0], 1, 2).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_element(1, 3, 1.0));
        assert_eq!(q.matrix(), &DMatrix::from_element(2, 3, 1.0));

        let labels = [2, 0, 1, 0, 2, 1, 1];
        let (h, q) = build_label_structures(&labels, 3, 5).unwrap();
        for j in 0..labels.len() {
            assert_eq!(h.matrix().column(j).sum(), 1.0);
            assert_eq!(h.matrix()[(labels[j], j)], 1.0);
            for j2 in 0..labels.len() {
                if labels[j] == labels[j2] {
                    assert_eq!(q.matrix().column(j), q.matrix().column(j2));
                }
            }
        }
    }

    fn random_gram(rng: &mut ChaCha8Rng, n: usize) -> GramMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        psd_clip(&(&m + m.transpose())).unwrap()
    }

    #[test]
    fn augmented_kernel_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = [0, 0, 1, 1, 2, 2];
        let g = random_gram(&mut rng, 6);
        let (h, q) = build_label_structures(&labels, 3, 6).unwrap();
        assert_eq!(augment_kernel(&g, &h, &q, 0.0, 0.0).unwrap(), g);
        let kt = augment_kernel(&g, &h, &q, 1.0, 5.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let extra = if labels[i] == labels[j] { 1.0 * 2.0 + 5.0 } else { 0.0 };
                assert!((kt.values()[(i, j)] - g.values()[(i, j)] - extra).abs() < 1e-12);
            }
        }
        assert!(kt.min_eigenvalue() >= -1e-10);
        assert!(augment_kernel(&g, &h, &q, -1.0, 0.0).is_err());
    }

    #[test]
    fn purity_mask_cases() {
        let labels = [0, 0, 1, 1];
        let h = LabelMatrix::new(&labels, 2).unwrap();
        let a = DVector::from_vec(vec![0.0, 0.0, 0.4, 0.1]);
        assert_eq!(purity_mask(&a, &h, 0), vec![true, true, false, false]);
        assert_eq!(purity_mask(&DVector::zeros(4), &h, 1), vec![true, true, false, false]);
        assert_eq!(purity_mask(&DVector::zeros(4), &h, 0), vec![false, false, true, true]);
        let a = DVector::from_vec(vec![0.5, 0.2, 0.3, 0.0]);
        assert_eq!(purity_mask(&a, &h, 1), vec![false, false, true, true]);
        // tie not involving the assigned class goes to the smallest index
        let h3 = LabelMatrix::new(&[0, 1, 2], 3).unwrap();
        let a = DVector::from_vec(vec![0.5, 0.5, 0.1]);
        assert_eq!(dominant_class(&a, &h3, 2), 0);
        assert_eq!(dominant_class(&a, &h3, 1), 1);
    }

    #[test]
    fn masked_entries_never_grow() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = 8;
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let h = LabelMatrix::new(&labels, 2).unwrap();
            let g = random_gram(&mut rng, n);
            let a = DMatrix::from_fn(n, 3, |_, _| rng.random_range(0.0..1.0));
            let x = DMatrix::from_fn(3, n, |_, _| rng.random_range(0.0..1.0));
            let e = residual_coefficients(&x, &a, 0);
            let a0 = a.column(0).into_owned();
            let mask = purity_mask(&a0, &h, 0);
            let out = nnk_fista(g.values(), &e, &x.row(0).transpose(), &a0, 0.3, &FistaParams::default(), Some(&mask))
                .unwrap();
            for i in 0..n {
                if mask[i] {
                    assert!(out.atom[i] <= a0[i] + 1e-12, "masked entry {i} grew");
                }
            }
        }
    }

    #[test]
    fn zero_code_scores_one_and_picks_class_zero() {
        let h = LabelMatrix::new(&[0, 1, 2], 3).unwrap();
        let g = GramMatrix::from_psd(DMatrix::identity(3, 3), 1.0).unwrap();
        let dict = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        let kq = DMatrix::zeros(2, 3);
        let c = classify_with(&g, &dict, &h, 2, 1e-10, &kq).unwrap();
        assert_eq!(c.labels, vec![0, 0]);
        assert!(c.scores.iter().all(|v| *v == 1.0));
        // a query equal to training sample 1 is reconstructed exactly: HAx = e_1
        let kq = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let c = classify_with(&g, &dict, &h, 2, 1e-10, &kq).unwrap();
        assert_eq!(c.labels, vec![1]);
        assert_eq!(c.scores[(1, 0)], 0.0);
    }

    fn small_setup() -> (LabeledDataset, SplitAssignment, DistanceMatrix) {
        let ds = generate_synthetic(&SynthConfig { per_class: 8, base_len: 24, ..SynthConfig::default() }).unwrap();
        let sp = split(&ds, DEFAULT_FRACTIONS, 1).unwrap();
        let dist = distance_matrix(ds.series()).unwrap();
        (ds, sp, dist)
    }

    #[test]
    fn zero_weights_reduce_to_plain_training() {
        let (ds, sp, dist) = small_setup();
        let cfg = LcConfig {
            train: TrainConfig { k: 6, sparsity: 2, epochs: 6, ..TrainConfig::default() },
            alpha: 0.0,
            beta: 0.0,
            sigma: None,
            patience: None,
        };
        let model = train_lc_with_distances(&ds, &sp, &dist, &cfg).unwrap();
        let train_idx = sp.indices(Role::Train);
        let labels: Vec<usize> = train_idx.iter().map(|&i| ds.labels()[i]).collect();
        let gram = gram_from_distances(&dist.select(&train_idx), None).unwrap();
        let (_, q) = build_label_structures(&labels, 3, 6).unwrap();
        let init = init_dictionary(&gram, 6, Some((&labels, q.atom_class())), 0).unwrap();
        let plain = train_nnksc(&gram, &cfg.train, Some(init)).unwrap();
        assert_eq!(model.dictionary().matrix(), plain.dictionary.matrix());
        assert_eq!(model.trace, plain.trace);
    }

    #[test]
    fn model_json_round_trip() {
        let (ds, sp, dist) = small_setup();
        let cfg = LcConfig {
            train: TrainConfig { k: 6, sparsity: 3, epochs: 4, ..TrainConfig::default() },
            ..LcConfig::default()
        };
        let model = train_lc_with_distances(&ds, &sp, &dist, &cfg).unwrap();
        let back = LcModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let val: Vec<TimeSeries> = sp.indices(Role::Validation).iter().map(|&i| ds.series()[i].clone()).collect();
        let a = model.classify(&val).unwrap();
        let b = back.classify(&val).unwrap();
        assert_eq!(a, b);
        assert!(LcModel::from_json("{\"version\": 9}").is_err());
    }

    #[test]
    fn training_queries_classify_to_recorded_accuracy() {
        let (ds, sp, dist) = small_setup();
        let cfg = LcConfig {
            train: TrainConfig { k: 6, sparsity: 3, epochs: 5, ..TrainConfig::default() },
            ..LcConfig::default()
        };
        let model = train_lc_with_distances(&ds, &sp, &dist, &cfg).unwrap();
        let idx = sp.indices(Role::Train);
        let series: Vec<TimeSeries> = idx.iter().map(|&i| ds.series()[i].clone()).collect();
        let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        let pred = model.classify(&series).unwrap().labels;
        assert_eq!(accuracy(&pred, &truth).unwrap(), model.metadata.train_accuracy);
        assert!(model.metadata.best_epoch < model.trace.len());
        assert_eq!(model.test_error_percent.len(), model.trace.len());
    }

    #[test]
    fn single_class_predicts_that_class() {
        let h = LabelMatrix::new(&[0, 0, 0], 1).unwrap();
        let g = GramMatrix::from_psd(DMatrix::identity(3, 3), 1.0).unwrap();
        let dict = Dictionary::new(DMatrix::identity(3, 2).map(|v: f64| v.abs())).unwrap();
        let kq = DMatrix::from_row_slice(2, 3, &[0.2, 0.9, 0.1, 0.0, 0.0, 0.0]);
        let c = classify_with(&g, &dict, &h, 2, 1e-10, &kq).unwrap();
        assert_eq!(c.labels, vec![0, 0]);
    }
}
