//! `kdict` command-line front end.
//!
//! Every option can also be given in a flat TOML file passed with
//! `--config`; keys are the long flag names with `-` replaced by `_`
//! (e.g. `per_class = 20`, `k = "2C"`). Flags override file values and
//! unknown keys are rejected.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{kernel_kmeans, kkm_codes, kkm_distances, knn_predict, KernelPca, RidgeOvr};
use crate::dataset::{
    generate_synthetic, load_dataset, load_dataset_with_classes, split, Format, LabeledDataset, Role,
    SplitAssignment, SynthConfig, DEFAULT_FRACTIONS,
};
use crate::dictionary_learning::{FistaParams, TrainConfig, TrainTrace};
use crate::dtw_gram::{
    distance_matrix, gaussian_kernel, gram_from_distances, load_distance_cache, save_distance_cache, DistanceMatrix,
};
use crate::lc_classifier::{preset, train_lc_with_distances, LcConfig, LcModel};
use crate::metrics::{accuracy, class_sparsity, dictionary_sparseness, reconstruction_error, EvalReport, MethodReport};
use crate::Error;

/// Neighbours used by the kNN baseline.
pub const KNN_K: usize = 3;
/// Ridge penalty of the one-vs-rest classifier behind the k-means and PCA baselines.
pub const RIDGE: f64 = 1e-2;
pub const CACHE_ENV: &str = "KDICT_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "kdict", version, about = "Non-negative kernel sparse coding for time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(Opts),
    /// Compute DTW distances and the Gram matrix of a dataset.
    Gram(Opts),
    /// Train LC-NNKSC with several restarts and keep the best.
    Train(Opts),
    /// Label series with a trained model.
    Classify(Opts),
    /// Compare the model with the baselines on one split.
    Eval(Opts),
}

/// Atom count: a number or a multiple of the class count such as `2C`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum AtomCount {
    Count(usize),
    Expr(String),
}

impl AtomCount {
    pub fn resolve(&self, n_classes: usize) -> Result<usize, CliError> {
        match self {
            Self::Count(k) => Ok(*k),
            Self::Expr(s) => {
                let s = s.trim();
                if let Some(m) = s.strip_suffix(['C', 'c']) {
                    let m: usize = if m.is_empty() { 1 } else { m.parse().map_err(|_| bad_k(s))? };
                    Ok(m * n_classes)
                } else {
                    s.parse().map_err(|_| bad_k(s))
                }
            }
        }
    }
}

fn bad_k(s: &str) -> CliError {
    CliError::Config(format!("invalid atom count {s:?}; use a number or e.g. 2C"))
}

impl std::str::FromStr for AtomCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(s.parse().map(Self::Count).unwrap_or_else(|_| Self::Expr(s.to_string())))
    }
}

/// Options shared by all commands (and the keys of a config file).
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opts {
    /// Flat TOML file with default values for any option.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset file (csv_long or jsonl).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset format; guessed from the extension when absent.
    #[arg(long)]
    pub format: Option<String>,
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Number of atoms, or a class multiple like 2C (default 2C).
    #[arg(long)]
    pub k: Option<AtomCount>,
    /// Sparsity limit T (default 4).
    #[arg(long = "T", alias = "sparsity")]
    pub sparsity: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// (alpha, beta) preset: cmu, cricket, words or squat.
    #[arg(long)]
    pub preset: Option<String>,
    /// Gaussian bandwidth (default: mean squared training distance).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Base training seed; restart r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Consecutive test-error rises before stopping; 0 disables early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,

    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub warp: Option<bool>,
    #[arg(long)]
    pub base_len: Option<usize>,

    /// Split role to evaluate or classify: train, test or validation.
    #[arg(long)]
    pub role: Option<String>,
    /// Write an SVG plot of the training trace (eval; default true).
    #[arg(long)]
    pub plot: Option<bool>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        Opts { config: $flags.config, $($f: $flags.$f.or($file.$f)),* }
    };
}

impl Opts {
    /// Flag values over config-file values.
    pub fn resolve(self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let file: Opts = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(overlay!(
            self, file, out, data, format, model, k, sparsity, lambda, alpha, beta, preset, sigma, seed, restarts,
            split_seed, epochs, rel_tol, patience, eta, alpha0, delta, max_iter, classes, per_class, channels,
            noise_sd, warp, base_len, role, plot
        ))
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let out = self.out.clone().ok_or_else(|| CliError::Config("--out is required".into()))?;
        fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.into()))?;
        Ok(out)
    }

    fn data_path(&self) -> Result<(PathBuf, Format), CliError> {
        let path = self.data.clone().ok_or_else(|| CliError::Config("--data is required".into()))?;
        let format = match &self.format {
            Some(f) => f.parse().map_err(config)?,
            None => Format::from_path(&path)
                .ok_or_else(|| CliError::Config(format!("cannot infer the format of {}", path.display())))?,
        };
        Ok((path, format))
    }

    fn model_path(&self) -> Result<PathBuf, CliError> {
        self.model.clone().ok_or_else(|| CliError::Config("--model is required".into()))
    }

    fn role(&self, default: Role) -> Result<Role, CliError> {
        self.role.as_deref().map_or(Ok(default), |r| r.parse().map_err(config))
    }

    fn synth_config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            classes: self.classes.unwrap_or(d.classes),
            per_class: self.per_class.unwrap_or(d.per_class),
            channels: self.channels.unwrap_or(d.channels),
            noise_sd: self.noise_sd.unwrap_or(d.noise_sd),
            warp: self.warp.unwrap_or(d.warp),
            seed: self.seed.unwrap_or(d.seed),
            base_len: self.base_len.unwrap_or(d.base_len),
        }
    }

    /// Training configuration for a dataset with `n_classes` classes.
    pub fn lc_config(&self, n_classes: usize) -> Result<LcConfig, CliError> {
        let d = LcConfig::default();
        let (mut alpha, mut beta) = (d.alpha, d.beta);
        if let Some(p) = &self.preset {
            (alpha, beta) = preset(p).ok_or_else(|| CliError::Config(format!("unknown preset {p:?}")))?;
        }
        let f = FistaParams::default();
        let t = TrainConfig::default();
        let cfg = LcConfig {
            train: TrainConfig {
                k: self.k.clone().unwrap_or(AtomCount::Expr("2C".into())).resolve(n_classes)?,
                sparsity: self.sparsity.unwrap_or(t.sparsity),
                lambda: self.lambda.unwrap_or(t.lambda),
                fista: FistaParams {
                    eta: self.eta.unwrap_or(f.eta),
                    alpha0: self.alpha0.or(f.alpha0),
                    delta: self.delta.unwrap_or(f.delta),
                    max_iter: self.max_iter.unwrap_or(f.max_iter),
                },
                epochs: self.epochs.unwrap_or(t.epochs),
                rel_tol: self.rel_tol.unwrap_or(t.rel_tol),
                rng_seed: self.seed.unwrap_or(t.rng_seed),
                tol: t.tol,
            },
            alpha: self.alpha.unwrap_or(alpha),
            beta: self.beta.unwrap_or(beta),
            sigma: self.sigma,
            patience: match self.patience {
                Some(0) => None,
                Some(p) => Some(p),
                None => d.patience,
            },
        };
        cfg.train.validate().map_err(config)?;
        if !(cfg.alpha >= 0.0 && cfg.beta >= 0.0) {
            return Err(CliError::Config("alpha and beta must be non-negative".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

fn config(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Input-validation failures map to the configuration exit code.
fn classify_error(e: Error) -> CliError {
    match e {
        Error::ChannelMismatch { .. }
        | Error::UnknownLabel(_)
        | Error::ClassTooSmall { .. }
        | Error::InvalidArgument(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other),
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(o) => cmd_synth(o.resolve()?),
        Command::Gram(o) => cmd_gram(o.resolve()?),
        Command::Train(o) => cmd_train(o.resolve()?),
        Command::Classify(o) => cmd_classify(o.resolve()?),
        Command::Eval(o) => cmd_eval(o.resolve()?),
    }
}

fn load(opts: &Opts) -> Result<LabeledDataset, CliError> {
    let (path, format) = opts.data_path()?;
    load_dataset(&path, format).map_err(classify_error)
}

/// Full pairwise distances, read from and written to `$KDICT_CACHE_DIR`
/// when that is set.
pub fn dataset_distances(ds: &LabeledDataset) -> crate::Result<DistanceMatrix> {
    let Some(dir) = std::env::var_os(CACHE_ENV) else {
        return distance_matrix(ds.series());
    };
    let dir = PathBuf::from(dir);
    let hash = ds.content_hash();
    let path = dir.join(format!("{hash}.dist.csv"));
    if let Some(d) = load_distance_cache(&path, &hash)? {
        log::info!("distance cache hit: {}", path.display());
        return Ok(d);
    }
    let d = distance_matrix(ds.series())?;
    fs::create_dir_all(&dir)?;
    save_distance_cache(&path, &d, &hash)?;
    Ok(d)
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn cmd_synth(opts: Opts) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let ds = generate_synthetic(&opts.synth_config()).map_err(classify_error)?;
    let format = match &opts.format {
        Some(f) => f.parse().map_err(config)?,
        None => Format::Jsonl,
    };
    let name = match format {
        Format::Jsonl => "synthetic.jsonl",
        Format::CsvLong => "synthetic.csv",
    };
    let mut buf = Vec::new();
    crate::dataset::write_dataset(&ds, &mut buf, format)?;
    let path = out.join(name);
    write_atomic(&path, &buf)?;
    println!("wrote {} series to {}", ds.len(), path.display());
    Ok(())
}

fn cmd_gram(opts: Opts) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let ds = load(&opts)?;
    let dist = dataset_distances(&ds)?;
    let gram = gram_from_distances(&dist, opts.sigma).map_err(classify_error)?;
    write_atomic(&out.join("distances.csv"), matrix_csv(dist.values()).as_bytes())?;
    write_atomic(&out.join("gram.csv"), matrix_csv(gram.values()).as_bytes())?;
    println!("N={} sigma={} min_eigenvalue={:e}", ds.len(), gram.sigma(), gram.min_eigenvalue());
    Ok(())
}

/// Restart key: higher test accuracy, then lower reconstruction error, then
/// lower restart index.
fn better(a: &LcModel, b: &LcModel) -> bool {
    let (ta, tb) = (a.metadata.test_accuracy.unwrap_or(0.0), b.metadata.test_accuracy.unwrap_or(0.0));
    if ta != tb {
        return ta > tb;
    }
    let (ra, rb) = (a.metadata.train_rec_error_percent, b.metadata.train_rec_error_percent);
    if ra != rb {
        return ra < rb;
    }
    a.metadata.restart < b.metadata.restart
}

/// Trains `restarts` models with seeds `seed..seed+restarts` on one split and
/// returns the best one.
pub fn train_restarts(
    ds: &LabeledDataset,
    sp: &SplitAssignment,
    split_seed: u64,
    dist: &DistanceMatrix,
    cfg: &LcConfig,
    restarts: usize,
) -> crate::Result<LcModel> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let models: Vec<LcModel> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.train.rng_seed = cfg.train.rng_seed.wrapping_add(r as u64);
            let mut m = train_lc_with_distances(ds, sp, dist, &c)?;
            m.metadata.restart = r;
            m.metadata.split_seed = Some(split_seed);
            Ok(m)
        })
        .collect::<crate::Result<_>>()?;
    let mut best = models.into_iter().reduce(|a, b| if better(&b, &a) { b } else { a }).expect("restarts ≥ 1");
    best.metadata.seed = cfg.train.rng_seed.wrapping_add(best.metadata.restart as u64);
    Ok(best)
}

fn trace_csv(trace: &TrainTrace) -> crate::Result<Vec<u8>> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

fn cmd_train(opts: Opts) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let ds = load(&opts)?;
    let cfg = opts.lc_config(ds.n_classes())?;
    let split_seed = opts.split_seed.unwrap_or(0);
    let sp = split(&ds, DEFAULT_FRACTIONS, split_seed).map_err(classify_error)?;
    let dist = dataset_distances(&ds)?;
    let model = train_restarts(&ds, &sp, split_seed, &dist, &cfg, opts.restarts.unwrap_or(10)).map_err(classify_error)?;
    model.save(&out.join("model.json"))?;
    write_atomic(&out.join("trace.csv"), &trace_csv(&model.trace)?)?;
    let mut roles = String::from("id,role\n");
    for (id, r) in ds.ids().iter().zip(sp.roles()) {
        let name = match r {
            Role::Train => "train",
            Role::Test => "test",
            Role::Validation => "validation",
        };
        let _ = writeln!(roles, "{id},{name}");
    }
    write_atomic(&out.join("split.csv"), roles.as_bytes())?;
    println!(
        "restart {} (seed {}): train accuracy {:.2}%, test accuracy {}, best epoch {}",
        model.metadata.restart,
        model.metadata.seed,
        model.metadata.train_accuracy,
        model.metadata.test_accuracy.map_or("n/a".into(), |a| format!("{a:.2}%")),
        model.metadata.best_epoch
    );
    Ok(())
}

/// Loads the model and the dataset with the model's class names, checking
/// the channel count.
fn load_for_model(opts: &Opts) -> Result<(LcModel, LabeledDataset), CliError> {
    let model = LcModel::load(&opts.model_path()?)?;
    let (path, format) = opts.data_path()?;
    let ds = load_dataset_with_classes(&path, format, model.class_names()).map_err(classify_error)?;
    if ds.channels() != model.channels() {
        return Err(classify_error(Error::ChannelMismatch { expected: model.channels(), found: ds.channels() }));
    }
    Ok((model, ds))
}

fn role_indices(opts: &Opts, model: &LcModel, ds: &LabeledDataset, role: Role) -> Result<Vec<usize>, CliError> {
    let seed = opts
        .split_seed
        .or(model.metadata.split_seed)
        .ok_or_else(|| CliError::Config("--split-seed is required for this model".into()))?;
    let sp = split(ds, DEFAULT_FRACTIONS, seed).map_err(classify_error)?;
    Ok(sp.indices(role))
}

fn cmd_classify(opts: Opts) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let (model, ds) = load_for_model(&opts)?;
    let idx = match &opts.role {
        Some(_) => role_indices(&opts, &model, &ds, opts.role(Role::Validation)?)?,
        None => (0..ds.len()).collect(),
    };
    let series: Vec<_> = idx.iter().map(|&i| ds.series()[i].clone()).collect();
    let res = model.classify(&series).map_err(classify_error)?;
    let names = model.class_names();
    let mut csv = String::from("id,label,predicted");
    for n in names {
        let _ = write!(csv, ",score_{n}");
    }
    csv.push('\n');
    for (q, &i) in idx.iter().enumerate() {
        let _ = write!(csv, "{},{},{}", ds.ids()[i], names[ds.labels()[i]], names[res.labels[q]]);
        for c in 0..names.len() {
            let _ = write!(csv, ",{}", res.scores[(c, q)]);
        }
        csv.push('\n');
    }
    write_atomic(&out.join("predictions.csv"), csv.as_bytes())?;
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
    println!("accuracy {:.2}% on {} series", accuracy(&res.labels, &truth)?, idx.len());
    Ok(())
}

/// Evaluation of the model and the baselines on `eval_idx`, training the
/// baselines on the model's training indices.
pub fn evaluate(
    model: &LcModel,
    ds: &LabeledDataset,
    dist: &DistanceMatrix,
    train_idx: &[usize],
    eval_idx: &[usize],
    role: &str,
) -> crate::Result<EvalReport> {
    if eval_idx.is_empty() {
        return Err(Error::InvalidArgument(format!("the {role} split is empty")));
    }
    let sigma = model.sigma;
    let gram = model.gram();
    let c = ds.n_classes();
    let k = model.dictionary().n_atoms();
    let t = model.sparsity;
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| ds.labels()[i]).collect();
    let truth: Vec<usize> = eval_idx.iter().map(|&i| ds.labels()[i]).collect();
    let kq = gaussian_kernel(&dist.block(eval_idx, train_idx), sigma)?;
    let k_train = gaussian_kernel(&dist.block(train_idx, train_idx), sigma)?;
    let ones_eval = vec![1.0; eval_idx.len()];
    let ones_train = vec![1.0; train_idx.len()];

    let lc = model.classify_kernel(&kq)?;
    let lc_row = MethodReport {
        method: "LC-NNKSC".into(),
        accuracy_percent: accuracy(&lc.labels, &truth)?,
        rec_error_percent: Some(reconstruction_error(gram, &kq, &ones_eval, model.dictionary().matrix(), lc.codes.matrix())?),
        sparsity: Some(class_sparsity(lc.codes.matrix(), &truth, c)?),
        purity: Some(dictionary_sparseness(model.dictionary().matrix(), model.label_matrix().matrix())?),
    };

    let knn = knn_predict(&dist.block(eval_idx, train_idx), &train_labels, c, KNN_K.min(train_idx.len()))?;
    let knn_row = MethodReport {
        method: format!("kNN (k={KNN_K})"),
        accuracy_percent: accuracy(&knn, &truth)?,
        rec_error_percent: None,
        sparsity: None,
        purity: None,
    };

    let clusters = kernel_kmeans(gram, k, model.metadata.seed, 100)?;
    let train_codes = kkm_codes(&kkm_distances(gram, &k_train, &ones_train, &clusters)?, t);
    let eval_codes = kkm_codes(&kkm_distances(gram, &kq, &ones_eval, &clusters)?, t);
    let ridge = RidgeOvr::fit(&train_codes.transpose(), &train_labels, c, RIDGE)?;
    let kkm_row = MethodReport {
        method: "K-means+ridge".into(),
        accuracy_percent: accuracy(&ridge.predict(&eval_codes.transpose())?, &truth)?,
        rec_error_percent: None,
        sparsity: Some(class_sparsity(&eval_codes, &truth, c)?),
        purity: None,
    };

    let pca = KernelPca::fit(gram, k.min(train_idx.len()))?;
    let ridge = RidgeOvr::fit(pca.train_projection(), &train_labels, c, RIDGE)?;
    let pca_row = MethodReport {
        method: "K-PCA+ridge".into(),
        accuracy_percent: accuracy(&ridge.predict(&pca.project(&kq)?)?, &truth)?,
        rec_error_percent: None,
        sparsity: None,
        purity: None,
    };

    Ok(EvalReport { role: role.to_string(), samples: eval_idx.len(), methods: vec![lc_row, knn_row, kkm_row, pca_row] })
}

/// Line plot of the per-epoch reconstruction error (and test error when
/// recorded).
pub fn trace_svg(trace: &TrainTrace, test_error: &[f64]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let rec: Vec<f64> = trace.epochs.iter().map(|e| e.rec_error_percent).collect();
    let series: Vec<(&str, &str, &[f64])> = vec![("rec. error %", "#1f77b4", &rec), ("test error %", "#d62728", test_error)];
    let n = rec.len().max(test_error.len()).max(2);
    let ymax = rec.iter().chain(test_error).fold(1.0f64, |m, v| m.max(*v)) * 1.05;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / ymax;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{ymax:.1}</text>"#, pad - 4.0, pad + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">0</text>"#, pad - 4.0, h - pad + 4.0);
    for (k, (label, color, vals)) in series.iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        let pts: Vec<String> = vals.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = pad + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="12" fill="{color}" text-anchor="end">{label}</text>"#, w - pad);
    }
    s.push_str("</svg>\n");
    s
}

fn cmd_eval(opts: Opts) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let (model, ds) = load_for_model(&opts)?;
    let role = opts.role(Role::Validation)?;
    let train_idx = role_indices(&opts, &model, &ds, Role::Train)?;
    if train_idx.len() != model.train_series().len()
        || train_idx.iter().zip(model.train_series()).any(|(&i, s)| &ds.series()[i] != s)
    {
        return Err(CliError::Config(format!(
            "the dataset's training split ({} series) does not match the model's training set",
            train_idx.len()
        )));
    }
    let eval_idx = role_indices(&opts, &model, &ds, role)?;
    let dist = dataset_distances(&ds)?;
    let name = match role {
        Role::Train => "train",
        Role::Test => "test",
        Role::Validation => "validation",
    };
    let report = evaluate(&model, &ds, &dist, &train_idx, &eval_idx, name).map_err(classify_error)?;
    let mut json = report.to_json()?;
    json.push('\n');
    write_atomic(&out.join("report.json"), json.as_bytes())?;
    let text = report.to_text();
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    if opts.plot.unwrap_or(true) {
        write_atomic(&out.join("trace.svg"), trace_svg(&model.trace, &model.test_error_percent).as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_count_forms() {
        assert_eq!(AtomCount::Expr("2C".into()).resolve(3).unwrap(), 6);
        assert_eq!(AtomCount::Expr("C".into()).resolve(4).unwrap(), 4);
        assert_eq!("7".parse::<AtomCount>().unwrap().resolve(3).unwrap(), 7);
        assert!(AtomCount::Expr("xC".into()).resolve(3).is_err());
    }

    #[test]
    fn config_file_overlay_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "k = \"2C\"\nsparsity = 3\nalpha = 0.5\nrestarts = 2\n").unwrap();
        let flags = Opts { config: Some(path.clone()), alpha: Some(2.0), ..Opts::default() };
        let o = flags.resolve().unwrap();
        assert_eq!(o.sparsity, Some(3));
        assert_eq!(o.alpha, Some(2.0));
        assert_eq!(o.restarts, Some(2));
        let cfg = o.lc_config(3).unwrap();
        assert_eq!(cfg.train.k, 6);
        assert_eq!(cfg.beta, 5.0);

        fs::write(&path, "bogus = 1\n").unwrap();
        let err = Opts { config: Some(path), ..Opts::default() }.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn presets_and_patience() {
        let o = Opts { preset: Some("cricket".into()), patience: Some(0), ..Opts::default() };
        let cfg = o.lc_config(2).unwrap();
        assert_eq!((cfg.alpha, cfg.beta), (0.5, 1.0));
        assert_eq!(cfg.patience, None);
        assert!(Opts { preset: Some("nope".into()), ..Opts::default() }.lc_config(2).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn svg_is_well_formed() {
        let s = trace_svg(&TrainTrace::default(), &[10.0, 5.0]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    }
}
