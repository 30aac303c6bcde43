//! Alternating dictionary training for non-negative kernel sparse coding.
//!
//! Each epoch codes every training sample with NN-KOMP, then sweeps the atoms
//! in order `0..k`: the atom's code row is refit on its existing support,
//! the atom itself is refit by NNK-FISTA, and the pair is rescaled so the
//! atom has unit feature-space norm.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dtw_gram::GramMatrix;
use crate::sparse_coding::{code_with, Coder, Dictionary, SparseCodeMatrix, DEFAULT_TOL};
use crate::{Error, Result};

/// Feature-space norms at or below this are treated as dead atoms.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Step-size and stopping parameters of NNK-FISTA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FistaParams {
    /// Backtracking factor in (0, 1).
    pub eta: f64,
    /// Initial step; `None` uses `1 / (2‖K‖‖x‖²)`, the inverse Lipschitz constant.
    pub alpha0: Option<f64>,
    /// Relative objective change (over 5 iterations) that counts as converged.
    pub delta: f64,
    pub max_iter: usize,
}

impl Default for FistaParams {
    fn default() -> Self {
        Self { eta: 0.5, alpha0: None, delta: 1e-6, max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of atoms.
    pub k: usize,
    /// Sparsity limit T per code.
    pub sparsity: usize,
    /// ℓ1 weight on each atom's coefficients.
    pub lambda: f64,
    pub fista: FistaParams,
    /// Maximum number of outer epochs.
    pub epochs: usize,
    /// Stop once the relative objective change of an epoch falls below this.
    pub rel_tol: f64,
    pub rng_seed: u64,
    /// Optimality threshold of the coding solvers.
    pub tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 6,
            sparsity: 4,
            lambda: 0.1,
            fista: FistaParams::default(),
            epochs: 50,
            rel_tol: 1e-4,
            rng_seed: 0,
            tol: DEFAULT_TOL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.k == 0 || self.sparsity == 0 || self.epochs == 0 {
            return bad("k, sparsity and epochs must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.fista.eta > 0.0 && self.fista.eta < 1.0) {
            return bad("fista eta must lie in (0, 1)");
        }
        if self.fista.alpha0.is_some_and(|a| !(a > 0.0)) || !(self.fista.delta > 0.0) || self.fista.max_iter == 0 {
            return bad("fista alpha0, delta and max_iter must be positive");
        }
        if !(self.rel_tol > 0.0) || !(self.tol > 0.0) {
            return bad("rel_tol and tol must be positive");
        }
        Ok(())
    }
}

/// A dead atom re-seeded from the worst-reconstructed training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub atom: usize,
    pub sample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Reconstruction term plus ℓ1 penalty, after the dictionary sweep.
    pub objective: f64,
    /// Reconstruction term after the dictionary sweep, as % of `tr K`.
    pub rec_error_percent: f64,
    /// Reconstruction term right after the coding stage, as % of `tr K`.
    pub coding_error_percent: f64,
    /// Reconstruction term before and after the dictionary sweep.
    pub sweep_before: f64,
    pub sweep_after: f64,
    pub replacements: Vec<Replacement>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `epoch,objective,rec_error_percent,replacements` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["epoch", "objective", "rec_error_percent", "replacements"])?;
        for e in &self.epochs {
            cw.write_record([
                e.epoch.to_string(),
                e.objective.to_string(),
                e.rec_error_percent.to_string(),
                e.replacements.len().to_string(),
            ])?;
        }
        cw.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dictionary: Dictionary,
    /// Codes of the final coding pass against `dictionary`.
    pub codes: SparseCodeMatrix,
    pub trace: TrainTrace,
    /// Reconstruction error of the final coding pass, % of `tr K`.
    pub final_rec_error_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Hooks into the training loop. The label-consistent trainer uses them for
/// class-purity masks and early stopping.
pub trait TrainObserver {
    /// Entries that receive ℓ1 shrinkage when atom `atom` is refit; `None`
    /// shrinks every entry.
    fn shrink_mask(&self, _atom: usize, _a: &DVector<f64>) -> Option<Vec<bool>> {
        None
    }

    fn after_epoch(
        &mut self,
        _record: &EpochRecord,
        _dict: &Dictionary,
        _codes: &SparseCodeMatrix,
    ) -> Result<EpochControl> {
        Ok(EpochControl::Continue)
    }
}

/// Observer that does nothing.
pub struct NoHooks;

impl TrainObserver for NoHooks {}

/// `E_j = I − Σ_{i≠j} a_i x^i`: coefficients of the residual left when atom
/// `j` is removed from the reconstruction.
pub fn residual_coefficients(x: &DMatrix<f64>, a: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut e = DMatrix::identity(n, n) - a * x;
    e.ger(1.0, &a.column(j), &x.row(j).transpose(), 1.0);
    e
}

/// Exact 1-D non-negative refit of each nonzero entry of `x_row`:
/// `x_c = max(a_jᵀK(E_j)_c / a_jᵀKa_j, 0)`. Zero entries stay zero.
pub fn update_code_row(
    k: &DMatrix<f64>,
    e_j: &DMatrix<f64>,
    a_j: &DVector<f64>,
    x_row: &DVector<f64>,
) -> Result<DVector<f64>> {
    let ka = k * a_j;
    let denom = a_j.dot(&ka);
    if !(denom > DEGENERATE_NORM) {
        return Err(Error::DegenerateAtom(0));
    }
    let mut out = DVector::zeros(x_row.len());
    for c in (0..x_row.len()).filter(|&c| x_row[c] != 0.0) {
        out[c] = (e_j.column(c).dot(&ka) / denom).max(0.0);
    }
    Ok(out)
}

/// One-sided shrinkage `τ_l(v) = (v − l)(sign(v − l) + 1)/2 = max(v − l, 0)`.
pub fn shrink(v: f64, l: f64) -> f64 {
    (v - l).max(0.0)
}

/// `f(a) = tr[(E − a xᵀ)ᵀ K (E − a xᵀ)]`, evaluated literally.
pub fn atom_objective(k: &DMatrix<f64>, e: &DMatrix<f64>, x_row: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let r = e - a * x_row.transpose();
    (r.transpose() * k * &r).trace()
}

/// `∇f(a) = −2 K (E − a xᵀ) x`, evaluated literally.
pub fn atom_gradient(k: &DMatrix<f64>, e: &DMatrix<f64>, x_row: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
    let r = e - a * x_row.transpose();
    (k * r * x_row) * -2.0
}

/// The atom subproblem in expanded form `f(a) = c − 2aᵀv + s·aᵀKa`
/// with `v = K E x` and `s = ‖x‖²`.
struct AtomProblem<'a> {
    k: &'a DMatrix<f64>,
    v: DVector<f64>,
    s: f64,
    c: f64,
}

impl<'a> AtomProblem<'a> {
    fn new(k: &'a DMatrix<f64>, e: &DMatrix<f64>, x_row: &DVector<f64>) -> Self {
        let ke = k * e;
        let c = e.component_mul(&ke).sum();
        let v = ke * x_row;
        Self { k, v, s: x_row.norm_squared(), c }
    }

    fn value(&self, a: &DVector<f64>) -> f64 {
        self.c - 2.0 * a.dot(&self.v) + self.s * a.dot(&(self.k * a))
    }

    fn gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        (self.k * a) * (2.0 * self.s) - &self.v * 2.0
    }
}

#[derive(Debug, Clone)]
pub struct FistaOutcome {
    pub atom: DVector<f64>,
    /// `f(atom) + λ·Σ_{shrunk} atom_i`.
    pub objective: f64,
    /// `f(atom)` alone.
    pub smooth: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out before a stopping test fired.
    pub converged: bool,
}

/// NNK-FISTA for `min_a f(a) + λ‖a‖₁, a ≥ 0`.
///
/// Accelerated proximal gradient with backtracking (`α ← η·α` until the
/// quadratic upper bound holds). The prox is the one-sided shrink on entries
/// where `mask` is true (all entries without a mask) and plain projection
/// onto `a ≥ 0` elsewhere.
///
/// FISTA is not monotone, so the best iterate is returned. Only iterates
/// whose smooth part does not exceed `f(a_init)` are eligible; `a_init` is
/// always eligible, so neither the composite nor the reconstruction term
/// can get worse.
pub fn nnk_fista(
    k: &DMatrix<f64>,
    e_j: &DMatrix<f64>,
    x_row: &DVector<f64>,
    a_init: &DVector<f64>,
    lambda: f64,
    params: &FistaParams,
    mask: Option<&[bool]>,
) -> Result<FistaOutcome> {
    let n = k.nrows();
    if a_init.len() != n || x_row.len() != e_j.ncols() || e_j.nrows() != n {
        return Err(Error::DimensionMismatch("nnk_fista operand shapes disagree".into()));
    }
    if mask.is_some_and(|m| m.len() != n) {
        return Err(Error::DimensionMismatch("mask length differs from atom length".into()));
    }
    let prob = AtomProblem::new(k, e_j, x_row);
    if !(prob.s > 0.0) {
        return Err(Error::InvalidArgument("nnk_fista needs a nonzero code row".into()));
    }
    let shrinks = |i: usize| mask.is_none_or(|m| m[i]);
    let penalty = |a: &DVector<f64>| lambda * a.iter().enumerate().filter(|(i, _)| shrinks(*i)).map(|(_, v)| *v).sum::<f64>();
    let prox = |v: &DVector<f64>, step: f64| {
        DVector::from_fn(n, |i, _| if shrinks(i) { shrink(v[i], step * lambda) } else { v[i].max(0.0) })
    };

    let mut alpha = match params.alpha0 {
        Some(a) => a,
        None => {
            let l = GramMatrix::from_psd(k.clone(), 1.0)?.op_norm();
            1.0 / (2.0 * l.max(f64::MIN_POSITIVE) * prob.s)
        }
    };

    let a0 = a_init.map(|v| v.max(0.0));
    let f_init = prob.value(&a0);
    if !f_init.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut best = (a0.clone(), f_init + penalty(&a0), f_init);
    let mut prev = a0.clone();
    let mut y = a0;
    let mut t = 1.0f64;
    let mut history: Vec<f64> = vec![best.1];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        let fy = prob.value(&y);
        let g = prob.gradient(&y);
        let mut next;
        let mut halvings = 0;
        loop {
            next = prox(&(&y - &g * alpha), alpha);
            let d = &next - &y;
            let bound = fy + d.dot(&g) + d.norm_squared() / (2.0 * alpha);
            let fn_ = prob.value(&next);
            if fn_ <= bound + 1e-12 * fy.abs().max(1.0) || halvings >= 60 {
                break;
            }
            alpha *= params.eta;
            halvings += 1;
        }
        let f_next = prob.value(&next);
        if !f_next.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        let composite = f_next + penalty(&next);
        if f_next <= f_init && composite < best.1 {
            best = (next.clone(), composite, f_next);
        }
        history.push(composite);

        if f_next < params.delta {
            converged = true;
            break;
        }
        let h = history.len();
        if h > 5 {
            let old = history[h - 6];
            if (old - composite).abs() <= params.delta * old.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &prev) * ((t - 1.0) / t_next);
        prev = next;
        t = t_next;
    }

    Ok(FistaOutcome { atom: best.0, objective: best.1, smooth: best.2, iterations, converged })
}

/// Scales `a` to unit feature-space norm. Returns the scaled atom and the
/// factor `√(aᵀKa)` by which the atom's code row must be multiplied.
pub fn normalize_atom(k: &DMatrix<f64>, a: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let norm2 = a.dot(&(k * a));
    if !(norm2 > DEGENERATE_NORM) {
        return Err(Error::DegenerateAtom(0));
    }
    let s = norm2.sqrt();
    Ok((a / s, s))
}

/// `tr[(I − AX)ᵀ K (I − AX)]` from kernel quantities.
pub fn reconstruction_term(k: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let ka = k * a;
    let b = a.transpose() * &ka;
    k.trace() - 2.0 * ka.component_mul(&x.transpose()).sum() + x.component_mul(&(b * x)).sum()
}

/// Per-sample squared residuals `K_cc − 2(KA)_c x_c + x_cᵀBx_c`.
pub fn column_residuals(k: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let ka = k * a;
    let bx = (a.transpose() * &ka) * x;
    DVector::from_fn(k.nrows(), |c, _| {
        k[(c, c)] - 2.0 * ka.row(c).transpose().dot(&x.column(c)) + x.column(c).dot(&bx.column(c))
    })
}

fn indicator_atom(gram: &DMatrix<f64>, sample: usize) -> Result<DVector<f64>> {
    let d = gram[(sample, sample)];
    if !(d > DEGENERATE_NORM) {
        return Err(Error::DegenerateAtom(sample));
    }
    let mut a = DVector::zeros(gram.nrows());
    a[sample] = 1.0 / d.sqrt();
    Ok(a)
}

/// Normalized sample indicators as the starting dictionary.
///
/// Without `classes`, `k` distinct samples are drawn uniformly. With
/// `(labels, atom_class)`, atom `j` is drawn from the unused members of class
/// `atom_class[j]`, falling back to any unused sample.
pub fn init_dictionary(
    gram: &GramMatrix,
    k: usize,
    classes: Option<(&[usize], &[usize])>,
    seed: u64,
) -> Result<Dictionary> {
    let n = gram.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 ≤ k ≤ N, got k={k}, N={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = match classes {
        None => rand::seq::index::sample(&mut rng, n, k).into_vec(),
        Some((labels, atom_class)) => {
            if labels.len() != n || atom_class.len() != k {
                return Err(Error::DimensionMismatch("labels or atom classes have the wrong length".into()));
            }
            let mut used = vec![false; n];
            let mut picks = Vec::with_capacity(k);
            for &c in atom_class {
                let mut pool: Vec<usize> = (0..n).filter(|&i| !used[i] && labels[i] == c).collect();
                if pool.is_empty() {
                    pool = (0..n).filter(|&i| !used[i]).collect();
                }
                let i = pool[rng.random_range(0..pool.len())];
                used[i] = true;
                picks.push(i);
            }
            picks
        }
    };
    let mut a = DMatrix::zeros(n, k);
    for (j, &s) in picks.iter().enumerate() {
        a.set_column(j, &indicator_atom(gram.values(), s)?);
    }
    Dictionary::new(a)
}

fn l1_total(a: &DMatrix<f64>) -> f64 {
    a.iter().sum()
}

fn code_training_set(gram: &GramMatrix, a: &DMatrix<f64>, cfg: &TrainConfig) -> Result<SparseCodeMatrix> {
    let dict = Dictionary::new(a.clone())?;
    let coder = Coder::new(gram, &dict, cfg.sparsity, cfg.tol)?;
    let diag: Vec<f64> = gram.values().diagonal().iter().copied().collect();
    code_with(&coder, gram.values(), &diag)
}

/// Trains an NNKSC dictionary on the Gram matrix of the training set.
pub fn train_nnksc(gram: &GramMatrix, cfg: &TrainConfig, init_a: Option<Dictionary>) -> Result<TrainOutput> {
    train_nnksc_with(gram, cfg, init_a, &mut NoHooks)
}

/// [`train_nnksc`] with an observer for shrink masks and epoch control.
pub fn train_nnksc_with(
    gram: &GramMatrix,
    cfg: &TrainConfig,
    init_a: Option<Dictionary>,
    hooks: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = gram.len();
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!("k={} exceeds the {n} training samples", cfg.k)));
    }
    let k = gram.values();
    let trace_k = k.trace();
    if !(trace_k > 0.0) {
        return Err(Error::InvalidArgument("Gram matrix has zero trace".into()));
    }
    let dict = match init_a {
        Some(d) if d.n_samples() == n && d.n_atoms() == cfg.k => d,
        Some(d) => {
            return Err(Error::DimensionMismatch(format!(
                "initial dictionary is {}×{}, expected {n}×{}",
                d.n_samples(),
                d.n_atoms(),
                cfg.k
            )))
        }
        None => init_dictionary(gram, cfg.k, None, cfg.rng_seed)?,
    };
    let mut a = dict.into_matrix();
    let lipschitz = gram.op_norm().max(f64::MIN_POSITIVE);
    let mut trace = TrainTrace::default();
    let mut prev_objective: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let mut codes = code_training_set(gram, &a, cfg)?;
        let coded = reconstruction_term(k, &a, codes.matrix());
        let prev = *prev_objective.get_or_insert(coded + cfg.lambda * l1_total(&a));

        let mut replacements = Vec::new();
        let mut reseeded = vec![false; n];
        for j in 0..cfg.k {
            let x = codes.matrix_mut();
            let e_j = residual_coefficients(x, &a, j);
            let a_j = a.column(j).into_owned();
            let row = x.row(j).transpose();
            let refit = match update_code_row(k, &e_j, &a_j, &row) {
                Ok(r) => Some(r),
                Err(Error::DegenerateAtom(_)) => None,
                Err(e) => return Err(e),
            };
            let updated = refit.and_then(|row| {
                x.set_row(j, &row.transpose());
                if row.iter().all(|v| *v == 0.0) {
                    return None;
                }
                Some(row)
            });
            let mut live = false;
            if let Some(row) = updated {
                let mask = hooks.shrink_mask(j, &a_j);
                let params = FistaParams {
                    alpha0: Some(cfg.fista.alpha0.unwrap_or(1.0 / (2.0 * lipschitz * row.norm_squared()))),
                    ..cfg.fista
                };
                let out = nnk_fista(k, &e_j, &row, &a_j, cfg.lambda, &params, mask.as_deref())?;
                if let Ok((atom, scale)) = normalize_atom(k, &out.atom) {
                    a.set_column(j, &atom);
                    x.set_row(j, &(row * scale).transpose());
                    live = true;
                }
            }
            if !live {
                let residuals = column_residuals(k, &a, x);
                let worst = (0..n)
                    .filter(|&c| !reseeded[c] && k[(c, c)] > DEGENERATE_NORM)
                    .max_by(|&p, &q| residuals[p].total_cmp(&residuals[q]).then(q.cmp(&p)))
                    .ok_or(Error::DegenerateAtom(j))?;
                reseeded[worst] = true;
                a.set_column(j, &indicator_atom(k, worst)?);
                x.set_row(j, &DVector::zeros(n).transpose());
                replacements.push(Replacement { atom: j, sample: worst });
            }
        }

        let after = reconstruction_term(k, &a, codes.matrix());
        let objective = after + cfg.lambda * l1_total(&a);
        let record = EpochRecord {
            epoch,
            objective,
            rec_error_percent: 100.0 * after / trace_k,
            coding_error_percent: 100.0 * coded / trace_k,
            sweep_before: coded,
            sweep_after: after,
            replacements,
        };
        let dict = Dictionary::new(a.clone())?;
        let control = hooks.after_epoch(&record, &dict, &codes)?;
        trace.epochs.push(record);
        if control == EpochControl::Stop {
            break;
        }
        let change = (prev - objective).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev_objective = Some(objective);
        if change < cfg.rel_tol {
            break;
        }
    }

    let codes = code_training_set(gram, &a, cfg)?;
    let final_rec = 100.0 * reconstruction_term(k, &a, codes.matrix()) / trace_k;
    Ok(TrainOutput { dictionary: Dictionary::new(a)?, codes, trace, final_rec_error_percent: final_rec })
}
