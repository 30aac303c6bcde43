//! Non-negative sparse codes in feature space: K-NNLS and NN-KOMP.
//!
//! Everything is expressed through kernel quantities. For a dictionary
//! `Φ(𝒴)A` and a query `Y` only two objects are needed:
//! the atom Gram `B = AᵀK A` and the atom correlations `z = Aᵀ K(𝒴, Y)`.
//! The squared feature-space residual of a code `x` is then
//! `K(Y,Y) − 2 xᵀz + xᵀBx`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dtw_gram::GramMatrix;
use crate::{Error, Result};

/// Default threshold for optimality tests in the active-set and greedy loops.
pub const DEFAULT_TOL: f64 = 1e-10;

const RIDGE: f64 = 1e-10;

/// Non-negative `N × k` combination weights; atom `j` is `Φ(𝒴) a_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    a: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.ncols() == 0 {
            return Err(Error::InvalidArgument("dictionary needs at least one atom".into()));
        }
        if let Some(v) = a.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("dictionary entries must be finite and non-negative, found {v}")));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.a
    }

    pub fn n_atoms(&self) -> usize {
        self.a.ncols()
    }

    /// Number of training samples the atoms are built from.
    pub fn n_samples(&self) -> usize {
        self.a.nrows()
    }

    /// Feature-space Gram of the atoms, `AᵀKA`.
    pub fn atom_gram(&self, gram: &GramMatrix) -> DMatrix<f64> {
        let ka = gram.values() * &self.a;
        let b = self.a.transpose() * ka;
        (&b + b.transpose()) * 0.5
    }
}

/// A non-negative code with its selected support, in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub x: DVector<f64>,
    pub support: Vec<usize>,
}

impl SparseCode {
    pub fn nnz(&self) -> usize {
        self.x.iter().filter(|v| **v != 0.0).count()
    }
}

/// `k × M` matrix of codes, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeMatrix {
    x: DMatrix<f64>,
}

impl SparseCodeMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("codes must be finite and non-negative".into()));
        }
        Ok(Self { x })
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        Self { x: DMatrix::zeros(k, m) }
    }

    pub fn from_codes(k: usize, codes: &[SparseCode]) -> Self {
        let mut x = DMatrix::zeros(k, codes.len());
        for (c, code) in codes.iter().enumerate() {
            x.set_column(c, &code.x);
        }
        Self { x }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.x
    }

    pub fn n_atoms(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    /// Largest per-column count of nonzeros.
    pub fn max_column_nnz(&self) -> usize {
        self.x.column_iter().map(|c| c.iter().filter(|v| **v != 0.0).count()).max().unwrap_or(0)
    }
}

/// Solves `B s = z` for SPD `B` by Cholesky, retrying with a `1e-10·I`
/// ridge when the factorization fails.
fn solve_spd(b: DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.nrows();
    let s = match b.clone().cholesky() {
        Some(ch) => ch.solve(z),
        None => (b + DMatrix::identity(n, n) * RIDGE).cholesky().ok_or(Error::Singular)?.solve(z),
    };
    if s.iter().all(|v| v.is_finite()) {
        Ok(s)
    } else {
        Err(Error::Singular)
    }
}

fn restrict(b: &DMatrix<f64>, z: &DVector<f64>, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let bp = DMatrix::from_fn(idx.len(), idx.len(), |i, j| b[(idx[i], idx[j])]);
    let zp = DVector::from_fn(idx.len(), |i, _| z[idx[i]]);
    (bp, zp)
}

/// Lawson–Hanson active-set NNLS in normal-equation form:
/// `min_x xᵀBx − 2zᵀx` subject to `x ≥ 0`.
///
/// `w = z − Bx` is the negative half-gradient. The loop stops when the
/// inactive set is empty or its largest `w` is at most `tol`. Each outer and
/// inner loop is capped at `3·n` passes to catch cycling.
pub fn active_set_nnls(b: &DMatrix<f64>, z: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = z.len();
    if b.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("B is {:?}, z has length {n}", b.shape())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let cap = 3 * n.max(1);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut w = z.clone();
    let mut outer = 0;

    loop {
        let candidate = (0..n)
            .filter(|&i| !passive[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if w[b] >= w[i] => Some(b),
                _ => Some(i),
            });
        let j = match candidate {
            Some(j) if w[j] > tol => j,
            _ => break,
        };
        outer += 1;
        if outer > cap {
            return Err(Error::IterationCap(cap));
        }
        passive[j] = true;

        let mut inner = 0;
        loop {
            let p: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let (bp, zp) = restrict(b, z, &p);
            let s = solve_spd(bp, &zp)?;
            if s.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in p.iter().enumerate() {
                    x[i] = s[k];
                }
                break;
            }
            if inner == 0 && x[j] == 0.0 && s[p.iter().position(|&i| i == j).unwrap()] <= 0.0 {
                // the entering variable is rejected by its own solve: w[j] > tol
                // was rounding noise, so x is already optimal
                passive[j] = false;
                return Ok(x);
            }
            inner += 1;
            if inner > cap {
                return Err(Error::IterationCap(cap));
            }
            let mut alpha = f64::INFINITY;
            let mut leaving = p[0];
            for (k, &i) in p.iter().enumerate() {
                if s[k] <= 0.0 {
                    let a = x[i] / (x[i] - s[k]);
                    if a < alpha {
                        alpha = a;
                        leaving = i;
                    }
                }
            }
            for (k, &i) in p.iter().enumerate() {
                x[i] += alpha * (s[k] - x[i]);
            }
            for &i in &p {
                if i == leaving || x[i] <= 0.0 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
        w = z - b * &x;
    }
    Ok(x)
}

/// Largest KKT violation of `x` for `min xᵀBx − 2zᵀx, x ≥ 0`: stationarity
/// on the positive entries and dual feasibility on the zero entries.
pub fn kkt_residual(b: &DMatrix<f64>, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let w = z - b * x;
    x.iter()
        .zip(w.iter())
        .map(|(&xi, &wi)| {
            if xi < 0.0 {
                f64::INFINITY
            } else if xi > 0.0 {
                wi.abs()
            } else {
                wi.max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// K-NNLS: non-negative least squares fit of `Φ(Y)` by the atoms `Φ(𝒴)A_I`
/// using only `k_row = K(Y, 𝒴)` and the Gram matrix.
pub fn k_nnls(k_row: &DVector<f64>, gram: &GramMatrix, a_sub: &DMatrix<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = gram.len();
    if k_row.len() != n || a_sub.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "kernel row {}, Gram {n}, restricted dictionary {} rows",
            k_row.len(),
            a_sub.nrows()
        )));
    }
    let b = a_sub.transpose() * (gram.values() * a_sub);
    let b = (&b + b.transpose()) * 0.5;
    let z = a_sub.transpose() * k_row;
    active_set_nnls(&b, &z, tol)
}

/// Precomputed coding state for one (Gram, dictionary) pair.
#[derive(Debug, Clone)]
pub struct Coder {
    a: DMatrix<f64>,
    atom_gram: DMatrix<f64>,
    sparsity: usize,
    tol: f64,
}

impl Coder {
    pub fn new(gram: &GramMatrix, dict: &Dictionary, sparsity: usize, tol: f64) -> Result<Self> {
        if dict.n_samples() != gram.len() {
            return Err(Error::DimensionMismatch(format!(
                "dictionary has {} rows, Gram is {}×{}",
                dict.n_samples(),
                gram.len(),
                gram.len()
            )));
        }
        if sparsity == 0 {
            return Err(Error::InvalidArgument("sparsity limit T must be at least 1".into()));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(Self { a: dict.matrix().clone(), atom_gram: dict.atom_gram(gram), sparsity, tol })
    }

    pub fn atom_gram(&self) -> &DMatrix<f64> {
        &self.atom_gram
    }

    /// Atom correlations `Aᵀ K(𝒴, Y)` for one kernel row.
    pub fn correlations(&self, k_row: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * k_row
    }

    /// Squared feature-space residual `kqq − 2xᵀz + xᵀBx`.
    pub fn residual(&self, z: &DVector<f64>, kqq: f64, x: &DVector<f64>) -> f64 {
        kqq - 2.0 * x.dot(z) + x.dot(&(&self.atom_gram * x))
    }

    pub fn code(&self, k_row: &DVector<f64>, kqq: f64) -> Result<SparseCode> {
        self.code_traced(k_row, kqq).map(|(c, _)| c)
    }

    /// NN-KOMP. Also returns the residual energy after each greedy step,
    /// starting with the empty code.
    pub fn code_traced(&self, k_row: &DVector<f64>, kqq: f64) -> Result<(SparseCode, Vec<f64>)> {
        if k_row.len() != self.a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "kernel row has {} entries, expected {}",
                k_row.len(),
                self.a.nrows()
            )));
        }
        let z = self.correlations(k_row);
        self.code_correlations(&z, kqq)
    }

    fn code_correlations(&self, z: &DVector<f64>, kqq: f64) -> Result<(SparseCode, Vec<f64>)> {
        let k = z.len();
        let mut x = DVector::zeros(k);
        let mut selected: Vec<usize> = Vec::with_capacity(self.sparsity.min(k));
        let mut in_support = vec![false; k];
        let mut trace = vec![kqq];

        while selected.len() < self.sparsity {
            let bx = &self.atom_gram * &x;
            let mut best: Option<(usize, f64)> = None;
            for i in (0..k).filter(|&i| !in_support[i]) {
                let tau = (z[i] - bx[i]).max(0.0);
                if best.is_none_or(|(_, t)| tau > t) {
                    best = Some((i, tau));
                }
            }
            let Some((i_max, tau)) = best else { break };
            if tau <= self.tol {
                break;
            }
            selected.push(i_max);
            in_support[i_max] = true;
            let (bs, zs) = restrict(&self.atom_gram, z, &selected);
            let xs = active_set_nnls(&bs, &zs, self.tol)?;
            x.fill(0.0);
            for (s, &i) in selected.iter().enumerate() {
                x[i] = xs[s];
            }
            trace.push(self.residual(z, kqq, &x));
        }
        Ok((SparseCode { x, support: selected }, trace))
    }
}

/// NN-KOMP for a single query: greedy selection of the atom with the largest
/// positive residual correlation, refit by K-NNLS, until `T` atoms are
/// selected or no atom correlates positively beyond `tol`.
pub fn nn_komp(
    k_row: &DVector<f64>,
    kqq: f64,
    gram: &GramMatrix,
    dict: &Dictionary,
    sparsity: usize,
    tol: f64,
) -> Result<SparseCode> {
    Coder::new(gram, dict, sparsity, tol)?.code(k_row, kqq)
}

/// Codes every row of `k_cross` (`M × N`, one query per row) independently.
/// `diag[i]` is `K(Y_i, Y_i)`. Returns a `k × M` code matrix.
pub fn code_dataset(
    k_cross: &DMatrix<f64>,
    diag: &[f64],
    gram: &GramMatrix,
    dict: &Dictionary,
    sparsity: usize,
    tol: f64,
) -> Result<SparseCodeMatrix> {
    let coder = Coder::new(gram, dict, sparsity, tol)?;
    code_with(&coder, k_cross, diag)
}

pub(crate) fn code_with(coder: &Coder, k_cross: &DMatrix<f64>, diag: &[f64]) -> Result<SparseCodeMatrix> {
    if diag.len() != k_cross.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} queries but {} diagonal entries",
            k_cross.nrows(),
            diag.len()
        )));
    }
    if k_cross.nrows() > 0 && k_cross.ncols() != coder.a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "cross kernel has {} columns, expected {}",
            k_cross.ncols(),
            coder.a.nrows()
        )));
    }
    let z_all = coder.a.transpose() * k_cross.transpose();
    let codes: Vec<SparseCode> = (0..k_cross.nrows())
        .into_par_iter()
        .map(|i| {
            coder
                .code_correlations(&z_all.column(i).into_owned(), diag[i])
                .map(|(c, _)| c)
                .map_err(|e| Error::Coding { index: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    Ok(SparseCodeMatrix::from_codes(coder.a.ncols(), &codes))
}
