//! DTW distances and the Gaussian Gram matrices built on them.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::dataset::{LabeledDataset, TimeSeries};
use crate::{Error, Result};

/// Classic DTW with squared-Euclidean frame cost, symmetric
/// match/insert/delete steps and no window. Returns the square root of the
/// accumulated cost.
pub fn dtw_distance(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(Error::ChannelMismatch { expected: a.channels(), found: b.channels() });
    }
    Ok(dtw_cost(a, b).sqrt())
}

/// Accumulated squared cost along the optimal warping path.
pub fn dtw_cost(a: &TimeSeries, b: &TimeSeries) -> f64 {
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for fa in a.frames() {
        cur[0] = f64::INFINITY;
        for (j, fb) in b.frames().enumerate() {
            let cost: f64 = fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum();
            cur[j + 1] = cost + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Symmetric matrix of pairwise DTW distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch("distance matrix must be square".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Principal submatrix over `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = indices.len();
        Self { values: DMatrix::from_fn(n, n, |i, j| self.values[(indices[i], indices[j])]) }
    }

    /// Rectangular block `rows × cols`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])])
    }

    /// Mean of the off-diagonal squared distances; the default bandwidth.
    pub fn mean_sq_offdiag(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for j in 0..n {
            for i in 0..j {
                let d = self.values[(i, j)];
                sum += d * d;
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }
}

/// Pairwise DTW over the whole dataset. Cells are computed independently
/// (in parallel) and merged, so the result does not depend on thread count.
pub fn distance_matrix(series: &[TimeSeries]) -> Result<DistanceMatrix> {
    let n = series.len();
    if let Some(s) = series.iter().find(|s| s.channels() != series[0].channels()) {
        return Err(Error::ChannelMismatch { expected: series[0].channels(), found: s.channels() });
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
    let dists: Vec<f64> = pairs.par_iter().map(|&(i, j)| dtw_cost(&series[i], &series[j]).sqrt()).collect();
    let mut values = DMatrix::zeros(n, n);
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[(i, j)] = d;
        values[(j, i)] = d;
    }
    Ok(DistanceMatrix { values })
}

/// Symmetric PSD kernel matrix over a training set together with its
/// Gaussian bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    sigma: f64,
}

impl GramMatrix {
    /// Wraps a matrix that is already symmetric PSD (e.g. a linear kernel).
    /// No clipping is done; `sigma` is informational.
    pub fn from_psd(values: DMatrix<f64>, sigma: f64) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch("Gram matrix must be square".into()));
        }
        Ok(Self { values, sigma })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest eigenvalue (the operator norm, since the matrix is PSD).
    pub fn op_norm(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        SymmetricEigen::new(self.values.clone()).eigenvalues.max().max(0.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        SymmetricEigen::new(self.values.clone()).eigenvalues.min()
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self { values, sigma: self.sigma }
    }
}

/// Elementwise `exp(-d²/σ)`.
pub fn gaussian_kernel(d: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(d.map(|v| (-(v * v) / sigma).exp()))
}

/// Resolves the bandwidth: the explicit value, else the mean off-diagonal
/// squared distance (1 when every distance is zero).
pub fn resolve_sigma(dist: &DistanceMatrix, sigma: Option<f64>) -> Result<f64> {
    match sigma {
        Some(s) if s > 0.0 && s.is_finite() => Ok(s),
        Some(s) => Err(Error::InvalidArgument(format!("sigma must be positive, got {s}"))),
        None => {
            let m = dist.mean_sq_offdiag();
            Ok(if m > 0.0 { m } else { 1.0 })
        }
    }
}

/// Gram matrix from precomputed distances: Gaussian conversion then clipping.
pub fn gram_from_distances(dist: &DistanceMatrix, sigma: Option<f64>) -> Result<GramMatrix> {
    if dist.len() < 2 {
        return Err(Error::InvalidArgument("need at least two series".into()));
    }
    let sigma = resolve_sigma(dist, sigma)?;
    let k = gaussian_kernel(dist.values(), sigma)?;
    let mut g = psd_clip(&k)?;
    g.sigma = sigma;
    Ok(g)
}

/// DTW distances and the clipped Gaussian Gram matrix of a dataset.
pub fn build_gram(ds: &LabeledDataset, sigma: Option<f64>) -> Result<(DistanceMatrix, GramMatrix)> {
    if ds.len() < 2 {
        return Err(Error::InvalidArgument("need at least two series".into()));
    }
    let dist = distance_matrix(ds.series())?;
    let gram = gram_from_distances(&dist, sigma)?;
    Ok((dist, gram))
}

/// Nearest PSD matrix in Frobenius norm: symmetrize, zero the negative
/// eigenvalues, reconstruct.
pub fn psd_clip(k: &DMatrix<f64>) -> Result<GramMatrix> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch("psd_clip needs a square matrix".into()));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite input".into()));
    }
    let sym = (k + k.transpose()) * 0.5;
    if sym.is_empty() {
        return Ok(GramMatrix { values: sym, sigma: 1.0 });
    }
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(GramMatrix { values: sym, sigma: 1.0 });
    }
    let v = &eig.eigenvectors;
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    out = (&out + out.transpose()) * 0.5;
    Ok(GramMatrix { values: out, sigma: 1.0 })
}

/// `M × N` kernel rows `exp(-dtw(query_i, Y_j)²/σ)` against the training
/// series. Not clipped.
pub fn cross_kernel(queries: &[TimeSeries], train: &[TimeSeries], sigma: f64) -> Result<DMatrix<f64>> {
    let d = cross_distances(queries, train)?;
    gaussian_kernel(&d, sigma)
}

/// `M × N` DTW distances from each query to each training series.
pub fn cross_distances(queries: &[TimeSeries], train: &[TimeSeries]) -> Result<DMatrix<f64>> {
    let n = train.len();
    if let Some(t) = train.first() {
        for q in queries {
            if q.channels() != t.channels() {
                return Err(Error::ChannelMismatch { expected: t.channels(), found: q.channels() });
            }
        }
    }
    let cells: Vec<f64> = (0..queries.len() * n)
        .into_par_iter()
        .map(|c| dtw_cost(&queries[c / n], &train[c % n]).sqrt())
        .collect();
    Ok(DMatrix::from_row_slice(queries.len(), n, &cells))
}

const CACHE_MAGIC: &str = "# kdict-distance v1";

/// Writes a distance matrix as CSV preceded by a header line recording the
/// dataset hash and size. Values use shortest round-trip formatting.
pub fn save_distance_cache(path: &Path, dist: &DistanceMatrix, dataset_hash: &str) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{CACHE_MAGIC} hash={dataset_hash} n={}", dist.len())?;
    for i in 0..dist.len() {
        let row: Vec<String> = (0..dist.len()).map(|j| dist.get(i, j).to_string()).collect();
        writeln!(buf, "{}", row.join(","))?;
    }
    crate::cli::write_atomic(path, &buf)
}

/// Reads a cache written by [`save_distance_cache`]; `Ok(None)` when the
/// file is absent or belongs to another dataset.
pub fn load_distance_cache(path: &Path, dataset_hash: &str) -> Result<Option<DistanceMatrix>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Ok(None),
    };
    let bad = |line: usize, msg: &str| Error::Parse { path: path.to_path_buf(), line, msg: msg.to_string() };
    let rest = header.strip_prefix(CACHE_MAGIC).ok_or_else(|| bad(1, "not a distance cache"))?;
    let mut hash = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(h) = tok.strip_prefix("hash=") {
            hash = Some(h.to_string());
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse::<usize>().ok();
        }
    }
    if hash.as_deref() != Some(dataset_hash) {
        return Ok(None);
    }
    let n = n.ok_or_else(|| bad(1, "missing size"))?;
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        let line = lines.next().ok_or_else(|| bad(i + 2, "truncated cache"))??;
        let mut count = 0;
        for (j, tok) in line.split(',').enumerate() {
            if j >= n {
                return Err(bad(i + 2, "too many columns"));
            }
            values[(i, j)] = tok.parse().map_err(|_| bad(i + 2, "bad value"))?;
            count += 1;
        }
        if count != n {
            return Err(bad(i + 2, "too few columns"));
        }
    }
    Ok(Some(DistanceMatrix { values }))
}
