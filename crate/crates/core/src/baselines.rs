//! Comparison methods over the same DTW distances and Gram matrix: kNN,
//! kernel k-means prototype codes, kernel PCA projections, and a ridge
//! one-vs-rest linear classifier used on top of the latter two.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dtw_gram::GramMatrix;
use crate::{Error, Result};

/// Majority vote among the `k` nearest training series. Vote ties go to the
/// smaller distance sum, then to the smaller class index.
pub fn knn_classify(d_query: &[f64], labels: &[usize], n_classes: usize, k: usize) -> Result<usize> {
    if d_query.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} distances, {} labels", d_query.len(), labels.len())));
    }
    if k == 0 || k > labels.len() {
        return Err(Error::InvalidArgument(format!("need 1 ≤ k ≤ {}, got {k}", labels.len())));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| d_query[a].total_cmp(&d_query[b]).then(a.cmp(&b)));
    let mut votes = vec![0usize; n_classes];
    let mut sums = vec![0.0; n_classes];
    for &i in &order[..k] {
        let l = labels[i];
        if l >= n_classes {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
        votes[l] += 1;
        sums[l] += d_query[i];
    }
    let best = (0..n_classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| votes[b].cmp(&votes[a]).then(sums[a].total_cmp(&sums[b])).then(a.cmp(&b)))
        .expect("k ≥ 1 neighbours vote");
    Ok(best)
}

/// kNN labels for every row of an `M × N` query-to-train distance matrix.
pub fn knn_predict(d_cross: &DMatrix<f64>, labels: &[usize], n_classes: usize, k: usize) -> Result<Vec<usize>> {
    d_cross
        .row_iter()
        .map(|r| knn_classify(&r.iter().copied().collect::<Vec<_>>(), labels, n_classes, k))
        .collect()
}

/// Hard cluster labels of the training samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    assign: Vec<usize>,
    clusters: usize,
}

impl ClusterAssignment {
    pub fn new(assign: Vec<usize>, clusters: usize) -> Result<Self> {
        if assign.iter().any(|&c| c >= clusters) {
            return Err(Error::InvalidArgument("cluster index out of range".into()));
        }
        Ok(Self { assign, clusters })
    }

    pub fn labels(&self) -> &[usize] {
        &self.assign
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.clusters];
        for &c in &self.assign {
            s[c] += 1;
        }
        s
    }

    /// `E`: `N × M`, column `m` is the indicator of cluster `m` divided by
    /// its size (zero for an empty cluster).
    pub fn e_matrix(&self) -> DMatrix<f64> {
        let sizes = self.sizes();
        DMatrix::from_fn(self.assign.len(), self.clusters, |i, m| {
            if self.assign[i] == m {
                1.0 / sizes[m] as f64
            } else {
                0.0
            }
        })
    }
}

/// Squared feature-space distance of every sample to every cluster mean.
fn kernel_distances(k: &DMatrix<f64>, assign: &ClusterAssignment) -> DMatrix<f64> {
    let e = assign.e_matrix();
    let ke = k * &e;
    let inner = (e.transpose() * &ke).diagonal();
    DMatrix::from_fn(k.nrows(), assign.n_clusters(), |i, m| k[(i, i)] - 2.0 * ke[(i, m)] + inner[m])
}

fn within_cluster_sum(dist: &DMatrix<f64>, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &c)| dist[(i, c)]).sum()
}

/// Kernel k-means with k-means++ seeding. Returns the assignment and the
/// within-cluster objective after seeding and after each Lloyd iteration.
pub fn kernel_kmeans_traced(
    gram: &GramMatrix,
    clusters: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let k = gram.values();
    let n = k.nrows();
    if clusters == 0 || clusters > n {
        return Err(Error::InvalidArgument(format!("need 1 ≤ M ≤ N, got M={clusters}, N={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = |i: usize, j: usize| (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(0.0);

    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| pair(i, centers[0])).collect();
    while centers.len() < clusters {
        let free: Vec<usize> = (0..n).filter(|i| !centers.contains(i)).collect();
        let total: f64 = free.iter().map(|&i| nearest[i]).sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = *free.iter().rev().find(|&&i| nearest[i] > 0.0).expect("positive mass");
            for &i in &free {
                if r < nearest[i] {
                    chosen = i;
                    break;
                }
                r -= nearest[i];
            }
            chosen
        } else {
            free[rng.random_range(0..free.len())]
        };
        centers.push(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(pair(i, pick));
        }
    }
    let mut labels: Vec<usize> = (0..n)
        .map(|i| {
            if let Some(c) = centers.iter().position(|&s| s == i) {
                return c;
            }
            (0..clusters).min_by(|&a, &b| pair(i, centers[a]).total_cmp(&pair(i, centers[b]))).unwrap()
        })
        .collect();

    let mut assign = ClusterAssignment::new(labels.clone(), clusters)?;
    let mut objective = vec![within_cluster_sum(&kernel_distances(k, &assign), &labels)];
    for _ in 0..max_iter {
        let dist = kernel_distances(k, &assign);
        let sizes = assign.sizes();
        let mut next: Vec<usize> = (0..n)
            .map(|i| {
                let cur = labels[i];
                (0..clusters)
                    .filter(|&m| sizes[m] > 0)
                    .fold(cur, |best, m| if dist[(i, m)] < dist[(i, best)] { m } else { best })
            })
            .collect();
        // empty clusters take the point farthest from its own mean
        loop {
            let probe = ClusterAssignment::new(next.clone(), clusters)?;
            let sizes = probe.sizes();
            let Some(empty) = sizes.iter().position(|&s| s == 0) else { break };
            let d = kernel_distances(k, &probe);
            let far = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| d[(a, next[a])].total_cmp(&d[(b, next[b])]).then(b.cmp(&a)))
                .ok_or_else(|| Error::InvalidArgument("cannot fill empty cluster".into()))?;
            next[far] = empty;
        }
        let changed = next != labels;
        labels = next;
        assign = ClusterAssignment::new(labels.clone(), clusters)?;
        objective.push(within_cluster_sum(&kernel_distances(k, &assign), &labels));
        if !changed {
            break;
        }
    }
    Ok((assign, objective))
}

pub fn kernel_kmeans(gram: &GramMatrix, clusters: usize, seed: u64, max_iter: usize) -> Result<ClusterAssignment> {
    kernel_kmeans_traced(gram, clusters, seed, max_iter).map(|(a, _)| a)
}

/// `d_i = diag(EᵀKE) − 2 K(Y_i, 𝒴) E + K(Y_i, Y_i)` for each query row of
/// `kq` (`M' × N`). Returns `M' × M`.
pub fn kkm_distances(
    gram: &GramMatrix,
    kq: &DMatrix<f64>,
    kqq: &[f64],
    assign: &ClusterAssignment,
) -> Result<DMatrix<f64>> {
    let n = gram.len();
    if kq.ncols() != n || kqq.len() != kq.nrows() || assign.labels().len() != n {
        return Err(Error::DimensionMismatch(format!(
            "kq {:?}, {} diagonal entries, {} assignments, N={n}",
            kq.shape(),
            kqq.len(),
            assign.labels().len()
        )));
    }
    let e = assign.e_matrix();
    let inner = (e.transpose() * gram.values() * &e).diagonal();
    let cross = kq * &e;
    Ok(DMatrix::from_fn(kq.nrows(), assign.n_clusters(), |i, m| inner[m] - 2.0 * cross[(i, m)] + kqq[i]))
}

/// Codes from cluster distances: `exp(−d/σ)` with σ the query's mean
/// distance (1 if that is zero), keeping the `T` largest entries.
/// Returns `M × M'` (one column per query).
pub fn kkm_codes(distances: &DMatrix<f64>, sparsity: usize) -> DMatrix<f64> {
    let m = distances.ncols();
    let mut codes = DMatrix::zeros(m, distances.nrows());
    for (q, row) in distances.row_iter().enumerate() {
        let d: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
        let mean = d.iter().sum::<f64>() / m as f64;
        let sigma = if mean > 0.0 { mean } else { 1.0 };
        let s: Vec<f64> = d.iter().map(|v| (-v / sigma).exp()).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        for &j in order.iter().take(sparsity) {
            codes[(j, q)] = s[j];
        }
    }
    codes
}

/// Kernel PCA with the training centering applied to query rows too.
#[derive(Debug, Clone)]
pub struct KernelPca {
    col_means: DVector<f64>,
    total_mean: f64,
    /// `N × M`, eigenvectors divided by `sqrt(λ)`.
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    train: DMatrix<f64>,
}

impl KernelPca {
    /// Top-`dims` components of the double-centered Gram matrix. Components
    /// with eigenvalue ≤ 1e-10·λ_max are dropped (with a warning).
    pub fn fit(gram: &GramMatrix, dims: usize) -> Result<Self> {
        let k = gram.values();
        let n = k.nrows();
        if dims == 0 || dims > n {
            return Err(Error::InvalidArgument(format!("need 1 ≤ M ≤ N, got M={dims}, N={n}")));
        }
        let col_means = DVector::from_fn(n, |j, _| k.column(j).mean());
        let total_mean = col_means.mean();
        let kc = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - col_means[i] - col_means[j] + total_mean);
        let eig = SymmetricEigen::new((&kc + kc.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let keep: Vec<usize> = order.into_iter().take(dims).filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
        if keep.len() < dims {
            log::warn!("kernel PCA: numerical rank {} below requested {dims}; using {}", keep.len(), keep.len());
        }
        if keep.is_empty() {
            return Err(Error::InvalidArgument("centered Gram matrix is zero".into()));
        }
        let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.eigenvalues[i]));
        let basis = DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])] / eigenvalues[c].sqrt());
        let train = &kc * &basis;
        Ok(Self { col_means, total_mean, basis, eigenvalues, train })
    }

    pub fn dims(&self) -> usize {
        self.basis.ncols()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `N × M` training coordinates.
    pub fn train_projection(&self) -> &DMatrix<f64> {
        &self.train
    }

    /// Coordinates of query rows `kq` (`M' × N`).
    pub fn project(&self, kq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.col_means.len();
        if kq.ncols() != n {
            return Err(Error::DimensionMismatch(format!("query rows have {} columns, expected {n}", kq.ncols())));
        }
        let centered = DMatrix::from_fn(kq.nrows(), n, |i, j| {
            kq[(i, j)] - kq.row(i).mean() - self.col_means[j] + self.total_mean
        });
        Ok(centered * &self.basis)
    }
}

/// One-vs-rest ridge regression on ±1 targets with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct RidgeOvr {
    /// `d × C`.
    weights: DMatrix<f64>,
    intercept: DVector<f64>,
}

impl RidgeOvr {
    /// `features` is `N × d`, one sample per row.
    pub fn fit(features: &DMatrix<f64>, labels: &[usize], n_classes: usize, ridge: f64) -> Result<Self> {
        let (n, d) = features.shape();
        if labels.len() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!("{n} samples, {} labels", labels.len())));
        }
        if !(ridge > 0.0) {
            return Err(Error::InvalidArgument("ridge must be positive".into()));
        }
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        let y = DMatrix::from_fn(n, n_classes, |i, c| if labels[i] == c { 1.0 } else { -1.0 });
        let x_mean = DVector::from_fn(d, |j, _| features.column(j).mean());
        let y_mean = DVector::from_fn(n_classes, |c, _| y.column(c).mean());
        let xc = DMatrix::from_fn(n, d, |i, j| features[(i, j)] - x_mean[j]);
        let yc = DMatrix::from_fn(n, n_classes, |i, c| y[(i, c)] - y_mean[c]);
        let mut g = xc.transpose() * &xc;
        for i in 0..d {
            g[(i, i)] += ridge;
        }
        let weights = g.cholesky().ok_or(Error::Singular)?.solve(&(xc.transpose() * yc));
        let intercept = y_mean - weights.transpose() * x_mean;
        Ok(Self { weights, intercept })
    }

    /// `M × C` decision values.
    pub fn decision(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.weights.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} features, expected {}",
                features.ncols(),
                self.weights.nrows()
            )));
        }
        let mut s = features * &self.weights;
        for mut row in s.row_iter_mut() {
            row += self.intercept.transpose();
        }
        Ok(s)
    }

    /// Class with the largest decision value, ties to the smaller index.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<usize>> {
        let s = self.decision(features)?;
        Ok(s.row_iter()
            .map(|r| (1..r.len()).fold(0, |best, c| if r[c] > r[best] { c } else { best }))
            .collect())
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}
