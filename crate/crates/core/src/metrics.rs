//! Evaluation measures: accuracy, feature-space reconstruction error,
//! class-based sparsity (SP) and dictionary sparseness (DS).

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dtw_gram::GramMatrix;
use crate::{Error, Result};

/// Code entries above this count as used.
pub const NONZERO: f64 = 1e-12;

/// Percentage of matching labels.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions, {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Relative squared feature-space error of coding `M` queries, in percent:
/// `100·Σ_i (kqq_i − 2x_iᵀAᵀk_i + x_iᵀAᵀKAx_i) / Σ_i kqq_i`.
///
/// `kq` is `M × N` (query rows), `x` is `k × M`.
pub fn reconstruction_error(
    gram: &GramMatrix,
    kq: &DMatrix<f64>,
    kqq: &[f64],
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    let m = kqq.len();
    let n = gram.len();
    if kq.shape() != (m, n) || a.nrows() != n || x.shape() != (a.ncols(), m) {
        return Err(Error::DimensionMismatch(format!(
            "kq {:?}, kqq {m}, A {:?}, X {:?}, N {n}",
            kq.shape(),
            a.shape(),
            x.shape()
        )));
    }
    let denom: f64 = kqq.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("zero total signal energy".into()));
    }
    let z = a.transpose() * kq.transpose();
    let bx = (a.transpose() * gram.values() * a) * x;
    let num = denom - 2.0 * z.component_mul(x).sum() + x.component_mul(&bx).sum();
    Ok(100.0 * num / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Distinct atoms used by each class's codes (absent classes count 0).
    pub per_class: Vec<usize>,
    /// Fewest atoms over the classes present.
    pub best: usize,
    /// Most atoms over the classes present.
    pub worst: usize,
}

/// SP_i: number of atoms with nonzero total usage over class `i`'s codes.
/// `x` is `k × M`, `labels[c]` the class of column `c`.
pub fn class_sparsity(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<SparsityReport> {
    if labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} codes", labels.len(), x.ncols())));
    }
    let mut usage = DMatrix::<f64>::zeros(n_classes, x.nrows());
    let mut present = vec![false; n_classes];
    for (c, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
        present[l] = true;
        for j in 0..x.nrows() {
            usage[(l, j)] += x[(j, c)].abs();
        }
    }
    let per_class: Vec<usize> = (0..n_classes).map(|i| usage.row(i).iter().filter(|v| **v > NONZERO).count()).collect();
    let seen = || per_class.iter().zip(&present).filter(|(_, p)| **p).map(|(s, _)| *s);
    Ok(SparsityReport { best: seen().min().unwrap_or(0), worst: seen().max().unwrap_or(0), per_class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    /// DS_j in percent; `None` for all-zero atoms.
    pub per_atom: Vec<Option<f64>>,
    pub best: Option<f64>,
    pub worst: Option<f64>,
}

/// DS_j = 100·max_i c_i / ‖c‖₁ with class contributions `c = H a_j`.
pub fn dictionary_sparseness(a: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<PurityReport> {
    if h.ncols() != a.nrows() {
        return Err(Error::DimensionMismatch(format!("H is {:?}, A is {:?}", h.shape(), a.shape())));
    }
    let c = h * a;
    let per_atom: Vec<Option<f64>> = c
        .column_iter()
        .enumerate()
        .map(|(j, col)| {
            let l1: f64 = col.iter().map(|v| v.abs()).sum();
            if l1 > 0.0 {
                Some(100.0 * col.max() / l1)
            } else {
                log::warn!("atom {j} is zero; excluded from dictionary sparseness");
                None
            }
        })
        .collect();
    let vals = || per_atom.iter().flatten().copied();
    Ok(PurityReport {
        best: vals().reduce(f64::max),
        worst: vals().reduce(f64::min),
        per_atom,
    })
}

/// One method's row in the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub accuracy_percent: f64,
    pub rec_error_percent: Option<f64>,
    pub sparsity: Option<SparsityReport>,
    pub purity: Option<PurityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub role: String,
    pub samples: usize,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table with accuracy, reconstruction error, bSP/wSP and bDS/wDS.
    pub fn to_text(&self) -> String {
        let dash = || "--".to_string();
        let rows: Vec<[String; 7]> = self
            .methods
            .iter()
            .map(|m| {
                [
                    m.method.clone(),
                    format!("{:.2}", m.accuracy_percent),
                    m.rec_error_percent.map_or_else(dash, |v| format!("{v:.2}")),
                    m.sparsity.as_ref().map_or_else(dash, |s| s.best.to_string()),
                    m.sparsity.as_ref().map_or_else(dash, |s| s.worst.to_string()),
                    m.purity.as_ref().and_then(|p| p.best).map_or_else(dash, |v| format!("{v:.1}")),
                    m.purity.as_ref().and_then(|p| p.worst).map_or_else(dash, |v| format!("{v:.1}")),
                ]
            })
            .collect();
        let header = ["method", "Acc", "Rec.Err", "bSP", "wSP", "bDS", "wDS"].map(String::from);
        let mut widths = header.clone().map(|h| h.chars().count());
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{} split, {} samples", self.role, self.samples);
        for r in std::iter::once(&header).chain(&rows) {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}
