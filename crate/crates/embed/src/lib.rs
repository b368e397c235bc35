//! Dissimilarity embedding and the dataset-level graph.
//!
//! Each image becomes the vector of its distances to a prototype set; images
//! whose pairwise distance is below `tau` are connected, and the adjacency is
//! renormalized as `D̃^{-1/2} (A + I) D̃^{-1/2}`.

use std::collections::BTreeSet;

use grembed_core::{CsrMatrix, DatasetGraph, DistanceMatrix, GraphStats, Matrix, PrototypeSet, Split};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("prototype set is empty")]
    NoPrototypes,
    #[error("prototype id {id} out of range for {n} graphs")]
    PrototypeOutOfRange { id: usize, n: usize },
    #[error("prototype id {id} listed twice")]
    DuplicatePrototype { id: usize },
    #[error("tau must lie in (0, 1], got {0}")]
    Tau(f64),
    #[error("adjacency must be square, symmetric and zero-diagonal")]
    BadAdjacency,
    #[error("dimension mismatch: {what} has {found}, expected {expected}")]
    Dimension { what: &'static str, found: usize, expected: usize },
    #[error("node {0} has no label")]
    MissingLabel(usize),
    #[error("node {node} label {label} outside 0..{num_classes}")]
    LabelRange { node: usize, label: usize, num_classes: usize },
}

/// `X[i][k] = dm[i][prototype_ids[k]]`.
pub fn embed(dm: &DistanceMatrix, prototype_ids: &[usize]) -> Result<Matrix, EmbedError> {
    let n = dm.n();
    if prototype_ids.is_empty() {
        return Err(EmbedError::NoPrototypes);
    }
    let mut seen = BTreeSet::new();
    for &id in prototype_ids {
        if id >= n {
            return Err(EmbedError::PrototypeOutOfRange { id, n });
        }
        if !seen.insert(id) {
            return Err(EmbedError::DuplicatePrototype { id });
        }
    }
    Ok(Matrix::from_fn(n, prototype_ids.len(), |i, k| dm.values[(i, prototype_ids[k])]))
}

/// Prototype ids for the configured prototype set.
pub fn select_prototypes(split: &[Split], set: PrototypeSet) -> Vec<usize> {
    match set {
        PrototypeSet::All => (0..split.len()).collect(),
        PrototypeSet::Train => (0..split.len()).filter(|&i| split[i] == Split::Train).collect(),
    }
}

/// Row-wise zero mean, unit (population) standard deviation; constant rows
/// become zero.
pub fn standardize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    let m = x.cols() as f64;
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / m;
        let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        for v in row.iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// `A[i][j] = 1` iff `i ≠ j` and `dm[i][j] < tau`.
pub fn build_adjacency(dm: &DistanceMatrix, tau: f64) -> Result<CsrMatrix, EmbedError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(EmbedError::Tau(tau));
    }
    let n = dm.n();
    let rows = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && dm.values[(i, j)] < tau).map(|j| (j, 1.0)).collect())
        .collect();
    Ok(CsrMatrix::from_sorted_rows(n, rows))
}

/// `Â(i,j) = (A+I)(i,j) / √(d̃_i d̃_j)` with `d̃` the row sums of `A + I`.
pub fn normalize_adjacency(a: &CsrMatrix) -> Result<CsrMatrix, EmbedError> {
    let n = a.rows();
    if a.cols() != n || !a.is_symmetric() || (0..n).any(|r| a.contains(r, r)) {
        return Err(EmbedError::BadAdjacency);
    }
    let degree: Vec<f64> = (0..n).map(|r| 1.0 + a.row_values(r).iter().sum::<f64>()).collect();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = a.row_iter(i).collect();
            let pos = row.partition_point(|&(c, _)| c < i);
            row.insert(pos, (i, 1.0));
            row.into_iter().map(|(j, v)| (j, v / (degree[i] * degree[j]).sqrt())).collect()
        })
        .collect();
    Ok(CsrMatrix::from_sorted_rows(n, rows))
}

pub fn assemble_dataset_graph(
    features: Matrix,
    adjacency: CsrMatrix,
    normalized: CsrMatrix,
    labels: &[Option<usize>],
    num_classes: usize,
    split: Vec<Split>,
) -> Result<DatasetGraph, EmbedError> {
    let n = adjacency.rows();
    let check = |what, found: usize| if found == n { Ok(()) } else { Err(EmbedError::Dimension { what, found, expected: n }) };
    check("adjacency columns", adjacency.cols())?;
    check("normalized adjacency rows", normalized.rows())?;
    check("normalized adjacency columns", normalized.cols())?;
    check("feature rows", features.rows())?;
    check("labels", labels.len())?;
    check("split tags", split.len())?;
    let mut dense_labels = Vec::with_capacity(n);
    for (node, l) in labels.iter().enumerate() {
        let label = l.ok_or(EmbedError::MissingLabel(node))?;
        if label >= num_classes {
            return Err(EmbedError::LabelRange { node, label, num_classes });
        }
        dense_labels.push(label);
    }
    let stats = GraphStats::compute(&adjacency, &dense_labels, num_classes);
    Ok(DatasetGraph { adjacency, normalized, features, labels: dense_labels, num_classes, split, stats })
}
