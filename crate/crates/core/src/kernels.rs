//! WL feature maps, the WLOA kernel and its unary feature map, Gram matrices.
//!
//! Iterations always run over `t = 0..=T`, so a horizon of `T` yields `T + 1`
//! histogram blocks.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::refinement::{refine, refine_plain, Color, ColoringTrace, Horizon, RefineError};
use crate::subgraph::{label_f_collection, PatternSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("features come from different collections ({0} and {1})")]
    CollectionMismatch(u64, u64),
    #[error("features of kinds {0:?} and {1:?} cannot be combined")]
    KindMismatch(FeatureKind, FeatureKind),
    #[error("features with horizons {0} and {1} cannot be combined")]
    HorizonMismatch(usize, usize),
    #[error("cannot normalize the zero vector")]
    ZeroVector,
    #[error("empty collection")]
    EmptyCollection,
    #[error("diagonal entry {0} is zero, cosine normalization undefined")]
    ZeroDiagonal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    WlCount,
    WlNormalized,
    WloaUnary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Wl,
    Wloa,
}

/// Coordinate of a feature vector: iteration, color, and the unary slot
/// `1..=count` for WLOA features (0 otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub iteration: u32,
    pub color: Color,
    pub slot: u32,
}

/// Sparse feature vector with entries sorted by key.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeature {
    collection: u64,
    kind: FeatureKind,
    horizon: usize,
    entries: Vec<(FeatureKey, f64)>,
}

impl SparseFeature {
    pub fn collection(&self) -> u64 {
        self.collection
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn entries(&self) -> &[(FeatureKey, f64)] {
        &self.entries
    }

    pub fn get(&self, key: FeatureKey) -> f64 {
        self.entries
            .binary_search_by(|(k, _)| k.cmp(&key))
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, x)| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    fn compatible(&self, other: &Self) -> Result<(), KernelError> {
        if self.collection != other.collection {
            return Err(KernelError::CollectionMismatch(self.collection, other.collection));
        }
        if self.kind != other.kind {
            return Err(KernelError::KindMismatch(self.kind, other.kind));
        }
        if self.horizon != other.horizon {
            return Err(KernelError::HorizonMismatch(self.horizon, other.horizon));
        }
        Ok(())
    }

    /// Sparse inner product.
    pub fn dot(&self, other: &Self) -> Result<f64, KernelError> {
        self.compatible(other)?;
        Ok(merge_dot(&self.entries, &other.entries))
    }

    pub fn distance_sq(&self, other: &Self) -> Result<f64, KernelError> {
        self.compatible(other)?;
        let mut total = 0.0;
        merge(&self.entries, &other.entries, |a, b| total += (a - b) * (a - b));
        Ok(total)
    }
}

fn merge(a: &[(FeatureKey, f64)], b: &[(FeatureKey, f64)], mut visit: impl FnMut(f64, f64)) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ord = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.cmp(&y.0),
            (Some(_), None) => Ordering::Less,
            _ => Ordering::Greater,
        };
        match ord {
            Ordering::Less => {
                visit(a[i].1, 0.0);
                i += 1;
            }
            Ordering::Greater => {
                visit(0.0, b[j].1);
                j += 1;
            }
            Ordering::Equal => {
                visit(a[i].1, b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
}

fn merge_dot(a: &[(FeatureKey, f64)], b: &[(FeatureKey, f64)]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                total += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    total
}

/// Runs refinement over `graphs`, seeded with subgraph labels when `patterns`
/// is given.
pub fn build_trace(
    graphs: &[Graph],
    patterns: Option<&PatternSet>,
    horizon: Horizon,
) -> ColoringTrace {
    match patterns {
        None => refine_plain(graphs, horizon),
        Some(fs) => refine(graphs, &label_f_collection(graphs, fs), horizon)
            .expect("subgraph labels match the graphs"),
    }
}

/// Concatenated color histograms of graph `g` for iterations `0..=t_max`.
pub fn wl_feature(trace: &ColoringTrace, g: usize, t_max: usize) -> Result<SparseFeature, KernelError> {
    trace.check_iteration(t_max)?;
    let mut entries = Vec::new();
    for t in 0..=t_max {
        for (c, k) in trace.histogram(g, t)? {
            entries.push((
                FeatureKey {
                    iteration: t as u32,
                    color: c,
                    slot: 0,
                },
                f64::from(k),
            ));
        }
    }
    Ok(SparseFeature {
        collection: trace.collection(),
        kind: FeatureKind::WlCount,
        horizon: t_max,
        entries,
    })
}

/// Scales `f` to unit Euclidean norm.
pub fn normalize(f: &SparseFeature) -> Result<SparseFeature, KernelError> {
    let norm = f.norm();
    if norm == 0.0 {
        return Err(KernelError::ZeroVector);
    }
    Ok(SparseFeature {
        kind: FeatureKind::WlNormalized,
        entries: f.entries.iter().map(|&(k, x)| (k, x / norm)).collect(),
        ..f.clone()
    })
}

pub fn k_wl(a: &SparseFeature, b: &SparseFeature) -> Result<f64, KernelError> {
    a.dot(b)
}

/// Histogram intersection `sum_t sum_c min(count_g(t, c), count_h(t, c))`.
pub fn k_wloa(trace: &ColoringTrace, g: usize, h: usize, t_max: usize) -> Result<u64, KernelError> {
    trace.check_iteration(t_max)?;
    let mut total = 0u64;
    for t in 0..=t_max {
        let a = trace.histogram(g, t)?;
        let b = trace.histogram(h, t)?;
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    total += u64::from(a[i].1.min(b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    Ok(total)
}

/// Unary encoding of the histograms: slot `(t, c, j)` is 1 iff color `c`
/// occurs at least `j` times at iteration `t`.
pub fn wloa_feature(trace: &ColoringTrace, g: usize, t_max: usize) -> Result<SparseFeature, KernelError> {
    let counts = wl_feature(trace, g, t_max)?;
    let mut entries = Vec::new();
    for &(key, k) in &counts.entries {
        for j in 1..=k as u32 {
            entries.push((FeatureKey { slot: j, ..key }, 1.0));
        }
    }
    Ok(SparseFeature {
        kind: FeatureKind::WloaUnary,
        entries,
        ..counts
    })
}

/// All features of a collection: WL counts (optionally normalized) or WLOA
/// unary vectors.
pub fn collection_features(
    trace: &ColoringTrace,
    kind: KernelKind,
    t_max: usize,
    normalized: bool,
) -> Result<Vec<SparseFeature>, KernelError> {
    (0..trace.len())
        .into_par_iter()
        .map(|g| {
            let f = match kind {
                KernelKind::Wl => wl_feature(trace, g, t_max)?,
                KernelKind::Wloa => wloa_feature(trace, g, t_max)?,
            };
            if normalized {
                normalize(&f)
            } else {
                Ok(f)
            }
        })
        .collect()
}

/// Union of the keys of `features` in sorted order, and each feature as a
/// dense vector over those keys.
pub fn densify(features: &[SparseFeature]) -> (Vec<FeatureKey>, Vec<Vec<f64>>) {
    let mut keys: Vec<FeatureKey> = features
        .iter()
        .flat_map(|f| f.entries.iter().map(|e| e.0))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let rows = features
        .iter()
        .map(|f| {
            let mut row = vec![0.0; keys.len()];
            for (k, x) in &f.entries {
                let i = keys.binary_search(k).expect("key collected above");
                row[i] = *x;
            }
            row
        })
        .collect();
    (keys, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub kind: KernelKind,
    pub normalized: bool,
    pub iterations: usize,
    pub with_patterns: bool,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.values.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of eigenvalues above `tol` times the largest magnitude.
    pub fn rank(&self, tol: f64) -> usize {
        let eig = SymmetricEigen::new(self.values.clone()).eigenvalues;
        let top = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        eig.iter().filter(|x| x.abs() > tol * top.max(f64::MIN_POSITIVE)).count()
    }
}

/// Divides entry `(i, j)` by `sqrt(k_ii * k_jj)`.
pub fn cosine_normalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
    let n = m.nrows();
    if let Some(i) = (0..n).find(|&i| m[(i, i)] <= 0.0) {
        return Err(KernelError::ZeroDiagonal(i));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt()
        }
    }))
}

/// Kernel matrix of a trace's graphs at horizon `t_max`.
pub fn gram_from_trace(
    trace: &ColoringTrace,
    kind: KernelKind,
    t_max: usize,
    normalized: bool,
) -> Result<DMatrix<f64>, KernelError> {
    let s = trace.len();
    if s == 0 {
        return Err(KernelError::EmptyCollection);
    }
    trace.check_iteration(t_max)?;
    let rows: Vec<Vec<f64>> = match kind {
        KernelKind::Wl => {
            let feats = collection_features(trace, kind, t_max, false)?;
            (0..s)
                .into_par_iter()
                .map(|i| (0..s).map(|j| merge_dot(&feats[i].entries, &feats[j].entries)).collect())
                .collect()
        }
        KernelKind::Wloa => (0..s)
            .into_par_iter()
            .map(|i| {
                (0..s)
                    .map(|j| k_wloa(trace, i, j, t_max).map(|x| x as f64))
                    .collect::<Result<Vec<f64>, KernelError>>()
            })
            .collect::<Result<_, _>>()?,
    };
    let m = DMatrix::from_fn(s, s, |i, j| rows[i][j]);
    if normalized {
        cosine_normalize(&m)
    } else {
        Ok(m)
    }
}

/// Gram matrix of `graphs` under the WL or WLOA kernel, seeded with subgraph
/// labels when `patterns` is given.
pub fn gram(
    graphs: &[Graph],
    kind: KernelKind,
    patterns: Option<&PatternSet>,
    t_max: usize,
    normalized: bool,
) -> Result<GramMatrix, KernelError> {
    if graphs.is_empty() {
        return Err(KernelError::EmptyCollection);
    }
    let trace = build_trace(graphs, patterns, Horizon::Fixed(t_max));
    Ok(GramMatrix {
        values: gram_from_trace(&trace, kind, t_max, normalized)?,
        kind,
        normalized,
        iterations: t_max,
        with_patterns: patterns.is_some(),
    })
}
