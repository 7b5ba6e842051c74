//! Hard margins: distance between class convex hulls, the max-margin
//! hyperplane, radius, and the `r^2 / lambda^2` ratio.
//!
//! Everything is computed from inner products only, so dense vectors, sparse
//! WL features and precomputed Gram matrices share one solver.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{FeatureKey, KernelError, SparseFeature};

/// Relative duality-gap tolerance of the min-norm-point solver.
pub const GAP_TOLERANCE: f64 = 1e-12;
/// Half hull distances at or below this count as "not separable".
pub const SEPARABILITY_TOLERANCE: f64 = 1e-9;
const ROUNDOFF_FACTOR: f64 = 64.0;
pub const ITERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarginError {
    #[error("no points")]
    Empty,
    #[error("class {0} has no points")]
    EmptyClass(usize),
    #[error("label {label} at index {index} is not 0 or 1")]
    LabelValue { index: usize, label: usize },
    #[error("{points} points but {labels} labels")]
    LabelCount { points: usize, labels: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite inner product")]
    NonFinite,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("no convergence after {iterations} iterations (gap {gap:e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        best: Box<MinNormPoint>,
    },
}

/// Minimum-norm point of a convex hull, as convex weights over its atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormPoint {
    /// Convex weights, one per input point (zero off the support).
    pub coefficients: Vec<f64>,
    /// The point itself, for dense inputs.
    pub point: Option<Vec<f64>>,
    pub norm: f64,
    /// Final Frank–Wolfe gap `|x|^2 - min_a <x, a>`.
    pub gap: f64,
    pub iterations: usize,
}

/// Atoms of a convex hull known through inner products only.
trait Atoms {
    type Atom: Copy + PartialEq;
    fn first(&self) -> Self::Atom;
    fn ip(&self, a: Self::Atom, b: Self::Atom) -> f64;
    /// Atom minimizing `<x, a>` for `x = sum_s w_s a_s`, with that value.
    fn lmo(&self, support: &[Self::Atom], weights: &[f64]) -> (Self::Atom, f64);
}

struct PointAtoms<'a> {
    k: &'a DMatrix<f64>,
}

impl Atoms for PointAtoms<'_> {
    type Atom = usize;

    fn first(&self) -> usize {
        (0..self.k.nrows())
            .min_by(|&a, &b| self.k[(a, a)].total_cmp(&self.k[(b, b)]))
            .unwrap_or(0)
    }

    fn ip(&self, a: usize, b: usize) -> f64 {
        self.k[(a, b)]
    }

    fn lmo(&self, support: &[usize], weights: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.k.nrows() {
            let v: f64 = support.iter().zip(weights).map(|(&s, w)| w * self.k[(s, j)]).sum();
            if v < best.1 {
                best = (j, v);
            }
        }
        best
    }
}

/// Differences `x_i - x_j` with `i` from `plus` and `j` from `minus`.
struct DifferenceAtoms<'a> {
    k: &'a DMatrix<f64>,
    plus: &'a [usize],
    minus: &'a [usize],
}

impl Atoms for DifferenceAtoms<'_> {
    type Atom = (usize, usize);

    fn first(&self) -> (usize, usize) {
        let mut best = ((self.plus[0], self.minus[0]), f64::INFINITY);
        for &i in self.plus {
            for &j in self.minus {
                let d = self.k[(i, i)] - 2.0 * self.k[(i, j)] + self.k[(j, j)];
                if d < best.1 {
                    best = ((i, j), d);
                }
            }
        }
        best.0
    }

    fn ip(&self, (i, j): (usize, usize), (k, l): (usize, usize)) -> f64 {
        self.k[(i, k)] - self.k[(i, l)] - self.k[(j, k)] + self.k[(j, l)]
    }

    fn lmo(&self, support: &[(usize, usize)], weights: &[f64]) -> ((usize, usize), f64) {
        let proj = |p: usize| -> f64 {
            support
                .iter()
                .zip(weights)
                .map(|(&(i, j), w)| w * (self.k[(i, p)] - self.k[(j, p)]))
                .sum()
        };
        let (mut bi, mut vi) = (self.plus[0], f64::INFINITY);
        for &i in self.plus {
            let v = proj(i);
            if v < vi {
                (bi, vi) = (i, v);
            }
        }
        let (mut bj, mut vj) = (self.minus[0], f64::NEG_INFINITY);
        for &j in self.minus {
            let v = proj(j);
            if v > vj {
                (bj, vj) = (j, v);
            }
        }
        ((bi, bj), vi - vj)
    }
}

struct WolfeOutcome<A> {
    support: Vec<A>,
    weights: Vec<f64>,
    norm_sq: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
}

/// Affine minimizer of `|sum mu_s a_s|` subject to `sum mu_s = 1`, from the
/// bordered system `[G 1; 1' 0] [mu; -theta] = [0; 1]`.
fn affine_minimizer(g: &DMatrix<f64>) -> DVector<f64> {
    let m = g.nrows();
    let mut border = DMatrix::zeros(m + 1, m + 1);
    border.view_mut((0, 0), (m, m)).copy_from(g);
    for i in 0..m {
        border[(i, m)] = 1.0;
        border[(m, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let scale = g.diagonal().amax().max(f64::MIN_POSITIVE);
    let solution = border
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|x| x.is_finite()))
        .unwrap_or_else(|| {
            border
                .svd(true, true)
                .solve(&rhs, 1e-14 * scale)
                .expect("both SVD factors were requested")
        });
    let mu = solution.rows(0, m).into_owned();
    let sum: f64 = mu.sum();
    if sum.abs() > f64::EPSILON {
        mu / sum
    } else {
        mu
    }
}

/// Wolfe's minimum-norm-point algorithm: a fully corrective Frank–Wolfe
/// method that keeps an affinely independent corral and re-solves the affine
/// minimization over it after each added atom.
fn wolfe<S: Atoms>(atoms: &S, cap: usize) -> WolfeOutcome<S::Atom> {
    let a0 = atoms.first();
    let mut support = vec![a0];
    let mut weights = vec![1.0];
    let mut gram = DMatrix::from_element(1, 1, atoms.ip(a0, a0));
    let mut iterations = 0;
    let mut rejected = None;
    loop {
        let (a, va) = atoms.lmo(&support, &weights);
        let norm_sq = quad(&gram, &weights).max(0.0);
        let gap = norm_sq - va;
        let scale = gram.diagonal().amax().max(atoms.ip(a, a)).max(f64::MIN_POSITIVE);
        // An atom already in the corral, or one the corral just rejected,
        // means no further numerical progress is possible.
        let done = gap <= GAP_TOLERANCE * scale || support.contains(&a) || rejected == Some(a);
        if done || iterations >= cap {
            return WolfeOutcome {
                support,
                weights,
                norm_sq,
                gap: gap.max(0.0),
                iterations,
                converged: done,
            };
        }
        iterations += 1;

        let m = support.len();
        let mut grown = DMatrix::zeros(m + 1, m + 1);
        grown.view_mut((0, 0), (m, m)).copy_from(&gram);
        for (s, &b) in support.iter().enumerate() {
            let v = atoms.ip(a, b);
            grown[(s, m)] = v;
            grown[(m, s)] = v;
        }
        grown[(m, m)] = atoms.ip(a, a);
        gram = grown;
        support.push(a);
        weights.push(0.0);

        loop {
            let mu = affine_minimizer(&gram);
            let eps = 1e-14;
            if mu.iter().all(|&x| x > eps) {
                weights = mu.iter().copied().collect();
                break;
            }
            let mut theta = 1.0f64;
            for (s, &m_s) in mu.iter().enumerate() {
                if m_s <= eps {
                    let denom = weights[s] - m_s;
                    if denom > 0.0 {
                        theta = theta.min(weights[s] / denom);
                    }
                }
            }
            for (s, w) in weights.iter_mut().enumerate() {
                *w += theta * (mu[s] - *w);
            }
            let keep: Vec<usize> = (0..weights.len()).filter(|&s| weights[s] > eps).collect();
            let keep = if keep.len() == weights.len() {
                // Guard against stalling: drop the smallest weight.
                let drop = (0..weights.len())
                    .min_by(|&x, &y| weights[x].total_cmp(&weights[y]))
                    .expect("support is nonempty");
                (0..weights.len()).filter(|&s| s != drop).collect()
            } else {
                keep
            };
            support = keep.iter().map(|&s| support[s]).collect();
            let kept: Vec<f64> = keep.iter().map(|&s| weights[s]).collect();
            let total: f64 = kept.iter().sum();
            weights = kept.into_iter().map(|w| w / total).collect();
            gram = gram.select_rows(keep.iter()).select_columns(keep.iter());
            if support.len() == 1 {
                weights = vec![1.0];
                break;
            }
        }
        rejected = if support.contains(&a) { None } else { Some(a) };
    }
}

fn quad(g: &DMatrix<f64>, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            total += w[i] * w[j] * g[(i, j)];
        }
    }
    total
}

fn check_finite(k: &DMatrix<f64>) -> Result<(), MarginError> {
    if k.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MarginError::NonFinite)
    }
}

fn dense_gram(points: &[Vec<f64>]) -> Result<DMatrix<f64>, MarginError> {
    let d = points.first().map_or(0, Vec::len);
    for (index, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(MarginError::Dimension {
                index,
                expected: d,
                got: p.len(),
            });
        }
    }
    let n = points.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum()
    });
    check_finite(&k)?;
    Ok(k)
}

/// Minimum-norm point of the convex hull of a Gram matrix's points.
pub fn min_norm_point_gram(k: &DMatrix<f64>) -> Result<MinNormPoint, MarginError> {
    if k.nrows() == 0 {
        return Err(MarginError::Empty);
    }
    check_finite(k)?;
    let out = wolfe(&PointAtoms { k }, ITERATION_CAP);
    let mut coefficients = vec![0.0; k.nrows()];
    for (&s, &w) in out.support.iter().zip(&out.weights) {
        coefficients[s] += w;
    }
    let result = MinNormPoint {
        coefficients,
        point: None,
        norm: out.norm_sq.sqrt(),
        gap: out.gap,
        iterations: out.iterations,
    };
    if out.converged {
        Ok(result)
    } else {
        Err(MarginError::NotConverged {
            iterations: out.iterations,
            gap: out.gap,
            best: Box::new(result),
        })
    }
}

/// Minimum-norm point of the convex hull of dense `points`.
pub fn min_norm_point(points: &[Vec<f64>]) -> Result<MinNormPoint, MarginError> {
    let k = dense_gram(points)?;
    let fill = |mut r: MinNormPoint| {
        r.point = Some(combine(points, &r.coefficients));
        r
    };
    match min_norm_point_gram(&k) {
        Ok(r) => Ok(fill(r)),
        Err(MarginError::NotConverged {
            iterations,
            gap,
            best,
        }) => Err(MarginError::NotConverged {
            iterations,
            gap,
            best: Box::new(fill(*best)),
        }),
        Err(e) => Err(e),
    }
}

fn combine(points: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let d = points.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (p, &w) in points.iter().zip(c) {
        if w != 0.0 {
            for (o, x) in out.iter_mut().zip(p) {
                *o += w * x;
            }
        }
    }
    out
}

/// Points with binary labels; label 1 is the positive class.
#[derive(Debug, Clone, PartialEq)]
pub enum Points {
    Dense(Vec<Vec<f64>>),
    Sparse(Vec<SparseFeature>),
}

impl Points {
    pub fn len(&self) -> usize {
        match self {
            Points::Dense(p) => p.len(),
            Points::Sparse(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gram(&self) -> Result<DMatrix<f64>, MarginError> {
        match self {
            Points::Dense(p) => dense_gram(p),
            Points::Sparse(p) => {
                let n = p.len();
                let mut k = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = p[i].dot(&p[j])?;
                        k[(i, j)] = v;
                        k[(j, i)] = v;
                    }
                }
                check_finite(&k)?;
                Ok(k)
            }
        }
    }

    /// `sum_i c_i x_i` in the representation of the inputs.
    pub fn combine(&self, c: &[f64]) -> Weights {
        match self {
            Points::Dense(p) => Weights::Dense(combine(p, c)),
            Points::Sparse(p) => {
                let mut acc: BTreeMap<FeatureKey, f64> = BTreeMap::new();
                for (f, &w) in p.iter().zip(c) {
                    if w != 0.0 {
                        for &(key, x) in f.entries() {
                            *acc.entry(key).or_insert(0.0) += w * x;
                        }
                    }
                }
                Weights::Sparse(acc.into_iter().collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: Points,
    pub labels: Vec<usize>,
}

/// A vector in the input space, dense or keyed by WL feature coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weights {
    Dense(Vec<f64>),
    Sparse(Vec<(FeatureKey, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusMode {
    /// Largest point norm: the smallest ball centered at the origin.
    #[default]
    Origin,
    /// Approximate minimal enclosing ball (within 1%).
    EnclosingBall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    pub separable: bool,
    /// Half the distance between the class hulls.
    pub lambda: f64,
    pub radius: f64,
    /// `radius^2 / lambda^2`, infinite when not separable.
    #[serde(with = "crate::io::nonfinite")]
    pub ratio: f64,
    /// Indices of the class-1 and class-0 points.
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    /// Convex weights over `positive` and `negative`.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Hyperplane normal as `w = sum_i coefficients[i] x_i`, with offset `b`;
    /// zero when not separable.
    pub coefficients: Vec<f64>,
    pub b: f64,
    pub w: Option<Weights>,
    /// Closest hull points `x+` and `x-`.
    pub witness_plus: Option<Weights>,
    pub witness_minus: Option<Weights>,
    pub tolerance: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl MarginResult {
    /// `w . x_j + b` for every input point, from the Gram matrix.
    pub fn decision_values(&self, k: &DMatrix<f64>) -> Vec<f64> {
        (0..k.nrows())
            .map(|j| {
                self.coefficients
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(i, c)| c * k[(i, j)])
                    .sum::<f64>()
                    + self.b
            })
            .collect()
    }

    /// Squared norm of the hyperplane normal.
    pub fn w_norm_sq(&self, k: &DMatrix<f64>) -> f64 {
        let n = self.coefficients.len();
        let mut total = 0.0;
        for i in 0..n {
            if self.coefficients[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                total += self.coefficients[i] * self.coefficients[j] * k[(i, j)];
            }
        }
        total
    }

    /// Smallest signed geometric distance `y_i (w . x_i + b) / |w|`.
    pub fn geometric_margin(&self, k: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let norm = self.w_norm_sq(k).sqrt();
        self.decision_values(k)
            .iter()
            .zip(labels)
            .map(|(f, &y)| if y == 1 { *f } else { -*f } / norm)
            .fold(f64::INFINITY, f64::min)
    }
}

fn split_labels(labels: &[usize]) -> Result<(Vec<usize>, Vec<usize>), MarginError> {
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (index, &label) in labels.iter().enumerate() {
        match label {
            1 => plus.push(index),
            0 => minus.push(index),
            _ => return Err(MarginError::LabelValue { index, label }),
        }
    }
    if plus.is_empty() {
        return Err(MarginError::EmptyClass(1));
    }
    if minus.is_empty() {
        return Err(MarginError::EmptyClass(0));
    }
    Ok((plus, minus))
}

/// Hard margin from a Gram matrix. The hull distance is the norm of the
/// minimum-norm point of the difference hull `{x_i - x_j : y_i = 1, y_j = 0}`.
/// The hyperplane is the perpendicular bisector of the two closest hull
/// points, scaled so that those points have functional margin exactly 1.
pub fn hard_margin_gram(k: &DMatrix<f64>, labels: &[usize]) -> Result<MarginResult, MarginError> {
    if k.nrows() != labels.len() {
        return Err(MarginError::LabelCount {
            points: k.nrows(),
            labels: labels.len(),
        });
    }
    check_finite(k)?;
    let (plus, minus) = split_labels(labels)?;
    let atoms = DifferenceAtoms {
        k,
        plus: &plus,
        minus: &minus,
    };
    let out = wolfe(&atoms, ITERATION_CAP);
    let n = labels.len();
    let mut coef = vec![0.0; n];
    let mut alpha_full = vec![0.0; n];
    let mut beta_full = vec![0.0; n];
    for (&(i, j), &w) in out.support.iter().zip(&out.weights) {
        alpha_full[i] += w;
        beta_full[j] += w;
    }
    let lambda = out.norm_sq.sqrt() / 2.0;
    // Squared norms from a Gram matrix carry rounding error proportional to
    // the largest squared point norm, so tiny values are indistinguishable
    // from intersecting hulls.
    let diag = (0..n).map(|i| k[(i, i)]).fold(0.0, f64::max);
    let floor = ROUNDOFF_FACTOR * f64::EPSILON * 4.0 * diag;
    let separable = lambda > SEPARABILITY_TOLERANCE && out.norm_sq > floor;
    let radius = (0..n).map(|i| k[(i, i)].max(0.0).sqrt()).fold(0.0, f64::max);
    let mut b = 0.0;
    if separable {
        let plus_sq = quad_full(k, &alpha_full);
        let minus_sq = quad_full(k, &beta_full);
        let scale = 2.0 * lambda * lambda;
        for i in 0..n {
            coef[i] = (alpha_full[i] - beta_full[i]) / scale;
        }
        b = (minus_sq - plus_sq) / (2.0 * scale);
    }
    let result = MarginResult {
        separable,
        lambda: if separable { lambda } else { 0.0 },
        radius,
        ratio: if separable {
            radius * radius / (lambda * lambda)
        } else {
            f64::INFINITY
        },
        alpha: plus.iter().map(|&i| alpha_full[i]).collect(),
        beta: minus.iter().map(|&j| beta_full[j]).collect(),
        positive: plus,
        negative: minus,
        coefficients: coef,
        b,
        w: None,
        witness_plus: None,
        witness_minus: None,
        tolerance: SEPARABILITY_TOLERANCE,
        gap: out.gap,
        iterations: out.iterations,
    };
    if !out.converged {
        return Err(MarginError::NotConverged {
            iterations: out.iterations,
            gap: out.gap,
            best: Box::new(MinNormPoint {
                coefficients: out.weights,
                point: None,
                norm: out.norm_sq.sqrt(),
                gap: out.gap,
                iterations: out.iterations,
            }),
        });
    }
    Ok(result)
}

fn quad_full(k: &DMatrix<f64>, w: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
    let mut total = 0.0;
    for &i in &idx {
        for &j in &idx {
            total += w[i] * w[j] * k[(i, j)];
        }
    }
    total
}

/// Hard margin of labeled points, with the hyperplane and witnesses
/// materialized in the input representation.
pub fn hard_margin(data: &LabeledPoints) -> Result<MarginResult, MarginError> {
    if data.points.len() != data.labels.len() {
        return Err(MarginError::LabelCount {
            points: data.points.len(),
            labels: data.labels.len(),
        });
    }
    let k = data.points.gram()?;
    let mut r = hard_margin_gram(&k, &data.labels)?;
    let n = data.labels.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for (&i, &w) in r.positive.iter().zip(&r.alpha) {
        a[i] = w;
    }
    for (&j, &w) in r.negative.iter().zip(&r.beta) {
        b[j] = w;
    }
    r.witness_plus = Some(data.points.combine(&a));
    r.witness_minus = Some(data.points.combine(&b));
    if r.separable {
        r.w = Some(data.points.combine(&r.coefficients));
    }
    Ok(r)
}

/// Radius of an approximate minimal enclosing ball (Badoiu–Clarkson core-set
/// iteration, within a factor 1.01 of optimal).
pub fn enclosing_ball_radius(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    if n == 0 {
        return 0.0;
    }
    // Center c = sum_i w_i x_i; |x_j - c|^2 = K_jj - 2 (K w)_j + w'Kw.
    let mut w = vec![0.0; n];
    w[0] = 1.0;
    let steps = 10_000;
    let dist = |w: &[f64]| -> Vec<f64> {
        let cc = quad_full(k, w);
        (0..n)
            .map(|j| {
                let kw: f64 = (0..n).filter(|&i| w[i] != 0.0).map(|i| w[i] * k[(i, j)]).sum();
                (k[(j, j)] - 2.0 * kw + cc).max(0.0)
            })
            .collect()
    };
    let mut best = f64::INFINITY;
    for step in 1..=steps {
        let d = dist(&w);
        let (far, r2) = d
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        best = best.min(r2.sqrt());
        let eta = 1.0 / (step as f64 + 1.0);
        for x in w.iter_mut() {
            *x *= 1.0 - eta;
        }
        w[far] += eta;
    }
    best
}

/// Hard margin plus the capacity ratio, with an optional radius override.
pub fn separability_report(
    data: &LabeledPoints,
    r_override: Option<f64>,
) -> Result<MarginResult, MarginError> {
    let mut r = hard_margin(data)?;
    if let Some(radius) = r_override {
        r.radius = radius;
    }
    r.ratio = if r.separable {
        r.radius * r.radius / (r.lambda * r.lambda)
    } else {
        f64::INFINITY
    };
    Ok(r)
}

/// [`separability_report`] with the radius chosen by `mode`.
pub fn separability_report_with(
    data: &LabeledPoints,
    mode: RadiusMode,
) -> Result<MarginResult, MarginError> {
    match mode {
        RadiusMode::Origin => separability_report(data, None),
        RadiusMode::EnclosingBall => {
            let radius = enclosing_ball_radius(&data.points.gram()?);
            separability_report(data, Some(radius))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(points: &[&[f64]], labels: &[usize]) -> LabeledPoints {
        LabeledPoints {
            points: Points::Dense(points.iter().map(|p| p.to_vec()).collect()),
            labels: labels.to_vec(),
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Smallest norm of `sum_i c_i p_i` over a grid on the simplex.
    fn grid_min_norm(points: &[Vec<f64>], step: f64) -> f64 {
        let m = (1.0 / step).round() as usize;
        let d = points[0].len();
        let mut best = f64::INFINITY;
        let mut eval = |c: &[f64]| {
            let mut x = vec![0.0; d];
            for (p, w) in points.iter().zip(c) {
                for (o, v) in x.iter_mut().zip(p) {
                    *o += w * v;
                }
            }
            best = best.min(x.iter().map(|v| v * v).sum::<f64>().sqrt());
        };
        match points.len() {
            1 => eval(&[1.0]),
            2 => {
                for a in 0..=m {
                    let a = a as f64 * step;
                    eval(&[a, 1.0 - a]);
                }
            }
            3 => {
                for a in 0..=m {
                    for b in 0..=m - a {
                        let (x, y) = (a as f64 * step, b as f64 * step);
                        eval(&[x, y, (1.0 - x - y).max(0.0)]);
                    }
                }
            }
            _ => unreachable!(),
        }
        best
    }

    #[test]
    fn min_norm_examples() {
        let r = min_norm_point(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(close(r.norm, 2f64.sqrt() / 2.0, 1e-12));
        let p = r.point.unwrap();
        assert!(close(p[0], 0.5, 1e-12) && close(p[1], 0.5, 1e-12));
        let r = min_norm_point(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(r.point.unwrap(), vec![2.0, 0.0]);
        let pts = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![3.0, 0.0]];
        let r = min_norm_point(&pts).unwrap();
        let p = r.point.unwrap();
        assert!(close(p[0], 1.0, 1e-12) && close(p[1], 0.0, 1e-12));
        assert!(close(r.norm, grid_min_norm(&pts, 1e-3), 2e-3));
        assert_eq!(min_norm_point(&[]).unwrap_err(), MarginError::Empty);
    }

    #[test]
    fn origin_inside_hull() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        let r = min_norm_point(&pts).unwrap();
        assert!(r.norm < 1e-12);
        let total: f64 = r.coefficients.iter().sum();
        assert!(close(total, 1.0, 1e-12));
    }

    #[test]
    fn two_point_margin() {
        let data = dense(&[&[1.0, 0.0], &[0.0, 1.0]], &[1, 0]);
        let r = hard_margin(&data).unwrap();
        assert!(r.separable);
        assert!(close(r.lambda, 2f64.sqrt() / 2.0, 1e-12));
        let Some(Weights::Dense(w)) = &r.w else { panic!() };
        assert!(close(w[0], -w[1], 1e-12) && w[0] > 0.0);
        assert!(close(r.ratio, 2.0, 1e-9));
        let k = data.points.gram().unwrap();
        let f = r.decision_values(&k);
        assert!(close(f[0], 1.0, 1e-12) && close(f[1], -1.0, 1e-12));
    }

    #[test]
    fn colinear_alternating_is_not_separable() {
        let pts: Vec<Vec<f64>> = (1..=4).map(|i| vec![12.0, i as f64]).collect();
        let labels = vec![0, 1, 0, 1];
        let data = LabeledPoints {
            points: Points::Dense(pts),
            labels,
        };
        let r = hard_margin(&data).unwrap();
        assert!(!r.separable);
        assert_eq!(r.lambda, 0.0);
        assert!(r.ratio.is_infinite());
        assert!(r.w.is_none());
    }

    #[test]
    fn matches_grid_oracle() {
        let cases: Vec<(Vec<Vec<f64>>, Vec<usize>)> = vec![
            (vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![2.0, 2.0], vec![3.0, 1.0]], vec![1, 1, 0, 0]),
            (vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 1.0], vec![1.0, 1.0, 1.0], vec![2.0, 0.0, 0.5]], vec![1, 1, 1, 0]),
            (vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.2], vec![0.0, 3.0]], vec![1, 1, 0, 0]),
        ];
        for (pts, labels) in cases {
            let plus: Vec<Vec<f64>> = pts.iter().zip(&labels).filter(|x| *x.1 == 1).map(|x| x.0.clone()).collect();
            let minus: Vec<Vec<f64>> = pts.iter().zip(&labels).filter(|x| *x.1 == 0).map(|x| x.0.clone()).collect();
            let diffs: Vec<Vec<f64>> = plus
                .iter()
                .flat_map(|p| minus.iter().map(move |q| p.iter().zip(q).map(|(a, b)| a - b).collect()))
                .collect();
            let expected = if diffs.len() <= 3 {
                grid_min_norm(&diffs, 1e-3) / 2.0
            } else {
                let m = 1000;
                let mut best = f64::INFINITY;
                for a in 0..=m {
                    for b in 0..=m {
                        let (x, y) = (a as f64 / m as f64, b as f64 / m as f64);
                        let d: f64 = (0..plus[0].len())
                            .map(|c| {
                                let u = x * plus[0][c] + (1.0 - x) * plus[1][c];
                                let v = y * minus[0][c] + (1.0 - y) * minus[1][c];
                                (u - v) * (u - v)
                            })
                            .sum();
                        best = best.min(d.sqrt());
                    }
                }
                best / 2.0
            };
            let r = hard_margin(&LabeledPoints {
                points: Points::Dense(pts),
                labels,
            })
            .unwrap();
            assert!(close(r.lambda, expected, 2e-3), "{} vs {}", r.lambda, expected);
        }
    }

    #[test]
    fn errors() {
        let one = dense(&[&[1.0]], &[1]);
        assert_eq!(hard_margin(&one).unwrap_err(), MarginError::EmptyClass(0));
        let bad = dense(&[&[1.0], &[2.0]], &[1, 2]);
        assert!(matches!(hard_margin(&bad), Err(MarginError::LabelValue { .. })));
        let ragged = dense(&[&[1.0], &[2.0, 0.0]], &[1, 0]);
        assert!(matches!(hard_margin(&ragged), Err(MarginError::Dimension { .. })));
    }

    #[test]
    fn report_ratio() {
        let data = dense(&[&[0.6, 0.8], &[0.6, -0.8]], &[1, 0]);
        let r = separability_report(&data, None).unwrap();
        assert!(close(r.radius, 1.0, 1e-12));
        assert!(close(r.lambda, 0.8, 1e-12));
        assert!(close(r.ratio, 1.0 / 0.64, 1e-9));
        let r = separability_report(&data, Some(2.0)).unwrap();
        assert!(close(r.ratio, 4.0 / 0.64, 1e-9));
    }

    #[test]
    fn enclosing_ball() {
        let k = dense(&[&[10.0, 1.0], &[12.0, 1.0], &[11.0, 2.0], &[11.0, 0.0]], &[1, 1, 0, 0])
            .points
            .gram()
            .unwrap();
        let r = enclosing_ball_radius(&k);
        assert!((1.0 - 1e-9..=1.01).contains(&r), "{r}");
    }
}
