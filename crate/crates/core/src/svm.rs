//! Soft-margin SVMs and the repeated cross-validation harness.
//!
//! Both the linear and the kernel model are trained by SMO on a Gram matrix
//! (second-order working-set selection, unregularized bias). The linear model
//! recovers its weight vector as `w = sum_i alpha_i y_i x_i`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::kernels::{build_trace, gram_from_trace, KernelError, KernelKind, SparseFeature};
use crate::margin::{hard_margin_gram, LabeledPoints, MarginError, Weights};
use crate::refinement::Horizon;
use crate::subgraph::PatternSet;

pub const KERNEL_TOLERANCE: f64 = 1e-5;
pub const LINEAR_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
/// Per-solve cap inside cross-validation. With a huge C on data that is not
/// separable SMO never meets the tolerance, so the cap bounds the run time.
pub const CV_MAX_ITERATIONS: usize = 10_000;
/// Smallest eigenvalue accepted as positive semidefinite, relative to the
/// largest diagonal entry.
pub const PSD_TOLERANCE: f64 = 1e-8;
const TAU: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("C must be positive and finite, got {0}")]
    InvalidC(f64),
    #[error("training data needs both classes")]
    SingleClass,
    #[error("{points} points but {labels} labels")]
    LabelCount { points: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(usize),
    #[error("Gram matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("SMO stopped after {iterations} iterations with KKT violation {violation:e}")]
    NotConverged {
        iterations: usize,
        violation: f64,
        model: Box<KernelModel>,
    },
    #[error("need at least {needed} examples and two classes, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("empty {0} grid")]
    EmptyGrid(&'static str),
    #[error("invalid grid value {0}")]
    InvalidGrid(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Margin(#[from] MarginError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SmoParams {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            tolerance: KERNEL_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Dual solution: `f(x) = sum_i alpha_i y_i k(x_i, x) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub alpha: Vec<f64>,
    /// Training labels as -1 / +1.
    pub y: Vec<f64>,
    pub b: f64,
    /// Indices with nonzero `alpha`.
    pub support: Vec<usize>,
    pub c: f64,
    pub iterations: usize,
    pub violation: f64,
}

impl KernelModel {
    /// Decision value from the kernel values between a point and every
    /// training point.
    pub fn decision(&self, k_row: &[f64]) -> f64 {
        self.support
            .iter()
            .map(|&i| self.alpha[i] * self.y[i] * k_row[i])
            .sum::<f64>()
            + self.b
    }

    /// Coefficients `alpha_i y_i` of the normal vector over training points.
    pub fn coefficients(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.y).map(|(a, y)| a * y).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Weights,
    pub b: f64,
    pub c: f64,
    pub dual: KernelModel,
}

impl LinearModel {
    pub fn decision_dense(&self, x: &[f64]) -> f64 {
        match &self.w {
            Weights::Dense(w) => w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b,
            Weights::Sparse(_) => panic!("sparse model evaluated on a dense point"),
        }
    }

    pub fn decision_sparse(&self, x: &SparseFeature) -> f64 {
        match &self.w {
            Weights::Sparse(w) => {
                w.iter().map(|&(k, v)| v * x.get(k)).sum::<f64>() + self.b
            }
            Weights::Dense(_) => panic!("dense model evaluated on a sparse point"),
        }
    }

    pub fn w_norm(&self) -> f64 {
        match &self.w {
            Weights::Dense(w) => w.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Weights::Sparse(w) => w.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt(),
        }
    }
}

struct SmoOutcome {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    violation: f64,
    converged: bool,
}

/// C-SVC dual `min 1/2 a'Qa - e'a` with `0 <= a <= C`, `y'a = 0`, following
/// the working-set selection and update rules of LIBSVM.
fn smo(k: &DMatrix<f64>, y: &[f64], p: SmoParams) -> SmoOutcome {
    let n = y.len();
    let c = p.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut violation;
    let mut converged = false;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut imax = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    imax = t;
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                imax = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut jmin = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if imax != usize::MAX {
            let i = imax;
            let kii = k[(i, i)];
            for j in 0..n {
                if y[j] > 0.0 {
                    if !lower(alpha[j]) {
                        let diff = gmax + grad[j];
                        gmax2 = gmax2.max(grad[j]);
                        if diff > 0.0 {
                            let quad = kii + k[(j, j)] - 2.0 * y[i] * q(i, j);
                            let obj = -(diff * diff) / quad.max(TAU);
                            if obj <= obj_min {
                                jmin = j;
                                obj_min = obj;
                            }
                        }
                    }
                } else if !upper(alpha[j]) {
                    let diff = gmax - grad[j];
                    gmax2 = gmax2.max(-grad[j]);
                    if diff > 0.0 {
                        let quad = kii + k[(j, j)] + 2.0 * y[i] * q(i, j);
                        let obj = -(diff * diff) / quad.max(TAU);
                        if obj <= obj_min {
                            jmin = j;
                            obj_min = obj;
                        }
                    }
                }
            }
        }
        violation = gmax + gmax2;
        if imax == usize::MAX || jmin == usize::MAX || violation < p.tolerance {
            converged = true;
            break;
        }
        if iterations >= p.max_iterations {
            break;
        }
        iterations += 1;

        let (i, j) = (imax, jmin);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (k[(i, i)] + k[(j, j)] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[(i, i)] + k[(j, j)] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    SmoOutcome {
        alpha,
        rho,
        iterations,
        violation: violation.max(0.0),
        converged,
    }
}

fn check_c(c: f64) -> Result<(), SvmError> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(SvmError::InvalidC(c))
    }
}

fn signed_labels(labels: &[usize]) -> Result<Vec<f64>, SvmError> {
    let y: Vec<f64> = labels
        .iter()
        .map(|&l| match l {
            1 => Ok(1.0),
            0 => Ok(-1.0),
            other => Err(SvmError::NonBinaryLabel(other)),
        })
        .collect::<Result<_, _>>()?;
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(SvmError::SingleClass);
    }
    Ok(y)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(k.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn check_psd(k: &DMatrix<f64>) -> Result<(), SvmError> {
    let scale = k.diagonal().amax().max(1.0);
    let m = min_eigenvalue(k);
    if m < -PSD_TOLERANCE * scale {
        return Err(SvmError::NotPsd(m));
    }
    Ok(())
}

fn fit_binary(k: &DMatrix<f64>, labels: &[usize], p: SmoParams) -> Result<KernelModel, SvmError> {
    check_c(p.c)?;
    if k.nrows() != labels.len() {
        return Err(SvmError::LabelCount {
            points: k.nrows(),
            labels: labels.len(),
        });
    }
    let y = signed_labels(labels)?;
    let out = smo(k, &y, p);
    let model = KernelModel {
        support: (0..y.len()).filter(|&i| out.alpha[i] > 0.0).collect(),
        alpha: out.alpha,
        y,
        b: -out.rho,
        c: p.c,
        iterations: out.iterations,
        violation: out.violation,
    };
    if out.converged {
        Ok(model)
    } else {
        Err(SvmError::NotConverged {
            iterations: out.iterations,
            violation: out.violation,
            model: Box::new(model),
        })
    }
}

/// C-SVM on a precomputed Gram matrix with labels in {0, 1}.
pub fn train_kernel(gram: &DMatrix<f64>, labels: &[usize], c: f64) -> Result<KernelModel, SvmError> {
    train_kernel_with(gram, labels, SmoParams::new(c))
}

pub fn train_kernel_with(
    gram: &DMatrix<f64>,
    labels: &[usize],
    p: SmoParams,
) -> Result<KernelModel, SvmError> {
    check_psd(gram)?;
    fit_binary(gram, labels, p)
}

/// Linear soft-margin SVM on explicit feature vectors.
pub fn train_linear(data: &LabeledPoints, c: f64) -> Result<LinearModel, SvmError> {
    train_linear_with(
        data,
        SmoParams {
            tolerance: LINEAR_TOLERANCE,
            ..SmoParams::new(c)
        },
    )
}

pub fn train_linear_with(data: &LabeledPoints, p: SmoParams) -> Result<LinearModel, SvmError> {
    if data.points.len() != data.labels.len() {
        return Err(SvmError::LabelCount {
            points: data.points.len(),
            labels: data.labels.len(),
        });
    }
    let k = data.points.gram()?;
    let build = |dual: KernelModel| LinearModel {
        w: data.points.combine(&dual.coefficients()),
        b: dual.b,
        c: dual.c,
        dual,
    };
    match fit_binary(&k, &data.labels, p) {
        Ok(m) => Ok(build(m)),
        Err(e) => Err(e),
    }
}

/// Binary or one-vs-rest classifier over a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub classes: Vec<usize>,
    /// One model for two classes (positive = `classes[1]`), one per class
    /// otherwise; empty when only one class was seen.
    pub models: Vec<KernelModel>,
    pub converged: bool,
}

fn accept(r: Result<KernelModel, SvmError>) -> Result<(KernelModel, bool), SvmError> {
    match r {
        Ok(m) => Ok((m, true)),
        Err(SvmError::NotConverged { model, .. }) => Ok((*model, false)),
        Err(e) => Err(e),
    }
}

impl Classifier {
    /// Fits on the Gram matrix of the training points. Non-converged SMO runs
    /// keep their last iterate and clear `converged`.
    pub fn fit(k: &DMatrix<f64>, labels: &[usize], p: SmoParams) -> Result<Self, SvmError> {
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let mut models = Vec::new();
        let mut converged = true;
        if classes.len() == 2 {
            let bin: Vec<usize> = labels.iter().map(|&l| usize::from(l == classes[1])).collect();
            let (m, ok) = accept(fit_binary(k, &bin, p))?;
            models.push(m);
            converged &= ok;
        } else if classes.len() > 2 {
            let fitted: Vec<Result<(KernelModel, bool), SvmError>> = classes
                .par_iter()
                .map(|&c| {
                    let bin: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
                    accept(fit_binary(k, &bin, p))
                })
                .collect();
            for r in fitted {
                let (m, ok) = r?;
                models.push(m);
                converged &= ok;
            }
        }
        Ok(Self {
            classes,
            models,
            converged,
        })
    }

    /// Predicts from kernel values against the training points.
    pub fn predict(&self, k_row: &[f64]) -> usize {
        match self.classes.len() {
            0 => 0,
            1 => self.classes[0],
            2 => {
                if self.models[0].decision(k_row) > 0.0 {
                    self.classes[1]
                } else {
                    self.classes[0]
                }
            }
            _ => {
                let mut best = (self.classes[0], f64::NEG_INFINITY);
                for (&c, m) in self.classes.iter().zip(&self.models) {
                    let v = m.decision(k_row);
                    if v > best.1 {
                        best = (c, v);
                    }
                }
                best.0
            }
        }
    }
}

fn submatrix(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| k[(rows[a], cols[b])])
}

/// Accuracy in percent of a classifier trained on `train` and evaluated on
/// `eval`, both indexing the full Gram matrix.
fn accuracy(model: &Classifier, k: &DMatrix<f64>, train: &[usize], eval: &[usize], targets: &[usize]) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let correct = eval
        .iter()
        .filter(|&&e| {
            let row: Vec<f64> = train.iter().map(|&t| k[(e, t)]).collect();
            model.predict(&row) == targets[e]
        })
        .count();
    100.0 * correct as f64 / eval.len() as f64
}

/// Hard margin of the training points; for more than two classes the
/// smallest one-vs-rest margin. `None` when some split is not separable.
pub fn training_margin(k: &DMatrix<f64>, labels: &[usize]) -> Result<Option<f64>, SvmError> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let splits: Vec<usize> = match classes.len() {
        0 | 1 => return Ok(None),
        2 => vec![classes[1]],
        _ => classes,
    };
    let mut worst = f64::INFINITY;
    for c in splits {
        let bin: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
        let r = match hard_margin_gram(k, &bin) {
            Ok(r) => r,
            Err(MarginError::NotConverged { best, .. }) => {
                if best.norm / 2.0 > crate::margin::SEPARABILITY_TOLERANCE {
                    worst = worst.min(best.norm / 2.0);
                    continue;
                }
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        if !r.separable {
            return Ok(None);
        }
        worst = worst.min(r.lambda);
    }
    Ok(Some(worst))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub kernel: KernelKind,
    pub patterns: Option<PatternSet>,
    pub c_grid: Vec<f64>,
    pub t_grid: Vec<usize>,
    pub folds: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Cosine-normalize the Gram matrix (l2-normalized features).
    pub normalized: bool,
    /// Fraction of each training fold held out for hyperparameter selection.
    pub validation_fraction: f64,
    pub compute_margin: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Wl,
            patterns: None,
            c_grid: (-3..=3).map(|e| 10f64.powi(e)).collect(),
            t_grid: (1..=5).collect(),
            folds: 10,
            repetitions: 10,
            seed: 0,
            normalized: true,
            validation_fraction: 0.1,
            compute_margin: true,
            max_iterations: CV_MAX_ITERATIONS,
            tolerance: KERNEL_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub repetition: usize,
    pub fold: usize,
    pub t: usize,
    pub c: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Hard margin of the normalized training features, `None` when the
    /// training split is not linearly separable or was not computed.
    pub margin: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub kernel: KernelKind,
    pub patterns: Vec<String>,
    pub folds: Vec<FoldRecord>,
    /// Mean and standard deviation over repetitions of the per-repetition
    /// mean accuracy, in percent.
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Mean training margin over folds, if every fold was separable.
    pub margin_mean: Option<f64>,
    pub all_separable: bool,
    pub multiclass: String,
}

impl CvReport {
    pub fn margin_label(&self) -> String {
        match self.margin_mean {
            Some(m) => format!("{m:.6}"),
            None => "NLS".to_string(),
        }
    }
}

/// Stratified assignment of examples to folds: each class is shuffled and
/// dealt round-robin, continuing the deal across classes.
pub fn stratified_folds(targets: &[usize], folds: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut classes: Vec<usize> = targets.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == c).collect();
        members.shuffle(rng);
        for m in members {
            out[next % folds].push(m);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn validation_split(train: &[usize], targets: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut classes: Vec<usize> = train.iter().map(|&i| targets[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut inner = Vec::new();
    let mut held = Vec::new();
    for c in classes {
        let mut members: Vec<usize> = train.iter().copied().filter(|&i| targets[i] == c).collect();
        members.shuffle(rng);
        let k = (members.len() as f64 * fraction).round() as usize;
        let k = k.min(members.len().saturating_sub(1));
        held.extend_from_slice(&members[..k]);
        inner.extend_from_slice(&members[k..]);
    }
    inner.sort_unstable();
    held.sort_unstable();
    (inner, held)
}

fn cv_rng(seed: u64, repetition: usize, fold: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = ((repetition as u64) << 32) | fold.map_or(0, |f| f as u64 + 1);
    rng.set_stream(stream);
    rng
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

/// Repeated stratified k-fold cross-validation over (by default
/// cosine-normalized) Gram matrices, selecting `(T, C)` on a validation split of each training fold
/// and refitting on the whole training fold.
pub fn cross_validate(graphs: &[Graph], targets: &[usize], cfg: &CvConfig) -> Result<CvReport, SvmError> {
    if graphs.len() != targets.len() {
        return Err(SvmError::LabelCount {
            points: graphs.len(),
            labels: targets.len(),
        });
    }
    if cfg.c_grid.is_empty() {
        return Err(SvmError::EmptyGrid("C"));
    }
    if cfg.t_grid.is_empty() {
        return Err(SvmError::EmptyGrid("T"));
    }
    for &c in &cfg.c_grid {
        if !(c > 0.0 && c.is_finite()) {
            return Err(SvmError::InvalidGrid(c));
        }
    }
    let mut classes = targets.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 || graphs.len() < cfg.folds.max(2) {
        return Err(SvmError::TooFewExamples {
            needed: cfg.folds.max(2),
            got: graphs.len(),
        });
    }

    let t_top = *cfg.t_grid.iter().max().expect("grid is nonempty");
    let trace = build_trace(graphs, cfg.patterns.as_ref(), Horizon::Fixed(t_top));
    let grams: Vec<DMatrix<f64>> = cfg
        .t_grid
        .iter()
        .map(|&t| gram_from_trace(&trace, cfg.kernel, t, cfg.normalized))
        .collect::<Result<_, _>>()?;

    let grid: Vec<(usize, f64)> = (0..cfg.t_grid.len())
        .flat_map(|ti| cfg.c_grid.iter().map(move |&c| (ti, c)))
        .collect();
    let params = |c: f64| SmoParams {
        c,
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_iterations,
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let assignments: Vec<Vec<Vec<usize>>> = (0..cfg.repetitions)
        .map(|r| stratified_folds(targets, cfg.folds, &mut cv_rng(cfg.seed, r, None)))
        .collect();

    let records: Vec<FoldRecord> = jobs
        .par_iter()
        .map(|&(r, f)| -> Result<FoldRecord, SvmError> {
            let test = &assignments[r][f];
            let train: Vec<usize> = (0..cfg.folds)
                .filter(|&g| g != f)
                .flat_map(|g| assignments[r][g].iter().copied())
                .collect();
            let mut train = train;
            train.sort_unstable();

            let (ti, c) = if grid.len() == 1 {
                grid[0]
            } else {
                let mut rng = cv_rng(cfg.seed, r, Some(f));
                let (inner, held) = validation_split(&train, targets, cfg.validation_fraction, &mut rng);
                let inner_targets: Vec<usize> = inner.iter().map(|&i| targets[i]).collect();
                let mut best = (grid[0], f64::NEG_INFINITY);
                for &(ti, c) in &grid {
                    let k = submatrix(&grams[ti], &inner, &inner);
                    let model = Classifier::fit(&k, &inner_targets, params(c))?;
                    let acc = accuracy(&model, &grams[ti], &inner, &held, targets);
                    if acc > best.1 {
                        best = ((ti, c), acc);
                    }
                }
                best.0
            };

            let train_targets: Vec<usize> = train.iter().map(|&i| targets[i]).collect();
            let k_train = submatrix(&grams[ti], &train, &train);
            let model = Classifier::fit(&k_train, &train_targets, params(c))?;
            let margin = if cfg.compute_margin {
                training_margin(&k_train, &train_targets)?
            } else {
                None
            };
            Ok(FoldRecord {
                repetition: r,
                fold: f,
                t: cfg.t_grid[ti],
                c,
                train_accuracy: accuracy(&model, &grams[ti], &train, &train, targets),
                test_accuracy: accuracy(&model, &grams[ti], &train, test, targets),
                margin,
                converged: model.converged,
            })
        })
        .collect::<Result<_, _>>()?;

    let per_rep = |field: fn(&FoldRecord) -> f64| -> Vec<f64> {
        (0..cfg.repetitions)
            .map(|r| {
                let xs: Vec<f64> = records.iter().filter(|x| x.repetition == r).map(field).collect();
                xs.iter().sum::<f64>() / xs.len().max(1) as f64
            })
            .collect()
    };
    let (train_mean, train_std) = mean_std(&per_rep(|x| x.train_accuracy));
    let (test_mean, test_std) = mean_std(&per_rep(|x| x.test_accuracy));
    let all_separable = cfg.compute_margin && records.iter().all(|x| x.margin.is_some());
    let margin_mean = all_separable
        .then(|| records.iter().filter_map(|x| x.margin).sum::<f64>() / records.len() as f64);
    Ok(CvReport {
        kernel: cfg.kernel,
        patterns: cfg
            .patterns
            .as_ref()
            .map(|fs| {
                fs.patterns()
                    .iter()
                    .map(|f| format!("order{}-edges{}", f.order(), f.edge_count()))
                    .collect()
            })
            .unwrap_or_default(),
        folds: records,
        train_mean,
        train_std,
        test_mean,
        test_std,
        margin_mean,
        all_separable,
        multiclass: if classes.len() > 2 {
            "one-vs-rest".to_string()
        } else {
            "binary".to_string()
        },
    })
}
