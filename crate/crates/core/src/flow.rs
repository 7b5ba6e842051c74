//! Linear message passing networks trained by gradient flow, approximated by
//! explicit Euler steps.
//!
//! The network computes `y = W_L ... W_1 X A'^L 1` with `A' = A + I`, so the
//! whole dataset enters through the vectors `v_i = y_i X_i A'^L 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::margin::{min_norm_point, MarginError, SEPARABILITY_TOLERANCE};

/// Largest exponent fed to `exp`; beyond it the loss is treated as saturated.
const EXP_CLAMP: f64 = 700.0;
/// Accepted risk increase per step before the step is halved.
pub const RISK_SLACK: f64 = 1e-12;
pub const MAX_HALVINGS: usize = 20;
pub const SUPPORT_TOLERANCE: f64 = 1e-6;
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("no layers")]
    NoLayers,
    #[error("layer {layer} has {got} columns, expected {expected}")]
    Chain { layer: usize, expected: usize, got: usize },
    #[error("last layer must have one row, has {0}")]
    OutputDim(usize),
    #[error("features have {got} rows, the network expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("features have {got} columns for a graph of order {expected}")]
    FeatureCount { expected: usize, got: usize },
    #[error("label {0} is not -1 or +1")]
    Label(f64),
    #[error("sample {index} was built for depth {got}, the network has depth {expected}")]
    Depth { index: usize, expected: usize, got: usize },
    #[error("no samples")]
    NoSamples,
    #[error("initialization violates the assumption: {0}")]
    Initialization(&'static str),
    #[error("risk kept increasing after {halvings} step halvings at step {step}")]
    Divergent { step: usize, halvings: usize },
    #[error("step size {0} must be finite and non-negative")]
    StepSize(f64),
    #[error("samples are not separable through the origin")]
    NotSeparable,
    #[error(transparent)]
    Margin(#[from] MarginError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    Exponential,
    Logistic,
}

impl Loss {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Loss::Exponential => (-x).min(EXP_CLAMP).exp(),
            // log(1 + e^{-x}) without overflow
            Loss::Logistic => {
                if x > 0.0 {
                    (-x).exp().ln_1p()
                } else {
                    -x + x.exp().ln_1p()
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Loss::Exponential => -(-x).min(EXP_CLAMP).exp(),
            Loss::Logistic => {
                if x > 0.0 {
                    let e = (-x).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + x.exp())
                }
            }
        }
    }

    /// `log l(x)`, finite even where `l(x)` underflows.
    pub fn log_value(self, x: f64) -> f64 {
        match self {
            Loss::Exponential => -x,
            Loss::Logistic => {
                let v = self.value(x);
                if v > 0.0 {
                    v.ln()
                } else {
                    -x
                }
            }
        }
    }
}

/// Layer weights `W_1, ..., W_L` with `W_j` of shape `d_j x d_{j-1}` and
/// `d_L = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMpnn {
    layers: Vec<DMatrix<f64>>,
}

impl LinearMpnn {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self, FlowError> {
        if layers.is_empty() {
            return Err(FlowError::NoLayers);
        }
        for j in 1..layers.len() {
            if layers[j].ncols() != layers[j - 1].nrows() {
                return Err(FlowError::Chain {
                    layer: j,
                    expected: layers[j - 1].nrows(),
                    got: layers[j].ncols(),
                });
            }
        }
        let out = layers.last().expect("nonempty").nrows();
        if out != 1 {
            return Err(FlowError::OutputDim(out));
        }
        Ok(Self { layers })
    }

    /// Entries uniform in `[-scale, scale]`; `dims = [d_0, d_1, ..., d_L]`.
    pub fn random(dims: &[usize], scale: f64, rng: &mut impl Rng) -> Result<Self, FlowError> {
        if dims.len() < 2 {
            return Err(FlowError::NoLayers);
        }
        let layers = dims
            .windows(2)
            .map(|w| DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-scale..=scale)))
            .collect();
        Self::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    /// `W_L ... W_1` as a `1 x d_0` matrix.
    pub fn product(&self) -> DMatrix<f64> {
        self.partial(0, self.depth())
    }

    /// `W_{hi} ... W_{lo+1}` (0-based `layers[lo..hi]`); identity when empty.
    fn partial(&self, lo: usize, hi: usize) -> DMatrix<f64> {
        let d = if lo == 0 { self.input_dim() } else { self.layers[lo - 1].nrows() };
        let mut p = DMatrix::identity(d, d);
        for w in &self.layers[lo..hi] {
            p = w * p;
        }
        p
    }

    pub fn frobenius_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|w| w.norm()).collect()
    }

    /// `B_j = W_j W_j^T - W_{j+1}^T W_{j+1}` for `j = 1..L-1`.
    pub fn balance(&self) -> Vec<DMatrix<f64>> {
        (0..self.depth() - 1)
            .map(|j| {
                let (a, b) = (&self.layers[j], &self.layers[j + 1]);
                a * a.transpose() - b.transpose() * b
            })
            .collect()
    }

    fn step(&self, grads: &[DMatrix<f64>], h: f64) -> Self {
        Self {
            layers: self.layers.iter().zip(grads).map(|(w, g)| w - g * h).collect(),
        }
    }
}

/// One training graph reduced to `v = y X A'^L 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub label: f64,
    pub depth: usize,
    /// `X A'^L 1`, before the label is applied.
    pub readout: DVector<f64>,
    pub v: DVector<f64>,
}

/// `A'^L 1` for `A' = A + I`.
pub fn propagated_ones(g: &Graph, depth: usize) -> DVector<f64> {
    let n = g.order();
    let mut x = DVector::from_element(n, 1.0);
    for _ in 0..depth {
        x = DVector::from_fn(n, |v, _| x[v] + g.neighbors(v).iter().map(|&u| x[u]).sum::<f64>());
    }
    x
}

impl FlowSample {
    /// `features` is `d x n`, one column per vertex.
    pub fn new(g: &Graph, features: &DMatrix<f64>, label: f64, depth: usize) -> Result<Self, FlowError> {
        if label != 1.0 && label != -1.0 {
            return Err(FlowError::Label(label));
        }
        if features.ncols() != g.order() {
            return Err(FlowError::FeatureCount {
                expected: g.order(),
                got: features.ncols(),
            });
        }
        let readout = features * propagated_ones(g, depth);
        Ok(Self {
            label,
            depth,
            v: &readout * label,
            readout,
        })
    }

    /// Sample given directly by its `v` vector.
    pub fn from_vector(v: Vec<f64>, depth: usize) -> Self {
        let v = DVector::from_vec(v);
        Self {
            label: 1.0,
            depth,
            readout: v.clone(),
            v,
        }
    }
}

/// Network output `W_L ... W_1 X A'^L 1`.
pub fn forward(m: &LinearMpnn, g: &Graph, features: &DMatrix<f64>) -> Result<f64, FlowError> {
    if features.nrows() != m.input_dim() {
        return Err(FlowError::FeatureDim {
            expected: m.input_dim(),
            got: features.nrows(),
        });
    }
    if features.ncols() != g.order() {
        return Err(FlowError::FeatureCount {
            expected: g.order(),
            got: features.ncols(),
        });
    }
    let x = features * propagated_ones(g, m.depth());
    Ok((m.product() * x)[(0, 0)])
}

fn check_samples(m: &LinearMpnn, samples: &[FlowSample]) -> Result<(), FlowError> {
    if samples.is_empty() {
        return Err(FlowError::NoSamples);
    }
    for (index, s) in samples.iter().enumerate() {
        if s.v.len() != m.input_dim() {
            return Err(FlowError::FeatureDim {
                expected: m.input_dim(),
                got: s.v.len(),
            });
        }
        if s.depth != m.depth() {
            return Err(FlowError::Depth {
                index,
                expected: m.depth(),
                got: s.depth,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskGradient {
    pub risk: f64,
    /// `log R`, usable once `R` itself underflows.
    pub log_risk: f64,
    pub gradients: Vec<DMatrix<f64>>,
}

impl RiskGradient {
    pub fn norm(&self) -> f64 {
        self.gradients.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }
}

fn risk_only(m: &LinearMpnn, samples: &[FlowSample], loss: Loss) -> f64 {
    let p = m.product();
    samples
        .iter()
        .map(|s| loss.value((&p * &s.v)[(0, 0)]))
        .sum::<f64>()
        / samples.len() as f64
}

/// Empirical risk and its gradient with respect to every layer.
pub fn risk_and_gradient(m: &LinearMpnn, samples: &[FlowSample], loss: Loss) -> Result<RiskGradient, FlowError> {
    check_samples(m, samples)?;
    let k = samples.len() as f64;
    let p = m.product();
    let per: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let x = (&p * &s.v)[(0, 0)];
            (loss.value(x), loss.log_value(x), loss.derivative(x))
        })
        .collect();
    let risk = per.iter().map(|r| r.0).sum::<f64>() / k;
    let top = per.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let log_risk = top + per.iter().map(|r| (r.1 - top).exp()).sum::<f64>().ln() - k.ln();
    // dR/dW_prod as a 1 x d_0 row
    let mut g = DMatrix::zeros(1, m.input_dim());
    for (s, r) in samples.iter().zip(&per) {
        g += s.v.transpose() * (r.2 / k);
    }
    let depth = m.depth();
    let gradients = (0..depth)
        .map(|j| {
            let left = m.partial(j + 1, depth);
            let right = m.partial(0, j);
            left.transpose() * &g * right.transpose()
        })
        .collect();
    Ok(RiskGradient {
        risk,
        log_risk,
        gradients,
    })
}

/// Rank-one structure of a layer and of the whole product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMetrics {
    /// `|W_j / |W_j|_F - u_j v_j^T|_F` per layer; `None` for a zero layer.
    pub residuals: Vec<Option<f64>>,
    /// `|<(W_L ... W_1)^T / prod |W_j|_F, v_1>|`; `None` if a layer is zero.
    pub product_alignment: Option<f64>,
    /// Top singular value of each layer.
    pub top_singular: Vec<f64>,
}

fn top_triplet(w: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let svd = w.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut best = 0;
    for i in 1..svd.singular_values.len() {
        if svd.singular_values[i] > svd.singular_values[best] {
            best = i;
        }
    }
    (
        svd.singular_values[best],
        u.column(best).into_owned(),
        vt.row(best).transpose(),
    )
}

pub fn alignment_metrics(m: &LinearMpnn) -> AlignmentMetrics {
    let mut residuals = Vec::new();
    let mut top_singular = Vec::new();
    let mut first_right = None;
    for (j, w) in m.layers().iter().enumerate() {
        let norm = w.norm();
        let (s, u, v) = top_triplet(w);
        top_singular.push(s);
        if norm == 0.0 {
            residuals.push(None);
            continue;
        }
        residuals.push(Some((w / norm - &u * v.transpose()).norm()));
        if j == 0 {
            first_right = Some(v);
        }
    }
    let scale: f64 = m.frobenius_norms().iter().product();
    let product_alignment = match first_right {
        Some(v1) if scale > 0.0 => {
            let p = m.product();
            Some((p.row(0).transpose().dot(&v1) / scale).abs())
        }
        _ => None,
    };
    AlignmentMetrics {
        residuals,
        product_alignment,
        top_singular,
    }
}

/// `<W_L ... W_1 / prod |W_j|_F, u>` for a unit direction `u`.
pub fn reference_alignment(m: &LinearMpnn, u: &[f64]) -> Option<f64> {
    let scale: f64 = m.frobenius_norms().iter().product();
    if scale == 0.0 {
        return None;
    }
    let p = m.product();
    Some(p.row(0).iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMarginReference {
    pub gamma: f64,
    pub direction: Vec<f64>,
    pub support: Vec<usize>,
    /// Whether the support vectors span the input space.
    pub spans: bool,
}

/// Maximum-margin direction through the origin: the normalized min-norm point
/// of `conv{v_i}`.
pub fn max_margin_reference(samples: &[FlowSample]) -> Result<MaxMarginReference, FlowError> {
    if samples.is_empty() {
        return Err(FlowError::NoSamples);
    }
    let points: Vec<Vec<f64>> = samples.iter().map(|s| s.v.iter().copied().collect()).collect();
    let mnp = min_norm_point(&points)?;
    if mnp.norm <= SEPARABILITY_TOLERANCE {
        return Err(FlowError::NotSeparable);
    }
    let point = mnp.point.expect("dense input");
    let gamma = mnp.norm;
    let direction: Vec<f64> = point.iter().map(|x| x / gamma).collect();
    let support: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, v)| v.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>() <= gamma + SUPPORT_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    let d = direction.len();
    let rows = DMatrix::from_fn(support.len(), d, |r, c| points[support[r]][c]);
    let spans = rows.rank(RANK_TOLERANCE) == d;
    Ok(MaxMarginReference {
        gamma,
        direction,
        support,
        spans,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub eta: f64,
    pub steps: usize,
    pub loss: Loss,
    /// Record every `stride` accepted steps (and always the first and last).
    pub stride: usize,
    /// Use `eta / |grad R|` as the step, for the slow late phase.
    pub normalized_step: bool,
    /// Unit direction tracked by `FlowRecord::reference_alignment`.
    pub reference: Option<Vec<f64>>,
}

impl FlowConfig {
    pub fn new(eta: f64, steps: usize) -> Self {
        Self {
            eta,
            steps,
            loss: Loss::Exponential,
            stride: (steps / 1000).max(1),
            normalized_step: false,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub step: usize,
    pub time: f64,
    pub risk: f64,
    pub log_risk: f64,
    pub norms: Vec<f64>,
    pub residuals: Vec<Option<f64>>,
    pub product_alignment: Option<f64>,
    pub reference_alignment: Option<f64>,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub initial: LinearMpnn,
    pub last: LinearMpnn,
    pub balance_initial: Vec<DMatrix<f64>>,
    pub balance_final: Vec<DMatrix<f64>>,
    /// `max_j |B_j(t) - B_j(0)|_F` at the end of the run.
    pub drift: f64,
    /// `max_j |W_j(0)|_F^2 - |W_L(0)|_F^2 + sum_j |B_j(0)|_2^2`.
    pub d_constant: f64,
    /// Risks after every accepted step.
    pub risks: Vec<f64>,
    pub halvings: usize,
    pub time: f64,
}

fn drift(now: &[DMatrix<f64>], start: &[DMatrix<f64>]) -> f64 {
    now.iter().zip(start).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Checks `grad R(W(0)) != 0` and `R(W(0)) != l(0)`.
pub fn check_initialization(m: &LinearMpnn, samples: &[FlowSample], loss: Loss) -> Result<(), FlowError> {
    let rg = risk_and_gradient(m, samples, loss)?;
    if rg.norm() == 0.0 {
        return Err(FlowError::Initialization("zero gradient"));
    }
    if rg.risk == loss.value(0.0) {
        return Err(FlowError::Initialization("risk equals the loss at zero"));
    }
    Ok(())
}

/// Uniform `[-0.1, 0.1]` initialization, redrawn until it passes
/// [`check_initialization`].
pub fn random_initialization(
    dims: &[usize],
    samples: &[FlowSample],
    loss: Loss,
    rng: &mut impl Rng,
) -> Result<LinearMpnn, FlowError> {
    let mut last = FlowError::NoSamples;
    for _ in 0..1000 {
        let m = LinearMpnn::random(dims, 0.1, rng)?;
        match check_initialization(&m, samples, loss) {
            Ok(()) => return Ok(m),
            Err(e @ FlowError::Initialization(_)) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

fn record(m: &LinearMpnn, step: usize, time: f64, rg: &RiskGradient, b0: &[DMatrix<f64>], cfg: &FlowConfig) -> FlowRecord {
    let a = alignment_metrics(m);
    FlowRecord {
        step,
        time,
        risk: rg.risk,
        log_risk: rg.log_risk,
        norms: m.frobenius_norms(),
        residuals: a.residuals,
        product_alignment: a.product_alignment,
        reference_alignment: cfg.reference.as_deref().and_then(|u| reference_alignment(m, u)),
        drift: drift(&m.balance(), b0),
    }
}

/// Euler integration of `dW/dt = -grad R(W)`. A step that raises the risk
/// by more than [`RISK_SLACK`] is retried at half the size.
pub fn flow(samples: &[FlowSample], init: &LinearMpnn, cfg: &FlowConfig) -> Result<FlowTrajectory, FlowError> {
    if !(cfg.eta >= 0.0 && cfg.eta.is_finite()) {
        return Err(FlowError::StepSize(cfg.eta));
    }
    check_initialization(init, samples, cfg.loss)?;
    let b0 = init.balance();
    let w0 = init.frobenius_norms();
    let d_constant = w0.iter().map(|x| x * x).fold(0.0, f64::max) - w0[w0.len() - 1].powi(2)
        + b0.iter().map(|b| spectral_norm(b).powi(2)).sum::<f64>();

    let mut m = init.clone();
    let mut rg = risk_and_gradient(&m, samples, cfg.loss)?;
    let mut records = vec![record(&m, 0, 0.0, &rg, &b0, cfg)];
    let mut risks = vec![rg.risk];
    let mut time = 0.0;
    let mut halvings = 0;
    let stride = cfg.stride.max(1);
    for step in 1..=cfg.steps {
        let norm = rg.norm();
        if norm == 0.0 || cfg.eta == 0.0 {
            risks.push(rg.risk);
            if step % stride == 0 || step == cfg.steps {
                records.push(record(&m, step, time, &rg, &b0, cfg));
            }
            continue;
        }
        let mut h = if cfg.normalized_step { cfg.eta / norm } else { cfg.eta };
        let mut tries = 0;
        let next = loop {
            let cand = m.step(&rg.gradients, h);
            let r = risk_only(&cand, samples, cfg.loss);
            if r <= rg.risk + RISK_SLACK {
                break cand;
            }
            tries += 1;
            halvings += 1;
            if tries > MAX_HALVINGS {
                return Err(FlowError::Divergent { step, halvings: tries - 1 });
            }
            h /= 2.0;
        };
        m = next;
        time += h;
        rg = risk_and_gradient(&m, samples, cfg.loss)?;
        risks.push(rg.risk);
        if step % stride == 0 || step == cfg.steps {
            records.push(record(&m, step, time, &rg, &b0, cfg));
        }
    }
    let balance_final = m.balance();
    Ok(FlowTrajectory {
        records,
        drift: drift(&balance_final, &b0),
        initial: init.clone(),
        last: m,
        balance_initial: b0,
        balance_final,
        d_constant,
        risks,
        halvings,
        time,
    })
}

/// Two-graph separable toy problem with `d = 2` and depth 2: an edge with
/// positive label and a path on three vertices with negative label, giving
/// `v_1 = (2, 2)` and `v_2 = (2, -2)`.
pub fn toy_samples(depth: usize) -> Vec<FlowSample> {
    let edge = Graph::unlabeled(2, [(0, 1)]).expect("valid edge");
    let path = Graph::unlabeled(3, [(0, 1), (1, 2)]).expect("valid path");
    // all feature mass sits on vertex 0, scaled by its propagated weight
    let on_first = |g: &Graph, col: [f64; 2]| {
        let w = propagated_ones(g, depth)[0];
        DMatrix::from_fn(2, g.order(), |r, c| if c == 0 { col[r] / w } else { 0.0 })
    };
    let x1 = on_first(&edge, [2.0, 2.0]);
    let x2 = on_first(&path, [-2.0, 2.0]);
    vec![
        FlowSample::new(&edge, &x1, 1.0, depth).expect("toy sample"),
        FlowSample::new(&path, &x2, -1.0, depth).expect("toy sample"),
    ]
}
