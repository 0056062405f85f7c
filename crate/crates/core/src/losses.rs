//! Pairwise clustering BCE, consistency MSE and the ramp-up weight.
//!
//! All losses take plain probability matrices and return the value together
//! with its gradient w.r.t. both probability inputs.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Clamp applied to pair agreements before taking logs.
pub const AGREEMENT_EPS: f64 = 1e-7;

/// Value and gradients of a loss over the raw and the second branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_p: Array2<f64>,
    pub grad_p_prime: Array2<f64>,
}

impl LossOutput {
    fn zeros(b: usize, k: usize) -> Self {
        Self {
            value: 0.0,
            grad_p: Array2::zeros((b, k)),
            grad_p_prime: Array2::zeros((b, k)),
        }
    }
}

/// B×B pairwise targets in [0, 1]; rows index raw samples, columns index
/// samples of the second branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTargetMatrix(Array2<f64>);

impl PairTargetMatrix {
    pub fn new(t: Array2<f64>) -> Result<Self> {
        if t.nrows() != t.ncols() {
            return Err(Error::Shape("pair targets must be square".into()));
        }
        if let Some(v) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pair target {v} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

impl From<&crate::pairwise::AdjacencyMatrix> for PairTargetMatrix {
    fn from(a: &crate::pairwise::AdjacencyMatrix) -> Self {
        Self(a.to_targets())
    }
}

fn check_pair(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!(
            "probability matrices differ: {:?} vs {:?}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// Unclamped `p_i · p'_j` for every pair.
fn raw_agreement(p: ArrayView2<'_, f64>, p_prime: ArrayView2<'_, f64>) -> Array2<f64> {
    p.dot(&p_prime.t())
}

/// Probability that `i` and `j` share a cluster, `p_i · p'_j`, clamped to
/// `[ε, 1 − ε]`.
pub fn pair_agreement(p: ArrayView2<'_, f64>, p_prime: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_pair(p, p_prime)?;
    Ok(raw_agreement(p, p_prime).mapv(|q| q.clamp(AGREEMENT_EPS, 1.0 - AGREEMENT_EPS)))
}

/// `−Σ_ij [t_ij log q_ij + (1 − t_ij) log(1 − q_ij)] / B²` on clamped
/// agreements. Pairs whose agreement sits in the clamped region contribute no
/// gradient.
pub fn clustering_loss(
    p: ArrayView2<'_, f64>,
    p_prime: ArrayView2<'_, f64>,
    targets: &PairTargetMatrix,
) -> Result<LossOutput> {
    check_pair(p, p_prime)?;
    let b = p.nrows();
    if targets.len() != b {
        return Err(Error::Shape(format!(
            "{}x{} targets for a batch of {b}",
            targets.len(),
            targets.len()
        )));
    }
    let norm = 1.0 / (b * b) as f64;
    let raw = raw_agreement(p, p_prime);
    let t = targets.view();
    let mut dq = Array2::<f64>::zeros((b, b));
    let mut row_sums = Vec::with_capacity(b);
    for i in 0..b {
        let mut acc = 0.0;
        for j in 0..b {
            let r = raw[[i, j]];
            let q = r.clamp(AGREEMENT_EPS, 1.0 - AGREEMENT_EPS);
            let tij = t[[i, j]];
            acc -= tij * q.ln() + (1.0 - tij) * (1.0 - q).ln();
            if r > AGREEMENT_EPS && r < 1.0 - AGREEMENT_EPS {
                dq[[i, j]] = -norm * (tij / q - (1.0 - tij) / (1.0 - q));
            }
        }
        row_sums.push(acc);
    }
    Ok(LossOutput {
        value: pairwise_sum(&row_sums) * norm,
        grad_p: dq.dot(&p_prime),
        grad_p_prime: dq.t().dot(&p),
    })
}

/// `ω / (K·B) Σ_i ‖p_i − p'_i‖²`.
pub fn consistency_mse(
    p: ArrayView2<'_, f64>,
    p_prime: ArrayView2<'_, f64>,
    omega: f64,
) -> Result<LossOutput> {
    check_pair(p, p_prime)?;
    if !(omega >= 0.0) {
        return Err(Error::Invalid(format!("consistency weight must be >= 0, got {omega}")));
    }
    let (b, k) = p.dim();
    if omega == 0.0 {
        return Ok(LossOutput::zeros(b, k));
    }
    let scale = omega / (k * b) as f64;
    let diff = &p - &p_prime;
    let rows: Vec<f64> = diff.rows().into_iter().map(|r| r.dot(&r)).collect();
    let grad_p = diff.mapv(|d| 2.0 * scale * d);
    let grad_p_prime = grad_p.mapv(|g| -g);
    Ok(LossOutput {
        value: scale * pairwise_sum(&rows),
        grad_p,
        grad_p_prime,
    })
}

/// Sigmoid-shaped ramp `λ exp(−5 (1 − t/T)²)`, held at `λ` from `t = T` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampUp {
    pub lambda: f64,
    pub ramp_len: u64,
}

impl RampUp {
    pub fn new(lambda: f64, ramp_len: u64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", "must be a finite value >= 0"));
        }
        if ramp_len == 0 {
            return Err(Error::config("ramp_len_epochs", "ramp-up length must be >= 1"));
        }
        Ok(Self { lambda, ramp_len })
    }

    pub fn weight(&self, t: u64) -> f64 {
        rampup_weight(self, t)
    }
}

pub fn rampup_weight(cfg: &RampUp, t: u64) -> f64 {
    if t >= cfg.ramp_len {
        return cfg.lambda;
    }
    let phase = 1.0 - t as f64 / cfg.ramp_len as f64;
    cfg.lambda * (-5.0 * phase * phase).exp()
}

/// Clustering term plus (optionally) the consistency term.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub clustering: f64,
    pub consistency: f64,
    pub total: f64,
    pub grad_p: Array2<f64>,
    /// Gradient w.r.t. the branch paired by the clustering term.
    pub grad_pair_branch: Array2<f64>,
    /// Gradient w.r.t. the branch paired by the consistency term.
    pub grad_consistency_branch: Array2<f64>,
}

/// Clustering loss of `p` against `p_pair` plus consistency MSE of `p`
/// against `p_cons`. Without composition both branches are the same
/// augmented predictions, and the two gradients can simply be added.
pub fn total_loss_split(
    p: ArrayView2<'_, f64>,
    p_pair: ArrayView2<'_, f64>,
    p_cons: ArrayView2<'_, f64>,
    targets: &PairTargetMatrix,
    omega: f64,
    mse_enabled: bool,
) -> Result<TotalLoss> {
    let clus = clustering_loss(p, p_pair, targets)?;
    let cons = if mse_enabled {
        consistency_mse(p, p_cons, omega)?
    } else {
        check_pair(p, p_cons)?;
        LossOutput::zeros(p.nrows(), p.ncols())
    };
    Ok(TotalLoss {
        clustering: clus.value,
        consistency: cons.value,
        total: clus.value + cons.value,
        grad_p: clus.grad_p + &cons.grad_p,
        grad_pair_branch: clus.grad_p_prime,
        grad_consistency_branch: cons.grad_p_prime,
    })
}

/// Total loss with a single second branch `p'`.
pub fn total_loss(
    p: ArrayView2<'_, f64>,
    p_prime: ArrayView2<'_, f64>,
    targets: &PairTargetMatrix,
    omega: f64,
    mse_enabled: bool,
) -> Result<LossOutput> {
    let t = total_loss_split(p, p_prime, p_prime, targets, omega, mse_enabled)?;
    Ok(LossOutput {
        value: t.total,
        grad_p: t.grad_p,
        grad_p_prime: t.grad_pair_branch + &t.grad_consistency_branch,
    })
}

/// Sums by recursive halving so the result does not depend on how callers
/// chunk the work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
