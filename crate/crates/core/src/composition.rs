//! Composite minibatches and their pairwise targets.
//!
//! A composite sample `j` mixes the raw samples `σ(j)` over a set of
//! permutations `σ` with convex weights `w_σ`. Its target against raw sample
//! `i` is `Σ_σ w_σ A[i, σ(j)]`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::losses::{self, LossOutput, PairTargetMatrix};
use crate::pairwise::AdjacencyMatrix;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config("beta.alpha", "must be > 0"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config("beta.beta", "must be > 0"));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.3 }
    }
}

/// One draw from Beta(α, β), kept inside the open interval (0, 1).
pub fn sample_beta(params: BetaParams, rng: &mut RngState) -> f64 {
    let dist = rand_distr::Beta::new(params.alpha, params.beta).expect("validated Beta parameters");
    rng.sample(&dist).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Permutations, their weights, and the composite features they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositePlan {
    perms: Vec<Vec<usize>>,
    weights: Vec<f64>,
    composite_features: Array2<f64>,
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
}

impl CompositePlan {
    /// Validates the permutations and weights and mixes `features` with them.
    pub fn new(features: ArrayView2<'_, f64>, perms: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        let b = features.nrows();
        if perms.is_empty() || perms.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "{} permutations with {} weights",
                perms.len(),
                weights.len()
            )));
        }
        if let Some(p) = perms.iter().find(|p| p.len() != b || !is_permutation(p)) {
            return Err(Error::Invalid(format!("not a permutation of 0..{b}: {p:?}")));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Invalid("composition weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("composition weights sum to {total}, not 1")));
        }
        let mut composite = Array2::<f64>::zeros(features.raw_dim());
        for (perm, &w) in perms.iter().zip(&weights) {
            if w != 0.0 {
                composite.scaled_add(w, &features.select(Axis(0), perm));
            }
        }
        Ok(Self {
            perms,
            weights,
            composite_features: composite,
        })
    }

    pub fn identity(features: ArrayView2<'_, f64>) -> Self {
        Self::new(features, vec![(0..features.nrows()).collect()], vec![1.0]).expect("identity plan")
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn composite_features(&self) -> ArrayView2<'_, f64> {
        self.composite_features.view()
    }

    pub fn batch_size(&self) -> usize {
        self.composite_features.nrows()
    }
}

/// MixUp with a given coefficient and partner permutation:
/// `m · f_i + (1 − m) · f_{π(i)}`.
pub fn mixup_with(features: ArrayView2<'_, f64>, m: f64, partner: Vec<usize>) -> Result<CompositePlan> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Invalid(format!("mixing weight {m} outside [0, 1]")));
    }
    let identity = (0..features.nrows()).collect();
    CompositePlan::new(features, vec![identity, partner], vec![m, 1.0 - m])
}

/// MixUp with one Beta-distributed coefficient for the whole minibatch and a
/// random partner permutation.
pub fn mixup_compose(features: ArrayView2<'_, f64>, rng: &mut RngState, params: BetaParams) -> Result<CompositePlan> {
    if features.nrows() < 2 {
        return Err(Error::Invalid("mixup needs a batch of at least 2".into()));
    }
    let m = sample_beta(params, rng);
    let partner = rng.permutation(features.nrows());
    mixup_with(features, m, partner)
}

/// Four-way patchwork label arithmetic: crop width and height `(w, h)` drawn
/// from Beta, weights are the four patch areas `wh, (1−w)h, w(1−h),
/// (1−w)(1−h)`, each over its own random permutation. Features are mixed with
/// the same weights since feature vectors have no spatial layout to crop.
pub fn patchwork_compose(features: ArrayView2<'_, f64>, rng: &mut RngState, params: BetaParams) -> Result<CompositePlan> {
    if features.nrows() < 2 {
        return Err(Error::Invalid("composition needs a batch of at least 2".into()));
    }
    let w = sample_beta(params, rng);
    let h = sample_beta(params, rng);
    let weights = vec![w * h, (1.0 - w) * h, w * (1.0 - h), (1.0 - w) * (1.0 - h)];
    let perms = (0..4).map(|_| rng.permutation(features.nrows())).collect();
    CompositePlan::new(features, perms, weights)
}

/// `t_ij = Σ_σ w_σ A[i, σ(j)]`.
pub fn composite_targets(a: &AdjacencyMatrix, plan: &CompositePlan) -> Result<PairTargetMatrix> {
    let b = a.len();
    if plan.batch_size() != b {
        return Err(Error::Shape(format!(
            "plan over {} samples for a {b}x{b} adjacency",
            plan.batch_size()
        )));
    }
    let av = a.view();
    let mut t = Array2::<f64>::zeros((b, b));
    for (perm, &w) in plan.perms.iter().zip(&plan.weights) {
        for i in 0..b {
            for j in 0..b {
                t[[i, j]] += w * f64::from(av[[i, perm[j]]]);
            }
        }
    }
    // weights sum to 1 only within 1e-9
    t.mapv_inplace(|v| v.clamp(0.0, 1.0));
    PairTargetMatrix::new(t)
}

/// Clustering loss between raw predictions and predictions on the composite
/// batch, against composite targets.
pub fn composite_clustering_loss(
    p: ArrayView2<'_, f64>,
    p_tilde: ArrayView2<'_, f64>,
    a: &AdjacencyMatrix,
    plan: &CompositePlan,
) -> Result<LossOutput> {
    let t = composite_targets(a, plan)?;
    losses::clustering_loss(p, p_tilde, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn beta_uniform_mean() {
        let mut rng = RngState::new(1);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_beta(BetaParams::new(1.0, 1.0).unwrap(), &mut rng)).sum::<f64>() / n as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
    }

    /// CDF of Beta(a, a) at `x` by midpoint quadrature of the density after
    /// the substitution u = x^{a}, which removes the endpoint singularity.
    fn beta_cdf_symmetric(a: f64, x: f64) -> f64 {
        let n = 200_000;
        let integrate = |upper: f64| -> f64 {
            // ∫_0^upper t^{a-1}(1-t)^{a-1} dt = (1/a)∫_0^{upper^a} (1-u^{1/a})^{a-1} du
            let top = upper.powf(a);
            let h = top / n as f64;
            (0..n)
                .map(|k| {
                    let u = (k as f64 + 0.5) * h;
                    (1.0 - u.powf(1.0 / a)).powf(a - 1.0)
                })
                .sum::<f64>()
                * h
                / a
        };
        // by symmetry the full integral is twice the integral to 1/2
        let half = integrate(0.5);
        if x <= 0.5 {
            integrate(x) / (2.0 * half)
        } else {
            1.0 - integrate(1.0 - x) / (2.0 * half)
        }
    }

    #[test]
    fn beta_point_three_is_u_shaped() {
        let params = BetaParams::default();
        let outside = 1.0 - (beta_cdf_symmetric(0.3, 0.8) - beta_cdf_symmetric(0.3, 0.2));
        assert!(outside > 0.6, "oracle mass outside (0.2, 0.8): {outside}");
        let mut rng = RngState::new(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_beta(params, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
        let frac = draws.iter().filter(|&&x| x <= 0.2 || x >= 0.8).count() as f64 / n as f64;
        assert!(frac >= 0.6);
        assert!((frac - outside).abs() < 0.01, "empirical {frac} vs oracle {outside}");
        assert!(draws.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn beta_deterministic() {
        let p = BetaParams::default();
        assert_eq!(sample_beta(p, &mut RngState::new(9)), sample_beta(p, &mut RngState::new(9)));
    }

    #[test]
    fn mixup_degenerate_weights() {
        let f = array![[1.0, 2.0], [3.0, 6.0]];
        let plan = mixup_with(f.view(), 1.0, vec![1, 0]).unwrap();
        assert_eq!(plan.composite_features(), f.view());
        let a = AdjacencyMatrix::from_fn(2, |_, _| false);
        assert_eq!(composite_targets(&a, &plan).unwrap().view(), a.to_targets().view());
        let half = mixup_with(f.view(), 0.5, vec![1, 0]).unwrap();
        assert_eq!(half.composite_features(), array![[2.0, 4.0], [2.0, 4.0]].view());
    }

    #[test]
    fn mixup_rows_recompute_from_plan() {
        let mut rng = RngState::new(3);
        let f = Array2::from_shape_fn((7, 3), |_| rng.normal());
        let plan = mixup_compose(f.view(), &mut rng, BetaParams::default()).unwrap();
        let m = plan.weights()[0];
        let pi = &plan.perms()[1];
        assert!(plan.perms()[0].iter().enumerate().all(|(i, &j)| i == j));
        for i in 0..7 {
            for c in 0..3 {
                let expect = m * f[[i, c]] + (1.0 - m) * f[[pi[i], c]];
                assert!((plan.composite_features()[[i, c]] - expect).abs() < 1e-12);
            }
        }
        assert!(mixup_compose(f.slice(ndarray::s![..1, ..]), &mut rng, BetaParams::default()).is_err());
    }

    #[test]
    fn four_way_caption_target() {
        // raw sample 1 against composite j built from samples (1, 5, 7, 2)
        let b = 8;
        let a = AdjacencyMatrix::from_fn(b, |_, _| false);
        let sources = [1usize, 5, 7, 2];
        let perms: Vec<Vec<usize>> = sources
            .iter()
            .map(|&s| {
                let mut p: Vec<usize> = (0..b).collect();
                p.swap(1, s);
                p
            })
            .collect();
        let f = Array2::<f64>::zeros((b, 2));
        let plan = CompositePlan::new(f.view(), perms, vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let t = composite_targets(&a, &plan).unwrap();
        assert!((t.view()[[1, 1]] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn targets_match_scalar_loop() {
        let mut rng = RngState::new(12);
        let b = 9;
        let a = AdjacencyMatrix::from_fn(b, |_, _| rng.uniform() < 0.3);
        let f = Array2::from_shape_fn((b, 2), |_| rng.normal());
        let plan = mixup_compose(f.view(), &mut rng, BetaParams::default()).unwrap();
        let t = composite_targets(&a, &plan).unwrap();
        for i in 0..b {
            for j in 0..b {
                let mut s = 0.0;
                for (perm, w) in plan.perms().iter().zip(plan.weights()) {
                    if a.get(i, perm[j]) {
                        s += w;
                    }
                }
                assert!((t.view()[[i, j]] - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_plan_reduces_to_plain_loss() {
        let mut rng = RngState::new(5);
        let p = crate::head::softmax(Array2::from_shape_fn((4, 3), |_| rng.normal()).view());
        let q = crate::head::softmax(Array2::from_shape_fn((4, 3), |_| rng.normal()).view());
        let a = AdjacencyMatrix::from_fn(4, |i, j| (i + j) % 2 == 0);
        let plan = CompositePlan::identity(Array2::<f64>::zeros((4, 1)).view());
        let c = composite_clustering_loss(p.view(), q.view(), &a, &plan).unwrap();
        let plain = losses::clustering_loss(p.view(), q.view(), &(&a).into()).unwrap();
        assert_eq!(c, plain);
    }

    #[test]
    fn plan_validation() {
        let f = Array2::<f64>::zeros((3, 1));
        assert!(CompositePlan::new(f.view(), vec![vec![0, 0, 1]], vec![1.0]).is_err());
        assert!(CompositePlan::new(f.view(), vec![vec![0, 1, 2]], vec![0.5]).is_err());
        assert!(CompositePlan::new(f.view(), vec![vec![0, 1]], vec![1.0]).is_err());
        assert!(CompositePlan::new(f.view(), vec![], vec![]).is_err());
        let mut rng = RngState::new(0);
        let p = patchwork_compose(f.view(), &mut rng, BetaParams::default()).unwrap();
        assert_eq!(p.perms().len(), 4);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
