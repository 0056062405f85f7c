//! The training loop: per minibatch, extract pairwise labels, optionally
//! compose samples, evaluate the total loss on raw and augmented (or
//! composite) predictions, back-propagate and update.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::composition::{self, BetaParams, CompositePlan};
use crate::data::{augment, AugmentMode, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::evaluation::clustering_accuracy;
use crate::head::{ClassifierHead, HeadKind, HeadOutput, Mlp, MlpGrads, Network, DEFAULT_HIDDEN};
use crate::losses::{self, PairTargetMatrix, RampUp};
use crate::optim::{adam_step, sgd_step, AdamParams, LrSchedule, OptimizerKind, OptimizerState};
use crate::pairwise::{build_adjacency, LabelSpace, Similarity, SimilarityConfig};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Composition {
    #[default]
    None,
    /// Two-permutation convex mixing with a Beta coefficient.
    Mixup,
    /// Plans from a caller-supplied [`PlanSource`]; by default the
    /// four-permutation patchwork weights.
    ExternalPlan,
}

impl std::str::FromStr for Composition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Composition::None),
            "mixup" => Ok(Composition::Mixup),
            "external_plan" | "ricap" => Ok(Composition::ExternalPlan),
            _ => Err(format!("unknown composition `{s}`")),
        }
    }
}

/// A trainable two-layer MLP ahead of the head. Pairwise labels are then
/// extracted from its (evolving) output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub hidden: usize,
    pub out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub similarity: SimilarityConfig,
    pub k_clusters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_init: f64,
    pub lr_steps: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    /// `None` picks 1e-4 with composition and 5e-4 otherwise.
    pub weight_decay: Option<f64>,
    pub adam: AdamParams,
    pub lambda: f64,
    pub ramp_len_epochs: usize,
    pub composition: Composition,
    pub beta: BetaParams,
    pub augment_mode: AugmentMode,
    pub augment_strength: f64,
    pub mse_enabled: bool,
    pub head_kind: HeadKind,
    pub head_hidden: usize,
    pub backbone: Option<BackboneConfig>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::feature(Similarity::Knn { k: 20 }),
            k_clusters: 10,
            epochs: 220,
            batch_size: 256,
            optimizer: OptimizerKind::Sgd,
            lr_init: 0.1,
            lr_steps: vec![140, 180],
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: None,
            adam: AdamParams::default(),
            lambda: 5.0,
            ramp_len_epochs: 100,
            composition: Composition::None,
            beta: BetaParams::default(),
            augment_mode: AugmentMode::GaussianNoise,
            augment_strength: 0.05,
            mse_enabled: true,
            head_kind: HeadKind::Linear,
            head_hidden: DEFAULT_HIDDEN,
            backbone: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or(match self.composition {
            Composition::None => 5e-4,
            _ => 1e-4,
        })
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            lr_init: self.lr_init,
            steps: self.lr_steps.clone(),
            decay_factor: self.lr_decay_factor,
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule().at(epoch)
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        if self.k_clusters < 2 {
            return Err(Error::config("k_clusters", "need at least 2 clusters"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::config("lr_init", "must be > 0"));
        }
        if !self.lr_steps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("lr_steps", "must be strictly increasing"));
        }
        if self.lr_steps.last().is_some_and(|&s| s >= self.epochs) {
            return Err(Error::config("lr_steps", "every step must be < epochs"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::config("lr_decay_factor", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay() >= 0.0) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        RampUp::new(self.lambda, self.ramp_len_epochs as u64)?;
        BetaParams::new(self.beta.alpha, self.beta.beta)?;
        if !(self.augment_strength >= 0.0) {
            return Err(Error::config("augment.strength", "must be >= 0"));
        }
        if self.augment_mode == AugmentMode::FeatureDropout && self.augment_strength >= 1.0 {
            return Err(Error::config("augment.strength", "feature dropout probability must be < 1"));
        }
        if self.head_kind == HeadKind::TwoLayer && self.head_hidden == 0 {
            return Err(Error::config("head.hidden", "must be >= 1"));
        }
        if let Some(b) = self.backbone {
            if b.hidden == 0 || b.out == 0 {
                return Err(Error::config("backbone.hidden", "backbone widths must be >= 1"));
            }
        }
        if let Similarity::Knn { k } = self.similarity.similarity {
            if k >= self.batch_size {
                return Err(Error::config(
                    "similarity.k",
                    format!("k = {k} must be smaller than batch_size = {}", self.batch_size),
                ));
            }
        }
        Ok(())
    }

    /// Smallest minibatch the similarity can label.
    fn min_batch(&self) -> usize {
        match self.similarity.similarity {
            Similarity::Knn { k } => (k + 1).max(2),
            _ => 2,
        }
    }
}

/// Supplies composite plans when `composition = external_plan`.
pub trait PlanSource {
    fn plan(&mut self, raw: ArrayView2<'_, f64>, rng: &mut RngState) -> Result<CompositePlan>;
}

/// Four-permutation patchwork weights from Beta crop sizes.
#[derive(Debug, Clone, Copy)]
pub struct PatchworkPlans(pub BetaParams);

impl PlanSource for PatchworkPlans {
    fn plan(&mut self, raw: ArrayView2<'_, f64>, rng: &mut RngState) -> Result<CompositePlan> {
        composition::patchwork_compose(raw, rng, self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub omega: f64,
    pub loss_clus: f64,
    pub loss_cons: f64,
    pub loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    /// Mean undirected off-diagonal edges per minibatch.
    pub edges: f64,
    /// Digest over every adjacency matrix built during the epoch.
    pub adjacency_digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Clustering loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub omega_trace: Vec<f64>,
    pub network: Network,
}

impl TrainReport {
    pub fn final_acc(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.acc)
    }

    /// One JSON object per epoch.
    pub fn write_stream(&self, mut out: impl Write) -> Result<()> {
        for e in &self.epochs {
            let line = serde_json::to_string(e).map_err(|err| Error::Invalid(err.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn stream_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_stream(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }
}

/// Randomly initialised network for `cfg` on `dim`-dimensional inputs.
pub fn init_network(cfg: &RunConfig, dim: usize, rng: &mut RngState) -> Result<Network> {
    let backbone = cfg.backbone.map(|b| Mlp::init(&[dim, b.hidden, b.out], rng));
    let head_in = cfg.backbone.map_or(dim, |b| b.out);
    let head = ClassifierHead::init(cfg.head_kind, head_in, cfg.head_hidden, cfg.k_clusters, rng)?;
    Ok(Network { backbone, head })
}

/// Forward state of one branch through backbone and head.
struct Branch {
    backbone: Option<crate::head::MlpTrace>,
    features: Array2<f64>,
    head: HeadOutput,
}

impl Branch {
    fn run(net: &Network, x: ArrayView2<'_, f64>) -> Result<Self> {
        let (backbone, features) = match &net.backbone {
            Some(b) => {
                let t = b.forward_traced(x)?;
                let f = t.output.clone();
                (Some(t), f)
            }
            None => (None, x.to_owned()),
        };
        let head = net.head.forward(features.view())?;
        Ok(Self { backbone, features, head })
    }

    fn probs(&self) -> ArrayView2<'_, f64> {
        self.head.probs.view()
    }

    fn backward(&self, net: &Network, grad_probs: ArrayView2<'_, f64>, acc: &mut Grads) -> Result<()> {
        let g = net.head.backward(&self.head, grad_probs)?;
        acc.head.accumulate(&g.params);
        if let (Some(b), Some(trace), Some(bg)) = (&net.backbone, &self.backbone, acc.backbone.as_mut()) {
            let (params, _) = b.backward(trace, g.features.view())?;
            bg.accumulate(&params);
        }
        Ok(())
    }
}

struct Grads {
    backbone: Option<MlpGrads>,
    head: MlpGrads,
}

impl Grads {
    fn zeros(net: &Network) -> Self {
        Self {
            backbone: net.backbone.as_ref().map(MlpGrads::zeros_like),
            head: MlpGrads::zeros_like(net.head.mlp()),
        }
    }
}

/// Outcome of a single optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub clustering: f64,
    pub consistency: f64,
    pub total: f64,
    pub edges: usize,
    pub adjacency_digest: u64,
}

/// Parameters plus everything needed to take one step on a raw minibatch.
pub struct Trainer<'a> {
    cfg: RunConfig,
    network: Network,
    state: OptimizerState,
    plans: Option<&'a mut dyn PlanSource>,
    default_plans: PatchworkPlans,
    rng: RngState,
    step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: RunConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngState::new(cfg.seed);
        let mut init_rng = rng.fork(1);
        let network = init_network(&cfg, dim, &mut init_rng)?;
        let default_plans = PatchworkPlans(cfg.beta);
        Ok(Self {
            cfg,
            network,
            state: OptimizerState::default(),
            plans: None,
            default_plans,
            rng,
            step: 0,
        })
    }

    pub fn with_plans(mut self, plans: &'a mut dyn PlanSource) -> Self {
        self.plans = Some(plans);
        self
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update on `x` with consistency weight `omega` and rate `lr`.
    pub fn step_on(&mut self, x: ArrayView2<'_, f64>, omega: f64, lr: f64) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let net = &self.network;
        let raw = Branch::run(net, x)?;
        let label_input = match cfg.similarity.space {
            LabelSpace::Feature => raw.features.view(),
            LabelSpace::Logit => raw.head.logits.view(),
        };
        let adjacency = build_adjacency(&cfg.similarity, label_input)?;
        let x_aug = augment(x, cfg.augment_mode, cfg.augment_strength, &mut self.rng)?;
        let aug = Branch::run(net, x_aug.view())?;

        let plan = match cfg.composition {
            Composition::None => None,
            Composition::Mixup => Some(composition::mixup_compose(x, &mut self.rng, cfg.beta)?),
            Composition::ExternalPlan => Some(match self.plans.as_deref_mut() {
                Some(src) => src.plan(x, &mut self.rng)?,
                None => self.default_plans.plan(x, &mut self.rng)?,
            }),
        };
        let mut grads = Grads::zeros(net);
        let loss = match &plan {
            None => {
                let targets = PairTargetMatrix::from(&adjacency);
                let l = losses::total_loss_split(raw.probs(), aug.probs(), aug.probs(), &targets, omega, cfg.mse_enabled)?;
                raw.backward(net, l.grad_p.view(), &mut grads)?;
                let g_aug = &l.grad_pair_branch + &l.grad_consistency_branch;
                aug.backward(net, g_aug.view(), &mut grads)?;
                l
            }
            Some(plan) => {
                let comp = Branch::run(net, plan.composite_features())?;
                let targets = composition::composite_targets(&adjacency, plan)?;
                let l = losses::total_loss_split(raw.probs(), comp.probs(), aug.probs(), &targets, omega, cfg.mse_enabled)?;
                raw.backward(net, l.grad_p.view(), &mut grads)?;
                comp.backward(net, l.grad_pair_branch.view(), &mut grads)?;
                if cfg.mse_enabled {
                    aug.backward(net, l.grad_consistency_branch.view(), &mut grads)?;
                }
                l
            }
        };
        if !loss.total.is_finite() {
            return Err(Error::Invalid(format!("loss diverged at step {}", self.step)));
        }
        self.apply(grads, lr)?;
        self.step += 1;
        Ok(StepOutcome {
            clustering: loss.clustering,
            consistency: loss.consistency,
            total: loss.total,
            edges: adjacency.edge_count(),
            adjacency_digest: adjacency.digest(),
        })
    }

    fn apply(&mut self, grads: Grads, lr: f64) -> Result<()> {
        let wd = self.cfg.weight_decay();
        let mut params: Vec<&mut [f64]> = Vec::new();
        let net = &mut self.network;
        if let Some(b) = net.backbone.as_mut() {
            params.extend(b.params_mut());
        }
        params.extend(net.head.mlp_mut().params_mut());
        let mut flat: Vec<&[f64]> = Vec::new();
        if let Some(b) = &grads.backbone {
            flat.extend(b.slices());
        }
        flat.extend(grads.head.slices());
        match self.cfg.optimizer {
            OptimizerKind::Sgd => sgd_step(&mut params, &flat, &mut self.state, lr, self.cfg.momentum, wd),
            OptimizerKind::Adam => adam_step(&mut params, &flat, &mut self.state, lr, self.cfg.adam, wd),
        }
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    /// Full training run over `features`.
    pub fn fit(mut self, features: &FeatureMatrix, labels: Option<&LabelVector>) -> Result<TrainReport> {
        let n = features.n_samples();
        if let Some(l) = labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} samples", l.len())));
            }
        }
        let batch = self.cfg.batch_size.min(n);
        let min_batch = self.cfg.min_batch();
        if batch < min_batch {
            return Err(Error::config(
                "batch_size",
                format!("{n} samples cannot fill a minibatch of {min_batch}"),
            ));
        }
        let steps_per_epoch = (0..n).step_by(batch).filter(|&s| (n - s).min(batch) >= min_batch).count() as u64;
        let ramp = RampUp::new(self.cfg.lambda, self.cfg.ramp_len_epochs as u64 * steps_per_epoch)?;
        let mut shuffle_rng = self.rng.fork(2);
        let mut epochs = Vec::with_capacity(self.cfg.epochs);
        let mut step_losses = Vec::new();
        let mut omega_trace = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..self.cfg.epochs {
            let lr = self.cfg.lr_at(epoch);
            shuffle_rng.shuffle(&mut order);
            let (mut clus, mut cons, mut total) = (Vec::new(), Vec::new(), Vec::new());
            let mut edges = 0usize;
            let mut digest = 0xcbf2_9ce4_8422_2325u64;
            let mut omega = 0.0;
            for chunk in order.chunks(batch) {
                if chunk.len() < min_batch {
                    continue;
                }
                // effective weight, so a disabled MSE reports like lambda = 0
                omega = if self.cfg.mse_enabled { ramp.weight(self.step) } else { 0.0 };
                let x = features.select(chunk);
                let out = self.step_on(x.view(), omega, lr)?;
                omega_trace.push(omega);
                step_losses.push(out.clustering);
                clus.push(out.clustering);
                cons.push(out.consistency);
                total.push(out.total);
                edges += out.edges;
                digest = (digest ^ out.adjacency_digest).wrapping_mul(0x0100_0000_01b3);
            }
            let mean = |v: &[f64]| losses::pairwise_sum(v) / v.len() as f64;
            let acc = match labels {
                Some(l) => Some(accuracy_of(&self.network, features, l)?),
                None => None,
            };
            epochs.push(EpochRecord {
                epoch,
                lr,
                omega,
                loss_clus: mean(&clus),
                loss_cons: mean(&cons),
                loss_total: mean(&total),
                acc,
                edges: edges as f64 / clus.len() as f64,
                adjacency_digest: digest,
            });
        }
        Ok(TrainReport {
            epochs,
            step_losses,
            omega_trace,
            network: self.network,
        })
    }
}

/// Cluster index of every sample under `network`.
pub fn predict_clusters(network: &Network, features: &FeatureMatrix) -> Result<Vec<usize>> {
    Ok(network.predict(features.view())?.argmax())
}

pub fn accuracy_of(network: &Network, features: &FeatureMatrix, labels: &LabelVector) -> Result<f64> {
    let pred = predict_clusters(network, features)?;
    Ok(clustering_accuracy(&pred, labels.as_slice(), network.head.n_clusters())?.acc)
}

pub fn train(features: &FeatureMatrix, cfg: &RunConfig, labels: Option<&LabelVector>) -> Result<TrainReport> {
    Trainer::new(cfg.clone(), features.dim())?.fit(features, labels)
}

/// As [`train`], drawing composite plans from `plans` when
/// `cfg.composition` is [`Composition::ExternalPlan`].
pub fn train_with_plans(
    features: &FeatureMatrix,
    cfg: &RunConfig,
    labels: Option<&LabelVector>,
    plans: &mut dyn PlanSource,
) -> Result<TrainReport> {
    Trainer::new(cfg.clone(), features.dim())?
        .with_plans(plans)
        .fit(features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    fn blobs(seed: u64) -> (FeatureMatrix, LabelVector) {
        let centers = vec![vec![5.0, 0.0], vec![0.0, 5.0], vec![-5.0, 0.0], vec![0.0, -5.0]];
        gen_blobs(60, &centers, 0.4, &mut RngState::new(seed)).unwrap()
    }

    fn blob_cfg() -> RunConfig {
        RunConfig {
            similarity: SimilarityConfig::feature(Similarity::Cosine { tau: 0.9 }),
            k_clusters: 4,
            epochs: 8,
            batch_size: 64,
            lr_steps: vec![],
            ramp_len_epochs: 4,
            seed: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs_before_training() {
        let mut cfg = blob_cfg();
        cfg.similarity = SimilarityConfig::feature(Similarity::Knn { k: 64 });
        let err = Trainer::new(cfg, 2).err().unwrap();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "similarity.k"));

        let mut cfg = blob_cfg();
        cfg.lr_steps = vec![5, 3];
        assert!(Trainer::new(cfg, 2).is_err());
        let mut cfg = blob_cfg();
        cfg.lr_steps = vec![8];
        assert!(Trainer::new(cfg, 2).is_err());
        let mut cfg = blob_cfg();
        cfg.k_clusters = 1;
        assert!(Trainer::new(cfg, 2).is_err());
    }

    #[test]
    fn weight_decay_follows_composition() {
        let mut cfg = blob_cfg();
        assert_eq!(cfg.weight_decay(), 5e-4);
        cfg.composition = Composition::Mixup;
        assert_eq!(cfg.weight_decay(), 1e-4);
        cfg.weight_decay = Some(2e-3);
        assert_eq!(cfg.weight_decay(), 2e-3);
    }

    #[test]
    fn one_record_per_epoch_and_deterministic() {
        let (x, y) = blobs(1);
        let cfg = blob_cfg();
        let a = train(&x, &cfg, Some(&y)).unwrap();
        let b = train(&x, &cfg, Some(&y)).unwrap();
        assert_eq!(a.epochs.len(), cfg.epochs);
        assert_eq!(a.stream_string(), b.stream_string());
        assert_eq!(a.network, b.network);
        // 240 samples in batches of 64: the 48-sample tail still counts.
        assert_eq!(a.step_losses.len(), 4 * cfg.epochs);
    }

    #[test]
    fn separable_blobs_are_recovered() {
        let (x, y) = blobs(2);
        let r = train(&x, &blob_cfg(), Some(&y)).unwrap();
        assert_eq!(r.final_acc(), Some(1.0));
    }

    #[test]
    fn clustering_loss_drops_over_first_epoch() {
        let (x, y) = blobs(4);
        let cfg = RunConfig { batch_size: 16, epochs: 2, ..blob_cfg() };
        let r = train(&x, &cfg, Some(&y)).unwrap();
        let step0 = r.step_losses[0];
        let per_epoch = r.step_losses.len() / 2;
        let epoch1: f64 = r.step_losses[per_epoch..].iter().sum::<f64>() / per_epoch as f64;
        assert!(epoch1 < 0.9 * step0, "{epoch1} vs {step0}");
    }

    #[test]
    fn disabled_mse_equals_zero_lambda() {
        let (x, y) = blobs(5);
        let off = RunConfig { mse_enabled: false, ..blob_cfg() };
        let zero = RunConfig { lambda: 0.0, ..blob_cfg() };
        let a = train(&x, &off, Some(&y)).unwrap();
        let b = train(&x, &zero, Some(&y)).unwrap();
        let totals = |r: &TrainReport| r.epochs.iter().map(|e| e.loss_total).collect::<Vec<_>>();
        assert_eq!(totals(&a), totals(&b));
        assert!(a.epochs.iter().all(|e| e.loss_cons == 0.0 && e.loss_total == e.loss_clus));
        let on = train(&x, &blob_cfg(), Some(&y)).unwrap();
        assert_ne!(a.stream_string(), on.stream_string());
    }

    #[test]
    fn logit_space_changes_the_run() {
        let (x, y) = blobs(6);
        let feat = blob_cfg();
        let logit = RunConfig {
            similarity: SimilarityConfig { space: LabelSpace::Logit, ..feat.similarity },
            ..feat.clone()
        };
        let a = train(&x, &feat, Some(&y)).unwrap();
        let b = train(&x, &logit, Some(&y)).unwrap();
        let digests = |r: &TrainReport| r.epochs.iter().map(|e| e.adjacency_digest).collect::<Vec<_>>();
        assert_ne!(digests(&a), digests(&b));
    }

    #[test]
    fn diagonal_positives_raise_self_agreement() {
        // Orthogonal inputs let the linear head move every row on its own.
        let batch = Array2::from_diag(&ndarray::Array1::from_elem(6, 1.0));
        let cfg = RunConfig {
            // No pair besides (i, i) is close enough to be linked.
            similarity: SimilarityConfig::feature(Similarity::L2 { tau: 1e-12 }),
            k_clusters: 6,
            batch_size: 6,
            augment_strength: 0.0,
            mse_enabled: false,
            momentum: 0.0,
            weight_decay: Some(0.0),
            ..blob_cfg()
        };
        let mut t = Trainer::new(cfg, 6).unwrap();
        let agreement = |t: &Trainer| {
            let p = t.network().predict(batch.view()).unwrap().into_inner();
            (0..p.nrows()).map(|i| p.row(i).dot(&p.row(i))).collect::<Vec<_>>()
        };
        let start = agreement(&t);
        let mut prev = start.clone();
        for _ in 0..60 {
            t.step_on(batch.view(), 0.0, 2.0).unwrap();
            let now = agreement(&t);
            for (a, b) in prev.iter().zip(&now) {
                assert!(b > a, "{a} -> {b}");
            }
            prev = now;
        }
        assert!(prev.iter().zip(&start).all(|(a, s)| *a > s + 0.1));
    }

    #[test]
    fn two_layer_head_and_compositions_run() {
        let (x, y) = blobs(8);
        for comp in [Composition::None, Composition::Mixup, Composition::ExternalPlan] {
            let cfg = RunConfig {
                head_kind: HeadKind::TwoLayer,
                head_hidden: 16,
                composition: comp,
                epochs: 3,
                ..blob_cfg()
            };
            let r = train(&x, &cfg, Some(&y)).unwrap();
            assert_eq!(r.epochs.len(), 3);
            assert!(r.network.head.mlp().is_finite());
        }
    }

    #[test]
    fn omega_trace_follows_steps() {
        let (x, _) = blobs(9);
        let cfg = blob_cfg();
        let r = train(&x, &cfg, None).unwrap();
        let total = 4 * cfg.ramp_len_epochs as u64;
        let ramp = RampUp::new(cfg.lambda, total).unwrap();
        for (t, w) in r.omega_trace.iter().enumerate() {
            assert_eq!(*w, ramp.weight(t as u64));
        }
        assert!(r.final_acc().is_none());
    }
}
