//! Fine-tuning the layer-1 weights of the heuristic network.
//!
//! The three weights are shared by all variables, so
//! `y_v = sum_i weights[i] * F_i(v) / feature_scale[i]`. The permutation
//! layer is kept fixed and relaxed to a softmax over its `n!` neuron
//! scores; the loss is the cross-entropy against the cost-optimal ordering
//! of each training problem, found by brute force through the oracle.
//! Weights are updated with Adam on shuffled mini-batches and the network
//! is evaluated on a validation set by the total cost of its hard (argmax)
//! orderings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{all_ordering_costs, optimal_ordering, CostError, CostOracle};
use crate::datagen::sha256_hex;
use crate::features::{FeatureDescriptor, FeatureError, Triplet};
use crate::heuristics::{FeatureMatrix, VariableOrder, MAX_EXPLICIT_VARS};
use crate::polyset::ProblemInstance;

/// Base weight of the Brown-equivalent starting point.
pub const INIT_BASE_WEIGHT: f64 = 30.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} variables exceed the softmax layer limit of {MAX_EXPLICIT_VARS}")]
    TooManyVars(usize),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss or weights")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// When the validation set is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSchedule {
    #[default]
    Epoch,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Divide each feature by its training-set maximum magnitude.
    pub scale_features: bool,
    pub eval: EvalSchedule,
    /// Starting weights in scaled space; Brown's `(w^2, w, 1)` when absent.
    pub init: Option<[f64; 3]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 3,
            batch_size: 32,
            temperature: 1.0,
            seed: 0,
            scale_features: true,
            eval: EvalSchedule::Epoch,
            init: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the weights untouched.
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning rate must be finite and nonnegative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("beta1 and beta2 must lie in (0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if self.init.is_some_and(|w| w.iter().any(|x| !x.is_finite())) {
            return fail("initial weights must be finite");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableNetwork {
    pub triplet: Triplet,
    pub weights: [f64; 3],
    pub feature_scale: [f64; 3],
}

impl TrainableNetwork {
    /// Brown's weights `(900, 30, 1)` on raw features, expressed in scaled space.
    pub fn brown_init(triplet: Triplet, feature_scale: [f64; 3]) -> Self {
        let w = INIT_BASE_WEIGHT;
        let raw = [w * w, w, 1.0];
        TrainableNetwork {
            triplet,
            weights: [0, 1, 2].map(|i| raw[i] * feature_scale[i]),
            feature_scale,
        }
    }

    /// Scales from the training set and starting weights from `cfg`.
    pub fn for_training(triplet: Triplet, train_set: &[ProblemInstance], cfg: &TrainConfig) -> Result<Self, TrainError> {
        let scale = if cfg.scale_features {
            feature_scales(&triplet, train_set)?
        } else {
            [1.0; 3]
        };
        let mut net = Self::brown_init(triplet, scale);
        if let Some(w) = cfg.init {
            net.weights = w;
        }
        Ok(net)
    }

    /// Weights acting on unscaled features.
    pub fn effective_weights(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.weights[i] / self.feature_scale[i])
    }

    pub fn layer1(&self, fm: &FeatureMatrix) -> Vec<f64> {
        fm.to_f64()
            .iter()
            .map(|row| (0..3).map(|i| self.weights[i] * row[i] / self.feature_scale[i]).sum())
            .collect()
    }

    /// Hard ordering: the first maximal permutation neuron, or the
    /// descending sort of `y` beyond the explicit layer limit.
    pub fn hard_order(&self, fm: &FeatureMatrix) -> VariableOrder {
        let y = self.layer1(fm);
        if y.len() > MAX_EXPLICIT_VARS {
            let mut perm: Vec<usize> = (0..y.len()).collect();
            perm.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
            return VariableOrder::new(perm).expect("permutation");
        }
        let orders: Vec<VariableOrder> = VariableOrder::all(y.len()).collect();
        let scores: Vec<f64> = orders.iter().map(|o| score(o, &y)).collect();
        orders[first_argmax(&scores)].clone()
    }
}

fn score(o: &VariableOrder, y: &[f64]) -> f64 {
    let n = o.len();
    o.perm().iter().enumerate().map(|(pos, &v)| (n - pos) as f64 * y[v]).sum()
}

fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Largest magnitude of each feature over a dataset, 1 where it is 0.
pub fn feature_scales(triplet: &Triplet, dataset: &[ProblemInstance]) -> Result<[f64; 3], TrainError> {
    let mut scale = [0.0f64; 3];
    for pr in dataset {
        for row in FeatureMatrix::compute(triplet, pr)?.to_f64() {
            for i in 0..3 {
                scale[i] = scale[i].max(row[i].abs());
            }
        }
    }
    Ok(scale.map(|s| if s > 0.0 { s } else { 1.0 }))
}

/// A problem reduced to what the loss needs: `grads[k][i]` is the
/// derivative of neuron `k`'s score with respect to `weights[i]`. Scores
/// are linear in the weights, so `score_k = grads[k] . weights`.
#[derive(Debug, Clone)]
struct Sample {
    grads: Vec<[f64; 3]>,
    target: usize,
}

impl Sample {
    fn new(fm: &FeatureMatrix, scale: &[f64; 3], target: Option<&VariableOrder>) -> Result<Self, TrainError> {
        let n = fm.n_vars();
        if n > MAX_EXPLICIT_VARS {
            return Err(TrainError::TooManyVars(n));
        }
        let x = fm.to_f64();
        let mut target_index = 0;
        let grads = VariableOrder::all(n)
            .enumerate()
            .map(|(k, o)| {
                if Some(&o) == target {
                    target_index = k;
                }
                let mut g = [0.0; 3];
                for (pos, &v) in o.perm().iter().enumerate() {
                    for i in 0..3 {
                        g[i] += (n - pos) as f64 * x[v][i] / scale[i];
                    }
                }
                g
            })
            .collect();
        Ok(Sample {
            grads,
            target: target_index,
        })
    }

    fn scores(&self, w: &[f64; 3]) -> Vec<f64> {
        self.grads.iter().map(|g| g[0] * w[0] + g[1] * w[1] + g[2] * w[2]).collect()
    }

    fn probabilities(&self, w: &[f64; 3], temperature: f64) -> Vec<f64> {
        softmax(&self.scores(w), temperature)
    }

    /// Cross-entropy and its gradient.
    fn loss_grad(&self, w: &[f64; 3], temperature: f64) -> (f64, [f64; 3]) {
        let s = self.scores(w);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| ((x - max) / temperature).exp()).sum();
        let loss = z.ln() - (s[self.target] - max) / temperature;
        let mut g = [0.0; 3];
        for (sk, gk) in s.iter().zip(&self.grads) {
            let p = ((sk - max) / temperature).exp() / z;
            for i in 0..3 {
                g[i] += p * gk[i];
            }
        }
        let t = &self.grads[self.target];
        (loss, [0, 1, 2].map(|i| (g[i] - t[i]) / temperature))
    }
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Softmax probabilities of the permutation neurons, in lexicographic
/// ordering order.
pub fn forward_soft(net: &TrainableNetwork, fm: &FeatureMatrix, temperature: f64) -> Result<Vec<f64>, TrainError> {
    let s = Sample::new(fm, &net.feature_scale, None)?;
    Ok(s.probabilities(&net.weights, temperature))
}

fn prepare(net: &TrainableNetwork, batch: &[(FeatureMatrix, VariableOrder)]) -> Result<Vec<Sample>, TrainError> {
    batch
        .iter()
        .map(|(fm, t)| Sample::new(fm, &net.feature_scale, Some(t)))
        .collect()
}

fn batch_loss_grad(samples: &[&Sample], w: &[f64; 3], temperature: f64) -> (f64, [f64; 3]) {
    let parts: Vec<(f64, [f64; 3])> = samples.par_iter().map(|s| s.loss_grad(w, temperature)).collect();
    let n = samples.len().max(1) as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for (l, gi) in parts {
        loss += l;
        for i in 0..3 {
            g[i] += gi[i];
        }
    }
    (loss / n, g.map(|x| x / n))
}

/// Mean cross-entropy of the batch targets.
pub fn loss(net: &TrainableNetwork, batch: &[(FeatureMatrix, VariableOrder)], temperature: f64) -> Result<f64, TrainError> {
    let samples = prepare(net, batch)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(batch_loss_grad(&refs, &net.weights, temperature).0)
}

/// Gradient of [`loss`] with respect to the (scaled-space) weights.
pub fn gradient(net: &TrainableNetwork, batch: &[(FeatureMatrix, VariableOrder)], temperature: f64) -> Result<[f64; 3], TrainError> {
    let samples = prepare(net, batch)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(batch_loss_grad(&refs, &net.weights, temperature).1)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: [f64; 3],
    v: [f64; 3],
    t: i32,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: [0.0; 3],
            v: [0.0; 3],
            t: 0,
        }
    }

    pub fn step(&mut self, w: &mut [f64; 3], g: &[f64; 3]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..3 {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            w[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Validation snapshot after `step` optimizer updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub step: usize,
    /// Mean loss over the whole training set.
    pub train_loss: f64,
    pub val_total_cost: f64,
    /// Share of validation problems whose chosen ordering has optimal cost.
    pub val_accuracy: f64,
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub oracle_id: String,
    pub triplet: [u32; 3],
    pub config: TrainConfig,
    pub feature_scale: [f64; 3],
    pub history: Vec<EvalPoint>,
    /// Index into `history` with the lowest validation cost, earliest on ties.
    pub best: usize,
    pub best_epoch: usize,
    pub best_weights: [f64; 3],
    pub final_weights: [f64; 3],
}

impl TrainReport {
    pub fn best_point(&self) -> &EvalPoint {
        &self.history[self.best]
    }

    pub fn initial_point(&self) -> &EvalPoint {
        &self.history[0]
    }
}

/// Weights file written next to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub weights: [f64; 3],
    pub feature_scale: [f64; 3],
    pub triplet: [u32; 3],
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(net: &TrainableNetwork, cfg: &TrainConfig) -> Self {
        Checkpoint {
            weights: net.weights,
            feature_scale: net.feature_scale,
            triplet: net.triplet.map(|f| f.code()),
            config_hash: cfg.hash(),
        }
    }

    pub fn network(&self) -> Option<TrainableNetwork> {
        let mut triplet = [FeatureDescriptor::from_code(0)?; 3];
        for (slot, &c) in triplet.iter_mut().zip(&self.triplet) {
            *slot = FeatureDescriptor::from_code(c).filter(FeatureDescriptor::is_valid)?;
        }
        Some(TrainableNetwork {
            triplet,
            weights: self.weights,
            feature_scale: self.feature_scale,
        })
    }
}

struct ValItem {
    fm: FeatureMatrix,
    costs: Vec<f64>,
    best: f64,
}

fn validate_net(net: &TrainableNetwork, val: &[ValItem]) -> (f64, f64) {
    let picks: Vec<(f64, bool)> = val
        .par_iter()
        .map(|item| {
            let o = net.hard_order(&item.fm);
            let k = VariableOrder::all(o.len()).position(|p| p == o).expect("ordering of the right size");
            (item.costs[k], item.costs[k] == item.best)
        })
        .collect();
    let total = picks.iter().map(|p| p.0).sum();
    let hits = picks.iter().filter(|p| p.1).count();
    (total, hits as f64 / val.len() as f64)
}

/// Trains `net` and returns the report; the weights with the lowest
/// validation cost are in `best_weights`. Deterministic in `cfg.seed`.
pub fn train(
    net: &TrainableNetwork,
    train_set: &[ProblemInstance],
    val_set: &[ProblemInstance],
    oracle: &dyn CostOracle,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if let Some(pr) = train_set.iter().chain(val_set).find(|p| p.n_vars() > MAX_EXPLICIT_VARS) {
        return Err(TrainError::TooManyVars(pr.n_vars()));
    }

    let samples: Vec<Sample> = train_set
        .par_iter()
        .map(|pr| {
            let fm = FeatureMatrix::compute(&net.triplet, pr)?;
            let (target, _) = optimal_ordering(oracle, pr)?;
            Sample::new(&fm, &net.feature_scale, Some(&target))
        })
        .collect::<Result<_, TrainError>>()?;
    let val: Vec<ValItem> = val_set
        .par_iter()
        .map(|pr| {
            let fm = FeatureMatrix::compute(&net.triplet, pr)?;
            let costs: Vec<f64> = all_ordering_costs(oracle, pr)?.into_iter().map(|(_, c)| c).collect();
            let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(ValItem { fm, costs, best })
        })
        .collect::<Result<_, TrainError>>()?;
    let all: Vec<&Sample> = samples.iter().collect();

    let mut net = net.clone();
    let mut adam = Adam::new(cfg);
    let mut history = Vec::new();
    let snapshot = |net: &TrainableNetwork, epoch: usize, step: usize| -> Result<EvalPoint, TrainError> {
        let (train_loss, _) = batch_loss_grad(&all, &net.weights, cfg.temperature);
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, step });
        }
        let (val_total_cost, val_accuracy) = validate_net(net, &val);
        Ok(EvalPoint {
            epoch,
            step,
            train_loss,
            val_total_cost,
            val_accuracy,
            weights: net.weights,
        })
    };
    history.push(snapshot(&net, 0, 0)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (l, g) = batch_loss_grad(&batch, &net.weights, cfg.temperature);
            step += 1;
            if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::Diverged { epoch, step });
            }
            adam.step(&mut net.weights, &g);
            if net.weights.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::Diverged { epoch, step });
            }
            if cfg.eval == EvalSchedule::Batch {
                history.push(snapshot(&net, epoch, step)?);
            }
        }
        if cfg.eval == EvalSchedule::Epoch {
            history.push(snapshot(&net, epoch, step)?);
        }
    }

    let best = (0..history.len())
        .min_by(|&a, &b| history[a].val_total_cost.total_cmp(&history[b].val_total_cost).then(a.cmp(&b)))
        .expect("history is nonempty");
    Ok(TrainReport {
        oracle_id: oracle.id(),
        triplet: net.triplet.map(|f| f.code()),
        config: cfg.clone(),
        feature_scale: net.feature_scale,
        best,
        best_epoch: history[best].epoch,
        best_weights: history[best].weights,
        final_weights: net.weights,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::SyntheticCostModel;
    use crate::datagen::{e1, e2, random_dataset, GenConfig};
    use crate::features::{brown_features, selected_triplet};
    use crate::heuristics::{layer2_argmax, HeuristicNetwork};
    use crate::polyset::parse_problem;

    fn brown_net() -> TrainableNetwork {
        TrainableNetwork::brown_init(brown_features(), [1.0; 3])
    }

    fn fm(pr: &ProblemInstance) -> FeatureMatrix {
        FeatureMatrix::compute(&brown_features(), pr).unwrap()
    }

    fn ord(p: &[usize]) -> VariableOrder {
        VariableOrder::new(p.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_are_uniform() {
        let net = TrainableNetwork {
            weights: [0.0; 3],
            ..brown_net()
        };
        let p = forward_soft(&net, &fm(&e1()), 1.0).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-15));
        let l = loss(&net, &[(fm(&e1()), ord(&[2, 1, 0]))], 1.0).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn frozen_weights_favor_brown_on_e2() {
        let p = forward_soft(&brown_net(), &fm(&e2()), 1.0).unwrap();
        let (best, _) = p.iter().enumerate().fold((0, 0.0), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
        assert_eq!(best, 0, "x>y>z is the first ordering");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let l = loss(&brown_net(), &[(fm(&e2()), ord(&[0, 1, 2]))], 1.0).unwrap();
        assert!(l < 6f64.ln());
    }

    #[test]
    fn hard_order_matches_exact_network() {
        let ds = random_dataset(&GenConfig { seed: 21, ..GenConfig::default() }, 1000).unwrap();
        let exact = HeuristicNetwork::frozen(brown_features(), 30);
        for pr in &ds {
            let m = fm(pr);
            assert_eq!(brown_net().hard_order(&m), layer2_argmax(&exact.layer1_forward(&m)).unwrap());
        }
    }

    #[test]
    fn symmetric_problem_has_zero_gradient() {
        let pr = parse_problem("vars: x,y,z\nx + y + z\nx*y*z - 2").unwrap();
        let net = TrainableNetwork {
            weights: [0.3, -1.2, 2.0],
            ..brown_net()
        };
        for t in VariableOrder::all(3) {
            let g = gradient(&net, &[(fm(&pr), t)], 1.0).unwrap();
            assert!(g.iter().all(|x| x.abs() < 1e-8), "{g:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = random_dataset(&GenConfig { seed: 8, ..GenConfig::default() }, 12).unwrap();
        let scale = feature_scales(&brown_features(), &ds).unwrap();
        let batch: Vec<_> = ds
            .iter()
            .enumerate()
            .map(|(i, pr)| (fm(pr), VariableOrder::all(3).nth(i % 6).unwrap()))
            .collect();
        let net = TrainableNetwork {
            triplet: brown_features(),
            weights: [0.7, -0.4, 1.3],
            feature_scale: scale,
        };
        let g = gradient(&net, &batch, 0.8).unwrap();
        let h = 1e-4;
        for i in 0..3 {
            let mut up = net.clone();
            let mut down = net.clone();
            up.weights[i] += h;
            down.weights[i] -= h;
            let fd = (loss(&up, &batch, 0.8).unwrap() - loss(&down, &batch, 0.8).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(g[i].abs()).max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradient_shrinks_as_target_probability_grows() {
        // scaling weights that already favor the target sharpens the softmax
        let sample = (fm(&e2()), ord(&[0, 1, 2]));
        let norms: Vec<f64> = [1e-4, 5e-4, 2e-3, 1e-2]
            .iter()
            .map(|&s| {
                let net = TrainableNetwork {
                    weights: brown_net().weights.map(|w| w * s),
                    ..brown_net()
                };
                let g = gradient(&net, std::slice::from_ref(&sample), 1.0).unwrap();
                g.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn single_adam_step_by_hand() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(&cfg);
        let mut w = [1.0, 2.0, 3.0];
        let g = [0.5, -2.0, 0.0];
        adam.step(&mut w, &g);
        // first step: m_hat = g and v_hat = g^2, so the move is lr * g / (|g| + eps)
        let expect = [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 2.0 + 0.1 * 2.0 / (2.0 + 1e-8), 3.0];
        for i in 0..3 {
            assert!((w[i] - expect[i]).abs() < 1e-15);
        }
        // second step with the same gradient keeps the same bias-corrected ratio
        adam.step(&mut w, &g);
        assert!((w[0] - (expect[0] - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn one_sample_training_step_matches_adam() {
        let ds = vec![e2()];
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 1,
            scale_features: false,
            init: Some([0.2, 0.1, -0.3]),
            ..TrainConfig::default()
        };
        let oracle = SyntheticCostModel::default();
        let net = TrainableNetwork::for_training(brown_features(), &ds, &cfg).unwrap();
        let r = train(&net, &ds, &ds, &oracle, &cfg).unwrap();
        let (target, _) = optimal_ordering(&oracle, &e2()).unwrap();
        let g = gradient(&net, &[(fm(&e2()), target)], 1.0).unwrap();
        let mut w = net.weights;
        Adam::new(&cfg).step(&mut w, &g);
        assert_eq!(r.final_weights, w);
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let ds = random_dataset(&GenConfig::default(), 40).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        let net = TrainableNetwork::for_training(brown_features(), &ds, &cfg).unwrap();
        let r = train(&net, &ds, &ds, &SyntheticCostModel::default(), &cfg).unwrap();
        assert_eq!(r.history.len(), 3);
        assert!(r.history.iter().all(|p| p.weights == net.weights && p == &EvalPoint { epoch: p.epoch, step: p.step, ..r.history[0].clone() }));
        assert_eq!(r.final_weights, net.weights);
        assert_eq!(r.best, 0);
    }

    #[test]
    fn brown_init_reproduces_frozen_orders() {
        let ds = random_dataset(&GenConfig { seed: 2, ..GenConfig::default() }, 50).unwrap();
        let net = TrainableNetwork::for_training(brown_features(), &ds, &TrainConfig::default()).unwrap();
        assert!(net.effective_weights().iter().zip([900.0, 30.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-9));
        for pr in &ds {
            let m = fm(pr);
            assert_eq!(net.hard_order(&m), brown_net().hard_order(&m));
        }
    }

    #[test]
    fn deterministic_and_batch_schedule() {
        let ds = random_dataset(&GenConfig::default(), 30).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 2,
            batch_size: 8,
            eval: EvalSchedule::Batch,
            init: Some([1.0, 0.0, 0.0]),
            ..TrainConfig::default()
        };
        let net = TrainableNetwork::for_training(selected_triplet(), &ds, &cfg).unwrap();
        let a = train(&net, &ds, &ds, &SyntheticCostModel::default(), &cfg).unwrap();
        let b = train(&net, &ds, &ds, &SyntheticCostModel::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 1 + 2 * 4);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = vec![e1(), e2()];
        let cfg = TrainConfig {
            init: Some([f64::MAX, f64::MAX, 0.0]),
            scale_features: false,
            ..TrainConfig::default()
        };
        let net = TrainableNetwork::for_training(brown_features(), &ds, &cfg).unwrap();
        assert!(matches!(
            train(&net, &ds, &ds, &SyntheticCostModel::default(), &cfg),
            Err(TrainError::Diverged { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = TrainConfig::default();
        let c = Checkpoint::new(&brown_net(), &cfg);
        let back: Checkpoint = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.network().unwrap(), brown_net());
        assert_eq!(back.config_hash, cfg.hash());
    }
}
