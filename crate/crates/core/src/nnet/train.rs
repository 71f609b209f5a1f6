//! Losses, Adam and the mini-batch training loop.

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Grads, InputSource, Mode, ModelGraph, NnetError, Result, Tape};
use crate::rng;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    Mse,
    Mae,
}

impl std::str::FromStr for RegKind {
    type Err = NnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            _ => Err(NnetError::InvalidConfig(format!("unknown regression loss `{s}`"))),
        }
    }
}

/// `L = L_pre + beta * L_reg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub beta: f64,
    pub reg: RegKind,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            beta: 0.0,
            reg: RegKind::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub pre: f64,
    pub reg: f64,
}

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn reg_loss(kind: RegKind, e: &[f64], t: &[f64]) -> f64 {
    let n = e.len() as f64;
    match kind {
        RegKind::Mse => e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        RegKind::Mae => e.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
    }
}

/// Loss of a single sample. The regression term needs both vectors; it is
/// zero when neither is given.
pub fn composite_loss(
    spec: &LossSpec,
    p: f64,
    y: f64,
    embedding: Option<&[f64]>,
    teacher: Option<&[f64]>,
) -> Result<LossValue> {
    let pre = bce(p, y);
    let reg = match (embedding, teacher) {
        (Some(e), Some(t)) if e.len() == t.len() && !e.is_empty() => reg_loss(spec.reg, e, t),
        (Some(e), Some(t)) => {
            return Err(NnetError::ShapeMismatch(format!(
                "embedding width {} differs from teacher width {}",
                e.len(),
                t.len()
            )))
        }
        (None, None) => 0.0,
        _ if spec.beta == 0.0 => 0.0,
        _ => {
            return Err(NnetError::ShapeMismatch(
                "regression term needs both embedding and teacher".into(),
            ))
        }
    };
    Ok(LossValue {
        total: pre + spec.beta * reg,
        pre,
        reg,
    })
}

/// Mean loss over a batch and the gradient seeds for [`ModelGraph::backward`].
pub(crate) fn batch_loss(
    graph: &ModelGraph,
    tape: &Tape,
    labels: &[f64],
    targets: Option<ArrayView2<'_, f64>>,
    spec: &LossSpec,
) -> Result<(LossValue, Vec<(usize, Array2<f64>)>)> {
    let probs = tape.probabilities();
    let n = probs.len() as f64;
    let mut seeds = Vec::new();
    let mut d_out = Array2::zeros((probs.len(), 1));
    let mut total = LossValue::default();
    for (b, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        total.pre += bce(p, y);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let dp = if pc == p {
            (-y / p + (1.0 - y) / (1.0 - p)) / n
        } else {
            0.0
        };
        d_out[[b, 0]] = dp;
    }
    seeds.push((graph.output, d_out));
    if let Some(t) = targets {
        let e_node = graph
            .embedding
            .ok_or_else(|| NnetError::InvalidGraph("teacher targets given but graph has no embedding".into()))?;
        let e = tape.node_output(e_node).expect("embedding is vector-valued");
        if e.dim() != t.dim() {
            return Err(NnetError::ShapeMismatch(format!(
                "embedding batch {:?} differs from teacher batch {:?}",
                e.dim(),
                t.dim()
            )));
        }
        let w = e.ncols() as f64;
        for (er, tr) in e.rows().into_iter().zip(t.rows()) {
            total.reg += reg_loss(spec.reg, er.as_slice().unwrap(), &tr.to_vec());
        }
        if spec.beta != 0.0 {
            let scale = spec.beta / (n * w);
            let mut d_e = Array2::zeros(e.raw_dim());
            Zip::from(&mut d_e).and(e).and(t).for_each(|d, &a, &b| {
                *d = match spec.reg {
                    RegKind::Mse => 2.0 * (a - b) * scale,
                    RegKind::Mae => (a - b).signum() * if a == b { 0.0 } else { scale },
                }
            });
            seeds.push((e_node, d_e));
        }
    } else if spec.beta != 0.0 {
        return Err(NnetError::InvalidConfig("beta > 0 requires teacher targets".into()));
    }
    total.pre /= n;
    total.reg /= n;
    total.total = total.pre + spec.beta * total.reg;
    Ok((total, seeds))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Grads,
    v: Grads,
    pub t: u64,
}

impl AdamState {
    pub fn new(graph: &ModelGraph) -> Self {
        Self {
            m: graph.zero_grads(),
            v: graph.zero_grads(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut [Vec<Array2<f64>>],
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) {
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .flatten()
        .zip(grads.iter().flatten())
        .zip(state.m.iter_mut().flatten())
        .zip(state.v.iter_mut().flatten())
    {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossSpec,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: LossSpec::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnetError::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnetError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.loss.beta >= 0.0 && self.loss.beta.is_finite()) {
            return Err(NnetError::InvalidConfig("beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Samples, 0/1 labels and optional teacher vectors (one row per sample).
pub struct TrainSet<'a, S: ?Sized> {
    pub samples: Vec<&'a S>,
    pub labels: Vec<f64>,
    pub targets: Option<Array2<f64>>,
}

impl<'a, S: InputSource + ?Sized> TrainSet<'a, S> {
    pub fn new(samples: Vec<&'a S>, labels: Vec<f64>) -> Self {
        Self {
            samples,
            labels,
            targets: None,
        }
    }

    pub fn with_targets(mut self, targets: Array2<f64>) -> Self {
        self.targets = Some(targets);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(NnetError::EmptyDataset);
        }
        if self.labels.len() != self.samples.len() {
            return Err(NnetError::ShapeMismatch(format!(
                "{} labels for {} samples",
                self.labels.len(),
                self.samples.len()
            )));
        }
        if let Some(t) = &self.targets {
            if t.nrows() != self.samples.len() {
                return Err(NnetError::ShapeMismatch(format!(
                    "{} teacher rows for {} samples",
                    t.nrows(),
                    self.samples.len()
                )));
            }
        }
        Ok(())
    }

    fn select_targets(&self, idx: &[usize]) -> Option<Array2<f64>> {
        self.targets.as_ref().map(|t| t.select(ndarray::Axis(0), idx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub pre_loss: f64,
    pub reg_loss: f64,
    pub accuracy: f64,
}

impl ModelGraph {
    /// Loss and gradients for one batch.
    pub fn loss_and_grads<S: InputSource + ?Sized>(
        &self,
        samples: &[&S],
        labels: &[f64],
        targets: Option<ArrayView2<'_, f64>>,
        spec: &LossSpec,
        mode: Mode,
    ) -> Result<(LossValue, Grads, Vec<f64>)> {
        let tape = self.forward(&self.assemble(samples)?, mode)?;
        let (loss, seeds) = batch_loss(self, &tape, labels, targets, spec)?;
        let grads = self.backward(&tape, seeds)?;
        Ok((loss, grads, tape.probabilities()))
    }

    /// Mean eval-mode loss over a whole set.
    pub fn evaluate_loss<S: InputSource + ?Sized>(&self, set: &TrainSet<'_, S>, spec: &LossSpec) -> Result<LossValue> {
        set.check()?;
        let mut acc = LossValue::default();
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(256) {
            let samples: Vec<&S> = chunk.iter().map(|&i| set.samples[i]).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| set.labels[i]).collect();
            let targets = set.select_targets(chunk);
            let tape = self.forward(&self.assemble(&samples)?, Mode::Eval)?;
            let (l, _) = batch_loss(self, &tape, &labels, targets.as_ref().map(|a| a.view()), spec)?;
            let w = chunk.len() as f64;
            acc.pre += l.pre * w;
            acc.reg += l.reg * w;
        }
        let n = set.len() as f64;
        acc.pre /= n;
        acc.reg /= n;
        acc.total = acc.pre + spec.beta * acc.reg;
        Ok(acc)
    }

    /// Shuffled mini-batch Adam training. Remainder batches are kept.
    pub fn train<S: InputSource + ?Sized>(
        &mut self,
        set: &TrainSet<'_, S>,
        config: &TrainConfig,
    ) -> Result<Vec<EpochStats>> {
        config.validate()?;
        set.check()?;
        let mut adam = AdamState::new(self);
        let mut history = Vec::with_capacity(config.epochs);
        let mut order: Vec<usize> = (0..set.len()).collect();
        for epoch in 0..config.epochs {
            let e = (self.trained_epochs + epoch) as u64;
            order.sort_unstable();
            order.shuffle(&mut rng::stream(config.shuffle_seed, &[0x5u64, e]));
            let mut stats = EpochStats {
                epoch: self.trained_epochs + epoch,
                loss: 0.0,
                pre_loss: 0.0,
                reg_loss: 0.0,
                accuracy: 0.0,
            };
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let samples: Vec<&S> = chunk.iter().map(|&i| set.samples[i]).collect();
                let labels: Vec<f64> = chunk.iter().map(|&i| set.labels[i]).collect();
                let targets = set.select_targets(chunk);
                let (loss, grads, probs) = self.loss_and_grads(
                    &samples,
                    &labels,
                    targets.as_ref().map(|a| a.view()),
                    &config.loss,
                    Mode::Train { epoch: e, batch: b as u64 },
                )?;
                adam_step(
                    &mut self.params,
                    &grads,
                    &mut adam,
                    config.learning_rate,
                    (config.beta1, config.beta2, config.epsilon),
                );
                let w = chunk.len() as f64;
                stats.loss += loss.total * w;
                stats.pre_loss += loss.pre * w;
                stats.reg_loss += loss.reg * w;
                stats.accuracy += probs
                    .iter()
                    .zip(&labels)
                    .filter(|(&p, &y)| f64::from(u8::from(p >= 0.5)) == y)
                    .count() as f64;
            }
            let n = set.len() as f64;
            stats.loss /= n;
            stats.pre_loss /= n;
            stats.reg_loss /= n;
            stats.accuracy /= n;
            log::debug!(
                "epoch {} loss {:.5} acc {:.4}",
                stats.epoch,
                stats.loss,
                stats.accuracy
            );
            history.push(stats);
        }
        self.trained_epochs += config.epochs;
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, GraphBuilder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    type Sample = BTreeMap<String, Array2<f64>>;

    #[test]
    fn loss_examples() {
        let spec = LossSpec::default();
        let l = composite_loss(&spec, 0.5, 1.0, None, None).unwrap();
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-15);
        let e = [0.2, -1.0, 3.0];
        let spec = LossSpec {
            beta: 0.7,
            reg: RegKind::Mae,
        };
        let l = composite_loss(&spec, 0.3, 0.0, Some(&e), Some(&e)).unwrap();
        assert_eq!(l.total, l.pre);
        assert!(composite_loss(&spec, 0.3, 0.0, Some(&e), Some(&e[..2])).is_err());
        assert!(bce(0.0, 1.0).is_finite());
        assert!(bce(1.0, 0.0).is_finite());
    }

    #[test]
    fn composite_loss_matches_formula() {
        let beta = 0.11850082837080077;
        let spec = LossSpec {
            beta,
            reg: RegKind::Mse,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p: f64 = rng.random_range(0.01..0.99);
            let y = f64::from(rng.random_range(0..2u8));
            let e: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut sq = 0.0;
            for i in 0..5 {
                sq += (e[i] - t[i]).powi(2);
            }
            let want = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()) + beta * sq / 5.0;
            let got = composite_loss(&spec, p, y, Some(&e), Some(&t)).unwrap().total;
            assert!((got - want).abs() < 1e-12);
        }
    }

    fn scalar_graph() -> ModelGraph {
        let mut g = GraphBuilder::new(0);
        let x = g.vector_input("v", 1);
        let y = g.dense("out", x, 1, Activation::Sigmoid);
        g.build(y, None).unwrap()
    }

    #[test]
    fn adam_first_step() {
        let mut g = scalar_graph();
        g.fill_params(0.0);
        let mut state = AdamState::new(&g);
        let mut grads = g.zero_grads();
        grads[1][0].fill(1.0);
        adam_step(&mut g.params, &grads, &mut state, 0.001, (0.9, 0.999, 1e-8));
        assert!((g.params[1][0][[0, 0]] + 0.001).abs() < 1e-10);
        // A zero gradient leaves parameters alone.
        let before = g.params.clone();
        let (zero, mut fresh) = (g.zero_grads(), AdamState::new(&g));
        adam_step(&mut g.params, &zero, &mut fresh, 0.001, (0.9, 0.999, 1e-8));
        assert_eq!(g.params, before);
    }

    fn toy_set(n: usize, seed: u64) -> (Vec<Sample>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 2) as f64;
            let m = Array2::from_shape_simple_fn((3, 6), || rng.random_range(-0.5..0.5) + y - 0.5);
            let mut s = BTreeMap::new();
            s.insert("seq".to_string(), m);
            samples.push(s);
            labels.push(y);
        }
        (samples, labels)
    }

    fn small_lstm(seed: u64) -> ModelGraph {
        let mut g = GraphBuilder::new(seed);
        let x = g.sequence_input("seq", 3);
        let h = g.lstm("lstm", x, 6);
        let d = g.dropout("drop", h, 0.2);
        let z = g.dense("hidden", d, 4, Activation::Relu);
        let y = g.dense("out", z, 1, Activation::Sigmoid);
        g.build(y, Some(z)).unwrap()
    }

    #[test]
    fn memorizes_constant_dataset() {
        let (samples, _) = toy_set(1, 0);
        let refs: Vec<&Sample> = (0..16).map(|_| &samples[0]).collect();
        let set = TrainSet::new(refs, vec![1.0; 16]);
        let mut g = small_lstm(1);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let hist = g.train(&set, &cfg).unwrap();
        assert_eq!(hist.last().unwrap().accuracy, 1.0);
        assert_eq!(g.trained_epochs, 5);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (samples, labels) = toy_set(40, 3);
        let set = TrainSet::new(samples.iter().collect(), labels);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            shuffle_seed: 9,
            ..TrainConfig::default()
        };
        let mut a = small_lstm(2);
        let mut b = small_lstm(2);
        let ha = a.train(&set, &cfg).unwrap();
        let hb = b.train(&set, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
        assert!(ha.last().unwrap().accuracy >= 0.95, "{:?}", ha.last());
        let eval = a.evaluate_loss(&set, &cfg.loss).unwrap();
        assert!(eval.pre < ha[0].pre_loss);
    }

    #[test]
    fn beta_zero_matches_plain_training() {
        let (samples, labels) = toy_set(20, 5);
        let targets = Array2::from_shape_fn((20, 4), |(i, j)| ((i * 7 + j) % 5) as f64 / 5.0);
        let plain = TrainSet::new(samples.iter().collect(), labels.clone());
        let distil = TrainSet::new(samples.iter().collect(), labels).with_targets(targets);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 6,
            ..TrainConfig::default()
        };
        let mut a = small_lstm(4);
        let mut b = small_lstm(4);
        let ha = a.train(&plain, &cfg).unwrap();
        let hb = b.train(&distil, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        for (x, y) in ha.iter().zip(&hb) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.accuracy, y.accuracy);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (samples, labels) = toy_set(4, 0);
        let set = TrainSet::new(samples.iter().collect(), labels);
        let mut g = small_lstm(0);
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(g.train(&set, &cfg), Err(NnetError::InvalidConfig(_))));
        }
        let empty: TrainSet<'_, Sample> = TrainSet::new(vec![], vec![]);
        assert!(matches!(g.train(&empty, &TrainConfig::default()), Err(NnetError::EmptyDataset)));
    }
}
