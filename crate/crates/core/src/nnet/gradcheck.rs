//! Central-difference gradient check.

use ndarray::ArrayView2;

use super::train::batch_loss;
use super::{InputSource, LossSpec, Mode, ModelGraph, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest relative error per parameterized node, by name.
    pub per_node: Vec<(String, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn node_error(&self, name: &str) -> Option<f64> {
        self.per_node.iter().find(|(n, _)| n == name).map(|(_, e)| *e)
    }
}

/// Compares backpropagated gradients with `(L(w + eps) - L(w - eps)) / 2eps`
/// for every parameter. The relative error of one entry is
/// `|ga - gn| / max(|ga|, |gn|, 1e-8)`. A train mode uses fixed dropout
/// masks, so the loss stays a deterministic function of the weights.
pub fn gradient_check<S: InputSource + ?Sized>(
    graph: &ModelGraph,
    samples: &[&S],
    labels: &[f64],
    targets: Option<ArrayView2<'_, f64>>,
    spec: &LossSpec,
    mode: Mode,
    eps: f64,
) -> Result<GradCheckReport> {
    let batch = graph.assemble(samples)?;
    let (_, analytic, _) = graph.loss_and_grads(samples, labels, targets, spec, mode)?;
    let mut probe = graph.clone();
    let loss_at = |g: &ModelGraph| -> Result<f64> {
        let tape = g.forward(&batch, mode)?;
        Ok(batch_loss(g, &tape, labels, targets, spec)?.0.total)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_node: Vec::new(),
        checked: 0,
    };
    for node in 0..graph.nodes.len() {
        if graph.params[node].is_empty() {
            continue;
        }
        let mut node_max: f64 = 0.0;
        for tensor in 0..graph.params[node].len() {
            let shape = graph.params[node][tensor].dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let w = graph.params[node][tensor][[r, c]];
                    probe.params[node][tensor][[r, c]] = w + eps;
                    let plus = loss_at(&probe)?;
                    probe.params[node][tensor][[r, c]] = w - eps;
                    let minus = loss_at(&probe)?;
                    probe.params[node][tensor][[r, c]] = w;
                    let gn = (plus - minus) / (2.0 * eps);
                    let ga = analytic[node][tensor][[r, c]];
                    let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
                    node_max = node_max.max(rel);
                    report.checked += 1;
                }
            }
        }
        report.max_rel_error = report.max_rel_error.max(node_max);
        report.per_node.push((graph.nodes[node].name.clone(), node_max));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, GraphBuilder, RegKind};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    type Sample = BTreeMap<String, Array2<f64>>;

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut s = BTreeMap::new();
                s.insert(
                    "seq".into(),
                    Array2::from_shape_simple_fn((3, 5), || rng.random_range(-1.0..1.0)),
                );
                s.insert(
                    "num".into(),
                    Array2::from_shape_simple_fn((1, 4), || rng.random_range(-1.0..1.0)),
                );
                s
            })
            .collect()
    }

    #[test]
    fn dense_only() {
        let mut g = GraphBuilder::new(3);
        let x = g.vector_input("num", 4);
        let h = g.dense("hidden", x, 5, Activation::Tanh);
        let y = g.dense("out", h, 1, Activation::Sigmoid);
        let g = g.build(y, None).unwrap();
        let data = samples(6, 1);
        let refs: Vec<&Sample> = data.iter().collect();
        let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let rep = gradient_check(&g, &refs, &labels, None, &LossSpec::default(), Mode::Eval, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-7, "{rep:?}");
    }

    #[test]
    fn lstm_with_dropout_and_embedding() {
        let mut g = GraphBuilder::new(5);
        let x = g.sequence_input("seq", 3);
        let v = g.vector_input("num", 4);
        let h = g.lstm("lstm", x, 4);
        let d = g.dropout("drop", h, 0.3);
        let e = g.dense("embed", d, 3, Activation::Tanh);
        let n = g.dense("numeric", v, 2, Activation::Sigmoid);
        let c = g.concat("cat", &[e, n, h]);
        let y = g.dense("out", c, 1, Activation::Sigmoid);
        let g = g.build(y, Some(e)).unwrap();
        let data = samples(5, 2);
        let refs: Vec<&Sample> = data.iter().collect();
        let labels = [1.0, 0.0, 0.0, 1.0, 1.0];
        let targets = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) % 3) as f64 * 0.4 - 0.4);
        for reg in [RegKind::Mse, RegKind::Mae] {
            let spec = LossSpec { beta: 0.5, reg };
            let rep = gradient_check(
                &g,
                &refs,
                &labels,
                Some(targets.view()),
                &spec,
                Mode::Train { epoch: 1, batch: 0 },
                1e-5,
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "{reg:?} {rep:?}");
            assert_eq!(rep.checked, g.num_params());
        }
    }
}
