use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cv_inner, with_jobs, CvConfig, ExperimentError, Result};
use crate::features::SegmentSample;
use crate::models::{
    Architecture, EdaParams, EnhancedParams, FusionParams, HyperParams, KinematicParams,
};
use crate::nnet::{Activation, RegKind};
use crate::rng;

/// Random-search ranges. Rates are uniform, learning rate and β are
/// log-uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub lstm_sizes: Vec<usize>,
    pub dense_sizes: Vec<usize>,
    pub rate: (f64, f64),
    pub lr: (f64, f64),
    pub activations: Vec<Activation>,
    pub beta: (f64, f64),
    pub regs: Vec<RegKind>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lstm_sizes: vec![32, 64, 96, 128],
            dense_sizes: vec![24, 32, 40, 48],
            rate: (0.1, 0.3),
            lr: (1e-4, 5e-3),
            activations: vec![Activation::Tanh, Activation::Relu, Activation::Sigmoid],
            beta: (0.01, 1.0),
            regs: vec![RegKind::Mse, RegKind::Mae],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let empty = self.lstm_sizes.is_empty()
            || self.dense_sizes.is_empty()
            || self.activations.is_empty()
            || self.regs.is_empty();
        if empty {
            return Err(ExperimentError::InvalidSpec("search space has an empty choice list".into()));
        }
        let ok_range = |(lo, hi): (f64, f64), positive: bool| lo <= hi && lo.is_finite() && hi.is_finite() && (!positive || lo > 0.0);
        if !(ok_range(self.rate, false) && self.rate.0 >= 0.0 && self.rate.1 < 1.0) {
            return Err(ExperimentError::InvalidSpec(format!("bad dropout range {:?}", self.rate)));
        }
        if !ok_range(self.lr, true) || !ok_range(self.beta, true) {
            return Err(ExperimentError::InvalidSpec("learning rate and beta ranges must be positive".into()));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo..=hi)
}

/// Draws one configuration of `arch` from `space`.
pub fn sample_params(arch: Architecture, space: &SearchSpace, rng: &mut ChaCha8Rng) -> HyperParams {
    let pick = |v: &[usize], r: &mut ChaCha8Rng| *v.choose(r).expect("validated non-empty");
    let act = |r: &mut ChaCha8Rng| *space.activations.choose(r).expect("validated non-empty");
    match arch {
        Architecture::Eda => HyperParams::Eda(EdaParams {
            lstm_size: pick(&space.lstm_sizes, rng),
            dense_size_1: pick(&space.dense_sizes, rng),
            dense_size_2: pick(&space.dense_sizes, rng),
            acti: act(rng),
            rate: uniform(rng, space.rate),
            lr: log_uniform(rng, space.lr),
        }),
        Architecture::Kinematic => HyperParams::Kinematic(KinematicParams {
            lstm_size: pick(&space.lstm_sizes, rng),
            dense_size: pick(&space.dense_sizes, rng),
            acti: act(rng),
            rate: uniform(rng, space.rate),
            lr: log_uniform(rng, space.lr),
        }),
        Architecture::Fusion => HyperParams::Fusion(FusionParams {
            lstm_size_1: pick(&space.lstm_sizes, rng),
            lstm_size_2: pick(&space.lstm_sizes, rng),
            dense_size_1: pick(&space.dense_sizes, rng),
            dense_size_2: pick(&space.dense_sizes, rng),
            acti_1: act(rng),
            acti_2: act(rng),
            rate: uniform(rng, space.rate),
            lr: log_uniform(rng, space.lr),
        }),
        Architecture::Enhanced => HyperParams::Enhanced(EnhancedParams {
            lstm_size: pick(&space.lstm_sizes, rng),
            dense_size_1: pick(&space.dense_sizes, rng),
            dense_size_2: pick(&space.dense_sizes, rng),
            dense_size_3: pick(&space.dense_sizes, rng),
            acti_1: act(rng),
            acti_2: act(rng),
            acti_3: act(rng),
            rate_1: uniform(rng, space.rate),
            rate_2: uniform(rng, space.rate),
            rate_3: uniform(rng, space.rate),
            lr: log_uniform(rng, space.lr),
            beta: log_uniform(rng, space.beta),
            loss: *space.regs.choose(rng).expect("validated non-empty"),
            teacher_projection: false,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: HyperParams,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: HyperParams,
    pub best_index: usize,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

/// Seeded random search scored by cross-validation. `baseline`, when
/// given, is evaluated as trial 0 ahead of the `budget` sampled configs.
/// Ties go to the earlier trial.
pub fn tune_random_search(
    arch: Architecture,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    samples: &[SegmentSample],
    cfg: &CvConfig,
    baseline: Option<HyperParams>,
) -> Result<TuneResult> {
    if budget == 0 {
        return Err(ExperimentError::InvalidSpec("budget must be at least 1".into()));
    }
    space.validate()?;
    let mut candidates: Vec<HyperParams> = baseline.into_iter().collect();
    if let Some(b) = candidates.first() {
        if b.architecture() != arch {
            return Err(ExperimentError::InvalidSpec("baseline architecture differs from the search".into()));
        }
    }
    candidates.extend((0..budget).map(|t| sample_params(arch, space, &mut rng::stream(seed, &[0x70e, t as u64]))));
    let trials = with_jobs(cfg.jobs, || {
        candidates
            .into_iter()
            .enumerate()
            .map(|(index, params)| {
                let cv = cv_inner(&params, samples, cfg)?;
                log::info!("trial {index}: {:.4}", cv.mean_accuracy);
                Ok(Trial {
                    index,
                    params,
                    mean_accuracy: cv.mean_accuracy,
                    std_accuracy: cv.std_accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let best = trials
        .iter()
        .fold(&trials[0], |b, t| if t.mean_accuracy > b.mean_accuracy { t } else { b });
    Ok(TuneResult {
        best: best.params.clone(),
        best_index: best.index,
        best_score: best.mean_accuracy,
        trials,
    })
}
