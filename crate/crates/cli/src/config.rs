use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cyberseer::experiments::{
    CvConfig, FoldSpec, Grouping, SampleControl, SearchSpace, DEFAULT_EXPOSURE_N, DEFAULT_SPANS,
    EXPOSURE_TS,
};
use cyberseer::features::FeatureConfig;
use cyberseer::models::{self, Architecture, HyperParams};
use cyberseer::nnet::TrainConfig;
use cyberseer::telemetry::SyntheticConfig;
use serde::{Deserialize, Serialize};

/// Settings shared by every subcommand. Loaded from a TOML or JSON file,
/// then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub out: PathBuf,
    /// Feature store; defaults to `<out>/features_ts<T_s>.csf`.
    pub store: Option<PathBuf>,
    /// Model checkpoint; defaults to `<out>/model_<preset>.json`.
    pub checkpoint: Option<PathBuf>,
    pub ts: usize,
    pub k: usize,
    pub grouping: Grouping,
    pub preset: Architecture,
    /// Replaces the shipped preset for `preset`'s architecture.
    pub hyperparams: Option<HyperParams>,
    pub seed: u64,
    pub jobs: usize,
    pub control: SampleControl,
    pub spans: Vec<usize>,
    pub exposure_ts: usize,
    pub exposure_n: Vec<usize>,
    pub budget: usize,
    pub sessions: usize,
    pub train: TrainConfig,
    pub generator: SyntheticConfig,
    pub features: FeatureConfig,
    pub search: SearchSpace,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            out: "out".into(),
            store: None,
            checkpoint: None,
            ts: 30,
            k: 5,
            grouping: Grouping::Session,
            preset: Architecture::Kinematic,
            hyperparams: None,
            seed: 0,
            jobs: 1,
            control: SampleControl::None,
            spans: DEFAULT_SPANS.to_vec(),
            exposure_ts: EXPOSURE_TS,
            exposure_n: DEFAULT_EXPOSURE_N.to_vec(),
            budget: 20,
            sessions: 157,
            train: TrainConfig::default(),
            generator: SyntheticConfig::default(),
            features: FeatureConfig::default(),
            search: SearchSpace::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => bail!("config {} must end in .toml or .json", path.display()),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ts == 0 {
            bail!("ts must be at least 1");
        }
        if self.k < 2 {
            bail!("k must be at least 2");
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if let Some(hp) = &self.hyperparams {
            if hp.architecture() != self.preset {
                bail!("hyperparams are for {} but preset is {}", hp.architecture(), self.preset);
            }
            hp.validate()?;
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn store_path(&self) -> PathBuf {
        self.store
            .clone()
            .unwrap_or_else(|| self.out.join(format!("features_ts{}.csf", self.ts)))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(format!("model_{}.json", self.preset)))
    }

    pub fn hyperparams_for(&self, arch: Architecture) -> HyperParams {
        match &self.hyperparams {
            Some(hp) if hp.architecture() == arch => hp.clone(),
            _ => models::preset(arch),
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            folds: FoldSpec {
                k: self.k,
                grouping: self.grouping,
                seed: self.seed,
            },
            train: self.train.clone(),
            teacher: match self.hyperparams_for(Architecture::Eda) {
                HyperParams::Eda(p) => p,
                _ => unreachable!("eda architecture yields eda params"),
            },
            features: self.features.clone(),
            jobs: self.jobs,
        }
    }
}
