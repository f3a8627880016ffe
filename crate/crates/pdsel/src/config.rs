//! JSON pipeline configuration.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pdsel_core::{Strategy, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub models_dir: PathBuf,
    pub table: PathBuf,
    pub subset: PathBuf,
    pub selection: PathBuf,
    pub margins: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "corpus.jsonl".into(),
            models_dir: "models".into(),
            table: "pd_table.jsonl".into(),
            subset: "subset.jsonl".into(),
            selection: "selection.json".into(),
            margins: "margins.jsonl".into(),
        }
    }
}

/// Reward training hyperparameters; the seed lives in [`Seeds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub rho: f64,
    pub tau: f64,
    pub p_r: f64,
    pub balanced: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainParams {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            l2: d.l2,
            rho: d.rho,
            tau: d.tau,
            p_r: d.p_r,
            balanced: d.balanced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_prompts: usize,
    pub responses_per_prompt: usize,
    pub kappa: usize,
    pub conflict_target: f64,
    pub length_bias_prob: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub margin_noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthParams {
            n_prompts: d.n_prompts,
            responses_per_prompt: d.responses_per_prompt,
            kappa: d.kappa,
            conflict_target: d.conflict_target,
            length_bias_prob: d.length_bias_prob,
            feature_dim: d.feature_dim,
            feature_noise: d.feature_noise,
            margin_noise: d.margin_noise,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub train: u64,
    pub selection: u64,
    pub synth: u64,
    pub theory: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub train: TrainParams,
    /// Quantile level of the PD scales.
    pub gamma: f64,
    /// Margin temperature.
    pub beta: f64,
    /// Selection budget.
    pub lambda: f64,
    pub strategy: String,
    /// Per-aspect range bound used by the mild condition.
    pub r_bound: f64,
    pub seeds: Seeds,
    pub synth: SynthParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            train: TrainParams::default(),
            gamma: 0.9,
            beta: 0.1,
            lambda: 0.3,
            strategy: "PD".into(),
            r_bound: 1.0,
            seeds: Seeds::default(),
            synth: SynthParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text =
            fs::read_to_string(path).map_err(|e| Failure::usage("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage("config", format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            l2: t.l2,
            rho: t.rho,
            tau: t.tau,
            p_r: t.p_r,
            seed: self.seeds.train,
            balanced: t.balanced,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            n_prompts: s.n_prompts,
            responses_per_prompt: s.responses_per_prompt,
            kappa: s.kappa,
            conflict_target: s.conflict_target,
            length_bias_prob: s.length_bias_prob,
            feature_dim: s.feature_dim,
            feature_noise: s.feature_noise,
            margin_noise: s.margin_noise,
            seed: self.seeds.synth,
        }
    }

    pub fn strategy(&self) -> Result<Strategy, Failure> {
        self.strategy.parse().map_err(|e| Failure::usage("config", e))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::usage("config", m));
        let p = &self.paths;
        let all = [&p.dataset, &p.models_dir, &p.table, &p.subset, &p.selection, &p.margins];
        let distinct: BTreeSet<&PathBuf> = all.iter().copied().collect();
        if distinct.len() != all.len() {
            return bad("all paths must be distinct".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda must lie in (0, 1], got {}", self.lambda));
        }
        if !(self.r_bound > 0.0 && self.r_bound.is_finite()) {
            return bad(format!("r_bound must be positive, got {}", self.r_bound));
        }
        self.strategy()?;
        self.train_config()
            .validate()
            .map_err(|e| Failure::usage("config", e))?;
        self.synth_config()
            .validate()
            .map_err(|e| Failure::usage("config", e))?;
        Ok(())
    }

    /// SHA-256 of the compact JSON form, fields in declaration order.
    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

pub fn digest_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types always serialize");
    hex::encode(Sha256::digest(&json))
}

/// Provenance hash stored in every model file.
pub fn train_config_digest(config: &TrainConfig) -> String {
    #[derive(Serialize)]
    struct Canonical {
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        l2: f64,
        rho: f64,
        tau: f64,
        p_r: f64,
        seed: u64,
        balanced: bool,
    }
    digest_json(&Canonical {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        batch_size: config.batch_size,
        l2: config.l2,
        rho: config.rho,
        tau: config.tau,
        p_r: config.p_r,
        seed: config.seed,
        balanced: config.balanced,
    })
}
