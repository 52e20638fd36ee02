//! Plain-text `key = value` experiment configuration.
//!
//! Serialization is canonical: every key is written in a fixed order, so a
//! parsed-then-written file is byte-identical to its canonical form and the
//! hash of that form, minus the output location, identifies the experiment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::clustering::KMeansParams;
use crate::dataset::{EvalMode, RatingFormat};
use crate::error::{Error, Result};
use crate::federation::{ablation_mode, AblationMode, RoundConfig};
use crate::model::{LossConfig, SclVariant};
use crate::par::Parallelism;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub format: RatingFormat,
    pub max_malformed: usize,
    pub min_interactions: usize,
    pub output: PathBuf,
    pub seed: u64,
    pub rounds: usize,
    pub participant_fraction: f64,
    pub item_clusters: usize,
    pub lambda: f64,
    pub tau: f64,
    pub scl_variant: SclVariant,
    pub scl_max_items: usize,
    pub exclude_heldout_negatives: bool,
    pub ablation: AblationMode,
    pub virtual_ratio: f64,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub negatives: usize,
    pub init_std: f64,
    pub eval_k: usize,
    pub eval_mode: EvalMode,
    pub eval_cadence: usize,
    pub early_stop_patience: Option<usize>,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let round = RoundConfig::default();
        let loss = LossConfig::default();
        Self {
            data: PathBuf::from("data/ml-100k/u.data"),
            format: RatingFormat::Dat,
            max_malformed: 0,
            min_interactions: 3,
            output: PathBuf::from("runs/default"),
            seed: 42,
            rounds: round.total_rounds,
            participant_fraction: round.participant_fraction,
            item_clusters: round.num_clusters,
            lambda: loss.lambda,
            tau: loss.tau,
            scl_variant: loss.variant,
            scl_max_items: loss.scl_max_items,
            exclude_heldout_negatives: round.exclude_heldout_negatives,
            ablation: AblationMode::Full,
            virtual_ratio: round.virtual_ratio,
            embedding_dim: round.embedding_dim,
            learning_rate: loss.learning_rate,
            batch_size: loss.batch_size,
            local_epochs: loss.local_epochs,
            negatives: round.negatives_per_positive,
            init_std: round.init_std,
            eval_k: round.eval_k,
            eval_mode: round.eval_mode,
            eval_cadence: round.eval_cadence,
            early_stop_patience: round.early_stop_patience,
            kmeans_max_iters: round.kmeans.max_iters,
            kmeans_tol: round.kmeans.tol,
        }
    }
}

/// Keys in canonical order.
pub const KEYS: &[&str] = &[
    "data",
    "format",
    "max_malformed",
    "min_interactions",
    "output",
    "seed",
    "rounds",
    "participant_fraction",
    "item_clusters",
    "lambda",
    "tau",
    "scl_variant",
    "scl_max_items",
    "ablation",
    "virtual_ratio",
    "embedding_dim",
    "learning_rate",
    "batch_size",
    "local_epochs",
    "negatives",
    "exclude_heldout_negatives",
    "init_std",
    "eval_k",
    "eval_mode",
    "eval_cadence",
    "early_stop_patience",
    "kmeans_max_iters",
    "kmeans_tol",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let x: f64 = parse_value(key, value)?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key} must be finite")));
    }
    Ok(x)
}

fn parse_path(key: &str, value: &str) -> Result<PathBuf> {
    if value.is_empty() || value.contains('\n') {
        return Err(Error::Config(format!("{key} needs a single-line path")));
    }
    Ok(PathBuf::from(value))
}

impl ExperimentConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" => self.data = parse_path(key, value)?,
            "format" => self.format = parse_value(key, value)?,
            "max_malformed" => self.max_malformed = parse_value(key, value)?,
            "min_interactions" => self.min_interactions = parse_value(key, value)?,
            "output" => self.output = parse_path(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "rounds" => self.rounds = parse_value(key, value)?,
            "participant_fraction" => self.participant_fraction = parse_f64(key, value)?,
            "item_clusters" => self.item_clusters = parse_value(key, value)?,
            "lambda" => self.lambda = parse_f64(key, value)?,
            "tau" => self.tau = parse_f64(key, value)?,
            "scl_variant" => self.scl_variant = parse_value(key, value)?,
            "scl_max_items" => self.scl_max_items = parse_value(key, value)?,
            "ablation" => self.ablation = parse_value(key, value)?,
            "virtual_ratio" => self.virtual_ratio = parse_f64(key, value)?,
            "embedding_dim" => self.embedding_dim = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_f64(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "local_epochs" => self.local_epochs = parse_value(key, value)?,
            "negatives" => self.negatives = parse_value(key, value)?,
            "exclude_heldout_negatives" => {
                self.exclude_heldout_negatives = parse_value(key, value)?
            }
            "init_std" => self.init_std = parse_f64(key, value)?,
            "eval_k" => self.eval_k = parse_value(key, value)?,
            "eval_mode" => self.eval_mode = parse_value(key, value)?,
            "eval_cadence" => self.eval_cadence = parse_value(key, value)?,
            "early_stop_patience" => {
                self.early_stop_patience = match value {
                    "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "kmeans_max_iters" => self.kmeans_max_iters = parse_value(key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse_f64(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Text form of one field.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "data" => self.data.display().to_string(),
            "format" => self.format.to_string(),
            "max_malformed" => self.max_malformed.to_string(),
            "min_interactions" => self.min_interactions.to_string(),
            "output" => self.output.display().to_string(),
            "seed" => self.seed.to_string(),
            "rounds" => self.rounds.to_string(),
            "participant_fraction" => self.participant_fraction.to_string(),
            "item_clusters" => self.item_clusters.to_string(),
            "lambda" => self.lambda.to_string(),
            "tau" => self.tau.to_string(),
            "scl_variant" => self.scl_variant.to_string(),
            "scl_max_items" => self.scl_max_items.to_string(),
            "ablation" => self.ablation.to_string(),
            "virtual_ratio" => self.virtual_ratio.to_string(),
            "embedding_dim" => self.embedding_dim.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "negatives" => self.negatives.to_string(),
            "exclude_heldout_negatives" => self.exclude_heldout_negatives.to_string(),
            "init_std" => self.init_std.to_string(),
            "eval_k" => self.eval_k.to_string(),
            "eval_mode" => self.eval_mode.to_string(),
            "eval_cadence" => self.eval_cadence.to_string(),
            "early_stop_patience" => match self.early_stop_patience {
                None => "none".to_string(),
                Some(p) => p.to_string(),
            },
            "kmeans_max_iters" => self.kmeans_max_iters.to_string(),
            "kmeans_tol" => self.kmeans_tol.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        })
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// unknown or repeated keys are errors; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("every canonical key is known");
            writeln!(out, "{key} = {value}").expect("writing to a String");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical text without the `output` line, so the
    /// same experiment written to two directories carries one hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for line in self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("output ="))
        {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// First 16 hex digits of [`ExperimentConfig::hash`].
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn round_config(&self, parallelism: Parallelism) -> RoundConfig {
        let base = RoundConfig {
            total_rounds: self.rounds,
            participant_fraction: self.participant_fraction,
            num_clusters: self.item_clusters,
            loss: LossConfig {
                lambda: self.lambda,
                tau: self.tau,
                variant: self.scl_variant,
                learning_rate: self.learning_rate,
                local_epochs: self.local_epochs,
                batch_size: self.batch_size,
                scl_max_items: self.scl_max_items,
            },
            embedding_dim: self.embedding_dim,
            negatives_per_positive: self.negatives,
            exclude_heldout_negatives: self.exclude_heldout_negatives,
            init_std: self.init_std,
            co_clustering: true,
            virtual_ratio: self.virtual_ratio,
            eval_k: self.eval_k,
            eval_mode: self.eval_mode,
            eval_cadence: self.eval_cadence,
            early_stop_patience: self.early_stop_patience,
            kmeans: KMeansParams {
                max_iters: self.kmeans_max_iters,
                tol: self.kmeans_tol,
            },
            parallelism,
        };
        ablation_mode(&base, self.ablation)
    }
}
