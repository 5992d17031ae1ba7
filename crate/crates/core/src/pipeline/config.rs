use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::model::{FusionMode, ModelConfig};
use crate::tensor::AdamWConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    ParallelText,
}

/// Every setting of a run. Stored as JSON; individual fields can be
/// overridden with dotted keys such as `model.d_model=32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Comment file for the parallel-text format.
    pub corpus_comments: Option<PathBuf>,
    pub format: CorpusFormat,
    pub out_dir: PathBuf,
    pub n_test: usize,
    pub n_valid: usize,
    /// Drives the split, initialization, batch order and sampling.
    pub seed: u64,
    /// `vocab_size` and `seed` are filled in from the tokenizer and `seed`.
    pub model: ModelConfig,
    pub bpe_vocab_size: usize,
    pub beam_width: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub lr: f64,
    pub weight_decay: f64,
    pub bucket_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            corpus_comments: None,
            format: CorpusFormat::Jsonl,
            out_dir: PathBuf::from("run"),
            n_test: 200,
            n_valid: 200,
            seed: 42,
            model: ModelConfig::default(),
            bpe_vocab_size: 8192,
            beam_width: 5,
            alpha: 0.0,
            batch_size: 32,
            epochs: 30,
            max_steps: None,
            lr: 5e-4,
            weight_decay: 0.01,
            bucket_width: 25,
        }
    }
}

impl RunConfig {
    /// Desk-scale settings for the bundled toy corpus.
    pub fn toy(corpus: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            out_dir: out_dir.into(),
            n_test: 8,
            n_valid: 8,
            model: ModelConfig::small(0),
            bpe_vocab_size: 1000,
            batch_size: 16,
            epochs: 20,
            ..RunConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Self::parse(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// A JSON object, or `key=value` lines on top of the defaults with `#`
    /// comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()));
        }
        let mut cfg = RunConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            cfg.set(line)?;
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
        }
        fs::write(path, self.to_json()).map_err(PipelineError::io(path))
    }

    /// Applies `key=value`; the value is read as JSON when it parses and as a
    /// plain string otherwise.
    pub fn set(&mut self, assignment: &str) -> Result<(), PipelineError> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| PipelineError::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot.as_object_mut().and_then(|o| o.get_mut(part)).ok_or_else(|| PipelineError::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(tree).map_err(|e| PipelineError::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
            ("bucket_width", self.bucket_width),
            ("bpe_vocab_size", self.bpe_vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(PipelineError::Config(format!("{name} must be positive")));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.weight_decay < 0.0 || self.alpha < 0.0 {
            return Err(PipelineError::Config("lr must be positive; weight_decay and alpha non-negative".into()));
        }
        if self.format == CorpusFormat::ParallelText && self.corpus_comments.is_none() {
            return Err(PipelineError::Config("parallel-text format needs corpus_comments".into()));
        }
        self.model_config(self.bpe_vocab_size).validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig { vocab_size, seed: self.seed, ..self.model.clone() }
    }

    pub fn fusion(&self) -> FusionMode {
        self.model.fusion
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_overrides() {
        let mut c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);

        c.set("model.d_model=32").unwrap();
        c.set("model.fusion=jointly").unwrap();
        c.set("out_dir=/tmp/x").unwrap();
        c.set("max_steps=10").unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.fusion, FusionMode::Jointly);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.max_steps, Some(10));

        assert!(matches!(c.set("model.depth=3"), Err(PipelineError::Config(_))));
        assert!(matches!(c.set("batch_size=many"), Err(PipelineError::Config(_))));
        assert!(matches!(c.set("noequals"), Err(PipelineError::Config(_))));
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"epochs": 3, "model": {"heads": 2}}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model.heads, 2);
        assert_eq!(c.model.d_model, 128);
        assert!(serde_json::from_str::<RunConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn key_value_file() {
        let c = RunConfig::parse("# toy\nepochs = 3\n\nmodel.fusion=shared\ncorpus=data/x.jsonl\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model.fusion, FusionMode::Shared);
        assert_eq!(c.corpus, PathBuf::from("data/x.jsonl"));
        assert!(RunConfig::parse("epochs\n").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let c = RunConfig { batch_size: 0, ..RunConfig::default() };
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        let c = RunConfig { format: CorpusFormat::ParallelText, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.heads = 5;
        assert!(c.validate().is_err());
    }
}
