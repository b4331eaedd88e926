//! Run configuration: task, ablation, dimensions, optimizer settings
//! and seeds. Loadable from a UTF-8 `key = value` file; every field is
//! also a CLI flag.

use std::fmt::Write as _;
use std::path::Path;

use datn_core::OptimizerKind;
use datn_model::captioner::CaptionAblation;
use datn_model::params::ModelDims;
use datn_model::semantic::AttentionWeightMode;
use datn_model::vqa::VqaAblation;
use datn_world::Dataset;

use crate::error::HarnessError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Caption,
    Vqa,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Caption => "caption",
            Task::Vqa => "vqa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "caption" => Some(Task::Caption),
            "vqa" => Some(Task::Vqa),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    /// Ablation name; validated against the task's variant list.
    pub ablation: String,
    pub canvas_side: usize,
    pub feature_width: usize,
    pub concepts: usize,
    pub attention_width: usize,
    pub hidden: usize,
    pub question_hidden: usize,
    pub multimodal_width: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub concept_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Threshold for turning concept probabilities into the concept set.
    pub concept_threshold: f64,
    pub max_len: usize,
    pub beam: usize,
    /// Attention weight normalization; the unnormalized variant exists
    /// for comparison only.
    pub raw_ratio_weights: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Caption,
            ablation: "full".to_owned(),
            canvas_side: 16,
            feature_width: 32,
            concepts: 24,
            attention_width: 32,
            hidden: 64,
            question_hidden: 32,
            multimodal_width: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            rho: 0.9,
            adam_epsilon: 1e-8,
            epochs: 30,
            concept_epochs: 30,
            batch_size: 8,
            seed: 7,
            concept_threshold: 0.6,
            max_len: 16,
            beam: 1,
            raw_ratio_weights: false,
        }
    }
}

impl RunConfig {
    pub fn weight_mode(&self) -> AttentionWeightMode {
        if self.raw_ratio_weights {
            AttentionWeightMode::UnnormalizedRatio
        } else {
            AttentionWeightMode::Softmax
        }
    }

    pub fn caption_ablation(&self) -> Result<CaptionAblation> {
        CaptionAblation::parse(&self.ablation).ok_or_else(|| {
            HarnessError::InvalidConfig(format!(
                "ablation '{}' not valid for the caption task (none-att, wa, wsa, full)",
                self.ablation
            ))
        })
    }

    pub fn vqa_ablation(&self) -> Result<VqaAblation> {
        VqaAblation::parse(&self.ablation).ok_or_else(|| {
            HarnessError::InvalidConfig(format!(
                "ablation '{}' not valid for the vqa task (none-att, qa, sa, full)",
                self.ablation
            ))
        })
    }

    /// Model dimensions for a dataset with `vocab` tokens and `answers`
    /// answer classes.
    pub fn dims(&self, vocab: usize, answers: usize) -> ModelDims {
        ModelDims {
            canvas_side: self.canvas_side,
            feature_width: self.feature_width,
            concepts: self.concepts,
            attention_width: self.attention_width,
            hidden: self.hidden,
            question_hidden: self.question_hidden,
            multimodal_width: self.multimodal_width,
            vocab,
            answers,
        }
    }

    /// Full validation against a dataset, run before any training.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        match self.task {
            Task::Caption => {
                self.caption_ablation()?;
            }
            Task::Vqa => {
                self.vqa_ablation()?;
            }
        }
        if self.canvas_side != dataset.config.canvas_side {
            return Err(HarnessError::InvalidConfig(format!(
                "canvas_side {} does not match the dataset's {}",
                self.canvas_side, dataset.config.canvas_side
            )));
        }
        if self.concepts != dataset.vocab.concept_count() {
            return Err(HarnessError::InvalidConfig(format!(
                "concepts {} does not match the dataset vocabulary's {}",
                self.concepts,
                dataset.vocab.concept_count()
            )));
        }
        if !(0.0 < self.concept_threshold && self.concept_threshold < 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "concept_threshold {} outside (0, 1)",
                self.concept_threshold
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_len == 0 || self.beam == 0 {
            return Err(HarnessError::InvalidConfig(
                "batch_size, epochs, max_len and beam must be positive".to_owned(),
            ));
        }
        let dims = self.dims(dataset.vocab.size(), dataset.vocab.answer_count());
        dims.validate()?;
        Ok(())
    }

    /// Canonical `key = value` text, also used as the checkpoint's
    /// config echo.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task", self.task.name().to_owned());
        kv("ablation", self.ablation.clone());
        kv("canvas-side", self.canvas_side.to_string());
        kv("feature-width", self.feature_width.to_string());
        kv("concepts", self.concepts.to_string());
        kv("attention-width", self.attention_width.to_string());
        kv("hidden", self.hidden.to_string());
        kv("question-hidden", self.question_hidden.to_string());
        kv("multimodal-width", self.multimodal_width.to_string());
        kv("optimizer", self.optimizer.name().to_owned());
        kv("lr", format!("{:e}", self.learning_rate));
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("rho", self.rho.to_string());
        kv("adam-epsilon", format!("{:e}", self.adam_epsilon));
        kv("epochs", self.epochs.to_string());
        kv("concept-epochs", self.concept_epochs.to_string());
        kv("batch-size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("concept-threshold", self.concept_threshold.to_string());
        kv("max-len", self.max_len.to_string());
        kv("beam", self.beam.to_string());
        kv("raw-ratio-weights", self.raw_ratio_weights.to_string());
        out
    }

    /// Applies `key = value` lines over `self`. Unknown keys are errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::InvalidConfig(format!("{origin}:{}: missing '='", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            self.apply_pair(key, value).map_err(|e| {
                HarnessError::InvalidConfig(format!("{origin}:{}: {e}", lineno + 1))
            })?;
        }
        Ok(())
    }

    fn apply_pair(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(value: &str, key: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("cannot parse '{value}' for {key}"))
        }
        match key {
            "task" => {
                self.task =
                    Task::parse(value).ok_or_else(|| format!("unknown task '{value}'"))?;
            }
            "ablation" => self.ablation = value.to_owned(),
            "canvas-side" => self.canvas_side = num(value, key)?,
            "feature-width" => self.feature_width = num(value, key)?,
            "concepts" => self.concepts = num(value, key)?,
            "attention-width" => self.attention_width = num(value, key)?,
            "hidden" => self.hidden = num(value, key)?,
            "question-hidden" => self.question_hidden = num(value, key)?,
            "multimodal-width" => self.multimodal_width = num(value, key)?,
            "optimizer" => {
                self.optimizer = OptimizerKind::parse(value)
                    .ok_or_else(|| format!("unknown optimizer '{value}'"))?;
            }
            "lr" => self.learning_rate = num(value, key)?,
            "beta1" => self.beta1 = num(value, key)?,
            "beta2" => self.beta2 = num(value, key)?,
            "rho" => self.rho = num(value, key)?,
            "adam-epsilon" => self.adam_epsilon = num(value, key)?,
            "epochs" => self.epochs = num(value, key)?,
            "concept-epochs" => self.concept_epochs = num(value, key)?,
            "batch-size" => self.batch_size = num(value, key)?,
            "seed" => self.seed = num(value, key)?,
            "concept-threshold" => self.concept_threshold = num(value, key)?,
            "max-len" => self.max_len = num(value, key)?,
            "beam" => self.beam = num(value, key)?,
            "raw-ratio-weights" => self.raw_ratio_weights = num(value, key)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        let mut config = RunConfig::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }
}
