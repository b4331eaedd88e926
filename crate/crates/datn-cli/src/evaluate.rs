//! Evaluation: caption checkpoints report BLEU-1..4, CIDEr and the
//! exact-match rate; answer checkpoints report overall and per-type
//! accuracy plus WUPS at 0.9 and 0.0.

use std::fmt::Write as _;

use datn_core::rng::seeded;
use datn_metrics::{accuracy, bleu, cider, wups, EvalItem, Taxonomy};
use datn_model::captioner::{CaptionModel, DecodeMode};
use datn_model::vqa::VqaModel;
use datn_world::{QuestionType, Sample, Vocabulary, END_ID, START_ID};

use crate::checkpoint::TrainedState;
use crate::config::Task;
use crate::error::HarnessError;
use crate::trainer::{canvas_tensor, concept_matrices};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionReport {
    pub bleu: [f64; 4],
    pub cider: f64,
    /// Fraction of samples whose decoded caption exactly matches one of
    /// their references.
    pub exact_match: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaReport {
    pub overall: f64,
    /// (type name, accuracy, question count); types with no questions
    /// report an accuracy of 0 over 0 items.
    pub per_type: Vec<(String, f64, usize)>,
    pub wups_09: f64,
    pub wups_00: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Caption(CaptionReport),
    Vqa(VqaReport),
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        match self {
            Report::Caption(r) => {
                out.push_str("metric\tvalue\n");
                for (i, b) in r.bleu.iter().enumerate() {
                    let _ = writeln!(out, "bleu-{}\t{:.4}", i + 1, b);
                }
                let _ = writeln!(out, "cider\t{:.4}", r.cider);
                let _ = writeln!(out, "exact-match\t{:.4}", r.exact_match);
            }
            Report::Vqa(r) => {
                out.push_str("metric\tvalue\tcount\n");
                for (name, acc, count) in &r.per_type {
                    let _ = writeln!(out, "accuracy[{name}]\t{acc:.4}\t{count}");
                }
                let _ = writeln!(out, "accuracy\t{:.4}", r.overall);
                let _ = writeln!(out, "wups@0.9\t{:.4}", r.wups_09);
                let _ = writeln!(out, "wups@0.0\t{:.4}", r.wups_00);
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Report::Caption(r) => serde_json::json!({
                "task": "caption",
                "bleu-1": r.bleu[0],
                "bleu-2": r.bleu[1],
                "bleu-3": r.bleu[2],
                "bleu-4": r.bleu[3],
                "cider": r.cider,
                "exact-match": r.exact_match,
            }),
            Report::Vqa(r) => {
                let per_type: serde_json::Map<String, serde_json::Value> = r
                    .per_type
                    .iter()
                    .map(|(name, acc, count)| {
                        (
                            name.clone(),
                            serde_json::json!({"accuracy": acc, "count": count}),
                        )
                    })
                    .collect();
                serde_json::json!({
                    "task": "vqa",
                    "accuracy": r.overall,
                    "per-type": per_type,
                    "wups@0.9": r.wups_09,
                    "wups@0.0": r.wups_00,
                })
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        match (self, key) {
            (Report::Caption(r), "bleu-1") => Some(r.bleu[0]),
            (Report::Caption(r), "bleu-2") => Some(r.bleu[1]),
            (Report::Caption(r), "bleu-3") => Some(r.bleu[2]),
            (Report::Caption(r), "bleu-4") => Some(r.bleu[3]),
            (Report::Caption(r), "cider") => Some(r.cider),
            (Report::Caption(r), "exact-match") => Some(r.exact_match),
            (Report::Vqa(r), "accuracy") => Some(r.overall),
            (Report::Vqa(r), "wups@0.9") => Some(r.wups_09),
            (Report::Vqa(r), "wups@0.0") => Some(r.wups_00),
            _ => None,
        }
    }
}

fn strip_frame(caption: &[usize]) -> Vec<usize> {
    caption
        .iter()
        .copied()
        .filter(|&t| t != START_ID && t != END_ID)
        .collect()
}

/// Decodes every sample and scores the corpus.
pub fn evaluate_caption(state: &TrainedState, samples: &[Sample], vocab: &Vocabulary) -> Result<Report> {
    let config = &state.config;
    let dims = config.dims(vocab.size(), vocab.answer_count());
    let mut model = CaptionModel::new(
        dims,
        config.caption_ablation()?,
        config.weight_mode(),
        &mut seeded(0),
    )?;
    model.params = state.task.clone();

    let matrices = concept_matrices(&state.concept, samples, config.concept_threshold)?;
    let mode = if config.beam <= 1 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Beam(config.beam)
    };

    let mut items: Vec<EvalItem<usize>> = Vec::with_capacity(samples.len());
    let mut exact = 0usize;
    for (si, sample) in samples.iter().enumerate() {
        let canvas = canvas_tensor(sample);
        let mut g = datn_core::Graph::new();
        let bound = model.params.bind(&mut g, false);
        let ctx = model.prepare_scene(&mut g, &bound, &canvas, &matrices[si])?;
        let (tokens, _) = model.generate(
            &mut g,
            &bound,
            &ctx,
            mode,
            START_ID,
            END_ID,
            config.max_len,
        )?;
        let references: Vec<Vec<usize>> = sample.captions.iter().map(|c| strip_frame(c)).collect();
        if references.iter().any(|r| r == &tokens) {
            exact += 1;
        }
        items.push(EvalItem {
            candidate: tokens,
            references,
        });
    }

    let report = CaptionReport {
        bleu: [
            bleu(&items, 1)?,
            bleu(&items, 2)?,
            bleu(&items, 3)?,
            bleu(&items, 4)?,
        ],
        cider: cider(&items)?,
        exact_match: exact as f64 / samples.len() as f64,
    };
    Ok(Report::Caption(report))
}

/// Answers every question of every sample and scores the predictions.
pub fn evaluate_vqa(
    state: &TrainedState,
    samples: &[Sample],
    vocab: &Vocabulary,
    taxonomy: &Taxonomy,
) -> Result<Report> {
    let config = &state.config;
    let dims = config.dims(vocab.size(), vocab.answer_count());
    let mut model = VqaModel::new(
        dims,
        config.vqa_ablation()?,
        config.weight_mode(),
        &mut seeded(0),
    )?;
    model.params = state.task.clone();

    let matrices = concept_matrices(&state.concept, samples, config.concept_threshold)?;

    let mut predicted: Vec<usize> = Vec::new();
    let mut gold: Vec<usize> = Vec::new();
    let mut types: Vec<QuestionType> = Vec::new();
    for (si, sample) in samples.iter().enumerate() {
        let canvas = canvas_tensor(sample);
        for qa in &sample.qa {
            let mut g = datn_core::Graph::new();
            let bound = model.params.bind(&mut g, false);
            let out = model.forward(&mut g, &bound, &canvas, &matrices[si], &qa.question)?;
            predicted.push(out.predicted(&g));
            gold.push(qa.answer);
            types.push(qa.qtype);
        }
    }
    if predicted.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "no question/answer pairs to evaluate".to_owned(),
        ));
    }

    let overall = accuracy(&predicted, &gold)?;
    let mut per_type = Vec::new();
    for qtype in QuestionType::ALL {
        let idx: Vec<usize> = (0..types.len()).filter(|&i| types[i] == qtype).collect();
        let acc = if idx.is_empty() {
            0.0
        } else {
            idx.iter().filter(|&&i| predicted[i] == gold[i]).count() as f64 / idx.len() as f64
        };
        per_type.push((qtype.name().to_owned(), acc, idx.len()));
    }

    let answers = vocab.answers();
    let pred_words: Vec<String> = predicted.iter().map(|&a| answers[a].clone()).collect();
    let gold_words: Vec<String> = gold.iter().map(|&a| answers[a].clone()).collect();
    let report = VqaReport {
        overall,
        per_type,
        wups_09: wups(&pred_words, &gold_words, taxonomy, 0.9)?,
        wups_00: wups(&pred_words, &gold_words, taxonomy, 0.0)?,
    };
    Ok(Report::Vqa(report))
}

/// Dispatches on the checkpoint's task. VQA evaluation needs the
/// taxonomy for its WUPS columns.
pub fn evaluate(
    state: &TrainedState,
    samples: &[Sample],
    vocab: &Vocabulary,
    taxonomy: Option<&Taxonomy>,
) -> Result<Report> {
    match state.config.task {
        Task::Caption => evaluate_caption(state, samples, vocab),
        Task::Vqa => {
            let taxonomy = taxonomy.ok_or_else(|| {
                HarnessError::InvalidConfig("vqa evaluation requires a taxonomy".to_owned())
            })?;
            evaluate_vqa(state, samples, vocab, taxonomy)
        }
    }
}
