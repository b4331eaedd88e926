//! Attention export: region weight maps as plain-text matrices and
//! plain (P2) portable graymaps, concept weights as a word/weight table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use datn_core::rng::seeded;
use datn_model::captioner::{CaptionModel, DecodeMode};
use datn_model::vqa::VqaModel;
use datn_world::{Sample, Vocabulary, END_ID, START_ID};

use crate::checkpoint::TrainedState;
use crate::config::Task;
use crate::error::HarnessError;
use crate::trainer::{canvas_tensor, concept_matrix};
use crate::Result;

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(path.display().to_string(), e))?;
    written.push(path);
    Ok(())
}

/// `grid x grid` matrix of weights, one row per line.
fn weights_text(weights: &[f64], grid: usize) -> String {
    let mut out = String::new();
    for row in 0..grid {
        let cells: Vec<String> = (0..grid)
            .map(|col| format!("{:.6}", weights[row * grid + col]))
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Plain PGM (P2), scaled so the largest weight maps to 255.
fn weights_pgm(weights: &[f64], grid: usize) -> String {
    let max = weights.iter().cloned().fold(0.0f64, f64::max);
    let mut out = format!("P2\n{grid} {grid}\n255\n");
    for row in 0..grid {
        let cells: Vec<String> = (0..grid)
            .map(|col| {
                let w = weights[row * grid + col];
                let v = if max > 0.0 {
                    (255.0 * w / max).round() as u32
                } else {
                    0
                };
                v.to_string()
            })
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn concept_table(weights: &[f64], vocab: &Vocabulary) -> String {
    let mut out = String::from("concept\tweight\n");
    for (i, w) in weights.iter().enumerate() {
        let _ = writeln!(out, "{}\t{:.6}", vocab.concept_word(i), w);
    }
    out
}

/// Exports attention maps for one sample. Captions write one map per
/// decode step plus a token table; answer checkpoints write one map per
/// question. Both write the semantic concept-weight table when that
/// pathway is active.
pub fn export_attention(
    state: &TrainedState,
    sample: &Sample,
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let config = &state.config;
    let grid = config.canvas_side / 4;
    let canvas = canvas_tensor(sample);
    let concepts = concept_matrix(&state.concept, sample, config.concept_threshold)?;

    match config.task {
        Task::Caption => {
            let dims = config.dims(vocab.size(), vocab.answer_count());
            let mut model = CaptionModel::new(
                dims,
                config.caption_ablation()?,
                config.weight_mode(),
                &mut seeded(0),
            )?;
            model.params = state.task.clone();

            let mut g = datn_core::Graph::new();
            let bound = model.params.bind(&mut g, false);
            let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts)?;
            let (tokens, trace) = model.generate(
                &mut g,
                &bound,
                &ctx,
                DecodeMode::Greedy,
                START_ID,
                END_ID,
                config.max_len,
            )?;

            let mut table = String::from("step\ttoken\tgate\tlog-prob\n");
            for (t, step) in trace.steps.iter().enumerate() {
                let word = vocab.token(step.token).unwrap_or("<unk>");
                let gate = step
                    .gate
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_else(|| "-".to_owned());
                let _ = writeln!(table, "{t}\t{word}\t{gate}\t{:.6}", step.log_prob);
                if let Some(weights) = &step.region_weights {
                    write_file(
                        out_dir,
                        &format!("step_{t:02}_regions.txt"),
                        &weights_text(weights, grid),
                        &mut written,
                    )?;
                    write_file(
                        out_dir,
                        &format!("step_{t:02}_regions.pgm"),
                        &weights_pgm(weights, grid),
                        &mut written,
                    )?;
                }
            }
            let decoded: Vec<String> = vocab.decode(&tokens);
            let _ = writeln!(table, "# caption: {}", decoded.join(" "));
            write_file(out_dir, "tokens.txt", &table, &mut written)?;
            if let Some(weights) = &trace.semantic_concept_weights {
                write_file(out_dir, "concepts.txt", &concept_table(weights, vocab), &mut written)?;
            }
            if let Some(weights) = &trace.semantic_region_weights {
                write_file(
                    out_dir,
                    "semantic_regions.txt",
                    &weights_text(weights, grid),
                    &mut written,
                )?;
                write_file(
                    out_dir,
                    "semantic_regions.pgm",
                    &weights_pgm(weights, grid),
                    &mut written,
                )?;
            }
        }
        Task::Vqa => {
            let dims = config.dims(vocab.size(), vocab.answer_count());
            let mut model = VqaModel::new(
                dims,
                config.vqa_ablation()?,
                config.weight_mode(),
                &mut seeded(0),
            )?;
            model.params = state.task.clone();

            for (qi, qa) in sample.qa.iter().enumerate() {
                let mut g = datn_core::Graph::new();
                let bound = model.params.bind(&mut g, false);
                let out = model.forward(&mut g, &bound, &canvas, &concepts, &qa.question)?;
                let q_words = vocab.decode(&qa.question).join(" ");
                let answers = vocab.answers();
                let mut info = format!(
                    "question: {q_words}\npredicted: {}\ngold: {}\n",
                    answers[out.predicted(&g)],
                    answers[qa.answer]
                );
                let _ = writeln!(info, "type: {}", qa.qtype.name());
                write_file(out_dir, &format!("question_{qi:02}.txt"), &info, &mut written)?;
                if let Some(alpha) = out.region_weights {
                    let weights = g.value(alpha).data().to_vec();
                    write_file(
                        out_dir,
                        &format!("question_{qi:02}_regions.txt"),
                        &weights_text(&weights, grid),
                        &mut written,
                    )?;
                    write_file(
                        out_dir,
                        &format!("question_{qi:02}_regions.pgm"),
                        &weights_pgm(&weights, grid),
                        &mut written,
                    )?;
                }
                if let Some(semantic) = &out.semantic {
                    let weights = g.value(semantic.concept_weights).data().to_vec();
                    if qi == 0 {
                        write_file(
                            out_dir,
                            "concepts.txt",
                            &concept_table(&weights, vocab),
                            &mut written,
                        )?;
                    }
                }
            }
        }
    }
    Ok(written)
}
