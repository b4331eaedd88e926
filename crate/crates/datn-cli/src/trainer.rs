//! Deterministic training: the concept predictor is trained first and
//! frozen, then the task head. Batch order is a pure function of
//! `(seed, phase, epoch)`, so every run — and every resumed run — walks
//! the same step sequence.

use std::fmt::Write as _;

use datn_core::rng::{rand_index, seeded, ChaCha8Rng};
use datn_core::{Graph, Optimizer, Tensor};
use datn_model::captioner::{CaptionItem, CaptionModel};
use datn_model::concept::{concept_set, multilabel_loss, ConceptPredictor};
use datn_model::params::ParamSet;
use datn_model::vqa::{VqaItem, VqaModel};
use datn_world::{Dataset, Sample};

use crate::checkpoint::TrainedState;
use crate::config::{RunConfig, Task};
use crate::error::HarnessError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Concept,
    Task,
}

#[derive(Debug, Clone, Default)]
pub struct LossLog {
    pub entries: Vec<(Phase, u64, f64)>,
}

impl LossLog {
    /// Two-column text table with one section header per phase.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current: Option<Phase> = None;
        for &(phase, step, loss) in &self.entries {
            if current != Some(phase) {
                out.push_str(match phase {
                    Phase::Concept => "# concept\n",
                    Phase::Task => "# task\n",
                });
                current = Some(phase);
            }
            let _ = writeln!(out, "{step}\t{loss}");
        }
        out
    }
}

fn stream_seed(seed: u64, phase: u64, epoch: u64) -> u64 {
    // splitmix-style avalanche over the three inputs
    let mut z = seed
        .wrapping_add(phase.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(epoch.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn shuffled_indices(count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    for i in (1..count).rev() {
        let j = rand_index(rng, i + 1);
        order.swap(i, j);
    }
    order
}

pub fn canvas_tensor(sample: &Sample) -> Tensor {
    let side = sample.scene.side;
    Tensor::new(vec![3, side, side], sample.scene.canvas.clone()).expect("rendered canvas")
}

/// Runs the frozen concept predictor over a sample and thresholds the
/// probabilities into the concept-set matrix.
pub fn concept_matrix(
    concept: &ParamSet,
    sample: &Sample,
    threshold: f64,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = concept.bind(&mut g, false);
    let canvas = g.input(canvas_tensor(sample));
    let probs = ConceptPredictor::predict(&mut g, &bound, canvas)?;
    Ok(concept_set(g.value(probs).data(), threshold)?)
}

pub fn concept_matrices(
    concept: &ParamSet,
    samples: &[Sample],
    threshold: f64,
) -> Result<Vec<Tensor>> {
    samples
        .iter()
        .map(|s| concept_matrix(concept, s, threshold))
        .collect()
}

fn batches(total: usize, batch_size: usize) -> usize {
    total.div_ceil(batch_size)
}

/// Builds the task head for a config. The parameter stream is seeded
/// separately from the concept predictor's.
pub fn build_task_params(config: &RunConfig, dataset: &Dataset) -> Result<ParamSet> {
    let dims = config.dims(dataset.vocab.size(), dataset.vocab.answer_count());
    let mut rng = seeded(stream_seed(config.seed, 1, 0));
    Ok(match config.task {
        Task::Caption => {
            CaptionModel::new(dims, config.caption_ablation()?, config.weight_mode(), &mut rng)?
                .params
        }
        Task::Vqa => {
            VqaModel::new(dims, config.vqa_ablation()?, config.weight_mode(), &mut rng)?.params
        }
    })
}

fn build_concept_params(config: &RunConfig, dataset: &Dataset) -> Result<ParamSet> {
    let dims = config.dims(dataset.vocab.size(), dataset.vocab.answer_count());
    let mut rng = seeded(stream_seed(config.seed, 0, 0));
    let mut params = ParamSet::new();
    ConceptPredictor::register(&mut params, &mut rng, &dims);
    Ok(params)
}

fn fresh_optimizer(config: &RunConfig) -> Optimizer {
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    opt.beta1 = config.beta1;
    opt.beta2 = config.beta2;
    opt.rho = config.rho;
    opt.epsilon = config.adam_epsilon;
    opt
}

/// Trains from scratch or continues `resume`. `stop_after` caps the
/// number of global steps actually executed (for checkpoint tests and
/// partial runs); the returned state can be fed back in to continue.
pub fn train(
    config: &RunConfig,
    dataset: &Dataset,
    resume: Option<TrainedState>,
    stop_after: Option<u64>,
) -> Result<(TrainedState, LossLog)> {
    config.validate_for(dataset)?;
    let samples = &dataset.train;

    let concept_batches = batches(samples.len(), config.batch_size) as u64;
    let concept_steps = config.concept_epochs as u64 * concept_batches;

    // Task items: one per (sample, caption) or (sample, qa record).
    let task_items: Vec<(usize, usize)> = match config.task {
        Task::Caption => samples
            .iter()
            .enumerate()
            .flat_map(|(si, s)| (0..s.captions.len()).map(move |ci| (si, ci)))
            .collect(),
        Task::Vqa => samples
            .iter()
            .enumerate()
            .flat_map(|(si, s)| (0..s.qa.len()).map(move |qi| (si, qi)))
            .collect(),
    };
    if task_items.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "dataset provides no training items for this task".to_owned(),
        ));
    }
    let task_batches = batches(task_items.len(), config.batch_size) as u64;
    let task_steps = config.epochs as u64 * task_batches;
    let total_steps = concept_steps + task_steps;

    let (mut concept, mut task, mut optimizer, start_step) = match resume {
        Some(state) => (state.concept, state.task, state.optimizer, state.step),
        None => (
            build_concept_params(config, dataset)?,
            build_task_params(config, dataset)?,
            fresh_optimizer(config),
            0,
        ),
    };
    let end_step = stop_after
        .map(|s| s.min(total_steps))
        .unwrap_or(total_steps);

    let canvases: Vec<Tensor> = samples.iter().map(canvas_tensor).collect();
    let mut log = LossLog::default();
    let mut step = start_step;

    // ── phase 1: concept predictor ──────────────────────────────────
    while step < end_step && step < concept_steps {
        let epoch = step / concept_batches;
        let batch_in_epoch = (step % concept_batches) as usize;
        let mut rng = seeded(stream_seed(config.seed, 2, epoch));
        let order = shuffled_indices(samples.len(), &mut rng);
        let lo = batch_in_epoch * config.batch_size;
        let hi = (lo + config.batch_size).min(order.len());

        let mut g = Graph::new();
        let bound = concept.bind(&mut g, true);
        let mut preds = Vec::with_capacity(hi - lo);
        let mut targets = Vec::with_capacity(hi - lo);
        for &si in &order[lo..hi] {
            let canvas = g.input(canvases[si].clone());
            preds.push(ConceptPredictor::predict(&mut g, &bound, canvas)?);
            targets.push(samples[si].labels.clone());
        }
        let loss = multilabel_loss(&mut g, &preds, &targets)?;
        g.backward(loss)?;
        let grads = concept.collect_grads(&g, &bound);
        optimizer.step(concept.tensors_mut(), &grads)?;
        log.entries.push((Phase::Concept, step, g.value(loss).item()));
        step += 1;
        if step == concept_steps {
            // Concept training ends here; the task phase gets a fresh
            // optimizer so its moment estimates start clean.
            optimizer = fresh_optimizer(config);
        }
    }

    // ── phase 2: task head over frozen concepts ─────────────────────
    if step >= concept_steps && step < end_step {
        let matrices = concept_matrices(&concept, samples, config.concept_threshold)?;
        let dims = config.dims(dataset.vocab.size(), dataset.vocab.answer_count());

        match config.task {
            Task::Caption => {
                let mut model = CaptionModel::new(
                    dims,
                    config.caption_ablation()?,
                    config.weight_mode(),
                    &mut seeded(stream_seed(config.seed, 1, 0)),
                )?;
                model.params = task;
                while step < end_step {
                    let task_step = step - concept_steps;
                    let epoch = task_step / task_batches;
                    let batch_in_epoch = (task_step % task_batches) as usize;
                    let mut rng = seeded(stream_seed(config.seed, 3, epoch));
                    let order = shuffled_indices(task_items.len(), &mut rng);
                    let lo = batch_in_epoch * config.batch_size;
                    let hi = (lo + config.batch_size).min(order.len());

                    let mut g = Graph::new();
                    let bound = model.params.bind(&mut g, true);
                    let items: Vec<CaptionItem> = order[lo..hi]
                        .iter()
                        .map(|&ii| {
                            let (si, ci) = task_items[ii];
                            CaptionItem {
                                canvas: &canvases[si],
                                concepts: &matrices[si],
                                caption: &samples[si].captions[ci],
                            }
                        })
                        .collect();
                    let (loss, _) = model.teacher_forced_loss(&mut g, &bound, &items)?;
                    g.backward(loss)?;
                    let grads = model.params.collect_grads(&g, &bound);
                    optimizer.step(model.params.tensors_mut(), &grads)?;
                    log.entries.push((Phase::Task, step, g.value(loss).item()));
                    step += 1;
                }
                task = model.params;
            }
            Task::Vqa => {
                let mut model = VqaModel::new(
                    dims,
                    config.vqa_ablation()?,
                    config.weight_mode(),
                    &mut seeded(stream_seed(config.seed, 1, 0)),
                )?;
                model.params = task;
                while step < end_step {
                    let task_step = step - concept_steps;
                    let epoch = task_step / task_batches;
                    let batch_in_epoch = (task_step % task_batches) as usize;
                    let mut rng = seeded(stream_seed(config.seed, 3, epoch));
                    let order = shuffled_indices(task_items.len(), &mut rng);
                    let lo = batch_in_epoch * config.batch_size;
                    let hi = (lo + config.batch_size).min(order.len());

                    let mut g = Graph::new();
                    let bound = model.params.bind(&mut g, true);
                    let items: Vec<VqaItem> = order[lo..hi]
                        .iter()
                        .map(|&ii| {
                            let (si, qi) = task_items[ii];
                            let qa = &samples[si].qa[qi];
                            VqaItem {
                                canvas: &canvases[si],
                                concepts: &matrices[si],
                                question: &qa.question,
                                answer: qa.answer,
                            }
                        })
                        .collect();
                    let (loss, _) = model.loss(&mut g, &bound, &items)?;
                    g.backward(loss)?;
                    let grads = model.params.collect_grads(&g, &bound);
                    optimizer.step(model.params.tensors_mut(), &grads)?;
                    log.entries.push((Phase::Task, step, g.value(loss).item()));
                    step += 1;
                }
                task = model.params;
            }
        }
    }

    Ok((
        TrainedState {
            config: config.clone(),
            concept,
            task,
            optimizer,
            step,
        },
        log,
    ))
}
