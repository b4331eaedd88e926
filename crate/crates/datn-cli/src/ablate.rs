//! Ablation matrix: trains every task variant over a set of seeds and
//! reports per-variant means over the held-out split. Runs are fully
//! independent, so they parallelize without affecting determinism.

use std::fmt::Write as _;

use datn_metrics::Taxonomy;
use datn_world::Dataset;
use rayon::prelude::*;

use crate::config::{RunConfig, Task};
use crate::evaluate::evaluate;
use crate::trainer::train;
use crate::Result;

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    /// (metric name, mean over seeds) in a fixed column order.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# task {} over {} seed(s)",
            self.task.name(),
            self.seeds.len()
        );
        if let Some(first) = self.rows.first() {
            let header: Vec<&str> = std::iter::once("variant")
                .chain(first.metrics.iter().map(|(k, _)| k.as_str()))
                .collect();
            let _ = writeln!(out, "{}", header.join("\t"));
        }
        for row in &self.rows {
            let mut cells = vec![row.variant.clone()];
            cells.extend(row.metrics.iter().map(|(_, v)| format!("{v:.4}")));
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
        out
    }

    pub fn metric(&self, variant: &str, key: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.metrics.iter().find(|(k, _)| k == key))
            .map(|(_, v)| *v)
    }
}

fn variant_list(task: Task) -> &'static [&'static str] {
    match task {
        Task::Caption => &["none-att", "wa", "wsa", "full"],
        Task::Vqa => &["none-att", "qa", "sa", "full"],
    }
}

fn metric_keys(task: Task) -> &'static [&'static str] {
    match task {
        Task::Caption => &["bleu-1", "bleu-2", "bleu-3", "bleu-4", "cider", "exact-match"],
        Task::Vqa => &["accuracy", "wups@0.9", "wups@0.0"],
    }
}

/// Trains every variant for every seed and averages held-out metrics.
pub fn run_ablation_suite(
    base: &RunConfig,
    dataset: &Dataset,
    seeds: &[u64],
    taxonomy: Option<&Taxonomy>,
) -> Result<AblationTable> {
    assert!(!seeds.is_empty(), "at least one seed required");
    let variants = variant_list(base.task);
    let keys = metric_keys(base.task);

    let jobs: Vec<(usize, u64)> = variants
        .iter()
        .enumerate()
        .flat_map(|(vi, _)| seeds.iter().map(move |&s| (vi, s)))
        .collect();

    let results: Vec<Result<(usize, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(vi, seed)| {
            let config = RunConfig {
                ablation: variants[vi].to_owned(),
                seed,
                ..base.clone()
            };
            let (state, _) = train(&config, dataset, None, None)?;
            let report = evaluate(&state, &dataset.test, &dataset.vocab, taxonomy)?;
            let values = keys
                .iter()
                .map(|k| report.get(k).expect("known metric key"))
                .collect();
            Ok((vi, values))
        })
        .collect();

    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; keys.len()]; variants.len()];
    for result in results {
        let (vi, values) = result?;
        for (acc, v) in sums[vi].iter_mut().zip(values) {
            *acc += v;
        }
    }
    let rows = variants
        .iter()
        .enumerate()
        .map(|(vi, &variant)| AblationRow {
            variant: variant.to_owned(),
            metrics: keys
                .iter()
                .zip(&sums[vi])
                .map(|(&k, &total)| (k.to_owned(), total / seeds.len() as f64))
                .collect(),
        })
        .collect();
    Ok(AblationTable {
        task: base.task,
        seeds: seeds.to_vec(),
        rows,
    })
}
