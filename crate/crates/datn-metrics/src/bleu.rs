//! Corpus BLEU: geometric mean of clipped modified n-gram precisions
//! for orders 1..=n times the brevity penalty. No smoothing: an order
//! with zero matches short-circuits the whole score to 0.

use std::collections::HashMap;
use std::hash::Hash;

use crate::corpus::{validate, EvalItem};
use crate::error::MetricsError;
use crate::Result;

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Effective reference length: closest to the candidate length, ties to
/// the shorter reference.
fn effective_ref_len<T>(candidate_len: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| {
            let diff = (len as i64 - candidate_len as i64).abs();
            (diff, len)
        })
        .expect("at least one reference")
}

/// Cumulative BLEU of order `order` over the whole corpus.
pub fn bleu<T: Eq + Hash + Clone>(items: &[EvalItem<T>], order: usize) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(MetricsError::InvalidOrder(order));
    }
    validate(items)?;

    let mut matched = vec![0usize; order];
    let mut total = vec![0usize; order];
    let mut candidate_len = 0usize;
    let mut reference_len = 0usize;

    for item in items {
        candidate_len += item.candidate.len();
        reference_len += effective_ref_len(item.candidate.len(), &item.references);
        for k in 1..=order {
            let cand = ngram_counts(&item.candidate, k);
            let mut max_ref: HashMap<Vec<T>, usize> = HashMap::new();
            for reference in &item.references {
                for (gram, count) in ngram_counts(reference, k) {
                    let entry = max_ref.entry(gram).or_insert(0);
                    *entry = (*entry).max(count);
                }
            }
            for (gram, count) in &cand {
                let clip = max_ref.get(gram).copied().unwrap_or(0);
                matched[k - 1] += count.min(&clip);
                total[k - 1] += count;
            }
        }
    }

    // Zero candidate material or an empty-overlap order yields 0.
    let mut log_precision_sum = 0.0;
    for k in 0..order {
        if matched[k] == 0 || total[k] == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched[k] as f64 / total[k] as f64).ln();
    }
    if candidate_len == 0 {
        return Ok(0.0);
    }
    let brevity = if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    };
    Ok(brevity * (log_precision_sum / order as f64).exp())
}
