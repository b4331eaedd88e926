//! CIDEr: consensus scoring via tf-idf n-gram cosine similarity.
//!
//! Per order n in 1..=4, every sentence becomes a tf-idf vector: term
//! frequency normalized within the sentence's order-n grams, idf
//! `ln(|corpus| / df)` with document frequency counted over each item's
//! reference set (floored at 1). The item score averages the candidate's
//! cosine similarity against each reference, scaled by 10; the corpus
//! score is the mean over items of the per-order mean.
//!
//! A single-item corpus degenerates to 0: every reference gram then has
//! df = |corpus| = 1, so all idf weights vanish and the zero-vector
//! cosine is defined as 0.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::corpus::{validate, EvalItem};
use crate::Result;

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn tfidf<T: Eq + Hash + Clone>(
    counts: &HashMap<Vec<T>, usize>,
    doc_freq: &HashMap<Vec<T>, usize>,
    corpus_size: f64,
) -> HashMap<Vec<T>, f64> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return HashMap::new();
    }
    counts
        .iter()
        .map(|(gram, &count)| {
            let df = doc_freq.get(gram).copied().unwrap_or(0).max(1) as f64;
            let tf = count as f64 / total as f64;
            (gram.clone(), tf * (corpus_size / df).ln())
        })
        .collect()
}

fn cosine<T: Eq + Hash>(a: &HashMap<Vec<T>, f64>, b: &HashMap<Vec<T>, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(gram, &va)| b.get(gram).map(|&vb| va * vb))
        .sum();
    let norm_a: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        0.0
    } else {
        dot / (norm_a * norm_b)
    }
}

pub fn cider<T: Eq + Hash + Clone>(items: &[EvalItem<T>]) -> Result<f64> {
    validate(items)?;
    let corpus_size = items.len() as f64;

    // Document frequency per order: the number of items whose reference
    // set contains the gram.
    let mut doc_freq: Vec<HashMap<Vec<T>, usize>> = vec![HashMap::new(); MAX_ORDER];
    for item in items {
        for (n, freq) in doc_freq.iter_mut().enumerate() {
            let mut seen: HashSet<Vec<T>> = HashSet::new();
            for reference in &item.references {
                seen.extend(ngram_counts(reference, n + 1).into_keys());
            }
            for gram in seen {
                *freq.entry(gram).or_insert(0) += 1;
            }
        }
    }

    let mut corpus_score = 0.0;
    for item in items {
        let mut item_score = 0.0;
        for (n, freq) in doc_freq.iter().enumerate() {
            let cand = tfidf(&ngram_counts(&item.candidate, n + 1), freq, corpus_size);
            let mut order_score = 0.0;
            for reference in &item.references {
                let ref_vec = tfidf(&ngram_counts(reference, n + 1), freq, corpus_size);
                order_score += cosine(&cand, &ref_vec);
            }
            item_score += 10.0 * order_score / item.references.len() as f64;
        }
        corpus_score += item_score / MAX_ORDER as f64;
    }
    Ok(corpus_score / corpus_size)
}
