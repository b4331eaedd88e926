//! Exact-match accuracy and WUPS@tau. A prediction/gold pair scores its
//! Wu-Palmer similarity when that clears the threshold, and a tenth of
//! it otherwise.

use crate::error::MetricsError;
use crate::taxonomy::Taxonomy;
use crate::Result;

pub fn accuracy<T: PartialEq>(predictions: &[T], golds: &[T]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

pub fn wups(
    predictions: &[String],
    golds: &[String],
    taxonomy: &Taxonomy,
    threshold: f64,
) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = 0.0;
    for (p, g) in predictions.iter().zip(golds) {
        let s = taxonomy.wu_palmer(p, g)?;
        total += if s >= threshold { s } else { 0.1 * s };
    }
    Ok(total / predictions.len() as f64)
}
