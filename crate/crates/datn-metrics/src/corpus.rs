//! Evaluation corpus: one candidate with at least one reference per
//! item. The on-disk form is line-delimited JSON.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem<T> {
    pub candidate: Vec<T>,
    pub references: Vec<Vec<T>>,
}

pub fn validate<T>(items: &[EvalItem<T>]) -> Result<()> {
    if items.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    for (index, item) in items.iter().enumerate() {
        if item.references.is_empty() {
            return Err(MetricsError::MissingReferences { index });
        }
    }
    Ok(())
}

/// Parses one JSON object per line: `{"candidate": [...], "references": [[...]]}`.
pub fn items_from_jsonl(text: &str, path: &str) -> Result<Vec<EvalItem<String>>> {
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem<String> =
            serde_json::from_str(line).map_err(|e| MetricsError::CorpusParse {
                path: path.to_owned(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        items.push(item);
    }
    validate(&items)?;
    Ok(items)
}

pub fn items_to_jsonl<T: Serialize>(items: &[EvalItem<T>]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}
