//! Datasets, preprocessing, cross-validation splits and scoring.

pub mod canonical;
pub mod folds;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod ptd;
pub mod semeval;
pub mod synthetic;

pub use canonical::{load_canonical, read_canonical, write_canonical, write_canonical_to};
pub use folds::{make_folds, Fold, FoldPlan};
pub use metrics::{accuracy, score_detection, score_location, MetricsReport};
pub use pipeline::{pipeline_eval, pipeline_score};
pub use preprocess::{
    is_numeric, is_punctuation, preprocess, preprocess_all, tokenize, Preprocessed,
};
pub use ptd::{adapt_ptd, read_ptd};
pub use semeval::{adapt_semeval, read_semeval, GoldKind};
pub use synthetic::synthetic_corpus;

use serde::{Deserialize, Serialize};

use crate::error::{PunError, Result};

/// One sentence with its detection label and optional pun position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: u8,
    pub pun_index: Option<usize>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        label: u8,
        pun_index: Option<usize>,
    ) -> Self {
        Example {
            id: id.into(),
            tokens,
            label,
            pun_index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(PunError::Validation(format!(
                "example {}: no tokens",
                self.id
            )));
        }
        if self.label > 1 {
            return Err(PunError::Validation(format!(
                "example {}: label must be 0 or 1, got {}",
                self.id, self.label
            )));
        }
        if let Some(i) = self.pun_index {
            if self.label != 1 {
                return Err(PunError::Validation(format!(
                    "example {}: pun_index set on a negative example",
                    self.id
                )));
            }
            if i >= self.tokens.len() {
                return Err(PunError::Validation(format!(
                    "example {}: pun_index {i} out of range for {} tokens",
                    self.id,
                    self.tokens.len()
                )));
            }
        }
        Ok(())
    }
}

/// Counts of positives and located puns.
pub fn label_counts(examples: &[Example]) -> (usize, usize, usize) {
    let pos = examples.iter().filter(|e| e.label == 1).count();
    let located = examples.iter().filter(|e| e.pun_index.is_some()).count();
    (examples.len(), pos, located)
}
