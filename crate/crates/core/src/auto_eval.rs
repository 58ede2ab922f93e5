//! Automatic conditioning evaluation: re-classify generated text with the
//! labelling topic model and tabulate against the conditioning topic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::LmParams;
use crate::steering::GenerationRecord;
use crate::topic_model::{embed_ids, TopicModel};

/// Example texts kept per confusion cell.
pub const EXAMPLES_PER_CELL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Topic ids of rows and columns.
    pub topics: Vec<usize>,
    /// Rows are conditioning topics, columns predicted topics.
    pub counts: Vec<Vec<usize>>,
    /// Records with nothing to classify; excluded from `total`.
    pub unclassifiable: usize,
    pub examples: Vec<Vec<Vec<String>>>,
}

impl ConfusionMatrix {
    pub fn new(topics: Vec<usize>) -> Self {
        let k = topics.len();
        Self { topics, counts: vec![vec![0; k]; k], unclassifiable: 0, examples: vec![vec![Vec::new(); k]; k] }
    }

    fn index(&self, topic: usize) -> Result<usize> {
        self.topics
            .iter()
            .position(|&t| t == topic)
            .ok_or(Error::OutOfRange { what: "topic", index: topic, size: self.topics.len() })
    }

    pub fn record(&mut self, conditioned: usize, predicted: usize, example: Option<&str>) -> Result<()> {
        let (r, c) = (self.index(conditioned)?, self.index(predicted)?);
        self.counts[r][c] += 1;
        if let Some(text) = example {
            if self.examples[r][c].len() < EXAMPLES_PER_CELL {
                self.examples[r][c].push(text.into());
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.topics.len()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 when nothing was classified.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Diagonal share of each row (0 for empty rows).
    pub fn row_accuracy(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s: usize = r.iter().sum();
                if s == 0 {
                    0.0
                } else {
                    r[i] as f64 / s as f64
                }
            })
            .collect()
    }
}

/// Predicted topic of a generated id sequence: `argmax theta` restricted to
/// `topics`, or `None` when the sequence is empty.
pub fn classify_ids(
    ids: &[usize],
    tm: &TopicModel,
    vocab: &Vocabulary,
    lm: &LmParams,
    topics: &[usize],
) -> Result<Option<usize>> {
    let emb = match embed_ids(ids, vocab, lm) {
        Ok(e) => e,
        Err(Error::Empty(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let theta = tm.infer(&emb, &vocab.bow_from_ids(ids))?;
    let mut best: Option<usize> = None;
    for &t in topics {
        let p = *theta.get(t).ok_or(Error::OutOfRange { what: "topic", index: t, size: theta.len() })?;
        if best.is_none_or(|b| p > theta[b]) {
            best = Some(t);
        }
    }
    Ok(best)
}

/// Classifies the generated part of each record (the prefix is not included).
/// Failed or empty generations are tallied as unclassifiable.
pub fn classify_generated(
    records: &[GenerationRecord],
    tm: &TopicModel,
    vocab: &Vocabulary,
    lm: &LmParams,
    topics: &[usize],
) -> Result<ConfusionMatrix> {
    if records.is_empty() {
        return Err(Error::Empty("generation records"));
    }
    let mut cm = ConfusionMatrix::new(topics.to_vec());
    for r in records {
        let pred = if r.error.is_some() { None } else { classify_ids(&r.token_ids, tm, vocab, lm, topics)? };
        match pred {
            Some(p) => cm.record(r.target_topic, p, Some(&r.text))?,
            None => cm.unclassifiable += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDelta {
    pub topic: usize,
    pub weak: f64,
    pub strong: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub weak_accuracy: f64,
    pub strong_accuracy: f64,
    /// `strong - weak`.
    pub delta: f64,
    pub per_topic: Vec<TopicDelta>,
}

pub fn compare_parametrizations(weak: &ConfusionMatrix, strong: &ConfusionMatrix) -> Result<Comparison> {
    if weak.topics != strong.topics {
        return Err(Error::Precondition(format!(
            "confusion matrices over different topics: {:?} vs {:?}",
            weak.topics, strong.topics
        )));
    }
    let (wr, sr) = (weak.row_accuracy(), strong.row_accuracy());
    let per_topic = weak
        .topics
        .iter()
        .zip(wr.iter().zip(&sr))
        .map(|(&topic, (&w, &s))| TopicDelta { topic, weak: w, strong: s, delta: s - w })
        .collect();
    let (wa, sa) = (weak.accuracy(), strong.accuracy());
    Ok(Comparison { weak_accuracy: wa, strong_accuracy: sa, delta: sa - wa, per_topic })
}
