//! Topic quality metrics and the topic-count sweep.
//!
//! * `tau`: mean NPMI of top-word pairs, from document-level co-occurrence.
//! * `alpha`: mean pairwise cosine similarity of top-word embeddings.
//! * `rho`: one minus the mean pairwise rank-biased overlap of topic rankings.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::topic_model::{train_topic_model, TopicInputs, TopicModelConfig, TrainedTopicModel, Variant};

pub const NPMI_EPS: f64 = 1e-12;
pub const DEFAULT_RBO_P: f64 = 0.9;

/// Per-word document sets as bitsets.
#[derive(Debug, Clone)]
pub struct Cooccurrence {
    n_docs: usize,
    words: usize,
    bits: Vec<Vec<u64>>,
}

impl Cooccurrence {
    /// `bows[d][w] > 0` marks word `w` as present in document `d`.
    pub fn from_bows(bows: &[Vec<u32>]) -> Result<Self> {
        if bows.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let words = bows[0].len();
        let blocks = bows.len().div_ceil(64);
        let mut bits = vec![vec![0u64; blocks]; words];
        for (d, bow) in bows.iter().enumerate() {
            if bow.len() != words {
                return Err(Error::Precondition("ragged bag-of-words rows".into()));
            }
            for (w, &c) in bow.iter().enumerate() {
                if c > 0 {
                    bits[w][d / 64] |= 1 << (d % 64);
                }
            }
        }
        Ok(Self { n_docs: bows.len(), words, bits })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_freq(&self, w: usize) -> usize {
        self.bits.get(w).map_or(0, |b| b.iter().map(|x| x.count_ones() as usize).sum())
    }

    pub fn joint(&self, a: usize, b: usize) -> usize {
        if a >= self.words || b >= self.words {
            return 0;
        }
        self.bits[a].iter().zip(&self.bits[b]).map(|(x, y)| (x & y).count_ones() as usize).sum()
    }

    /// NPMI with add-epsilon smoothing. A zero joint count gives -1 and
    /// `p(a, b) = 1` gives the limit value 1.
    pub fn npmi(&self, a: usize, b: usize) -> f64 {
        let n = self.n_docs as f64;
        let joint = self.joint(a, b);
        if joint == 0 {
            return -1.0;
        }
        if joint == self.n_docs {
            return 1.0;
        }
        let pij = joint as f64 / n + NPMI_EPS;
        let pi = self.doc_freq(a) as f64 / n;
        let pj = self.doc_freq(b) as f64 / n;
        let v = libm::log(pij / (pi * pj)) / -libm::log(pij);
        v.clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScores {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

impl TopicScores {
    fn from_topics(per_topic: Vec<f64>) -> Self {
        let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
        Self { per_topic, mean }
    }
}

fn check_lists(lists: &[Vec<usize>], min_len: usize) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::Empty("topic word lists"));
    }
    if let Some(l) = lists.iter().find(|l| l.len() < min_len) {
        return Err(Error::Precondition(format!("top word list of length {} (need >= {min_len})", l.len())));
    }
    Ok(())
}

/// `tau`: per topic, mean NPMI over unordered pairs of its listed words.
pub fn npmi(top_words: &[Vec<usize>], co: &Cooccurrence) -> Result<TopicScores> {
    check_lists(top_words, 2)?;
    let per_topic = top_words
        .iter()
        .map(|words| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..words.len() {
                for j in i + 1..words.len() {
                    sum += co.npmi(words[i], words[j]);
                    pairs += 1;
                }
            }
            sum / pairs as f64
        })
        .collect();
    Ok(TopicScores::from_topics(per_topic))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaScores {
    pub scores: TopicScores,
    /// Listed words skipped for having no (or a zero) embedding.
    pub excluded_words: usize,
}

/// `alpha`: per topic, mean cosine similarity over unordered pairs of the
/// listed words' embeddings. `embeddings[w]` belongs to content id `w`.
pub fn coherence_alpha(top_words: &[Vec<usize>], embeddings: &[Vec<f64>]) -> Result<AlphaScores> {
    check_lists(top_words, 2)?;
    let mut excluded = 0;
    let mut per_topic = Vec::with_capacity(top_words.len());
    for (t, words) in top_words.iter().enumerate() {
        let vecs: Vec<&[f64]> = words
            .iter()
            .filter_map(|&w| {
                let e = embeddings.get(w).filter(|e| e.iter().any(|&x| x != 0.0));
                if e.is_none() {
                    log::warn!("word {w} has no usable embedding; excluded from coherence");
                    excluded += 1;
                }
                e.map(|e| e.as_slice())
            })
            .collect();
        if vecs.len() < 2 {
            return Err(Error::Precondition(format!("topic {t} has fewer than 2 embeddable top words")));
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                sum += cosine(vecs[i], vecs[j]);
                pairs += 1;
            }
        }
        per_topic.push(sum / pairs as f64);
    }
    Ok(AlphaScores { scores: TopicScores::from_topics(per_topic), excluded_words: excluded })
}

/// Depth-normalised truncated rank-biased overlap to depth `min(|s|, |t|)`.
pub fn rbo(s: &[usize], t: &[usize], p: f64) -> f64 {
    let depth = s.len().min(t.len());
    if depth == 0 {
        return 0.0;
    }
    let mut seen_s = alloc::collections::BTreeSet::new();
    let mut seen_t = alloc::collections::BTreeSet::new();
    let mut overlap = 0usize;
    let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
    for d in 0..depth {
        let (a, b) = (s[d], t[d]);
        if a == b {
            overlap += 1;
        } else {
            overlap += seen_t.contains(&a) as usize + seen_s.contains(&b) as usize;
        }
        seen_s.insert(a);
        seen_t.insert(b);
        num += w * overlap as f64 / (d + 1) as f64;
        den += w;
        w *= p;
    }
    num / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoScores {
    /// `(i, j, rbo)` for every unordered topic pair.
    pub pairs: Vec<(usize, usize, f64)>,
    pub rho: f64,
}

/// `rho = 1 - mean pairwise RBO`.
pub fn inverted_rbo(top_words: &[Vec<usize>], p: f64) -> Result<RhoScores> {
    if top_words.len() < 2 {
        return Err(Error::Precondition("inverted RBO needs at least 2 topics".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!("RBO p must be in (0, 1), got {p}")));
    }
    let mut pairs = Vec::new();
    for i in 0..top_words.len() {
        for j in i + 1..top_words.len() {
            pairs.push((i, j, rbo(&top_words[i], &top_words[j], p)));
        }
    }
    let mean = pairs.iter().map(|x| x.2).sum::<f64>() / pairs.len() as f64;
    Ok(RhoScores { pairs, rho: 1.0 - mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub npmi_top_n: usize,
    pub alpha_top_n: usize,
    pub rbo_top_n: usize,
    pub rbo_p: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { npmi_top_n: 10, alpha_top_n: 25, rbo_top_n: 10, rbo_p: DEFAULT_RBO_P }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau: TopicScores,
    pub alpha: AlphaScores,
    pub rho: RhoScores,
    pub settings: MetricSettings,
}

/// All three metrics for one set of topic rankings (each at least as long as
/// the largest `top_n`, or the whole vocabulary).
pub fn evaluate_rankings(
    rankings: &[Vec<usize>],
    co: &Cooccurrence,
    word_embeddings: &[Vec<f64>],
    settings: &MetricSettings,
) -> Result<MetricsReport> {
    let cut = |n: usize| rankings.iter().map(|r| r[..n.min(r.len())].to_vec()).collect::<Vec<_>>();
    Ok(MetricsReport {
        tau: npmi(&cut(settings.npmi_top_n), co)?,
        alpha: coherence_alpha(&cut(settings.alpha_top_n), word_embeddings)?,
        rho: inverted_rbo(&cut(settings.rbo_top_n), settings.rbo_p)?,
        settings: settings.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub k: usize,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    pub selected: bool,
    pub seed: u64,
    pub error: Option<String>,
}

pub struct SweepCell {
    pub row: SweepRow,
    pub trained: Option<TrainedTopicModel>,
}

pub fn cell_seed(base: u64, variant: Variant, k: usize) -> u64 {
    rng::derive_seed(base, &[rng::tag(variant.as_str()), k as u64])
}

/// Trains and scores one `(variant, K)` cell. Failures are recorded on the row.
pub fn sweep_cell(
    inputs: &TopicInputs,
    template: &TopicModelConfig,
    variant: Variant,
    k: usize,
    co: &Cooccurrence,
    word_embeddings: &[Vec<f64>],
    settings: &MetricSettings,
) -> SweepCell {
    let seed = cell_seed(template.seed, variant, k);
    let cfg = TopicModelConfig { k, variant, seed, ..template.clone() };
    let mut row = SweepRow { variant, k, alpha: None, rho: None, tau: None, selected: false, seed, error: None };
    let scored = train_topic_model(inputs, cfg).and_then(|t| {
        let n = settings.npmi_top_n.max(settings.alpha_top_n).max(settings.rbo_top_n).min(t.model.vocab_size());
        let rankings = t.model.top_word_lists(n)?;
        let report = evaluate_rankings(&rankings, co, word_embeddings, settings)?;
        Ok((t, report))
    });
    match scored {
        Ok((t, r)) => {
            row.alpha = Some(r.alpha.scores.mean);
            row.rho = Some(r.rho.rho);
            row.tau = Some(r.tau.mean);
            SweepCell { row, trained: Some(t) }
        }
        Err(e) => {
            row.error = Some(e.to_string());
            SweepCell { row, trained: None }
        }
    }
}

/// Index of the selected row: highest `tau`, ties by highest `rho`, then
/// by table order.
pub fn select(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        let (Some(tau), Some(rho)) = (r.tau, r.rho) else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let (bt, br) = (rows[b].tau.unwrap(), rows[b].rho.unwrap());
                tau > bt || (tau == bt && rho > br)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// One cell per `(variant, K)` in the given order, then selection.
pub fn sweep(
    inputs: &TopicInputs,
    template: &TopicModelConfig,
    variants: &[Variant],
    ks: &[usize],
    co: &Cooccurrence,
    word_embeddings: &[Vec<f64>],
    settings: &MetricSettings,
) -> Result<Vec<SweepCell>> {
    if ks.is_empty() || variants.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut cells = Vec::with_capacity(variants.len() * ks.len());
    for &v in variants {
        for &k in ks {
            let cell = sweep_cell(inputs, template, v, k, co, word_embeddings, settings);
            if let Some(e) = &cell.row.error {
                log::warn!("sweep cell {v}/K={k} failed: {e}");
            }
            cells.push(cell);
        }
    }
    let rows: Vec<SweepRow> = cells.iter().map(|c| c.row.clone()).collect();
    if let Some(i) = select(&rows) {
        cells[i].row.selected = true;
    }
    Ok(cells)
}
