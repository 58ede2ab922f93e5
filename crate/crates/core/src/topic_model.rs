//! Variational topic model over frozen-LM document embeddings.
//!
//! The encoder maps a document's input vector to the mean and log-variance
//! of a logistic-normal posterior over `K` topics. The decoder reconstructs
//! the bag of words from `softmax(theta · beta)`. The prior is the Laplace
//! approximation of a symmetric Dirichlet with concentration `alpha`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_row, Tape, Var};
use crate::corpus::{first_chunk, frame_first_chunk, Document, Vocabulary};
use crate::error::{positive, Error, Result};
use crate::lm::LmParams;
use crate::optim::{Adam, ParamSet};
use crate::rng::{self, normal_vec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Encoder sees the document embedding only.
    Contextual,
    /// Encoder sees the embedding concatenated with the normalised bag of words.
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Contextual, Variant::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Contextual => "contextual",
            Variant::Combined => "combined",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contextual" => Ok(Variant::Contextual),
            "combined" => Ok(Variant::Combined),
            _ => Err(Error::InvalidConfig(format!("unknown topic model variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModelConfig {
    pub k: usize,
    pub variant: Variant,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Dirichlet concentration; `None` means `1 / K`.
    #[serde(default)]
    pub prior_alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    100
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    2e-3
}

impl TopicModelConfig {
    pub fn new(k: usize, variant: Variant) -> Self {
        Self {
            k,
            variant,
            hidden_dim: default_hidden(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            prior_alpha: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alpha_ok = self.prior_alpha.is_none_or(positive);
        if self.k < 2 || self.epochs == 0 || self.hidden_dim == 0 || self.batch_size == 0 || !positive(self.lr) || !alpha_ok
        {
            return Err(Error::InvalidConfig(format!("topic model: invalid settings {self:?}")));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.prior_alpha.unwrap_or(1.0 / self.k as f64)
    }

    /// Prior variance of every logistic-normal coordinate.
    pub fn prior_variance(&self) -> f64 {
        let k = self.k as f64;
        (k - 1.0) / (self.alpha() * k)
    }
}

/// Per-document encoder inputs aligned with the corpus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopicInputs {
    pub embeddings: Vec<Vec<f64>>,
    pub bows: Vec<Vec<u32>>,
}

impl TopicInputs {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    fn check(&self) -> Result<(usize, usize)> {
        if self.embeddings.is_empty() {
            return Err(Error::Empty("topic model corpus"));
        }
        if self.embeddings.len() != self.bows.len() {
            return Err(Error::Precondition(format!(
                "{} embeddings for {} bags of words",
                self.embeddings.len(),
                self.bows.len()
            )));
        }
        let d = self.embeddings[0].len();
        let v = self.bows[0].len();
        if d == 0 || v == 0 {
            return Err(Error::Empty("embedding or vocabulary dimension"));
        }
        if self.embeddings.iter().any(|e| e.len() != d) || self.bows.iter().any(|b| b.len() != v) {
            return Err(Error::Precondition("ragged topic model inputs".into()));
        }
        Ok((d, v))
    }
}

/// Encoder input for one document.
pub fn encoder_input(variant: Variant, embedding: &[f64], bow: &[u32]) -> Vec<f64> {
    let mut x = embedding.to_vec();
    if variant == Variant::Combined {
        let total: u32 = bow.iter().sum();
        let norm = if total == 0 { 0.0 } else { 1.0 / total as f64 };
        x.extend(bow.iter().map(|&c| c as f64 * norm));
    }
    x
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const WMU: usize = 4;
const BMU: usize = 5;
const WLV: usize = 6;
const BLV: usize = 7;
const BETA: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    config: TopicModelConfig,
    embed_dim: usize,
    vocab_size: usize,
    params: ParamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTopicModel {
    pub model: TopicModel,
    /// Mean negative ELBO per document for each epoch.
    pub loss_curve: Vec<f64>,
    /// Mean KL term per document for each epoch.
    pub kl_curve: Vec<f64>,
    pub final_elbo: f64,
}

struct Encoded {
    mu: Var,
    logvar: Var,
}

impl TopicModel {
    pub fn init(config: TopicModelConfig, embed_dim: usize, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if config.k > vocab_size {
            return Err(Error::InvalidConfig(format!(
                "K = {} exceeds the content vocabulary size {vocab_size}",
                config.k
            )));
        }
        let input = match config.variant {
            Variant::Contextual => embed_dim,
            Variant::Combined => embed_dim + vocab_size,
        };
        let (h, k) = (config.hidden_dim, config.k);
        let mut r = rng::rng_from(config.seed, &[rng::tag("tm-init")]);
        let mut normal = |shape: [usize; 2], std: f64| {
            Tensor::new(shape.to_vec(), normal_vec(&mut r, shape[0] * shape[1], std)).expect("finite init")
        };
        let mut ps = ParamSet::new();
        ps.push("enc.w1", normal([input, h], libm::sqrt(1.0 / input as f64)));
        ps.push("enc.b1", Tensor::zeros(&[h]));
        ps.push("enc.w2", normal([h, h], libm::sqrt(1.0 / h as f64)));
        ps.push("enc.b2", Tensor::zeros(&[h]));
        ps.push("enc.wmu", normal([h, k], libm::sqrt(1.0 / h as f64)));
        ps.push("enc.bmu", Tensor::zeros(&[k]));
        ps.push("enc.wlv", normal([h, k], libm::sqrt(1.0 / h as f64)));
        ps.push("enc.blv", Tensor::zeros(&[k]));
        ps.push("beta", normal([k, vocab_size], libm::sqrt(2.0 / (k + vocab_size) as f64)));
        Ok(Self { config, embed_dim, vocab_size, params: ps })
    }

    pub fn from_tensors(
        config: TopicModelConfig,
        embed_dim: usize,
        vocab_size: usize,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let mut m = Self::init(config, embed_dim, vocab_size)?;
        if tensors.len() != m.params.len() {
            return Err(Error::Precondition(format!(
                "expected {} topic model tensors, got {}",
                m.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, t)) in m.params.iter_mut().zip(tensors) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Precondition(format!("topic model tensor {name} does not match {}", p.name)));
            }
            p.value = t;
        }
        Ok(m)
    }

    pub fn config(&self) -> &TopicModelConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Topic-word logits `[K, V_content]`.
    pub fn beta(&self) -> &Tensor {
        self.params.value(BETA)
    }

    fn encode(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var) -> Result<Encoded> {
        let h = tape.matmul(x, vars[W1])?;
        let h = tape.add(h, vars[B1])?;
        let h = tape.softplus(h)?;
        let h = tape.matmul(h, vars[W2])?;
        let h = tape.add(h, vars[B2])?;
        let h = tape.softplus(h)?;
        let mu = tape.matmul(h, vars[WMU])?;
        let mu = tape.add(mu, vars[BMU])?;
        let lv = tape.matmul(h, vars[WLV])?;
        let logvar = tape.add(lv, vars[BLV])?;
        Ok(Encoded { mu, logvar })
    }

    fn input_matrix(&self, inputs: &TopicInputs, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::new();
        for &i in idx {
            data.extend(encoder_input(self.config.variant, &inputs.embeddings[i], &inputs.bows[i]));
        }
        let cols = data.len() / idx.len().max(1);
        Tensor::matrix(idx.len(), cols, data)
    }

    /// Posterior mean `mu` for each listed document, `[n, K]`.
    fn posterior_means(&self, inputs: &TopicInputs, idx: &[usize]) -> Result<Tensor> {
        let x = self.input_matrix(inputs, idx)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let xv = tape.borrowed(&x, false);
        let enc = self.encode(&mut tape, &vars, xv)?;
        Ok(tape.tensor(enc.mu))
    }

    /// `theta = softmax(mu)` for one document (no sampling).
    pub fn infer(&self, embedding: &[f64], bow: &[u32]) -> Result<Vec<f64>> {
        let inputs = TopicInputs { embeddings: vec![embedding.to_vec()], bows: vec![bow.to_vec()] };
        Ok(self.infer_all(&inputs)?.pop().expect("one row"))
    }

    pub fn infer_all(&self, inputs: &TopicInputs) -> Result<Vec<Vec<f64>>> {
        let (d, v) = inputs.check()?;
        if d != self.embed_dim || v != self.vocab_size {
            return Err(Error::ShapeMismatch {
                op: "infer_topics",
                detail: format!("inputs ({d}, {v}) vs model ({}, {})", self.embed_dim, self.vocab_size),
            });
        }
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let mu = self.posterior_means(inputs, &idx)?;
        Ok((0..inputs.len())
            .map(|r| {
                let mut theta = vec![0.0; self.config.k];
                softmax_row(mu.row(r), &mut theta);
                theta
            })
            .collect())
    }

    /// The `n` highest-weighted content ids of `topic`; ties by ascending id.
    pub fn top_words(&self, topic: usize, n: usize) -> Result<Vec<usize>> {
        if topic >= self.config.k {
            return Err(Error::OutOfRange { what: "topic", index: topic, size: self.config.k });
        }
        if n > self.vocab_size {
            return Err(Error::OutOfRange { what: "top_n", index: n, size: self.vocab_size });
        }
        let row = self.beta().row(topic);
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(n);
        Ok(ids)
    }

    pub fn top_word_lists(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        (0..self.config.k).map(|t| self.top_words(t, n)).collect()
    }

    /// Per-document negative ELBO summed over the batch, plus the KL part.
    fn batch_loss(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var, bow: Var, eps: Var) -> Result<(Var, Var)> {
        let enc = self.encode(tape, vars, x)?;
        let half = tape.scale(enc.logvar, 0.5)?;
        let std = tape.exp(half)?;
        let noise = tape.mul(std, eps)?;
        let z = tape.add(enc.mu, noise)?;
        let theta = tape.softmax(z)?;
        let logits = tape.matmul(theta, vars[BETA])?;
        let logp = tape.log_softmax(logits)?;
        let ll = tape.mul(bow, logp)?;
        let ll = tape.sum(ll)?;
        let shape = tape.shape(enc.mu).to_vec();
        let prior_mu = tape.constant(Tensor::zeros(&shape));
        let prior_lv = tape.constant(Tensor::full(&shape, libm::log(self.config.prior_variance())));
        let kl = tape.kl_gaussian(enc.mu, enc.logvar, prior_mu, prior_lv)?;
        let kl = tape.sum(kl)?;
        let neg_ll = tape.scale(ll, -1.0)?;
        Ok((tape.add(neg_ll, kl)?, kl))
    }
}

/// Maximises the ELBO with Adam over seeded minibatches.
pub fn train_topic_model(inputs: &TopicInputs, config: TopicModelConfig) -> Result<TrainedTopicModel> {
    let (d, v) = inputs.check()?;
    let mut model = TopicModel::init(config.clone(), d, v)?;
    let mut opt = Adam::with_lr(config.lr)?;
    let n = inputs.len();
    let k = config.k;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut kl_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order_rng = rng::rng_from(config.seed, &[rng::tag("tm-epoch"), epoch as u64]);
        let order = rng::permutation(&mut order_rng, n);
        let (mut total, mut total_kl) = (0.0, 0.0);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = model.input_matrix(inputs, idx)?;
            let mut bow = Vec::with_capacity(idx.len() * v);
            for &i in idx {
                bow.extend(inputs.bows[i].iter().map(|&c| c as f64));
            }
            let bow = Tensor::matrix(idx.len(), v, bow)?;
            let mut noise_rng = rng::rng_from(config.seed, &[rng::tag("tm-noise"), epoch as u64, b as u64]);
            let eps = Tensor::matrix(idx.len(), k, normal_vec(&mut noise_rng, idx.len() * k, 1.0))?;
            let (vars, grads, loss, kl) = {
                let mut tape = Tape::new();
                let vars = model.params.bind(&mut tape, true);
                let xv = tape.borrowed(&x, false);
                let bv = tape.borrowed(&bow, false);
                let ev = tape.borrowed(&eps, false);
                let (loss, kl) = model.batch_loss(&mut tape, &vars, xv, bv, ev)?;
                let mean = tape.scale(loss, 1.0 / idx.len() as f64)?;
                let grads = tape.backward(mean)?;
                (vars, grads, tape.value(loss)[0], tape.value(kl)[0])
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite("topic model loss"));
            }
            model.params.zero_grad();
            model.params.accumulate(&vars, &grads);
            opt.step(&mut model.params)?;
            total += loss;
            total_kl += kl;
        }
        loss_curve.push(total / n as f64);
        kl_curve.push(total_kl / n as f64);
    }
    let final_elbo = -loss_curve.last().copied().unwrap_or(f64::NAN);
    Ok(TrainedTopicModel { model, loss_curve, kl_curve, final_elbo })
}

/// Mean of the frozen LM's final hidden states over the document's first chunk.
pub fn embed_document(doc: &Document, vocab: &Vocabulary, lm: &LmParams) -> Result<Vec<f64>> {
    let ids = first_chunk(doc, vocab, lm.config().max_len - 2).ok_or(Error::Empty("document"))?;
    lm.mean_hidden(&ids)
}

/// As [`embed_document`] for an already-encoded sequence-id list (no BOS/EOS).
pub fn embed_ids(ids: &[usize], vocab: &Vocabulary, lm: &LmParams) -> Result<Vec<f64>> {
    let framed = frame_first_chunk(ids, vocab, lm.config().max_len - 2).ok_or(Error::Empty("document"))?;
    lm.mean_hidden(&framed)
}

/// LM input-embedding row of every content word, indexed by content id.
pub fn content_word_embeddings(vocab: &Vocabulary, lm: &LmParams) -> Result<Vec<Vec<f64>>> {
    let emb = lm.token_embeddings();
    vocab
        .content_entries()
        .map(|(t, _)| {
            let id = vocab.seq_id(t).ok_or_else(|| Error::Precondition(format!("content word {t:?} has no sequence id")))?;
            if id >= emb.shape()[0] {
                return Err(Error::OutOfRange { what: "token embedding", index: id, size: emb.shape()[0] });
            }
            Ok(emb.row(id).to_vec())
        })
        .collect()
}

/// Lowest index of the maximum.
pub fn argmax(x: &[f64]) -> usize {
    crate::lm::argmax_index(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub doc_id: String,
    pub theta: Vec<f64>,
    /// `argmax theta` over all topics.
    pub label: usize,
    /// Whether `label` is one of the retained topics.
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub docs: Vec<LabeledDoc>,
    /// Retained topic ids in ascending order.
    pub retained_topics: Vec<usize>,
    /// Argmax frequency of every topic.
    pub label_counts: Vec<usize>,
}

impl LabeledCorpus {
    pub fn retained_docs(&self) -> impl Iterator<Item = (usize, &LabeledDoc)> {
        self.docs.iter().enumerate().filter(|(_, d)| d.retained)
    }
}

/// Hard-labels documents by `argmax theta` and keeps the `retain_top` most
/// frequent labels (frequency ties by ascending topic id).
pub fn label_corpus(doc_ids: &[String], thetas: &[Vec<f64>], retain_top: usize) -> Result<LabeledCorpus> {
    if thetas.is_empty() || doc_ids.len() != thetas.len() {
        return Err(Error::Precondition("label_corpus needs one theta per document".into()));
    }
    let k = thetas[0].len();
    if retain_top > k || retain_top == 0 {
        return Err(Error::InvalidConfig(format!("retain_top {retain_top} must be in 1..={k}")));
    }
    let labels: Vec<usize> = thetas.iter().map(|t| argmax(t)).collect();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut retained: Vec<usize> = order.into_iter().take(retain_top).filter(|&t| counts[t] > 0).collect();
    retained.sort_unstable();
    if retained.len() < 2 {
        return Err(Error::Precondition(format!(
            "only {} retained topic(s) have documents; need at least 2",
            retained.len()
        )));
    }
    let docs = doc_ids
        .iter()
        .zip(thetas)
        .zip(&labels)
        .map(|((id, theta), &label)| LabeledDoc {
            doc_id: id.clone(),
            theta: theta.clone(),
            label,
            retained: retained.contains(&label),
        })
        .collect();
    Ok(LabeledCorpus { docs, retained_topics: retained, label_counts: counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_variance_from_alpha() {
        let c = TopicModelConfig::new(3, Variant::Contextual);
        assert!((c.prior_variance() - 2.0).abs() < 1e-12);
        let c = TopicModelConfig { prior_alpha: Some(0.5), ..TopicModelConfig::new(4, Variant::Combined) };
        assert!((c.prior_variance() - 1.5).abs() < 1e-12);
        assert!(TopicModelConfig::new(1, Variant::Contextual).validate().is_err());
    }

    #[test]
    fn single_topic_simplex_is_one() {
        // the K = 1 case at the theta map level; configurations require K >= 2
        let mut theta = [0.0];
        softmax_row(&[-3.7], &mut theta);
        assert_eq!(theta, [1.0]);
    }

    #[test]
    fn combined_input_normalises_bow() {
        let x = encoder_input(Variant::Combined, &[0.5, -1.0], &[2, 0, 2]);
        assert_eq!(x, vec![0.5, -1.0, 0.5, 0.0, 0.5]);
        assert_eq!(encoder_input(Variant::Combined, &[1.0], &[0, 0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(encoder_input(Variant::Contextual, &[1.0], &[3]), vec![1.0]);
    }

    #[test]
    fn top_words_ties_and_bounds() {
        let mut m = TopicModel::init(TopicModelConfig::new(2, Variant::Contextual), 3, 4).unwrap();
        for p in m.params.iter_mut().filter(|p| p.name == "beta") {
            p.value = Tensor::matrix(2, 4, vec![0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(m.top_words(0, 4).unwrap(), vec![1, 2, 3, 0]);
        assert_eq!(m.top_words(1, 2).unwrap(), vec![0, 1]);
        assert!(m.top_words(2, 1).is_err());
        assert!(m.top_words(0, 5).is_err());
    }

    #[test]
    fn k_above_vocab_rejected() {
        assert!(TopicModel::init(TopicModelConfig::new(5, Variant::Contextual), 3, 4).is_err());
    }

    #[test]
    fn labels_retain_most_frequent() {
        let ids: Vec<String> = (0..5).map(|i| format!("{i}")).collect();
        let th = |t: usize| {
            let mut v = vec![0.1; 3];
            v[t] = 0.8;
            v
        };
        let thetas = vec![th(0), th(2), th(2), th(0), th(0)];
        let lc = label_corpus(&ids, &thetas, 2).unwrap();
        assert_eq!(lc.retained_topics, vec![0, 2]);
        assert_eq!(lc.label_counts, vec![3, 0, 2]);
        assert!(lc.docs.iter().all(|d| d.retained));
        let all = label_corpus(&ids, &thetas, 3).unwrap();
        assert_eq!(all.retained_topics, vec![0, 2]);
        // ties go to the lower topic id
        let tied = vec![th(1), th(2), th(0)];
        let lc = label_corpus(&ids[..3], &tied, 2).unwrap();
        assert_eq!(lc.retained_topics, vec![0, 1]);
        assert!(!lc.docs[1].retained);
        assert!(label_corpus(&ids[..2], &[th(1), th(1)], 2).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        // two clusters in embedding space, each with its own words
        let mut inputs = TopicInputs::default();
        for i in 0..40 {
            let c = i % 2;
            let e = if c == 0 { vec![1.0, 0.0, 0.2] } else { vec![0.0, 1.0, -0.2] };
            let mut bow = vec![0u32; 6];
            bow[3 * c + i % 3] += 2;
            bow[3 * c + (i + 1) % 3] += 1;
            inputs.embeddings.push(e);
            inputs.bows.push(bow);
        }
        let cfg = TopicModelConfig { epochs: 60, batch_size: 8, lr: 1e-2, hidden_dim: 16, ..TopicModelConfig::new(2, Variant::Combined) };
        let a = train_topic_model(&inputs, cfg.clone()).unwrap();
        assert!(a.loss_curve.last().unwrap() < &a.loss_curve[0]);
        assert!(a.kl_curve.iter().all(|&k| k >= 0.0));
        let b = train_topic_model(&inputs, cfg).unwrap();
        assert_eq!(a.model.beta().data(), b.model.beta().data());
        let thetas = a.model.infer_all(&inputs).unwrap();
        for t in &thetas {
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(t.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(thetas[0], thetas[6]);
        let l0 = argmax(&thetas[0]);
        assert_ne!(l0, argmax(&thetas[1]));
        let top = a.model.top_words(l0, 3).unwrap();
        assert!(top.iter().all(|&w| w < 3), "{top:?}");
    }
}
