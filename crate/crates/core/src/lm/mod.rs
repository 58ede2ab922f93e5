//! Tiny pre-LN causal transformer language model.
//!
//! Token embeddings are tied with the output projection. Decoding is
//! incremental: every forward pass takes an optional [`PastState`] holding
//! the per-layer keys and values of the tokens consumed so far, which is the
//! object the steering module perturbs.

mod sampling;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{TokenSequence, PAD};
use crate::error::{positive, Error, Result};
use crate::optim::{Adam, ParamSet};
use crate::rng::{self, normal_vec};
use crate::tensor::Tensor;

pub use sampling::{apply_repetition_penalty, argmax as argmax_index, sample_from, sample_token, sampling_distribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            max_len: 128,
            vocab_size: 0,
            epochs: 30,
            lr: 3e-3,
            batch_size: 16,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("lm: {m}")));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.max_len < 2 {
            return bad("max_len must be >= 2");
        }
        if self.n_layers == 0 || self.vocab_size <= crate::corpus::NUM_RESERVED {
            return bad("need at least one layer and a vocabulary beyond the reserved tokens");
        }
        if self.epochs == 0 || self.batch_size == 0 || !positive(self.lr) || !positive(self.grad_clip) {
            return bad("epochs, batch_size, lr and grad_clip must be positive");
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

const PER_LAYER: usize = 16;
const TOK: usize = 0;
const POS: usize = 1;

// offsets within a layer block
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;

/// Per-layer key/value history. Keys and values are stored as `[t, d_model]`
/// with heads occupying contiguous column blocks of width `d_head`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PastState {
    pub layers: Vec<LayerKv>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub key: Tensor,
    pub value: Tensor,
}

impl PastState {
    /// Number of positions consumed.
    pub fn len(&self) -> usize {
        self.layers.first().map(|l| l.key.shape()[0]).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keys and values of one layer as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct TapeKv {
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[n, V]`
    pub logits: Var,
    /// Final (post layer-norm) hidden states, `[n, d_model]`.
    pub hidden: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Next-token logits after the last input token.
    pub logits: Vec<f64>,
    pub new_past: PastState,
    /// Final hidden states of the input tokens, `[n, d_model]`.
    pub hidden: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    config: LmConfig,
    params: ParamSet,
}

impl LmParams {
    pub fn init(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_from(config.seed, &[rng::tag("lm-init")]);
        let (v, d, l) = (config.vocab_size, config.d_model, config.n_layers);
        let std = 0.02;
        let resid_std = std / libm::sqrt(2.0 * l as f64);
        let mut ps = ParamSet::new();
        let mut normal = |shape: &[usize], s: f64| {
            Tensor::new(shape.to_vec(), normal_vec(&mut rng, shape.iter().product(), s)).expect("finite init")
        };
        ps.push("tok_emb", normal(&[v, d], std));
        ps.push("pos_emb", normal(&[config.max_len, d], std));
        for i in 0..l {
            let p = |n: &str| format!("layer{i}.{n}");
            ps.push(p("ln1.g"), Tensor::full(&[d], 1.0));
            ps.push(p("ln1.b"), Tensor::zeros(&[d]));
            for name in ["q", "k", "v"] {
                ps.push(p(&format!("w{name}")), normal(&[d, d], std));
                ps.push(p(&format!("b{name}")), Tensor::zeros(&[d]));
            }
            ps.push(p("wo"), normal(&[d, d], resid_std));
            ps.push(p("bo"), Tensor::zeros(&[d]));
            ps.push(p("ln2.g"), Tensor::full(&[d], 1.0));
            ps.push(p("ln2.b"), Tensor::zeros(&[d]));
            ps.push(p("w1"), normal(&[d, 4 * d], std));
            ps.push(p("b1"), Tensor::zeros(&[4 * d]));
            ps.push(p("w2"), normal(&[4 * d, d], resid_std));
            ps.push(p("b2"), Tensor::zeros(&[d]));
        }
        ps.push("lnf.g", Tensor::full(&[d], 1.0));
        ps.push("lnf.b", Tensor::zeros(&[d]));
        Ok(Self { config, params: ps })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes
    /// against a fresh initialisation of `config`.
    pub fn from_tensors(config: LmConfig, tensors: Vec<(alloc::string::String, Tensor)>) -> Result<Self> {
        let template = Self::init(config.clone())?;
        if tensors.len() != template.params.len() {
            return Err(Error::Precondition(format!(
                "expected {} lm tensors, got {}",
                template.params.len(),
                tensors.len()
            )));
        }
        let mut ps = ParamSet::new();
        for (p, (name, t)) in template.params.iter().zip(tensors) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Precondition(format!(
                    "lm tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            ps.push(name, t);
        }
        Ok(Self { config, params: ps })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Input embedding matrix `[V, d_model]` (tied with the output projection).
    pub fn token_embeddings(&self) -> &Tensor {
        self.params.value(TOK)
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    /// Binds a stored history as constant leaves.
    pub fn bind_past<'a>(&self, tape: &mut Tape<'a>, past: &'a PastState) -> Vec<TapeKv> {
        past.layers
            .iter()
            .map(|l| TapeKv { key: tape.borrowed(&l.key, false), value: tape.borrowed(&l.value, false) })
            .collect()
    }

    /// Runs the transformer over input embeddings `x: [n, d]` placed at
    /// positions `past_len..past_len + n`. Returns outputs and the full
    /// (past + new) key/value history per layer.
    pub fn forward_embeds(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        x: Var,
        past: &[TapeKv],
    ) -> Result<(ForwardVars, Vec<TapeKv>)> {
        let cfg = &self.config;
        let n = tape.shape(x)[0];
        let start = past.first().map(|kv| tape.shape(kv.key)[0]).unwrap_or(0);
        if !past.is_empty() && past.len() != cfg.n_layers {
            return Err(Error::Precondition(format!("past has {} layers, model {}", past.len(), cfg.n_layers)));
        }
        if start + n > cfg.max_len {
            return Err(Error::ContextOverflow { needed: start + n, max_len: cfg.max_len });
        }
        let positions: Vec<usize> = (start..start + n).collect();
        let pos = tape.embedding(vars[POS], &positions)?;
        let mut h = tape.add(x, pos)?;
        let mut new_kv = Vec::with_capacity(cfg.n_layers);
        for layer in 0..cfg.n_layers {
            let w = |o: usize| vars[2 + layer * PER_LAYER + o];
            let a = tape.layer_norm(h, w(LN1_G), w(LN1_B))?;
            let q = tape.matmul(a, w(WQ))?;
            let q = tape.add(q, w(BQ))?;
            let k = tape.matmul(a, w(WK))?;
            let k = tape.add(k, w(BK))?;
            let v = tape.matmul(a, w(WV))?;
            let v = tape.add(v, w(BV))?;
            let (keys, values) = match past.get(layer) {
                Some(kv) => (tape.concat(&[kv.key, k], 0)?, tape.concat(&[kv.value, v], 0)?),
                None => (k, v),
            };
            let att = tape.attention(q, keys, values, cfg.n_heads, start)?;
            let o = tape.matmul(att, w(WO))?;
            let o = tape.add(o, w(BO))?;
            h = tape.add(h, o)?;
            let m = tape.layer_norm(h, w(LN2_G), w(LN2_B))?;
            let m = tape.matmul(m, w(W1))?;
            let m = tape.add(m, w(B1))?;
            let m = tape.gelu(m)?;
            let m = tape.matmul(m, w(W2))?;
            let m = tape.add(m, w(B2))?;
            h = tape.add(h, m)?;
            new_kv.push(TapeKv { key: keys, value: values });
        }
        let lnf = 2 + cfg.n_layers * PER_LAYER;
        let hidden = tape.layer_norm(h, vars[lnf], vars[lnf + 1])?;
        let logits = tape.matmul_t(hidden, vars[TOK])?;
        Ok((ForwardVars { logits, hidden }, new_kv))
    }

    pub fn forward_tokens(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        tokens: &[usize],
        past: &[TapeKv],
    ) -> Result<(ForwardVars, Vec<TapeKv>)> {
        if tokens.is_empty() {
            return Err(Error::Empty("tokens"));
        }
        let x = tape.embedding(vars[TOK], tokens)?;
        self.forward_embeds(tape, vars, x, past)
    }

    /// Incremental decoding step without gradient tracking.
    pub fn forward_step(&self, tokens: &[usize], past: Option<&PastState>) -> Result<StepOutput> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let past_vars = past.map(|p| self.bind_past(&mut tape, p)).unwrap_or_default();
        let (out, kv) = self.forward_tokens(&mut tape, &vars, tokens, &past_vars)?;
        Ok(Self::collect_step(&tape, out, &kv))
    }

    pub(crate) fn collect_step(tape: &Tape<'_>, out: ForwardVars, kv: &[TapeKv]) -> StepOutput {
        let logits_all = tape.value(out.logits);
        let v = tape.shape(out.logits)[1];
        let n = tape.shape(out.logits)[0];
        StepOutput {
            logits: logits_all[(n - 1) * v..].to_vec(),
            new_past: PastState {
                layers: kv.iter().map(|l| LayerKv { key: tape.tensor(l.key), value: tape.tensor(l.value) }).collect(),
            },
            hidden: tape.tensor(out.hidden),
        }
    }

    /// Full-sequence logits `[n, V]` (position `i` predicts token `i + 1`).
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (out, _) = self.forward_tokens(&mut tape, &vars, tokens, &[])?;
        Ok(tape.tensor(out.logits))
    }

    /// Final hidden states `[n, d_model]` of a full sequence.
    pub fn hidden_states(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (out, _) = self.forward_tokens(&mut tape, &vars, tokens, &[])?;
        Ok(tape.tensor(out.hidden))
    }

    /// Mean of the final hidden states over all positions of `tokens`.
    pub fn mean_hidden(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let h = self.hidden_states(tokens)?;
        let d = self.config.d_model;
        let n = tokens.len() as f64;
        let mut out = vec![0.0; d];
        for r in 0..tokens.len() {
            for (o, x) in out.iter_mut().zip(h.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// Sum of next-token NLL and the number of scored positions.
    fn sequence_nll(&self, ids: &[usize]) -> Result<(f64, usize)> {
        if ids.len() < 2 {
            return Ok((0.0, 0));
        }
        let logits = self.logits(&ids[..ids.len() - 1])?;
        let v = self.config.vocab_size;
        let mut nll = 0.0;
        let mut count = 0;
        let mut logp = vec![0.0; v];
        for (r, &t) in ids[1..].iter().enumerate() {
            if t == PAD {
                continue;
            }
            crate::autodiff::log_softmax_row(logits.row(r), &mut logp);
            nll -= logp[t];
            count += 1;
        }
        Ok((nll, count))
    }
}

fn targets_of(ids: &[usize]) -> Vec<Option<usize>> {
    ids[1..].iter().map(|&t| (t != PAD).then_some(t)).collect()
}

/// Trains from scratch. Returns the model and the token-weighted mean loss of each epoch.
pub fn train_lm(sequences: &[TokenSequence], config: LmConfig) -> Result<(LmParams, Vec<f64>)> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Empty("training sequences"));
    }
    if let Some(s) = sequences.iter().find(|s| s.ids.len() > config.max_len) {
        return Err(Error::ContextOverflow { needed: s.ids.len(), max_len: config.max_len });
    }
    let usable: Vec<&TokenSequence> = sequences.iter().filter(|s| s.ids.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Empty("sequences with at least two tokens"));
    }
    let mut model = LmParams::init(config.clone())?;
    let mut opt = Adam::with_lr(config.lr)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = rng::rng_from(config.seed, &[rng::tag("lm-epoch"), epoch as u64]);
        let order = rng::permutation(&mut rng, usable.len());
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let targets: Vec<Vec<Option<usize>>> = batch.iter().map(|&i| targets_of(&usable[i].ids)).collect();
            let total: usize = targets.iter().map(|t| t.iter().flatten().count()).sum();
            if total == 0 {
                continue;
            }
            model.params.zero_grad();
            for (&i, tgt) in batch.iter().zip(&targets) {
                let count = tgt.iter().flatten().count();
                if count == 0 {
                    continue;
                }
                let ids = &usable[i].ids;
                let (vars, grads, loss) = {
                    let mut tape = Tape::new();
                    let vars = model.bind(&mut tape, true);
                    let (out, _) = model.forward_tokens(&mut tape, &vars, &ids[..ids.len() - 1], &[])?;
                    let ce = tape.cross_entropy(out.logits, tgt)?;
                    let weighted = tape.scale(ce, count as f64 / total as f64)?;
                    let grads = tape.backward(weighted)?;
                    (vars, grads, tape.value(ce)[0])
                };
                model.params.accumulate(&vars, &grads);
                epoch_nll += loss * count as f64;
                epoch_tokens += count;
            }
            model.params.clip_grad_norm(config.grad_clip);
            opt.step(&mut model.params)?;
        }
        let mean = epoch_nll / epoch_tokens.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("lm training loss"));
        }
        log::debug!("lm epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok((model, curve))
}

/// `exp` of the token-weighted mean negative log-likelihood over non-PAD targets.
pub fn perplexity(model: &LmParams, sequences: &[TokenSequence]) -> Result<f64> {
    let mut nll = 0.0;
    let mut count = 0;
    for s in sequences {
        let (n, c) = model.sequence_nll(&s.ids)?;
        nll += n;
        count += c;
    }
    if count == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(libm::exp(nll / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BOS, EOS};

    fn small(vocab: usize) -> LmConfig {
        LmConfig { vocab_size: vocab, d_model: 16, n_heads: 2, max_len: 32, seed: 3, ..LmConfig::default() }
    }

    fn seq(ids: Vec<usize>) -> TokenSequence {
        TokenSequence { ids, doc_id: alloc::string::String::new() }
    }

    #[test]
    fn uniform_logits_give_vocab_perplexity() {
        let mut m = LmParams::init(small(16)).unwrap();
        for p in m.params_mut().iter_mut().filter(|p| p.name == "tok_emb") {
            p.value = Tensor::zeros(p.value.shape());
        }
        let s = [seq(vec![BOS, 5, 9, 4, 15, EOS]), seq(vec![BOS, 7, EOS])];
        let ppl = perplexity(&m, &s).unwrap();
        assert!((ppl - 16.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn incremental_matches_full_forward() {
        let m = LmParams::init(LmConfig { seed: 11, ..small(20) }).unwrap();
        let tokens = [BOS, 4, 9, 12, 5, 5, 19, 7, 8, 6];
        let full = m.logits(&tokens).unwrap();
        let mut past: Option<PastState> = None;
        for (i, &t) in tokens.iter().enumerate() {
            let out = m.forward_step(&[t], past.as_ref()).unwrap();
            assert_eq!(out.new_past.len(), i + 1);
            for (a, b) in out.logits.iter().zip(full.row(i)) {
                assert!((a - b).abs() < 1e-9);
            }
            past = Some(out.new_past);
        }
        // chunked continuation agrees too
        let head = m.forward_step(&tokens[..4], None).unwrap();
        let tail = m.forward_step(&tokens[4..], Some(&head.new_past)).unwrap();
        assert_eq!(tail.new_past.len(), 10);
        for (a, b) in tail.logits.iter().zip(full.row(9)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn causal() {
        let m = LmParams::init(small(20)).unwrap();
        let a = m.logits(&[BOS, 4, 5, 6, 7]).unwrap();
        let b = m.logits(&[BOS, 4, 5, 19, 18]).unwrap();
        assert_eq!(a.data()[..3 * 20], b.data()[..3 * 20]);
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn bos_gives_distribution_and_overflow_errors() {
        let m = LmParams::init(small(10)).unwrap();
        let out = m.forward_step(&[BOS], None).unwrap();
        let mut p = vec![0.0; 10];
        crate::autodiff::softmax_row(&out.logits, &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let long = vec![4usize; 33];
        assert!(matches!(m.forward_step(&long, None), Err(Error::ContextOverflow { .. })));
        assert!(matches!(
            train_lm(&[seq(long)], small(10)),
            Err(Error::ContextOverflow { needed: 33, max_len: 32 })
        ));
    }

    #[test]
    fn learns_a_deterministic_cycle() {
        let mut ids = vec![BOS];
        for i in 0..18 {
            ids.push(4 + i % 2);
        }
        ids.push(EOS);
        let data: Vec<TokenSequence> = (0..8).map(|_| seq(ids.clone())).collect();
        let cfg = LmConfig { epochs: 40, lr: 1e-2, batch_size: 4, ..small(6) };
        let (m, curve) = train_lm(&data, cfg.clone()).unwrap();
        assert!((curve[0] - libm::log(6.0)).abs() < 0.5, "{}", curve[0]);
        assert!(curve.last().unwrap() < &curve[0]);
        let ppl = perplexity(&m, &data).unwrap();
        assert!((1.0..=1.1).contains(&ppl), "{ppl}");
        let (_, again) = train_lm(&data, cfg).unwrap();
        assert_eq!(curve, again);
    }
}
