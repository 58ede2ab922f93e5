//! Gradient steering of the LM's key/value history toward a discriminator class.
//!
//! For every emitted token the history is shifted by `delta`, which takes
//! `grad_iterations` normalised gradient steps on
//! `-log p(target | features) + kl_scale * KL(p_pert || p_unpert)`.
//! Features average the unperturbed context hidden states, the hidden state
//! of the current step and those of a short rollout that feeds back expected
//! token embeddings. Perturbed and unperturbed next-token distributions are
//! fused geometrically before sampling.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_row, softmax_row, Tape, Var};
use crate::corpus::{Vocabulary, BOS, EOS};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::lm::{sample_token, LayerKv, LmParams, PastState, TapeKv};
use crate::rng;
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    pub step_size: f64,
    pub gm_scale: f64,
    pub kl_scale: f64,
    pub grad_iterations: usize,
    pub horizon_length: usize,
    /// 0 perturbs the whole history.
    pub window_length: usize,
    pub length: usize,
    pub top_k: usize,
    pub temperature: f64,
    pub repetition_penalty: f64,
    /// When false, EOS is never sampled and every generation runs `length` steps.
    pub stop_at_eos: bool,
    pub seed: u64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            step_size: 0.3,
            gm_scale: 0.95,
            kl_scale: 0.01,
            grad_iterations: 15,
            horizon_length: 5,
            window_length: 0,
            length: 60,
            top_k: 10,
            temperature: 1.0,
            repetition_penalty: 1.5,
            stop_at_eos: true,
            seed: 0,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size >= 0.0
            && self.step_size.is_finite()
            && (0.0..=1.0).contains(&self.gm_scale)
            && self.kl_scale >= 0.0
            && self.kl_scale.is_finite()
            && self.length >= 1
            && self.top_k >= 1
            && self.temperature > 0.0
            && self.temperature.is_finite()
            && self.repetition_penalty >= 1.0
            && self.repetition_penalty.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("steering: invalid settings {self:?}")))
        }
    }
}

/// `log q ∝ gm * log max(p_pert, eps) + (1 - gm) * log max(p_unpert, eps)`,
/// renormalised. Bitwise-equal inputs are returned unchanged.
pub fn fuse_log_probs(logp_pert: &[f64], logp_unpert: &[f64], gm_scale: f64) -> Vec<f64> {
    if logp_pert == logp_unpert {
        return logp_unpert.to_vec();
    }
    let floor = libm::log(PROB_FLOOR);
    let mixed: Vec<f64> =
        logp_pert.iter().zip(logp_unpert).map(|(&a, &b)| gm_scale * a.max(floor) + (1.0 - gm_scale) * b.max(floor)).collect();
    let mut out = vec![0.0; mixed.len()];
    log_softmax_row(&mixed, &mut out);
    out
}

/// Geometric fusion of two distributions.
pub fn fuse_distributions(p_pert: &[f64], p_unpert: &[f64], gm_scale: f64) -> Vec<f64> {
    let la: Vec<f64> = p_pert.iter().map(|&p| libm::log(p.max(PROB_FLOOR))).collect();
    let lb: Vec<f64> = p_unpert.iter().map(|&p| libm::log(p.max(PROB_FLOOR))).collect();
    let mut out = fuse_log_probs(&la, &lb, gm_scale);
    out.iter_mut().for_each(|x| *x = libm::exp(*x));
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Everything the objective needs about the current decoding position.
#[derive(Debug, Clone)]
pub struct StepContext<'p> {
    /// History of all consumed tokens except `last`.
    pub past: &'p PastState,
    pub last: usize,
    /// Sum of unperturbed final hidden states of the tokens in `past`.
    pub context_sum: &'p [f64],
    /// Unperturbed next-token probabilities after `last`.
    pub unpert_probs: &'p [f64],
    /// Unperturbed history including `last`; the rollout continues from it.
    pub rollout_past: &'p PastState,
}

struct Objective {
    loss: Var,
    p_target: f64,
    deltas: Vec<(Var, Var)>,
}

fn build_objective<'a>(
    tape: &mut Tape<'a>,
    lm: &'a LmParams,
    disc: &'a Discriminator,
    ctx: &StepContext<'a>,
    delta: &[LayerKv],
    target: usize,
    cfg: &SteeringConfig,
) -> Result<Objective> {
    let lm_vars = lm.bind(tape, false);
    let disc_vars = disc.bind(tape, false);
    let t = ctx.past.len();
    let mut past_vars = Vec::with_capacity(delta.len());
    let mut deltas = Vec::with_capacity(delta.len());
    for (layer, d) in ctx.past.layers.iter().zip(delta) {
        let k0 = tape.borrowed(&layer.key, false);
        let v0 = tape.borrowed(&layer.value, false);
        let dk = tape.leaf(d.key.clone(), true);
        let dv = tape.leaf(d.value.clone(), true);
        past_vars.push(TapeKv { key: tape.add(k0, dk)?, value: tape.add(v0, dv)? });
        deltas.push((dk, dv));
    }
    let (out, _) = lm.forward_tokens(tape, &lm_vars, &[ctx.last], &past_vars)?;
    let mut kv = lm.bind_past(tape, ctx.rollout_past);
    let d_model = lm.config().d_model;
    let ctx_sum = tape.constant(Tensor::matrix(1, d_model, ctx.context_sum.to_vec())?);
    let mut feature_sum = tape.add(ctx_sum, out.hidden)?;
    let probs = tape.softmax(out.logits)?;
    let horizon = cfg.horizon_length.min(lm.config().max_len.saturating_sub(ctx.rollout_past.len()));
    let mut p = probs;
    for _ in 0..horizon {
        let emb = tape.matmul(p, lm_vars[0])?;
        let (o, next_kv) = lm.forward_embeds(tape, &lm_vars, emb, &kv)?;
        kv = next_kv;
        feature_sum = tape.add(feature_sum, o.hidden)?;
        p = tape.softmax(o.logits)?;
    }
    let features = tape.scale(feature_sum, 1.0 / (t + 1 + horizon) as f64)?;
    let z = disc.logits_var(tape, &disc_vars, features)?;
    let ce = tape.cross_entropy(z, &[Some(target)])?;
    let mut cls = vec![0.0; disc.num_classes()];
    softmax_row(tape.value(z), &mut cls);
    let mut loss = ce;
    if cfg.kl_scale > 0.0 {
        let logp = tape.log_softmax(out.logits)?;
        let v = ctx.unpert_probs.len();
        let lq: Vec<f64> = ctx.unpert_probs.iter().map(|&q| libm::log(q.max(PROB_FLOOR))).collect();
        let lq = tape.constant(Tensor::matrix(1, v, lq)?);
        let diff = tape.sub(logp, lq)?;
        let kl = tape.mul(probs, diff)?;
        let kl = tape.sum(kl)?;
        let kl = tape.scale(kl, cfg.kl_scale)?;
        loss = tape.add(loss, kl)?;
    }
    Ok(Objective { loss, p_target: cls[target], deltas })
}

fn zero_delta(past: &PastState) -> Vec<LayerKv> {
    past.layers
        .iter()
        .map(|l| LayerKv { key: Tensor::zeros(l.key.shape()), value: Tensor::zeros(l.value.shape()) })
        .collect()
}

fn add_delta(past: &PastState, delta: &[LayerKv]) -> Result<PastState> {
    let sum = |a: &Tensor, b: &Tensor| {
        Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
    };
    let layers = past
        .layers
        .iter()
        .zip(delta)
        .map(|(l, d)| Ok(LayerKv { key: sum(&l.key, &d.key)?, value: sum(&l.value, &d.value)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(PastState { layers })
}

/// Discriminator probability of `target` on the rollout features of the
/// history shifted by `delta` (zero when `None`).
pub fn rollout_target_prob(
    lm: &LmParams,
    disc: &Discriminator,
    ctx: &StepContext<'_>,
    delta: Option<&[LayerKv]>,
    target: usize,
    cfg: &SteeringConfig,
) -> Result<f64> {
    let zeros;
    let delta = match delta {
        Some(d) => d,
        None => {
            zeros = zero_delta(ctx.past);
            &zeros
        }
    };
    let mut tape = Tape::new();
    Ok(build_objective(&mut tape, lm, disc, ctx, delta, target, cfg)?.p_target)
}

/// Returns the accumulated history shift `delta` (same shapes as the past).
pub fn perturbation(
    lm: &LmParams,
    disc: &Discriminator,
    ctx: &StepContext<'_>,
    target: usize,
    cfg: &SteeringConfig,
) -> Result<Vec<LayerKv>> {
    if target >= disc.num_classes() {
        return Err(Error::OutOfRange { what: "target class", index: target, size: disc.num_classes() });
    }
    if ctx.past.is_empty() {
        return Err(Error::Empty("past"));
    }
    let mut delta = zero_delta(ctx.past);
    if cfg.step_size == 0.0 || cfg.grad_iterations == 0 {
        return Ok(delta);
    }
    let t = ctx.past.len();
    let d = lm.config().d_model;
    let window_start = if cfg.window_length == 0 { 0 } else { t.saturating_sub(cfg.window_length) };
    for _ in 0..cfg.grad_iterations {
        let grads: Vec<(Vec<f64>, Vec<f64>)> = {
            let mut tape = Tape::new();
            let obj = build_objective(&mut tape, lm, disc, ctx, &delta, target, cfg)?;
            let g = tape.backward(obj.loss)?;
            obj.deltas
                .iter()
                .map(|&(k, v)| {
                    let get = |x: Var| g.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t * d]);
                    (get(k), get(v))
                })
                .collect()
        };
        for (layer, (mut gk, mut gv)) in delta.iter_mut().zip(grads) {
            gk[..window_start * d].iter_mut().for_each(|x| *x = 0.0);
            gv[..window_start * d].iter_mut().for_each(|x| *x = 0.0);
            let norm = libm::sqrt(gk.iter().chain(&gv).map(|x| x * x).sum::<f64>()) + NORM_EPS;
            if !norm.is_finite() {
                return Err(Error::NonFinite("steering gradient"));
            }
            let s = cfg.step_size / norm;
            layer.key.update(|k| k.iter_mut().zip(&gk).for_each(|(x, g)| *x -= s * g))?;
            layer.value.update(|v| v.iter_mut().zip(&gv).for_each(|(x, g)| *x -= s * g))?;
        }
    }
    Ok(delta)
}

/// The history shifted by [`perturbation`].
pub fn perturb_past(
    lm: &LmParams,
    disc: &Discriminator,
    ctx: &StepContext<'_>,
    target: usize,
    cfg: &SteeringConfig,
) -> Result<PastState> {
    if cfg.step_size == 0.0 || cfg.grad_iterations == 0 {
        return Ok(ctx.past.clone());
    }
    let delta = perturbation(lm, disc, ctx, target, cfg)?;
    add_delta(ctx.past, &delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub target_topic: usize,
    pub target_class: usize,
    pub prefix: String,
    pub prefix_index: usize,
    pub sample_index: usize,
    pub token_ids: Vec<usize>,
    pub text: String,
    /// Discriminator probability of the target after each generated token,
    /// on the mean unperturbed hidden state of everything consumed so far.
    pub p_target: Vec<f64>,
    pub seed: u64,
    pub config: SteeringConfig,
    pub error: Option<String>,
}

impl GenerationRecord {
    pub fn mean_p_target(&self) -> Option<f64> {
        (!self.p_target.is_empty()).then(|| self.p_target.iter().sum::<f64>() / self.p_target.len() as f64)
    }
}

/// Per-step view handed to a generation observer.
pub struct StepInfo<'a> {
    pub step: usize,
    /// Log-probabilities the token is sampled from (before top-k etc.).
    pub fused_log_probs: &'a [f64],
    pub unpert_log_probs: &'a [f64],
}

/// Seed of grid cell `(topic, prefix, sample)`.
pub fn sample_seed(base: u64, topic: usize, prefix_index: usize, sample_index: usize) -> u64 {
    rng::derive_seed(base, &[topic as u64, prefix_index as u64, sample_index as u64])
}

fn encode_prefix(prefix: &str, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let ids = vocab.encode(prefix);
    if ids.is_empty() {
        return Err(Error::Empty("prefix"));
    }
    let mut out = Vec::with_capacity(ids.len() + 1);
    out.push(BOS);
    out.extend(ids);
    Ok(out)
}

pub struct Generator<'m> {
    pub lm: &'m LmParams,
    pub disc: Option<&'m Discriminator>,
    pub vocab: &'m Vocabulary,
}

impl<'m> Generator<'m> {
    /// Steered generation toward discriminator class `target_class`.
    /// Without a discriminator (or with `step_size = 0`) this is plain sampling.
    pub fn generate(
        &self,
        target_class: usize,
        prefix: &str,
        cfg: &SteeringConfig,
        seed: u64,
        observer: Option<&mut dyn FnMut(StepInfo<'_>)>,
    ) -> Result<GenerationRecord> {
        cfg.validate()?;
        let target_topic = match self.disc {
            Some(d) => *d.classes().get(target_class).ok_or(Error::OutOfRange {
                what: "target class",
                index: target_class,
                size: d.num_classes(),
            })?,
            None => target_class,
        };
        let prompt = encode_prefix(prefix, self.vocab)?;
        let max_len = self.lm.config().max_len;
        if prompt.len() + cfg.length > max_len {
            return Err(Error::ContextOverflow { needed: prompt.len() + cfg.length, max_len });
        }
        let mut observer = observer;
        let d_model = self.lm.config().d_model;
        let n = prompt.len();
        let mut last = prompt[n - 1];
        let (mut unpert_past, mut context_sum) = if n > 1 {
            let head = self.lm.forward_step(&prompt[..n - 1], None)?;
            let mut sum = vec![0.0; d_model];
            for r in 0..n - 1 {
                sum.iter_mut().zip(head.hidden.row(r)).for_each(|(s, h)| *s += h);
            }
            (head.new_past, sum)
        } else {
            (PastState::default(), vec![0.0; d_model])
        };
        let mut steered_past = unpert_past.clone();
        let mut consumed = n - 1;
        let mut rng = rng::rng_from(seed, &[rng::tag("sample")]);
        let mut ids: Vec<usize> = Vec::with_capacity(cfg.length);
        let mut p_target = Vec::with_capacity(cfg.length);
        let disc_prob = |sum: &[f64], count: usize| -> Result<Option<f64>> {
            match self.disc {
                Some(d) => {
                    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
                    Ok(Some(d.predict(&mean)?[target_class]))
                }
                None => Ok(None),
            }
        };
        let v = self.lm.config().vocab_size;
        for step in 0..cfg.length {
            let unpert = self.lm.forward_step(&[last], Some(&unpert_past).filter(|p| !p.is_empty()))?;
            let mut unpert_logp = vec![0.0; v];
            log_softmax_row(&unpert.logits, &mut unpert_logp);
            let unpert_hidden = unpert.hidden.row(0).to_vec();
            if step > 0 {
                let mut with_last = context_sum.clone();
                with_last.iter_mut().zip(&unpert_hidden).for_each(|(s, h)| *s += h);
                if let Some(p) = disc_prob(&with_last, consumed + 1)? {
                    p_target.push(p);
                }
            }
            let steer = self.disc.filter(|_| cfg.step_size > 0.0 && cfg.grad_iterations > 0 && !steered_past.is_empty());
            let (fused, next_steered) = match steer {
                Some(disc) => {
                    let unpert_probs: Vec<f64> = unpert_logp.iter().map(|&l| libm::exp(l)).collect();
                    let ctx = StepContext {
                        past: &steered_past,
                        last,
                        context_sum: &context_sum,
                        unpert_probs: &unpert_probs,
                        rollout_past: &unpert.new_past,
                    };
                    let pert_past = perturb_past(self.lm, disc, &ctx, target_class, cfg)?;
                    let pert = self.lm.forward_step(&[last], Some(&pert_past))?;
                    let mut pert_logp = vec![0.0; v];
                    log_softmax_row(&pert.logits, &mut pert_logp);
                    (fuse_log_probs(&pert_logp, &unpert_logp, cfg.gm_scale), pert.new_past)
                }
                None => (unpert_logp.clone(), unpert.new_past.clone()),
            };
            if let Some(obs) = observer.as_mut() {
                obs(StepInfo { step, fused_log_probs: &fused, unpert_log_probs: &unpert_logp });
            }
            let mut fused = fused;
            if !cfg.stop_at_eos {
                fused[EOS] = f64::NEG_INFINITY;
            }
            let next = sample_token(&fused, cfg.temperature, cfg.top_k, cfg.repetition_penalty, &ids, &mut rng);
            context_sum.iter_mut().zip(&unpert_hidden).for_each(|(s, h)| *s += h);
            consumed += 1;
            unpert_past = unpert.new_past;
            steered_past = next_steered;
            if next == EOS {
                break;
            }
            ids.push(next);
            last = next;
        }
        if p_target.len() < ids.len() {
            // the final token has not been consumed yet
            let tail = self.lm.forward_step(&[last], Some(&unpert_past))?;
            let mut with_last = context_sum.clone();
            with_last.iter_mut().zip(tail.hidden.row(0)).for_each(|(s, h)| *s += h);
            if let Some(p) = disc_prob(&with_last, consumed + 1)? {
                p_target.push(p);
            }
        }
        Ok(GenerationRecord {
            target_topic,
            target_class,
            prefix: prefix.to_string(),
            prefix_index: 0,
            sample_index: 0,
            text: self.vocab.decode(&ids),
            token_ids: ids,
            p_target,
            seed,
            config: cfg.clone(),
            error: None,
        })
    }

    /// `classes x prefixes x samples` records in that nesting order. A failed
    /// cell yields a record carrying the error and no tokens.
    pub fn generate_grid(
        &self,
        classes: &[usize],
        prefixes: &[String],
        samples_per_cell: usize,
        cfg: &SteeringConfig,
    ) -> Result<Vec<GenerationRecord>> {
        if classes.is_empty() || prefixes.is_empty() {
            return Err(Error::Empty("generation grid"));
        }
        cfg.validate()?;
        let mut out = Vec::with_capacity(classes.len() * prefixes.len() * samples_per_cell);
        for &c in classes {
            let topic = self.disc.and_then(|d| d.classes().get(c).copied()).unwrap_or(c);
            for (pi, prefix) in prefixes.iter().enumerate() {
                for si in 0..samples_per_cell {
                    let seed = sample_seed(cfg.seed, topic, pi, si);
                    let mut rec = self.generate(c, prefix, cfg, seed, None).unwrap_or_else(|e| {
                        log::warn!("generation failed for topic {topic}, prefix {pi}, sample {si}: {e}");
                        GenerationRecord {
                            target_topic: topic,
                            target_class: c,
                            prefix: prefix.clone(),
                            prefix_index: pi,
                            sample_index: si,
                            token_ids: Vec::new(),
                            text: String::new(),
                            p_target: Vec::new(),
                            seed,
                            config: cfg.clone(),
                            error: Some(e.to_string()),
                        }
                    });
                    rec.prefix_index = pi;
                    rec.sample_index = si;
                    out.push(rec);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_examples() {
        let q = fuse_distributions(&[0.8, 0.2], &[0.5, 0.5], 0.5);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-12 && (q[1] - 1.0 / 3.0).abs() < 1e-12);
        let a = [0.7, 0.2, 0.1];
        let b = [0.1, 0.3, 0.6];
        let one = fuse_distributions(&a, &b, 1.0);
        let zero = fuse_distributions(&a, &b, 0.0);
        assert!(one.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(zero.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        let s = fuse_distributions(&a, &b, 0.3);
        let t = fuse_distributions(&b, &a, 0.7);
        assert!(s.iter().zip(&t).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // zero entries are floored rather than producing NaN
        let z = fuse_distributions(&[1.0, 0.0], &[0.5, 0.5], 0.5);
        assert!(z.iter().all(|x| x.is_finite()) && z[1] > 0.0);
    }

    #[test]
    fn config_bounds() {
        assert!(SteeringConfig::default().validate().is_ok());
        for bad in [
            SteeringConfig { gm_scale: 1.5, ..Default::default() },
            SteeringConfig { step_size: -0.1, ..Default::default() },
            SteeringConfig { top_k: 0, ..Default::default() },
            SteeringConfig { repetition_penalty: 0.9, ..Default::default() },
            SteeringConfig { temperature: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn seeds_differ_per_cell() {
        let a = sample_seed(1, 0, 0, 0);
        assert_ne!(a, sample_seed(1, 0, 0, 1));
        assert_ne!(a, sample_seed(1, 0, 1, 0));
        assert_ne!(a, sample_seed(1, 1, 0, 0));
        assert_eq!(a, sample_seed(1, 0, 0, 0));
    }
}
