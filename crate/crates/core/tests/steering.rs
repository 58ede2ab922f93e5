use std::sync::OnceLock;

use topicsteer_core::corpus::{build_vocab, chunk_sequences, VocabOptions, Vocabulary, BOS};
use topicsteer_core::discriminator::{train_discriminator, DiscConfig, Discriminator};
use topicsteer_core::lm::{train_lm, LmConfig, LmParams};
use topicsteer_core::rng::{normal_vec, rng_from};
use topicsteer_core::steering::{
    perturbation, rollout_target_prob, GenerationRecord, Generator, StepContext, SteeringConfig,
};
use topicsteer_core::synth::{planted_corpus, SynthConfig, SHARED_WORDS};
use topicsteer_core::topic_model::embed_document;
use topicsteer_core::Tensor;

struct Fixture {
    vocab: Vocabulary,
    lm: LmParams,
    disc: Discriminator,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let docs = planted_corpus(&SynthConfig { topics: 2, docs: 80, block_size: 10, ..Default::default() }).unwrap();
        let opts = VocabOptions { stopwords: SHARED_WORDS.iter().map(|s| s.to_string()).collect(), ..Default::default() };
        let vocab = build_vocab(&docs, opts).unwrap();
        let seqs = chunk_sequences(&docs, &vocab, 62).unwrap();
        let cfg = LmConfig { vocab_size: vocab.seq_len(), d_model: 32, max_len: 96, epochs: 6, lr: 5e-3, ..Default::default() };
        let (lm, _) = train_lm(&seqs, cfg).unwrap();
        let feats: Vec<Vec<f64>> = docs.iter().map(|d| embed_document(d, &vocab, &lm).unwrap()).collect();
        let labels: Vec<usize> = docs.iter().map(|d| d.gold_label.unwrap()).collect();
        let (disc, _) = train_discriminator(&feats, &labels, &DiscConfig::default()).unwrap();
        Fixture { vocab, lm, disc }
    })
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x.exp() - y.exp()).abs()).sum::<f64>()
}

#[test]
fn zero_step_matches_plain_sampling() {
    let f = fixture();
    let cfg = SteeringConfig { step_size: 0.0, gm_scale: 0.7, length: 60, ..Default::default() };
    let steered = Generator { lm: &f.lm, disc: Some(&f.disc), vocab: &f.vocab };
    let plain = Generator { lm: &f.lm, disc: None, vocab: &f.vocab };
    let mut worst = 0.0f64;
    let mut steps = 0;
    let mut obs = |s: topicsteer_core::steering::StepInfo<'_>| {
        worst = worst.max(total_variation(s.fused_log_probs, s.unpert_log_probs));
        steps += 1;
    };
    let a = steered.generate(1, "It is", &cfg, 42, Some(&mut obs)).unwrap();
    let b = plain.generate(1, "It is", &cfg, 42, None).unwrap();
    assert!(worst < 1e-9, "{worst}");
    assert!(steps >= 1);
    assert_eq!(a.token_ids, b.token_ids);
}

#[test]
fn length_and_eos_bound_output() {
    let f = fixture();
    let g = Generator { lm: &f.lm, disc: Some(&f.disc), vocab: &f.vocab };
    let cfg = SteeringConfig { length: 12, grad_iterations: 2, ..Default::default() };
    let r = g.generate(0, "I would", &cfg, 7, None).unwrap();
    assert!(r.token_ids.len() <= 12);
    assert_eq!(r.p_target.len(), r.token_ids.len());
    assert!(r.p_target.iter().all(|p| (0.0..=1.0).contains(p)));
    let overflow = SteeringConfig { length: 95, ..cfg.clone() };
    assert!(g.generate(0, "I would", &overflow, 7, None).is_err());
    assert!(g.generate(0, "", &cfg, 7, None).is_err());
    assert!(g.generate(5, "It is", &cfg, 7, None).is_err());
}

#[test]
fn disabling_eos_stop_runs_full_length() {
    let f = fixture();
    let g = Generator { lm: &f.lm, disc: None, vocab: &f.vocab };
    let cfg = SteeringConfig { length: 70, stop_at_eos: false, ..Default::default() };
    for seed in 0..4 {
        let r = g.generate(0, "It is", &cfg, seed, None).unwrap();
        assert_eq!(r.token_ids.len(), 70);
        assert!(!r.token_ids.contains(&topicsteer_core::corpus::EOS));
    }
}

fn context(f: &Fixture, tokens: &[usize]) -> (topicsteer_core::lm::PastState, Vec<f64>, Vec<f64>, topicsteer_core::lm::PastState) {
    let n = tokens.len();
    let head = f.lm.forward_step(&tokens[..n - 1], None).unwrap();
    let d = f.lm.config().d_model;
    let mut sum = vec![0.0; d];
    for r in 0..n - 1 {
        sum.iter_mut().zip(head.hidden.row(r)).for_each(|(s, h)| *s += h);
    }
    let step = f.lm.forward_step(&tokens[n - 1..], Some(&head.new_past)).unwrap();
    let mut probs = vec![0.0; step.logits.len()];
    topicsteer_core::autodiff::softmax_row(&step.logits, &mut probs);
    (head.new_past, sum, probs, step.new_past)
}

#[test]
fn window_keeps_old_positions_fixed() {
    let f = fixture();
    let toks = f.vocab.encode("it is bababa babako . you did");
    let mut ids = vec![BOS];
    ids.extend(toks);
    let (past, sum, probs, full) = context(f, &ids);
    let ctx = StepContext { past: &past, last: *ids.last().unwrap(), context_sum: &sum, unpert_probs: &probs, rollout_past: &full };
    let cfg = SteeringConfig { window_length: 2, grad_iterations: 3, ..Default::default() };
    let delta = perturbation(&f.lm, &f.disc, &ctx, 1, &cfg).unwrap();
    let d = f.lm.config().d_model;
    let t = past.len();
    for layer in &delta {
        for m in [&layer.key, &layer.value] {
            assert!(m.data()[..(t - 2) * d].iter().all(|&x| x == 0.0));
            assert!(m.data()[(t - 2) * d..].iter().any(|&x| x != 0.0));
        }
    }
    for zero in [SteeringConfig { step_size: 0.0, ..cfg.clone() }, SteeringConfig { grad_iterations: 0, ..cfg }] {
        let delta = perturbation(&f.lm, &f.disc, &ctx, 1, &zero).unwrap();
        assert!(delta.iter().all(|l| l.key.data().iter().chain(l.value.data()).all(|&x| x == 0.0)));
    }
}

#[test]
fn one_step_raises_target_probability() {
    let f = fixture();
    let mut rng = rng_from(5, &[]);
    let cfg = SteeringConfig { step_size: 0.02, grad_iterations: 1, kl_scale: 0.0, ..Default::default() };
    let mut wins = 0;
    let n = 20;
    for i in 0..n {
        let len = 2 + i % 6;
        let mut ids = vec![BOS];
        for x in normal_vec(&mut rng, len, 1.0) {
            ids.push(4 + (x.abs() * 1000.0) as usize % (f.vocab.seq_len() - 4));
        }
        let (past, sum, probs, full) = context(f, &ids);
        let ctx = StepContext { past: &past, last: *ids.last().unwrap(), context_sum: &sum, unpert_probs: &probs, rollout_past: &full };
        let target = i % 2;
        let before = rollout_target_prob(&f.lm, &f.disc, &ctx, None, target, &cfg).unwrap();
        let delta = perturbation(&f.lm, &f.disc, &ctx, target, &cfg).unwrap();
        let after = rollout_target_prob(&f.lm, &f.disc, &ctx, Some(&delta), target, &cfg).unwrap();
        if after > before {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.8 * n as f64, "{wins}/{n}");
}

fn random_disc(classes: usize, d: usize) -> Discriminator {
    let mut rng = rng_from(classes as u64, &[]);
    let w = Tensor::matrix(classes, d, normal_vec(&mut rng, classes * d, 0.1)).unwrap();
    Discriminator::from_tensors((0..classes).collect(), w, Tensor::zeros(&[classes])).unwrap()
}

#[test]
fn grid_sizes_and_determinism() {
    let f = fixture();
    let prefixes: Vec<String> = ["It is", "I would", "You did", "In this"].iter().map(|s| s.to_string()).collect();
    let cfg = SteeringConfig { length: 2, grad_iterations: 1, horizon_length: 1, ..Default::default() };
    for (topics, expected) in [(6usize, 72usize), (10, 120)] {
        let disc = random_disc(topics, f.lm.config().d_model);
        let g = Generator { lm: &f.lm, disc: Some(&disc), vocab: &f.vocab };
        let classes: Vec<usize> = (0..topics).collect();
        let grid = g.generate_grid(&classes, &prefixes, 3, &cfg).unwrap();
        assert_eq!(grid.len(), expected);
        assert!(grid.iter().all(|r| r.error.is_none()));
    }
    let g = Generator { lm: &f.lm, disc: Some(&f.disc), vocab: &f.vocab };
    let one = g.generate_grid(&[1], &prefixes[..1], 1, &cfg).unwrap();
    assert_eq!(one.len(), 1);
    let a: Vec<GenerationRecord> = g.generate_grid(&[0, 1], &prefixes[..2], 2, &cfg).unwrap();
    let b = g.generate_grid(&[0, 1], &prefixes[..2], 2, &cfg).unwrap();
    assert_eq!(a, b);
}
