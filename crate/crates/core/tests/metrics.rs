use std::collections::BTreeSet;

use proptest::prelude::*;
use topicsteer_core::metrics::{coherence_alpha, inverted_rbo, npmi, rbo, Cooccurrence};

// Brute-force oracles working from document word sets.

fn oracle_npmi(docs: &[BTreeSet<usize>], a: usize, b: usize) -> f64 {
    let n = docs.len() as f64;
    let ca = docs.iter().filter(|d| d.contains(&a)).count() as f64;
    let cb = docs.iter().filter(|d| d.contains(&b)).count() as f64;
    let cab = docs.iter().filter(|d| d.contains(&a) && d.contains(&b)).count() as f64;
    if cab == 0.0 {
        return -1.0;
    }
    if cab == n {
        return 1.0;
    }
    let pab = cab / n + 1e-12;
    ((pab / ((ca / n) * (cb / n))).ln() / -pab.ln()).clamp(-1.0, 1.0)
}

fn oracle_tau(docs: &[BTreeSet<usize>], lists: &[Vec<usize>]) -> f64 {
    let mut topic_means = Vec::new();
    for l in lists {
        let mut vals = Vec::new();
        for i in 0..l.len() {
            for j in 0..l.len() {
                if i < j {
                    vals.push(oracle_npmi(docs, l[i], l[j]));
                }
            }
        }
        topic_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    topic_means.iter().sum::<f64>() / topic_means.len() as f64
}

fn oracle_rbo(s: &[usize], t: &[usize], p: f64) -> f64 {
    let depth = s.len().min(t.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for d in 1..=depth {
        let a: BTreeSet<_> = s[..d].iter().collect();
        let b: BTreeSet<_> = t[..d].iter().collect();
        let w = p.powi(d as i32 - 1);
        num += w * a.intersection(&b).count() as f64 / d as f64;
        den += w;
    }
    num / den
}

fn corpus() -> impl Strategy<Value = (usize, Vec<BTreeSet<usize>>)> {
    (2usize..=50).prop_flat_map(|v| {
        (Just(v), prop::collection::vec(prop::collection::btree_set(0..v, 0..8), 1..=100))
    })
}

fn to_bows(v: usize, docs: &[BTreeSet<usize>]) -> Vec<Vec<u32>> {
    docs.iter()
        .map(|d| {
            let mut b = vec![0u32; v];
            d.iter().for_each(|&w| b[w] = 1 + (w as u32 % 3));
            b
        })
        .collect()
}

fn ranking(v: usize, n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..v).collect::<Vec<_>>()).prop_shuffle().prop_map(move |p| p[..n.min(v)].to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn npmi_matches_counting_oracle(((v, docs), seedlists) in corpus().prop_flat_map(|(v, d)| {
        let n = v.clamp(2, 10);
        ((Just(v), Just(d)), prop::collection::vec(ranking(v, n), 1..5))
    })) {
        let co = Cooccurrence::from_bows(&to_bows(v, &docs)).unwrap();
        for a in 0..v.min(12) {
            for b in 0..v.min(12) {
                if a != b {
                    let x = co.npmi(a, b);
                    prop_assert!((-1.0..=1.0).contains(&x));
                    prop_assert!((x - oracle_npmi(&docs, a, b)).abs() < 1e-9);
                }
            }
        }
        let tau = npmi(&seedlists, &co).unwrap();
        prop_assert!((tau.mean - oracle_tau(&docs, &seedlists)).abs() < 1e-9);
        let mean = tau.per_topic.iter().sum::<f64>() / tau.per_topic.len() as f64;
        prop_assert_eq!(tau.mean, mean);
    }

    #[test]
    fn rbo_matches_truncated_sum(
        (s, t) in (2usize..40).prop_flat_map(|v| (ranking(v, 10), ranking(v, 10))),
        p in 0.05f64..0.95,
    ) {
        let r = rbo(&s, &t, p);
        prop_assert!((r - oracle_rbo(&s, &t, p)).abs() < 1e-12);
        prop_assert!((r - rbo(&t, &s, p)).abs() < 1e-15);
        let rho = inverted_rbo(&[s.clone(), t.clone()], p).unwrap().rho;
        prop_assert!((0.0..=1.0).contains(&rho));
    }

    #[test]
    fn alpha_scale_invariant(
        emb in prop::collection::vec(prop::collection::vec(0.1f64..2.0, 4), 6),
        c in 0.01f64..100.0,
    ) {
        let lists = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let a = coherence_alpha(&lists, &emb).unwrap().scores.mean;
        let scaled: Vec<Vec<f64>> = emb.iter().map(|e| e.iter().map(|x| x * c).collect()).collect();
        let b = coherence_alpha(&lists, &scaled).unwrap().scores.mean;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&a));
    }
}
