use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// Divides positive logits and multiplies negative logits of every token
/// already in `generated` by `penalty`. Each id is penalised once.
pub fn apply_repetition_penalty(logits: &mut [f64], generated: &[usize], penalty: f64) {
    if penalty == 1.0 {
        return;
    }
    let mut seen = vec![false; logits.len()];
    for &t in generated {
        if t < logits.len() && !seen[t] {
            seen[t] = true;
            let l = &mut logits[t];
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
}

/// The distribution [`sample_token`] draws from. Top-k ties are broken by
/// ascending token id.
pub fn sampling_distribution(
    logits: &[f64],
    temperature: f64,
    top_k: usize,
    repetition_penalty: f64,
    generated: &[usize],
) -> Vec<f64> {
    debug_assert!(temperature > 0.0 && top_k >= 1);
    let mut l = logits.to_vec();
    apply_repetition_penalty(&mut l, generated, repetition_penalty);
    l.iter_mut().for_each(|x| *x /= temperature);
    let k = top_k.clamp(1, l.len().max(1));
    let mut order: Vec<usize> = (0..l.len()).collect();
    order.sort_by(|&a, &b| l[b].total_cmp(&l[a]).then(a.cmp(&b)));
    let kept = &order[..k.min(order.len())];
    let m = kept.iter().map(|&i| l[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; l.len()];
    let mut z = 0.0;
    for &i in kept {
        probs[i] = libm::exp(l[i] - m);
        z += probs[i];
    }
    probs.iter_mut().for_each(|p| *p /= z);
    probs
}

/// Inverse-CDF draw from a normalised distribution.
pub fn sample_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn sample_token<R: Rng + ?Sized>(
    logits: &[f64],
    temperature: f64,
    top_k: usize,
    repetition_penalty: f64,
    generated: &[usize],
    rng: &mut R,
) -> usize {
    if top_k == 1 && repetition_penalty == 1.0 {
        return argmax(logits);
    }
    let probs = sampling_distribution(logits, temperature, top_k, repetition_penalty, generated);
    sample_from(&probs, rng)
}

/// Lowest index of the maximum.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn top_k_two() {
        let p = sampling_distribution(&[2.0, 1.0, 0.0, -1.0], 1.0, 2, 1.0, &[]);
        let e = core::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert_eq!(&p[2..], &[0.0, 0.0]);
    }

    #[test]
    fn penalty_convention() {
        let mut l = [2.0, -2.0, 5.0];
        apply_repetition_penalty(&mut l, &[0, 1, 1], 1.5);
        assert!((l[0] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(l[1], -3.0);
        assert_eq!(l[2], 5.0);
    }

    #[test]
    fn top_one_is_argmax() {
        let mut rng = rng_from(1, &[]);
        for _ in 0..20 {
            assert_eq!(sample_token(&[0.1, 3.0, 2.9, -1.0], 1.0, 1, 1.0, &[], &mut rng), 1);
        }
        // penalty can move the argmax
        assert_eq!(sample_token(&[0.1, 3.0, 2.9, -1.0], 1.0, 1, 1.5, &[1], &mut rng), 2);
    }

    #[test]
    fn ties_keep_lower_ids() {
        let p = sampling_distribution(&[1.0, 1.0, 1.0], 1.0, 2, 1.0, &[]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn lower_temperature_sharpens() {
        let l = [0.3, 1.2, -0.4, 0.9];
        let mut prev = 0.0;
        for t in [4.0, 2.0, 1.0, 0.5, 0.25] {
            let p = sampling_distribution(&l, t, 4, 1.0, &[]);
            let m = p.iter().copied().fold(0.0, f64::max);
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn empirical_frequencies() {
        let mut rng = rng_from(7, &[]);
        let mut counts = [0usize; 4];
        let n = 20_000;
        for _ in 0..n {
            counts[sample_token(&[2.0, 1.0, 0.0, -1.0], 1.0, 2, 1.0, &[], &mut rng)] += 1;
        }
        let f0 = counts[0] as f64 / n as f64;
        assert!((f0 - 0.7311).abs() < 0.02);
        assert_eq!(counts[2] + counts[3], 0);
    }
}
