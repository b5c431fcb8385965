//! Temperature / top-k sampling over candidate scores, plus seed derivation.

use rand::Rng;

/// Folds several values into one well-mixed seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        acc ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(acc << 6).wrapping_add(acc >> 2);
        acc = splitmix64(acc);
    }
    acc
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Indices of the `top_k` highest scores, ties broken by lower index.
pub fn top_k_indices(scores: &[f64], top_k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > f64::NEG_INFINITY)
        .collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(top_k);
    idx
}

/// The renormalized distribution sampling draws from: scores divided by
/// `temperature`, softmax over the `top_k` best.
pub fn top_k_distribution(scores: &[f64], temperature: f64, top_k: usize) -> Vec<(usize, f64)> {
    let idx = top_k_indices(scores, top_k);
    let Some(&best) = idx.first() else {
        return Vec::new();
    };
    let max = scores[best] / temperature;
    let weights: Vec<f64> = idx
        .iter()
        .map(|&i| (scores[i] / temperature - max).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    idx.into_iter()
        .zip(weights)
        .map(|(i, w)| (i, w / total))
        .collect()
}

/// Draws one index. Returns `None` when no candidate has a finite score.
pub fn sample_index<R: Rng + ?Sized>(
    scores: &[f64],
    temperature: f64,
    top_k: usize,
    rng: &mut R,
) -> Option<usize> {
    let dist = top_k_distribution(scores, temperature, top_k);
    let last = dist.last()?.0;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in &dist {
        acc += p;
        if u < acc {
            return Some(*i);
        }
    }
    Some(last)
}

/// Highest score, ties broken by lower index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    top_k_indices(scores, 1).first().copied()
}
