//! Beam search over a distribution of whole continuations.
//!
//! The candidates define a character trie; each edge carries the conditional
//! probability of the next character (or end-of-text) given the prefix. Beam
//! search walks that trie keeping `width` hypotheses, ranked by log-probability
//! divided by length (characters plus the end-of-text step). Ties go to the
//! lexicographically smaller text.

use std::collections::BTreeMap;

#[derive(Default)]
struct Node {
    mass: f64,
    end_mass: f64,
    end_candidate: Option<usize>,
    children: BTreeMap<char, usize>,
}

struct Hypothesis {
    node: usize,
    text: String,
    logp: f64,
    len: usize,
    finished: Option<usize>,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        self.logp / self.len.max(1) as f64
    }
}

/// Returns the index of the candidate beam search settles on. `log_probs`
/// need not be normalized. Duplicate texts share mass; the first index wins.
pub fn beam_search(candidates: &[(String, f64)], width: usize) -> Option<usize> {
    let width = width.max(1);
    let max = candidates
        .iter()
        .map(|c| c.1)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut nodes = vec![Node::default()];
    for (i, (text, lp)) in candidates.iter().enumerate() {
        if !lp.is_finite() {
            continue;
        }
        let p = (lp - max).exp();
        let mut cur = 0;
        nodes[cur].mass += p;
        for ch in text.chars() {
            let next = match nodes[cur].children.get(&ch) {
                Some(&n) => n,
                None => {
                    nodes.push(Node::default());
                    let n = nodes.len() - 1;
                    nodes[cur].children.insert(ch, n);
                    n
                }
            };
            cur = next;
            nodes[cur].mass += p;
        }
        nodes[cur].end_mass += p;
        nodes[cur].end_candidate.get_or_insert(i);
    }

    let mut alive = vec![Hypothesis {
        node: 0,
        text: String::new(),
        logp: 0.0,
        len: 0,
        finished: None,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !alive.is_empty() {
        let mut pool = Vec::new();
        for h in &alive {
            let node = &nodes[h.node];
            if node.end_mass > 0.0 {
                pool.push(Hypothesis {
                    node: h.node,
                    text: h.text.clone(),
                    logp: h.logp + (node.end_mass / node.mass).ln(),
                    len: h.len + 1,
                    finished: node.end_candidate,
                });
            }
            for (&ch, &child) in &node.children {
                let mut text = h.text.clone();
                text.push(ch);
                pool.push(Hypothesis {
                    node: child,
                    text,
                    logp: h.logp + (nodes[child].mass / node.mass).ln(),
                    len: h.len + 1,
                    finished: None,
                });
            }
        }
        pool.sort_by(|a, b| {
            b.score()
                .total_cmp(&a.score())
                .then_with(|| a.text.cmp(&b.text))
                .then_with(|| b.finished.is_some().cmp(&a.finished.is_some()))
        });
        pool.truncate(width);
        alive.clear();
        for h in pool {
            if h.finished.is_some() {
                finished.push(h);
            } else {
                alive.push(h);
            }
        }
    }
    finished
        .into_iter()
        .min_by(|a, b| b.score().total_cmp(&a.score()).then_with(|| a.text.cmp(&b.text)))
        .and_then(|h| h.finished)
}
