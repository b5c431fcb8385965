//! Random structurally valid sequences.

use rand::seq::IndexedRandom;
use rand::Rng;
use talm::protocol::{Segment, ToolAugmentedSequence};

const LABEL_BYTES: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_-";
const BODY_PIECES: &[&str] = &[
    "a", "Z", " ", "  ", "|", "\\", "\\|", " |", "| ", "|result", " |output x", "Add(1, 2)", "é", "日本", "\n",
    "\t", "20c", ".", "?", "-", "{", "}", "\"",
];

pub fn random_label<R: Rng>(rng: &mut R) -> String {
    loop {
        let len = rng.random_range(1..=8);
        let label: String = (0..len)
            .map(|_| *LABEL_BYTES.choose(rng).unwrap() as char)
            .collect();
        if label != "result" && label != "output" {
            return label;
        }
    }
}

pub fn random_body<R: Rng>(rng: &mut R) -> String {
    let pieces = rng.random_range(0..8);
    (0..pieces).map(|_| *BODY_PIECES.choose(rng).unwrap()).collect()
}

pub fn random_sequence<R: Rng>(rng: &mut R, max_hops: usize) -> ToolAugmentedSequence {
    let mut seq = ToolAugmentedSequence::new(&random_label(rng), random_body(rng)).unwrap();
    for _ in 0..rng.random_range(0..=max_hops) {
        let call = Segment::tool_call(&random_label(rng), random_body(rng)).unwrap();
        seq.push_hop(call, random_body(rng));
    }
    if rng.random_bool(0.7) {
        seq.task_output = Some(Segment::task_output(random_body(rng)));
    }
    seq
}

/// Arbitrary bytes biased towards delimiter-like material.
pub fn random_bytes<R: Rng>(rng: &mut R) -> Vec<u8> {
    let len = rng.random_range(0..64);
    (0..len)
        .map(|_| match rng.random_range(0..4) {
            0 => b'|',
            1 => b' ',
            2 => *b"resultoputq\\".choose(rng).unwrap(),
            _ => rng.random(),
        })
        .collect()
}
