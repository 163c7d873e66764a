//! Deterministic toy corpora.

use std::ops::RangeInclusive;

use rand::Rng as _;

use super::dataset::{Dataset, Record};
use crate::rng::{stream_rng, Stream};

/// Two classes whose sentences draw from disjoint token sets (`pos` uses
/// `p00..`, `neg` uses `n00..`), so a bag-of-words separator exists.
/// Sentence lengths are drawn uniformly from `lengths`.
pub fn separable_dataset(per_class: usize, tokens_per_class: usize, lengths: RangeInclusive<usize>, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Data);
    let mut records = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for (label, prefix) in [("pos", 'p'), ("neg", 'n')] {
            let len = rng.random_range(lengths.clone());
            let text = (0..len)
                .map(|_| format!("{prefix}{:02}", rng.random_range(0..tokens_per_class)))
                .collect::<Vec<_>>()
                .join(" ");
            records.push(Record {
                label: label.to_string(),
                text,
            });
        }
    }
    Dataset::new(records)
}

/// A corpus with exactly `distinct` different tokens spread over lines of
/// `per_line` tokens, alternating between two labels.
pub fn vocabulary_fixture(distinct: usize, per_line: usize) -> Dataset {
    let tokens: Vec<String> = (0..distinct).map(|i| format!("w{i:05}")).collect();
    let records = tokens
        .chunks(per_line.max(1))
        .enumerate()
        .map(|(i, chunk)| Record {
            label: if i % 2 == 0 { "a" } else { "b" }.to_string(),
            text: chunk.join(" "),
        })
        .collect();
    Dataset::new(records)
}
