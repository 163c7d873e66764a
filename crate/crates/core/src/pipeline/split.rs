use rand::seq::SliceRandom;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Per-class split: each class's records are shuffled with the seeded split
/// stream and the first `floor(ratio * n_c)` go to training. Classes are
/// visited in label order and both halves keep class-major order.
pub fn stratified_split(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = stream_rng(seed, Stream::Split);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in ds.labels() {
        let mut members: Vec<_> = ds.records.iter().filter(|r| r.label == label).cloned().collect();
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {label:?} has {} record(s); stratified splitting needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_train = train_count(members.len(), ratio);
        test.extend(members.split_off(n_train));
        train.extend(members);
    }
    Ok((Dataset::new(train), Dataset::new(test)))
}

fn train_count(n: usize, ratio: f64) -> usize {
    // the epsilon absorbs products like 0.8 * 35 = 27.999999999999996
    ((ratio * n as f64) + 1e-9).floor() as usize
}
