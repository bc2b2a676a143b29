use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::learn::Dataset;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub train_fraction: f64,
    pub seed: u64,
    /// `[negatives, positives]` on each side.
    pub train_counts: [usize; 2],
    pub test_counts: [usize; 2],
}

/// Per-class train sizes: each class rounded to nearest, then the largest
/// class nudged by one if the sum drifts from the rounded overall total.
fn class_train_sizes(counts: [usize; 2], fraction: f64) -> [usize; 2] {
    let mut sizes = counts.map(|c| (c as f64 * fraction).round() as usize);
    let target = ((counts[0] + counts[1]) as f64 * fraction).round() as usize;
    let largest = if counts[1] > counts[0] { 1 } else { 0 };
    let sum = sizes[0] + sizes[1];
    if sum > target && sizes[largest] > 0 {
        sizes[largest] -= 1;
    } else if sum < target && sizes[largest] < counts[largest] {
        sizes[largest] += 1;
    }
    sizes
}

/// Sorted `(train, test)` row indices.
pub fn stratified_split_indices(
    labels: &[u8],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::Split(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y == 1)].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(EvalError::SingleClass);
    }
    let sizes = class_train_sizes([by_class[0].len(), by_class[1].len()], train_fraction);
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        if sizes[c] == 0 || sizes[c] == members.len() {
            return Err(EvalError::Split(format!(
                "class {c} with {} members would leave an empty train or test side",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..sizes[c]]);
        test.extend_from_slice(&members[sizes[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(
    data: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, SplitDescriptor), EvalError> {
    let (tr, te) = stratified_split_indices(data.targets(), train_fraction, seed)?;
    let train = data.subset(&tr);
    let test = data.subset(&te);
    let desc = SplitDescriptor {
        train_fraction,
        seed,
        train_counts: train.class_counts(),
        test_counts: test.class_counts(),
    };
    Ok((train, test, desc))
}
