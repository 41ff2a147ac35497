use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Video-wise train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn contains_train(&self, id: &str) -> bool {
        self.train.iter().any(|v| v == id)
    }

    pub fn contains_test(&self, id: &str) -> bool {
        self.test.iter().any(|v| v == id)
    }
}

/// Shuffles the (sorted, de-duplicated) ids with a seeded ChaCha8 generator
/// and puts the first `round(ratio · n)` in train. Both halves are returned
/// sorted.
pub fn video_split(video_ids: &[String], ratio: f64, seed: u64) -> Result<SplitSpec, EvalError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(EvalError::BadRatio(ratio));
    }
    let mut ids = video_ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let mut test = ids.split_off(n_train);
    let mut train = ids;
    train.sort();
    test.sort();
    Ok(SplitSpec {
        seed,
        ratio,
        train,
        test,
    })
}
