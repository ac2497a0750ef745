use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetManifest;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWarning {
    pub class: usize,
    pub count: usize,
}

/// Per-class stratified split. Each class contributes
/// `floor(train_fraction * n)` samples to train (at least one), the rest to
/// test. Entries of a class are shuffled with a stream keyed by
/// `(seed, class)` before the cut.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, Vec<SplitWarning>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid!("train_fraction {train_fraction} must lie in (0, 1)"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    for class in 0..manifest.num_classes() {
        let mut members: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| e.label == class)
            .cloned()
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len();
        if n < 2 {
            log::warn!(
                "class {} has {n} sample(s); all placed in train",
                manifest.class_names[class]
            );
            warnings.push(SplitWarning { class, count: n });
            train.extend(members);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        members.shuffle(&mut rng);
        // The epsilon absorbs representation error such as 0.8 * 10.
        let n_train = ((train_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n);
        let rest = members.split_off(n_train);
        train.extend(members);
        test.extend(rest);
    }
    Ok((manifest.with_entries(train)?, manifest.with_entries(test)?, warnings))
}
