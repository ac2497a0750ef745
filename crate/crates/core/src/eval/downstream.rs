use serde::{Deserialize, Serialize};

use super::classifier::{train_classifier, ClassifierConfig, Sampling};
use super::report::format_table;
use crate::data::Image;
use crate::error::{invalid, Error, Result};

/// Owned images with labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn push(&mut self, image: Image, label: usize) {
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn refs(&self) -> Vec<&Image> {
        self.images.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamConfig {
    pub classifier: ClassifierConfig,
    /// Real + synthetic images per class in the augmented condition.
    pub per_class_target: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            per_class_target: 500,
        }
    }
}

pub const CONDITIONS: [&str; 3] = ["baseline", "weighted", "augmented"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecall {
    pub condition: String,
    /// `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub class_names: Vec<String>,
    pub conditions: Vec<ConditionRecall>,
    /// Classes with no test images, excluded from the mean.
    pub excluded_classes: Vec<usize>,
}

impl RecallReport {
    pub fn to_table(&self) -> String {
        let mut header = vec!["condition".to_string()];
        header.extend(self.class_names.iter().cloned());
        header.push("mean".into());
        let rows: Vec<Vec<String>> = self
            .conditions
            .iter()
            .map(|c| {
                let mut r = vec![c.condition.clone()];
                r.extend(c.per_class.iter().map(|v| v.map_or("-".into(), |x| format!("{x:.3}"))));
                r.push(format!("{:.3}", c.mean));
                r
            })
            .collect();
        format_table(&header, &rows)
    }
}

fn recall(pred: &[usize], truth: &[usize], num_classes: usize) -> (Vec<Option<f64>>, f64) {
    let mut hit = vec![0usize; num_classes];
    let mut tot = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        tot[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    let per: Vec<Option<f64>> = (0..num_classes)
        .map(|c| (tot[c] > 0).then(|| hit[c] as f64 / tot[c] as f64))
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per, mean)
}

/// Real training set topped up with synthetic images so every class reaches
/// `target` (classes already at or above it get none). Synthetic images of a
/// class are taken in order, cycling if there are too few.
pub fn balance_with_synthetic(train: &LabeledSet, synth: &LabeledSet, num_classes: usize, target: usize) -> Result<LabeledSet> {
    if synth.is_empty() {
        return Err(Error::Invalid("no synthetic samples".into()));
    }
    let mut out = train.clone();
    let mut counts = vec![0usize; num_classes];
    for &l in &train.labels {
        counts[l] += 1;
    }
    for c in 0..num_classes {
        let pool: Vec<usize> = (0..synth.len()).filter(|&i| synth.labels[i] == c).collect();
        if pool.is_empty() {
            continue;
        }
        for k in 0..target.saturating_sub(counts[c]) {
            let i = pool[k % pool.len()];
            out.push(synth.images[i].clone(), c);
        }
    }
    Ok(out)
}

/// Train the fixed classifier under the three conditions (baseline, class
/// weighted sampling, synthetic balancing) and report test recall.
pub fn downstream_augment_eval(
    train: &LabeledSet,
    synth: &LabeledSet,
    test: &LabeledSet,
    class_names: &[String],
    cfg: &DownstreamConfig,
) -> Result<RecallReport> {
    let c = class_names.len();
    for set in [train, synth, test] {
        if let Some(&l) = set.labels.iter().find(|&&l| l >= c) {
            return Err(invalid!("label {l} out of range for {c} classes"));
        }
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset("test set is empty".into()));
    }
    let augmented = balance_with_synthetic(train, synth, c, cfg.per_class_target)?;
    let runs = [
        (train, Sampling::Shuffle),
        (train, Sampling::ClassWeighted),
        (&augmented, Sampling::Shuffle),
    ];
    let test_refs = test.refs();
    let mut conditions = Vec::with_capacity(3);
    for (name, (set, sampling)) in CONDITIONS.iter().zip(runs) {
        let model = train_classifier(&set.refs(), &set.labels, c, &cfg.classifier, sampling)?;
        let pred = model.predict(&test_refs)?;
        let (per_class, mean) = recall(&pred, &test.labels, c);
        conditions.push(ConditionRecall {
            condition: name.to_string(),
            per_class,
            mean,
        });
    }
    let mut present = vec![false; c];
    for &l in &test.labels {
        present[l] = true;
    }
    let excluded_classes: Vec<usize> = (0..c).filter(|&i| !present[i]).collect();
    for &e in &excluded_classes {
        log::warn!("class {} has no test images and is excluded from mean recall", class_names[e]);
    }
    Ok(RecallReport {
        class_names: class_names.to_vec(),
        conditions,
        excluded_classes,
    })
}
