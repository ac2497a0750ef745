//! Stages shared by the subcommands and the ablation runner.

use std::path::{Path, PathBuf};

use lfvar_core::conditioning::{EmbeddingSource, MeasurementCodebook};
use lfvar_core::data::{split_dataset, DatasetManifest, Image, ImageSample};
use lfvar_core::eval::{
    compute_fid, compute_is, downstream_augment_eval, fid_confusion_matrix, train_classifier, DownstreamConfig,
    FeatureExtractor, FeatureSet, FidMatrix, LabeledSet, RecallReport, Sampling,
};
use lfvar_core::measurements::{extract_measurements, MeasurementNormalizer, MeasurementVector};
use lfvar_core::tokenizer::VqVae;
use lfvar_core::var::{SamplerConfig, Synthesis, SynthesisPipeline, SynthesisRequest, VarModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvaluationConfig, GenerationMode, RunConfig};
use crate::error::CliError;

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";

/// Write the stratified train/test split next to the full manifest.
pub fn write_splits(manifest: &DatasetManifest, cfg: &RunConfig, data_dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let (train, test, warnings) = split_dataset(manifest, cfg.data.train_fraction, cfg.seed)?;
    for w in warnings {
        log::warn!("class {} has only {} samples; split may be degenerate", w.class, w.count);
    }
    let (tp, sp) = (data_dir.join(TRAIN_MANIFEST), data_dir.join(TEST_MANIFEST));
    train.save(&tp)?;
    test.save(&sp)?;
    Ok((tp, sp))
}

pub struct Splits {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

pub fn load_splits(data_dir: &Path) -> Result<Splits, CliError> {
    let train_path = data_dir.join(TRAIN_MANIFEST);
    let test_path = data_dir.join(TEST_MANIFEST);
    if !train_path.exists() || !test_path.exists() {
        return Err(CliError::validation(format!(
            "no prepared dataset in {}; run make-toy or prepare-data first",
            data_dir.display()
        )));
    }
    Ok(Splits {
        train: DatasetManifest::load(&train_path)?,
        test: DatasetManifest::load(&test_path)?,
        train_path,
        test_path,
    })
}

pub fn check_resolution(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<(), CliError> {
    if manifest.resolution != cfg.tokenizer.resolution {
        return Err(CliError::validation(format!(
            "dataset resolution {:?} differs from tokenizer.resolution {:?}",
            manifest.resolution, cfg.tokenizer.resolution
        )));
    }
    Ok(())
}

pub fn measure_all(samples: &[ImageSample]) -> Result<Vec<MeasurementVector>, CliError> {
    Ok(samples
        .iter()
        .map(|s| extract_measurements(&s.image, &s.mask))
        .collect::<lfvar_core::Result<_>>()?)
}

pub fn build_measurement_codebook(samples: &[ImageSample], class_names: &[String]) -> Result<MeasurementCodebook, CliError> {
    let mut cb = MeasurementCodebook::for_measurements(class_names.to_vec());
    for (s, v) in samples.iter().zip(measure_all(samples)?) {
        cb.update(s.label, v.as_slice())?;
    }
    Ok(cb)
}

/// Deterministic per-image seed.
pub fn image_seed(base: u64, group: usize, index: usize) -> u64 {
    base ^ (((group as u64) << 32) | index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Requests for `n` images of every class. Intra mode cycles through the
/// class's real samples (with non-empty masks) for measurements; inter mode
/// queries the codebook.
pub fn class_requests(
    pipeline: &SynthesisPipeline<'_>,
    mode: GenerationMode,
    sources: &[ImageSample],
    codebook: Option<&MeasurementCodebook>,
    num_classes: usize,
    n: usize,
    base_seed: u64,
) -> Result<Vec<Vec<SynthesisRequest>>, CliError> {
    let mut out = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let mut reqs = Vec::with_capacity(n);
        match mode {
            GenerationMode::Intra => {
                let pool: Vec<&ImageSample> = sources.iter().filter(|s| s.label == c && s.mask.area() > 0).collect();
                if pool.is_empty() {
                    return Err(CliError::validation(format!("class {c} has no source images for intra-class synthesis")));
                }
                for i in 0..n {
                    let s = pool[i % pool.len()];
                    reqs.push(pipeline.intra_request(&s.image, &s.mask, c, image_seed(base_seed, c, i))?);
                }
            }
            GenerationMode::Inter => {
                let cb = codebook.ok_or_else(|| CliError::validation("inter-class synthesis needs a measurement codebook"))?;
                for i in 0..n {
                    reqs.push(pipeline.inter_request(c, cb, image_seed(base_seed, c, i))?);
                }
            }
        }
        out.push(reqs);
    }
    Ok(out)
}

pub fn run_requests(
    pipeline: &SynthesisPipeline<'_>,
    requests: &[Vec<SynthesisRequest>],
    sampler: &SamplerConfig,
) -> Result<Vec<Vec<Synthesis>>, CliError> {
    requests
        .iter()
        .map(|r| Ok(pipeline.synthesize(r, sampler)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub extractor_id: String,
    pub per_class: Vec<ClassMetrics>,
    pub average: ClassMetrics,
    /// All generated images against all real images.
    pub overall_fid: f64,
    /// Uniform-noise images against all real images, same count.
    pub noise_fid: f64,
    pub fid_matrix: Option<FidMatrix>,
    pub recall: Option<RecallReport>,
}

pub fn noise_images(n: usize, res: (usize, usize), seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..res.0 * res.1 * 3).map(|_| rng.random::<f32>()).collect();
            Image::new(res.0, res.1, 3, data).expect("sizes match")
        })
        .collect()
}

/// Per-class IS (classifier trained on the real training split) and FID
/// (against all real images of the class), plus overall and noise FIDs.
pub fn score_generated(
    generated: &[Vec<Image>],
    real: &[ImageSample],
    train: &[ImageSample],
    class_names: &[String],
    eval: &EvaluationConfig,
    seed: u64,
) -> Result<EvaluationReport, CliError> {
    let extractor = FeatureExtractor::new(eval.extractor_seed)?;
    let train_imgs: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let train_labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let classifier_cfg = lfvar_core::eval::ClassifierConfig {
        seed: eval.classifier.seed ^ seed,
        ..eval.classifier.clone()
    };
    let classifier = train_classifier(&train_imgs, &train_labels, class_names.len(), &classifier_cfg, Sampling::Shuffle)?;

    let real_imgs: Vec<&Image> = real.iter().map(|s| &s.image).collect();
    let real_set = FeatureSet {
        extractor_id: extractor.id(),
        sample_ids: real.iter().map(|s| s.sample_id.clone()).collect(),
        labels: real.iter().map(|s| Some(s.label)).collect(),
        rows: extractor.extract(&real_imgs)?,
    };

    let mut per_class = Vec::with_capacity(class_names.len());
    let mut all_gen_rows = Vec::new();
    for (c, imgs) in generated.iter().enumerate() {
        let refs: Vec<&Image> = imgs.iter().collect();
        let rows = extractor.extract(&refs)?;
        all_gen_rows.extend(rows.iter().cloned());
        let fake = FeatureSet::new(extractor.id(), rows);
        let fid = compute_fid(&real_set.subset_by_label(c), &fake)?;
        let probs = classifier.predict_proba(&refs)?;
        let (is_mean, is_std) = compute_is(&probs, eval.is_splits)?;
        per_class.push(ClassMetrics {
            class: class_names[c].clone(),
            is_mean,
            is_std,
            fid,
        });
    }
    let k = per_class.len() as f64;
    let average = ClassMetrics {
        class: "Average".into(),
        is_mean: per_class.iter().map(|m| m.is_mean).sum::<f64>() / k,
        is_std: per_class.iter().map(|m| m.is_std).sum::<f64>() / k,
        fid: per_class.iter().map(|m| m.fid).sum::<f64>() / k,
    };
    let overall_fid = compute_fid(&real_set, &FeatureSet::new(extractor.id(), all_gen_rows.clone()))?;
    let res = (real[0].image.height, real[0].image.width);
    let noise = noise_images(all_gen_rows.len(), res, seed ^ 0x0153);
    let noise_refs: Vec<&Image> = noise.iter().collect();
    let noise_fid = compute_fid(&real_set, &FeatureSet::new(extractor.id(), extractor.extract(&noise_refs)?))?;
    Ok(EvaluationReport {
        extractor_id: extractor.id(),
        per_class,
        average,
        overall_fid,
        noise_fid,
        fid_matrix: None,
        recall: None,
    })
}

/// Generate `n` images for every (source, target) class pair, conditioning
/// target class `j` on the codebook average of source class `i`, and score
/// each cell against the real images of class `j`.
pub fn inter_class_matrix(
    pipeline: &SynthesisPipeline<'_>,
    codebook: &MeasurementCodebook,
    real: &[ImageSample],
    class_names: &[String],
    n: usize,
    extractor_seed: u64,
    sampler: &SamplerConfig,
) -> Result<FidMatrix, CliError> {
    let c = class_names.len();
    let extractor = FeatureExtractor::new(extractor_seed)?;
    let real_sets: Vec<FeatureSet> = (0..c)
        .map(|j| {
            let imgs: Vec<&Image> = real.iter().filter(|s| s.label == j).map(|s| &s.image).collect();
            let rows = if imgs.is_empty() { Vec::new() } else { extractor.extract(&imgs)? };
            Ok(FeatureSet::new(extractor.id(), rows))
        })
        .collect::<Result<_, CliError>>()?;
    let mut synth = vec![vec![None; c]; c];
    for (i, row) in synth.iter_mut().enumerate() {
        let m = match codebook.query_measurements(i) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("source class {i} skipped in FID matrix: {e}");
                continue;
            }
        };
        for (j, cell) in row.iter_mut().enumerate() {
            let reqs: Vec<SynthesisRequest> = (0..n)
                .map(|k| SynthesisRequest {
                    class: j,
                    measurements: m,
                    source: EmbeddingSource::Codebook,
                    seed: image_seed(sampler.seed ^ 0x3a7e, i * c + j, k),
                })
                .collect();
            let out = pipeline.synthesize(&reqs, sampler)?;
            let imgs: Vec<&Image> = out.iter().map(|s| &s.image).collect();
            *cell = Some(FeatureSet::new(extractor.id(), extractor.extract(&imgs)?));
        }
    }
    Ok(fid_confusion_matrix(&synth, &real_sets, class_names)?)
}

/// Downstream recall with generated images as the synthetic pool.
pub fn downstream(
    train: &[ImageSample],
    test: &[ImageSample],
    generated: &[Vec<Image>],
    class_names: &[String],
    eval: &EvaluationConfig,
) -> Result<RecallReport, CliError> {
    let mut tr = LabeledSet::default();
    for s in train {
        tr.push(s.image.clone(), s.label);
    }
    let mut te = LabeledSet::default();
    for s in test {
        te.push(s.image.clone(), s.label);
    }
    let mut syn = LabeledSet::default();
    for (c, imgs) in generated.iter().enumerate() {
        for img in imgs {
            syn.push(img.clone(), c);
        }
    }
    let cfg = DownstreamConfig {
        classifier: eval.classifier.clone(),
        per_class_target: eval.downstream_per_class,
    };
    Ok(downstream_augment_eval(&tr, &syn, &te, class_names, &cfg)?)
}

/// Trained pieces needed for synthesis.
pub struct Trained {
    pub tokenizer: VqVae,
    pub generator: VarModel,
    pub normalizer: MeasurementNormalizer,
}

impl Trained {
    pub fn pipeline(&self) -> SynthesisPipeline<'_> {
        SynthesisPipeline {
            tokenizer: &self.tokenizer,
            generator: &self.generator,
            normalizer: &self.normalizer,
        }
    }
}
