//! Four-setting ablation: Baseline, +LF, +LF+FM, +LF+AM.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lfvar_core::conditioning::{EmbeddingSource, MeasurementCodebook};
use lfvar_core::eval::{format_table, pm};
use lfvar_core::measurements::MeasurementNormalizer;
use lfvar_core::tokenizer::{save_tokenizer, train_vqvae_on, TrainingReport, VqVae};
use lfvar_core::var::{prepare_var_data, save_var, train_var, VarModel};
use serde::{Deserialize, Serialize};

use crate::config::{AblationFlags, GenerationMode, RunConfig};
use crate::error::CliError;
use crate::layout::{RunLayout, RunManifest};
use crate::pipeline::{class_requests, load_splits, measure_all, run_requests, score_generated, ClassMetrics, Trained};

pub const SETTINGS: [(&str, AblationFlags); 4] = [
    ("Baseline", AblationFlags { lf: false, fm: false, am: false }),
    ("Baseline + LF", AblationFlags { lf: true, fm: false, am: false }),
    ("Baseline + LF + FM", AblationFlags { lf: true, fm: true, am: false }),
    ("Baseline + LF + AM", AblationFlags { lf: true, fm: false, am: true }),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub setting: String,
    pub flags: AblationFlags,
    pub run_id: String,
    /// Per-class metrics then the average; empty when the setting failed.
    pub metrics: Vec<ClassMetrics>,
    pub error: Option<String>,
    /// For FM: whether every training image produced the same F_q.
    pub fm_constant_fq: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub class_names: Vec<String>,
    pub extractor_id: Option<String>,
    pub settings: Vec<SettingResult>,
}

impl AblationReport {
    /// Two rows (IS, FID) per setting; columns are classes then Average.
    pub fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::with_capacity(2 * self.settings.len());
        let width = self.class_names.len() + 1;
        for s in &self.settings {
            let mut is_row = vec![s.setting.clone(), "IS".into()];
            let mut fid_row = vec![s.setting.clone(), "FID".into()];
            if s.error.is_some() {
                is_row.extend(std::iter::repeat_n("failed".to_string(), width));
                fid_row.extend(std::iter::repeat_n("failed".to_string(), width));
            } else {
                for m in &s.metrics {
                    is_row.push(pm(m.is_mean, m.is_std));
                    fid_row.push(format!("{:.3}", m.fid));
                }
            }
            rows.push(is_row);
            rows.push(fid_row);
        }
        rows
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["setting".to_string(), "metric".to_string()];
        h.extend(self.class_names.iter().cloned());
        h.push("Average".into());
        h
    }

    pub fn to_table(&self) -> String {
        let mut s = format_table(&self.header(), &self.rows());
        if let Some(id) = &self.extractor_id {
            let _ = writeln!(s, "\nextractor: {id}");
        }
        for r in &self.settings {
            if let Some(e) = &r.error {
                let _ = writeln!(s, "{} failed: {e}", r.setting);
            }
            if let Some(c) = r.fm_constant_fq {
                let _ = writeln!(s, "{}: F_q identical across training images: {c}", r.setting);
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for r in self.rows() {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

fn fq_constant(generator: &VarModel, normalized: &[Vec<f64>]) -> Result<bool, CliError> {
    let mut first: Option<Vec<f32>> = None;
    for v in normalized {
        let e = generator.measurement_embedding(v, EmbeddingSource::Extracted)?;
        let f: Vec<f32> = e.f_q.to_dtype(lfvar_core::candle::DType::F32).and_then(|t| t.to_vec1()).map_err(lfvar_core::Error::from)?;
        match &first {
            None => first = Some(f),
            Some(a) if *a != f => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

struct Shared<'a> {
    train: &'a [lfvar_core::data::ImageSample],
    real: &'a [lfvar_core::data::ImageSample],
    class_names: &'a [String],
    normalizer: &'a MeasurementNormalizer,
}

fn run_setting(
    cfg: &RunConfig,
    out: &Path,
    tokenizer: &(VqVae, TrainingReport),
    shared: &Shared<'_>,
) -> Result<(Vec<ClassMetrics>, Option<bool>, String), CliError> {
    let layout = RunLayout::new(out, cfg);
    layout.create()?;
    save_tokenizer(&layout.tokenizer_dir(), &tokenizer.0, &tokenizer.1)?;
    shared.normalizer.save(&layout.normalizer_path())?;
    let data = prepare_var_data(&tokenizer.0, shared.train, shared.normalizer)?;
    let var_cfg = cfg.effective_var(shared.class_names.len());
    let mut codebook = cfg
        .ablation
        .am
        .then(|| MeasurementCodebook::for_measurements(shared.class_names.to_vec()));
    let (generator, report) = train_var(&var_cfg, &tokenizer.0.frozen_codebook(), &data, codebook.as_mut(), None)?;
    save_var(&layout.var_dir(), &generator, &report)?;
    let mut manifest = RunManifest::new(&layout, cfg, "ablate-setting");
    manifest.add_checkpoint(&layout, &layout.tokenizer_dir().join(lfvar_core::tokenizer::train::WEIGHTS_FILE));
    manifest.add_checkpoint(&layout, &layout.var_dir().join(lfvar_core::var::train::VAR_WEIGHTS_FILE));
    if let (Some(cb), Some(p)) = (&codebook, cfg.codebook_path(&layout.checkpoints())) {
        cb.save(&p)?;
        manifest.add_checkpoint(&layout, &p);
    }

    let fm_check = if cfg.ablation.fm {
        Some(fq_constant(&generator, &data.measurements)?)
    } else {
        None
    };
    let trained = Trained {
        tokenizer: save_and_reload(tokenizer, &layout)?,
        generator,
        normalizer: shared.normalizer.clone(),
    };
    let pipeline = trained.pipeline();
    let sampler = trained.generator.config().sampler.clone();
    let mode = if cfg.ablation.am {
        GenerationMode::Inter
    } else {
        GenerationMode::Intra
    };
    let requests = class_requests(
        &pipeline,
        mode,
        shared.real,
        codebook.as_ref(),
        shared.class_names.len(),
        cfg.evaluation.samples_per_class,
        sampler.seed,
    )?;
    let synth = run_requests(&pipeline, &requests, &sampler)?;
    let generated: Vec<Vec<_>> = synth.iter().map(|v| v.iter().map(|s| s.image.clone()).collect()).collect();
    let report = score_generated(&generated, shared.real, shared.train, shared.class_names, &cfg.evaluation, cfg.seed)?;
    let json = layout.reports().join("evaluation.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report)?)?;
    manifest.add_artifact(&layout, &json);
    manifest.write(&layout)?;
    let mut metrics = report.per_class.clone();
    metrics.push(report.average.clone());
    Ok((metrics, fm_check, report.extractor_id))
}

/// The tokenizer is shared between settings; synthesis needs an owned copy.
fn save_and_reload(tokenizer: &(VqVae, TrainingReport), layout: &RunLayout) -> Result<VqVae, CliError> {
    let (tok, _) = lfvar_core::tokenizer::load_tokenizer(&layout.tokenizer_dir(), &lfvar_core::candle::Device::Cpu)?;
    debug_assert_eq!(tok.config(), tokenizer.0.config());
    Ok(tok)
}

/// Train and evaluate every setting on the prepared dataset. A failing
/// setting is recorded as failed and the others still run.
pub fn run_ablation(base: &RunConfig, out: &Path) -> Result<AblationReport, CliError> {
    let base_layout = RunLayout::new(out, base);
    let splits = load_splits(&base_layout.data_dir(base))?;
    crate::pipeline::check_resolution(base, &splits.train)?;
    let train = splits.train.load_all()?;
    let test = splits.test.load_all()?;
    let mut real = train.clone();
    real.extend(test.iter().cloned());
    let class_names = splits.train.class_names.clone();
    let normalizer = MeasurementNormalizer::fit(&measure_all(&train)?)?;
    let shared = Shared {
        train: &train,
        real: &real,
        class_names: &class_names,
        normalizer: &normalizer,
    };

    let mut tokenizers: BTreeMap<bool, Result<(VqVae, TrainingReport), String>> = BTreeMap::new();
    let mut results = Vec::with_capacity(SETTINGS.len());
    let mut extractor_id = None;
    for (name, flags) in SETTINGS {
        let cfg = RunConfig {
            ablation: flags,
            ..base.clone()
        };
        log::info!("ablation setting `{name}`");
        let run_id = cfg.run_id();
        let tok = tokenizers.entry(flags.lf).or_insert_with(|| {
            train_vqvae_on(&train, &cfg.effective_tokenizer(), None).map_err(|e| e.to_string())
        });
        let outcome = match tok {
            Ok(t) => run_setting(&cfg, out, t, &shared),
            Err(e) => Err(CliError::runtime(format!("tokenizer training failed: {e}"))),
        };
        let result = match outcome {
            Ok((metrics, fm, id)) => {
                extractor_id = Some(id);
                SettingResult {
                    setting: name.to_string(),
                    flags,
                    run_id,
                    metrics,
                    error: None,
                    fm_constant_fq: fm,
                }
            }
            Err(e) => {
                log::error!("ablation setting `{name}` failed: {e}");
                SettingResult {
                    setting: name.to_string(),
                    flags,
                    run_id,
                    metrics: Vec::new(),
                    error: Some(e.to_string()),
                    fm_constant_fq: None,
                }
            }
        };
        results.push(result);
    }
    Ok(AblationReport {
        class_names,
        extractor_id,
        settings: results,
    })
}

pub fn write_ablation(report: &AblationReport, layout: &RunLayout, manifest: &mut RunManifest) -> Result<(), CliError> {
    let dir = layout.reports();
    let files = [
        (dir.join("ablation.txt"), report.to_table()),
        (dir.join("ablation.csv"), report.to_csv()),
        (dir.join("ablation.json"), serde_json::to_string_pretty(report)?),
    ];
    for (p, text) in &files {
        std::fs::write(p, text)?;
        manifest.add_artifact(layout, p);
    }
    Ok(())
}
