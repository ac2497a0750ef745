//! One function per subcommand. Each returns the run manifest it wrote.

use std::fmt::Write as _;
use std::path::Path;

use lfvar_core::conditioning::MeasurementCodebook;
use lfvar_core::data::{generate_toy_dataset, ingest_dataset, save_image, ImageSample, IngestOptions, ToyDatasetSpec};
use lfvar_core::eval::{format_table, pm, write_feature_csv, FeatureExtractor, FeatureSet};
use lfvar_core::measurements::MeasurementNormalizer;
use lfvar_core::tokenizer::{load_tokenizer, train_vqvae_on, TrainingReport};
use lfvar_core::var::{load_var, prepare_var_data, save_var, train_var, VarTrainingReport};

use crate::config::{GenerationMode, RunConfig};
use crate::error::CliError;
use crate::layout::{RunLayout, RunManifest};
use crate::pipeline::{
    build_measurement_codebook, check_resolution, class_requests, downstream, image_seed, inter_class_matrix,
    load_splits, measure_all, run_requests, score_generated, write_splits, EvaluationReport, Trained,
};

pub fn make_toy(cfg: &RunConfig, layout: &RunLayout) -> Result<RunManifest, CliError> {
    let dir = layout.data_dir(cfg);
    let spec = ToyDatasetSpec {
        num_classes: cfg.toy.num_classes,
        samples_per_class: cfg.toy.samples_per_class,
        resolution: cfg.toy.resolution,
        seed: cfg.seed,
    };
    let manifest = generate_toy_dataset(&spec, &dir)?;
    let (train, test) = write_splits(&manifest, cfg, &dir)?;
    let mut m = RunManifest::new(layout, cfg, "make-toy");
    m.add_artifact(layout, &dir.join("manifest.jsonl"));
    m.add_artifact(layout, &train);
    m.add_artifact(layout, &test);
    println!(
        "toy dataset: {} images, {} classes, written to {}",
        manifest.len(),
        manifest.num_classes(),
        dir.display()
    );
    Ok(m)
}

pub fn prepare_data(cfg: &RunConfig, layout: &RunLayout) -> Result<RunManifest, CliError> {
    let need = |p: &Option<std::path::PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| CliError::validation(format!("prepare-data needs data.{key}")))
    };
    let images = need(&cfg.data.image_dir, "image_dir")?;
    let masks = need(&cfg.data.mask_dir, "mask_dir")?;
    let labels = need(&cfg.data.label_table, "label_table")?;
    let dir = layout.data_dir(cfg);
    let opts = IngestOptions {
        mask_suffix: cfg.data.mask_suffix.clone(),
        class_names: cfg.data.class_names.clone(),
    };
    let (manifest, report) = ingest_dataset(&images, &masks, &labels, cfg.data.resolution, &dir, &opts)?;
    for s in &report.skipped {
        log::warn!("skipped {}: {}", s.sample_id, s.reason);
    }
    let (train, test) = write_splits(&manifest, cfg, &dir)?;
    let mut m = RunManifest::new(layout, cfg, "prepare-data");
    m.add_input(layout, &labels)?;
    m.add_artifact(layout, &dir.join("manifest.jsonl"));
    m.add_artifact(layout, &train);
    m.add_artifact(layout, &test);
    println!("ingested {} samples, skipped {}", report.accepted, report.skipped.len());
    Ok(m)
}

fn tokenizer_loss_csv(report: &TrainingReport) -> String {
    let mut s = String::from("epoch,pixel,lesion_focus,feature,perceptual,adversarial,total,commitment\n");
    for e in &report.epochs {
        let l = &e.loss;
        let _ = writeln!(
            s,
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            e.epoch, l.pixel, l.lesion_focus, l.feature, l.perceptual, l.adversarial, l.total, e.commitment
        );
    }
    s
}

fn var_loss_csv(report: &VarTrainingReport) -> String {
    let mut s = String::from("epoch,cross_entropy\n");
    for e in &report.epochs {
        let _ = writeln!(s, "{},{:.8e}", e.epoch, e.loss);
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn train_vqvae(cfg: &RunConfig, layout: &RunLayout) -> Result<RunManifest, CliError> {
    let splits = load_splits(&layout.data_dir(cfg))?;
    check_resolution(cfg, &splits.train)?;
    let samples = splits.train.load_all()?;
    let (_, report) = train_vqvae_on(&samples, &cfg.effective_tokenizer(), Some(&layout.tokenizer_dir()))?;
    let loss_path = layout.reports().join("tokenizer_loss.csv");
    write(&loss_path, &tokenizer_loss_csv(&report))?;
    let mut m = RunManifest::new(layout, cfg, "train-vqvae");
    m.add_input(layout, &splits.train_path)?;
    m.add_checkpoint(layout, &layout.tokenizer_dir().join(lfvar_core::tokenizer::train::WEIGHTS_FILE));
    m.add_artifact(layout, &loss_path);
    if let Some(last) = report.epochs.last() {
        println!(
            "tokenizer trained: {} epochs, final pixel loss {:.5}, {} codes used",
            report.epochs.len(),
            last.loss.pixel,
            report.codes_used
        );
    }
    Ok(m)
}

fn load_tokenizer_checked(cfg: &RunConfig, layout: &RunLayout) -> Result<lfvar_core::tokenizer::VqVae, CliError> {
    let dir = layout.tokenizer_dir();
    if !dir.join(lfvar_core::tokenizer::train::SIDECAR_FILE).exists() {
        return Err(CliError::validation(format!(
            "no tokenizer checkpoint in {}; run train-vqvae first",
            dir.display()
        )));
    }
    let (tok, _) = load_tokenizer(&dir, &candle_device())?;
    cfg.check_var_matches_tokenizer(tok.config())?;
    Ok(tok)
}

fn candle_device() -> lfvar_core::candle::Device {
    lfvar_core::candle::Device::Cpu
}

pub fn train_var_cmd(cfg: &RunConfig, layout: &RunLayout) -> Result<RunManifest, CliError> {
    let splits = load_splits(&layout.data_dir(cfg))?;
    let tokenizer = load_tokenizer_checked(cfg, layout)?;
    let samples = splits.train.load_all()?;
    let normalizer = MeasurementNormalizer::fit(&measure_all(&samples)?)?;
    normalizer.save(&layout.normalizer_path())?;
    let data = prepare_var_data(&tokenizer, &samples, &normalizer)?;
    let var_cfg = cfg.effective_var(splits.train.num_classes());
    let mut codebook = cfg
        .ablation
        .am
        .then(|| MeasurementCodebook::for_measurements(splits.train.class_names.clone()));
    let (model, report) = train_var(
        &var_cfg,
        &tokenizer.frozen_codebook(),
        &data,
        codebook.as_mut(),
        Some(&layout.var_dir()),
    )?;
    save_var(&layout.var_dir(), &model, &report)?;
    let loss_path = layout.reports().join("var_loss.csv");
    write(&loss_path, &var_loss_csv(&report))?;
    let mut m = RunManifest::new(layout, cfg, "train-var");
    m.add_input(layout, &splits.train_path)?;
    m.add_checkpoint(layout, &layout.var_dir().join(lfvar_core::var::train::VAR_WEIGHTS_FILE));
    m.add_checkpoint(layout, &layout.normalizer_path());
    if let (Some(cb), Some(path)) = (&codebook, cfg.codebook_path(&layout.checkpoints())) {
        cb.save(&path)?;
        m.add_checkpoint(layout, &path);
    }
    m.add_artifact(layout, &loss_path);
    if let Some(last) = report.epochs.last() {
        println!("generator trained: {} epochs, final cross-entropy {:.5}", report.epochs.len(), last.loss);
    }
    Ok(m)
}

pub fn build_codebook(cfg: &RunConfig, layout: &RunLayout) -> Result<RunManifest, CliError> {
    let path = cfg
        .codebook_path(&layout.checkpoints())
        .ok_or_else(|| CliError::validation("measurements.codebook is not set"))?;
    let splits = load_splits(&layout.data_dir(cfg))?;
    let samples = splits.train.load_all()?;
    let cb = build_measurement_codebook(&samples, &splits.train.class_names)?;
    cb.save(&path)?;
    let mut m = RunManifest::new(layout, cfg, "build-codebook");
    m.add_input(layout, &splits.train_path)?;
    m.add_checkpoint(layout, &path);
    let counts: Vec<String> = (0..cb.num_classes())
        .map(|c| format!("{}={}", cb.class_names()[c], cb.count(c)))
        .collect();
    println!("measurement codebook: {}", counts.join(" "));
    Ok(m)
}

/// Codebook from disk; a missing file reads as an empty codebook.
fn load_codebook(cfg: &RunConfig, layout: &RunLayout, class_names: &[String]) -> Result<MeasurementCodebook, CliError> {
    match cfg.codebook_path(&layout.checkpoints()) {
        Some(p) if p.exists() => Ok(MeasurementCodebook::load(&p)?),
        _ => Ok(MeasurementCodebook::for_measurements(class_names.to_vec())),
    }
}

pub fn load_trained(cfg: &RunConfig, layout: &RunLayout) -> Result<Trained, CliError> {
    let tokenizer = load_tokenizer_checked(cfg, layout)?;
    let var_dir = layout.var_dir();
    if !var_dir.join(lfvar_core::var::train::VAR_SIDECAR_FILE).exists() || !layout.normalizer_path().exists() {
        return Err(CliError::validation(format!(
            "no generator checkpoint in {}; run train-var first",
            var_dir.display()
        )));
    }
    let (generator, _) = load_var(&var_dir, &tokenizer.frozen_codebook(), &candle_device())?;
    let normalizer = MeasurementNormalizer::load(&layout.normalizer_path())?;
    Ok(Trained {
        tokenizer,
        generator,
        normalizer,
    })
}

pub struct GenerateArgs {
    pub mode: GenerationMode,
    pub class: usize,
    pub count: usize,
    pub source_class: Option<usize>,
}

pub fn generate(cfg: &RunConfig, layout: &RunLayout, args: &GenerateArgs) -> Result<RunManifest, CliError> {
    let splits = load_splits(&layout.data_dir(cfg))?;
    let names = splits.train.class_names.clone();
    if args.class >= names.len() {
        return Err(CliError::validation(format!("class {} out of range for {} classes", args.class, names.len())));
    }
    let source_class = args.source_class.unwrap_or(args.class);
    let codebook = load_codebook(cfg, layout, &names)?;
    if args.mode == GenerationMode::Inter {
        codebook.query(source_class)?;
    }
    let trained = load_trained(cfg, layout)?;
    let pipeline = trained.pipeline();
    let sampler = &trained.generator.config().sampler;
    let mut requests = Vec::with_capacity(args.count);
    let mut sources = Vec::with_capacity(args.count);
    match args.mode {
        GenerationMode::Intra => {
            let test = splits.test.load_all()?;
            let train;
            let pool: Vec<&ImageSample> = {
                let p: Vec<&ImageSample> = test.iter().filter(|s| s.label == args.class && s.mask.area() > 0).collect();
                if p.is_empty() {
                    train = splits.train.load_all()?;
                    train.iter().filter(|s| s.label == args.class && s.mask.area() > 0).collect()
                } else {
                    p
                }
            };
            if pool.is_empty() {
                return Err(CliError::validation(format!("class {} has no source images", args.class)));
            }
            for i in 0..args.count {
                let s = pool[i % pool.len()];
                requests.push(pipeline.intra_request(&s.image, &s.mask, args.class, image_seed(sampler.seed, args.class, i))?);
                sources.push(s.sample_id.clone());
            }
        }
        GenerationMode::Inter => {
            for i in 0..args.count {
                let mut r = pipeline.inter_request(source_class, &codebook, image_seed(sampler.seed, args.class, i))?;
                r.class = args.class;
                requests.push(r);
                sources.push(format!("codebook:{}", names[source_class]));
            }
        }
    }
    let out = pipeline.synthesize(&requests, sampler)?;
    let mode = match args.mode {
        GenerationMode::Intra => "intra",
        GenerationMode::Inter => "inter",
    };
    let dir = layout.images().join(format!("generate-{mode}"));
    std::fs::create_dir_all(&dir)?;
    let mut index = String::from("file,class,seed,source\n");
    let mut m = RunManifest::new(layout, cfg, &format!("generate-{mode}"));
    for (i, (syn, req)) in out.iter().zip(&requests).enumerate() {
        let file = format!("{}_{i:04}.png", names[args.class].to_lowercase());
        let path = dir.join(&file);
        save_image(&syn.image, &path)?;
        let _ = writeln!(index, "{file},{},{},{}", names[args.class], req.seed, sources[i]);
        m.add_artifact(layout, &path);
    }
    let index_path = dir.join("generation.csv");
    write(&index_path, &index)?;
    m.add_artifact(layout, &index_path);
    println!("generated {} images into {}", out.len(), dir.display());
    Ok(m)
}

pub fn evaluation_table(report: &EvaluationReport) -> String {
    let mut header = vec!["metric".to_string()];
    header.extend(report.per_class.iter().map(|c| c.class.clone()));
    header.push("Average".into());
    let mut is_row = vec!["IS".to_string()];
    let mut fid_row = vec!["FID".to_string()];
    for c in report.per_class.iter().chain(std::iter::once(&report.average)) {
        is_row.push(pm(c.is_mean, c.is_std));
        fid_row.push(format!("{:.3}", c.fid));
    }
    let mut s = format_table(&header, &[is_row, fid_row]);
    let _ = writeln!(s, "\nextractor: {}", report.extractor_id);
    let _ = writeln!(s, "FID(generated, real) = {:.4}", report.overall_fid);
    let _ = writeln!(s, "FID(uniform noise, real) = {:.4}", report.noise_fid);
    if let Some(m) = &report.fid_matrix {
        let _ = writeln!(s, "\nFID confusion matrix (rows: source class, columns: target class)\n{}", m.to_csv());
    }
    if let Some(r) = &report.recall {
        let _ = writeln!(s, "\nDownstream recall\n{}", r.to_table());
    }
    s
}

pub fn evaluate(cfg: &RunConfig, layout: &RunLayout) -> Result<RunManifest, CliError> {
    let splits = load_splits(&layout.data_dir(cfg))?;
    let names = splits.train.class_names.clone();
    let codebook = load_codebook(cfg, layout, &names)?;
    let trained = load_trained(cfg, layout)?;
    let train = splits.train.load_all()?;
    let test = splits.test.load_all()?;
    let mut real = train.clone();
    real.extend(test.iter().cloned());
    let sampler = trained.generator.config().sampler.clone();
    let pipeline = trained.pipeline();
    let mode = cfg.evaluation.mode;
    let requests = class_requests(
        &pipeline,
        mode,
        &real,
        Some(&codebook),
        names.len(),
        cfg.evaluation.samples_per_class,
        sampler.seed,
    )?;
    let synth = run_requests(&pipeline, &requests, &sampler)?;
    let generated: Vec<Vec<_>> = synth.iter().map(|v| v.iter().map(|s| s.image.clone()).collect()).collect();

    let mut m = RunManifest::new(layout, cfg, "evaluate");
    m.add_input(layout, &splits.train_path)?;
    m.add_input(layout, &splits.test_path)?;
    let img_dir = layout.images().join("evaluate");
    std::fs::create_dir_all(&img_dir)?;
    for (c, imgs) in generated.iter().enumerate() {
        for (i, img) in imgs.iter().enumerate() {
            let p = img_dir.join(format!("{}_{i:04}.png", names[c].to_lowercase()));
            save_image(img, &p)?;
            m.add_artifact(layout, &p);
        }
    }

    let mut report = score_generated(&generated, &real, &train, &names, &cfg.evaluation, cfg.seed)?;
    if cfg.evaluation.matrix_samples > 0 {
        report.fid_matrix = Some(inter_class_matrix(
            &pipeline,
            &codebook,
            &real,
            &names,
            cfg.evaluation.matrix_samples,
            cfg.evaluation.extractor_seed,
            &sampler,
        )?);
    }
    if cfg.evaluation.downstream {
        report.recall = Some(downstream(&train, &test, &generated, &names, &cfg.evaluation)?);
    }

    let extractor = FeatureExtractor::new(cfg.evaluation.extractor_seed)?;
    let gen_refs: Vec<_> = generated.iter().flatten().collect();
    let gen_set = FeatureSet {
        extractor_id: extractor.id(),
        sample_ids: (0..gen_refs.len()).map(|i| format!("gen{i:05}")).collect(),
        labels: generated
            .iter()
            .enumerate()
            .flat_map(|(c, v)| std::iter::repeat_n(Some(c), v.len()))
            .collect(),
        rows: extractor.extract(&gen_refs)?,
    };
    let real_refs: Vec<_> = real.iter().map(|s| &s.image).collect();
    let real_set = extractor.feature_set(
        real.iter().map(|s| s.sample_id.clone()).collect(),
        real.iter().map(|s| Some(s.label)).collect(),
        &real_refs,
    )?;
    let reports = layout.reports();
    let paths = [
        (reports.join("evaluation.txt"), evaluation_table(&report)),
        (reports.join("evaluation.json"), serde_json::to_string_pretty(&report)?),
    ];
    for (p, text) in &paths {
        write(p, text)?;
        m.add_artifact(layout, p);
    }
    if let Some(mat) = &report.fid_matrix {
        let p = reports.join("fid_matrix.csv");
        write(&p, &mat.to_csv())?;
        m.add_artifact(layout, &p);
    }
    for (name, set) in [("features_generated.csv", &gen_set), ("features_real.csv", &real_set)] {
        let p = reports.join(name);
        write_feature_csv(set, &p)?;
        m.add_artifact(layout, &p);
    }
    print!("{}", evaluation_table(&report));
    Ok(m)
}
