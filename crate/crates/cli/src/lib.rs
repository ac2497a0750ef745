//! `lfvar` command-line driver.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::GenerateArgs;
use crate::config::{load_config, GenerationMode};
use crate::error::CliError;
use crate::layout::{RunLayout, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "lfvar", version, about = "Lesion-focused VQ tokenizer and measurement-conditioned VAR synthesis")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key=value` override, dotted keys, repeatable.
    #[arg(long = "set", global = true)]
    pub set: Vec<String>,
    /// Output root. Runs land in `<out>/runs/<run-id>/`.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest images, masks and a label table into a dataset manifest.
    PrepareData,
    /// Write the synthetic toy dataset.
    MakeToy,
    /// Train the multi-scale VQ tokenizer.
    TrainVqvae,
    /// Train the conditional next-scale generator.
    TrainVar,
    /// Build the per-class measurement codebook from the training split.
    BuildCodebook,
    /// Synthesize images.
    Generate {
        #[arg(long, value_enum, default_value = "intra")]
        mode: ModeArg,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Inter mode: class whose codebook entry supplies the measurements.
        #[arg(long)]
        source_class: Option<usize>,
    },
    /// Compute IS/FID on generated images (and the optional reports).
    Evaluate,
    /// Run the four ablation settings and write the comparison table.
    Ablate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Intra,
    Inter,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PrepareData => "prepare-data",
            Command::MakeToy => "make-toy",
            Command::TrainVqvae => "train-vqvae",
            Command::TrainVar => "train-var",
            Command::BuildCodebook => "build-codebook",
            Command::Generate { .. } => "generate",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
        }
    }
}

fn execute(cli: &Cli, env: &[(String, String)]) -> Result<PathBuf, CliError> {
    let cfg = load_config(cli.config.as_deref(), env, &cli.set, cli.seed)?;
    let layout = RunLayout::new(&cli.out, &cfg);
    layout.create()?;
    log::info!("{} run {} in {}", cli.command.name(), layout.run_id, layout.root.display());
    let manifest: RunManifest = match &cli.command {
        Command::PrepareData => commands::prepare_data(&cfg, &layout)?,
        Command::MakeToy => commands::make_toy(&cfg, &layout)?,
        Command::TrainVqvae => commands::train_vqvae(&cfg, &layout)?,
        Command::TrainVar => commands::train_var_cmd(&cfg, &layout)?,
        Command::BuildCodebook => commands::build_codebook(&cfg, &layout)?,
        Command::Generate {
            mode,
            class,
            count,
            source_class,
        } => {
            let args = GenerateArgs {
                mode: match mode {
                    ModeArg::Intra => GenerationMode::Intra,
                    ModeArg::Inter => GenerationMode::Inter,
                },
                class: *class,
                count: *count,
                source_class: *source_class,
            };
            commands::generate(&cfg, &layout, &args)?
        }
        Command::Evaluate => commands::evaluate(&cfg, &layout)?,
        Command::Ablate => {
            let report = ablation::run_ablation(&cfg, &cli.out)?;
            let mut m = RunManifest::new(&layout, &cfg, "ablate");
            ablation::write_ablation(&report, &layout, &mut m)?;
            print!("{}", report.to_table());
            m
        }
    };
    manifest.write(&layout)
}

/// Parse `args` (including the program name), run, and return the exit
/// code: 0 success, 1 usage or validation error, 2 runtime failure.
pub fn run<I, T>(args: I, env: &[(String, String)]) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli, env) {
        Ok(manifest) => {
            log::info!("manifest written to {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
