//! `sdoh` command line: ingest notes, synthesize positives, assemble datasets,
//! evaluate models, train the router, classify, serve and report.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use sdoh_core::ModelId;

pub mod commands;
pub mod config;
pub mod error;
pub mod serve;

pub use error::{CliError, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "sdoh", version, about = "Route SDOH coding of clinical notes to the best-measured model per code")]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "sdoh.toml")]
    pub config: PathBuf,
    /// Override params.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override params.max_in_flight.
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    /// Only use notes with a Social History section, and only that section.
    #[arg(long, global = true)]
    pub restrict_social_history: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project annotations onto note sentences and sample negative pools.
    Ingest,
    /// Generate verified synthetic positives for one code.
    GenSynth {
        #[arg(long)]
        code: String,
        /// Number of accepted sentences to aim for.
        #[arg(long)]
        target: usize,
        #[arg(long)]
        generator: Option<ModelId>,
        #[arg(long)]
        verifier: Option<ModelId>,
    },
    /// Combine gold, synthetic and negative examples into per-code datasets.
    Assemble {
        #[arg(long = "code")]
        codes: Vec<String>,
    },
    /// Score every model on every code's dataset.
    Eval {
        #[arg(long = "model")]
        models: Vec<ModelId>,
        #[arg(long = "code")]
        codes: Vec<String>,
        /// Also write a note-level matrix next to the sentence-level one.
        #[arg(long)]
        note_level: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the most accurate model per code from an evaluation matrix.
    TrainRouter {
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Leave a model out of routing, e.g. a closed baseline.
        #[arg(long = "exclude-model")]
        exclude: Vec<ModelId>,
        #[arg(long)]
        trained_at: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one sentence with the routed model.
    Classify {
        /// Code id or keyword phrase.
        #[arg(long)]
        code: String,
        #[arg(long)]
        sentence: String,
    },
    /// Find evidence sentences in a note for each code.
    CodeNote {
        #[arg(long, conflicts_with = "text", required_unless_present = "text")]
        note: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
        #[arg(long = "code")]
        codes: Vec<String>,
    },
    /// Serve routed classification over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Serve even if the datasets changed since the table was trained.
        #[arg(long)]
        allow_fingerprint_mismatch: bool,
        /// Include prompts, raw responses and error details in responses.
        #[arg(long)]
        debug: bool,
    },
    /// Write best-model, baseline comparison and mean-accuracy reports.
    Report {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<ModelId>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    let mut loaded = config::Loaded::from_file(&cli.config)?;
    let params = &mut loaded.config.params;
    if let Some(s) = cli.seed {
        params.seed = s;
    }
    if let Some(n) = cli.max_in_flight {
        if n == 0 {
            return Err(CliError::usage("--max-in-flight must be at least 1"));
        }
        params.max_in_flight = n;
    }
    params.restrict_social_history |= cli.restrict_social_history;

    let l = &loaded;
    match cli.command {
        Command::Ingest => commands::ingest(l),
        Command::GenSynth { code, target, generator, verifier } => {
            commands::gen_synth(l, &code, target, generator, verifier).await
        }
        Command::Assemble { codes } => commands::assemble(l, &codes),
        Command::Eval { models, codes, note_level, out } => commands::eval(l, &models, &codes, note_level, out).await,
        Command::TrainRouter { matrix, exclude, trained_at, out } => {
            commands::train_router(l, matrix, &exclude, trained_at, out)
        }
        Command::Classify { code, sentence } => commands::classify(l, &code, &sentence).await,
        Command::CodeNote { note, text, codes } => commands::code_note(l, note, text, &codes).await,
        Command::Serve { bind, allow_fingerprint_mismatch, debug } => {
            serve::run(l, bind, allow_fingerprint_mismatch, debug).await
        }
        Command::Report { matrix, baseline, out } => commands::report(l, matrix, baseline, out),
    }
}
