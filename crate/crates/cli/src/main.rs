//! `tdsv`: command-line front end for text-dependent speaker verification
//! experiments. Exit status is 0 on success, 1 on usage or configuration
//! errors and 2 on data or model errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Settings};

#[derive(Debug, Parser)]
#[command(name = "tdsv", version, about = "Text-dependent speaker verification toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random choice (`pipeline.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core (`pipeline.workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Experiment directory (manifest, transcripts, background, enroll and trial lists).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct SystemArgs {
    /// System kind (`pipeline.system`).
    #[arg(long)]
    system: Option<String>,
    /// Alignment algorithm for HMM systems, viterbi or fb (`hmm.align`).
    #[arg(long)]
    algo: Option<String>,
    /// Use this UBM instead of training one.
    #[arg(long, value_name = "FILE")]
    ubm: Option<PathBuf>,
    /// Use these phone HMMs instead of training them.
    #[arg(long, value_name = "FILE")]
    hmm: Option<PathBuf>,
    /// Use this T matrix instead of training one.
    #[arg(long, value_name = "FILE")]
    tmatrix: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute MFCC or FBank features for a list of WAV files.
    ExtractFeatures {
        /// Lines `utt_id speaker_id phrase_id wav_path`, paths relative to the list.
        #[arg(long, value_name = "FILE")]
        list: PathBuf,
        /// Transcript file copied next to the manifest.
        #[arg(long, value_name = "FILE")]
        transcripts: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the universal background model.
    TrainUbm {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train mono-phone HMMs.
    TrainHmm {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the total variability matrix of an i-vector system.
    TrainTmatrix {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Enroll every model of the experiment.
    Enroll {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score the trial list.
    Score {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// EER and minDCF per trial type from a score file.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        /// Name used in the report.
        #[arg(long, default_value = "system")]
        name: String,
        /// Also write `name.TYPE.metric = value` lines here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write one utterance's frame alignment as CSV.
    AlignDump {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long)]
        utt: String,
        /// Align against this space-separated phone sequence instead of the
        /// utterance's own transcript.
        #[arg(long)]
        transcript: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Generate a deterministic synthetic experiment directory.
    SynthCorpus {
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        phrases: Option<usize>,
        #[arg(long)]
        phones_per_phrase: Option<usize>,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        background_speakers: Option<usize>,
        #[arg(long)]
        background_utterances: Option<usize>,
        #[arg(long)]
        bottleneck_dim: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train, enroll, score and evaluate several systems on one experiment.
    RunExperiment {
        /// Experiment directory; a synthetic one from `synth.*` when absent.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Comma-separated system names or `standard` (`pipeline.systems`).
        #[arg(long)]
        systems: Option<String>,
        /// Write the `key = value` report here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Write one score file per system into this directory.
        #[arg(long, value_name = "DIR")]
        scores_dir: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(Box<dyn std::error::Error + Send + Sync>),
}

impl CliError {
    pub fn data(e: impl std::error::Error + Send + Sync + 'static) -> Self {
        CliError::Data(Box::new(e))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn settings(global: &GlobalArgs, command: &Command) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = &global.config {
        s.apply_file(path)?;
    }
    for o in &global.overrides {
        s.set_assignment(o)?;
    }
    let mut set = |key: &str, v: Option<String>| -> Result<(), ConfigError> {
        match v {
            Some(v) => s.set(key, &v),
            None => Ok(()),
        }
    };
    set("pipeline.seed", global.seed.map(|v| v.to_string()))?;
    set("pipeline.workers", global.workers.map(|v| v.to_string()))?;
    match command {
        Command::TrainUbm { system, .. }
        | Command::TrainHmm { system, .. }
        | Command::TrainTmatrix { system, .. }
        | Command::Enroll { system, .. }
        | Command::Score { system, .. }
        | Command::AlignDump { system, .. } => {
            set("pipeline.system", system.system.clone())?;
            set("hmm.align", system.algo.clone())?;
        }
        Command::SynthCorpus {
            speakers,
            phrases,
            phones_per_phrase,
            utterances,
            background_speakers,
            background_utterances,
            bottleneck_dim,
            ..
        } => {
            let n = |v: &Option<usize>| v.map(|v| v.to_string());
            set("synth.speakers", n(speakers))?;
            set("synth.phrases", n(phrases))?;
            set("synth.phones_per_phrase", n(phones_per_phrase))?;
            set("synth.utterances", n(utterances))?;
            set("synth.background_speakers", n(background_speakers))?;
            set("synth.background_utterances", n(background_utterances))?;
            set("synth.bottleneck_dim", n(bottleneck_dim))?;
        }
        Command::RunExperiment { systems, .. } => set("pipeline.systems", systems.clone())?,
        Command::ExtractFeatures { .. } | Command::Evaluate { .. } => {}
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = settings(&cli.global, &cli.command)?;
    for (k, v) in settings.effective() {
        log::info!("config {k} = {v}");
    }
    let workers = settings.workers()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    commands::dispatch(cli.command, &settings)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
