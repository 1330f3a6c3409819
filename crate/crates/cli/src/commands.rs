use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use tdsv::corpus_io::{
    format_transcripts, generate_synthetic_experiment, load_experiment, load_model, load_transcripts, read_wav,
    save_experiment, save_model, write_feature_file, Experiment, IoError, Model,
};
use tdsv::eval::{compute_metric_rows, format_metrics_kv, format_metrics_table, format_scores, parse_scores};
use tdsv::features::extract_features;
use tdsv::hmm::alignment_csv;
use tdsv::pipeline::{Pipeline, SystemConfig, SystemKind};

use crate::config::Settings;
use crate::{CliError, Command, SystemArgs};

pub fn dispatch(command: Command, settings: &Settings) -> Result<(), CliError> {
    match command {
        Command::ExtractFeatures { list, transcripts, out } => extract(settings, &list, transcripts.as_deref(), &out),
        Command::TrainUbm { data, system, out } => {
            let exp = load(&data.data)?;
            let config = settings.selected_system()?;
            let mut p = pipeline(&config, &exp, &system)?;
            let ubm = p.train_ubm(&config, &exp).map_err(CliError::data)?;
            write_model(&out, &Model::Gmm(ubm))
        }
        Command::TrainHmm { data, system, out } => {
            let exp = load(&data.data)?;
            let config = hmm_system(settings)?;
            let mut p = pipeline(&config, &exp, &system)?;
            let hmm = p.train_background_hmm(&config, &exp).map_err(CliError::data)?;
            write_model(&out, &Model::PhoneHmmSet(hmm))
        }
        Command::TrainTmatrix { data, system, out } => {
            let exp = load(&data.data)?;
            let config = settings.selected_system()?;
            if !config.kind.uses_ivectors() {
                return Err(CliError::Usage(
                    "train-tmatrix needs --system ivector or --system ivector-hmm".into(),
                ));
            }
            let mut p = pipeline(&config, &exp, &system)?;
            let tv = p.train_tmatrix(&config, &exp).map_err(CliError::data)?;
            write_model(&out, &Model::TotalVariability(tv))
        }
        Command::Enroll { data, system, out } => {
            let exp = load(&data.data)?;
            let config = settings.selected_system()?;
            let mut p = pipeline(&config, &exp, &system)?;
            let models = p.enroll(&config, &exp).map_err(CliError::data)?;
            write_model(&out, &models)
        }
        Command::Score { data, system, out } => {
            let exp = load(&data.data)?;
            let config = settings.selected_system()?;
            let mut p = pipeline(&config, &exp, &system)?;
            let report = p.run_system(&config, &exp).map_err(CliError::data)?;
            info!("scored {} trials with {}", report.scores.len(), report.name);
            write_text(&out, &format_scores(&report.scores))
        }
        Command::Evaluate { scores, name, out } => {
            let text = fs::read_to_string(&scores).map_err(|e| CliError::data(IoError::io(&scores, e)))?;
            let set = parse_scores(&text).map_err(CliError::data)?;
            let config = settings.selected_system()?;
            let rows = compute_metric_rows(&set, &config.mdcf08, &config.mdcf10).map_err(CliError::data)?;
            print!("{}", format_metrics_table(&name, &rows));
            match out {
                Some(out) => write_text(&out, &format_metrics_kv(&name, &rows)),
                None => Ok(()),
            }
        }
        Command::AlignDump {
            data,
            system,
            utt,
            transcript,
            out,
        } => {
            let exp = load(&data.data)?;
            let config = hmm_system(settings)?;
            let mut p = pipeline(&config, &exp, &system)?;
            let phones: Option<Vec<String>> = transcript.map(|t| t.split_whitespace().map(str::to_string).collect());
            let (alignment, hmm_set) = p
                .align_utterance(&config, &exp, &utt, phones.as_deref())
                .map_err(CliError::data)?;
            write_text(&out, &alignment_csv(&utt, &alignment, &hmm_set))
        }
        Command::SynthCorpus { out, .. } => {
            let spec = settings.synthetic_spec()?;
            let exp = generate_synthetic_experiment(&spec).map_err(CliError::data)?;
            info!(
                "generated {} utterances, {} trials (corpus {})",
                exp.corpus.len(),
                exp.trials.len(),
                exp.corpus.digest()
            );
            save_experiment(&out, &exp).map_err(CliError::data)
        }
        Command::RunExperiment {
            data, out, scores_dir, ..
        } => {
            let exp = match data {
                Some(dir) => load(&dir)?,
                None => {
                    let spec = settings.synthetic_spec()?;
                    generate_synthetic_experiment(&spec).map_err(CliError::data)?
                }
            };
            let configs = settings.experiment_systems()?;
            let report = Pipeline::from_env()
                .compare_systems(&configs, &exp)
                .map_err(CliError::data)?;
            print!("{}", report.format_table());
            if let Some(dir) = scores_dir {
                fs::create_dir_all(&dir).map_err(|e| CliError::data(IoError::io(&dir, e)))?;
                for s in &report.systems {
                    write_text(&dir.join(format!("{}.scores", s.name)), &format_scores(&s.scores))?;
                }
            }
            match out {
                Some(out) => write_text(&out, &report.format_kv()),
                None => Ok(()),
            }
        }
    }
}

fn load(dir: &Path) -> Result<Experiment, CliError> {
    let exp = load_experiment(dir).map_err(CliError::data)?;
    info!(
        "loaded {}: {} utterances, {} models, {} trials",
        dir.display(),
        exp.corpus.len(),
        exp.enrollments.len(),
        exp.trials.len()
    );
    Ok(exp)
}

/// The selected system when it uses HMMs, otherwise GMM-HMM with the
/// configured alignment algorithm.
fn hmm_system(settings: &Settings) -> Result<SystemConfig, CliError> {
    let selected = settings.selected_system()?;
    if selected.kind.uses_hmm() {
        return Ok(selected);
    }
    Ok(settings.system(SystemKind::GmmHmm, Some(settings.parse("hmm.align")?))?)
}

/// A pipeline whose stage cache already holds any background models given
/// on the command line.
fn pipeline(config: &SystemConfig, exp: &Experiment, args: &SystemArgs) -> Result<Pipeline, CliError> {
    let mut p = Pipeline::from_env();
    let given = [
        (&args.ubm, "gmm"),
        (&args.hmm, "phone-hmm-set"),
        (&args.tmatrix, "total-variability"),
    ];
    for (path, kind) in given {
        let Some(path) = path else { continue };
        let model = load_model(path).map_err(CliError::data)?;
        if model.kind_name() != kind {
            return Err(CliError::Data(
                format!(
                    "{}: expected a {kind} model, found a {}",
                    path.display(),
                    model.kind_name()
                )
                .into(),
            ));
        }
        info!("using {} from {}", model.kind_name(), path.display());
        p.preload(config, exp, model).map_err(CliError::data)?;
    }
    Ok(p)
}

fn write_model(path: &Path, model: &Model) -> Result<(), CliError> {
    create_parent(path)?;
    save_model(path, model).map_err(CliError::data)?;
    info!("wrote {} to {}", model.kind_name(), path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::data(IoError::io(path, e)))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::data(IoError::io(dir, e)))
        }
        _ => Ok(()),
    }
}

struct ListEntry {
    utt_id: String,
    speaker_id: String,
    phrase_id: String,
    wav: PathBuf,
}

fn parse_list(path: &Path) -> Result<Vec<ListEntry>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(IoError::io(path, e)))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [utt_id, speaker_id, phrase_id, wav] = f[..] else {
            return Err(CliError::data(IoError::Parse {
                line: i + 1,
                message: "expected `utt_id speaker_id phrase_id wav_path`".into(),
            }));
        };
        out.push(ListEntry {
            utt_id: utt_id.into(),
            speaker_id: speaker_id.into(),
            phrase_id: phrase_id.into(),
            wav: base.join(wav),
        });
    }
    Ok(out)
}

/// Writes `feats/<utt>.feat` per entry plus a manifest (and transcripts)
/// loadable as a corpus.
fn extract(settings: &Settings, list: &Path, transcripts: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let (config, kind, deltas, cmvn) = settings.frontend()?;
    let entries = parse_list(list)?;
    let feats_dir = out.join("feats");
    fs::create_dir_all(&feats_dir).map_err(|e| CliError::data(IoError::io(&feats_dir, e)))?;
    let dims = entries
        .par_iter()
        .map(|e| {
            let wav = read_wav(&e.wav).map_err(CliError::data)?;
            let feats = extract_features(&wav, &config, kind, deltas, cmvn)
                .map_err(|err| CliError::Data(format!("{}: {err}", e.wav.display()).into()))?;
            write_feature_file(feats_dir.join(format!("{}.feat", e.utt_id)), &feats).map_err(CliError::data)?;
            Ok((feats.num_frames(), feats.dim()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut manifest = String::from("# utt_id speaker_id phrase_id path\n");
    for e in &entries {
        let _ = writeln!(
            manifest,
            "{} {} {} feats/{}.feat",
            e.utt_id, e.speaker_id, e.phrase_id, e.utt_id
        );
    }
    write_text(&out.join("manifest.txt"), &manifest)?;
    if let Some(t) = transcripts {
        let t = load_transcripts(t).map_err(CliError::data)?;
        let text = format_transcripts(t.iter().map(|(u, p)| (u.as_str(), p.as_slice())));
        write_text(&out.join("transcripts.txt"), &text)?;
    }
    let frames: usize = dims.iter().map(|(t, _)| t).sum();
    info!("extracted {} utterances, {frames} frames", entries.len());
    Ok(())
}
