//! `retone`: synthetic-corpus generation, speaker-encoder pretraining,
//! conversion training, conversion, and objective evaluation.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or validation error.

mod config;
mod plot;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use retone_core::audio::{read_wav, write_wav, MelConfig, GriffinLim};
use retone_core::data::{load_corpus, synth_corpus, MelSet, Split, SynthConfig};
use retone_core::eval::{
    content_embedding_features, evaluate_conversion, run_probe, speaker_embedding_features,
};
use retone_core::speaker::pretrain_speaker_encoder;
use retone_core::train::checkpoint::{save_checkpoint, write_tensors, RawTensor};
use retone_core::train::{train, TrainLog};
use retone_core::{Error as CoreError, VoiceModel};

use config::RunConfig;
use plot::{bar_chart, line_chart, Series};

#[derive(Parser)]
#[command(name = "retone", version, about = "Desk-scale non-parallel voice conversion")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus of harmonic-tone utterances
    SynthData {
        /// Output directory (created; must be empty unless --force)
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        speakers: usize,
        #[arg(long)]
        utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write into a non-empty directory
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the speaker encoder with the verification loss
    PretrainSpeaker {
        /// Corpus root (one directory per speaker)
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override pretrain.steps
        #[arg(long)]
        steps: Option<usize>,
        /// Override pretrain.seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the conversion model (content encoder + decoder)
    Train {
        corpus: PathBuf,
        /// Checkpoint holding the pretrained speaker encoder
        #[arg(long)]
        speaker_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override train.steps
        #[arg(long)]
        steps: Option<usize>,
        /// Override train.seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a source utterance into a target speaker's voice
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source utterance (16 kHz mono PCM16 WAV)
        #[arg(long)]
        source: PathBuf,
        /// Target speaker exemplar utterance
        #[arg(long)]
        target_ref: PathBuf,
        /// Output WAV path; the converted mel is written next to it as .mel
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Probe-classifier evaluation of embedding disentanglement
    EvalProbe {
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override eval.seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Speaker recognition and similarity measurements on conversions
    EvalConversion {
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override eval.seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Show the configuration schema
    Config {
        /// Print every key with its default value
        #[arg(long)]
        dump_defaults: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.cmd) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

/// Validation failures (bad inputs, bad config) exit 2; runtime errors 1.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return if core.is_validation() { 2 } else { 1 };
        }
    }
    // Config parsing problems are usage errors.
    let text = format!("{err:#}");
    if text.contains("config") || text.contains("usage") {
        2
    } else {
        1
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Config { dump_defaults } => {
            if dump_defaults {
                print!("{}", RunConfig::dump_defaults());
            } else {
                println!("use --dump-defaults to print the configuration schema");
            }
            Ok(())
        }
        Command::SynthData {
            out,
            speakers,
            utts,
            seed,
            force,
        } => synth_data(&out, speakers, utts, seed, force),
        Command::PretrainSpeaker {
            corpus,
            out,
            config,
            steps,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.pretrain.steps = s;
            }
            if let Some(s) = seed {
                cfg.pretrain.seed = s;
            }
            pretrain_cmd(&corpus, &out, &cfg)
        }
        Command::Train {
            corpus,
            speaker_checkpoint,
            out,
            config,
            steps,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            train_cmd(&corpus, &speaker_checkpoint, &out, &cfg)
        }
        Command::Convert {
            checkpoint,
            source,
            target_ref,
            out,
            config,
        } => {
            let cfg = load_config(&config)?;
            convert_cmd(&checkpoint, &source, &target_ref, &out, &cfg)
        }
        Command::EvalProbe {
            corpus,
            checkpoint,
            out,
            config,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let _ = seed; // probes are deterministic; seed kept for interface symmetry
            eval_probe_cmd(&corpus, &checkpoint, &out, &cfg)
        }
        Command::EvalConversion {
            corpus,
            checkpoint,
            out,
            config,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.conversion.seed = s;
            }
            eval_conversion_cmd(&corpus, &checkpoint, &out, &cfg)
        }
    }
}

fn synth_data(out: &Path, speakers: usize, utts: usize, seed: u64, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if non_empty && !force {
            return Err(anyhow!(CoreError::invalid(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            ))));
        }
    }
    let corpus = synth_corpus(&SynthConfig::new(speakers, utts, seed))?;
    corpus.materialize(out)?;
    let total: usize = corpus.speakers.iter().map(|s| s.utterances.len()).sum();
    println!(
        "wrote {total} utterances for {} speakers under {} (manifest.tsv included)",
        corpus.speakers.len(),
        out.display()
    );
    Ok(())
}

fn prepare_corpus(root: &Path, cfg: &RunConfig) -> Result<(retone_core::data::Corpus, MelSet)> {
    let outcome = load_corpus(root, &cfg.split)?;
    for (path, reason) in &outcome.rejected {
        eprintln!("rejected {}: {reason}", path.display());
    }
    let mels = MelSet::compute(&outcome.corpus)?;
    Ok((outcome.corpus, mels))
}

fn pretrain_cmd(corpus_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (corpus, mels) = prepare_corpus(corpus_dir, cfg)?;
    let mut model = VoiceModel::init(&cfg.model, cfg.model_seed)?;
    let log = pretrain_speaker_encoder(&mut model, &corpus, &mels, &cfg.pretrain)?;

    // Speaker-encoder-only checkpoint: the conversion trainer fills the
    // remaining groups from initialization.
    let tensors: Vec<RawTensor> = model
        .store
        .iter()
        .filter(|e| e.name.starts_with("spk.") || e.name.starts_with("ge2e."))
        .map(|e| RawTensor::from_tensor(&e.name, &e.value))
        .collect();
    let ckpt = out.join("speaker.ckpt");
    write_tensors(&ckpt, &tensors)?;

    let mut tsv = String::from("step\tge2e_loss\n");
    for (i, loss) in log.losses.iter().enumerate() {
        tsv.push_str(&format!("{}\t{:.6e}\n", i + 1, loss));
    }
    write_text(&out.join("pretrain_metrics.tsv"), &tsv)?;
    let points: Vec<(f64, f64)> = log
        .losses
        .iter()
        .enumerate()
        .map(|(i, &l)| ((i + 1) as f64, l))
        .collect();
    write_text(
        &out.join("pretrain_loss.svg"),
        &line_chart("speaker encoder pretraining", "step", "ge2e loss", &[Series {
            label: "ge2e",
            points: points.clone(),
        }]),
    )?;
    let mut csv = String::from("step,ge2e_loss\n");
    for (x, y) in &points {
        csv.push_str(&format!("{x},{y:.6e}\n"));
    }
    write_text(&out.join("pretrain_loss.csv"), &csv)?;

    match (log.losses.first(), log.losses.last()) {
        (Some(first), Some(last)) => println!(
            "pretrained {} steps: ge2e {first:.4} -> {last:.4}; checkpoint at {}",
            log.losses.len(),
            ckpt.display()
        ),
        _ => println!("pretrained 0 steps; checkpoint at {}", ckpt.display()),
    }
    Ok(())
}

fn write_train_artifacts(out: &Path, log: &TrainLog) -> Result<()> {
    write_text(&out.join("metrics.tsv"), &log.to_tsv())?;
    let series = [
        Series {
            label: "L_total",
            points: log.steps.iter().map(|m| (m.step as f64, m.total)).collect(),
        },
        Series {
            label: "L_SRL",
            points: log.steps.iter().map(|m| (m.step as f64, m.srl)).collect(),
        },
        Series {
            label: "L_SCL",
            points: log.steps.iter().map(|m| (m.step as f64, m.scl)).collect(),
        },
    ];
    write_text(
        &out.join("loss_curves.svg"),
        &line_chart("conversion training", "step", "loss", &series),
    )?;
    let mut csv = String::from("step,L_SRL,L_SCL,L_total\n");
    for m in &log.steps {
        csv.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e}\n",
            m.step, m.srl, m.scl, m.total
        ));
    }
    write_text(&out.join("loss_curves.csv"), &csv)?;
    Ok(())
}

fn train_cmd(corpus_dir: &Path, speaker_ckpt: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (corpus, mels) = prepare_corpus(corpus_dir, cfg)?;
    let mut model = VoiceModel::init(&cfg.model, cfg.model_seed)?;
    let report = model.load_weights(speaker_ckpt)?;
    let groups = report.loaded_groups();
    println!(
        "loaded parameter groups {:?} from {} ({} tensors; {} left at initialization)",
        groups,
        speaker_ckpt.display(),
        report.loaded.len(),
        report.missing.len()
    );
    if !groups.iter().any(|g| g == "spk.") {
        bail!(CoreError::invalid(format!(
            "{} holds no speaker-encoder group; pretrain first",
            speaker_ckpt.display()
        )));
    }
    let log = train(&mut model, &corpus, &mels, &cfg.train)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&model.store, &ckpt)?;
    write_train_artifacts(out, &log)?;
    if let Some(last) = log.steps.last() {
        println!(
            "trained {} steps: L_total {:.4} (SRL {:.4}, SCL {:.4}); checkpoint at {}",
            log.steps.len(),
            last.total,
            last.srl,
            last.scl,
            ckpt.display()
        );
    } else {
        println!("trained 0 steps (initialization checkpoint) at {}", ckpt.display());
    }
    Ok(())
}

fn load_model(checkpoint: &Path, cfg: &RunConfig, required_groups: &[&str]) -> Result<VoiceModel> {
    let mut model = VoiceModel::init(&cfg.model, cfg.model_seed)?;
    let report = model.load_weights(checkpoint)?;
    let groups = report.loaded_groups();
    for required in required_groups {
        if !groups.iter().any(|g| g == required) {
            bail!(CoreError::invalid(format!(
                "checkpoint {} is missing the `{required}` parameter group (untrained model?)",
                checkpoint.display()
            )));
        }
    }
    Ok(model)
}

fn convert_cmd(
    checkpoint: &Path,
    source: &Path,
    target_ref: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let model = load_model(checkpoint, cfg, &["spk.", "enc.", "dec."])?;
    let mel_cfg = MelConfig::default();
    let extractor = retone_core::audio::MelExtractor::new(mel_cfg.clone())?;
    let source_wav = read_wav(source)?;
    let target_wav = read_wav(target_ref)?;
    let source_mel = extractor.mel(&source_wav)?;
    let target_mel = extractor.mel(&target_wav)?;
    let src_emb = model.embed_utterance(&source_mel)?;
    let tgt_emb = model.embed_utterance(&target_mel)?;
    let converted = model.convert(&source_mel, &src_emb, &tgt_emb)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let mel_path = out.with_extension("mel");
    write_tensors(
        &mel_path,
        &[RawTensor::from_tensor("mel", converted.frames())],
    )?;
    let gl = GriffinLim::new(mel_cfg)?;
    let audio = gl.invert(&converted, cfg.gl_iters)?;
    write_wav(out, &audio)?;
    println!(
        "converted {} -> voice of {}: audio {}, mel {}",
        source.display(),
        target_ref.display(),
        out.display(),
        mel_path.display()
    );
    Ok(())
}

fn eval_probe_cmd(corpus_dir: &Path, checkpoint: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (corpus, mels) = prepare_corpus(corpus_dir, cfg)?;
    let model = load_model(checkpoint, cfg, &["spk.", "enc."])?;
    let n = corpus.seen_speaker_indices().len();

    let content_train = content_embedding_features(&model, &corpus, &mels, Split::Train)?;
    let content_eval = content_embedding_features(&model, &corpus, &mels, Split::Eval)?;
    let (_, content) = run_probe(&content_train, &content_eval, n, &cfg.probe)?;
    let spk_train = speaker_embedding_features(&model, &corpus, &mels, Split::Train)?;
    let spk_eval = speaker_embedding_features(&model, &corpus, &mels, Split::Eval)?;
    let (_, speaker) = run_probe(&spk_train, &spk_eval, n, &cfg.probe)?;

    let tsv = format!(
        "feature\taccuracy\tchance\tnum_eval\ncontent_embedding\t{:.6}\t{:.6}\t{}\nspeaker_embedding\t{:.6}\t{:.6}\t{}\n",
        content.accuracy, content.chance, content.num_eval,
        speaker.accuracy, speaker.chance, speaker.num_eval
    );
    let summary = format!(
        "{}{}",
        content.summary("content_probe"),
        speaker.summary("speaker_probe")
    );
    write_text(&out.join("probe_report.tsv"), &tsv)?;
    write_text(&out.join("probe_summary.txt"), &summary)?;
    write_text(
        &out.join("probe_accuracy.svg"),
        &bar_chart(
            "speaker probes on embeddings",
            "accuracy",
            &[
                ("content".to_string(), content.accuracy),
                ("speaker".to_string(), speaker.accuracy),
            ],
            Some(content.chance),
        ),
    )?;
    write_text(
        &out.join("probe_accuracy.csv"),
        &format!(
            "feature,accuracy,chance,num_eval\ncontent_embedding,{:.6},{:.6},{}\nspeaker_embedding,{:.6},{:.6},{}\n",
            content.accuracy, content.chance, content.num_eval,
            speaker.accuracy, speaker.chance, speaker.num_eval
        ),
    )?;
    print!("{tsv}\n{summary}");
    Ok(())
}

fn eval_conversion_cmd(corpus_dir: &Path, checkpoint: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (corpus, mels) = prepare_corpus(corpus_dir, cfg)?;
    let model = load_model(checkpoint, cfg, &["spk.", "enc.", "dec."])?;
    let outcome = evaluate_conversion(&model, &corpus, &mels, &cfg.conversion)?;
    write_text(&out.join("conversion_report.tsv"), &outcome.to_tsv())?;
    write_text(&out.join("conversion_summary.txt"), &outcome.summary())?;
    write_text(
        &out.join("conversion_accuracy.svg"),
        &bar_chart(
            "conversion direction",
            "fraction",
            &[
                ("target classified".to_string(), outcome.report.accuracy),
                ("target closer".to_string(), outcome.fraction_target_closer),
            ],
            Some(outcome.report.chance),
        ),
    )?;
    write_text(
        &out.join("conversion_accuracy.csv"),
        &format!(
            "metric,value\ntarget_classified,{:.6}\ntarget_closer,{:.6}\nchance,{:.6}\nnum_pairs,{}\n",
            outcome.report.accuracy,
            outcome.fraction_target_closer,
            outcome.report.chance,
            outcome.report.num_eval
        ),
    )?;
    print!("{}", outcome.summary());
    Ok(())
}
