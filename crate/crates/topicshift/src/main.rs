//! Command-line front end: corpus tooling, two-stage training, evaluation,
//! and gradient verification as subcommands sharing one JSON configuration.
//!
//! Every subcommand accepts `--config FILE` and `--seed N`; a flag beats the
//! file, the file beats the built-in default. Training and generation write
//! only under `--out`, and training echoes the fully resolved configuration
//! there so a run can be reproduced from its artifacts alone. Verbosity is
//! controlled by the `TOPICSHIFT_LOG` environment variable (`error`, `info`,
//! `debug`); log lines go to stderr, machine-readable output to stdout.

use clap::{Parser, Subcommand};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use topicshift::corpus::{
    extract_pairs, load_corpus, stats, synth, validate, write_corpus, Dialogue, Sample, Split,
    Violation,
};
use topicshift::encoder::{EncoderConfig, TokenizeMode, Vocab};
use topicshift::losses::LossSwitches;
use topicshift::trainer::checkpoint::{sibling, Manifest};
use topicshift::trainer::eval::{topic_count_csv, turn_length_csv, EvalResult};
use topicshift::trainer::verify::{
    gradcheck_objective, gradcheck_stage, GRADCHECK_EPS, GRADCHECK_STAGE_TOL, GRADCHECK_TOL,
};
use topicshift::trainer::{
    evaluate_model, train_student, train_teacher, ModelKind, ModelRef, StepRecord, StudentModel,
    TeacherModel, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "topicshift",
    version,
    about = "Dialogue topic shift detection: corpus tools, teacher/student training, evaluation"
)]
struct Cli {
    /// JSON configuration file; command-line flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Random seed, overriding the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus file against the labeling rules.
    Validate {
        /// Corpus file (JSON lines), overriding the config file.
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
    },
    /// Print corpus statistics as a JSON document.
    Stats {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
    },
    /// Print the classification samples of a corpus, one JSON object per line.
    Extract {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Restrict to one split (train, val or test); default is all.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Generate a synthetic corpus and write it as JSON lines.
    Synth {
        /// Number of training dialogues, overriding the config file.
        #[arg(long, value_name = "N")]
        dialogues: Option<usize>,
        /// Output corpus file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train the response-aware teacher and save its checkpoint.
    TrainTeacher {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Output directory for checkpoint, training log, and resolved config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the context-only student against a frozen teacher checkpoint.
    TrainStudent {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Teacher checkpoint stem (the path passed to train-teacher plus
        /// `/teacher`), overriding the config file's `out`-relative default.
        #[arg(long, value_name = "STEM")]
        teacher: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a corpus.
    Eval {
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Checkpoint stem (e.g. `runs/teacher` or `runs/student`).
        #[arg(long, value_name = "STEM")]
        checkpoint: PathBuf,
        /// Split to score; defaults to test.
        #[arg(long, default_value = "test")]
        split: Split,
        /// Optional directory for eval.json and the CSV breakdown tables.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck,
}

/// Everything a run can configure, as one JSON document. All fields have
/// defaults, so a partial (or absent) file works; the training commands echo
/// the resolved version of this structure next to their artifacts.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    tokenize_mode: TokenizeMode,
    /// Shorthand that overrides `train.switches` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    switches: Option<LossSwitches>,
    encoder: EncoderConfig,
    train: TrainConfig,
    synth: synth::SynthConfig,
}

/// A diagnostic plus the process exit code it deserves: 2 for configuration
/// problems (mirroring usage errors), 1 for everything else.
struct Failure {
    message: String,
    code: u8,
}

impl Failure {
    fn new(message: impl Display) -> Failure {
        Failure {
            message: message.to_string(),
            code: 1,
        }
    }

    fn config(message: impl Display) -> Failure {
        Failure {
            message: message.to_string(),
            code: 2,
        }
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure::new(e)
    }
}

/// Prints one line to stdout, exiting quietly if the reader has gone away
/// (e.g. the output is piped into `head`).
fn print_line(line: impl Display) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{line}").is_err() {
        std::process::exit(0);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("TOPICSHIFT_LOG", "info"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = resolve(load_run_config(cli.config.as_deref())?, cli.seed);
    match cli.command {
        Command::Validate { corpus } => cmd_validate(&config, corpus),
        Command::Stats { corpus } => cmd_stats(&config, corpus),
        Command::Extract { corpus, split } => cmd_extract(&config, corpus, split),
        Command::Synth { dialogues, out } => cmd_synth(config, dialogues, out),
        Command::TrainTeacher { corpus, out } => cmd_train_teacher(config, corpus, out),
        Command::TrainStudent {
            corpus,
            out,
            teacher,
        } => cmd_train_student(config, corpus, out, teacher),
        Command::Eval {
            corpus,
            checkpoint,
            split,
            out,
        } => cmd_eval(&config, corpus, &checkpoint, split, out),
        Command::Gradcheck => cmd_gradcheck(&config),
    }
}

// ── Configuration plumbing ──────────────────────────────────────────────────

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    // serde_json's message already names the line, column, and any unknown
    // field, so the path prefix is all the context missing.
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Applies the precedence rules that cut across fields: the `--seed` flag
/// beats the file's `seed`, which beats `train.seed`; a top-level `switches`
/// shorthand replaces `train.switches`.
fn resolve(mut config: RunConfig, seed_flag: Option<u64>) -> RunConfig {
    if let Some(switches) = config.switches.take() {
        config.train.switches = switches;
    }
    if let Some(seed) = seed_flag.or(config.seed) {
        config.train.seed = seed;
    }
    config.seed = Some(config.train.seed);
    config
}

fn require_path(
    flag: Option<PathBuf>,
    from_file: Option<&PathBuf>,
    what: &str,
) -> Result<PathBuf, Failure> {
    flag.or_else(|| from_file.cloned()).ok_or_else(|| {
        Failure::config(format!("no {what} given: pass --{what} or set it in --config"))
    })
}

fn load_dialogues(path: &Path) -> Result<Vec<Dialogue>, Failure> {
    load_corpus(path).map_err(Failure::from)
}

// ── Read-only subcommands ───────────────────────────────────────────────────

fn render_violation(v: &Violation) -> String {
    match v.turn {
        Some(turn) => format!("{} turn {}: {}", v.dialogue_id, turn, v.message),
        None => format!("{}: {}", v.dialogue_id, v.message),
    }
}

fn cmd_validate(config: &RunConfig, corpus: Option<PathBuf>) -> Result<(), Failure> {
    let path = require_path(corpus, config.corpus.as_ref(), "corpus")?;
    let dialogues = load_dialogues(&path)?;
    let report = validate(&dialogues);
    for violation in &report.violations {
        print_line(render_violation(violation));
    }
    print_line(format_args!("{} violations", report.violations.len()));
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::new(format!(
            "{}: {} violations",
            path.display(),
            report.violations.len()
        )))
    }
}

fn cmd_stats(config: &RunConfig, corpus: Option<PathBuf>) -> Result<(), Failure> {
    let path = require_path(corpus, config.corpus.as_ref(), "corpus")?;
    let dialogues = load_dialogues(&path)?;
    let stats = stats(&dialogues);
    print_line(serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_extract(
    config: &RunConfig,
    corpus: Option<PathBuf>,
    split: Option<Split>,
) -> Result<(), Failure> {
    let path = require_path(corpus, config.corpus.as_ref(), "corpus")?;
    let dialogues = load_dialogues(&path)?;
    let samples = extract_pairs(&dialogues, split);
    for sample in &samples {
        print_line(serde_json::to_string(sample)?);
    }
    log::info!("extracted {} samples from {}", samples.len(), path.display());
    Ok(())
}

// ── Generation and training ─────────────────────────────────────────────────

fn cmd_synth(
    config: RunConfig,
    dialogues: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let out = require_path(out, config.out.as_ref(), "out")?;
    let mut synth_config = config.synth;
    if let Some(n) = dialogues {
        synth_config.train = n;
    }
    let seed = config.train.seed;
    let generated = synth::generate(&synth_config, seed)?;
    write_corpus(&out, &generated)?;
    print_line(format_args!(
        "wrote {} dialogues to {}",
        generated.len(),
        out.display()
    ));
    Ok(())
}

/// Splits a clean corpus into train/val sample sets, building the vocabulary
/// from the training split's utterances.
fn prepare_training(
    path: &Path,
    mode: TokenizeMode,
) -> Result<(Vec<Sample>, Vec<Sample>, Vocab), Failure> {
    let dialogues = load_dialogues(path)?;
    let report = validate(&dialogues);
    if !report.is_clean() {
        for violation in report.violations.iter().take(5) {
            log::error!("{}", render_violation(violation));
        }
        return Err(Failure::new(format!(
            "{}: corpus has {} violations; run `validate` for the full list",
            path.display(),
            report.violations.len()
        )));
    }
    let texts: Vec<String> = dialogues
        .iter()
        .filter(|d| d.split == Split::Train)
        .flat_map(|d| d.turns.iter().map(|t| t.text.clone()))
        .collect();
    let vocab = Vocab::build(&texts, mode)?;
    let train = extract_pairs(&dialogues, Some(Split::Train));
    let val = extract_pairs(&dialogues, Some(Split::Val));
    log::info!(
        "{}: {} train samples, {} val samples, vocab {}",
        path.display(),
        train.len(),
        val.len(),
        vocab.size()
    );
    Ok((train, val, vocab))
}

fn write_train_log(path: &Path, log: &[StepRecord]) -> Result<(), Failure> {
    let mut lines = String::new();
    for record in log {
        lines.push_str(&serde_json::to_string(record)?);
        lines.push('\n');
    }
    fs::write(path, lines).map_err(|e| Failure::new(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Echoes the fully resolved configuration next to a stage's artifacts.
fn write_config_echo(config: &RunConfig, stem: &Path) -> Result<(), Failure> {
    let path = sibling(stem, "config.json");
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Failure::new(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn cmd_train_teacher(
    config: RunConfig,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let corpus_path = require_path(corpus, config.corpus.as_ref(), "corpus")?;
    let out_dir = require_path(out, config.out.as_ref(), "out")?;
    fs::create_dir_all(&out_dir).map_err(|e| Failure::new(format!("{}: {e}", out_dir.display())))?;
    let (train, val, vocab) = prepare_training(&corpus_path, config.tokenize_mode)?;

    let trained = train_teacher(
        &train,
        &val,
        vocab,
        config.tokenize_mode,
        &config.encoder,
        &config.train,
    )?;

    let stem = out_dir.join("teacher");
    trained.model.save(&stem, &config.train)?;
    write_train_log(&sibling(&stem, "log.jsonl"), &trained.log)?;
    let echo = RunConfig {
        corpus: Some(corpus_path),
        out: Some(out_dir),
        ..config
    };
    write_config_echo(&echo, &stem)?;
    report_training("teacher", &stem, &trained.log, trained.best_val_f1, trained.best_epoch);
    Ok(())
}

fn cmd_train_student(
    config: RunConfig,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    teacher: Option<PathBuf>,
) -> Result<(), Failure> {
    let corpus_path = require_path(corpus, config.corpus.as_ref(), "corpus")?;
    let out_dir = require_path(out, config.out.as_ref(), "out")?;
    fs::create_dir_all(&out_dir).map_err(|e| Failure::new(format!("{}: {e}", out_dir.display())))?;
    let teacher_stem = teacher.unwrap_or_else(|| out_dir.join("teacher"));
    let (teacher_model, _teacher_train) = TeacherModel::load(&teacher_stem, false)?;

    // The student reads the teacher's corpus view: same tokenizer mode, same
    // vocabulary (carried inside the checkpoint), same encoder geometry.
    let dialogues = load_dialogues(&corpus_path)?;
    let report = validate(&dialogues);
    if !report.is_clean() {
        return Err(Failure::new(format!(
            "{}: corpus has {} violations; run `validate` for the full list",
            corpus_path.display(),
            report.violations.len()
        )));
    }
    let train = extract_pairs(&dialogues, Some(Split::Train));
    let val = extract_pairs(&dialogues, Some(Split::Val));
    log::info!(
        "{}: {} train samples, {} val samples, teacher {}",
        corpus_path.display(),
        train.len(),
        val.len(),
        teacher_stem.display()
    );

    let trained = train_student(&train, &val, &teacher_model, &config.train)?;

    let stem = out_dir.join("student");
    trained.model.save(&stem, &config.train)?;
    write_train_log(&sibling(&stem, "log.jsonl"), &trained.log)?;
    let echo = RunConfig {
        corpus: Some(corpus_path),
        out: Some(out_dir),
        ..config
    };
    write_config_echo(&echo, &stem)?;
    report_training("student", &stem, &trained.log, trained.best_val_f1, trained.best_epoch);
    Ok(())
}

fn report_training(
    kind: &str,
    stem: &Path,
    log: &[StepRecord],
    best_val_f1: Option<f64>,
    best_epoch: Option<usize>,
) {
    let final_total = log.last().map(|r| r.losses.total);
    match (best_val_f1, best_epoch, final_total) {
        (Some(f1), Some(epoch), Some(total)) => print_line(format_args!(
            "{kind}: {} steps, final total {total:.4}, best val f1 {f1:.4} (epoch {epoch}), saved to {}",
            log.len(),
            stem.display()
        )),
        (_, _, total) => print_line(format_args!(
            "{kind}: {} steps, final total {}, saved to {}",
            log.len(),
            total.map_or_else(|| "n/a".to_string(), |t| format!("{t:.4}")),
            stem.display()
        )),
    }
}

// ── Evaluation ──────────────────────────────────────────────────────────────

fn read_manifest(stem: &Path) -> Result<Manifest, Failure> {
    let path = sibling(stem, "json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::new(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(format!("{}: {e}", path.display())))
}

fn cmd_eval(
    config: &RunConfig,
    corpus: Option<PathBuf>,
    checkpoint: &Path,
    split: Split,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let corpus_path = require_path(corpus, config.corpus.as_ref(), "corpus")?;
    let dialogues = load_dialogues(&corpus_path)?;
    let samples = extract_pairs(&dialogues, Some(split));
    let manifest = read_manifest(checkpoint)?;
    // Score with the sequence budget the model was trained with.
    let max_seq_len = manifest.train.max_seq_len;
    let result: EvalResult = match manifest.kind {
        ModelKind::Teacher => {
            let (model, _) = TeacherModel::load(checkpoint, false)?;
            evaluate_model(ModelRef::Teacher(&model), &samples, max_seq_len)?
        }
        ModelKind::Student => {
            let (model, _) = StudentModel::load(checkpoint, false)?;
            evaluate_model(ModelRef::Student(&model), &samples, max_seq_len)?
        }
    };
    let document = serde_json::to_string_pretty(&result)?;
    print_line(&document);
    if let Some(out_dir) = out {
        fs::create_dir_all(&out_dir)
            .map_err(|e| Failure::new(format!("{}: {e}", out_dir.display())))?;
        fs::write(out_dir.join("eval.json"), format!("{document}\n"))
            .map_err(|e| Failure::new(format!("{}: {e}", out_dir.display())))?;
        fs::write(out_dir.join("by_topic_count.csv"), topic_count_csv(&result))
            .map_err(|e| Failure::new(format!("{}: {e}", out_dir.display())))?;
        fs::write(out_dir.join("by_turn_length.csv"), turn_length_csv(&result))
            .map_err(|e| Failure::new(format!("{}: {e}", out_dir.display())))?;
        log::info!("wrote eval.json and CSV tables to {}", out_dir.display());
    }
    Ok(())
}

// ── Gradient verification ───────────────────────────────────────────────────

fn cmd_gradcheck(config: &RunConfig) -> Result<(), Failure> {
    const SEEDS: u64 = 5;
    let base = config.train.seed;
    let mut all_passed = true;
    for kind in [ModelKind::Teacher, ModelKind::Student] {
        let mut worst: f64 = 0.0;
        for seed in base..base + SEEDS {
            let report = gradcheck_objective(kind, seed, GRADCHECK_EPS, GRADCHECK_TOL)?;
            worst = worst.max(report.max_relative_error);
        }
        let passed = worst <= GRADCHECK_TOL;
        all_passed &= passed;
        print_line(format_args!(
            "{kind} objective ({SEEDS} seeds): max relative error {worst:.3e}, tolerance {GRADCHECK_TOL:.1e} -> {}",
            if passed { "PASS" } else { "FAIL" }
        ));
    }
    for kind in [ModelKind::Teacher, ModelKind::Student] {
        let report = gradcheck_stage(kind, base, GRADCHECK_EPS, GRADCHECK_STAGE_TOL)?;
        all_passed &= report.passed;
        print_line(format_args!(
            "{kind} through encoder: max relative error {:.3e}, tolerance {GRADCHECK_STAGE_TOL:.1e} -> {}",
            report.max_relative_error,
            if report.passed { "PASS" } else { "FAIL" }
        ));
    }
    print_line(if all_passed { "PASS" } else { "FAIL" });
    if all_passed {
        Ok(())
    } else {
        Err(Failure::new("gradient check failed"))
    }
}
