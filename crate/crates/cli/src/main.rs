//! `dst`: train, evaluate and inspect belief trackers.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 gradient check failure.
//! JSON goes to stdout, diagnostics to stderr.

mod track;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dst_core::decoder::CandidateTable;
use dst_core::embeddings::DEFAULT_OOV_SEED;
use dst_core::eval::{compare_mechanisms, Splits};
use dst_core::synth::{generate_dialogues, vocabulary, write_random_vectors, Sidecar, SynthDynamics};
use dst_core::training::{enumerate_examples, grad_check, train_with_progress, PreparedCorpus};
use dst_core::{
    evaluate, load_woz, tokenize, write_woz, Dialogue, MechanismKind, Model, Ontology, Tracker, TrainConfig, TurnInput,
    VectorStore,
};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "dst", version, about = "Dialogue state tracking with learned belief updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it as JSON.
    Train(TrainArgs),
    /// Print an evaluation report for a model on a corpus.
    Eval(EvalArgs),
    /// Track utterances read from stdin, one per line.
    Track(TrackArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train and test several mechanisms over several seeds.
    Compare(CompareArgs),
}

/// Training settings; flags override the config file.
#[derive(Args)]
struct Overrides {
    /// Flat JSON file with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mechanism: Option<MechanismKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_reader(open(p)?).with_context(|| format!("invalid config {}", p.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.mechanism {
            c.mechanism = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.dropout_rate {
            c.dropout_rate = v;
        }
        if let Some(v) = self.clip_norm {
            c.clip_norm = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Training dialogues (WOZ JSON).
    #[arg(long)]
    train: PathBuf,
    /// Dialogues for model selection; the training set is used when absent.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    ontology: PathBuf,
    /// Word vectors, one `token v1 .. vd` per line.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Epoch log file; stderr when absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    /// Ontology the corpus was labelled with; must match the model's.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Leave per-turn errors out of the report.
    #[arg(long)]
    summary: bool,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ontology: PathBuf,
    /// Corpus output (WOZ JSON).
    #[arg(long)]
    out: PathBuf,
    /// Dynamics and seed used for generation.
    #[arg(long)]
    sidecar: PathBuf,
    /// JSON dynamics; defaults apply to missing fields.
    #[arg(long)]
    dynamics: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    dialogues: usize,
    #[arg(long, default_value_t = 6)]
    turns: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write random unit vectors for the corpus vocabulary.
    #[arg(long)]
    vectors_out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    /// Check this model instead of a fresh one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "constrained")]
    mechanism: MechanismKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Examples taken from the start of the corpus.
    #[arg(long, default_value_t = 20)]
    max_examples: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "rule,interp,one_step,constrained")]
    mechanisms: Vec<MechanismKind>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Plain-text table instead of JSON.
    #[arg(long)]
    table: bool,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_ontology(path: &Path) -> Result<Ontology> {
    Ontology::load(open(path)?).with_context(|| format!("invalid ontology {}", path.display()))
}

fn load_vectors(path: &Path, oov_seed: u64) -> Result<VectorStore> {
    VectorStore::load(open(path)?, None, oov_seed).with_context(|| format!("invalid vectors {}", path.display()))
}

fn load_corpus(path: &Path, ontology: &Ontology) -> Result<Vec<Dialogue>> {
    load_woz(open(path)?, ontology).with_context(|| format!("invalid corpus {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(open(path)?).with_context(|| format!("invalid model {}", path.display()))
}

/// Loads vectors for `model`, warning when they differ from the training vectors.
fn vectors_for(model: &Model, path: &Path) -> Result<VectorStore> {
    let store = load_vectors(path, model.oov_seed)?;
    if !model.check_store(&store)? {
        eprintln!(
            "warning: {} differ from the vectors the model was trained with",
            path.display()
        );
    }
    Ok(store)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<ExitCode> {
    let config = a.overrides.resolve()?;
    let ontology = load_ontology(&a.ontology)?;
    let store = load_vectors(&a.vectors, DEFAULT_OOV_SEED)?;
    let train = load_corpus(&a.train, &ontology)?;
    let validation = match &a.validation {
        Some(p) => load_corpus(p, &ontology)?,
        None => Vec::new(),
    };
    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stderr()),
    };
    let mut log_err = None;
    let outcome = train_with_progress(&train, &validation, &ontology, &store, &config, |e| {
        if let Err(err) = writeln!(log, "{}", e.to_line()) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = log_err {
        return Err(err).context("cannot write epoch log");
    }
    log.flush()?;
    let mut out = create(&a.out)?;
    outcome.model.save(&mut out)?;
    out.flush()?;
    eprintln!(
        "best epoch {} of {}; model written to {}",
        outcome.best_epoch,
        config.epochs,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: &EvalArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    if let Some(p) = &a.ontology {
        model.check_ontology(&load_ontology(p)?)?;
    }
    let store = vectors_for(&model, &a.vectors)?;
    let dialogues = load_corpus(&a.corpus, &model.ontology)?;
    let mut report = evaluate(&model, &store, &dialogues, a.workers.max(1))?;
    if a.summary {
        report.errors.clear();
    }
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_track(a: &TrackArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let store = vectors_for(&model, &a.vectors)?;
    let ontology = &model.ontology;
    let tracker = Tracker::new(&model, &store)?;
    let mut session = tracker.session();
    let mut pending = Vec::new();
    let mut turn = 0;
    let mut out = io::stdout().lock();
    for (no, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        let requests = match track::parse_line(&line, ontology) {
            Err(msg) => {
                eprintln!("warning: line {}: {msg}; skipped", no + 1);
                continue;
            }
            Ok(track::Line::System(acts)) => {
                pending.extend(acts);
                continue;
            }
            Ok(track::Line::Reset) => {
                session.reset();
                pending.clear();
                turn = 0;
                Vec::new()
            }
            Ok(track::Line::User(text)) => {
                let input = TurnInput {
                    tokens: tokenize(&text),
                    system_acts: std::mem::take(&mut pending),
                    ..Default::default()
                };
                let dialogue = Dialogue::build("console", ontology, vec![input])?;
                let pred = session.step(&dialogue.turns()[0]);
                turn += 1;
                pred.requests.into_iter().collect()
            }
        };
        let view = track::state_view(ontology, turn, session.beliefs(), session.goals(), requests);
        serde_json::to_writer(&mut out, &view)?;
        writeln!(out)?;
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: &SynthArgs) -> Result<ExitCode> {
    let ontology = load_ontology(&a.ontology)?;
    let mut dynamics: SynthDynamics = match &a.dynamics {
        Some(p) => serde_json::from_reader(open(p)?).with_context(|| format!("invalid dynamics {}", p.display()))?,
        None => SynthDynamics::default(),
    };
    if let Some(s) = a.seed {
        dynamics.seed = s;
    }
    let dialogues = generate_dialogues(&ontology, &dynamics, a.dialogues, a.turns)?;
    let mut out = create(&a.out)?;
    write_woz(&dialogues, &ontology, &mut out)?;
    out.flush()?;
    let sidecar = Sidecar {
        n_dialogues: a.dialogues,
        turns_per_dialogue: a.turns,
        ontology_hash: ontology.content_hash(),
        dynamics: dynamics.clone(),
    };
    let mut side = create(&a.sidecar)?;
    serde_json::to_writer_pretty(&mut side, &sidecar)?;
    writeln!(side)?;
    side.flush()?;
    if let Some(p) = &a.vectors_out {
        if a.dim == 0 {
            bail!("--dim must be at least 1");
        }
        let mut v = create(p)?;
        write_random_vectors(&mut v, &vocabulary(&ontology, &dynamics), a.dim, dynamics.seed)?;
        v.flush()?;
    }
    eprintln!("{} dialogues written to {}", dialogues.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    if a.eps.is_nan() || a.eps <= 0.0 {
        bail!("--eps must be positive");
    }
    let ontology = load_ontology(&a.ontology)?;
    let (model, store) = match &a.model {
        Some(p) => {
            let m = load_model(p)?;
            m.check_ontology(&ontology)?;
            let store = vectors_for(&m, &a.vectors)?;
            (m, store)
        }
        None => {
            let store = load_vectors(&a.vectors, DEFAULT_OOV_SEED)?;
            (Model::init(&ontology, &store, a.mechanism, a.seed), store)
        }
    };
    let dialogues = load_corpus(&a.corpus, &ontology)?;
    let mut examples = enumerate_examples(&dialogues, &ontology);
    examples.truncate(a.max_examples);
    if examples.is_empty() {
        bail!("{} yields no training examples", a.corpus.display());
    }
    let table = CandidateTable::build(&store, &ontology)?;
    let corpus = PreparedCorpus::new(&dialogues, &store);
    let report = grad_check(&model, &table, &corpus, &examples, a.eps)?;
    print_json(&report)?;
    if report.passes(GRADCHECK_TOLERANCE) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "gradient check failed: max relative error {:.3e}",
            report.max_relative_error
        );
        Ok(ExitCode::from(2))
    }
}

fn cmd_compare(a: &CompareArgs) -> Result<ExitCode> {
    let base = a.overrides.resolve()?;
    let ontology = load_ontology(&a.ontology)?;
    let store = load_vectors(&a.vectors, DEFAULT_OOV_SEED)?;
    let train = load_corpus(&a.train, &ontology)?;
    let validation = match &a.validation {
        Some(p) => load_corpus(p, &ontology)?,
        None => Vec::new(),
    };
    let test = load_corpus(&a.test, &ontology)?;
    let splits = Splits {
        train: &train,
        validation: &validation,
        test: &test,
    };
    let rows = compare_mechanisms(&splits, &ontology, &store, &base, &a.mechanisms, &a.seeds)?;
    if a.table {
        println!("{:<12} {:>8} {:>8}", "mechanism", "mean", "std");
        for r in &rows {
            println!("{:<12} {:>8.4} {:>8.4}", r.mechanism.as_str(), r.mean, r.std);
        }
    } else {
        print_json(&rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Track(a) => cmd_track(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
