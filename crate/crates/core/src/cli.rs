//! Command-line surface: `synth`, `train`, `select`, `attack-eval`, `verify`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
//! 3 a verification check failed.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{DataSource, RunConfig, VerifyConfig};
use crate::data::{load_csv, synth_dataset, write_csv};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::seeding::{derive, tag};
use crate::trainer::{self, Checkpoint, EpochTiming, MetricsRecord, TrainOptions};
use crate::verifier::{danskin_suite, lemma_probes, theorem1_check, BoundReport, DanskinReport, LemmaReport, LinearProbe, Part, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY_FAIL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "acs", version, about = "Adversarial coreset selection for robust training")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; relative paths given to commands resolve against it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic dataset as data.csv and eval.csv.
    Synth,
    /// Train and write metrics, checkpoint and final coreset.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// One-shot coreset from a checkpoint.
    Select {
        #[arg(long, default_value = "checkpoint.bin")]
        checkpoint: PathBuf,
        /// Epoch used for seeding; defaults to the epoch after the checkpoint.
        #[arg(long)]
        epoch: Option<usize>,
    },
    /// Clean and robust accuracy of a checkpoint on the evaluation data.
    AttackEval {
        #[arg(long, default_value = "checkpoint.bin")]
        checkpoint: PathBuf,
    },
    /// Numerical checks of the convergence bounds and gradient identities.
    Verify,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn build_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::io(path, e)))?;
        cfg.parse_overrides(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.finish().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    text.push('\n');
    write_file(path, &text)
}

/// Training and evaluation data for a configuration.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synth { kind, n, eval_n, d, classes, margin } => {
            let seed = cfg.data_seed();
            let train = synth_dataset(*kind, *n, *d, *classes, *margin, seed)?;
            let eval = synth_dataset(*kind, *eval_n, *d, *classes, *margin, derive(seed, &[tag::DATA, 1]))?;
            Ok((train, eval))
        }
        DataSource::Csv { path, eval_path } => {
            let train = load_csv(path)?;
            let eval = match eval_path {
                Some(p) => load_csv(p)?,
                None => train.clone(),
            };
            Ok((train, eval))
        }
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    if matches!(cfg.data, DataSource::Csv { .. }) {
        return Err(Error::Config("synth needs a synthetic data.kind".into()));
    }
    ensure_dir(&cfg.out)?;
    let (train, eval) = load_data(cfg)?;
    write_csv(&train, &cfg.out.join("data.csv"))?;
    write_csv(&eval, &cfg.out.join("eval.csv"))?;
    println!("wrote {} training and {} evaluation rows to {}", train.n(), eval.n(), cfg.out.display());
    Ok(())
}

/// Keeps only lines of a JSON-lines file whose `epoch` is at most `last`.
fn truncate_after(path: &Path, last: usize) -> Result<()> {
    let Ok(file) = File::open(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    let mut dropped = false;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let epoch = serde_json::from_str::<serde_json::Value>(&line).ok().and_then(|v| v.get("epoch").and_then(|e| e.as_u64()));
        match epoch {
            Some(e) if e as usize > last => dropped = true,
            _ => {
                kept.push_str(&line);
                kept.push('\n');
            }
        }
    }
    if dropped {
        write_file(path, &kept)?;
    }
    Ok(())
}

fn open_log(path: &Path, append: bool) -> Result<File> {
    let mut o = OpenOptions::new();
    o.create(true);
    if append {
        o.append(true);
    } else {
        o.write(true).truncate(true);
    }
    o.open(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs: usize,
    config_hash: String,
    final_loss: Option<f64>,
    clean_acc: Option<f64>,
    robust_acc: Option<f64>,
    samples_trained: u64,
    selection_samples: u64,
    selections: u64,
    coreset_size: Option<usize>,
    gamma_trace: &'a [crate::verifier::GammaRecord],
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    ensure_dir(&cfg.out)?;
    let (data, eval) = load_data(cfg)?;
    let resume = resume.map(|p| Checkpoint::load(&resolve(&cfg.out, p))).transpose()?;
    if let Some(ck) = &resume {
        ck.check_compatible(&cfg.train, data.d(), data.classes())?;
    }
    write_file(&cfg.out.join("config.txt"), &cfg.to_text())?;
    let metrics_path = cfg.out.join("metrics.jsonl");
    let timing_path = cfg.out.join("timing.jsonl");
    let append = match &resume {
        Some(ck) => {
            truncate_after(&metrics_path, ck.epoch)?;
            truncate_after(&timing_path, ck.epoch)?;
            true
        }
        None => false,
    };
    let mut metrics = open_log(&metrics_path, append)?;
    let mut timing = open_log(&timing_path, append)?;
    let record_time = cfg.record_time;
    let mut sink = |r: &MetricsRecord, t: &EpochTiming| -> Result<()> {
        let mut r = r.clone();
        if !record_time {
            r.epoch_seconds = None;
        }
        writeln!(metrics, "{}", r.to_json()).and_then(|_| metrics.flush()).map_err(|e| Error::io(&metrics_path, e))?;
        let line = serde_json::to_string(t).expect("timing serializes");
        writeln!(timing, "{line}").and_then(|_| timing.flush()).map_err(|e| Error::io(&timing_path, e))?;
        let acc = match (r.clean_acc, r.robust_acc) {
            (Some(c), Some(a)) => format!(" clean {c:.4} robust {a:.4}"),
            _ => String::new(),
        };
        eprintln!("epoch {:>3} [{}] loss {:.5}{acc}", r.epoch, t.plan, r.loss);
        Ok(())
    };
    let opts = TrainOptions { checkpoint: Some(cfg.out.join("checkpoint.bin")), resume, on_epoch: Some(&mut sink) };
    let out = trainer::train_with(&cfg.train, &data, &eval, opts)?;
    if let Some(c) = &out.coreset {
        c.save(&cfg.out.join("coreset.txt"))?;
    }
    let last = out.records.last();
    let summary = TrainSummary {
        epochs: cfg.train.epochs,
        config_hash: format!("{:016x}", cfg.train.hash()),
        final_loss: last.map(|r| r.loss),
        clean_acc: last.and_then(|r| r.clean_acc),
        robust_acc: last.and_then(|r| r.robust_acc),
        samples_trained: out.counters.samples_trained,
        selection_samples: out.counters.selection_samples,
        selections: out.counters.selections,
        coreset_size: out.coreset.as_ref().map(|c| c.len()),
        gamma_trace: &out.gamma_trace,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, path: &Path, data: &Dataset) -> Result<Checkpoint> {
    let ck = Checkpoint::load(&resolve(&cfg.out, path))?;
    ck.check_compatible(&cfg.train, data.d(), data.classes())?;
    Ok(ck)
}

fn cmd_select(cfg: &RunConfig, checkpoint: &Path, epoch: Option<usize>) -> Result<()> {
    ensure_dir(&cfg.out)?;
    let (data, _) = load_data(cfg)?;
    let ck = load_checkpoint(cfg, checkpoint, &data)?;
    let epoch = epoch.unwrap_or(ck.epoch + 1);
    let sel = trainer::select_coreset(&ck.params, &data, &cfg.train, epoch, ck.coreset.as_ref())?;
    let path = cfg.out.join("coreset.txt");
    sel.coreset.save(&path)?;
    println!("selected {} of {} samples (gamma {:e}) -> {}", sel.coreset.len(), data.n(), sel.gamma_after, path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    epoch: usize,
    samples: usize,
    clean_acc: f64,
    robust_acc: f64,
}

fn cmd_attack_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    ensure_dir(&cfg.out)?;
    let (data, eval) = load_data(cfg)?;
    let ck = load_checkpoint(cfg, checkpoint, &data)?;
    let (clean_acc, robust_acc) = trainer::evaluate(&ck.params, &eval, &trainer::eval_attack(&cfg.train))?;
    let report = EvalReport { epoch: ck.epoch, samples: eval.n(), clean_acc, robust_acc };
    write_json(&cfg.out.join("eval.json"), &report)?;
    println!("epoch {} clean {clean_acc} robust {robust_acc}", ck.epoch);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub bounds: Vec<BoundReport>,
    pub fractions: Vec<f64>,
    pub danskin: DanskinReport,
    pub lemma: LemmaReport,
    pub passed: bool,
}

pub const DANSKIN_TOL: f64 = 1e-4;

/// Runs both bound checks for every seed and fraction, the Danskin suite and
/// the lemma probes.
pub fn verify_suite(v: &VerifyConfig, seed: u64) -> Result<VerifyReport> {
    let t = &v.theorem;
    let mut bounds = Vec::new();
    for s in 0..v.seeds {
        let run_seed = seed.wrapping_add(s);
        let convex = LinearProbe::synth(t.n, t.d, t.epsilon, t.norm, 0.0, run_seed);
        let strong = LinearProbe::synth(t.n, t.d, t.epsilon, t.norm, t.mu, run_seed);
        for &fraction in &v.fractions {
            let cfg = crate::verifier::TheoremConfig { fraction, seed: run_seed, ..t.clone() };
            bounds.push(theorem1_check(Part::One, &convex, &cfg)?);
            bounds.push(theorem1_check(Part::Two, &strong, &cfg)?);
        }
    }
    let danskin = danskin_suite(v.danskin_instances, t.d, seed, 1e-5)?;
    let lemma = lemma_probes(v.lemma_seeds, v.lemma_pairs, t.d, t.mu);
    let passed = bounds.iter().all(|b| b.status != Status::Fail) && danskin.max_error < DANSKIN_TOL && lemma.passed();
    Ok(VerifyReport { bounds, fractions: v.fractions.clone(), danskin, lemma, passed })
}

fn cmd_verify(cfg: &RunConfig) -> Result<bool> {
    let report = verify_suite(&cfg.verify, cfg.seed)?;
    for b in &report.bounds {
        let status = match b.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "inconclusive",
        };
        println!(
            "bound part {:?} seed {} fraction {} coreset {:.1}: lhs {:.6e} rhs {:.6e} slack {:.3e} {status}",
            b.part, b.seed, b.fraction, b.mean_coreset_size, b.lhs, b.rhs, b.slack
        );
    }
    let d = &report.danskin;
    println!("danskin: {} instances, max error {:.3e} (step {:e}), {:.3e} at 10x step", d.instances, d.max_error, d.fd_step, d.max_error_coarse);
    let l = &report.lemma;
    println!("lemma probes: {} pairs, {} lipschitz and {} convexity violations", l.pairs, l.lipschitz_violations, l.convexity_violations);
    println!("verify: {}", if report.passed { "PASS" } else { "FAIL" });
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("verify.json"), &report)?;
    Ok(report.passed)
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match build_config(&cli.common) {
        Ok(c) => c,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let result = match &cli.command {
        Command::Synth => cmd_synth(&cfg).map(|_| true),
        Command::Train { resume } => cmd_train(&cfg, resume.as_deref()).map(|_| true),
        Command::Select { checkpoint, epoch } => cmd_select(&cfg, checkpoint, *epoch).map(|_| true),
        Command::AttackEval { checkpoint } => cmd_attack_eval(&cfg, checkpoint).map(|_| true),
        Command::Verify => cmd_verify(&cfg),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFY_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
