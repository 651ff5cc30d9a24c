//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attacks::{AttackConfig, Norm};
use crate::data::SynthKind;
use crate::error::{Error, Result};
use crate::features::ObjectiveKind;
use crate::model::Activation;
use crate::solvers::Method;
use crate::trainer::TrainConfig;
use crate::verifier::TheoremConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth { kind: SynthKind, n: usize, eval_n: usize, d: usize, classes: usize, margin: f64 },
    Csv { path: PathBuf, eval_path: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    /// Template for every bound check; `fraction` and `seed` are set per run.
    pub theorem: TheoremConfig,
    pub fractions: Vec<f64>,
    pub seeds: u64,
    pub danskin_instances: usize,
    pub lemma_seeds: u64,
    pub lemma_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { theorem: TheoremConfig::default(), fractions: vec![0.3, 0.5], seeds: 10, danskin_instances: 50, lemma_seeds: 10, lemma_pairs: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Seed for synthetic data; the run seed when unset.
    pub data_seed: Option<u64>,
    pub data: DataSource,
    pub train: TrainConfig,
    pub verify: VerifyConfig,
    pub out: PathBuf,
    /// Write measured epoch times into the metrics stream.
    pub record_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_seed: None,
            data: DataSource::Synth { kind: SynthKind::GaussianBlobs, n: 2000, eval_n: 1000, d: 20, classes: 4, margin: 4.0 },
            train: TrainConfig::default(),
            verify: VerifyConfig::default(),
            out: PathBuf::from("out"),
            record_time: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn set_attack(a: &mut AttackConfig, key: &str, field: &str, v: &str) -> Result<()> {
    match field {
        "norm" => a.norm = Norm::parse(v).ok_or_else(|| Error::Config(format!("{key}: unknown norm `{v}`")))?,
        "epsilon" => a.epsilon = parse_num(key, v)?,
        "step_size" => a.step_size = parse_num(key, v)?,
        "iterations" => a.iterations = parse_num(key, v)?,
        "restarts" => a.restarts = parse_num(key, v)?,
        "random_init" => a.random_init = parse_bool(key, v)?,
        "clip" => {
            a.clip = if v == "none" {
                None
            } else {
                let (lo, hi) = v.split_once(',').ok_or_else(|| Error::Config(format!("{key}: expected `lo,hi` or none")))?;
                Some((parse_num(key, lo.trim())?, parse_num(key, hi.trim())?))
            }
        }
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

fn write_attack(out: &mut String, prefix: &str, a: &AttackConfig) {
    let clip = match a.clip {
        None => "none".to_string(),
        Some((lo, hi)) => format!("{lo},{hi}"),
    };
    for (k, v) in [
        ("norm", a.norm.name().to_string()),
        ("epsilon", a.epsilon.to_string()),
        ("step_size", a.step_size.to_string()),
        ("iterations", a.iterations.to_string()),
        ("restarts", a.restarts.to_string()),
        ("random_init", a.random_init.to_string()),
        ("clip", clip),
    ] {
        writeln!(out, "{prefix}.{k} = {v}").expect("write to string");
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "output.dir" => self.out = PathBuf::from(v),
            "output.record_time" => self.record_time = parse_bool(key, v)?,
            "data.kind" => {
                self.data = match (v, &self.data) {
                    ("csv", DataSource::Csv { .. }) => return Ok(()),
                    ("csv", _) => DataSource::Csv { path: PathBuf::new(), eval_path: None },
                    (kind, DataSource::Synth { n, eval_n, d, classes, margin, .. }) => DataSource::Synth {
                        kind: SynthKind::parse(kind).ok_or_else(|| Error::Config(format!("{key}: unknown kind `{kind}`")))?,
                        n: *n,
                        eval_n: *eval_n,
                        d: *d,
                        classes: *classes,
                        margin: *margin,
                    },
                    (kind, DataSource::Csv { .. }) => {
                        let RunConfig { data: DataSource::Synth { n, eval_n, d, classes, margin, .. }, .. } = RunConfig::default() else {
                            unreachable!("default data is synthetic")
                        };
                        DataSource::Synth {
                            kind: SynthKind::parse(kind).ok_or_else(|| Error::Config(format!("{key}: unknown kind `{kind}`")))?,
                            n,
                            eval_n,
                            d,
                            classes,
                            margin,
                        }
                    }
                }
            }
            "data.seed" => self.data_seed = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "data.n" | "data.eval_n" | "data.d" | "data.classes" | "data.margin" => {
                let DataSource::Synth { n, eval_n, d, classes, margin, .. } = &mut self.data else {
                    return Err(Error::Config(format!("{key} applies only to synthetic data")));
                };
                match key {
                    "data.n" => *n = parse_num(key, v)?,
                    "data.eval_n" => *eval_n = parse_num(key, v)?,
                    "data.d" => *d = parse_num(key, v)?,
                    "data.classes" => *classes = parse_num(key, v)?,
                    _ => *margin = parse_num(key, v)?,
                }
            }
            "data.path" | "data.eval_path" => {
                let DataSource::Csv { path, eval_path } = &mut self.data else {
                    return Err(Error::Config(format!("{key} applies only to csv data")));
                };
                if key == "data.path" {
                    *path = PathBuf::from(v);
                } else {
                    *eval_path = if v == "none" { None } else { Some(PathBuf::from(v)) };
                }
            }
            "train.epochs" => t.epochs = parse_num(key, v)?,
            "train.warm_start" => t.warm_start = parse_num(key, v)?,
            "train.period" => t.period = parse_num(key, v)?,
            "train.fraction" => t.fraction = parse_num(key, v)?,
            "train.batch_size" => t.batch_size = parse_num(key, v)?,
            "train.selection_batch_size" => t.selection_batch_size = parse_num(key, v)?,
            "train.lr" => t.lr.initial = parse_num(key, v)?,
            "train.lr_decay_epochs" => t.lr.decay_epochs = parse_list(key, v)?,
            "train.lr_decay_factor" => t.lr.factor = parse_num(key, v)?,
            "train.weight_decay" => t.weight_decay = parse_num(key, v)?,
            "train.objective" => {
                let lambda = match t.objective {
                    ObjectiveKind::Trades { lambda } => lambda,
                    _ => 6.0,
                };
                t.objective = match v {
                    "vanilla" => ObjectiveKind::Vanilla,
                    "adversarial" => ObjectiveKind::AdversarialCe,
                    "trades" => ObjectiveKind::Trades { lambda },
                    _ => return Err(Error::Config(format!("{key}: unknown objective `{v}`"))),
                }
            }
            "train.trades_lambda" => {
                let lambda = parse_num(key, v)?;
                match &mut t.objective {
                    ObjectiveKind::Trades { lambda: l } => *l = lambda,
                    _ => return Err(Error::Config(format!("{key} needs train.objective = trades first"))),
                }
            }
            "train.full_batch" => t.full_batch = parse_bool(key, v)?,
            "train.eval_every" => t.eval_every = parse_num(key, v)?,
            "model.hidden" => t.hidden = parse_list(key, v)?,
            "model.activation" => t.activation = Activation::parse(v).ok_or_else(|| Error::Config(format!("{key}: unknown activation `{v}`")))?,
            "attack.selection_iterations" => t.selection_iterations = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "solver.method" => t.solver.method = Method::parse(v).ok_or_else(|| Error::Config(format!("{key}: unknown method `{v}`")))?,
            "solver.omp_lambda" => t.solver.omp_lambda = parse_num(key, v)?,
            "solver.tolerance" => t.solver.tolerance = parse_num(key, v)?,
            "verify.n" => self.verify.theorem.n = parse_num(key, v)?,
            "verify.d" => self.verify.theorem.d = parse_num(key, v)?,
            "verify.epsilon" => self.verify.theorem.epsilon = parse_num(key, v)?,
            "verify.norm" => self.verify.theorem.norm = Norm::parse(v).ok_or_else(|| Error::Config(format!("{key}: unknown norm `{v}`")))?,
            "verify.iterations" => self.verify.theorem.iterations = parse_num(key, v)?,
            "verify.fractions" => self.verify.fractions = v.split(',').map(|p| parse_num(key, p.trim())).collect::<Result<_>>()?,
            "verify.mu" => self.verify.theorem.mu = parse_num(key, v)?,
            "verify.seeds" => self.verify.seeds = parse_num(key, v)?,
            "verify.danskin_instances" => self.verify.danskin_instances = parse_num(key, v)?,
            "verify.lemma_seeds" => self.verify.lemma_seeds = parse_num(key, v)?,
            "verify.lemma_pairs" => self.verify.lemma_pairs = parse_num(key, v)?,
            _ => {
                if let Some(field) = key.strip_prefix("attack.") {
                    set_attack(&mut t.attack, key, field, v)?
                } else if let Some(field) = key.strip_prefix("eval.") {
                    set_attack(&mut t.eval_attack, key, field, v)?
                } else {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults. Comments start with `#`.
    pub fn parse_overrides(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse { line: no + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Parse { line: no + 1, msg },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.parse_overrides(text)?;
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// Propagates the run seed and validates everything, including that
    /// referenced input files exist.
    pub fn finish(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.train.solver.seed = self.seed;
        self.verify.theorem.seed = self.seed;
        self.train.validate()?;
        if self.verify.fractions.is_empty() || self.verify.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("verify.fractions must lie in (0, 1]".into()));
        }
        if let DataSource::Csv { path, eval_path } = &self.data {
            for p in std::iter::once(path).chain(eval_path.iter()) {
                if p.as_os_str().is_empty() {
                    return Err(Error::Config("csv data needs data.path".into()));
                }
                if !p.is_file() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("write to string");
        kv("seed", self.seed.to_string());
        kv("output.dir", self.out.display().to_string());
        kv("output.record_time", self.record_time.to_string());
        match &self.data {
            DataSource::Synth { kind, n, eval_n, d, classes, margin } => {
                kv("data.kind", kind.name().into());
                kv("data.n", n.to_string());
                kv("data.eval_n", eval_n.to_string());
                kv("data.d", d.to_string());
                kv("data.classes", classes.to_string());
                kv("data.margin", margin.to_string());
            }
            DataSource::Csv { path, eval_path } => {
                kv("data.kind", "csv".into());
                kv("data.path", path.display().to_string());
                kv("data.eval_path", eval_path.as_ref().map_or("none".into(), |p| p.display().to_string()));
            }
        }
        kv("data.seed", self.data_seed.map_or("none".into(), |s| s.to_string()));
        kv("train.epochs", t.epochs.to_string());
        kv("train.warm_start", t.warm_start.to_string());
        kv("train.period", t.period.to_string());
        kv("train.fraction", t.fraction.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.selection_batch_size", t.selection_batch_size.to_string());
        kv("train.lr", t.lr.initial.to_string());
        kv("train.lr_decay_epochs", join(&t.lr.decay_epochs));
        kv("train.lr_decay_factor", t.lr.factor.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.objective", t.objective.name().into());
        if let ObjectiveKind::Trades { lambda } = t.objective {
            kv("train.trades_lambda", lambda.to_string());
        }
        kv("train.full_batch", t.full_batch.to_string());
        kv("train.eval_every", t.eval_every.to_string());
        kv("model.hidden", join(&t.hidden));
        kv("model.activation", t.activation.name().into());
        kv("attack.selection_iterations", t.selection_iterations.map_or("none".into(), |i| i.to_string()));
        kv("solver.method", t.solver.method.name().into());
        kv("solver.omp_lambda", t.solver.omp_lambda.to_string());
        kv("solver.tolerance", t.solver.tolerance.to_string());
        let v = &self.verify;
        kv("verify.n", v.theorem.n.to_string());
        kv("verify.d", v.theorem.d.to_string());
        kv("verify.epsilon", v.theorem.epsilon.to_string());
        kv("verify.norm", v.theorem.norm.name().into());
        kv("verify.iterations", v.theorem.iterations.to_string());
        kv("verify.fractions", v.fractions.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","));
        kv("verify.mu", v.theorem.mu.to_string());
        kv("verify.seeds", v.seeds.to_string());
        kv("verify.danskin_instances", v.danskin_instances.to_string());
        kv("verify.lemma_seeds", v.lemma_seeds.to_string());
        kv("verify.lemma_pairs", v.lemma_pairs.to_string());
        write_attack(&mut out, "attack", &t.attack);
        write_attack(&mut out, "eval", &t.eval_attack);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let a = RunConfig::parse("").unwrap();
        let b = RunConfig::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edited_config_round_trips() {
        let text = "
            # a comment
            seed = 42
            data.kind = two-rings
            data.n = 300   # trailing comment
            train.objective = trades
            train.trades_lambda = 0.5
            train.lr_decay_epochs = 10,20
            model.hidden = 16,8
            attack.norm = l2
            attack.clip = 0,1
            eval.iterations = 20
            solver.method = gradmatch-omp
            attack.selection_iterations = 1
        ";
        let a = RunConfig::parse(text).unwrap();
        assert_eq!(a.train.seed, 42);
        assert_eq!(a.train.objective, ObjectiveKind::Trades { lambda: 0.5 });
        assert_eq!(a.train.attack.clip, Some((0.0, 1.0)));
        assert_eq!(a.train.hidden, vec![16, 8]);
        let b = RunConfig::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn rejects_unknown_keys_with_line() {
        match RunConfig::parse("seed = 1\nbogus.key = 3\n") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus.key"));
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("seed 1\n").is_err());
        assert!(RunConfig::parse("train.fraction = 1.5\n").is_err());
    }

    #[test]
    fn missing_csv_is_rejected() {
        assert!(RunConfig::parse("data.kind = csv\ndata.path = /nonexistent/file.csv\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "0,1\n1,2\n").unwrap();
        let cfg = RunConfig::parse(&format!("data.kind = csv\ndata.path = {}\n", p.display())).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
