//! Operator commands: simulate, train, decode and eval.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::decode::{attribute, beam_search, read_dump, write_dump, AssignMode, BeamConfig, DumpRecord};
use crate::error::{exit, Error, Result};
use crate::metrics::{score_mixture, MixtureScore, ScoreReport, TranscriptUtterance};
use crate::model::{Checkpoint, CheckpointMeta, ModelConfig, ModelParams};
use crate::simkit::{generate_dataset, load_split, sub_seed, Mixture, SimConfig, SplitConfig};
use crate::sot::read_references;
use crate::train::{evaluate_loss, train_loop, Adam, Example, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;
/// Worker-thread count for train, decode and eval.
pub const THREADS_ENV: &str = "SASR_THREADS";
pub const TRAIN_LOG: &str = "train.log";
/// Holds the file name of the checkpoint with the lowest dev loss.
pub const BEST_MARKER: &str = "BEST";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub assign: AssignMode,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub splits: Vec<SplitConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub beam: BeamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root written by `simulate`; relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
    pub train_split: String,
    pub dev_split: Option<String>,
    pub decode_split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { dataset: None, train_split: "train".into(), dev_split: None, decode_split: "test".into() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(d) = &cfg.data.dataset {
            if d.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.data.dataset = Some(base.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        self.train.validate().map_err(Error::Config)?;
        self.sim.validate()?;
        self.model.validate()?;
        if self.beam.width == 0 {
            return Err(Error::Config("beam width must be >= 1".into()));
        }
        Ok(())
    }

    fn dataset(&self) -> Result<&Path> {
        self.data.dataset.as_deref().ok_or_else(|| Error::Config("data.dataset is not set".into()))
    }

    pub fn split_dir(&self, split: &str) -> Result<PathBuf> {
        let dir = self.dataset()?.join(split);
        if !dir.is_dir() {
            return Err(Error::Data(format!("split directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }
}

/// Thread count from the environment, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(Error::Data(format!("parent directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Generates every configured split under `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.splits.is_empty() {
        return Err(Error::Config("no splits configured".into()));
    }
    require_parent(out)?;
    let ds = generate_dataset(&cfg.sim, &cfg.splits, cfg.seed)?;
    crate::simkit::write_dataset(&ds, out)?;
    for (name, m) in &ds.splits {
        info!("{name}: {} mixtures", m.len());
    }
    Ok(())
}

fn check_compatible(model: &ModelConfig, mixtures: &[Mixture], what: &str) -> Result<()> {
    for m in mixtures {
        if m.features.dim() != model.feature_dim {
            return Err(Error::Data(format!(
                "{what} {}: feature dim {} but model expects {}",
                m.id,
                m.features.dim(),
                model.feature_dim
            )));
        }
        if let Some(&t) = m.target.tokens.iter().find(|&&t| t >= model.vocab_size) {
            return Err(Error::Data(format!("{what} {}: token {t} outside vocabulary {}", m.id, model.vocab_size)));
        }
    }
    Ok(())
}

pub fn checkpoint_name(step: u64, dev_loss: Option<f64>) -> String {
    match dev_loss {
        Some(d) => format!("ckpt-{step:06}-dev{d:.6}.ckpt"),
        None => format!("ckpt-{step:06}-devnone.ckpt"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Checkpoint files written by this run, in order.
    pub checkpoints: Vec<PathBuf>,
    pub best: Option<PathBuf>,
    pub final_step: u64,
}

struct CheckpointWriter<'a> {
    dir: &'a Path,
    dev: Option<Vec<Example>>,
    gamma: f64,
    seed: u64,
    best: Option<(f64, String)>,
    written: Vec<PathBuf>,
}

impl CheckpointWriter<'_> {
    fn read_best(dir: &Path) -> Option<(f64, String)> {
        let name = fs::read_to_string(dir.join(BEST_MARKER)).ok()?;
        let name = name.trim().to_owned();
        let ck = Checkpoint::load(&dir.join(&name)).ok()?;
        Some((ck.meta.dev_loss?, name))
    }

    fn save(&mut self, params: &ModelParams, adam: &Adam, step: u64) -> Result<()> {
        let dev_loss = match &self.dev {
            Some(d) => Some(evaluate_loss(params, d, self.gamma)?),
            None => None,
        };
        let name = checkpoint_name(step, dev_loss);
        let meta = CheckpointMeta { step, dev_loss, seed: self.seed, optimizer_steps: adam.steps };
        let mut ck = Checkpoint::new(params.clone(), meta);
        ck.state = adam.state_tensors(params);
        let path = self.dir.join(&name);
        ck.save(&path)?;
        info!("saved {}", path.display());
        if let Some(d) = dev_loss {
            if self.best.as_ref().is_none_or(|(b, _)| d < *b) {
                fs::write(self.dir.join(BEST_MARKER), format!("{name}\n")).map_err(|e| Error::io(self.dir, e))?;
                self.best = Some((d, name));
            }
        }
        self.written.push(path);
        Ok(())
    }
}

/// Trains from scratch, or from `resume`, writing checkpoints and one log line per step into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>, threads: usize) -> Result<TrainSummary> {
    let train_dir = cfg.split_dir(&cfg.data.train_split)?;
    let dev_dir = cfg.data.dev_split.as_deref().map(|s| cfg.split_dir(s)).transpose()?;
    require_parent(out)?;
    let mixtures = load_split(&train_dir)?;
    if mixtures.is_empty() {
        return Err(Error::Data(format!("training split {} is empty", train_dir.display())));
    }
    check_compatible(&cfg.model, &mixtures, "training mixture")?;
    let data: Vec<Example> = mixtures.iter().map(Mixture::example).collect();
    drop(mixtures);
    let dev = match dev_dir {
        Some(d) => {
            let m = load_split(&d)?;
            check_compatible(&cfg.model, &m, "dev mixture")?;
            (!m.is_empty()).then(|| m.iter().map(Mixture::example).collect())
        }
        None => None,
    };

    let (mut params, mut adam, start) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.params.config() != &cfg.model {
                return Err(Error::Config(format!("{} was trained with a different model config", p.display())));
            }
            if ck.meta.seed != cfg.seed {
                warn!("resuming with seed {} from a checkpoint trained with seed {}", cfg.seed, ck.meta.seed);
            }
            let adam = Adam::from_state(&ck.params, ck.meta.optimizer_steps, &ck.state)?;
            (ck.params, adam, ck.meta.step)
        }
        None => {
            let params = ModelParams::init(&cfg.model, sub_seed(cfg.seed, &[1]))?;
            let adam = Adam::new(&params);
            (params, adam, 0)
        }
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(TRAIN_LOG);
    let log_file = if resume.is_some() {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        fs::File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let best = if resume.is_some() { CheckpointWriter::read_best(out) } else { None };
    let mut writer =
        CheckpointWriter { dir: out, dev, gamma: cfg.train.gamma, seed: cfg.seed, best, written: Vec::new() };
    if resume.is_none() {
        writer.save(&params, &adam, 0)?;
    }
    let steps = cfg.train.steps;
    let every = cfg.train.checkpoint_every.max(1);
    let mut last = start;
    let result = train_loop(
        &mut params,
        &mut adam,
        &data,
        &cfg.train,
        sub_seed(cfg.seed, &[2]),
        start,
        threads,
        Some(&mut log),
        |r, p, a| {
            let done = r.step + 1;
            last = done;
            if done % every == 0 || done == steps {
                writer.save(p, a, done)?;
            }
            Ok::<(), Error>(())
        },
    );
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    result?;
    Ok(TrainSummary {
        checkpoints: writer.written,
        best: writer.best.map(|(_, n)| out.join(n)),
        final_step: last.max(start),
    })
}

fn decode_mixture(params: &ModelParams, m: &Mixture, beam: &BeamConfig, mode: AssignMode) -> Result<DumpRecord> {
    let hyp = beam_search(params, &m.features, &m.inventory, beam)?;
    let utts = attribute(&hyp, &m.inventory, mode)?;
    Ok(DumpRecord::new(m.id.clone(), &hyp, &utts))
}

/// Applies `f` to every item on `threads` workers, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Decodes every mixture of `split_dir` into a JSONL hypothesis dump at `out`.
pub fn cmd_decode(cfg: &RunConfig, checkpoint: &Path, split_dir: &Path, out: &Path, threads: usize) -> Result<usize> {
    require_parent(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let mixtures = load_split(split_dir)?;
    check_compatible(ck.params.config(), &mixtures, "mixture")?;
    let records = par_map(&mixtures, threads, |m| decode_mixture(&ck.params, m, &cfg.beam, cfg.assign))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut w = create_file(out)?;
    write_dump(&mut w, &records).map_err(|e| Error::io(out, e))?;
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureResult {
    pub mixture: String,
    #[serde(flatten)]
    pub score: MixtureScore,
}

/// Machine-readable evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecords {
    pub report: ScoreReport,
    /// In reference order.
    pub mixtures: Vec<MixtureResult>,
}

/// Scores a hypothesis dump against a reference file.
pub fn evaluate(dump: &[DumpRecord], refs_text: &str) -> Result<EvalRecords> {
    let refs = read_references(refs_text.as_bytes())?;
    let mut order: Vec<String> = Vec::new();
    let mut by_mix: BTreeMap<String, Vec<TranscriptUtterance>> = BTreeMap::new();
    for r in refs {
        let e = by_mix.entry(r.mixture.clone()).or_insert_with(|| {
            order.push(r.mixture.clone());
            Vec::new()
        });
        e.push(TranscriptUtterance::new(r.utterance.speaker, r.utterance.tokens));
    }
    let mut hyps: HashMap<&str, &DumpRecord> = HashMap::new();
    for d in dump {
        if !by_mix.contains_key(&d.mixture) {
            return Err(Error::Data(format!("hypothesis for unknown mixture {}", d.mixture)));
        }
        if hyps.insert(&d.mixture, d).is_some() {
            return Err(Error::Data(format!("duplicate hypothesis for mixture {}", d.mixture)));
        }
    }
    let mut mixtures = Vec::with_capacity(order.len());
    for id in order {
        let h = hyps.get(id.as_str()).ok_or_else(|| Error::Data(format!("no hypothesis for mixture {id}")))?;
        let hyp: Vec<TranscriptUtterance> =
            h.utterances.iter().map(|u| TranscriptUtterance::new(u.speaker.clone(), u.tokens.clone())).collect();
        let score = score_mixture(&hyp, &by_mix[&id]);
        mixtures.push(MixtureResult { mixture: id, score });
    }
    let scores: Vec<MixtureScore> = mixtures.iter().map(|m| m.score).collect();
    Ok(EvalRecords { report: ScoreReport::from_scores(&scores)?, mixtures })
}

/// Writes the table and JSON report into `out` and returns the records.
pub fn cmd_eval(hyp: &Path, refs: &Path, out: &Path) -> Result<EvalRecords> {
    let f = fs::File::open(hyp).map_err(|e| Error::io(hyp, e))?;
    let dump = read_dump(BufReader::new(f))?;
    let refs_text = fs::read_to_string(refs).map_err(|e| Error::io(refs, e))?;
    let records = evaluate(&dump, &refs_text)?;
    require_parent(out)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = out.join(REPORT_TABLE);
    fs::write(&table, records.report.table()).map_err(|e| Error::io(&table, e))?;
    let json = out.join(REPORT_JSON);
    let mut text = serde_json::to_string_pretty(&records).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(records)
}

#[derive(Debug, Parser)]
#[command(name = "sasr", version, about = "Speaker-attributed multi-speaker recognition on synthetic mixtures")]
pub struct Cli {
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured splits.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the configured dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for checkpoints and the training log.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Beam-search decode a split into a hypothesis dump.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory; defaults to the configured decode split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Hypothesis dump to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a hypothesis dump.
    Eval {
        /// Used to locate the default reference file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        hyp: PathBuf,
        /// Reference file; defaults to refs.txt of the configured decode split.
        #[arg(long)]
        refs: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&load_config(&config, cli.seed)?, &out),
        Command::Train { config, out, checkpoint } => {
            let cfg = load_config(&config, cli.seed)?;
            let s = cmd_train(&cfg, &out, checkpoint.as_deref(), threads)?;
            if let Some(b) = s.best {
                info!("best checkpoint {}", b.display());
            }
            Ok(())
        }
        Command::Decode { config, checkpoint, dataset, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let split = match dataset {
                Some(d) => d,
                None => cfg.split_dir(&cfg.data.decode_split)?,
            };
            let n = cmd_decode(&cfg, &checkpoint, &split, &out, threads)?;
            info!("decoded {n} mixtures");
            Ok(())
        }
        Command::Eval { config, hyp, refs, out } => {
            let refs = match (refs, config) {
                (Some(r), _) => r,
                (None, Some(c)) => {
                    let cfg = load_config(&c, cli.seed)?;
                    cfg.split_dir(&cfg.data.decode_split)?.join("refs.txt")
                }
                (None, None) => return Err(Error::Usage("eval needs --refs or --config".into())),
            };
            let r = cmd_eval(&hyp, &refs, &out)?;
            print!("{}", r.report.table());
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml("version = 1\nseed = 4\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.data.train_split, "train");
    }

    #[test]
    fn config_errors() {
        assert!(matches!(RunConfig::from_toml("version = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("version = 2\nseed = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("version = 1\nseed = 1\nbogus = 3\n"), Err(Error::Config(_))));
        let bad_gamma = "version = 1\nseed = 1\n[train]\ngamma = -0.5\n";
        assert!(matches!(RunConfig::from_toml(bad_gamma), Err(Error::Config(_))));
        let unknown_nested = "version = 1\nseed = 1\n[model]\nhidden = 3\n";
        assert!(matches!(RunConfig::from_toml(unknown_nested), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::from_toml("version = 1\nseed = 9\n").unwrap();
        cfg.train.clip_norm = Some(5.0);
        cfg.data.dataset = Some("data".into());
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn checkpoint_names_embed_step_and_dev_loss() {
        assert_eq!(checkpoint_name(12, Some(1.5)), "ckpt-000012-dev1.500000.ckpt");
        assert_eq!(checkpoint_name(0, None), "ckpt-000000-devnone.ckpt");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with_args(["sasr", "frobnicate"]), exit::USAGE);
        assert_eq!(main_with_args(["sasr", "train"]), exit::USAGE);
        assert_eq!(main_with_args(["sasr", "eval", "--hyp", "h", "--out", "o"]), exit::USAGE);
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<usize> = (0..17).collect();
        assert_eq!(par_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
