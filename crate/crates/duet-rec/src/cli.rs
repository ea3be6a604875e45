//! Command-line surface over the pipeline: `synth` → `prepare` → `train` →
//! `evaluate` / `predict` / `sweep`.
//!
//! Every command is deterministic given its inputs and `--seed`; reruns are
//! byte-identical except the timestamp line in `report.json`. Exit codes:
//! 0 success, 1 runtime failure, 2 usage error.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataio::parse::{load_interactions, load_items_jsonl, load_triples};
use crate::dataio::prepared::{prepare, Dataset, PrepareConfig, Stats};
use crate::duet::{
    load_checkpoint, log_to_csv, register, save_checkpoint, train, FusionMode, TrainConfig,
};
use crate::error::{Error, Result};
use crate::evalkit::{report_from_scores, MetricsReport};
use crate::globalmodel::build_urg;
use crate::numkit::ParamStore;
use crate::seeds;
use crate::synth::{self, SynthConfig};

/// The run configuration: one TOML file with `[data]`, `[local]`, `[global]`,
/// `[train]`, and `[eval]` sections. Missing keys take the defaults below, so
/// a partial file is a valid config and the resolved form written next to
/// training outputs is always fully explicit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub local: LocalSection,
    pub global: GlobalSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Description tokens fed to the encoder (L).
    pub desc_len: usize,
    /// Most recent interactions kept per user history.
    pub history_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSection {
    /// Word embedding dim / CNN filter count (d).
    pub dim_word: usize,
    /// CNN window size.
    pub window: usize,
    /// LeakyReLU slope.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalSection {
    /// Entity and relation embedding dim (k).
    pub dim_entity: usize,
    /// Neighbors aggregated per entity during training.
    pub sample_size: usize,
    /// TransR ranking margin γ.
    pub gamma: f64,
    /// Corruptions per true triple in the margin phase.
    pub neg_ratio: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: FusionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// F1 decision threshold.
    pub threshold: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        DataSection {
            desc_len: t.desc_len,
            history_max: t.history_max,
        }
    }
}

impl Default for LocalSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        LocalSection {
            dim_word: t.dim_word,
            window: t.window,
            slope: t.slope,
        }
    }
}

impl Default for GlobalSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        GlobalSection {
            dim_entity: t.dim_entity,
            sample_size: t.sample_size,
            gamma: t.gamma,
            neg_ratio: t.neg_ratio,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            mode: t.mode,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { threshold: 0.5 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.canonical_toml()?).map_err(|e| Error::io(path, e))
    }

    /// The serialization the config hash is computed over. Field order is
    /// fixed by the struct definitions, so equal configs serialize equally.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("unserializable config: {e}")))
    }

    /// FNV-1a digest of the canonical serialization, as 16 hex digits.
    /// Loading a resolved config file reproduces the identical hash.
    pub fn hash(&self) -> Result<String> {
        Ok(format!(
            "{:016x}",
            seeds::fnv1a64(self.canonical_toml()?.as_bytes())
        ))
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            gamma: self.global.gamma,
            neg_ratio: self.global.neg_ratio,
            sample_size: self.global.sample_size,
            seed: self.train.seed,
            dim_word: self.local.dim_word,
            dim_entity: self.global.dim_entity,
            desc_len: self.data.desc_len,
            history_max: self.data.history_max,
            window: self.local.window,
            slope: self.local.slope,
            mode: self.train.mode,
        }
    }

    /// The run config a checkpoint implies: its training config plus default
    /// eval settings. Lets `evaluate` and `predict` work from the checkpoint
    /// sidecar alone.
    pub fn from_train(cfg: &TrainConfig) -> RunConfig {
        RunConfig {
            data: DataSection {
                desc_len: cfg.desc_len,
                history_max: cfg.history_max,
            },
            local: LocalSection {
                dim_word: cfg.dim_word,
                window: cfg.window,
                slope: cfg.slope,
            },
            global: GlobalSection {
                dim_entity: cfg.dim_entity,
                sample_size: cfg.sample_size,
                gamma: cfg.gamma,
                neg_ratio: cfg.neg_ratio,
            },
            train: TrainSection {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                seed: cfg.seed,
                mode: cfg.mode,
            },
            eval: EvalSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_train_config().validate()?;
        let t = self.eval.threshold;
        if !(t.is_finite() && (0.0..=1.0).contains(&t)) {
            return Err(Error::Config(format!(
                "eval.threshold must be in [0,1], got {t}"
            )));
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "duet",
    version,
    about = "Duet recommender pipeline: synthesize, prepare, train, evaluate, predict, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic topic-affinity dataset with known ground truth
    Synth(SynthArgs),
    /// Turn raw feedback, item text, and KG triples into a prepared dataset
    Prepare(PrepareArgs),
    /// Train on a prepared dataset; writes checkpoint, log, resolved config
    Train(TrainArgs),
    /// Score the test split with a checkpoint and write metric reports
    Evaluate(EvaluateArgs),
    /// Rank a user's unseen items by fused click probability
    Predict(PredictArgs),
    /// Re-train across values of one hyperparameter and tabulate metrics
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory for interactions.tsv, items.jsonl, triples.tsv, ground_truth.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().n_users)]
    users: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_items)]
    items: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_topics)]
    topics: usize,
    /// Positive interactions per user
    #[arg(long, default_value_t = SynthConfig::default().interactions_per_user)]
    per_user: usize,
    /// Probability an interaction ignores the user's topic
    #[arg(long, default_value_t = SynthConfig::default().noise_rate)]
    noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// user<TAB>item<TAB>rating[<TAB>timestamp] rows
    #[arg(long)]
    interactions: PathBuf,
    /// JSONL rows of {item_id, title, description}
    #[arg(long)]
    items: PathBuf,
    /// head<TAB>relation<TAB>tail rows
    #[arg(long)]
    triples: PathBuf,
    /// Output directory for the prepared dataset
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = PrepareConfig::default().kcore)]
    kcore: usize,
    /// Minimum rating counted as a positive
    #[arg(long, default_value_t = PrepareConfig::default().threshold)]
    threshold: f64,
    /// Train fraction of the shuffled split
    #[arg(long, default_value_t = PrepareConfig::default().train_fraction)]
    split: f64,
    #[arg(long, default_value_t = PrepareConfig::default().seed)]
    seed: u64,
}

/// Config-file plus flag overrides shared by `train` and `sweep`; flags win
/// over file values, file values over defaults.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Run-config TOML; missing keys take built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Word embedding dim / CNN filter count (d)
    #[arg(long)]
    dim_word: Option<usize>,
    /// Entity embedding dim (k)
    #[arg(long)]
    dim_entity: Option<usize>,
    /// Description tokens fed to the encoder (L)
    #[arg(long)]
    desc_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// duet, local-only, or global-only
    #[arg(long, value_parser = parse_mode)]
    mode: Option<FusionMode>,
}

fn parse_mode(s: &str) -> std::result::Result<FusionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.epochs {
            rc.train.epochs = v;
        }
        if let Some(v) = self.lr {
            rc.train.lr = v;
        }
        if let Some(v) = self.dim_word {
            rc.local.dim_word = v;
        }
        if let Some(v) = self.dim_entity {
            rc.global.dim_entity = v;
        }
        if let Some(v) = self.desc_len {
            rc.data.desc_len = v;
        }
        if let Some(v) = self.seed {
            rc.train.seed = v;
        }
        if let Some(v) = self.mode {
            rc.train.mode = v;
        }
        rc.validate()?;
        Ok(rc)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Prepared dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.bin, training_log.csv, resolved.toml
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Prepared dataset directory
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for report.json and report.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prepared dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Raw user id to recommend for
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SweepParam {
    #[value(name = "desc_len")]
    DescLen,
    #[value(name = "dim_word")]
    DimWord,
    #[value(name = "dim_entity")]
    DimEntity,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Hyperparameter to vary
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values to train at
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Prepared dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Output directory for sweep.csv
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Parse the command line and run it. Clap exits 2 on usage errors itself;
/// runtime failures print to stderr and return 1.
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_users: args.users,
        n_items: args.items,
        n_topics: args.topics,
        interactions_per_user: args.per_user,
        noise_rate: args.noise,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let data = synth::generate(&cfg)?;
    synth::write_dir(&data, &args.out)?;
    println!(
        "synthesized {} interactions over {} users × {} items ({} topics, noise {})",
        data.interactions.len(),
        cfg.n_users,
        cfg.n_items,
        cfg.n_topics,
        cfg.noise_rate
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    let interactions = load_interactions(&args.interactions)?;
    let items = load_items_jsonl(&args.items)?;
    let triples = load_triples(&args.triples)?;
    let cfg = PrepareConfig {
        kcore: args.kcore,
        threshold: args.threshold,
        train_fraction: args.split,
        seed: args.seed,
        ..PrepareConfig::default()
    };
    let prepared = prepare(&interactions, &items, &triples, &cfg)?;
    prepared.write_dir(&args.out)?;
    let s = &prepared.stats;
    println!(
        "prepared {} users × {} items | train {} test {} | vocab {} | {} entities, {} relations, {} triples",
        s.feedback.users,
        s.feedback.items,
        s.split.train_examples,
        s.split.test_examples,
        s.vocab_size,
        s.kg.entities,
        s.kg.relations,
        s.kg.triples
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_stats(data_dir: &Path) -> Result<Stats> {
    let path = data_dir.join("stats.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn train_once(data_dir: &Path, rc: &RunConfig) -> Result<(crate::duet::DuetModel, MetricsReport)> {
    let tc = rc.to_train_config();
    let dataset = Dataset::load_dir(data_dir, rc.data.desc_len, rc.data.history_max)?;
    let urg = build_urg(&dataset, &dataset.triples)?;
    let model = train(&dataset, &urg, &tc)?;
    let predictor = model.predictor(&dataset, &urg)?;
    let scored = predictor.score_examples(&dataset.test)?;
    let report = report_from_scores(&scored, rc.eval.threshold, tc.seed, &rc.hash()?)?;
    Ok((model, report))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let rc = args.config.resolve()?;
    let tc = rc.to_train_config();
    let dataset = Dataset::load_dir(&args.data, rc.data.desc_len, rc.data.history_max)?;
    let urg = build_urg(&dataset, &dataset.triples)?;
    let stats = load_stats(&args.data)?;
    let model = train(&dataset, &urg, &tc)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    rc.save(&args.out.join("resolved.toml"))?;
    save_checkpoint(&model, &stats, &args.out.join("checkpoint.bin"))?;
    let log_path = args.out.join("training_log.csv");
    fs::write(&log_path, log_to_csv(&model.log)).map_err(|e| Error::io(&log_path, e))?;
    println!("config_hash {}", rc.hash()?);
    if let Some(last) = model.log.last() {
        println!(
            "epoch {} | kg_loss {:.6} | ce_loss {:.6} | train_auc {:.6}",
            last.epoch, last.kg_loss, last.ce_loss, last.train_auc
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (model, _stats) = load_checkpoint(&args.checkpoint)?;
    let rc = RunConfig::from_train(&model.cfg);
    let dataset = Dataset::load_dir(&args.data, model.cfg.desc_len, model.cfg.history_max)?;
    let urg = build_urg(&dataset, &dataset.triples)?;
    let predictor = model.predictor(&dataset, &urg)?;
    let scored = predictor.score_examples(&dataset.test)?;
    let report = report_from_scores(&scored, rc.eval.threshold, model.cfg.seed, &rc.hash()?)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let json_path = args.out.join("report.json");
    fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = args.out.join("report.csv");
    fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "auc {:.6} | mae {:.6} | rmse {:.6} | f1 {:.6} ({} examples)",
        report.auc, report.mae, report.rmse, report.f1, report.n_examples
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, _stats) = load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::load_dir(&args.data, model.cfg.desc_len, model.cfg.history_max)?;
    let urg = build_urg(&dataset, &dataset.triples)?;
    let predictor = model.predictor(&dataset, &urg)?;
    let &user = dataset
        .user_index
        .get(&args.user)
        .ok_or_else(|| Error::Lookup(format!("user {:?}", args.user)))?;
    // Candidates are items the user has no recorded positive for; sampled
    // negatives are non-interactions, so they stay eligible.
    let seen: HashSet<u32> = dataset
        .train
        .iter()
        .chain(&dataset.test)
        .filter(|e| e.user == user && e.label == 1)
        .map(|e| e.item)
        .collect();
    let mut rows = Vec::new();
    for item in 0..dataset.items.len() as u32 {
        if seen.contains(&item) {
            continue;
        }
        let (p_l, p_g, p_f) = predictor.predict_index(user, item)?;
        rows.push((dataset.items[item as usize].clone(), p_l, p_g, p_f));
    }
    rows.sort_by(|a, b| {
        b.3.partial_cmp(&a.3)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    rows.truncate(args.topk);
    println!("item_id\tp_l\tp_g\tp_f");
    for (id, p_l, p_g, p_f) in rows {
        println!("{id}\t{p_l:.6}\t{p_g:.6}\t{p_f:.6}");
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let mut csv = String::from("value,auc,mae,rmse,f1\n");
    for &value in &args.values {
        let mut rc = base.clone();
        match args.param {
            SweepParam::DescLen => rc.data.desc_len = value,
            SweepParam::DimWord => rc.local.dim_word = value,
            SweepParam::DimEntity => rc.global.dim_entity = value,
        }
        rc.validate()?;
        let (_, report) = train_once(&args.data, &rc)?;
        writeln!(
            csv,
            "{value},{:.6},{:.6},{:.6},{:.6}",
            report.auc, report.mae, report.rmse, report.f1
        )
        .expect("writing to a String cannot fail");
        println!(
            "{}={value} → auc {:.6} mae {:.6} rmse {:.6} f1 {:.6}",
            match args.param {
                SweepParam::DescLen => "desc_len",
                SweepParam::DimWord => "dim_word",
                SweepParam::DimEntity => "dim_entity",
            },
            report.auc,
            report.mae,
            report.rmse,
            report.f1
        );
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let path = args.out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Bit-compare a checkpoint against a fresh registration with the same
/// config — the `--epochs 0` contract. Shared with the integration tests.
pub fn store_matches_fresh_init(store: &ParamStore, data_dir: &Path, rc: &RunConfig) -> Result<bool> {
    let tc = rc.to_train_config();
    let dataset = Dataset::load_dir(data_dir, rc.data.desc_len, rc.data.history_max)?;
    let urg = build_urg(&dataset, &dataset.triples)?;
    let mut fresh = ParamStore::new();
    register(&mut fresh, &tc, &dataset, &urg)?;
    let names: Vec<&str> = store.names().collect();
    let fresh_names: Vec<&str> = fresh.names().collect();
    if names != fresh_names {
        return Ok(false);
    }
    for name in names {
        let a = store.get(name)?;
        let b = fresh.get(name)?;
        if a.shape() != b.shape() || a.data() != b.data() {
            return Ok(false);
        }
    }
    Ok(true)
}
