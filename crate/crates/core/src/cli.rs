//! `cml` command-line interface: preprocess, split, train, evaluate,
//! recommend.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{
    binarize_filter, kfold_split, parse_interactions_file, Comparison, DataError, Delimiter,
    FilterRules, FoldAssignment, InteractionSet, Schema, Threshold, UserItemIndex, FOLDS_FILE,
};
use crate::eval::{evaluate_fold, rank_top_k, EvalOptions, MetricsReport, MetricsRow, RunLabel};
use crate::model::{ModelParams, TrainError, Trainer};
use crate::persist::{self, PersistError};

pub const EMBEDDINGS_FILE: &str = "embeddings.cmle";
pub const LOSS_FILE: &str = "loss.tsv";
pub const RUN_CONFIG_FILE: &str = "config.txt";
pub const STATS_FILE: &str = "stats.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidHyper(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "cml",
    version,
    about = "Collaborative metric learning with two-stage negative sampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Binarize and filter raw interactions into an index-mapped dataset directory.
    Preprocess(PreprocessArgs),
    /// Assign every interaction of a processed dataset to a cross-validation fold.
    Split(SplitArgs),
    /// Train embeddings on all folds except the test fold.
    Train(TrainArgs),
    /// Compute MAP@K, NDCG@K and MMR of saved embeddings on a test fold.
    Evaluate(EvaluateArgs),
    /// Print the top-K items for one user.
    Recommend(RecommendArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw interaction file (user, item, value per line).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Filter preset: amazon-movies, book-crossing, echonest or permissive.
    #[arg(long, default_value = "permissive")]
    pub preset: String,
    /// Field delimiter: tab or comma.
    #[arg(long, default_value = "tab")]
    pub delimiter: Delimiter,
    /// Skip the first line.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 0)]
    pub user_col: usize,
    #[arg(long, default_value_t = 1)]
    pub item_col: usize,
    #[arg(long, default_value_t = 2)]
    pub value_col: usize,
    /// Binarization threshold on the value column.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// ge or gt.
    #[arg(long)]
    pub threshold_mode: Option<Comparison>,
    /// Minimum interactions per user.
    #[arg(long)]
    pub min_user: Option<usize>,
    #[arg(long)]
    pub min_user_mode: Option<Comparison>,
    /// Minimum distinct users per item (0 disables).
    #[arg(long)]
    pub min_item: Option<usize>,
    #[arg(long)]
    pub min_item_mode: Option<Comparison>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Processed dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flags mirroring the config-file keys one to one.
#[derive(Debug, Args, Default)]
pub struct ConfigFlags {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<String>,
    #[arg(long)]
    pub candidates: Option<String>,
    #[arg(long)]
    pub negatives: Option<String>,
    #[arg(long)]
    pub s_clamp: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub lambda_gor: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub adam_beta1: Option<String>,
    #[arg(long)]
    pub adam_beta2: Option<String>,
    #[arg(long)]
    pub adam_eps: Option<String>,
    #[arg(long, visible_alias = "batch")]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Test fold held out from training.
    #[arg(long)]
    pub fold: Option<String>,
    #[arg(long)]
    pub k_eval: Option<String>,
    #[arg(long)]
    pub exclude_train: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all: [(&'static str, &Option<String>); 19] = [
            ("dataset", &self.dataset),
            ("strategy", &self.strategy),
            ("beta", &self.beta),
            ("candidates", &self.candidates),
            ("negatives", &self.negatives),
            ("s_clamp", &self.s_clamp),
            ("dim", &self.dim),
            ("margin", &self.margin),
            ("lambda_gor", &self.lambda_gor),
            ("lr", &self.lr),
            ("adam_beta1", &self.adam_beta1),
            ("adam_beta2", &self.adam_beta2),
            ("adam_eps", &self.adam_eps),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("fold", &self.fold),
            ("k_eval", &self.k_eval),
            ("exclude_train", &self.exclude_train),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(
    file: Option<&Path>,
    flags: &ConfigFlags,
) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = file {
        config.apply_file(path)?;
    }
    for (key, value) in flags.pairs() {
        config.set(key, value)?;
    }
    Ok(config)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Processed dataset directory containing folds.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for embeddings, loss log and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Print per-epoch statistics to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Test fold; defaults to the fold recorded next to the embeddings.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Metrics TSV to create or update.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Rank training items too.
    #[arg(long)]
    pub include_train: bool,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// User key as it appears in users.tsv.
    #[arg(long)]
    pub user: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Exclude only items outside this test fold instead of all known items.
    #[arg(long)]
    pub fold: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a, out),
        Command::Split(a) => cmd_split(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Recommend(a) => cmd_recommend(&a, out),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn preset_rules(name: &str) -> Result<FilterRules, CliError> {
    match name {
        "amazon" | "amazon-movies" => Ok(FilterRules::amazon_movies()),
        "book" | "book-crossing" => Ok(FilterRules::book_crossing()),
        "echonest" => Ok(FilterRules::echonest()),
        "permissive" | "none" => Ok(FilterRules::permissive()),
        other => Err(CliError::Usage(format!("unknown preset '{other}'"))),
    }
}

fn override_threshold<T: PartialOrd + Copy>(
    t: &mut Threshold<T>,
    bound: Option<T>,
    mode: Option<Comparison>,
) {
    if let Some(b) = bound {
        t.bound = b;
    }
    if let Some(m) = mode {
        t.mode = m;
    }
}

pub fn cmd_preprocess(args: &PreprocessArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rules = preset_rules(&args.preset)?;
    override_threshold(&mut rules.binarize, args.threshold, args.threshold_mode);
    override_threshold(
        &mut rules.min_user_interactions,
        args.min_user,
        args.min_user_mode,
    );
    override_threshold(&mut rules.min_item_users, args.min_item, args.min_item_mode);
    rules
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let schema = Schema {
        delimiter: args.delimiter,
        has_header: args.header,
        user_col: args.user_col,
        item_col: args.item_col,
        value_col: args.value_col,
    };
    let raw = parse_interactions_file(&args.input, &schema)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let set = binarize_filter(&raw, &rules)?;
    set.write_dir(&args.out)?;
    let stats = set.stats().to_string();
    let stats_path = args.out.join(STATS_FILE);
    fs::write(&stats_path, &stats).map_err(|e| io_err(&stats_path, e))?;
    write_out(out, &stats)
}

pub fn cmd_split(args: &SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.folds < 2 {
        return Err(CliError::Usage(format!(
            "--folds must be >= 2, got {}",
            args.folds
        )));
    }
    let set = InteractionSet::read_dir(&args.data)?;
    let folds = kfold_split(&set, args.folds, args.seed)?;
    folds.write(&args.data.join(FOLDS_FILE))?;
    write_out(
        out,
        &format!(
            "wrote {} fold assignments ({} folds)\n",
            set.len(),
            args.folds
        ),
    )
}

fn load_dataset_with_folds(dir: &Path) -> Result<(InteractionSet, FoldAssignment), CliError> {
    let set = InteractionSet::read_dir(dir)?;
    let folds = FoldAssignment::read(&dir.join(FOLDS_FILE), set.len(), None)?;
    Ok((set, folds))
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_config(args.config.as_deref(), &args.flags)?;
    config.validate()?;
    let (set, folds) = load_dataset_with_folds(&args.data)?;
    if config.fold >= folds.k() {
        return Err(CliError::Usage(format!(
            "fold {} out of range for {} folds",
            config.fold,
            folds.k()
        )));
    }
    let train = folds.train_pairs(&set, config.fold);
    let mut trainer = Trainer::new(
        set.num_users(),
        set.num_items(),
        train,
        config.sampler_config(),
        config.hyper(),
    )?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let config_path = args.out.join(RUN_CONFIG_FILE);
    fs::write(&config_path, config.to_kv()).map_err(|e| io_err(&config_path, e))?;

    let mut log = String::from("epoch\tmean_loss\tactive_fraction\n");
    let verbose = args.verbose;
    trainer.fit(|s| {
        log.push_str(&format!(
            "{}\t{:.6}\t{:.6}\n",
            s.epoch, s.mean_loss, s.active_fraction
        ));
        if verbose {
            eprintln!(
                "epoch {:>4}  loss {:.6}  active {:.4}",
                s.epoch, s.mean_loss, s.active_fraction
            );
        }
    })?;
    let loss_path = args.out.join(LOSS_FILE);
    fs::write(&loss_path, &log).map_err(|e| io_err(&loss_path, e))?;
    let emb_path = args.out.join(EMBEDDINGS_FILE);
    persist::save(trainer.params(), &emb_path).map_err(|e| match e {
        PersistError::Io(io) => io_err(&emb_path, io),
        other => CliError::Runtime(other.to_string()),
    })?;
    write_out(out, &format!("wrote {}\n", emb_path.display()))
}

/// Loads the embeddings and checks their header against the dataset.
fn load_checked(path: &Path, set: &InteractionSet) -> Result<ModelParams, CliError> {
    let params =
        persist::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for (field, model, data) in [
        ("num_users", params.num_users(), set.num_users()),
        ("num_items", params.num_items(), set.num_items()),
    ] {
        if model != data {
            return Err(CliError::Data(format!(
                "shape mismatch in {field}: embeddings have {model}, dataset has {data}"
            )));
        }
    }
    Ok(params)
}

/// The resolved run config saved next to an embedding file, if any.
fn sidecar_config(embeddings: &Path) -> Result<Option<ExperimentConfig>, CliError> {
    let path = embeddings.with_file_name(RUN_CONFIG_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let mut config = ExperimentConfig::default();
    config.apply_file(&path)?;
    Ok(Some(config))
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (set, folds) = load_dataset_with_folds(&args.data)?;
    let params = load_checked(&args.embeddings, &set)?;
    let run = sidecar_config(&args.embeddings)?;
    let fold = args.fold.or(run.as_ref().map(|c| c.fold)).unwrap_or(0);
    let k = args
        .k
        .or(run.as_ref().map(|c| c.k_eval))
        .unwrap_or(crate::eval::DEFAULT_K);
    let label = match &run {
        Some(c) => RunLabel {
            strategy: c.strategy.to_string(),
            negatives: c.negatives,
            batch_size: c.batch_size,
        },
        None => RunLabel {
            strategy: "unknown".into(),
            negatives: 0,
            batch_size: 0,
        },
    };
    let opts = EvalOptions {
        k,
        exclude_train: !args.include_train,
    };
    let metrics = evaluate_fold(&params.unit_embeddings(), &set, &folds, fold, opts)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let path = args
        .out
        .clone()
        .unwrap_or_else(|| args.embeddings.with_file_name(METRICS_FILE));
    let mut report = if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        MetricsReport::from_tsv(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
    } else {
        MetricsReport::new(k)
    };
    if report.k != k {
        return Err(CliError::Usage(format!(
            "{} holds metrics at k={}, not k={k}",
            path.display(),
            report.k
        )));
    }
    report.upsert(MetricsRow { label, metrics });
    let tsv = report.to_tsv();
    fs::write(&path, &tsv).map_err(|e| io_err(&path, e))?;
    write_out(out, &tsv)
}

pub fn cmd_recommend(args: &RecommendArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let set = InteractionSet::read_dir(&args.data)?;
    let params = load_checked(&args.embeddings, &set)?;
    let user = set
        .user_index(&args.user)
        .ok_or_else(|| CliError::Data(format!("unknown user key '{}'", args.user)))?;
    let known = match args.fold {
        Some(fold) => {
            let folds = FoldAssignment::read(&args.data.join(FOLDS_FILE), set.len(), None)?;
            UserItemIndex::from_pairs(set.num_users(), &folds.train_pairs(&set, fold))
        }
        None => UserItemIndex::from_set(&set),
    };
    let units = params.unit_embeddings();
    let ranked = rank_top_k(&units, user, args.k, |j| known.contains(user, j));
    let mut text = String::new();
    for (rank, (&item, score)) in ranked.items.iter().zip(&ranked.scores).enumerate() {
        text.push_str(&format!(
            "{}\t{}\t{:.6}\n",
            rank + 1,
            set.item_key(item),
            score
        ));
    }
    write_out(out, &text)
}
