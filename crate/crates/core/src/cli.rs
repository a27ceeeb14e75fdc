//! Command-line surface: `gen`, `rank`, `support`, `compare`, `lds`, and
//! `replay` for re-running a recorded manifest.
//!
//! Every command writes its outputs under `--out-dir` plus a JSON manifest
//! recording the resolved invocation and the digests of inputs and outputs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{self, AttributionError, Method, RankFilter, RankedIndices, ScoreVector};
use crate::brittleness::{
    self, RetrainingProbe, SupportError, SupportMode, SupportQuery, SupportResult, ThresholdProbe,
};
use crate::esvm::EsvmParams;
use crate::lds::{self, LdsError};
use crate::manifest::{self, FileDigest, RunManifest};
use crate::oracle::{self, OracleError, SoftmaxModel, SoftmaxOracle, TrainConfig};
use crate::report::{self, ReportError};
use crate::store::{self, EmbeddingSet, StoreError, SyntheticConfig, TargetSample};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Lds(#[from] LdsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("manifest: {0}")]
    Manifest(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(
    name = "simattr",
    version,
    about = "Similarity-based data attribution and brittleness evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalOpts {
    /// Base seed for data generation, training and random baselines.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Directory receiving every output file and manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Generate a synthetic Gaussian-mixture embedding store.
    Gen(GenArgs),
    /// Score and rank training samples for each target.
    Rank(RankArgs),
    /// Estimate removal or mislabel support by bisection search.
    Support(SupportArgs),
    /// Compare two support CSVs target by target.
    Compare(CompareArgs),
    /// Linear datamodeling score over random training subsets.
    Lds(LdsArgs),
    /// Re-run the invocation recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 4.0)]
    pub distance: f64,
    /// Output store, relative to --out-dir.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    L2,
    Cosine,
    Esvm,
    Gradcos,
    SignedSparse,
    Random,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::L2 => Method::L2,
            MethodArg::Cosine => Method::Cosine,
            MethodArg::Esvm => Method::Esvm,
            MethodArg::Gradcos => Method::GradCos,
            MethodArg::SignedSparse => Method::SignedSparseL2,
            MethodArg::Random => Method::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterArg {
    SameClass,
    All,
}

impl From<FilterArg> for RankFilter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::SameClass => RankFilter::SameClass,
            FilterArg::All => RankFilter::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Remove,
    Mislabel,
}

impl From<ModeArg> for SupportMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Remove => SupportMode::Remove,
            ModeArg::Mislabel => SupportMode::Mislabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleArg {
    /// Retrain softmax regression on the modified store.
    Softmax,
    /// Closed-form fixture: misclassifies iff M >= --threshold.
    Threshold,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Defaults to min(512, n).
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    /// Training store.
    #[arg(long)]
    pub train: PathBuf,
    /// Store whose rows are the evaluation targets.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Esvm)]
    pub method: MethodArg,
    /// Defaults to same-class, except for gradcos and random (all).
    #[arg(long, value_enum)]
    pub filter: Option<FilterArg>,
    /// Unit-normalize every embedding before scoring.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 0.5)]
    pub c_pos: f64,
    #[arg(long, default_value_t = 0.01)]
    pub c_neg: f64,
    #[arg(long, default_value_t = 2000)]
    pub esvm_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub esvm_tol: f64,
    /// Fraction of signed-sparse scores kept non-zero.
    #[arg(long, default_value_t = attribution::DEFAULT_KEEP_FRACTION)]
    pub keep_fraction: f64,
}

impl ScoreArgs {
    fn filter(&self) -> RankFilter {
        match (self.filter, self.method) {
            (Some(f), _) => f.into(),
            (None, MethodArg::Gradcos | MethodArg::Random) => RankFilter::All,
            (None, _) => RankFilter::SameClass,
        }
    }

    fn esvm_params(&self, seed: u64) -> EsvmParams {
        EsvmParams {
            c_pos: self.c_pos,
            c_neg: self.c_neg,
            max_iters: self.esvm_iters,
            tol: self.esvm_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    #[arg(long, default_value_t = brittleness::DEFAULT_K)]
    pub k: usize,
    #[command(flatten)]
    pub training: TrainArgs,
    /// Output CSV name inside --out-dir.
    #[arg(long, default_value = "ranking.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SupportArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Use rankings from a CSV written by `rank` instead of scoring.
    #[arg(long)]
    pub ranking: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Remove)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = brittleness::DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, default_value_t = brittleness::DEFAULT_N_TEST)]
    pub n_test: usize,
    #[arg(long, default_value_t = brittleness::DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = OracleArg::Softmax)]
    pub oracle: OracleArg,
    /// Threshold for `--oracle threshold`; omitted means never flips.
    #[arg(long)]
    pub threshold: Option<usize>,
    #[command(flatten)]
    pub training: TrainArgs,
    /// Output file tag; defaults to `<method>-<mode>`.
    #[arg(long)]
    pub tag: Option<String>,
    /// Also write an SVG plot of the CDF.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Support CSV of the method being evaluated.
    pub a: PathBuf,
    /// Support CSV of the reference method.
    pub b: PathBuf,
    #[arg(long, default_value = "compare.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LdsArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    #[arg(long, default_value_t = lds::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = lds::DEFAULT_SUBSETS, value_parser = parse_subsets)]
    pub m: usize,
    #[command(flatten)]
    pub training: TrainArgs,
    /// Also write the subset masks as bit-packed binary.
    #[arg(long)]
    pub export_masks: bool,
    #[arg(long, default_value = "lds.csv")]
    pub output: PathBuf,
}

fn parse_subsets(s: &str) -> std::result::Result<usize, String> {
    let m: usize = s.parse().map_err(|e| format!("{e}"))?;
    if m < 2 {
        return Err(format!("need at least 2 subsets, got {m}"));
    }
    Ok(m)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    /// Human-readable lines for stdout.
    pub summary: Vec<String>,
    /// Per-target failures that did not abort the batch.
    pub row_errors: Vec<String>,
}

/// Runs a parsed invocation on a thread pool sized by `--jobs`.
pub fn run(cli: Cli) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    if let Command::Replay(args) = &cli.command {
        return replay(args, &cli.global);
    }
    let started = manifest::unix_now();
    let mut out = Outputs::new(&cli.global.out_dir);
    let mut inputs = Vec::new();
    let (name, manifest_name, summary, row_errors) = match &cli.command {
        Command::Gen(a) => {
            let s = cmd_gen(a, &cli.global, &mut out)?;
            ("gen", manifest_name_for(&a.output), s, vec![])
        }
        Command::Rank(a) => {
            inputs.extend(digests(&[&a.score.train, &a.score.targets])?);
            let (s, e) = cmd_rank(a, &cli.global, &mut out)?;
            ("rank", manifest_name_for(&a.output), s, e)
        }
        Command::Support(a) => {
            inputs.extend(digests(&[&a.score.train, &a.score.targets])?);
            if let Some(r) = &a.ranking {
                inputs.push(FileDigest::of(r).map_err(io_err(r))?);
            }
            let tag = a.tag.clone().unwrap_or_else(|| {
                format!(
                    "{}-{}",
                    Method::from(a.score.method),
                    SupportMode::from(a.mode)
                )
            });
            let (s, e) = cmd_support(a, &tag, &cli.global, &mut out)?;
            ("support", format!("support_{tag}.manifest.json"), s, e)
        }
        Command::Compare(a) => {
            inputs.extend(digests(&[&a.a, &a.b])?);
            let (s, e) = cmd_compare(a, &mut out)?;
            ("compare", manifest_name_for(&a.output), s, e)
        }
        Command::Lds(a) => {
            inputs.extend(digests(&[&a.score.train, &a.score.targets])?);
            let (s, e) = cmd_lds(a, &cli.global, &mut out)?;
            ("lds", manifest_name_for(&a.output), s, e)
        }
        Command::Replay(_) => unreachable!(),
    };
    let outputs = out.commit()?;
    let manifest = RunManifest {
        command: name.into(),
        config: serde_json::to_value(&cli).map_err(|e| CliError::Manifest(e.to_string()))?,
        seed: cli.global.seed,
        inputs,
        outputs,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: manifest::unix_now(),
    };
    let manifest_path = cli.global.out_dir.join(manifest_name);
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Manifest(e.to_string()))?;
    manifest::write_atomic(&manifest_path, text.as_bytes()).map_err(io_err(&manifest_path))?;
    Ok(Outcome {
        manifest_path,
        manifest,
        summary,
        row_errors,
    })
}

fn manifest_name_for(output: &Path) -> String {
    let stem = output
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    format!("{stem}.manifest.json")
}

fn digests(paths: &[&PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| FileDigest::of(p).map_err(io_err(p)))
        .collect()
}

fn replay(args: &ReplayArgs, global: &GlobalOpts) -> Result<Outcome> {
    let recorded = RunManifest::load(&args.manifest).map_err(io_err(&args.manifest))?;
    let mut cli: Cli = serde_json::from_value(recorded.config.clone())
        .map_err(|e| CliError::Manifest(format!("unreadable config: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Manifest("refusing to replay a replay".into()));
    }
    for input in &recorded.inputs {
        let now = FileDigest::of(&input.path).map_err(io_err(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Manifest(format!(
                "input {} changed since the manifest was recorded",
                input.path.display()
            )));
        }
    }
    cli.global.out_dir = global.out_dir.clone();
    cli.global.jobs = global.jobs;
    dispatch(cli)
}

/// Buffers output files and writes them atomically once the command succeeds.
struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl AsRef<Path>, bytes: Vec<u8>) {
        self.files.push((self.dir.join(name), bytes));
    }

    fn commit(self) -> Result<Vec<FileDigest>> {
        let mut digests = Vec::new();
        for (path, bytes) in self.files {
            manifest::write_atomic(&path, &bytes).map_err(io_err(&path))?;
            digests.push(FileDigest {
                sha256: manifest::sha256_hex(&bytes),
                path,
            });
        }
        Ok(digests)
    }
}

fn cmd_gen(args: &GenArgs, global: &GlobalOpts, out: &mut Outputs) -> Result<Vec<String>> {
    let cfg = SyntheticConfig {
        num_classes: args.classes,
        samples_per_class: args.per_class,
        d: args.dim,
        cluster_spread: args.spread,
        inter_class_distance: args.distance,
        seed: global.seed,
    };
    let set = store::generate_synthetic(&cfg)?;
    out.add(&args.output, set.to_bytes());
    Ok(vec![format!(
        "wrote {} samples (d={}, {} classes) to {}",
        set.n(),
        set.d(),
        set.num_classes(),
        global.out_dir.join(&args.output).display()
    )])
}

/// Loaded stores plus anything expensive shared across targets.
struct ScoringContext {
    train: EmbeddingSet,
    targets: Vec<TargetSample>,
    model: Option<SoftmaxModel>,
}

impl ScoringContext {
    fn load(args: &ScoreArgs, training: &TrainArgs, seed: u64) -> Result<Self> {
        let mut train = store::load_embeddings(&args.train)?;
        let mut targets_set = store::load_embeddings(&args.targets)?;
        if targets_set.d() != train.d() {
            return Err(CliError::Usage(format!(
                "dimension mismatch: train d={}, targets d={}",
                train.d(),
                targets_set.d()
            )));
        }
        if targets_set.num_classes() > train.num_classes() {
            return Err(CliError::Usage(format!(
                "targets use {} classes, train only {}",
                targets_set.num_classes(),
                train.num_classes()
            )));
        }
        if args.normalize {
            train = train.normalized();
            targets_set = targets_set.normalized();
        }
        let model = if args.method == MethodArg::Gradcos {
            Some(oracle::train(
                &SoftmaxOracle,
                &train,
                None,
                &training.config(seed),
            )?)
        } else {
            None
        };
        Ok(Self {
            train,
            targets: targets_set.targets(),
            model,
        })
    }

    fn scores(&self, args: &ScoreArgs, target: &TargetSample, seed: u64) -> Result<ScoreVector> {
        let set = &self.train;
        Ok(match args.method {
            MethodArg::L2 => attribution::l2_scores(set, target)?,
            MethodArg::Cosine => attribution::cosine_scores(set, target)?,
            MethodArg::Esvm => attribution::esvm_scores(set, target, &args.esvm_params(seed))?,
            MethodArg::Gradcos => {
                let model = self.model.as_ref().expect("gradcos model trained at load");
                attribution::gradcos_scores(model, set, target)?
            }
            MethodArg::SignedSparse => {
                let base = attribution::l2_scores(set, target)?;
                attribution::signed_sparse_scores(set, target, &base, args.keep_fraction)?
            }
            MethodArg::Random => attribution::random_scores(set, target, seed)?,
        })
    }

    fn ranked(
        &self,
        args: &ScoreArgs,
        target: &TargetSample,
        k: usize,
        seed: u64,
    ) -> Result<(ScoreVector, RankedIndices)> {
        let scores = self.scores(args, target, seed)?;
        let ranked = attribution::rank(&scores, &self.train, target, args.filter(), k)?;
        Ok((scores, ranked))
    }
}

fn cmd_rank(
    args: &RankArgs,
    global: &GlobalOpts,
    out: &mut Outputs,
) -> Result<(Vec<String>, Vec<String>)> {
    let ctx = ScoringContext::load(&args.score, &args.training, global.seed)?;
    let blocks: Vec<Result<(ScoreVector, RankedIndices)>> = ctx
        .targets
        .par_iter()
        .map(|t| ctx.ranked(&args.score, t, args.k, global.seed))
        .collect();
    let mut csv = format!("{}\n", report::RANKING_HEADER);
    let mut errors = Vec::new();
    for (t, block) in ctx.targets.iter().zip(blocks) {
        match block {
            Ok((scores, ranked)) => {
                for w in &scores.warnings {
                    errors.push(format!("target {}: warning: {w}", t.id));
                }
                report::write_ranking(&mut csv, &ctx.train, &scores, &ranked);
            }
            Err(e) => errors.push(format!("target {}: {e}", t.id)),
        }
    }
    out.add(&args.output, csv.into_bytes());
    Ok((
        vec![format!(
            "ranked {} targets with {} (k={})",
            ctx.targets.len(),
            Method::from(args.score.method),
            args.k
        )],
        errors,
    ))
}

fn cmd_support(
    args: &SupportArgs,
    tag: &str,
    global: &GlobalOpts,
    out: &mut Outputs,
) -> Result<(Vec<String>, Vec<String>)> {
    let mode = SupportMode::from(args.mode);
    let cfg = args.training.config(global.seed);
    cfg.validate()?;
    let ctx = ScoringContext::load(&args.score, &args.training, global.seed)?;
    let from_file: Option<HashMap<u64, Vec<usize>>> = match &args.ranking {
        Some(path) => {
            let file = fs::File::open(path).map_err(io_err(path))?;
            Some(report::read_ranking(file)?.into_iter().collect())
        }
        None => None,
    };

    let ensemble = match (mode, args.oracle) {
        (SupportMode::Mislabel, OracleArg::Softmax) => Some(oracle::ensemble(
            &SoftmaxOracle,
            &ctx.train,
            &cfg,
            args.n_test,
        )?),
        _ => None,
    };

    let per_target = |t: &TargetSample| -> Result<SupportResult> {
        let ranked = match &from_file {
            Some(map) => {
                let mut indices = map
                    .get(&t.id)
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("no ranking for target {}", t.id)))?;
                indices.truncate(args.k);
                if let Some(&bad) = indices.iter().find(|&&i| i >= ctx.train.n()) {
                    return Err(CliError::Usage(format!("ranking index {bad} out of range")));
                }
                RankedIndices {
                    k: args.k,
                    indices,
                    filter: args.score.filter(),
                }
            }
            None => ctx.ranked(&args.score, t, args.k, global.seed)?.1,
        };
        let query = SupportQuery {
            target: t.clone(),
            ranked,
            mode,
            budget: args.budget,
            n_test: args.n_test,
        };
        let result = match args.oracle {
            OracleArg::Threshold => brittleness::compute_support(
                &query,
                ThresholdProbe {
                    threshold: args.threshold,
                },
            )?,
            OracleArg::Softmax => {
                let new_label = match mode {
                    SupportMode::Mislabel => {
                        let models = ensemble
                            .as_ref()
                            .expect("ensemble trained for mislabel mode");
                        Some(oracle::mislabel_class_from(models, t)?)
                    }
                    SupportMode::Remove => None,
                };
                let probe = RetrainingProbe {
                    oracle: &SoftmaxOracle,
                    set: &ctx.train,
                    target: t,
                    ranked: &query.ranked.indices,
                    mode,
                    new_label,
                    cfg,
                    n_test: args.n_test,
                };
                brittleness::compute_support(&query, &probe)?
            }
        };
        Ok(result)
    };

    let results: Vec<Result<SupportResult>> = ctx.targets.par_iter().map(per_target).collect();

    let mut csv = format!("{}\n", report::SUPPORT_HEADER);
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (t, r) in ctx.targets.iter().zip(results) {
        match r {
            Ok(r) => {
                csv.push_str(&report::support_row(&r));
                csv.push('\n');
                ok.push(r);
            }
            Err(e) => {
                csv.push_str(&report::support_error_row(t.id, mode));
                csv.push('\n');
                errors.push(format!("target {}: {e}", t.id));
            }
        }
    }
    out.add(format!("support_{tag}.csv"), csv.into_bytes());
    let mut summary = vec![format!(
        "{} targets, {} failed, mode {mode}, k={}",
        ctx.targets.len(),
        errors.len(),
        args.k
    )];
    if !ok.is_empty() {
        // Every result of a single run shares k only if all rankings were full length.
        let k = args.k;
        let normalized: Vec<SupportResult> =
            ok.into_iter().map(|r| SupportResult { k, ..r }).collect();
        let report = brittleness::cdf_and_auc(&normalized, k)?;
        out.add(
            format!("cdf_{tag}.csv"),
            report::cdf_csv(&report).into_bytes(),
        );
        if args.svg {
            out.add(
                format!("cdf_{tag}.svg"),
                report::cdf_svg(&[(tag, &report)]).into_bytes(),
            );
        }
        summary.push(format!("auc,{}", report.auc));
    }
    Ok((summary, errors))
}

fn cmd_compare(args: &CompareArgs, out: &mut Outputs) -> Result<(Vec<String>, Vec<String>)> {
    let read = |p: &PathBuf| -> Result<Vec<report::SupportRow>> {
        let f = fs::File::open(p).map_err(io_err(p))?;
        Ok(report::read_support(f)?)
    };
    let (a, b) = (read(&args.a)?, read(&args.b)?);
    if a.len() != b.len() {
        return Err(CliError::Usage(format!(
            "support files list {} and {} targets",
            a.len(),
            b.len()
        )));
    }
    let mut errors = Vec::new();
    let mut ra = Vec::new();
    let mut rb = Vec::new();
    let to_result = |row: &report::SupportRow, s: i64| SupportResult {
        target_id: row.target_id,
        mode: row.mode,
        k: 0,
        support: usize::try_from(s).ok(),
        probes: vec![],
    };
    for (x, y) in a.iter().zip(&b) {
        if x.target_id != y.target_id {
            return Err(SupportError::Misaligned {
                pos: ra.len(),
                a: x.target_id,
                b: y.target_id,
            }
            .into());
        }
        match (x.support, y.support) {
            (Some(sa), Some(sb)) => {
                ra.push(to_result(x, sa));
                rb.push(to_result(y, sb));
            }
            _ => errors.push(format!("target {}: error row, skipped", x.target_id)),
        }
    }
    let w = brittleness::win_rate(&ra, &rb)?;
    out.add(&args.output, report::win_rate_csv(&w).into_bytes());
    Ok((
        vec![format!(
            "smaller {}, equal {}, larger {} ({} targets)",
            w.smaller,
            w.equal,
            w.larger,
            w.total()
        )],
        errors,
    ))
}

fn cmd_lds(
    args: &LdsArgs,
    global: &GlobalOpts,
    out: &mut Outputs,
) -> Result<(Vec<String>, Vec<String>)> {
    if args.m < 2 {
        return Err(CliError::Usage("--m must be >= 2".into()));
    }
    let cfg = args.training.config(global.seed);
    let ctx = ScoringContext::load(&args.score, &args.training, global.seed)?;
    let taus: Vec<ScoreVector> = ctx
        .targets
        .par_iter()
        .map(|t| ctx.scores(&args.score, t, global.seed))
        .collect::<Result<_>>()?;
    // Other-class ESVM entries are −∞ sentinels; they carry no additive weight.
    let taus: Vec<ScoreVector> = taus
        .into_iter()
        .map(|mut t| {
            for s in t.scores.iter_mut().filter(|s| !s.is_finite()) {
                *s = 0.0;
            }
            t
        })
        .collect();
    let masks = lds::sample_subsets(ctx.train.n(), args.alpha, args.m, global.seed)?;
    let result = lds::lds(
        &SoftmaxOracle,
        &ctx.train,
        &ctx.targets,
        &taus,
        &masks,
        &cfg,
        args.alpha,
    )?;
    out.add(&args.output, report::lds_csv(&result).into_bytes());
    if args.export_masks {
        out.add("masks.bin", report::masks_to_bytes(&masks));
    }
    Ok((
        vec![format!("mean,{}", result.mean_rho)],
        result.warnings.clone(),
    ))
}
