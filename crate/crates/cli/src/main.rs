use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use authclust::clustering::ClusterinessConfig;
use authclust_cli::config::{parse_clusteriness, parse_strategy, RunConfig};
use authclust_cli::{report, run};

#[derive(Parser)]
#[command(name = "authclust", version, about = "Authorship clustering with a multi-headed character language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus, build the alphabet and fix the ensemble
    Prep(RunArgs),
    /// Train ensemble members
    Train(MemberArgs),
    /// Score every text under every head of each member
    Score(MemberArgs),
    /// Sum the members and build per-problem affinity matrices
    Combine(OutArgs),
    /// Cluster and rank links for every problem
    Cluster(ClusterArgs),
    /// Score clusterings and rankings against the truth
    Eval(TruthArgs),
    /// Write and score the singletons + random links baseline
    Baseline(BaselineArgs),
    /// Run every stage
    Pipeline(RunArgs),
    /// Write report.csv comparing cowardly, best and fixed clusteriness
    Report(TruthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Directory holding one subdirectory of .txt files per problem
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory of control texts
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Number of control texts to sample (default: all)
    #[arg(long)]
    n_controls: Option<usize>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run config JSON, or a manifest from an earlier run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// A clusteriness value in [0, 1] or a clusteriness config file
    #[arg(long)]
    clusteriness: Option<String>,
    /// single_link, cluster_aware or pair_first
    #[arg(long)]
    strategy: Option<String>,
    /// Mask words found in fewer than this share of documents, in every member
    #[arg(long)]
    df_threshold: Option<f64>,
    /// Read every text backwards in every member
    #[arg(long)]
    reverse: bool,
    /// Truth directory, one <problem>/clustering.json each
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MemberArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Only this ensemble member (default: all)
    #[arg(long)]
    member: Option<usize>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    clusteriness: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn clusteriness_override(
    base: &ClusterinessConfig,
    clusteriness: Option<&str>,
    strategy: Option<&str>,
) -> anyhow::Result<ClusterinessConfig> {
    let mut cfg = match clusteriness {
        Some(arg) => parse_clusteriness(arg)?,
        None => base.clone(),
    };
    if let Some(s) = strategy {
        cfg = cfg.with_strategy(parse_strategy(s)?);
    }
    Ok(cfg)
}

impl RunArgs {
    fn to_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.corpus {
            cfg.corpus = v.clone();
        }
        if let Some(v) = &self.controls {
            cfg.controls = Some(v.clone());
        }
        if let Some(v) = self.n_controls {
            cfg.n_controls = Some(v);
        }
        if let Some(v) = &self.language {
            cfg.language = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.df_threshold {
            cfg.df_threshold = Some(v);
        }
        if self.reverse {
            cfg.reverse = Some(true);
        }
        if let Some(v) = &self.truth {
            cfg.truth = Some(v.clone());
        }
        cfg.clusteriness = clusteriness_override(&cfg.clusteriness, self.clusteriness.as_deref(), self.strategy.as_deref())?;
        if cfg.corpus.as_os_str().is_empty() {
            anyhow::bail!("--corpus is required (or a --config naming one)");
        }
        Ok(cfg)
    }
}

fn set_jobs(jobs: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        log::warn!("could not size the thread pool: {e}");
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Prep(args) => {
            let cfg = args.to_config()?;
            let resolved = run::prep(&cfg)?;
            log::info!("prepared {} ensemble members in {}", resolved.ensemble.len(), cfg.out.display());
        }
        Command::Train(args) => {
            set_jobs(args.jobs);
            run::train(&args.out, args.member)?;
        }
        Command::Score(args) => {
            set_jobs(args.jobs);
            run::score(&args.out, args.member)?;
        }
        Command::Combine(args) => {
            run::combine(&args.out)?;
        }
        Command::Cluster(args) => {
            let cfg = run::load_config(&args.out)?;
            let clusteriness =
                clusteriness_override(&cfg.clusteriness, args.clusteriness.as_deref(), args.strategy.as_deref())?;
            print_json(&run::cluster(&args.out, Some(&clusteriness))?)?;
        }
        Command::Eval(args) => {
            print_json(&run::eval(&args.out, &args.truth)?)?;
        }
        Command::Baseline(args) => {
            let scores = run::baseline(&args.out, args.truth.as_deref())?;
            if args.truth.is_some() {
                print_json(&scores)?;
            }
        }
        Command::Pipeline(args) => {
            let cfg = args.to_config()?;
            set_jobs(cfg.jobs);
            let result = run::pipeline(&cfg)?;
            match &result.scores {
                Some(scores) => print_json(scores)?,
                None => print_json(&result.clusters)?,
            }
        }
        Command::Report(args) => {
            let rows = report::write_report(&args.out, &args.truth)?;
            let path = run::Layout::new(&args.out).report();
            print!("{}", std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?);
            log::info!("{} problems reported", rows.len());
        }
    }
    Ok(())
}

fn out_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Prep(a) | Command::Pipeline(a) => a.out.as_deref(),
        Command::Train(a) | Command::Score(a) => Some(&a.out),
        Command::Combine(a) => Some(&a.out),
        Command::Cluster(a) => Some(&a.out),
        Command::Eval(a) | Command::Report(a) => Some(&a.out),
        Command::Baseline(a) => Some(&a.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<authclust::Error>()
                .or_else(|| e.chain().find_map(|c| c.downcast_ref::<authclust::Error>()))
                .map(error_kind)
                .unwrap_or("Error");
            let report = json!({
                "error": kind,
                "message": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            let text = serde_json::to_string_pretty(&report).unwrap_or_else(|_| e.to_string());
            eprintln!("{text}");
            if let Some(out) = out_dir(&cli.command).filter(|d| d.is_dir()) {
                let _ = std::fs::write(out.join("error.json"), &text);
            }
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &authclust::Error) -> &'static str {
    use authclust::Error::*;
    match e {
        EmptyCorpus => "EmptyCorpus",
        EmptyAlphabet(_) => "EmptyAlphabet",
        InvalidParameter(_) => "InvalidParameter",
        MissingDirectory(_) => "MissingDirectory",
        EmptyProblem(_) => "EmptyProblem",
        NonUtf8File(_) => "NonUtf8File",
        InsufficientControls { .. } => "InsufficientControls",
        UnknownDocument(_) => "UnknownDocument",
        DocTooShort { .. } => "DocTooShort",
        NonFiniteLoss { .. } => "NonFiniteLoss",
        VersionMismatch { .. } => "VersionMismatch",
        CorruptFile(_) => "CorruptFile",
        ShapeMismatch(_) => "ShapeMismatch",
        IdMismatch(_) => "IdMismatch",
        NoControls => "NoControls",
        DegenerateAnchors { .. } => "DegenerateAnchors",
        UniverseMismatch => "UniverseMismatch",
        NoTrueLinks => "NoTrueLinks",
        Io(_) => "Io",
        Json(_) => "Json",
    }
}

