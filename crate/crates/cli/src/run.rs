//! Pipeline stages. Each stage reads its inputs from the output directory
//! and writes its results there, so stages can run separately.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use authclust::affinity::{self, AffinityMatrix, EntropyMatrix, RankedLinks};
use authclust::clustering::{self, Anchors, ClusterinessConfig, ClusterinessSetting};
use authclust::corpus::{self, Document, Problem, TrainingSet};
use authclust::metrics::{self, ScoreReport};
use authclust::mhrnn::{self, TrainingLog};
use authclust::pan;
use authclust::textprep::{self, Alphabet, EquivalenceConfig, Normalizer, RARE_WORD};

use crate::config::RunConfig;

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Layout { out: out.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.out.join("config.json")
    }
    pub fn alphabet(&self) -> PathBuf {
        self.out.join("alphabet.json")
    }
    pub fn collection(&self) -> PathBuf {
        self.out.join("collection.json")
    }
    pub fn member_dir(&self, i: usize) -> PathBuf {
        self.out.join("members").join(format!("member{i}"))
    }
    pub fn model(&self, i: usize) -> PathBuf {
        self.member_dir(i).join("model.mhrnn")
    }
    pub fn training_log(&self, i: usize) -> PathBuf {
        self.member_dir(i).join("training_log.json")
    }
    pub fn member_entropy(&self, i: usize) -> PathBuf {
        self.member_dir(i).join("entropy.json")
    }
    pub fn ensemble_entropy(&self) -> PathBuf {
        self.out.join("entropy.json")
    }
    pub fn problem_dir(&self, problem_id: &str) -> PathBuf {
        self.out.join(problem_id)
    }
    pub fn affinity(&self, problem_id: &str) -> PathBuf {
        self.problem_dir(problem_id).join("affinity.json")
    }
    pub fn clustering(&self, problem_id: &str) -> PathBuf {
        self.problem_dir(problem_id).join("clustering.json")
    }
    pub fn ranking(&self, problem_id: &str) -> PathBuf {
        self.problem_dir(problem_id).join("ranking.json")
    }
    pub fn cluster_info(&self, problem_id: &str) -> PathBuf {
        self.problem_dir(problem_id).join("cluster_info.json")
    }
    pub fn scores(&self) -> PathBuf {
        self.out.join("scores.json")
    }
    pub fn baseline_dir(&self) -> PathBuf {
        self.out.join("baseline")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.json")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report.csv")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// What `prep` learned about the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionInfo {
    pub problems: Vec<Problem>,
    /// Document id of every head, in head order.
    pub head_ids: Vec<String>,
    pub control_heads: BTreeSet<usize>,
}

struct LoadedCorpus {
    problems: Vec<Problem>,
    docs: Vec<Document>,
    controls: Vec<Document>,
}

fn load_corpus(cfg: &RunConfig) -> anyhow::Result<LoadedCorpus> {
    let (problems, docs) = corpus::load_collection_with_limit(&cfg.corpus, &cfg.language, cfg.max_problem_docs)?;
    let controls = match &cfg.controls {
        Some(dir) => {
            let n = match cfg.n_controls {
                Some(n) => n,
                None => fs::read_dir(dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "txt"))
                    .count(),
            };
            corpus::load_controls(dir, n, cfg.seed)?
        }
        None => Vec::new(),
    };
    Ok(LoadedCorpus {
        problems,
        docs,
        controls,
    })
}

fn normalizer(cfg: &RunConfig) -> Normalizer {
    Normalizer::new(&cfg.language, &EquivalenceConfig::default())
}

/// Loads the corpus, builds the shared alphabet and settles the ensemble.
/// Writes `config.json`, `alphabet.json` and `collection.json`.
pub fn prep(cfg: &RunConfig) -> anyhow::Result<RunConfig> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let loaded = load_corpus(cfg)?;
    let ordered = corpus::head_order(&loaded.problems, &loaded.docs, &loaded.controls)?;
    let texts = corpus::normalize_documents(&ordered, &normalizer(cfg));

    let mut resolved = cfg.clone();
    resolved.resolve_ensemble(ordered.len());
    let mut alphabet = textprep::build_alphabet(&texts, cfg.alphabet_min_frequency, &cfg.language)?;
    if resolved.uses_word_masking() {
        alphabet = alphabet.with_token(RARE_WORD);
    }
    log::info!(
        "{} problems, {} heads ({} controls), alphabet of {}",
        loaded.problems.len(),
        ordered.len(),
        loaded.controls.len(),
        alphabet.len()
    );

    let info = CollectionInfo {
        problems: loaded.problems.clone(),
        head_ids: ordered.iter().map(|d| d.doc_id.clone()).collect(),
        control_heads: (ordered.len() - loaded.controls.len()..ordered.len()).collect(),
    };
    fs::create_dir_all(&cfg.out)?;
    fs::write(layout.alphabet(), alphabet.to_json())?;
    write_json(&layout.collection(), &info)?;
    write_json(&layout.config(), &resolved)?;
    Ok(resolved)
}

/// The resolved config written by `prep`.
pub fn load_config(out: &Path) -> anyhow::Result<RunConfig> {
    let path = Layout::new(out).config();
    if !path.is_file() {
        bail!("{} not found; run prep first", path.display());
    }
    RunConfig::from_json_file(&path)
}

pub fn load_alphabet(out: &Path) -> anyhow::Result<Alphabet> {
    let path = Layout::new(out).alphabet();
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Alphabet::from_json(&text)?)
}

/// Re-encodes the corpus the way ensemble member `member` sees it.
pub fn member_training_set(cfg: &RunConfig, alphabet: &Alphabet, member: usize) -> anyhow::Result<TrainingSet> {
    let m = cfg
        .ensemble
        .get(member)
        .with_context(|| format!("no ensemble member {member}"))?;
    let loaded = load_corpus(cfg)?;
    let set = corpus::assemble(
        &loaded.problems,
        &loaded.docs,
        &loaded.controls,
        &normalizer(cfg),
        alphabet,
        m.hyper.df_threshold,
        m.hyper.direction.is_reversed(),
    )?;
    let info: CollectionInfo = read_json(&Layout::new(&cfg.out).collection())?;
    let ids: Vec<&str> = set.documents.iter().map(|d| d.doc_id.as_str()).collect();
    if ids != info.head_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        bail!("corpus changed since prep; run prep again");
    }
    Ok(set)
}

fn members(cfg: &RunConfig, member: Option<usize>) -> anyhow::Result<Vec<usize>> {
    match member {
        Some(i) if i >= cfg.ensemble.len() => bail!("no ensemble member {i}"),
        Some(i) => Ok(vec![i]),
        None => Ok((0..cfg.ensemble.len()).collect()),
    }
}

pub fn train(out: &Path, member: Option<usize>) -> anyhow::Result<Vec<TrainingLog>> {
    let cfg = load_config(out)?;
    let alphabet = load_alphabet(out)?;
    let layout = Layout::new(out);
    members(&cfg, member)?
        .into_par_iter()
        .map(|i| {
            let set = member_training_set(&cfg, &alphabet, i)?;
            let hyper = cfg.ensemble[i].resolve(set.n_heads());
            log::info!("member {i}: training {} heads, hidden {}", set.n_heads(), hyper.hidden_size);
            let mut model = mhrnn::init_model(alphabet.len(), set.n_heads(), hyper)?;
            model.alphabet_hash = alphabet.hash();
            let log = mhrnn::train(&mut model, &set.documents).with_context(|| format!("training member {i}"))?;
            log::info!(
                "member {i}: {} epochs, best validation {:.4} bits at epoch {}",
                log.epochs.len(),
                log.best_validation_bits,
                log.best_epoch
            );
            fs::create_dir_all(layout.member_dir(i))?;
            mhrnn::save_model(&model, &layout.model(i))?;
            write_json(&layout.training_log(i), &log)?;
            Ok(log)
        })
        .collect()
}

pub fn score(out: &Path, member: Option<usize>) -> anyhow::Result<()> {
    let cfg = load_config(out)?;
    let alphabet = load_alphabet(out)?;
    let layout = Layout::new(out);
    members(&cfg, member)?.into_par_iter().try_for_each(|i| {
        let model = mhrnn::load_model(&layout.model(i)).with_context(|| format!("loading member {i}"))?;
        if model.alphabet_hash != alphabet.hash() {
            bail!("member {i} was trained with a different alphabet");
        }
        let set = member_training_set(&cfg, &alphabet, i)?;
        let matrix = affinity::score_all(&model, &set.documents)?;
        write_json(&layout.member_entropy(i), &matrix)
    })
}

/// Sums member matrices and writes each problem's affinity matrix.
pub fn combine(out: &Path) -> anyhow::Result<Vec<AffinityMatrix>> {
    let cfg = load_config(out)?;
    let layout = Layout::new(out);
    let info: CollectionInfo = read_json(&layout.collection())?;
    let matrices = (0..cfg.ensemble.len())
        .map(|i| read_json::<EntropyMatrix>(&layout.member_entropy(i)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let total = affinity::ensemble_sum(&matrices)?;
    write_json(&layout.ensemble_entropy(), &total)?;
    info.problems
        .iter()
        .map(|p| {
            let normalized = affinity::normalize_by_controls(&total, &info.control_heads, p)
                .with_context(|| format!("normalizing {}", p.problem_id))?;
            let a = affinity::to_affinity(&normalized)?;
            write_json(&layout.affinity(&p.problem_id), &a)?;
            Ok(a)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub problem_id: String,
    pub language: String,
    pub genre: String,
    pub setting: ClusterinessSetting,
    pub anchors: Option<Anchors>,
    pub threshold: Option<f64>,
    pub fell_back: bool,
    pub n_clusters: usize,
    pub degenerate_links: bool,
}

/// Clusters and ranks every problem from its affinity matrix, using the
/// run's clusteriness unless `clusteriness` overrides it.
pub fn cluster(out: &Path, clusteriness: Option<&ClusterinessConfig>) -> anyhow::Result<Vec<ClusterInfo>> {
    let cfg = load_config(out)?;
    let clusteriness = clusteriness.unwrap_or(&cfg.clusteriness);
    let layout = Layout::new(out);
    let info: CollectionInfo = read_json(&layout.collection())?;
    info.problems
        .iter()
        .map(|p| {
            let a: AffinityMatrix = read_json(&layout.affinity(&p.problem_id))?;
            let outcome = clustering::cluster_problem(&a, clusteriness, &p.language, &p.genre);
            let links = if a.n() >= 2 {
                affinity::rank_links(&a)?
            } else {
                RankedLinks::from_unsorted(Vec::new())
            };
            fs::create_dir_all(layout.problem_dir(&p.problem_id))?;
            pan::write_clustering(&layout.clustering(&p.problem_id), &outcome.partition)?;
            pan::write_ranking(&layout.ranking(&p.problem_id), &links)?;
            let ci = ClusterInfo {
                problem_id: p.problem_id.clone(),
                language: p.language.clone(),
                genre: p.genre.clone(),
                setting: outcome.setting,
                anchors: outcome.anchors,
                threshold: outcome.threshold,
                fell_back: outcome.fell_back,
                n_clusters: outcome.partition.n_clusters(),
                degenerate_links: links.degenerate,
            };
            write_json(&layout.cluster_info(&p.problem_id), &ci)?;
            Ok(ci)
        })
        .collect()
}

/// Truth for one problem, over that problem's file names.
pub fn load_truth(truth_dir: &Path, problem: &Problem) -> anyhow::Result<metrics::TruthPartition> {
    let path = truth_dir.join(&problem.problem_id).join("clustering.json");
    if !path.is_file() {
        bail!("missing truth file {}", path.display());
    }
    pan::read_clustering(&path, Some(&problem.filenames))
        .with_context(|| format!("truth for {} does not match its documents", problem.problem_id))
}

/// Scores predictions under `pred_root/<problem>/` against the truth.
pub fn evaluate_dir(pred_root: &Path, problems: &[Problem], truth_dir: &Path) -> anyhow::Result<Vec<ScoreReport>> {
    problems
        .iter()
        .map(|p| {
            let truth = load_truth(truth_dir, p)?;
            let dir = pred_root.join(&p.problem_id);
            let pred = pan::read_clustering(&dir.join("clustering.json"), Some(&p.filenames))?;
            let links = pan::read_ranking(&dir.join("ranking.json"))?;
            Ok(ScoreReport::new(&p.problem_id, &pred, &links, &truth)?)
        })
        .collect()
}

pub fn eval(out: &Path, truth_dir: &Path) -> anyhow::Result<Vec<ScoreReport>> {
    let layout = Layout::new(out);
    let info: CollectionInfo = read_json(&layout.collection())?;
    let reports = evaluate_dir(out, &info.problems, truth_dir)?;
    write_json(&layout.scores(), &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub report: ScoreReport,
    /// Mean AP over shuffled link lists.
    pub random_map: Option<f64>,
}

pub const BASELINE_SHUFFLES: usize = 1000;

/// Writes the zero-effort baseline (singletons, random links) for every
/// problem and scores it when truth is available.
pub fn baseline(out: &Path, truth_dir: Option<&Path>) -> anyhow::Result<Vec<BaselineScore>> {
    let cfg = load_config(out)?;
    let layout = Layout::new(out);
    let info: CollectionInfo = read_json(&layout.collection())?;
    let root = layout.baseline_dir();
    for (k, p) in info.problems.iter().enumerate() {
        if p.len() < 2 {
            continue;
        }
        let (partition, links) = metrics::zero_effort_baseline(&p.filenames, cfg.seed.wrapping_add(k as u64))?;
        let dir = root.join(&p.problem_id);
        fs::create_dir_all(&dir)?;
        pan::write_clustering(&dir.join("clustering.json"), &partition)?;
        pan::write_ranking(&dir.join("ranking.json"), &links)?;
    }
    let Some(truth_dir) = truth_dir else {
        return Ok(Vec::new());
    };
    let scored: Vec<Problem> = info.problems.into_iter().filter(|p| p.len() >= 2).collect();
    let reports = evaluate_dir(&root, &scored, truth_dir)?;
    let results = reports
        .into_iter()
        .zip(&scored)
        .map(|(report, p)| {
            let truth = load_truth(truth_dir, p)?;
            let random_map = match metrics::random_map_baseline(&truth, BASELINE_SHUFFLES, cfg.seed) {
                Ok(b) => Some(b.mean),
                Err(authclust::Error::NoTrueLinks) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(BaselineScore { report, random_map })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_json(&root.join("scores.json"), &results)?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub index: usize,
    pub hyper: authclust::mhrnn::Hyperparameters,
    pub model: PathBuf,
    pub training_log: PathBuf,
    pub entropy: PathBuf,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub authclust: String,
    pub model_file: u32,
}

/// Everything needed to rerun: pass it back with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub alphabet_hash: String,
    pub alphabet_size: usize,
    pub n_heads: usize,
    pub members: Vec<MemberRecord>,
    pub versions: Versions,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug)]
pub struct PipelineResult {
    pub manifest: RunManifest,
    pub clusters: Vec<ClusterInfo>,
    pub scores: Option<Vec<ScoreReport>>,
}

/// Every stage in order; evaluates and reports when truth is configured.
pub fn pipeline(cfg: &RunConfig) -> anyhow::Result<PipelineResult> {
    let started = unix_now();
    let cfg = prep(cfg)?;
    let out = cfg.out.as_path();
    let layout = Layout::new(out);
    let logs = train(out, None)?;
    score(out, None)?;
    combine(out)?;
    let clusters = cluster(out, None)?;
    let scores = match &cfg.truth {
        Some(truth) => {
            let scores = eval(out, truth)?;
            crate::report::write_report(out, truth)?;
            Some(scores)
        }
        None => None,
    };
    let alphabet = load_alphabet(out)?;
    let info: CollectionInfo = read_json(&layout.collection())?;
    let members = logs
        .iter()
        .enumerate()
        .map(|(i, log)| MemberRecord {
            index: i,
            hyper: cfg.ensemble[i].resolve(info.head_ids.len()),
            model: layout.model(i),
            training_log: layout.training_log(i),
            entropy: layout.member_entropy(i),
            epochs: log.epochs.len(),
            best_epoch: log.best_epoch,
            best_validation_bits: log.best_validation_bits,
        })
        .collect();
    let manifest = RunManifest {
        config: cfg.clone(),
        alphabet_hash: alphabet.hash(),
        alphabet_size: alphabet.len(),
        n_heads: info.head_ids.len(),
        members,
        versions: Versions {
            authclust: env!("CARGO_PKG_VERSION").into(),
            model_file: mhrnn::MODEL_FILE_VERSION,
        },
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(PipelineResult {
        manifest,
        clusters,
        scores,
    })
}

/// Reads back the problem list written by `prep`.
pub fn load_collection_info(out: &Path) -> anyhow::Result<CollectionInfo> {
    read_json(&Layout::new(out).collection())
}
