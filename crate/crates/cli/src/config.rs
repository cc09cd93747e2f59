use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use authclust::clustering::{ClusterinessConfig, Strategy};
use authclust::mhrnn::{Direction, Hyperparameters};

/// Head count of a full-size combined model; default ensemble
/// sizes shrink in proportion below this.
const REFERENCE_HEADS: usize = 269;
const MIN_HIDDEN: usize = 15;

/// One ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MemberConfig {
    #[serde(flatten)]
    pub hyper: Hyperparameters,
    /// When set, the first-epoch leak becomes `1 / (leak_divisor * heads)`.
    pub leak_divisor: Option<f64>,
}

impl MemberConfig {
    /// Hyperparameters with the leak resolved for `n_heads` heads.
    pub fn resolve(&self, n_heads: usize) -> Hyperparameters {
        let mut hyper = self.hyper.clone();
        if let Some(d) = self.leak_divisor {
            hyper.leak = 1.0 / (d * n_heads as f64);
        }
        hyper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub controls: Option<PathBuf>,
    /// Control texts to sample; `None` takes every file.
    pub n_controls: Option<usize>,
    pub language: String,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
    /// Empty means the default ensemble for the language, sized when the
    /// corpus is loaded.
    pub ensemble: Vec<MemberConfig>,
    /// Applied to every member when set.
    pub df_threshold: Option<f64>,
    /// Applied to every member when set.
    pub reverse: Option<bool>,
    pub clusteriness: ClusterinessConfig,
    pub seed: u64,
    pub alphabet_min_frequency: f64,
    pub max_problem_docs: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::new(),
            controls: None,
            n_controls: None,
            language: "en".into(),
            out: PathBuf::from("out"),
            truth: None,
            ensemble: Vec::new(),
            df_threshold: None,
            reverse: None,
            clusteriness: ClusterinessConfig::default(),
            seed: 1,
            alphabet_min_frequency: 1e-4,
            max_problem_docs: authclust::corpus::DEFAULT_MAX_PROBLEM_DOCS,
            jobs: 0,
        }
    }
}

impl RunConfig {
    /// Reads a run config, or the config inside a run manifest.
    pub fn from_json_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let value = match value.get("config") {
            Some(inner) if value.get("members").is_some() => inner.clone(),
            _ => value,
        };
        Ok(serde_json::from_value(value)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.df_threshold.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            bail!("df_threshold must lie in (0, 1)");
        }
        if !(self.alphabet_min_frequency > 0.0 && self.alphabet_min_frequency < 1.0) {
            bail!("alphabet_min_frequency must lie in (0, 1)");
        }
        for (i, m) in self.ensemble.iter().enumerate() {
            m.hyper.validate().with_context(|| format!("ensemble member {i}"))?;
            if m.leak_divisor.is_some_and(|d| d < 1.0) {
                bail!("ensemble member {i}: leak_divisor must be at least 1");
            }
        }
        self.clusteriness.validate()?;
        Ok(())
    }

    /// Fills in the default ensemble, per-member seeds and the
    /// ensemble-wide overrides.
    pub fn resolve_ensemble(&mut self, n_heads: usize) {
        if self.ensemble.is_empty() {
            self.ensemble = default_ensemble(&self.language, n_heads);
        }
        for (i, m) in self.ensemble.iter_mut().enumerate() {
            m.hyper.seed = self.seed.wrapping_add(i as u64);
            if let Some(t) = self.df_threshold {
                m.hyper.df_threshold = Some(t);
            }
            if let Some(r) = self.reverse {
                m.hyper.direction = if r { Direction::Reverse } else { Direction::Forward };
            }
        }
    }

    pub fn uses_word_masking(&self) -> bool {
        self.ensemble.iter().any(|m| m.hyper.df_threshold.is_some())
    }
}

/// `--clusteriness` takes a number applied everywhere or a config file.
pub fn parse_clusteriness(arg: &str) -> anyhow::Result<ClusterinessConfig> {
    match arg.parse::<f64>() {
        Ok(c) => {
            let cfg = ClusterinessConfig::default().with_c(c);
            cfg.validate()?;
            Ok(cfg)
        }
        Err(_) => Ok(ClusterinessConfig::from_json_file(Path::new(arg))?),
    }
}

pub fn parse_strategy(arg: &str) -> anyhow::Result<Strategy> {
    Ok(arg.parse()?)
}

/// (size, psn, leak divisor, overfit epochs, reversed, word DF threshold)
type Row = (usize, f64, f64, usize, bool, Option<f64>);

const ENGLISH: [Row; 5] = [
    (299, 0.5, 2.0, 4, false, None),
    (139, 0.3, 2.0, 5, true, None),
    (239, 1.0, 3.0, 2, true, Some(0.005)),
    (139, 0.3, 2.0, 5, false, Some(0.01)),
    (159, 0.5, 2.0, 2, false, None),
];

const DUTCH: [Row; 5] = [
    (299, 0.5, 2.0, 4, false, None),
    (159, 0.3, 3.0, 2, false, None),
    (139, 0.3, 2.0, 4, true, Some(0.005)),
    (99, 0.5, 2.0, 3, false, Some(0.01)),
    (139, 0.3, 2.0, 5, true, None),
];

const GREEK: [Row; 5] = [
    (299, 0.3, 2.0, 3, false, Some(0.005)),
    (279, 0.5, 2.0, 4, false, None),
    (159, 0.3, 3.0, 5, true, None),
    (159, 1.0, 2.0, 3, false, Some(0.005)),
    (139, 0.3, 2.0, 5, true, None),
];

/// Hidden sizes scale with the number of heads, kept one below a
/// multiple of four.
pub fn scaled_hidden_size(size: usize, n_heads: usize) -> usize {
    let f = (n_heads as f64 / REFERENCE_HEADS as f64).min(1.0);
    let scaled = ((size + 1) as f64 * f / 4.0).round() as usize * 4;
    scaled.saturating_sub(1).max(MIN_HIDDEN)
}

/// Five members varying size, noise, leak, overfit, direction and word
/// masking per language.
pub fn default_ensemble(language: &str, n_heads: usize) -> Vec<MemberConfig> {
    let rows = match language {
        "nl" | "dutch" => &DUTCH,
        l if authclust::textprep::is_greek(l) => &GREEK,
        _ => &ENGLISH,
    };
    rows.iter()
        .map(|&(size, psn, divisor, overfit, reversed, df)| MemberConfig {
            hyper: Hyperparameters {
                hidden_size: scaled_hidden_size(size, n_heads),
                psn,
                overfit_epochs: overfit,
                direction: if reversed { Direction::Reverse } else { Direction::Forward },
                df_threshold: df,
                ..Default::default()
            },
            leak_divisor: Some(divisor),
        })
        .collect()
}
