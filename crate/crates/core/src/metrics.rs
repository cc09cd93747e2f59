//! BCubed and mean average precision, plus the two chance baselines.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{Link, RankedLinks};
use crate::clustering::{cowardly, Partition};
use crate::error::{Error, Result};

/// Ground truth has the same shape as a prediction.
pub type TruthPartition = Partition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl BCubed {
    fn new(precision: f64, recall: f64) -> Self {
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BCubed { precision, recall, f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub problem_id: String,
    pub bcubed_precision: f64,
    pub bcubed_recall: f64,
    pub bcubed_f: f64,
    /// None when the truth has no same-author pair.
    pub map: Option<f64>,
}

impl ScoreReport {
    pub fn new(problem_id: &str, pred: &Partition, links: &RankedLinks, truth: &TruthPartition) -> Result<Self> {
        let b = bcubed(pred, truth)?;
        let map = match map_score(links, truth) {
            Ok(m) => Some(m),
            Err(Error::NoTrueLinks) => None,
            Err(e) => return Err(e),
        };
        Ok(ScoreReport {
            problem_id: problem_id.to_string(),
            bcubed_precision: b.precision,
            bcubed_recall: b.recall,
            bcubed_f: b.f,
            map,
        })
    }
}

/// Truth cluster label for each of `pred`'s documents, in `pred` order.
fn aligned_truth_labels(pred: &Partition, truth: &TruthPartition) -> Result<Vec<usize>> {
    if pred.n_docs() != truth.n_docs() {
        return Err(Error::UniverseMismatch);
    }
    let truth_labels = truth.labels();
    let pos: HashMap<&str, usize> = truth.doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    if pos.len() != truth.n_docs() {
        return Err(Error::UniverseMismatch);
    }
    pred.doc_ids
        .iter()
        .map(|d| pos.get(d.as_str()).map(|&i| truth_labels[i]).ok_or(Error::UniverseMismatch))
        .collect()
}

pub fn bcubed(pred: &Partition, truth: &TruthPartition) -> Result<BCubed> {
    let truth_of = aligned_truth_labels(pred, truth)?;
    let n = pred.n_docs();
    if n == 0 {
        return Err(Error::UniverseMismatch);
    }
    let mut truth_size: HashMap<usize, usize> = HashMap::new();
    for &t in &truth_of {
        *truth_size.entry(t).or_default() += 1;
    }
    let (mut p, mut r) = (0.0, 0.0);
    for cluster in &pred.clusters {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for &i in cluster {
            *overlap.entry(truth_of[i]).or_default() += 1;
        }
        for (t, &k) in &overlap {
            // k documents each share k with their predicted and true cluster
            let k = k as f64;
            p += k * k / cluster.len() as f64;
            r += k * k / truth_size[t] as f64;
        }
    }
    Ok(BCubed::new(p / n as f64, r / n as f64))
}

/// Same quantity computed document by document over all pairs. Quadratic;
/// meant for cross-checking [`bcubed`].
pub fn bcubed_oracle(pred: &Partition, truth: &TruthPartition) -> Result<BCubed> {
    let truth_of = aligned_truth_labels(pred, truth)?;
    let pred_of = pred.labels();
    let n = pred.n_docs();
    let (mut p, mut r) = (0.0, 0.0);
    for d in 0..n {
        let (mut both, mut in_pred, mut in_truth) = (0usize, 0usize, 0usize);
        for e in 0..n {
            let sp = pred_of[d] == pred_of[e];
            let st = truth_of[d] == truth_of[e];
            in_pred += sp as usize;
            in_truth += st as usize;
            both += (sp && st) as usize;
        }
        p += both as f64 / in_pred as f64;
        r += both as f64 / in_truth as f64;
    }
    Ok(BCubed::new(p / n as f64, r / n as f64))
}

/// Average precision of a relevance sequence, given the total number of
/// relevant items (which may exceed those present in the sequence).
pub fn average_precision(relevant: impl IntoIterator<Item = bool>, total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::NoTrueLinks);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, rel) in relevant.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Number of same-cluster pairs.
pub fn true_pair_count(truth: &TruthPartition) -> usize {
    truth.clusters.iter().map(|c| c.len() * (c.len() - 1) / 2).sum()
}

/// AP of the ranked list against truth. Links are taken in the order
/// given; true pairs missing from the list count as never retrieved.
pub fn map_score(links: &RankedLinks, truth: &TruthPartition) -> Result<f64> {
    let labels = truth.labels();
    let label: HashMap<&str, usize> = truth.doc_ids.iter().map(String::as_str).zip(labels).collect();
    let rel = links
        .links
        .iter()
        .map(|l| match (label.get(l.doc_a.as_str()), label.get(l.doc_b.as_str())) {
            (Some(a), Some(b)) => Ok(a == b),
            _ => Err(Error::UniverseMismatch),
        })
        .collect::<Result<Vec<bool>>>()?;
    average_precision(rel, true_pair_count(truth))
}

/// Mean of per-problem scores, skipping undefined ones.
pub fn mean_defined(scores: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleBaseline {
    pub mean: f64,
    pub scores: Vec<f64>,
}

/// AP of uniformly shuffled pair lists. Shuffle `i` draws from its own
/// stream of the seeded generator, so results do not depend on threads.
pub fn random_map_baseline(truth: &TruthPartition, shuffles: usize, seed: u64) -> Result<ShuffleBaseline> {
    if shuffles == 0 {
        return Err(Error::InvalidParameter("need at least one shuffle".into()));
    }
    let total = true_pair_count(truth);
    if total == 0 {
        return Err(Error::NoTrueLinks);
    }
    let labels = truth.labels();
    let n = labels.len();
    let relevance: Vec<bool> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| labels[i] == labels[j])
        .collect();
    let scores: Vec<f64> = (0..shuffles)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut order = relevance.clone();
            order.shuffle(&mut rng);
            average_precision(order, total).expect("total > 0")
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / shuffles as f64;
    Ok(ShuffleBaseline { mean, scores })
}

/// Singletons plus uniformly random link weights.
pub fn zero_effort_baseline(doc_ids: &[String], seed: u64) -> Result<(Partition, RankedLinks)> {
    if doc_ids.len() < 2 {
        return Err(Error::InvalidParameter("baseline needs at least two documents".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = Vec::with_capacity(doc_ids.len() * (doc_ids.len() - 1) / 2);
    for i in 0..doc_ids.len() {
        for j in i + 1..doc_ids.len() {
            links.push(Link {
                doc_a: doc_ids[i].clone(),
                doc_b: doc_ids[j].clone(),
                weight: rng.random::<f64>(),
            });
        }
    }
    Ok((cowardly(doc_ids), RankedLinks::from_unsorted(links)))
}
