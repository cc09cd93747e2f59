//! Seeded toy corpora: each "author" is an order-2 character Markov chain.
//!
//! Used by the acceptance tests and benchmarks, and handy for trying the
//! pipeline without real data.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use authclust::clustering::Partition;
use authclust::pan;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_authors: usize,
    pub docs_per_author: usize,
    pub doc_len: usize,
    pub n_controls: usize,
    pub alphabet: Vec<char>,
    /// Dirichlet concentration of each context's successor distribution;
    /// small values give peaked, easily told apart chains.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_authors: 4,
            docs_per_author: 6,
            doc_len: 2000,
            n_controls: 8,
            alphabet: ('a'..='t').collect(),
            concentration: 1.0,
            seed: 1,
        }
    }
}

/// Successor distributions for every pair of preceding symbols.
pub struct MarkovChain {
    k: usize,
    cumulative: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn random(k: usize, concentration: f64, rng: &mut ChaCha8Rng) -> Self {
        let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
        let cumulative = (0..k * k)
            .map(|_| {
                let w: Vec<f64> = (0..k).map(|_| gamma.sample(rng) + 1e-12).collect();
                let total: f64 = w.iter().sum();
                w.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x / total;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        MarkovChain { k, cumulative }
    }

    pub fn generate(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let (mut a, mut b) = (rng.random_range(0..self.k), rng.random_range(0..self.k));
        for _ in 0..len {
            let u: f64 = rng.random();
            let row = &self.cumulative[a * self.k + b];
            let next = row.iter().position(|&c| u < c).unwrap_or(self.k - 1);
            out.push(next);
            (a, b) = (b, next);
        }
        out
    }
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    problem_id: &'a str,
    language: &'a str,
    genre: &'a str,
}

/// Writes `<root>/corpus/problem001/*.txt` with its manifest,
/// `<root>/controls/*.txt` and `<root>/truth/problem001/clustering.json`.
/// Returns the true partition.
pub fn write_corpus(root: &Path, spec: &SyntheticSpec) -> std::io::Result<Partition> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.alphabet.len();
    let chains: Vec<MarkovChain> = (0..=spec.n_authors)
        .map(|_| MarkovChain::random(k, spec.concentration, &mut rng))
        .collect();
    let text = |symbols: Vec<usize>| -> String { symbols.into_iter().map(|s| spec.alphabet[s]).collect() };

    let problem = root.join("corpus").join("problem001");
    fs::create_dir_all(&problem)?;
    let entries = [ManifestEntry {
        problem_id: "problem001",
        language: "en",
        genre: "synthetic",
    }];
    fs::write(root.join("corpus").join("collection.json"), serde_json::to_string_pretty(&entries)?)?;

    // interleave authors so file order says nothing about authorship
    let n_docs = spec.n_authors * spec.docs_per_author;
    let mut doc_ids = Vec::with_capacity(n_docs);
    let mut labels = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let author = d % spec.n_authors;
        let name = format!("document{:04}.txt", d + 1);
        fs::write(problem.join(&name), text(chains[author].generate(spec.doc_len, &mut rng)))?;
        doc_ids.push(name);
        labels.push(author);
    }

    let controls = root.join("controls");
    fs::create_dir_all(&controls)?;
    for c in 0..spec.n_controls {
        let body = text(chains[spec.n_authors].generate(spec.doc_len, &mut rng));
        fs::write(controls.join(format!("control{:03}.txt", c + 1)), body)?;
    }

    let truth = Partition::from_labels(doc_ids, &labels);
    let truth_dir = root.join("truth").join("problem001");
    fs::create_dir_all(&truth_dir)?;
    let json = pan::clustering_to_json(&truth).map_err(std::io::Error::other)?;
    fs::write(truth_dir.join("clustering.json"), json)?;
    Ok(truth)
}
