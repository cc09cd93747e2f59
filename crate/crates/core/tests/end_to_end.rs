use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use authclust::affinity::{normalize_by_controls, rank_links, score_all, to_affinity};
use authclust::clustering::{cluster_problem, ClusterinessConfig};
use authclust::corpus::Problem;
use authclust::metrics::{self, ScoreReport};
use authclust::mhrnn::{self, Hyperparameters};
use authclust::textprep::{build_alphabet, encode, EquivalenceConfig, Normalizer};
use authclust::Partition;

fn text(letters: &str, len: usize, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = letters.chars().collect();
    (0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect()
}

#[test]
fn two_authors_separate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let styles = ["aeiou tnsr", "aeiou klmp"];
    let mut raw: Vec<(String, String)> = (0..4)
        .map(|i| (format!("doc{i}"), text(styles[i % 2], 500, &mut rng)))
        .collect();
    raw.extend((0..2).map(|i| (format!("ctl{i}"), text("aeiou tnsrklmp", 500, &mut rng))));

    let normalizer = Normalizer::new("en", &EquivalenceConfig::default());
    let texts: Vec<_> = raw.iter().map(|(id, t)| normalizer.normalize(id, t)).collect();
    let alphabet = build_alphabet(&texts, 1e-4, "en").unwrap();
    let docs: Vec<_> = texts.iter().map(|t| encode(t, &alphabet, false)).collect();

    let hyper = Hyperparameters {
        hidden_size: 11,
        overfit_epochs: 1,
        max_epochs: 8,
        ..Default::default()
    };
    let mut model = mhrnn::init_model(alphabet.len(), docs.len(), hyper).unwrap();
    mhrnn::train(&mut model, &docs).unwrap();

    let mut bytes = Vec::new();
    mhrnn::write_model(&model, &mut bytes).unwrap();
    let model = mhrnn::read_model(bytes.as_slice()).unwrap();

    let entropy = score_all(&model, &docs).unwrap();
    let problem = Problem {
        problem_id: "p".into(),
        language: "en".into(),
        genre: "test".into(),
        doc_ids: (0..4).map(|i| format!("doc{i}")).collect(),
        filenames: (0..4).map(|i| format!("doc{i}.txt")).collect(),
    };
    let controls: BTreeSet<usize> = [4, 5].into();
    let affinity = to_affinity(&normalize_by_controls(&entropy, &controls, &problem).unwrap()).unwrap();
    assert!(affinity.diagonal_violations().is_empty());

    let truth = Partition::from_labels(problem.filenames.clone(), &[0, 1, 0, 1]);
    let links = rank_links(&affinity).unwrap();
    assert_eq!(metrics::map_score(&links, &truth).unwrap(), 1.0);

    let outcome = cluster_problem(&affinity, &ClusterinessConfig::default(), "en", "test");
    let report = ScoreReport::new("p", &outcome.partition, &links, &truth).unwrap();
    assert_eq!(report.bcubed_precision, 1.0);
}
