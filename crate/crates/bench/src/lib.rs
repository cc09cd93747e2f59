//! Seeded fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use authclust::mhrnn::{self, Hyperparameters, MhrnnModel};
use authclust::textprep::EncodedDoc;
use authclust::{AffinityMatrix, Partition};

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("doc{i:03}")).collect()
}

/// Uniform random documents over `alphabet_size` symbols.
pub fn random_docs(n: usize, len: usize, alphabet_size: usize, seed: u64) -> Vec<EncodedDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids(n)
        .into_iter()
        .map(|doc_id| EncodedDoc {
            doc_id,
            symbols: (0..len).map(|_| rng.random_range(0..alphabet_size)).collect(),
            reversed: false,
        })
        .collect()
}

pub fn model(alphabet_size: usize, n_heads: usize, hidden_size: usize) -> MhrnnModel {
    let hyper = Hyperparameters {
        hidden_size,
        max_epochs: 1,
        ..Default::default()
    };
    mhrnn::init_model(alphabet_size, n_heads, hyper).expect("valid hyperparameters")
}

/// Symmetric affinity with a dominant diagonal.
pub fn affinity(n: usize, seed: u64) -> AffinityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::zeros((n, n));
    for i in 0..n {
        v[[i, i]] = rng.random_range(5.0..10.0);
        for j in i + 1..n {
            let x = rng.random_range(0.1..5.0);
            v[[i, j]] = x;
            v[[j, i]] = x;
        }
    }
    AffinityMatrix::new(ids(n), v).expect("symmetric finite matrix")
}

pub fn partition(n: usize, k: usize, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    Partition::from_labels(ids(n), &labels)
}
