//! Authorship clustering with a multi-headed character language model.
//!
//! A single recurrent network is trained with one softmax head per
//! document. Scoring every text under every head gives a cross-entropy
//! matrix; after subtracting the mean of control heads it becomes an
//! affinity matrix, from which documents are clustered and pairwise
//! same-author links are ranked.

pub mod affinity;
pub mod clustering;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod mhrnn;
pub mod pan;
pub mod textprep;

pub use affinity::{AffinityMatrix, EntropyMatrix, Link, ProblemMatrix, RankedLinks};
pub use clustering::{Anchors, ClusterOutcome, ClusterinessConfig, Partition, Strategy};
pub use corpus::{Document, Problem, TrainingSet};
pub use error::{Error, Result};
pub use metrics::{BCubed, ScoreReport, TruthPartition};
pub use mhrnn::{Direction, Hyperparameters, MhrnnModel, TrainingLog};
pub use textprep::{Alphabet, EncodedDoc, NormalizedText, Normalizer};
