use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("no token reaches the minimum frequency {0}")]
    EmptyAlphabet(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("directory not found: {}", .0.display())]
    MissingDirectory(PathBuf),
    #[error("problem directory {} holds no .txt files", .0.display())]
    EmptyProblem(PathBuf),
    #[error("file is not valid UTF-8: {}", .0.display())]
    NonUtf8File(PathBuf),
    #[error("requested {requested} control texts but only {available} are available")]
    InsufficientControls { requested: usize, available: usize },
    #[error("unknown document id {0:?}")]
    UnknownDocument(String),

    #[error("document {doc_id:?} has {len} symbols; at least 2 are needed to score it")]
    DocTooShort { doc_id: String, len: usize },
    #[error("training loss became non-finite in epoch {epoch}; try a lower learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("id lists differ between matrices: {0}")]
    IdMismatch(String),
    #[error("no control heads available for normalization")]
    NoControls,

    #[error("anchors are degenerate: cliff {t_cliff} is above diagonal median {t_diag}")]
    DegenerateAnchors { t_cliff: f64, t_diag: f64 },

    #[error("predicted and true partitions cover different documents")]
    UniverseMismatch,
    #[error("truth has no same-author pairs, so average precision is undefined")]
    NoTrueLinks,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
