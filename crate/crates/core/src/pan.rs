//! The PAN shared task file formats for clusterings and ranked links.
//!
//! ```json
//! [[{"document": "a.txt"}, {"document": "b.txt"}], [{"document": "c.txt"}]]
//! [{"document1": "a.txt", "document2": "b.txt", "score": 0.93}]
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::{Link, RankedLinks};
use crate::clustering::Partition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Member {
    document: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RankedPair {
    document1: String,
    document2: String,
    score: f64,
}

pub fn clustering_to_json(partition: &Partition) -> Result<String> {
    let clusters: Vec<Vec<Member>> = partition
        .named_clusters()
        .into_iter()
        .map(|c| c.into_iter().map(|d| Member { document: d.to_string() }).collect())
        .collect();
    Ok(serde_json::to_string_pretty(&clusters)?)
}

/// Parses a clustering file. With `universe` given, the clustering must
/// cover exactly those documents and uses their order.
pub fn clustering_from_json(json: &str, universe: Option<&[String]>) -> Result<Partition> {
    let clusters: Vec<Vec<Member>> = serde_json::from_str(json)?;
    let doc_ids: Vec<String> = match universe {
        Some(u) => u.to_vec(),
        None => {
            let mut ids: Vec<String> = clusters.iter().flatten().map(|m| m.document.clone()).collect();
            ids.sort();
            ids
        }
    };
    let pos: HashMap<&str, usize> = doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let indexed = clusters
        .iter()
        .map(|c| {
            c.iter()
                .map(|m| pos.get(m.document.as_str()).copied().ok_or(Error::UniverseMismatch))
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Partition::from_clusters(doc_ids.clone(), indexed).map_err(|e| match universe {
        Some(_) => Error::UniverseMismatch,
        None => e,
    })
}

pub fn read_clustering(path: &Path, universe: Option<&[String]>) -> Result<Partition> {
    clustering_from_json(&std::fs::read_to_string(path)?, universe)
}

pub fn write_clustering(path: &Path, partition: &Partition) -> Result<()> {
    std::fs::write(path, clustering_to_json(partition)?)?;
    Ok(())
}

pub fn ranking_to_json(links: &RankedLinks) -> Result<String> {
    let pairs: Vec<RankedPair> = links
        .links
        .iter()
        .map(|l| RankedPair {
            document1: l.doc_a.clone(),
            document2: l.doc_b.clone(),
            score: l.weight,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&pairs)?)
}

/// Parses a ranking file and sorts it; on-disk order does not matter.
pub fn ranking_from_json(json: &str) -> Result<RankedLinks> {
    let pairs: Vec<RankedPair> = serde_json::from_str(json)?;
    let links = pairs
        .into_iter()
        .map(|p| {
            if !p.score.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite score for {}", p.document1)));
            }
            Ok(Link {
                doc_a: p.document1,
                doc_b: p.document2,
                weight: p.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedLinks::from_unsorted(links))
}

pub fn read_ranking(path: &Path) -> Result<RankedLinks> {
    ranking_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_ranking(path: &Path, links: &RankedLinks) -> Result<()> {
    std::fs::write(path, ranking_to_json(links)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids() -> Vec<String> {
        ["a.txt", "b.txt", "c.txt"].map(String::from).to_vec()
    }

    #[test]
    fn clustering_round_trip() {
        let p = Partition::from_clusters(ids(), vec![vec![0, 2], vec![1]]).unwrap();
        let json = clustering_to_json(&p).unwrap();
        assert!(json.contains("\"document\": \"c.txt\""));
        assert_eq!(clustering_from_json(&json, Some(&ids())).unwrap(), p);
        assert_eq!(clustering_from_json(&json, None).unwrap(), p);
    }

    #[test]
    fn clustering_must_match_universe() {
        let json = r#"[[{"document": "a.txt"}], [{"document": "b.txt"}]]"#;
        assert!(matches!(clustering_from_json(json, Some(&ids())), Err(Error::UniverseMismatch)));
        let json = r#"[[{"document": "a.txt"}, {"document": "z.txt"}]]"#;
        assert!(clustering_from_json(json, Some(&ids())).is_err());
        let json = r#"[[{"document": "a.txt"}, {"document": "a.txt"}]]"#;
        assert!(clustering_from_json(json, None).is_err());
    }

    #[test]
    fn ranking_sorted_on_read() {
        let json = r#"[{"document1": "a.txt", "document2": "b.txt", "score": 0.1},
                       {"document1": "a.txt", "document2": "c.txt", "score": 0.9}]"#;
        let links = ranking_from_json(json).unwrap();
        assert_eq!(links.links[0].doc_b, "c.txt");
        let again = ranking_from_json(&ranking_to_json(&links).unwrap()).unwrap();
        assert_eq!(again, links);
    }
}
