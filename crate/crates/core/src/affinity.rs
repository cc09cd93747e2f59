//! From per-head cross-entropies to pairwise document affinity.
//!
//! The heads × texts entropy matrix is restricted to one problem, each
//! text column is shifted by the mean score the control heads gave it, and
//! the result `N` becomes the symmetric positive affinity `exp(-(N + Nᵀ))`.
//! Lower divergence therefore means higher affinity.

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Problem;
use crate::error::{Error, Result};
use crate::mhrnn::MhrnnModel;
use crate::textprep::EncodedDoc;

/// Affinity values above this are reported; nothing is clipped.
pub const SATURATION_WARNING: f64 = 1e12;

/// Bits per symbol of every text under every head.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMatrix {
    pub head_ids: Vec<String>,
    pub text_ids: Vec<String>,
    /// `[heads × texts]`
    pub values: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    head_ids: Vec<String>,
    text_ids: Vec<String>,
    values: Vec<f64>,
}

impl Serialize for EntropyMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixFile {
            head_ids: self.head_ids.clone(),
            text_ids: self.text_ids.clone(),
            values: self.values.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EntropyMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = MatrixFile::deserialize(d)?;
        let shape = (f.head_ids.len(), f.text_ids.len());
        let values = Array2::from_shape_vec(shape, f.values).map_err(serde::de::Error::custom)?;
        EntropyMatrix::new(f.head_ids, f.text_ids, values).map_err(serde::de::Error::custom)
    }
}

impl EntropyMatrix {
    pub fn new(head_ids: Vec<String>, text_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (head_ids.len(), text_ids.len()) {
            return Err(Error::ShapeMismatch(format!(
                "values are {:?} but there are {} heads and {} texts",
                values.dim(),
                head_ids.len(),
                text_ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("entropy matrix has non-finite entries".into()));
        }
        Ok(EntropyMatrix {
            head_ids,
            text_ids,
            values,
        })
    }

    pub fn head_index(&self, id: &str) -> Result<usize> {
        self.head_ids
            .iter()
            .position(|h| h == id)
            .ok_or_else(|| Error::UnknownDocument(id.to_owned()))
    }

    pub fn text_index(&self, id: &str) -> Result<usize> {
        self.text_ids
            .iter()
            .position(|t| t == id)
            .ok_or_else(|| Error::UnknownDocument(id.to_owned()))
    }
}

/// Scores every document under every head. `docs[h]` names head `h` when
/// the counts match; texts are scored in parallel.
pub fn score_all(model: &MhrnnModel, docs: &[EncodedDoc]) -> Result<EntropyMatrix> {
    let m = model.n_heads();
    let columns: Vec<Vec<f64>> = docs
        .par_iter()
        .map(|d| model.cross_entropy_all_heads(d))
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((m, docs.len()));
    for (t, col) in columns.iter().enumerate() {
        for (h, &v) in col.iter().enumerate() {
            values[[h, t]] = v;
        }
    }
    let text_ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let head_ids = if m == docs.len() {
        text_ids.clone()
    } else {
        (0..m).map(|h| format!("head{h}")).collect()
    };
    EntropyMatrix::new(head_ids, text_ids, values)
}

/// Elementwise sum of ensemble members' matrices.
pub fn ensemble_sum(matrices: &[EntropyMatrix]) -> Result<EntropyMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidParameter("no matrices to sum".into()))?;
    let mut total = first.values.clone();
    for m in &matrices[1..] {
        if m.values.dim() != total.dim() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", m.values.dim(), total.dim())));
        }
        if m.head_ids != first.head_ids || m.text_ids != first.text_ids {
            return Err(Error::IdMismatch("ensemble members disagree on head or text ids".into()));
        }
        total += &m.values;
    }
    EntropyMatrix::new(first.head_ids.clone(), first.text_ids.clone(), total)
}

/// A square per-problem matrix; rows are heads, columns texts, both in
/// problem order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemMatrix {
    pub doc_ids: Vec<String>,
    pub values: Array2<f64>,
}

/// Problem heads × problem texts, with each text's mean control-head score
/// subtracted from its column. Rows and columns are labelled with the
/// problem's file names.
pub fn normalize_by_controls(
    matrix: &EntropyMatrix,
    control_heads: &BTreeSet<usize>,
    problem: &Problem,
) -> Result<ProblemMatrix> {
    if control_heads.is_empty() {
        return Err(Error::NoControls);
    }
    let rows: Vec<usize> = problem
        .doc_ids
        .iter()
        .map(|id| matrix.head_index(id))
        .collect::<Result<_>>()?;
    let cols: Vec<usize> = problem
        .doc_ids
        .iter()
        .map(|id| matrix.text_index(id))
        .collect::<Result<_>>()?;
    if let Some(&c) = control_heads.iter().find(|c| rows.contains(c) || **c >= matrix.head_ids.len()) {
        return Err(Error::InvalidParameter(format!("control head {c} is not a separate head")));
    }
    let n = rows.len();
    let mut values = Array2::zeros((n, n));
    for (j, &t) in cols.iter().enumerate() {
        let control_mean =
            control_heads.iter().map(|&c| matrix.values[[c, t]]).sum::<f64>() / control_heads.len() as f64;
        for (i, &h) in rows.iter().enumerate() {
            values[[i, j]] = matrix.values[[h, t]] - control_mean;
        }
    }
    Ok(ProblemMatrix {
        doc_ids: problem.filenames.clone(),
        values,
    })
}

/// Symmetric positive affinities; larger means more alike.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub doc_ids: Vec<String>,
    pub values: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct AffinityFile {
    doc_ids: Vec<String>,
    values: Vec<f64>,
}

impl Serialize for AffinityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AffinityFile {
            doc_ids: self.doc_ids.clone(),
            values: self.values.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffinityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = AffinityFile::deserialize(d)?;
        let n = f.doc_ids.len();
        let values = Array2::from_shape_vec((n, n), f.values).map_err(serde::de::Error::custom)?;
        Ok(AffinityMatrix {
            doc_ids: f.doc_ids,
            values,
        })
    }
}

impl AffinityMatrix {
    /// Builds from explicit values; must be square, symmetric and positive.
    pub fn new(doc_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let n = doc_ids.len();
        if values.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!("{:?} for {n} documents", values.dim())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[[i, j]];
                if v.is_nan() || v <= 0.0 || v != values[[j, i]] {
                    return Err(Error::InvalidParameter(format!(
                        "affinity ({i}, {j}) = {v} breaks positivity or symmetry"
                    )));
                }
            }
        }
        Ok(AffinityMatrix { doc_ids, values })
    }

    pub fn n(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Strict upper-triangle pairs `(i, j, affinity)`.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((i, j, self.values[[i, j]]));
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.values.diag().to_vec()
    }

    /// Rows whose diagonal entry is not the row maximum.
    pub fn diagonal_violations(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| {
                let d = self.values[[i, i]];
                (0..self.n()).any(|j| j != i && self.values[[i, j]] > d)
            })
            .collect()
    }
}

/// `exp(-(N + Nᵀ))` componentwise.
pub fn to_affinity(normalized: &ProblemMatrix) -> Result<AffinityMatrix> {
    let m = &normalized.values;
    let n = normalized.doc_ids.len();
    if m.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!("{:?} for {n} documents", m.dim())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("normalized matrix has non-finite entries".into()));
    }
    let values = Array2::from_shape_fn((n, n), |(i, j)| (-(m[[i, j]] + m[[j, i]])).exp());
    let saturated = values.iter().filter(|&&v| v > SATURATION_WARNING).count();
    if saturated > 0 {
        log::warn!("{saturated} affinity entries exceed {SATURATION_WARNING:e}");
    }
    let affinity = AffinityMatrix {
        doc_ids: normalized.doc_ids.clone(),
        values,
    };
    let violations = affinity.diagonal_violations();
    if !violations.is_empty() {
        log::warn!(
            "{} of {} rows have an off-diagonal affinity above their diagonal",
            violations.len(),
            n
        );
    }
    Ok(affinity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub doc_a: String,
    pub doc_b: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLinks {
    /// Descending weight; ties in `(doc_a, doc_b)` order.
    pub links: Vec<Link>,
    /// Set when the scale collapsed: one pair, or all pairs equal.
    pub degenerate: bool,
}

impl RankedLinks {
    /// Sorts arbitrary links into ranking order.
    pub fn from_unsorted(mut links: Vec<Link>) -> Self {
        sort_links(&mut links);
        RankedLinks {
            links,
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

pub(crate) fn sort_links(links: &mut [Link]) {
    links.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| a.doc_a.cmp(&b.doc_a))
            .then_with(|| a.doc_b.cmp(&b.doc_b))
    });
}

/// All `i < j` pairs, affinities rescaled so the largest is 1 and the
/// smallest 0.
pub fn rank_links(affinity: &AffinityMatrix) -> Result<RankedLinks> {
    if affinity.n() < 2 {
        return Err(Error::InvalidParameter("ranking needs at least two documents".into()));
    }
    let pairs = affinity.pairs();
    let lo = pairs.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let (degenerate, fixed) = match pairs.len() {
        1 => (true, Some(1.0)),
        _ if hi == lo => (true, Some(0.5)),
        _ => (false, None),
    };
    let mut order: Vec<&(usize, usize, f64)> = pairs.iter().collect();
    let ids = &affinity.doc_ids;
    order.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| ids[a.0].cmp(&ids[b.0]))
            .then_with(|| ids[a.1].cmp(&ids[b.1]))
    });
    let links = order
        .into_iter()
        .map(|&(i, j, v)| Link {
            doc_a: ids[i].clone(),
            doc_b: ids[j].clone(),
            weight: fixed.unwrap_or_else(|| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)),
        })
        .collect();
    if degenerate {
        log::warn!("link weights are degenerate for {} documents", affinity.n());
    }
    Ok(RankedLinks { links, degenerate })
}
