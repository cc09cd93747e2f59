//! Threshold clustering of an affinity matrix.
//!
//! Four strategies share one threshold `t` on affinity:
//!
//! * `cowardly`: every document alone.
//! * `single_link`: connected components of the links with affinity `>= t`.
//! * `cluster_aware`: greedy merging along links `>= t`, highest first,
//!   accepting a merge only if the mean affinity over all pairs of the
//!   merged cluster stays `>= t`.
//! * `pair_first`: documents first pair off monogamously along links
//!   `>= t`; only then are the pairs and leftover singletons merged with
//!   the cluster-aware rule. This is a reconstruction of an algorithm known
//!   only by its behavior: everything partners up before any larger
//!   cluster can form, which makes the cluster-count cliff steep.
//!
//! The threshold comes from two anchors: the median of the diagonal and
//! the highest threshold at which the strategy collapses everything into a
//! single cluster. A clusteriness coefficient `c` interpolates
//! `t = t_diag - c * (t_diag - t_cliff)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};

/// Disjoint clusters covering `doc_ids`, stored as index lists.
///
/// Canonical form: each cluster sorted, clusters ordered by first member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub doc_ids: Vec<String>,
    pub clusters: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_clusters(doc_ids: Vec<String>, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; doc_ids.len()];
        for c in &clusters {
            if c.is_empty() {
                return Err(Error::InvalidParameter("empty cluster".into()));
            }
            for &i in c {
                if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidParameter(format!("document {i} missing or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter("clusters do not cover every document".into()));
        }
        Ok(Self::canonical(doc_ids, clusters))
    }

    /// Groups documents by label; labels are arbitrary.
    pub fn from_labels(doc_ids: Vec<String>, labels: &[usize]) -> Self {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        Self::canonical(doc_ids, groups.into_values().collect())
    }

    fn canonical(doc_ids: Vec<String>, mut clusters: Vec<Vec<usize>>) -> Self {
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);
        Partition { doc_ids, clusters }
    }

    pub fn singletons(doc_ids: Vec<String>) -> Self {
        let clusters = (0..doc_ids.len()).map(|i| vec![i]).collect();
        Partition { doc_ids, clusters }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Cluster index of every document.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.n_docs()];
        for (c, members) in self.clusters.iter().enumerate() {
            for &i in members {
                labels[i] = c;
            }
        }
        labels
    }

    /// True if every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        let outer = coarser.labels();
        self.clusters
            .iter()
            .all(|c| c.iter().all(|&i| outer[i] == outer[c[0]]))
    }

    /// Clusters as lists of document ids.
    pub fn named_clusters(&self) -> Vec<Vec<&str>> {
        self.clusters
            .iter()
            .map(|c| c.iter().map(|&i| self.doc_ids[i].as_str()).collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn labels(&mut self) -> Vec<usize> {
        (0..self.parent.len()).map(|i| self.find(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SingleLink,
    ClusterAware,
    #[default]
    PairFirst,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_link" | "single-link" => Ok(Strategy::SingleLink),
            "cluster_aware" | "cluster-aware" => Ok(Strategy::ClusterAware),
            "pair_first" | "pair-first" => Ok(Strategy::PairFirst),
            other => Err(Error::InvalidParameter(format!("unknown strategy {other:?}"))),
        }
    }
}

impl Strategy {
    pub fn cluster(self, affinity: &AffinityMatrix, t: f64) -> Partition {
        match self {
            Strategy::SingleLink => single_link(affinity, t),
            Strategy::ClusterAware => cluster_aware(affinity, t),
            Strategy::PairFirst => pair_first(affinity, t),
        }
    }
}

pub fn cowardly(doc_ids: &[String]) -> Partition {
    Partition::singletons(doc_ids.to_vec())
}

/// Links at or above `t`, highest first, ties in index order.
fn links_at_or_above(affinity: &AffinityMatrix, t: f64) -> Vec<(usize, usize, f64)> {
    let mut links: Vec<_> = affinity.pairs().into_iter().filter(|p| p.2 >= t).collect();
    links.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    links
}

pub fn single_link(affinity: &AffinityMatrix, t: f64) -> Partition {
    let mut uf = UnionFind::new(affinity.n());
    for (i, j, _) in links_at_or_above(affinity, t) {
        uf.union(i, j);
    }
    Partition::from_labels(affinity.doc_ids.clone(), &uf.labels())
}

/// Mean-affinity agglomeration state: live clusters with their internal
/// pair sums and the pairwise sums between clusters.
struct MeanMerger<'a> {
    affinity: &'a AffinityMatrix,
    label: Vec<usize>,
    members: Vec<Vec<usize>>,
    within: Vec<f64>,
    between: Vec<Vec<f64>>,
}

impl<'a> MeanMerger<'a> {
    fn new(affinity: &'a AffinityMatrix, start: &Partition) -> Self {
        let n_clusters = start.n_clusters();
        let label = start.labels();
        let members = start.clusters.clone();
        let mut within = vec![0.0; n_clusters];
        let mut between = vec![vec![0.0; n_clusters]; n_clusters];
        for (i, j, v) in affinity.pairs() {
            let (a, b) = (label[i], label[j]);
            if a == b {
                within[a] += v;
            } else {
                between[a][b] += v;
                between[b][a] += v;
            }
        }
        MeanMerger {
            affinity,
            label,
            members,
            within,
            between,
        }
    }

    fn merged_mean(&self, a: usize, b: usize) -> f64 {
        let n = (self.members[a].len() + self.members[b].len()) as f64;
        (self.within[a] + self.within[b] + self.between[a][b]) / (n * (n - 1.0) / 2.0)
    }

    fn merge(&mut self, a: usize, b: usize) {
        self.within[a] += self.within[b] + self.between[a][b];
        let moved = std::mem::take(&mut self.members[b]);
        for &i in &moved {
            self.label[i] = a;
        }
        self.members[a].extend(moved);
        for c in 0..self.between.len() {
            if c != a && c != b {
                let v = self.between[b][c];
                self.between[a][c] += v;
                self.between[c][a] += v;
            }
            self.between[b][c] = 0.0;
            self.between[c][b] = 0.0;
        }
        self.between[a][b] = 0.0;
        self.between[b][a] = 0.0;
        self.within[b] = 0.0;
    }

    /// Repeatedly merges along the highest qualifying link.
    fn run(mut self, t: f64) -> Partition {
        let links = links_at_or_above(self.affinity, t);
        'outer: loop {
            for &(i, j, _) in &links {
                let (a, b) = (self.label[i], self.label[j]);
                if a != b && self.merged_mean(a, b) >= t {
                    self.merge(a.min(b), a.max(b));
                    continue 'outer;
                }
            }
            break;
        }
        let clusters = self.members.into_iter().filter(|m| !m.is_empty()).collect();
        Partition::canonical(self.affinity.doc_ids.clone(), clusters)
    }
}

pub fn cluster_aware(affinity: &AffinityMatrix, t: f64) -> Partition {
    MeanMerger::new(affinity, &cowardly(&affinity.doc_ids)).run(t)
}

/// First phase of [`pair_first`]: links `>= t`, highest first, joining
/// two documents only while both are still alone.
pub fn monogamous_pairs(affinity: &AffinityMatrix, t: f64) -> Partition {
    let n = affinity.n();
    let mut partner: Vec<Option<usize>> = vec![None; n];
    for (i, j, _) in links_at_or_above(affinity, t) {
        if partner[i].is_none() && partner[j].is_none() {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| partner[i].map_or(i, |p| p.min(i))).collect();
    Partition::from_labels(affinity.doc_ids.clone(), &labels)
}

pub fn pair_first(affinity: &AffinityMatrix, t: f64) -> Partition {
    let pairs = monogamous_pairs(affinity, t);
    MeanMerger::new(affinity, &pairs).run(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub t_cliff: f64,
    pub t_diag: f64,
    /// False when no candidate threshold produced a single cluster and
    /// `t_cliff` fell back to the smallest off-diagonal affinity.
    pub cliff_found: bool,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Distinct off-diagonal affinities, highest first. Partitions can only
/// change at these values.
pub fn candidate_thresholds(affinity: &AffinityMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = affinity.pairs().into_iter().map(|p| p.2).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

/// Highest threshold at which single-link gives one cluster: the weakest
/// edge of the maximum spanning tree.
fn single_link_cliff(affinity: &AffinityMatrix) -> f64 {
    let mut uf = UnionFind::new(affinity.n());
    let mut joined = 1;
    for (i, j, v) in links_at_or_above(affinity, f64::NEG_INFINITY) {
        if uf.union(i, j) {
            joined += 1;
            if joined == affinity.n() {
                return v;
            }
        }
    }
    unreachable!("complete graph always connects")
}

pub fn find_anchors(affinity: &AffinityMatrix, strategy: Strategy) -> Result<Anchors> {
    if affinity.n() < 2 {
        return Err(Error::InvalidParameter("anchors need at least two documents".into()));
    }
    let t_diag = median(&affinity.diagonal());
    let candidates = candidate_thresholds(affinity);
    let lowest = *candidates.last().expect("n >= 2");
    let cliff = match strategy {
        Strategy::SingleLink => Some(single_link_cliff(affinity)),
        Strategy::ClusterAware | Strategy::PairFirst => {
            // Any merged cluster has mean affinity >= t, so a single cluster
            // is impossible above the mean over all pairs.
            let pairs = affinity.pairs();
            let overall = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
            let bound = overall + 1e-9 * overall.abs();
            candidates
                .iter()
                .copied()
                .filter(|&t| t <= bound)
                .find(|&t| strategy.cluster(affinity, t).n_clusters() == 1)
        }
    };
    let anchors = match cliff {
        Some(t_cliff) => Anchors {
            t_cliff,
            t_diag,
            cliff_found: true,
        },
        None => {
            log::warn!("no threshold collapses the problem into one cluster");
            Anchors {
                t_cliff: lowest,
                t_diag,
                cliff_found: false,
            }
        }
    };
    if anchors.t_cliff > anchors.t_diag {
        return Err(Error::DegenerateAnchors {
            t_cliff: anchors.t_cliff,
            t_diag: anchors.t_diag,
        });
    }
    Ok(anchors)
}

/// `t_diag - c * (t_diag - t_cliff)`
pub fn clusteriness_threshold(anchors: &Anchors, c: f64) -> f64 {
    anchors.t_diag - c * (anchors.t_diag - anchors.t_cliff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterinessSetting {
    pub strategy: Strategy,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterinessEntry {
    pub language: String,
    pub genre: String,
    pub strategy: Strategy,
    pub c: f64,
}

/// Per (language, genre) clusteriness, with a fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterinessConfig {
    pub default: ClusterinessSetting,
    pub entries: Vec<ClusterinessEntry>,
}

impl Default for ClusterinessConfig {
    /// Coefficients tuned on the PAN 2016 training problems; elsewhere they
    /// are only a starting point.
    fn default() -> Self {
        let entry = |language: &str, genre: &str, c: f64| ClusterinessEntry {
            language: language.into(),
            genre: genre.into(),
            strategy: Strategy::PairFirst,
            c,
        };
        ClusterinessConfig {
            default: ClusterinessSetting {
                strategy: Strategy::PairFirst,
                c: 0.81,
            },
            entries: vec![
                entry("en", "articles", 0.82),
                entry("en", "reviews", 0.79),
                entry("nl", "articles", 0.81),
                entry("nl", "reviews", 0.77),
                entry("gr", "articles", 0.85),
                entry("gr", "reviews", 0.82),
            ],
        }
    }
}

impl ClusterinessConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: ClusterinessConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cs = std::iter::once(self.default.c).chain(self.entries.iter().map(|e| e.c));
        for c in cs {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidParameter(format!("clusteriness {c} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, language: &str, genre: &str) -> ClusterinessSetting {
        self.entries
            .iter()
            .find(|e| e.language == language && e.genre == genre)
            .map(|e| ClusterinessSetting {
                strategy: e.strategy,
                c: e.c,
            })
            .unwrap_or(self.default)
    }

    /// Replaces the strategy everywhere.
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.default.strategy = strategy;
        for e in &mut self.entries {
            e.strategy = strategy;
        }
        self
    }

    /// Replaces `c` everywhere.
    pub fn with_c(mut self, c: f64) -> Self {
        self.default.c = c;
        for e in &mut self.entries {
            e.c = c;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub partition: Partition,
    pub setting: ClusterinessSetting,
    pub anchors: Option<Anchors>,
    pub threshold: Option<f64>,
    /// Anchors were degenerate and the cowardly partition was used.
    pub fell_back: bool,
}

pub fn cluster_with(affinity: &AffinityMatrix, setting: ClusterinessSetting) -> ClusterOutcome {
    let coward = || ClusterOutcome {
        partition: cowardly(&affinity.doc_ids),
        setting,
        anchors: None,
        threshold: None,
        fell_back: true,
    };
    if affinity.n() < 2 {
        return coward();
    }
    match find_anchors(affinity, setting.strategy) {
        Ok(anchors) => {
            let t = clusteriness_threshold(&anchors, setting.c);
            ClusterOutcome {
                partition: setting.strategy.cluster(affinity, t),
                setting,
                anchors: Some(anchors),
                threshold: Some(t),
                fell_back: false,
            }
        }
        Err(e) => {
            log::warn!("falling back to singletons: {e}");
            coward()
        }
    }
}

/// Anchors, threshold and strategy for one problem's language and genre.
pub fn cluster_problem(
    affinity: &AffinityMatrix,
    config: &ClusterinessConfig,
    language: &str,
    genre: &str,
) -> ClusterOutcome {
    cluster_with(affinity, config.lookup(language, genre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use proptest::strategy::Strategy as Gen;
    use super::Strategy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    fn aff(values: Array2<f64>) -> AffinityMatrix {
        AffinityMatrix::new(ids(values.nrows()), values).unwrap()
    }

    fn random_affinity(n: usize, rng: &mut ChaCha8Rng) -> AffinityMatrix {
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            v[[i, i]] = rng.random_range(5.0..10.0);
            for j in i + 1..n {
                let x = rng.random_range(0.1..5.0);
                v[[i, j]] = x;
                v[[j, i]] = x;
            }
        }
        aff(v)
    }

    fn clusters(p: &Partition) -> Vec<Vec<usize>> {
        p.clusters.clone()
    }

    #[test]
    fn cowardly_singletons() {
        assert_eq!(cowardly(&ids(3)).n_clusters(), 3);
        assert_eq!(cowardly(&ids(1)).clusters, vec![vec![0]]);
    }

    #[test]
    fn single_link_extremes_and_chain() {
        let a = aff(array![[9.0, 5.0, 1.0], [5.0, 9.0, 4.0], [1.0, 4.0, 9.0]]);
        assert_eq!(single_link(&a, 5.5).n_clusters(), 3);
        assert_eq!(single_link(&a, 1.0).n_clusters(), 1);
        // a-b and b-c strong, a-c weak: still one cluster
        assert_eq!(clusters(&single_link(&a, 4.0)), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn cluster_aware_equal_affinities() {
        let a = aff(Array2::from_elem((4, 4), 3.0));
        assert_eq!(cluster_aware(&a, 3.0).n_clusters(), 1);
        assert_eq!(cluster_aware(&a, 3.1).n_clusters(), 4);
    }

    #[test]
    fn cluster_aware_keeps_tight_pairs_apart() {
        // {a,b}, {c,d} tight, b-d strong, other cross links weak; e loose.
        let (a, b, c, d, e) = (0, 1, 2, 3, 4);
        let mut v = Array2::from_elem((5, 5), 1.0);
        for i in 0..5 {
            v[[i, i]] = 10.0;
        }
        let mut set = |i: usize, j: usize, x: f64| {
            v[[i, j]] = x;
            v[[j, i]] = x;
        };
        set(a, b, 8.0);
        set(c, d, 8.0);
        set(b, d, 7.5);
        set(a, c, 1.0);
        set(a, d, 1.0);
        set(b, c, 1.0);
        set(c, e, 1.0);
        let m = aff(v);
        let t = 5.0;
        assert_eq!(clusters(&cluster_aware(&m, t)), vec![vec![0, 1], vec![2, 3], vec![4]]);
        // single link chains them together
        assert_eq!(clusters(&single_link(&m, t)), vec![vec![0, 1, 2, 3], vec![4]]);
    }

    /// Replays the greedy rule from scratch at every step.
    fn naive_cluster_aware(a: &AffinityMatrix, t: f64, start: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        let mut cl = start;
        let mut links: Vec<(usize, usize, f64)> = a.pairs().into_iter().filter(|p| p.2 >= t).collect();
        links.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        loop {
            let mut merged = false;
            for &(i, j, _) in &links {
                let ci = cl.iter().position(|c| c.contains(&i)).unwrap();
                let cj = cl.iter().position(|c| c.contains(&j)).unwrap();
                if ci == cj {
                    continue;
                }
                let union: Vec<usize> = cl[ci].iter().chain(&cl[cj]).copied().collect();
                let mut sum = 0.0;
                let mut n = 0.0;
                for x in 0..union.len() {
                    for y in x + 1..union.len() {
                        sum += a.get(union[x], union[y]);
                        n += 1.0;
                    }
                }
                if sum / n >= t {
                    let other = cl.remove(ci.max(cj));
                    cl[ci.min(cj)].extend(other);
                    merged = true;
                    break;
                }
            }
            if !merged {
                break;
            }
        }
        Partition::from_clusters(a.doc_ids.clone(), cl).unwrap().clusters
    }

    #[test]
    fn cluster_aware_matches_replay() {
        let a = aff(array![
            [9.0, 6.0, 5.0, 2.0],
            [6.0, 9.0, 3.0, 4.5],
            [5.0, 3.0, 9.0, 4.0],
            [2.0, 4.5, 4.0, 9.0]
        ]);
        for t in [2.0, 3.0, 3.9, 4.0, 4.5, 4.6, 5.0, 6.0, 7.0] {
            let singles = (0..4).map(|i| vec![i]).collect();
            assert_eq!(clusters(&cluster_aware(&a, t)), naive_cluster_aware(&a, t, singles), "t = {t}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let a = random_affinity(7, &mut rng);
            for t in candidate_thresholds(&a) {
                let singles = (0..7).map(|i| vec![i]).collect();
                assert_eq!(clusters(&cluster_aware(&a, t)), naive_cluster_aware(&a, t, singles));
                let pairs = monogamous_pairs(&a, t).clusters;
                assert_eq!(clusters(&pair_first(&a, t)), naive_cluster_aware(&a, t, pairs));
            }
        }
    }

    #[test]
    fn triangle_with_weak_third_side() {
        // a-b > a-c >= t > b-c, and the triangle mean falls below t
        let m = aff(array![[9.0, 7.0, 6.0], [7.0, 9.0, 3.0], [6.0, 3.0, 9.0]]);
        let t = 5.5;
        assert_eq!(clusters(&single_link(&m, t)), vec![vec![0, 1, 2]]);
        assert_eq!(clusters(&cluster_aware(&m, t)), vec![vec![0, 1], vec![2]]);
        assert_eq!(clusters(&pair_first(&m, t)), vec![vec![0, 1], vec![2]]);
        assert_eq!(pair_first(&m, 7.5).n_clusters(), 3);
        assert_eq!(pair_first(&m, 5.0).n_clusters(), 1);
    }

    #[test]
    fn anchors_simple() {
        let mut v = Array2::from_elem((3, 3), 2.0);
        v.diag_mut().fill(10.0);
        let a = aff(v);
        for s in [Strategy::SingleLink, Strategy::ClusterAware, Strategy::PairFirst] {
            let anchors = find_anchors(&a, s).unwrap();
            assert_eq!(anchors.t_diag, 10.0);
            assert_eq!(anchors.t_cliff, 2.0);
        }
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn anchors_degenerate() {
        // diagonal below the off-diagonal links
        let a = aff(array![[1.0, 5.0, 5.0], [5.0, 1.0, 5.0], [5.0, 5.0, 1.0]]);
        assert!(matches!(
            find_anchors(&a, Strategy::SingleLink),
            Err(Error::DegenerateAnchors { .. })
        ));
        let cfg = ClusterinessConfig::default();
        let out = cluster_problem(&a, &cfg, "en", "articles");
        assert!(out.fell_back);
        assert_eq!(out.partition.n_clusters(), 3);
    }

    /// Largest candidate threshold giving one cluster, by trying them all.
    fn brute_force_cliff(a: &AffinityMatrix, s: Strategy) -> Option<f64> {
        candidate_thresholds(a)
            .into_iter()
            .filter(|&t| s.cluster(a, t).n_clusters() == 1)
            .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.max(t))))
    }

    #[test]
    fn cliff_matches_exhaustive_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=8 {
            for _ in 0..10 {
                let a = random_affinity(n, &mut rng);
                for s in [Strategy::SingleLink, Strategy::ClusterAware, Strategy::PairFirst] {
                    let anchors = find_anchors(&a, s).unwrap();
                    assert_eq!(Some(anchors.t_cliff), brute_force_cliff(&a, s));
                }
            }
        }
    }

    #[test]
    fn clusteriness_formula() {
        let anchors = Anchors {
            t_cliff: 2.0,
            t_diag: 10.0,
            cliff_found: true,
        };
        assert_eq!(clusteriness_threshold(&anchors, 0.0), 10.0);
        assert_eq!(clusteriness_threshold(&anchors, 1.0), 2.0);
        assert!((clusteriness_threshold(&anchors, 0.85) - 3.2).abs() < 1e-12);
    }

    #[test]
    fn config_lookup_and_json() {
        let cfg = ClusterinessConfig::default();
        assert_eq!(cfg.lookup("gr", "articles").c, 0.85);
        assert_eq!(cfg.lookup("xx", "yy"), cfg.default);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"pair_first\""));
        let back: ClusterinessConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.clone().with_c(1.5).validate().is_err());
        assert_eq!(
            cfg.with_strategy(Strategy::SingleLink).lookup("en", "reviews").strategy,
            Strategy::SingleLink
        );
        assert_eq!("cluster-aware".parse::<Strategy>().unwrap(), Strategy::ClusterAware);
    }

    #[test]
    fn zero_clusteriness_is_usually_cowardly() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let cfg = ClusterinessConfig::default().with_c(0.0);
        for _ in 0..20 {
            let a = random_affinity(10, &mut rng);
            let out = cluster_problem(&a, &cfg, "en", "articles");
            assert_eq!(out.partition, cowardly(&a.doc_ids));
        }
    }

    #[test]
    fn cluster_problem_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_affinity(12, &mut rng);
        let cfg = ClusterinessConfig::default();
        assert_eq!(cluster_problem(&a, &cfg, "gr", "reviews"), cluster_problem(&a, &cfg, "gr", "reviews"));
    }

    fn arb_affinity(max_n: usize) -> impl Gen<Value = AffinityMatrix> {
        (2..=max_n, any::<u64>()).prop_map(|(n, seed)| random_affinity(n, &mut ChaCha8Rng::seed_from_u64(seed)))
    }

    proptest! {
        #[test]
        fn strategies_return_partitions(a in arb_affinity(10), t in 0.0f64..6.0) {
            for s in [Strategy::SingleLink, Strategy::ClusterAware, Strategy::PairFirst] {
                let p = s.cluster(&a, t);
                prop_assert!(Partition::from_clusters(p.doc_ids.clone(), p.clusters.clone()).is_ok());
            }
        }

        #[test]
        fn single_link_refines_upward(a in arb_affinity(10), t1 in 0.0f64..6.0, t2 in 0.0f64..6.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(single_link(&a, hi).refines(&single_link(&a, lo)));
        }

        #[test]
        fn mean_rule_holds_for_every_cluster(a in arb_affinity(9), t in 0.0f64..6.0) {
            for p in [cluster_aware(&a, t), pair_first(&a, t)] {
                for c in p.clusters.iter().filter(|c| c.len() > 1) {
                    let mut sum = 0.0;
                    let mut n = 0.0;
                    for x in 0..c.len() {
                        for y in x + 1..c.len() {
                            sum += a.get(c[x], c[y]);
                            n += 1.0;
                        }
                    }
                    prop_assert!(sum / n >= t - 1e-12);
                }
            }
        }

        #[test]
        fn pairing_phase_caps_size(a in arb_affinity(12), t in 0.0f64..6.0) {
            prop_assert!(monogamous_pairs(&a, t).max_cluster_size() <= 2);
        }

        #[test]
        fn threshold_decreases_with_c(c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, tc in 0.0f64..5.0, span in 0.0f64..5.0) {
            let anchors = Anchors { t_cliff: tc, t_diag: tc + span, cliff_found: true };
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            prop_assert!(clusteriness_threshold(&anchors, hi) <= clusteriness_threshold(&anchors, lo));
        }
    }
}
