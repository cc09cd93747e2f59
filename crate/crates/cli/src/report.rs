//! Per-problem comparison of the chosen clusteriness against the cowardly
//! partition and the best clusteriness in hindsight.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use authclust::affinity::AffinityMatrix;
use authclust::clustering::{self, cowardly};
use authclust::metrics;
use authclust::pan;

use crate::run::{self, ClusterInfo, Layout};

pub const HEADER: [&str; 10] = [
    "Lang/genre", "problem", "MAP", "coward", "best", "c_b", "diff", "fixed", "c_f", "diff",
];

/// Clusteriness values tried for the `best` column.
pub const SWEEP_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub language: String,
    pub genre: String,
    pub problem_id: String,
    pub map: Option<f64>,
    pub coward: f64,
    pub best: f64,
    /// None when no swept clusteriness reaches the cowardly score.
    pub c_best: Option<f64>,
    pub fixed: f64,
    pub c_fixed: f64,
}

impl ReportRow {
    pub fn best_diff(&self) -> f64 {
        self.best - self.coward
    }

    pub fn fixed_diff(&self) -> f64 {
        self.fixed - self.coward
    }

    fn record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.3}");
        vec![
            format!("{} {}", self.language, self.genre),
            self.problem_id.clone(),
            self.map.map(f).unwrap_or_default(),
            f(self.coward),
            f(self.best),
            self.c_best.map(|c| format!("{c:.2}")).unwrap_or_default(),
            f(self.best_diff()),
            f(self.fixed),
            format!("{:.2}", self.c_fixed),
            f(self.fixed_diff()),
        ]
    }
}

/// Best F over clusteriness `0, 0.01, ..., 1` with the given strategy;
/// `None` when the anchors are degenerate.
pub fn sweep_best(
    affinity: &AffinityMatrix,
    strategy: clustering::Strategy,
    truth: &metrics::TruthPartition,
) -> anyhow::Result<Option<(f64, f64)>> {
    let Ok(anchors) = clustering::find_anchors(affinity, strategy) else {
        return Ok(None);
    };
    let mut best: Option<(f64, f64)> = None;
    for step in 0..=SWEEP_STEPS {
        let c = step as f64 / SWEEP_STEPS as f64;
        let t = clustering::clusteriness_threshold(&anchors, c);
        let f = metrics::bcubed(&strategy.cluster(affinity, t), truth)?.f;
        if best.is_none_or(|(b, _)| f > b) {
            best = Some((f, c));
        }
    }
    Ok(best)
}

pub fn report_rows(out: &Path, truth_dir: &Path) -> anyhow::Result<Vec<ReportRow>> {
    let layout = Layout::new(out);
    let info = run::load_collection_info(out)?;
    info.problems
        .iter()
        .map(|p| {
            let truth = run::load_truth(truth_dir, p)?;
            let ci: ClusterInfo = serde_json::from_str(
                &std::fs::read_to_string(layout.cluster_info(&p.problem_id))
                    .with_context(|| format!("no clustering for {}; run cluster first", p.problem_id))?,
            )?;
            let affinity: AffinityMatrix =
                serde_json::from_str(&std::fs::read_to_string(layout.affinity(&p.problem_id))?)?;
            let pred = pan::read_clustering(&layout.clustering(&p.problem_id), Some(&p.filenames))?;
            let links = pan::read_ranking(&layout.ranking(&p.problem_id))?;
            let map = match metrics::map_score(&links, &truth) {
                Ok(m) => Some(m),
                Err(authclust::Error::NoTrueLinks) => None,
                Err(e) => return Err(e.into()),
            };
            let coward = metrics::bcubed(&cowardly(&p.filenames), &truth)?.f;
            let fixed = metrics::bcubed(&pred, &truth)?.f;
            let (best, c_best) = match sweep_best(&affinity, ci.setting.strategy, &truth)? {
                Some((f, c)) if f >= coward => (f, Some(c)),
                _ => (coward, None),
            };
            Ok(ReportRow {
                language: p.language.clone(),
                genre: p.genre.clone(),
                problem_id: p.problem_id.clone(),
                map,
                coward,
                best,
                c_best,
                fixed,
                c_fixed: ci.setting.c,
            })
        })
        .collect()
}

/// Writes `report.csv` and returns its rows.
pub fn write_report(out: &Path, truth_dir: &Path) -> anyhow::Result<Vec<ReportRow>> {
    let rows = report_rows(out, truth_dir)?;
    let path = Layout::new(out).report();
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(HEADER)?;
    for r in &rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(rows)
}
