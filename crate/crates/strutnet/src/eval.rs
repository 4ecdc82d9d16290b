//! Scoring protocol: tolerance-based point matching, recall and precision.
//!
//! A predicted point counts as a true positive when it can be assigned
//! one-to-one to a ground-truth point within the tolerance (5 px by
//! default, inclusive). The assignment maximizes cardinality first and
//! total distance second — solved exactly as a min-cost assignment with a
//! large penalty on unmatched slots — so scoring is order-independent and
//! reproducible. Metrics are micro-averaged: TP/FP/FN pool over all images
//! before the final quotients.

use std::fs;
use std::path::Path;

use crate::dataset::points_from_csv;
use crate::error::{Error, Result};
use crate::types::StrutPointSet;

pub const DEFAULT_TOLERANCE: f64 = 5.0;

/// Cost of a forbidden (over-tolerance) or dummy assignment slot. One such
/// edge outweighs any achievable sum of real distances, which is what makes
/// "max cardinality, then min total distance" a single minimization.
const FORBIDDEN: f64 = 1e9;

/// TP/FP/FN assignment between predicted and ground-truth points for one
/// image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(pred index, gt index, distance)` per matched pair; `len() == tp`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl MatchResult {
    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Exact solver for the square assignment problem (shortest augmenting
/// paths with potentials, O(n^3)). Returns, for each column, the assigned
/// row.
fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    p
}

/// Optimal one-to-one matching between predictions and ground truth,
/// restricted to pairs within `tolerance` (inclusive): maximum cardinality,
/// then minimum total distance. Unmatched predictions are false positives,
/// unmatched ground-truth points false negatives.
pub fn match_points(pred: &StrutPointSet, gt: &StrutPointSet, tolerance: f64) -> Result<MatchResult> {
    if !(tolerance > 0.0) {
        return Err(Error::config(format!(
            "tolerance {} must be positive",
            tolerance
        )));
    }
    let np = pred.len();
    let ng = gt.len();
    if np == 0 || ng == 0 {
        return Ok(MatchResult {
            tp: 0,
            fp: np,
            fn_: ng,
            pairs: Vec::new(),
        });
    }
    let n = np.max(ng);
    let mut cost = vec![FORBIDDEN; n * n];
    for (i, pp) in pred.points.iter().enumerate() {
        for (j, gp) in gt.points.iter().enumerate() {
            let d = pp.distance(gp);
            if d <= tolerance {
                cost[i * n + j] = d;
            }
        }
    }
    let p = assignment(&cost, n);
    let mut pairs = Vec::new();
    for j in 1..=n {
        let i = p[j];
        if i == 0 {
            continue;
        }
        let (pi, gj) = (i - 1, j - 1);
        if pi < np && gj < ng {
            let d = pred.points[pi].distance(&gt.points[gj]);
            if d <= tolerance {
                pairs.push((pi, gj, d));
            }
        }
    }
    pairs.sort_by_key(|&(pi, _, _)| pi);
    let tp = pairs.len();
    Ok(MatchResult {
        tp,
        fp: np - tp,
        fn_: ng - tp,
        pairs,
    })
}

/// Per-image slice of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ImageScore {
    pub fn recall(&self) -> f64 {
        vacuous_ratio(self.tp, self.tp + self.fn_)
    }
    pub fn precision(&self) -> f64 {
        vacuous_ratio(self.tp, self.tp + self.fp)
    }
}

/// `num/den`, defined as 1.0 when the denominator is empty (nothing to
/// miss and nothing asserted wrongly counts as fully correct).
fn vacuous_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged recall/precision over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub dataset_id: String,
    pub tolerance: f64,
    pub per_image: Vec<ImageScore>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub recall: f64,
    pub precision: f64,
}

/// Pool per-image match results into a report. Errors on an empty input.
pub fn compute_metrics(
    results: &[(String, MatchResult)],
    method: &str,
    dataset_id: &str,
    tolerance: f64,
) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::config("cannot compute metrics over zero images"));
    }
    let per_image: Vec<ImageScore> = results
        .iter()
        .map(|(id, m)| ImageScore {
            id: id.clone(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        })
        .collect();
    let tp: usize = per_image.iter().map(|s| s.tp).sum();
    let fp: usize = per_image.iter().map(|s| s.fp).sum();
    let fn_: usize = per_image.iter().map(|s| s.fn_).sum();
    Ok(MetricsReport {
        method: method.to_string(),
        dataset_id: dataset_id.to_string(),
        tolerance,
        per_image,
        tp,
        fp,
        fn_,
        recall: vacuous_ratio(tp, tp + fn_),
        precision: vacuous_ratio(tp, tp + fp),
    })
}

const REPORT_FOOTER: &str = "\
# matching: optimal one-to-one assignment (max cardinality, then min total distance), distance <= tolerance inclusive
# averaging: micro (TP/FP/FN pooled over images before division)
# empty denominators: recall := 1 when TP+FN = 0, precision := 1 when TP+FP = 0
";

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,tp,fp,fn,recall,precision\n");
        for s in &self.per_image {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                s.id,
                s.tp,
                s.fp,
                s.fn_,
                s.recall(),
                s.precision()
            ));
        }
        out.push_str(&format!(
            "ALL,{},{},{},{:.6},{:.6}\n",
            self.tp, self.fp, self.fn_, self.recall, self.precision
        ));
        for line in REPORT_FOOTER.lines() {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "method: {}   dataset: {}   tolerance: {} px   images: {}\n",
            self.method,
            self.dataset_id,
            self.tolerance,
            self.per_image.len()
        ));
        out.push_str(&format!(
            "TP {}  FP {}  FN {}\nrecall    {:.4}\nprecision {:.4}\n",
            self.tp, self.fp, self.fn_, self.recall, self.precision
        ));
        out.push_str(REPORT_FOOTER);
        out
    }
}

/// Load external per-image predictions (detection-CSV format, filenames
/// `<id>.csv` aligned with dataset ids). Missing files score as empty
/// predictions; the returned warnings name them.
pub fn ingest_external(
    pred_dir: &Path,
    ids: &[String],
) -> Result<(Vec<StrutPointSet>, Vec<String>)> {
    let mut sets = Vec::with_capacity(ids.len());
    let mut warnings = Vec::new();
    for id in ids {
        let path = pred_dir.join(format!("{}.csv", id));
        match fs::read_to_string(&path) {
            Ok(text) => sets.push(points_from_csv(&path, &text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                warnings.push(format!(
                    "no prediction file for image {}; scored as empty",
                    id
                ));
                sets.push(StrutPointSet::empty());
            }
            Err(e) => return Err(Error::io(&path, e)),
        }
    }
    Ok((sets, warnings))
}
