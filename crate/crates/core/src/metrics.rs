//! Recall@1, thresholded precision-recall curves, max-F1 and PR-AUC over
//! top-1 query records. A record is predicted positive at threshold `t`
//! when its top-1 distance is strictly below `t`.

use serde::{Deserialize, Serialize};

use crate::retrieval::QueryRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points ordered by ascending threshold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

impl PRCurve {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recall {
    pub value: f64,
    /// Set when no record had a positive, in which case `value` is 0.
    pub undefined: bool,
}

pub fn recall_at_1(records: &[QueryRecord]) -> Recall {
    let eligible = records.iter().filter(|r| r.has_positive).count();
    if eligible == 0 {
        return Recall { value: 0.0, undefined: true };
    }
    let hits = records.iter().filter(|r| r.has_positive && r.is_positive).count();
    Recall {
        value: hits as f64 / eligible as f64,
        undefined: false,
    }
}

/// Empty when no label is positive.
pub fn pr_curve(distances: &[f64], labels: &[bool]) -> Result<PRCurve> {
    if distances.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} distances but {} labels",
            distances.len(),
            labels.len()
        )));
    }
    if let Some(d) = distances.iter().find(|d| d.is_nan()) {
        return Err(Error::Validation(format!("distance {d} is not comparable")));
    }
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Ok(PRCurve::default());
    }
    let mut order: Vec<(f64, bool)> = distances.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let d = order[i].0;
        while i < order.len() && order[i].0 == d {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PRPoint {
            threshold: d.next_up(),
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / total_pos as f64,
        });
    }
    Ok(PRCurve { points })
}

fn f1(p: &PRPoint) -> f64 {
    let s = p.precision + p.recall;
    if s == 0.0 {
        0.0
    } else {
        2.0 * p.precision * p.recall / s
    }
}

pub fn max_f1(curve: &PRCurve) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::Degenerate("max-F1 of an empty precision-recall curve".into()));
    }
    Ok(curve.points.iter().map(f1).fold(0.0, f64::max))
}

/// Trapezoidal area over the observed recall span only.
pub fn pr_auc(curve: &PRCurve) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::Degenerate("area under an empty precision-recall curve".into()));
    }
    let mut pts = curve.points.clone();
    pts.sort_by(|a, b| {
        a.recall
            .total_cmp(&b.recall)
            .then(a.threshold.total_cmp(&b.threshold))
    });
    Ok(pts
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_1: f64,
    pub max_f1: f64,
    pub pr_auc: f64,
    pub n_queries: usize,
    pub n_queries_with_positives: usize,
    pub curve: PRCurve,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Metrics over the records that have at least one positive. Undefined
    /// quantities are reported as 0 with a warning instead of failing.
    pub fn from_records(records: &[QueryRecord]) -> EvalReport {
        let mut warnings = Vec::new();
        let r1 = recall_at_1(records);
        if r1.undefined {
            warnings.push("no query has a ground-truth positive; R@1 set to 0".to_string());
        }
        let eligible: Vec<&QueryRecord> = records.iter().filter(|r| r.has_positive).collect();
        let distances: Vec<f64> = eligible.iter().map(|r| r.distance).collect();
        let labels: Vec<bool> = eligible.iter().map(|r| r.is_positive).collect();
        let curve = pr_curve(&distances, &labels).unwrap_or_default();
        let (f, auc) = match (max_f1(&curve), pr_auc(&curve)) {
            (Ok(f), Ok(a)) => (f, a),
            _ => {
                warnings.push("precision-recall curve is empty; max-F1 and AUC set to 0".to_string());
                (0.0, 0.0)
            }
        };
        EvalReport {
            recall_at_1: r1.value,
            max_f1: f,
            pr_auc: auc,
            n_queries: records.len(),
            n_queries_with_positives: eligible.len(),
            curve,
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary_line(&self) -> String {
        format!(
            "R@1={:.4} maxF1={:.4} AUC={:.4}",
            self.recall_at_1, self.max_f1, self.pr_auc
        )
    }
}
