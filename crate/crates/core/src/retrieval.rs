//! Exact L2 retrieval over descriptor databases and the three evaluation
//! regimes (intra-sequence split, inter-sequence, lagged time window).

use std::cmp::Ordering;
use std::str::FromStr;

use rayon::prelude::*;

use crate::aggregation::GlobalDescriptor;
use crate::pointcloud::PoseTrack;
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 5.0;
pub const DEFAULT_INTRA_OFFSET: usize = 200;

/// Descriptor rows joined with their poses. Immutable once built.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorIndex {
    dim: usize,
    matrix: Vec<f64>,
    frame_ids: Vec<u64>,
    timestamps: Vec<f64>,
    positions: Vec<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryMeta {
    pub frame_id: u64,
    pub timestamp: f64,
    pub position: [f64; 3],
}

/// Rows and distances, ascending by distance then row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Joins descriptors with poses by frame id, keeping descriptor order.
pub fn build_index(descriptors: &[GlobalDescriptor], poses: &PoseTrack) -> Result<DescriptorIndex> {
    let dim = descriptors.first().map_or(0, GlobalDescriptor::dim);
    let mut index = DescriptorIndex {
        dim,
        ..Default::default()
    };
    for d in descriptors {
        if d.dim() != dim {
            return Err(Error::Shape(format!(
                "frame {} has descriptor length {}, expected {dim}",
                d.frame_id,
                d.dim()
            )));
        }
        let pose = poses.get(d.frame_id).ok_or(Error::Join(d.frame_id))?;
        index.matrix.extend_from_slice(&d.values);
        index.frame_ids.push(d.frame_id);
        index.timestamps.push(pose.timestamp);
        index.positions.push(pose.position);
    }
    Ok(index)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl DescriptorIndex {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frame_id(&self, i: usize) -> u64 {
        self.frame_ids[i]
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        self.positions[i]
    }

    pub fn meta(&self, i: usize) -> QueryMeta {
        QueryMeta {
            frame_id: self.frame_ids[i],
            timestamp: self.timestamps[i],
            position: self.positions[i],
        }
    }

    /// Exact `k` nearest rows to `query` among rows accepted by `mask`.
    pub fn search_topk(&self, query: &[f64], k: usize, mask: Option<&(dyn Fn(usize) -> bool + Sync)>) -> Result<QueryResult> {
        if k == 0 {
            return Err(Error::Config("top-k search needs k >= 1".into()));
        }
        if self.is_empty() {
            return Ok(QueryResult::default());
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query length {} does not match index dimension {}",
                query.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| mask.is_none_or(|m| m(i)))
            .map(|i| (l2(query, self.row(i)), i))
            .collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank);
        Ok(QueryResult {
            ids: scored.iter().map(|s| s.1).collect(),
            distances: scored.iter().map(|s| s.0).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalUnit {
    Seconds,
    Frames,
}

impl FromStr for TemporalUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seconds" | "s" => Ok(TemporalUnit::Seconds),
            "frames" | "f" => Ok(TemporalUnit::Frames),
            _ => Err(Error::Lookup {
                kind: "temporal unit",
                name: s.to_string(),
            }),
        }
    }
}

/// A database row is a positive for a query when their positions are closer
/// than `tau` and they are more than `delta_t` apart in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthConfig {
    pub tau: f64,
    pub delta_t: f64,
    pub unit: TemporalUnit,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            tau: DEFAULT_TAU,
            delta_t: 0.0,
            unit: TemporalUnit::Frames,
        }
    }
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.delta_t >= 0.0) {
            return Err(Error::Config(format!("delta_t must be non-negative, got {}", self.delta_t)));
        }
        Ok(())
    }

    fn is_positive(&self, q: &QueryMeta, j: &QueryMeta, temporal: bool) -> bool {
        if l2(&q.position, &j.position) >= self.tau {
            return false;
        }
        if !temporal {
            return true;
        }
        let gap = match self.unit {
            TemporalUnit::Seconds => (q.timestamp - j.timestamp).abs(),
            TemporalUnit::Frames => q.frame_id.abs_diff(j.frame_id) as f64,
        };
        gap > self.delta_t
    }
}

/// All rows of `index` that are positives for the query.
pub fn compute_positives(index: &DescriptorIndex, query: &QueryMeta, gt: &GroundTruthConfig) -> Vec<usize> {
    (0..index.len())
        .filter(|&j| gt.is_positive(query, &index.meta(j), true))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegimeConfig {
    /// Database rows `[0, split)`, queries `[split, N)`; positives must also be
    /// more than `offset` rows away from the query.
    Intra { split: usize, offset: usize },
    /// One whole sequence as database, another as queries, no temporal rule.
    Inter,
    /// Query row `t` searches rows `[t − window − lag, t − lag]`.
    TimeWindow { window: usize, lag: usize },
}

impl RegimeConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            RegimeConfig::Intra { split, .. } if split == 0 || split >= n => Err(Error::Config(format!(
                "intra-sequence split must satisfy 0 < split < {n}, got {split}"
            ))),
            RegimeConfig::TimeWindow { window, lag } if window == 0 || lag == 0 => Err(Error::Config(format!(
                "time window needs w >= 1 and lag >= 1, got w={window}, lag={lag}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Inclusive database rows for time-window query `t`, `None` when empty.
pub fn time_window_rows(t: usize, window: usize, lag: usize) -> Option<(usize, usize)> {
    let hi = t.checked_sub(lag)?;
    Some((hi.saturating_sub(window), hi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub query_frame: u64,
    pub top1_frame: u64,
    pub distance: f64,
    pub is_positive: bool,
    pub has_positive: bool,
}

/// Runs one evaluation regime. `queries` is required for [`RegimeConfig::Inter`]
/// and ignored otherwise.
pub fn run_regime(
    database: &DescriptorIndex,
    queries: Option<&DescriptorIndex>,
    regime: &RegimeConfig,
    gt: &GroundTruthConfig,
) -> Result<Vec<QueryRecord>> {
    gt.validate()?;
    regime.validate(database.len())?;
    let evaluate = |q: &QueryMeta, vector: &[f64], range: (usize, usize), positive: &(dyn Fn(usize) -> bool + Sync)| -> Result<Option<QueryRecord>> {
        let in_range = |j: usize| j >= range.0 && j <= range.1;
        let top = database.search_topk(vector, 1, Some(&in_range))?;
        let Some(&best) = top.ids.first() else {
            return Ok(None);
        };
        let has_positive = (range.0..=range.1).any(positive);
        Ok(Some(QueryRecord {
            query_frame: q.frame_id,
            top1_frame: database.frame_id(best),
            distance: top.distances[0],
            is_positive: positive(best),
            has_positive,
        }))
    };

    let records: Vec<Option<QueryRecord>> = match *regime {
        RegimeConfig::Intra { split, offset } => (split..database.len())
            .into_par_iter()
            .map(|qi| {
                let q = database.meta(qi);
                let positive =
                    |j: usize| qi.abs_diff(j) > offset && gt.is_positive(&q, &database.meta(j), true);
                evaluate(&q, database.row(qi), (0, split - 1), &positive)
            })
            .collect::<Result<_>>()?,
        RegimeConfig::Inter => {
            let queries = queries.ok_or_else(|| {
                Error::Config("inter-sequence evaluation needs a query sequence".into())
            })?;
            if database.is_empty() {
                return Ok(Vec::new());
            }
            (0..queries.len())
                .into_par_iter()
                .map(|qi| {
                    let q = queries.meta(qi);
                    let positive = |j: usize| gt.is_positive(&q, &database.meta(j), false);
                    evaluate(&q, queries.row(qi), (0, database.len() - 1), &positive)
                })
                .collect::<Result<_>>()?
        }
        RegimeConfig::TimeWindow { window, lag } => (0..database.len())
            .into_par_iter()
            .map(|t| {
                let Some(range) = time_window_rows(t, window, lag) else {
                    return Ok(None);
                };
                let q = database.meta(t);
                let positive = |j: usize| gt.is_positive(&q, &database.meta(j), true);
                evaluate(&q, database.row(t), range, &positive)
            })
            .collect::<Result<_>>()?,
    };
    Ok(records.into_iter().flatten().collect())
}

pub const RECORDS_HEADER: &str = "query_frame,top1_frame,distance,is_positive,has_positive";

pub fn write_records(records: &[QueryRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.query_frame, r.top1_frame, r.distance, r.is_positive as u8, r.has_positive as u8
        ));
    }
    out
}

pub fn read_records(text: &str) -> Result<Vec<QueryRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == RECORDS_HEADER => {}
        _ => return Err(Error::Format(format!("records CSV must start with `{RECORDS_HEADER}`"))),
    }
    let flag = |s: &str, line: usize| match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::parse(format!("line {}", line + 1), format!("`{other}` is not a boolean"))),
    };
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("records CSV line {}: expected 5 fields", n + 1)));
        }
        let num = |s: &str| -> Result<u64> {
            s.trim()
                .parse()
                .map_err(|_| Error::parse(format!("line {}", n + 1), format!("`{s}` is not a frame number")))
        };
        let distance: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(format!("line {}", n + 1), format!("`{}` is not a distance", f[2])))?;
        out.push(QueryRecord {
            query_frame: num(f[0])?,
            top1_frame: num(f[1])?,
            distance,
            is_positive: flag(f[3], n)?,
            has_positive: flag(f[4], n)?,
        });
    }
    Ok(out)
}
