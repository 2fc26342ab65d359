//! Cluster distance difference scoring and the sorted pool.
//!
//! For a feature row `f` with squared distances `d1 <= d2` to its two
//! nearest centroids, the cluster distance difference is `d2 - d1`. It is
//! zero exactly on the hyperplane separating the two nearest clusters and
//! grows as `f` moves into the interior of its own cluster. The baseline
//! metric is `d1` alone.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{squared_distance, Clustering};
use crate::error::{Error, Result};
use crate::featio::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cdd,
    NearestDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Ascending,
    Descending,
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cdd" => Ok(Self::Cdd),
            "nearest" | "nearest_distance" => Ok(Self::NearestDistance),
            _ => Err(Error::InvalidParameter(format!("unknown metric {s:?}"))),
        }
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asc" | "ascending" => Ok(Self::Ascending),
            "desc" | "descending" => Ok(Self::Descending),
            _ => Err(Error::InvalidParameter(format!("unknown direction {s:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cdd => "cdd",
            Self::NearestDistance => "nearest_distance",
        })
    }
}

/// The pool sorted by score. `order[p]` is the original row at position `p`;
/// `scores` is indexed by original row.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedPool {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub metric: Metric,
    pub direction: Direction,
}

impl SortedPool {
    /// Sorts rows by `scores`; equal scores keep ascending row order.
    pub fn from_scores(scores: Vec<f64>, metric: Metric, direction: Direction) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            let by_score = scores[a].total_cmp(&scores[b]);
            let by_score = match direction {
                Direction::Ascending => by_score,
                Direction::Descending => by_score.reverse(),
            };
            by_score.then(a.cmp(&b))
        });
        Self {
            order,
            scores,
            metric,
            direction,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Inverse permutation: `rank()[row]` is the sorted position of `row`.
    pub fn rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.order.len()];
        for (p, &row) in self.order.iter().enumerate() {
            rank[row] = p;
        }
        rank
    }
}

/// Smallest and second-smallest squared distances from `f` to the centroids.
/// When the minimum is attained more than once both values are equal.
pub fn two_nearest(f: &[f32], centroids: &[Vec<f64>]) -> Result<(f64, f64)> {
    if centroids.len() < 2 {
        return Err(Error::TooFewCentroids {
            needed: 2,
            found: centroids.len(),
        });
    }
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    for c in centroids {
        if c.len() != f.len() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                found: c.len(),
            });
        }
        let d = squared_distance(f, c);
        if d < d1 {
            d2 = d1;
            d1 = d;
        } else if d < d2 {
            d2 = d;
        }
    }
    Ok((d1, d2))
}

pub fn cdd_score(f: &[f32], centroids: &[Vec<f64>]) -> Result<f64> {
    let (d1, d2) = two_nearest(f, centroids)?;
    Ok(d2 - d1)
}

pub fn nearest_distance_score(f: &[f32], centroids: &[Vec<f64>]) -> Result<f64> {
    if centroids.is_empty() {
        return Err(Error::TooFewCentroids {
            needed: 1,
            found: 0,
        });
    }
    let mut best = f64::INFINITY;
    for c in centroids {
        if c.len() != f.len() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                found: c.len(),
            });
        }
        best = best.min(squared_distance(f, c));
    }
    Ok(best)
}

/// Scores every row of `m` under `metric`.
pub fn score_all(m: &FeatureMatrix, centroids: &[Vec<f64>], metric: Metric) -> Result<Vec<f64>> {
    let score = match metric {
        Metric::Cdd => cdd_score,
        Metric::NearestDistance => nearest_distance_score,
    };
    (0..m.n_rows())
        .into_par_iter()
        .map(|i| score(m.row(i), centroids))
        .collect()
}

pub fn sort_pool(
    m: &FeatureMatrix,
    c: &Clustering,
    metric: Metric,
    direction: Direction,
) -> Result<SortedPool> {
    if c.assignments.len() != m.n_rows() {
        return Err(Error::Shape(format!(
            "clustering covers {} rows, matrix has {}",
            c.assignments.len(),
            m.n_rows()
        )));
    }
    let scores = score_all(m, &c.centroids, metric)?;
    Ok(SortedPool::from_scores(scores, metric, direction))
}

/// Writes `row_index,score,rank` lines in row order.
pub fn write_scores_csv<W: Write>(sp: &SortedPool, mut w: W) -> Result<()> {
    writeln!(w, "row_index,score,rank")?;
    for (row, (score, rank)) in sp.scores.iter().zip(sp.rank()).enumerate() {
        writeln!(w, "{row},{score},{rank}")?;
    }
    Ok(())
}

pub fn write_scores_csv_file(sp: &SortedPool, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_scores_csv(sp, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Rebuilds a sorted pool from a score CSV written by [`write_scores_csv`].
/// The stored ranks define the order.
pub fn read_scores_csv(text: &str, metric: Metric, direction: Direction) -> Result<SortedPool> {
    let mut scores = Vec::new();
    let mut ranks = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Csv {
            line: n + 1,
            reason,
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(bad(format!("expected 3 cells, found {}", cells.len())));
        }
        let row: usize = cells[0].parse().map_err(|_| bad("bad row_index".into()))?;
        if row != scores.len() {
            return Err(bad(format!("row_index {row} out of sequence")));
        }
        scores.push(
            cells[1]
                .parse::<f64>()
                .map_err(|_| bad("bad score".into()))?,
        );
        ranks.push(
            cells[2]
                .parse::<usize>()
                .map_err(|_| bad("bad rank".into()))?,
        );
    }
    let n = ranks.len();
    let mut order = vec![usize::MAX; n];
    for (row, &r) in ranks.iter().enumerate() {
        if r >= n || order[r] != usize::MAX {
            return Err(Error::Csv {
                line: row + 2,
                reason: format!("rank {r} is not a permutation entry"),
            });
        }
        order[r] = row;
    }
    Ok(SortedPool {
        order,
        scores,
        metric,
        direction,
    })
}
