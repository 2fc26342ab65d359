//! Per-cycle samplers.
//!
//! The first cycle takes the head of the sorted pool. Later cycles pick `K`
//! members of the sub-pool by one of four strategies: lowest maximum
//! posterior (`confidence`, the default), highest entropy, nearest to k-means
//! centroids over the members, or uniformly at random.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cdd::SortedPool;
use crate::clustering::{self, squared_distance};
use crate::error::{Error, Result};
use crate::featio::FeatureMatrix;
use crate::pool::SubPool;
use crate::rng;

/// Tolerance on probability rows summing to one.
pub const PROB_SUM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Confidence,
    Entropy,
    Cluster,
    Random,
}

impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "entropy" => Ok(Self::Entropy),
            "cluster" => Ok(Self::Cluster),
            "random" => Ok(Self::Random),
            _ => Err(Error::InvalidParameter(format!("unknown sampler {s:?}"))),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Confidence => "confidence",
            Self::Entropy => "entropy",
            Self::Cluster => "cluster",
            Self::Random => "random",
        })
    }
}

impl SamplerKind {
    /// Whether the sampler reads model posteriors.
    pub fn needs_posteriors(self) -> bool {
        matches!(self, Self::Confidence | Self::Entropy)
    }
}

/// Rows picked by a sampler, with the score that ranked each one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// How many rows short of the requested budget the selection is.
    pub shortfall: usize,
}

pub fn select_first_cycle(sp: &SortedPool, k: usize) -> Result<Vec<usize>> {
    if k > sp.len() {
        return Err(Error::BudgetExceedsPool {
            requested: k,
            available: sp.len(),
        });
    }
    Ok(sp.order[..k].to_vec())
}

pub fn validate_probabilities(probs: &[Vec<f64>], expected_rows: usize) -> Result<()> {
    if probs.len() != expected_rows {
        return Err(Error::Shape(format!(
            "{} probability rows for {expected_rows} members",
            probs.len()
        )));
    }
    let width = probs.first().map_or(0, Vec::len);
    for (row, p) in probs.iter().enumerate() {
        let bad = |reason: String| Error::InvalidProbabilities { row, reason };
        if p.is_empty() || p.len() != width {
            return Err(bad(format!("{} classes, expected {width}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad("negative or non-finite entry".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(bad(format!("sums to {sum}")));
        }
    }
    Ok(())
}

pub fn max_probability(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Keeps the `k` best members by score, breaking ties by row index.
fn top_k(members: &[usize], scores: Vec<f64>, k: usize, ascending: bool) -> Selection {
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        let ord = if ascending { ord } else { ord.reverse() };
        ord.then(members[a].cmp(&members[b]))
    });
    let take = k.min(members.len());
    idx.truncate(take);
    Selection {
        indices: idx.iter().map(|&i| members[i]).collect(),
        scores: idx.iter().map(|&i| scores[i]).collect(),
        shortfall: k - take,
    }
}

/// Members with the lowest maximum posterior. `probs[j]` belongs to
/// `pool.members[j]`.
pub fn select_confidence(pool: &SubPool, probs: &[Vec<f64>], k: usize) -> Result<Selection> {
    validate_probabilities(probs, pool.members.len())?;
    let scores = probs.iter().map(|p| max_probability(p)).collect();
    Ok(top_k(&pool.members, scores, k, true))
}

/// Members with the highest posterior entropy.
pub fn select_entropy(pool: &SubPool, probs: &[Vec<f64>], k: usize) -> Result<Selection> {
    validate_probabilities(probs, pool.members.len())?;
    let scores = probs.iter().map(|p| entropy(p)).collect();
    Ok(top_k(&pool.members, scores, k, false))
}

/// Runs k-means with `k` clusters over the member features and takes, for
/// each centroid in id order, the nearest member not already taken.
pub fn select_cluster(
    pool: &SubPool,
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
) -> Result<Selection> {
    let members = &pool.members;
    if k > members.len() {
        return Err(Error::BudgetExceedsPool {
            requested: k,
            available: members.len(),
        });
    }
    if k == 0 {
        return Ok(Selection::default());
    }
    let sub = features.select_rows(members)?.without_labels();
    let fit = clustering::kmeans_fit(
        &sub,
        k,
        seed,
        clustering::DEFAULT_MAX_ITER,
        clustering::DEFAULT_TOL,
    )?;
    let mut taken = vec![false; members.len()];
    let mut sel = Selection::default();
    for c in &fit.centroids {
        let mut best: Option<(usize, f64)> = None;
        for (j, row) in sub.rows().enumerate() {
            if taken[j] {
                continue;
            }
            let d = squared_distance(row, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best.expect("k <= members leaves a free member");
        taken[j] = true;
        sel.indices.push(members[j]);
        sel.scores.push(d);
    }
    Ok(sel)
}

/// Uniform sample without replacement. Scores record the draw order.
pub fn select_random(pool: &SubPool, k: usize, seed: u64) -> Result<Selection> {
    select_random_from(&pool.members, k, seed)
}

pub fn select_random_from(candidates: &[usize], k: usize, seed: u64) -> Result<Selection> {
    if k > candidates.len() {
        return Err(Error::BudgetExceedsPool {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut r = rng::seeded(seed);
    let picks = index::sample(&mut r, candidates.len(), k);
    Ok(Selection {
        indices: picks.iter().map(|i| candidates[i]).collect(),
        scores: (0..k).map(|i| i as f64).collect(),
        shortfall: 0,
    })
}
