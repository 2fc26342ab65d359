//! K-means (Lloyd's algorithm) with seeded k-means++ initialization.
//!
//! Distances are squared Euclidean throughout, accumulated in `f64` over the
//! `f32` features. Assignment ties go to the lowest centroid id.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featio::FeatureMatrix;
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, starting with the initial one.
    #[serde(default, skip_serializing)]
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

#[inline]
pub fn squared_distance(f: &[f32], c: &[f64]) -> f64 {
    f.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = a as f64 - b;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid and its squared distance.
#[inline]
pub fn nearest(f: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(f, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_dims(m: &FeatureMatrix, centroids: &[Vec<f64>]) -> Result<()> {
    if let Some(c) = centroids.iter().find(|c| c.len() != m.n_cols()) {
        return Err(Error::DimensionMismatch {
            expected: m.n_cols(),
            found: c.len(),
        });
    }
    Ok(())
}

/// Assigns every row to its nearest centroid.
pub fn assign(m: &FeatureMatrix, centroids: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_dims(m, centroids)?;
    if centroids.is_empty() {
        return Err(Error::TooFewCentroids {
            needed: 1,
            found: 0,
        });
    }
    Ok(assign_with_distance(m, centroids)
        .into_iter()
        .map(|(j, _)| j)
        .collect())
}

fn assign_with_distance(m: &FeatureMatrix, centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    (0..m.n_rows())
        .into_par_iter()
        .map(|i| nearest(m.row(i), centroids))
        .collect()
}

/// Fits `k` clusters starting from a k-means++ initialization drawn from `seed`.
pub fn kmeans_fit(
    m: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    if m.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot cluster an empty matrix".into(),
        ));
    }
    if k == 0 || k > m.n_rows() {
        return Err(Error::InvalidParameter(format!(
            "k must lie in 1..={}, got {k}",
            m.n_rows()
        )));
    }
    let init = kmeans_plus_plus(m, k, seed);
    lloyd(m, init, max_iter, tol)
}

/// Runs Lloyd iterations from caller-supplied initial centroids.
pub fn kmeans_fit_from(
    m: &FeatureMatrix,
    init: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    if m.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot cluster an empty matrix".into(),
        ));
    }
    if init.is_empty() || init.len() > m.n_rows() {
        return Err(Error::InvalidParameter(format!(
            "k must lie in 1..={}, got {}",
            m.n_rows(),
            init.len()
        )));
    }
    check_dims(m, &init)?;
    lloyd(m, init, max_iter, tol)
}

/// k-means++ seeding: the first centroid is uniform over rows, each further
/// one is drawn with probability proportional to the squared distance to the
/// nearest centroid chosen so far.
pub fn kmeans_plus_plus(m: &FeatureMatrix, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = m.n_rows();
    let mut rng = rng::seeded(seed);
    let to_f64 = |i: usize| m.row(i).iter().map(|&v| v as f64).collect::<Vec<f64>>();

    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![to_f64(first)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(m.row(i), &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // float round-off can leave target beyond the last partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every row coincides with a chosen centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = to_f64(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(m.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(
    m: &FeatureMatrix,
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    if max_iter == 0 {
        return Err(Error::InvalidParameter(
            "max_iter must be at least 1".into(),
        ));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tol must be >= 0, got {tol}"
        )));
    }
    let k = centroids.len();
    let dim = m.n_cols();
    let tol_sq = tol * tol;

    let mut assigned = assign_with_distance(m, &centroids);
    let mut history = vec![inertia_of(&assigned)];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;

        // Update step: means accumulated in fixed row order.
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &(j, _)) in assigned.iter().enumerate() {
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(m.row(i)) {
                *s += v as f64;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();

        // Empty clusters are reseeded to the row farthest from its centroid.
        let mut dist: Vec<f64> = assigned.iter().map(|&(_, d)| d).collect();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = dist
                .iter()
                .enumerate()
                .fold(0, |best, (i, &d)| if d > dist[best] { i } else { best });
            next[j] = m.row(far).iter().map(|&v| v as f64).collect();
            dist[far] = 0.0;
        }

        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .fold(0.0, f64::max);
        centroids = next;

        let reassigned = assign_with_distance(m, &centroids);
        let unchanged = reassigned.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = reassigned;
        history.push(inertia_of(&assigned));

        if shift < tol_sq || (unchanged && counts.iter().all(|&c| c > 0)) {
            break;
        }
    }

    Ok(Clustering {
        centroids,
        assignments: assigned.iter().map(|&(j, _)| j).collect(),
        inertia: *history.last().unwrap(),
        iterations,
        inertia_history: history,
    })
}

fn inertia_of(assigned: &[(usize, f64)]) -> f64 {
    assigned.iter().map(|&(_, d)| d).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn square() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let m = square();
        let c = kmeans_fit(&m, 4, 3, 300, 1e-4).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut seen = c.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
        for (i, &j) in c.assignments.iter().enumerate() {
            assert_eq!(squared_distance(m.row(i), &c.centroids[j]), 0.0);
        }
    }

    #[test]
    fn identical_points_single_cluster() {
        let m = FeatureMatrix::from_rows(&vec![vec![2.5f32, -1.0, 7.0]; 100]).unwrap();
        let c = kmeans_fit(&m, 1, 0, 300, 1e-4).unwrap();
        assert_eq!(c.centroids[0], vec![2.5, -1.0, 7.0]);
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn duplicates_with_k_above_distinct_count() {
        let m = FeatureMatrix::from_rows(&vec![vec![1.0f32, 1.0]; 5]).unwrap();
        let c = kmeans_fit(&m, 3, 9, 300, 1e-4).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = rng::seeded(11);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        for centre in [0.0f64, 10.0] {
            for _ in 0..100 {
                rows.push(vec![
                    (centre + noise.sample(&mut rng)) as f32,
                    (centre + noise.sample(&mut rng)) as f32,
                ]);
            }
        }
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        // oracle: per-blob sample means computed directly
        let mean = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let mut s = [0.0f64; 2];
            for i in r {
                s[0] += rows[i][0] as f64;
                s[1] += rows[i][1] as f64;
            }
            [s[0] / n, s[1] / n]
        };
        let means = [mean(0..100), mean(100..200)];
        let c = kmeans_fit(&m, 2, 5, 300, 1e-4).unwrap();
        for mu in means {
            let best = c
                .centroids
                .iter()
                .map(|ct| ((ct[0] - mu[0]).powi(2) + (ct[1] - mu[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.3, "centroid off by {best}");
        }
    }

    #[test]
    fn assign_ties_go_to_lowest_id() {
        let m = FeatureMatrix::from_rows(&[vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let cents = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![5.0, 5.0]];
        assert_eq!(assign(&m, &cents).unwrap(), vec![0, 2]);
    }

    #[test]
    fn assign_matches_double_loop() {
        let mut rng = rng::seeded(2);
        let rows: Vec<Vec<f32>> = (0..20)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let cents: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0f64..1.0)).collect())
            .collect();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let got = assign(&m, &cents).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in cents.iter().enumerate() {
                let mut d = 0.0;
                for t in 0..4 {
                    d += (r[t] as f64 - c[t]).powi(2);
                }
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(got[i], best);
        }
    }

    #[test]
    fn assign_dimension_mismatch() {
        let m = square();
        assert!(matches!(
            assign(&m, &[vec![0.0; 3]]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn invalid_k() {
        let m = square();
        assert!(kmeans_fit(&m, 0, 0, 10, 0.0).is_err());
        assert!(kmeans_fit(&m, 5, 0, 10, 0.0).is_err());
        let empty = FeatureMatrix::new(0, 2, vec![]).unwrap();
        assert!(kmeans_fit(&empty, 1, 0, 10, 0.0).is_err());
        assert!(kmeans_fit(&m, 2, 0, 0, 0.0).is_err());
    }

    #[test]
    fn converged_centroids_are_cluster_means() {
        let mut rng = rng::seeded(4);
        let rows: Vec<Vec<f32>> = (0..150)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0f32..5.0)).collect())
            .collect();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let c = kmeans_fit(&m, 5, 1, 1000, 0.0).unwrap();
        assert!(c.iterations < 1000);
        for j in 0..5 {
            let members: Vec<&Vec<f32>> = rows
                .iter()
                .zip(&c.assignments)
                .filter(|(_, &a)| a == j)
                .map(|(r, _)| r)
                .collect();
            assert!(!members.is_empty());
            for t in 0..3 {
                let mean = members.iter().map(|r| r[t] as f64).sum::<f64>() / members.len() as f64;
                let tol = 1e-5 * mean.abs().max(1.0);
                assert!((c.centroids[j][t] - mean).abs() <= tol);
            }
        }
        assert_eq!(assign(&m, &c.centroids).unwrap(), c.assignments);
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // The third initial centroid sits far from every row, so it starts empty.
        let m = FeatureMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![9.0, 0.0],
        ])
        .unwrap();
        let init = vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![100.0, 100.0]];
        let c = kmeans_fit_from(&m, init, 100, 0.0).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(c.assignments[4], 2);
        for w in c.inertia_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn json_shape() {
        let c = kmeans_fit(&square(), 2, 0, 10, 1e-4).unwrap();
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["assignments", "centroids", "inertia", "iterations"]);
        let back: Clustering = serde_json::from_value(v).unwrap();
        assert_eq!(back.centroids, c.centroids);
    }
}
