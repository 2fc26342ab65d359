//! Synthetic pools and run analytics.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cdd::{Direction, Metric, SortedPool};
use crate::error::{Error, Result};
use crate::featio::FeatureMatrix;
use crate::orchestrator::RunState;
use crate::rng;

/// Parameters for a Gaussian-mixture pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub sep: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 200,
            dim: 16,
            spread: 1.0,
            sep: 4.0,
            seed: 0,
        }
    }
}

/// A generated pool together with the centers it was drawn around.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub features: FeatureMatrix,
    pub centers: Vec<Vec<f64>>,
}

fn check_synth(spec: &SynthSpec) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidParameter(m));
    if spec.classes < 2 {
        return bad(format!("classes must be at least 2, got {}", spec.classes));
    }
    if spec.per_class == 0 {
        return bad("per_class must be at least 1".into());
    }
    if spec.dim < 2 {
        return bad(format!("dim must be at least 2, got {}", spec.dim));
    }
    if !(spec.spread.is_finite() && spec.spread >= 0.0) {
        return bad(format!(
            "spread must be finite and non-negative, got {}",
            spec.spread
        ));
    }
    if !(spec.sep.is_finite() && spec.sep > 0.0) {
        return bad(format!("sep must be finite and positive, got {}", spec.sep));
    }
    if u32::try_from(spec.classes).is_err() {
        return bad("too many classes".into());
    }
    Ok(())
}

fn draw_points(
    centers: &[Vec<f64>],
    per_class: usize,
    spread: f64,
    rng: &mut impl Rng,
) -> Result<FeatureMatrix> {
    let dim = centers[0].len();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut data = Vec::with_capacity(centers.len() * per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(center.iter().map(|&x| (x + noise.sample(rng)) as f32));
            labels.push(c as u32);
        }
    }
    FeatureMatrix::new(labels.len(), dim, data)?.with_labels(labels, centers.len() as u32)
}

/// Draws `classes` centers uniformly in `[-sep, sep]^dim`, then `per_class`
/// isotropic Gaussian points around each. Rows are grouped by class.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    check_synth(spec)?;
    let mut rng = rng::seeded(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| rng.random_range(-spec.sep..=spec.sep))
                .collect()
        })
        .collect();
    let features = draw_points(&centers, spec.per_class, spec.spread, &mut rng)?;
    Ok(SynthData { features, centers })
}

/// A pool plus an independent test split drawn around the same centers.
pub fn synth_generate_with_test(
    spec: &SynthSpec,
    test_per_class: usize,
) -> Result<(SynthData, FeatureMatrix)> {
    let data = synth_generate(spec)?;
    if test_per_class == 0 {
        return Err(Error::InvalidParameter(
            "test_per_class must be at least 1".into(),
        ));
    }
    let mut rng = rng::seeded(rng::derive_seed(spec.seed, 0x7E57, 0));
    let test = draw_points(&data.centers, test_per_class, spec.spread, &mut rng)?;
    Ok((data, test))
}

/// Normalized entropy of a class histogram: `H / ln C`, in `[0, 1]`.
pub fn normalized_entropy(histogram: &[usize]) -> f64 {
    let total: usize = histogram.iter().sum();
    if total == 0 || histogram.len() < 2 {
        return 0.0;
    }
    let h: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * (total as f64 / c as f64).ln()
        })
        .sum();
    (h / (histogram.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Per-cycle class balance of the rows selected in that cycle.
pub fn subpool_class_balance(run: &RunState, features: &FeatureMatrix) -> Result<Vec<f64>> {
    let labels = features.labels().ok_or(Error::MissingLabels)?;
    let classes = features.class_count().ok_or(Error::MissingLabels)? as usize;
    run.manifests()
        .iter()
        .map(|m| {
            if m.selected.is_empty() {
                return Err(Error::EmptySubPool { cycle: m.cycle });
            }
            let mut hist = vec![0usize; classes];
            for &r in &m.selected {
                let y = *labels.get(r).ok_or(Error::IndexOutOfRange {
                    index: r,
                    len: labels.len(),
                })?;
                hist[y as usize] += 1;
            }
            Ok(normalized_entropy(&hist))
        })
        .collect()
}

/// Mean of the per-cycle balance scores from cycle 2 on, where sub-pools
/// and samplers are in play.
pub fn mean_sampled_balance(balance: &[f64]) -> f64 {
    let tail = if balance.len() > 1 {
        &balance[1..]
    } else {
        balance
    };
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// A uniformly shuffled pool order, for comparing against scored orders.
pub fn shuffled_order(n: usize, seed: u64) -> SortedPool {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut scores = vec![0.0; n];
    for (pos, &row) in order.iter().enumerate() {
        scores[row] = pos as f64;
    }
    SortedPool::from_scores(scores, Metric::Cdd, Direction::Ascending)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub cycle: usize,
    pub lambda: f64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// `a - b` at the last cycle.
    pub final_delta: f64,
}

impl Comparison {
    pub fn deltas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.delta).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "cycle,lambda,accuracy_a,accuracy_b,delta")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.cycle, r.lambda, r.accuracy_a, r.accuracy_b, r.delta
            )?;
        }
        Ok(())
    }
}

/// Per-cycle accuracy deltas `a - b`. Both runs must share the same cycle
/// and labeled-count grid.
pub fn compare_runs(a: &RunState, b: &RunState) -> Result<Comparison> {
    if a.trace.len() != b.trace.len() {
        return Err(Error::Shape(format!(
            "runs have {} and {} cycles",
            a.trace.len(),
            b.trace.len()
        )));
    }
    if a.trace.is_empty() {
        return Err(Error::Shape("runs have no cycles".into()));
    }
    let rows = a
        .trace
        .iter()
        .zip(&b.trace)
        .map(|(x, y)| {
            if x.cycle != y.cycle || x.labeled_count != y.labeled_count {
                return Err(Error::Shape(format!(
                    "grid mismatch: cycle {} with {} labels vs cycle {} with {} labels",
                    x.cycle, x.labeled_count, y.cycle, y.labeled_count
                )));
            }
            Ok(ComparisonRow {
                cycle: x.cycle,
                lambda: x.lambda,
                accuracy_a: x.accuracy,
                accuracy_b: y.accuracy,
                delta: x.accuracy - y.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_delta = rows.last().map_or(0.0, |r| r.delta);
    Ok(Comparison { rows, final_delta })
}
