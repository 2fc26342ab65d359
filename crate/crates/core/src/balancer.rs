//! Balancing-factor search.
//!
//! Every candidate `beta` builds the cycle-2 sub-pool, samples it with the
//! cycle-1 model's posteriors, trains a fresh model on the cycle-1 labels
//! plus that sample and is scored on an evaluation set. The winner is the
//! best-scoring candidate, the smallest one on ties.

use std::collections::BTreeSet;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featio::FeatureMatrix;
use crate::orchestrator::{self, CycleContext, Fitted};
use crate::pool::{beta_floor, LabelState};
use crate::rng;
use crate::samplers::Selection;
use crate::taskmodel::{self, TaskModelSpec};

/// Candidate grid before feasibility filtering.
pub const DEFAULT_GRID: [f64; 6] = [0.6, 0.8, 1.0, 1.3, 1.6, 2.0];

const VALIDATION_STREAM: u64 = 0xBA1A;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSearchReport {
    pub candidates: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub chosen: f64,
}

/// Where candidate models are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaEval {
    /// A seeded held-out share of the rows labeled during the search.
    #[default]
    Validation,
    /// The run's test matrix.
    TestSet,
    /// Every pool row, using oracle labels.
    Pool,
}

impl FromStr for BetaEval {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(Self::Validation),
            "test_set" | "test" => Ok(Self::TestSet),
            "pool" => Ok(Self::Pool),
            _ => Err(Error::InvalidParameter(format!("unknown beta_eval {s:?}"))),
        }
    }
}

/// The default grid restricted to `beta >= K I / N`.
pub fn default_candidates(k: usize, cycles: usize, n: usize) -> Vec<f64> {
    if n == 0 || k * cycles >= n {
        return Vec::new();
    }
    let floor = beta_floor(k, cycles, n);
    DEFAULT_GRID
        .iter()
        .copied()
        .filter(|&b| b >= floor)
        .collect()
}

/// Picks the highest accuracy; ties go to the smallest `beta`.
pub fn argmax_beta(candidates: &[f64], accuracies: &[f64]) -> Option<f64> {
    candidates
        .iter()
        .zip(accuracies)
        .fold(None, |best: Option<(f64, f64)>, (&b, &a)| match best {
            Some((bb, ba)) if ba > a || (ba == a && bb <= b) => Some((bb, ba)),
            _ => Some((b, a)),
        })
        .map(|(b, _)| b)
}

/// Evaluates every feasible candidate with `fitness` and returns the argmax.
/// Candidates below the feasibility floor are dropped before evaluation.
pub fn choose_beta_with<F>(
    candidates: &[f64],
    k: usize,
    cycles: usize,
    n: usize,
    fitness: F,
) -> Result<BetaSearchReport>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no beta candidates".into()));
    }
    let floor = beta_floor(k, cycles, n);
    let feasible: Vec<f64> = candidates
        .iter()
        .copied()
        .filter(|&b| b.is_finite() && b >= floor - 1e-12)
        .collect();
    if feasible.is_empty() {
        return Err(Error::NoFeasibleBeta);
    }
    let accuracies = feasible
        .par_iter()
        .map(|&b| fitness(b))
        .collect::<Result<Vec<f64>>>()?;
    let chosen = argmax_beta(&feasible, &accuracies).expect("non-empty");
    Ok(BetaSearchReport {
        candidates: feasible,
        accuracies,
        chosen,
    })
}

/// Outcome of the full search, including each candidate's cycle-2 selection.
#[derive(Debug, Clone)]
pub struct BetaSearch {
    pub report: BetaSearchReport,
    pub selections: Vec<(f64, orchestrator::CycleSelection)>,
}

impl BetaSearch {
    pub fn selection_for(&self, beta: f64) -> Option<&orchestrator::CycleSelection> {
        self.selections
            .iter()
            .find(|(b, _)| *b == beta)
            .map(|(_, s)| s)
    }
}

/// How candidate models are trained and scored.
#[derive(Debug, Clone, Copy)]
pub struct TrialSettings<'a> {
    pub spec: &'a TaskModelSpec,
    pub eval: BetaEval,
    pub eval_split: f64,
    pub test: Option<&'a FeatureMatrix>,
}

/// Runs the trial training for every candidate. `after_first` must hold
/// exactly the cycle-1 labels and `first_model` the model trained on them.
pub fn choose_beta(
    candidates: &[f64],
    ctx: &CycleContext<'_>,
    after_first: &LabelState,
    first_model: &Fitted,
    trial: TrialSettings<'_>,
) -> Result<BetaSearch> {
    let TrialSettings {
        spec,
        eval,
        eval_split,
        test,
    } = trial;
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no beta candidates".into()));
    }
    let n = ctx.sorted.len();
    let floor = beta_floor(ctx.budget, ctx.cycles, n);
    let feasible: Vec<f64> = candidates
        .iter()
        .copied()
        .filter(|&b| b.is_finite() && b >= floor - 1e-12)
        .collect();
    if feasible.is_empty() {
        return Err(Error::NoFeasibleBeta);
    }

    let selections: Vec<(f64, orchestrator::CycleSelection)> = feasible
        .par_iter()
        .map(|&b| orchestrator::select_cycle(ctx, 2, b, after_first, first_model).map(|s| (b, s)))
        .collect::<Result<_>>()?;

    let base = after_first.labeled_vec();
    let held_out: BTreeSet<usize> = match eval {
        BetaEval::Validation => {
            if !(eval_split > 0.0 && eval_split < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "eval_split must lie in (0, 1), got {eval_split}"
                )));
            }
            let mut union: BTreeSet<usize> = base.iter().copied().collect();
            for (_, s) in &selections {
                union.extend(s.selection.indices.iter().copied());
            }
            let union: Vec<usize> = union.into_iter().collect();
            if union.len() < 2 {
                return Err(Error::EmptyEvalSet);
            }
            let take =
                ((union.len() as f64 * eval_split).round() as usize).clamp(1, union.len() - 1);
            let seed = rng::derive_seed(ctx.seed, VALIDATION_STREAM, 0);
            crate::samplers::select_random_from(&union, take, seed)?
                .indices
                .into_iter()
                .collect()
        }
        BetaEval::TestSet | BetaEval::Pool => BTreeSet::new(),
    };
    let held_vec: Vec<usize> = held_out.iter().copied().collect();
    let held_labels = ctx.oracle.reveal(&held_vec)?;

    let fitness = |sel: &Selection| -> Result<f64> {
        let mut rows: BTreeSet<usize> = base.iter().copied().collect();
        rows.extend(sel.indices.iter().copied());
        let rows: Vec<usize> = rows.into_iter().filter(|r| !held_out.contains(r)).collect();
        let labels = ctx.oracle.reveal(&rows)?;
        // candidate trials always start from zero weights
        let model = taskmodel::train_on(
            spec,
            ctx.features,
            &rows,
            &labels,
            ctx.oracle.class_count(),
            None,
        )?;
        match eval {
            BetaEval::Validation => {
                let probs = taskmodel::predict_proba(&model, ctx.features, &held_vec)?;
                let correct = probs
                    .iter()
                    .zip(&held_labels)
                    .filter(|(p, &y)| taskmodel::argmax(p) == y as usize)
                    .count();
                Ok(correct as f64 / held_vec.len() as f64)
            }
            BetaEval::TestSet => {
                let test = test.ok_or_else(|| {
                    Error::InvalidParameter("beta_eval test_set needs a test matrix".into())
                })?;
                taskmodel::evaluate_all(&model, test)
            }
            BetaEval::Pool => {
                let all: Vec<usize> = (0..n).collect();
                let labels = ctx.oracle.reveal(&all)?;
                let probs = taskmodel::predict_proba(&model, ctx.features, &all)?;
                let correct = probs
                    .iter()
                    .zip(&labels)
                    .filter(|(p, &y)| taskmodel::argmax(p) == y as usize)
                    .count();
                Ok(correct as f64 / n as f64)
            }
        }
    };

    let report = choose_beta_with(&feasible, ctx.budget, ctx.cycles, n, |b| {
        let (_, sel) = selections
            .iter()
            .find(|(c, _)| *c == b)
            .expect("selection computed for every feasible candidate");
        fitness(&sel.selection)
    })?;
    Ok(BetaSearch { report, selections })
}
