//! The end-to-end selection loop.
//!
//! Cluster the pool once, score and sort it, label the head of the sorted
//! order, train, pick `beta` (when set to auto) and then for every later
//! cycle build the sub-pool, sample it with the previous model, reveal the
//! labels of the sample and retrain. Only the [`LabelOracle`] ever holds
//! ground truth; every other stage sees the label-free feature view.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::balancer::{self, BetaEval, BetaSearchReport, TrialSettings};
use crate::cdd::{self, Direction, Metric, SortedPool};
use crate::clustering;
use crate::error::{Error, Result};
use crate::featio::{self, FeatureMatrix, SelectionManifest};
pub use crate::oracle::LabelOracle;
use crate::pool::{self, LabelState, SubPool};
use crate::rng;
use crate::samplers::{self, SamplerKind, Selection};
use crate::taskmodel::{self, ExternalModel, ModelKind, TaskModelSpec, TrainedModel};

const KMEANS_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const BASELINE_STREAM: u64 = 3;

/// Balancing factor: fixed, or chosen by trial training on cycle 2.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BetaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for BetaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Fixed(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for BetaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = BetaSetting;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"auto\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<BetaSetting, E> {
                v.parse()
                    .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<BetaSetting, E> {
                Ok(BetaSetting::Fixed(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<BetaSetting, E> {
                Ok(BetaSetting::Fixed(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<BetaSetting, E> {
                Ok(BetaSetting::Fixed(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

impl std::str::FromStr for BetaSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse::<f64>().map(Self::Fixed).map_err(|_| {
            Error::InvalidParameter(format!("beta must be a number or \"auto\", got {s:?}"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Continue from the previous cycle's weights.
    #[default]
    Warm,
    /// Retrain from zero weights every cycle.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cycles: usize,
    pub budget: usize,
    /// Cluster count; defaults to the pool's class count.
    pub clusters: Option<usize>,
    pub metric: Metric,
    pub direction: Direction,
    pub sampler: SamplerKind,
    pub beta: BetaSetting,
    pub beta_candidates: Option<Vec<f64>>,
    pub model: TaskModelSpec,
    pub train_mode: TrainMode,
    pub seed: u64,
    pub eval_split: f64,
    pub beta_eval: BetaEval,
    /// Keep the labels of every candidate sample from the beta search, not
    /// only the winner's.
    pub commit_all_candidates: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cycles: 8,
            budget: 50,
            clusters: None,
            metric: Metric::Cdd,
            direction: Direction::Ascending,
            sampler: SamplerKind::Confidence,
            beta: BetaSetting::Auto,
            beta_candidates: None,
            model: TaskModelSpec::default(),
            train_mode: TrainMode::Warm,
            seed: 0,
            eval_split: 0.2,
            beta_eval: BetaEval::Validation,
            commit_all_candidates: false,
            kmeans_max_iter: clustering::DEFAULT_MAX_ITER,
            kmeans_tol: clustering::DEFAULT_TOL,
        }
    }
}

impl RunConfig {
    /// Checks the config against a pool of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.cycles < 2 {
            return bad(format!("cycles must be at least 2, got {}", self.cycles));
        }
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.budget * self.cycles > n {
            return bad(format!(
                "budget {} x cycles {} exceeds the pool of {n} rows",
                self.budget, self.cycles
            ));
        }
        if !(self.eval_split > 0.0 && self.eval_split < 1.0) {
            return bad(format!(
                "eval_split must lie in (0, 1), got {}",
                self.eval_split
            ));
        }
        if let Some(k) = self.clusters {
            let min = if self.metric == Metric::Cdd { 2 } else { 1 };
            if k < min || k > n {
                return bad(format!("clusters must lie in {min}..={n}, got {k}"));
            }
        }
        if let BetaSetting::Fixed(b) = self.beta {
            pool::check_beta(b, self.budget, self.cycles, n)?;
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cycle: usize,
    pub labeled_count: usize,
    pub lambda: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub cycle: usize,
    pub train_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub label_state: LabelState,
    pub models: Vec<ModelSummary>,
    pub beta_report: Option<BetaSearchReport>,
    pub trace: Vec<TraceRow>,
    /// Balancing factor used for cycles 2..=I.
    pub beta: f64,
}

impl RunState {
    pub fn accuracy_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.accuracy).collect()
    }

    pub fn manifests(&self) -> &[SelectionManifest] {
        self.label_state.per_cycle()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.trace.last().map(|r| r.accuracy)
    }
}

/// A model produced in some cycle.
#[derive(Debug, Clone)]
pub enum Fitted {
    Softmax(TrainedModel),
    /// Posteriors for this cycle come from the external pipeline's files.
    External {
        cycle: usize,
    },
}

/// Everything a cycle's selection step reads.
#[derive(Debug, Clone, Copy)]
pub struct CycleContext<'a> {
    /// Label-free feature view.
    pub features: &'a FeatureMatrix,
    pub oracle: &'a LabelOracle,
    pub sorted: &'a SortedPool,
    pub cycles: usize,
    pub budget: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub external: Option<&'a ExternalModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleSelection {
    pub subpool: SubPool,
    pub selection: Selection,
}

fn posteriors(ctx: &CycleContext<'_>, model: &Fitted, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    match model {
        Fitted::Softmax(m) => taskmodel::predict_proba(m, ctx.features, rows),
        Fitted::External { cycle } => ctx
            .external
            .ok_or_else(|| Error::External("no external model configured".into()))?
            .posteriors(*cycle, rows),
    }
}

/// Builds the sub-pool for `cycle` (widened if labels have exhausted it),
/// samples `budget` rows with the previous model and tops up any shortfall.
pub fn select_cycle(
    ctx: &CycleContext<'_>,
    cycle: usize,
    beta: f64,
    labels: &LabelState,
    previous: &Fitted,
) -> Result<CycleSelection> {
    let subpool = pool::widen_to_capacity(ctx.sorted, cycle, ctx.cycles, beta, ctx.budget, labels)?;
    let k = ctx.budget;
    let seed = rng::derive_seed(ctx.seed, SAMPLER_STREAM, cycle as u64);
    let available = subpool.members.len();
    let mut selection = match ctx.sampler {
        SamplerKind::Confidence => {
            let probs = posteriors(ctx, previous, &subpool.members)?;
            samplers::select_confidence(&subpool, &probs, k)?
        }
        SamplerKind::Entropy => {
            let probs = posteriors(ctx, previous, &subpool.members)?;
            samplers::select_entropy(&subpool, &probs, k)?
        }
        SamplerKind::Cluster => {
            let mut s = samplers::select_cluster(&subpool, ctx.features, k.min(available), seed)?;
            s.shortfall = k.saturating_sub(available);
            s
        }
        SamplerKind::Random => {
            let mut s = samplers::select_random(&subpool, k.min(available), seed)?;
            s.shortfall = k.saturating_sub(available);
            s
        }
    };
    if selection.shortfall > 0 {
        top_up(ctx.sorted, &subpool, labels, &mut selection);
    }
    Ok(CycleSelection { subpool, selection })
}

/// Fills a shortfall with the nearest unlabeled positions outside the
/// window, alternating below and above it. Topped-up rows carry their
/// sorting score.
pub fn top_up(sp: &SortedPool, subpool: &SubPool, labels: &LabelState, sel: &mut Selection) {
    let n = sp.len();
    let mut taken: std::collections::HashSet<usize> = sel.indices.iter().copied().collect();
    let mut d = 1;
    while sel.shortfall > 0 && (d <= subpool.start || subpool.end + d - 1 < n) {
        let below = subpool.start.checked_sub(d);
        let above = Some(subpool.end + d - 1).filter(|&p| p < n);
        for pos in [below, above].into_iter().flatten() {
            let row = sp.order[pos];
            if sel.shortfall > 0 && !labels.is_labeled(row) && taken.insert(row) {
                sel.indices.push(row);
                sel.scores.push(sp.scores[row]);
                sel.shortfall -= 1;
            }
        }
        d += 1;
    }
}

/// The trainable half of a run: fits per-cycle models and reports accuracy.
struct Learner<'a> {
    spec: &'a TaskModelSpec,
    mode: TrainMode,
    external: Option<ExternalModel>,
    /// Full labeled pool, used for accuracy when there is no test matrix.
    pool: &'a FeatureMatrix,
    test: Option<&'a FeatureMatrix>,
}

impl Learner<'_> {
    fn fit(
        &self,
        ctx: &CycleContext<'_>,
        labels: &LabelState,
        previous: Option<&Fitted>,
        cycle: usize,
    ) -> Result<(Fitted, ModelSummary)> {
        if self.external.is_some() {
            return Ok((
                Fitted::External { cycle },
                ModelSummary {
                    cycle,
                    train_accuracy: None,
                    final_loss: None,
                    degenerate: false,
                },
            ));
        }
        let rows = labels.labeled_vec();
        let revealed = ctx.oracle.reveal(&rows)?;
        let init = match (self.mode, previous) {
            (TrainMode::Warm, Some(Fitted::Softmax(m))) => Some(m),
            _ => None,
        };
        let model = taskmodel::train_on(
            self.spec,
            ctx.features,
            &rows,
            &revealed,
            ctx.oracle.class_count(),
            init,
        )?;
        let summary = ModelSummary {
            cycle,
            train_accuracy: Some(model.train_accuracy),
            final_loss: model.loss_history.last().copied(),
            degenerate: model.degenerate,
        };
        Ok((Fitted::Softmax(model), summary))
    }

    fn accuracy(&self, model: &Fitted) -> Result<f64> {
        match model {
            Fitted::Softmax(m) => match self.test {
                Some(t) => taskmodel::evaluate_all(m, t),
                None => taskmodel::evaluate_all(m, self.pool),
            },
            Fitted::External { cycle } => self
                .external
                .as_ref()
                .ok_or_else(|| Error::External("no external model configured".into()))?
                .accuracy(*cycle),
        }
    }
}

fn trace_row(cycle: usize, labels: &LabelState, n: usize, accuracy: f64) -> TraceRow {
    TraceRow {
        cycle,
        labeled_count: labels.len(),
        lambda: labels.len() as f64 / n as f64,
        accuracy,
    }
}

/// Runs the full selection loop. `features` must carry labels, which act as
/// the labeling oracle. Accuracy is measured on `test` when given, else on
/// the whole pool.
pub fn run_bal(
    config: &RunConfig,
    features: &FeatureMatrix,
    test: Option<&FeatureMatrix>,
) -> Result<RunState> {
    run_bal_with_order(config, features, test, None)
}

/// As [`run_bal`], but with an externally supplied pool order in place of
/// the clustering-based one.
pub fn run_bal_with_order(
    config: &RunConfig,
    features: &FeatureMatrix,
    test: Option<&FeatureMatrix>,
    order: Option<SortedPool>,
) -> Result<RunState> {
    let n = features.n_rows();
    config.validate(n)?;
    let (view, oracle) = LabelOracle::split(features)?;
    if let Some(t) = test {
        if t.n_cols() != view.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: view.n_cols(),
                found: t.n_cols(),
            });
        }
    }

    let sorted = match order {
        Some(sp) => {
            if sp.len() != n {
                return Err(Error::Shape(format!(
                    "pool order covers {} rows, pool has {n}",
                    sp.len()
                )));
            }
            sp
        }
        None => {
            let k = config.clusters.unwrap_or(oracle.class_count());
            let fit = clustering::kmeans_fit(
                &view,
                k,
                rng::derive_seed(config.seed, KMEANS_STREAM, 0),
                config.kmeans_max_iter,
                config.kmeans_tol,
            )?;
            cdd::sort_pool(&view, &fit, config.metric, config.direction)?
        }
    };

    let external = match config.model.kind {
        ModelKind::External => Some(ExternalModel::from_spec(&config.model)?),
        ModelKind::SoftmaxRegression => None,
    };
    let learner = Learner {
        spec: &config.model,
        mode: config.train_mode,
        external: external.clone(),
        pool: features,
        test,
    };
    let ctx = CycleContext {
        features: &view,
        oracle: &oracle,
        sorted: &sorted,
        cycles: config.cycles,
        budget: config.budget,
        sampler: config.sampler,
        seed: config.seed,
        external: external.as_ref(),
    };

    let mut labels = LabelState::new();
    let mut models = Vec::with_capacity(config.cycles);
    let mut trace = Vec::with_capacity(config.cycles);

    // Cycle 1: head of the sorted order.
    let first = samplers::select_first_cycle(&sorted, config.budget)?;
    let first_scores = first.iter().map(|&r| sorted.scores[r]).collect();
    labels.commit(
        SelectionManifest {
            cycle: 1,
            beta: f64::NAN, // patched once beta is known
            subpool_start: 0,
            subpool_end: config.budget,
            selected: first,
            scores: first_scores,
        },
        n,
    )?;
    let (mut model, summary) = learner.fit(&ctx, &labels, None, 1)?;
    models.push(summary);
    trace.push(trace_row(1, &labels, n, learner.accuracy(&model)?));

    // Balancing factor.
    let (beta, beta_report, mut carried) = match config.beta {
        BetaSetting::Fixed(b) => (b, None, None),
        BetaSetting::Auto => {
            if external.is_some() {
                return Err(Error::InvalidParameter(
                    "beta \"auto\" needs the built-in model for trial training".into(),
                ));
            }
            let candidates = config
                .beta_candidates
                .clone()
                .unwrap_or_else(|| balancer::default_candidates(config.budget, config.cycles, n));
            let search = balancer::choose_beta(
                &candidates,
                &ctx,
                &labels,
                &model,
                TrialSettings {
                    spec: &config.model,
                    eval: config.beta_eval,
                    eval_split: config.eval_split,
                    test,
                },
            )?;
            let chosen = search.report.chosen;
            if config.commit_all_candidates {
                for (b, s) in &search.selections {
                    if *b != chosen {
                        labels.absorb(&s.selection.indices);
                    }
                }
            }
            let carried = if config.commit_all_candidates {
                None
            } else {
                search.selection_for(chosen).cloned()
            };
            (chosen, Some(search.report), carried)
        }
    };
    labels.per_cycle_mut()[0].beta = beta;

    for cycle in 2..=config.cycles {
        let picked = match carried.take() {
            Some(s) if cycle == 2 => s,
            _ => select_cycle(&ctx, cycle, beta, &labels, &model)?,
        };
        labels.commit(
            SelectionManifest {
                cycle,
                beta,
                subpool_start: picked.subpool.start,
                subpool_end: picked.subpool.end,
                selected: picked.selection.indices,
                scores: picked.selection.scores,
            },
            n,
        )?;
        let (next, summary) = learner.fit(&ctx, &labels, Some(&model), cycle)?;
        model = next;
        models.push(summary);
        trace.push(trace_row(cycle, &labels, n, learner.accuracy(&model)?));
    }

    Ok(RunState {
        label_state: labels,
        models,
        beta_report,
        trace,
        beta,
    })
}

/// Random-sampling baseline: each cycle draws `budget` rows uniformly from
/// all unlabeled rows. No clustering, scoring or sub-pools. Manifests carry
/// the whole pool as their window and `beta = 0`.
pub fn run_baseline_random(
    config: &RunConfig,
    features: &FeatureMatrix,
    test: Option<&FeatureMatrix>,
) -> Result<RunState> {
    let n = features.n_rows();
    let config = RunConfig {
        beta: BetaSetting::Fixed(1.0),
        ..config.clone()
    };
    config.validate(n)?;
    let (view, oracle) = LabelOracle::split(features)?;
    let external = match config.model.kind {
        ModelKind::External => Some(ExternalModel::from_spec(&config.model)?),
        ModelKind::SoftmaxRegression => None,
    };
    let learner = Learner {
        spec: &config.model,
        mode: config.train_mode,
        external: external.clone(),
        pool: features,
        test,
    };
    // Only the oracle and features are read through this context.
    let identity = SortedPool::from_scores(vec![0.0; n], config.metric, config.direction);
    let ctx = CycleContext {
        features: &view,
        oracle: &oracle,
        sorted: &identity,
        cycles: config.cycles,
        budget: config.budget,
        sampler: SamplerKind::Random,
        seed: config.seed,
        external: external.as_ref(),
    };

    let mut labels = LabelState::new();
    let mut models = Vec::new();
    let mut trace = Vec::new();
    let mut model: Option<Fitted> = None;
    for cycle in 1..=config.cycles {
        let unlabeled: Vec<usize> = (0..n).filter(|&r| !labels.is_labeled(r)).collect();
        let sel = samplers::select_random_from(
            &unlabeled,
            config.budget,
            rng::derive_seed(config.seed, BASELINE_STREAM, cycle as u64),
        )?;
        labels.commit(
            SelectionManifest {
                cycle,
                beta: 0.0,
                subpool_start: 0,
                subpool_end: n,
                selected: sel.indices,
                scores: sel.scores,
            },
            n,
        )?;
        let (next, summary) = learner.fit(&ctx, &labels, model.as_ref(), cycle)?;
        models.push(summary);
        trace.push(trace_row(cycle, &labels, n, learner.accuracy(&next)?));
        model = Some(next);
    }
    Ok(RunState {
        label_state: labels,
        models,
        beta_report: None,
        trace,
        beta: 0.0,
    })
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "cycle,labeled_count,lambda,accuracy")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{}",
            r.cycle, r.labeled_count, r.lambda, r.accuracy
        )?;
    }
    Ok(())
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "cycle,labeled_count,lambda,accuracy" => {}
        _ => {
            return Err(Error::Csv {
                line: 1,
                reason: "missing trace header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Csv {
            line: i + 1,
            reason: format!("malformed trace row {line:?}"),
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 4 {
            return Err(bad());
        }
        out.push(TraceRow {
            cycle: c[0].parse().map_err(|_| bad())?,
            labeled_count: c[1].parse().map_err(|_| bad())?,
            lambda: c[2].parse().map_err(|_| bad())?,
            accuracy: c[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

pub const CONFIG_FILE: &str = "config.json";
pub const BETA_REPORT_FILE: &str = "beta_report.json";
pub const MANIFEST_FILE: &str = "manifests.jsonl";
pub const TRACE_FILE: &str = "trace.csv";

/// Writes `config.json`, `manifests.jsonl`, `trace.csv` and, when a search
/// ran, `beta_report.json` into `dir`.
pub fn write_run_dir(dir: impl AsRef<Path>, config: &RunConfig, state: &RunState) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut cfg = serde_json::to_string_pretty(config)?;
    cfg.push('\n');
    fs::write(dir.join(CONFIG_FILE), cfg)?;
    let report = dir.join(BETA_REPORT_FILE);
    match &state.beta_report {
        Some(r) => {
            let mut s = serde_json::to_string_pretty(r)?;
            s.push('\n');
            fs::write(report, s)?;
        }
        None if report.exists() => fs::remove_file(report)?,
        None => {}
    }
    featio::write_manifest(state.manifests(), dir.join(MANIFEST_FILE))?;
    let mut trace = Vec::new();
    write_trace_csv(&state.trace, &mut trace)?;
    fs::write(dir.join(TRACE_FILE), trace)?;
    Ok(())
}

/// Reloads the replayable part of a run directory. Model summaries are not
/// persisted and come back empty.
pub fn load_run_dir(dir: impl AsRef<Path>) -> Result<RunState> {
    let dir = dir.as_ref();
    let manifests = featio::read_manifest(dir.join(MANIFEST_FILE))?;
    let trace = parse_trace_csv(&fs::read_to_string(dir.join(TRACE_FILE))?)?;
    let report_path = dir.join(BETA_REPORT_FILE);
    let beta_report: Option<BetaSearchReport> = if report_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(report_path)?)?)
    } else {
        None
    };
    let beta = manifests.last().map_or(0.0, |m| m.beta);
    Ok(RunState {
        label_state: LabelState::replay(&manifests, usize::MAX)?,
        models: Vec::new(),
        beta_report,
        trace,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_setting_json() {
        assert_eq!(
            serde_json::to_string(&BetaSetting::Auto).unwrap(),
            "\"auto\""
        );
        assert_eq!(
            serde_json::to_string(&BetaSetting::Fixed(1.3)).unwrap(),
            "1.3"
        );
        assert_eq!(
            serde_json::from_str::<BetaSetting>("2").unwrap(),
            BetaSetting::Fixed(2.0)
        );
        assert_eq!(
            serde_json::from_str::<BetaSetting>("\"auto\"").unwrap(),
            BetaSetting::Auto
        );
        assert!(serde_json::from_str::<BetaSetting>("\"wide\"").is_err());
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"cycles": 4, "beta": 1.3}"#).unwrap();
        assert_eq!(partial.cycles, 4);
        assert_eq!(partial.beta, BetaSetting::Fixed(1.3));
        assert_eq!(partial.budget, 50);
        assert!(serde_json::from_str::<RunConfig>(r#"{"cycle": 4}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let c = RunConfig::default();
        assert!(c.validate(2000).is_ok());
        assert!(c.validate(399).is_err());
        assert!(RunConfig {
            cycles: 1,
            ..c.clone()
        }
        .validate(2000)
        .is_err());
        assert!(RunConfig {
            eval_split: 1.0,
            ..c.clone()
        }
        .validate(2000)
        .is_err());
        assert!(RunConfig {
            beta: BetaSetting::Fixed(0.1),
            ..c.clone()
        }
        .validate(2000)
        .is_err());
        assert!(RunConfig {
            clusters: Some(1),
            ..c
        }
        .validate(2000)
        .is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let rows = vec![
            TraceRow {
                cycle: 1,
                labeled_count: 50,
                lambda: 0.025,
                accuracy: 0.71,
            },
            TraceRow {
                cycle: 2,
                labeled_count: 100,
                lambda: 0.05,
                accuracy: 0.8,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "cycle,labeled_count,lambda,accuracy\n1,50,0.025,0.71\n2,100,0.05,0.8\n"
        );
        assert_eq!(parse_trace_csv(&text).unwrap(), rows);
        assert!(parse_trace_csv("a,b\n").is_err());
    }

    #[test]
    fn top_up_walks_outward() {
        let sp = SortedPool::from_scores(
            (0..10).map(f64::from).collect(),
            Metric::Cdd,
            Direction::Ascending,
        );
        let sub = SubPool {
            cycle: 2,
            start: 4,
            end: 6,
            members: vec![4, 5],
            beta: 1.0,
        };
        let mut labels = LabelState::new();
        labels.absorb(&[3]);
        let mut sel = Selection {
            indices: vec![4, 5],
            scores: vec![4.0, 5.0],
            shortfall: 3,
        };
        top_up(&sp, &sub, &labels, &mut sel);
        assert_eq!(sel.indices, vec![4, 5, 6, 2, 7]);
        assert_eq!(sel.shortfall, 0);
    }
}
