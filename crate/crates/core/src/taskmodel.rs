//! Main-task model: a pluggable interface plus a softmax-regression surrogate.
//!
//! The surrogate minimizes mean multinomial cross-entropy with an L2 penalty
//! on the weights (not the bias) by full-batch gradient descent from zero
//! weights, or from a previous model when warm-started. The `External` kind
//! reads posteriors and accuracies produced by an outside pipeline.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featio::{self, FeatureMatrix};
use crate::samplers::PROB_SUM_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    SoftmaxRegression,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskModelSpec {
    pub kind: ModelKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Unused by the surrogate, which starts from zero weights; forwarded to
    /// external pipelines through the echoed config.
    pub seed: u64,
    /// Path template with a `{cycle}` placeholder: N x C posterior FMAT files.
    pub posteriors_template: Option<String>,
    /// Path template with a `{cycle}` placeholder: one-line accuracy files.
    pub accuracy_template: Option<String>,
}

impl Default for TaskModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::SoftmaxRegression,
            learning_rate: 0.05,
            epochs: 200,
            l2: 1e-3,
            seed: 0,
            posteriors_template: None,
            accuracy_template: None,
        }
    }
}

impl TaskModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "l2 must be >= 0, got {}",
                self.l2
            )));
        }
        if self.kind == ModelKind::External
            && (self.posteriors_template.is_none() || self.accuracy_template.is_none())
        {
            return Err(Error::InvalidParameter(
                "external model needs posteriors_template and accuracy_template".into(),
            ));
        }
        Ok(())
    }
}

/// Linear softmax parameters: `weights` is `C x D` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub n_classes: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxParams {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn weight_row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.n_features..(c + 1) * self.n_features]
    }

    pub fn logits(&self, f: &[f32]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                self.bias[c]
                    + self
                        .weight_row(c)
                        .iter()
                        .zip(f)
                        .map(|(&w, &x)| w * x as f64)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn proba(&self, f: &[f32]) -> Vec<f64> {
        softmax(&self.logits(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: SoftmaxParams,
    pub train_accuracy: f64,
    /// Objective before each epoch's update, then once after the last.
    pub loss_history: Vec<f64>,
    /// Fewer than two classes were present in the training rows.
    pub degenerate: bool,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over `rows` plus `l2 / 2 * |W|^2`.
pub fn objective(
    params: &SoftmaxParams,
    features: &FeatureMatrix,
    rows: &[usize],
    labels: &[u32],
    l2: f64,
) -> f64 {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    for (&r, &y) in rows.iter().zip(labels) {
        let z = params.logits(features.row(r));
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y as usize];
    }
    let reg: f64 = params.weights.iter().map(|w| w * w).sum();
    loss / n + 0.5 * l2 * reg
}

/// Analytic gradient of [`objective`] as `(dW, db)`.
pub fn gradient(
    params: &SoftmaxParams,
    features: &FeatureMatrix,
    rows: &[usize],
    labels: &[u32],
    l2: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d = params.n_features;
    let n = rows.len() as f64;
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; params.n_classes];
    for (&r, &y) in rows.iter().zip(labels) {
        let f = features.row(r);
        let mut p = params.proba(f);
        p[y as usize] -= 1.0;
        for (c, &err) in p.iter().enumerate() {
            gb[c] += err;
            for (g, &x) in gw[c * d..(c + 1) * d].iter_mut().zip(f) {
                *g += err * x as f64;
            }
        }
    }
    for (g, &w) in gw.iter_mut().zip(&params.weights) {
        *g = *g / n + l2 * w;
    }
    gb.iter_mut().for_each(|g| *g /= n);
    (gw, gb)
}

fn labels_for(features: &FeatureMatrix, rows: &[usize]) -> Result<(Vec<u32>, usize)> {
    let labels = features.labels().ok_or(Error::MissingLabels)?;
    let classes = features.class_count().ok_or(Error::MissingLabels)? as usize;
    let mut out = Vec::with_capacity(rows.len());
    for &r in rows {
        if r >= features.n_rows() {
            return Err(Error::IndexOutOfRange {
                index: r,
                len: features.n_rows(),
            });
        }
        out.push(labels[r]);
    }
    Ok((out, classes))
}

/// Trains on `labeled_idx`, reading labels from `features`.
pub fn train(
    spec: &TaskModelSpec,
    features: &FeatureMatrix,
    labeled_idx: &[usize],
) -> Result<TrainedModel> {
    let (labels, classes) = labels_for(features, labeled_idx)?;
    train_on(spec, features, labeled_idx, &labels, classes, None)
}

/// Trains on explicit `(rows, labels)`. `init` warm-starts from an earlier model.
pub fn train_on(
    spec: &TaskModelSpec,
    features: &FeatureMatrix,
    rows: &[usize],
    labels: &[u32],
    n_classes: usize,
    init: Option<&TrainedModel>,
) -> Result<TrainedModel> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    if rows.len() != labels.len() {
        return Err(Error::LabelMismatch(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= features.n_rows()) {
        return Err(Error::IndexOutOfRange {
            index: r,
            len: features.n_rows(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::LabelMismatch(format!(
            "label {l} with {n_classes} classes"
        )));
    }
    let mut params = match init {
        Some(m) => {
            if m.params.n_classes != n_classes || m.params.n_features != features.n_cols() {
                return Err(Error::DimensionMismatch {
                    expected: features.n_cols(),
                    found: m.params.n_features,
                });
            }
            m.params.clone()
        }
        None => SoftmaxParams::zeros(n_classes, features.n_cols()),
    };

    let mut history = Vec::with_capacity(spec.epochs + 1);
    for _ in 0..spec.epochs {
        history.push(objective(&params, features, rows, labels, spec.l2));
        let (gw, gb) = gradient(&params, features, rows, labels, spec.l2);
        for (w, g) in params.weights.iter_mut().zip(gw) {
            *w -= spec.learning_rate * g;
        }
        for (b, g) in params.bias.iter_mut().zip(gb) {
            *b -= spec.learning_rate * g;
        }
    }
    history.push(objective(&params, features, rows, labels, spec.l2));

    let correct = rows
        .iter()
        .zip(labels)
        .filter(|(&r, &y)| argmax(&params.proba(features.row(r))) == y as usize)
        .count();
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();

    Ok(TrainedModel {
        params,
        train_accuracy: correct as f64 / rows.len() as f64,
        loss_history: history,
        degenerate: present.len() < 2,
    })
}

pub fn predict_proba(
    model: &TrainedModel,
    features: &FeatureMatrix,
    idx: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if model.params.n_features != features.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: model.params.n_features,
            found: features.n_cols(),
        });
    }
    idx.iter()
        .map(|&r| {
            if r >= features.n_rows() {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    len: features.n_rows(),
                });
            }
            Ok(model.params.proba(features.row(r)))
        })
        .collect()
}

/// Fraction of `idx` whose argmax prediction matches the stored label.
pub fn evaluate(model: &TrainedModel, features: &FeatureMatrix, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let (labels, _) = labels_for(features, idx)?;
    let probs = predict_proba(model, features, idx)?;
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(p, &y)| argmax(p) == y as usize)
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

/// Accuracy over every row of a labeled matrix.
pub fn evaluate_all(model: &TrainedModel, features: &FeatureMatrix) -> Result<f64> {
    let idx: Vec<usize> = (0..features.n_rows()).collect();
    evaluate(model, features, &idx)
}

/// Posteriors and accuracies produced by an outside training pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalModel {
    pub posteriors_template: String,
    pub accuracy_template: String,
}

impl ExternalModel {
    pub fn from_spec(spec: &TaskModelSpec) -> Result<Self> {
        match (&spec.posteriors_template, &spec.accuracy_template) {
            (Some(p), Some(a)) => Ok(Self {
                posteriors_template: p.clone(),
                accuracy_template: a.clone(),
            }),
            _ => Err(Error::InvalidParameter(
                "external model needs posteriors_template and accuracy_template".into(),
            )),
        }
    }

    pub fn posteriors_path(&self, cycle: usize) -> PathBuf {
        fill_template(&self.posteriors_template, cycle)
    }

    pub fn accuracy_path(&self, cycle: usize) -> PathBuf {
        fill_template(&self.accuracy_template, cycle)
    }

    /// Posterior rows for `idx` from the model trained in `cycle`.
    pub fn posteriors(&self, cycle: usize, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        let path = self.posteriors_path(cycle);
        let m = featio::read_fmat(&path)
            .map_err(|e| Error::External(format!("{}: {e}", path.display())))?;
        idx.iter()
            .map(|&r| {
                if r >= m.n_rows() {
                    return Err(Error::IndexOutOfRange {
                        index: r,
                        len: m.n_rows(),
                    });
                }
                let row: Vec<f64> = m.row(r).iter().map(|&v| v as f64).collect();
                let sum: f64 = row.iter().sum();
                // f32 storage loses precision; renormalize within tolerance
                if (sum - 1.0).abs() > PROB_SUM_TOL * 10.0 || row.iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidProbabilities {
                        row: r,
                        reason: format!("external posterior row sums to {sum}"),
                    });
                }
                Ok(row.into_iter().map(|v| v / sum).collect())
            })
            .collect()
    }

    pub fn accuracy(&self, cycle: usize) -> Result<f64> {
        let path = self.accuracy_path(cycle);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::External(format!("{}: {e}", path.display())))?;
        let acc: f64 = text.trim().parse().map_err(|_| {
            Error::External(format!(
                "{}: not a number: {:?}",
                path.display(),
                text.trim()
            ))
        })?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::External(format!(
                "{}: accuracy {acc} outside [0, 1]",
                path.display()
            )));
        }
        Ok(acc)
    }
}

fn fill_template(template: &str, cycle: usize) -> PathBuf {
    PathBuf::from(template.replace("{cycle}", &cycle.to_string()))
}
