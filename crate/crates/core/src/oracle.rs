//! Labeling oracle. Ground-truth labels live here and nowhere else during a
//! run: clustering, scoring and sub-pooling only ever see the label-free
//! feature view returned by [`LabelOracle::split`].

use crate::error::{Error, Result};
use crate::featio::FeatureMatrix;

#[derive(Debug, Clone)]
pub struct LabelOracle {
    labels: Vec<u32>,
    class_count: usize,
}

impl LabelOracle {
    /// Separates a labeled matrix into a label-free view and the oracle.
    pub fn split(features: &FeatureMatrix) -> Result<(FeatureMatrix, Self)> {
        let labels = features.labels().ok_or(Error::MissingLabels)?.to_vec();
        let class_count = features.class_count().ok_or(Error::MissingLabels)? as usize;
        Ok((
            features.without_labels(),
            Self {
                labels,
                class_count,
            },
        ))
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reveals the labels of `rows`, in order.
    pub fn reveal(&self, rows: &[usize]) -> Result<Vec<u32>> {
        rows.iter()
            .map(|&r| {
                self.labels.get(r).copied().ok_or(Error::IndexOutOfRange {
                    index: r,
                    len: self.labels.len(),
                })
            })
            .collect()
    }
}
