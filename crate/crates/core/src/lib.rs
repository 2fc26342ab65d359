//! Balanced active-learning selection engine.
//!
//! The pipeline consumes precomputed feature vectors for an unlabeled pool
//! and decides which rows to send for labeling in each cycle:
//!
//! 1. [`clustering`] fits k-means over the pool.
//! 2. [`cdd`] scores every row by the gap between the squared distances to
//!    its two nearest centroids and sorts the pool by that score.
//! 3. [`pool`] cuts the sorted pool into per-cycle windows whose width is
//!    governed by a balancing factor `beta`.
//! 4. [`samplers`] picks `K` rows from each window using the posteriors of
//!    the current [`taskmodel`].
//! 5. [`balancer`] picks `beta` by trial training on the second cycle.
//! 6. [`orchestrator`] runs the whole loop and writes run directories.
//!
//! [`harness`] provides synthetic pools and analytics used by the
//! acceptance suite; [`featio`] owns every on-disk format.

pub mod balancer;
pub mod cdd;
pub mod clustering;
pub mod error;
pub mod featio;
pub mod harness;
pub mod oracle;
pub mod orchestrator;
pub mod pool;
pub mod rng;
pub mod samplers;
pub mod taskmodel;

pub use error::{Error, Result};
pub use featio::{FeatureMatrix, SelectionManifest};
