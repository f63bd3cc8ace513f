//! Contrastive pose-metric learning and nearest-neighbour pose retrieval.
//!
//! Two small feed-forward encoders map "camera" and "rendering" feature
//! vectors into a shared embedding space where L2 distance tracks the
//! geodesic distance between poses. Inference is retrieval: the reference
//! set is embedded offline and a query resolves to the pose of its nearest
//! embedded rendering.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`pose`] — rotation representations and the geodesic pose distance;
//! * [`dataset`] — deterministic synthetic data and reference-set designs;
//! * [`augment`] — IoU-bounded bounding-box noise and synthetic occluders;
//! * [`mining`] — subcategory-balanced batches and margin-violation mining;
//! * [`loss`] — the dynamic-margin contrastive loss and ablation variants;
//! * [`nn`] / [`optim`] / [`train`] — the encoder pair and its training loop;
//! * [`index`] — exact nearest-neighbour retrieval (linear scan / kd-tree);
//! * [`metrics`] / [`experiment`] — accuracy reporting and sweep drivers.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod index;
pub mod kdtree;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod nn;
pub mod optim;
pub mod pose;
pub mod train;

pub use error::{Error, Result};
