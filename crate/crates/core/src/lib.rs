//! Prioritization of crowdsourced mobile-app test reports.
//!
//! Each report (a screenshot plus a free-text description) is reduced to a
//! [`features::DeepFeature`]: keypoints of the widget the bug concerns, an
//! embedding of the bug description, a histogram of the remaining widget
//! types, and the action-object sequence of the reproduction steps. Reports
//! are then ordered greedily so that the next report is always the one least
//! similar to everything already selected, and orderings are scored with
//! APFD against labeled bug categories.
//!
//! Pipeline stages:
//!
//! - [`corpus`]: on-disk report corpora and ground-truth labels.
//! - [`vision`]: widget extraction, widget-type classification, problem
//!   widget localization and keypoint descriptors.
//! - [`nlp`]: sentence splitting, bug/step classification, hashed
//!   embeddings and action-object sequences.
//! - [`features`]: per-report aggregation and the NULL report.
//! - [`similarity`]: component similarities and their weighted composition.
//! - [`prioritize`]: greedy pool-based ordering.
//! - [`eval`]: APFD, classifier metrics and strategy comparison.
//! - [`synth`]: synthetic corpora with planted duplicate clusters.
//! - [`cli`]: command implementations behind the `deepprior` binary.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod lexicon;
pub mod nlp;
pub mod prioritize;
pub mod similarity;
pub mod synth;
pub mod vision;

mod fsutil;

/// Reserved report id of the artificial NULL report.
pub const NULL_REPORT_ID: &str = "<NULL>";
