//! Greedy report ordering against a growing pool.
//!
//! The pool starts with the NULL report. Each step scores every remaining
//! report by its minimum similarity to the pool and moves the lowest-scoring
//! one (ties: smallest id) into the pool.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::SimilarityMatrix;
use crate::NULL_REPORT_ID;

pub const ORDER_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum PrioritizeError {
    #[error("similarity matrix has no NULL report")]
    MissingNull,
}

/// Whether the NULL report stays in the pool after the first pick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullPolicy {
    #[default]
    Keep,
    DropAfterFirst,
}

impl FromStr for NullPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keep" => Ok(NullPolicy::Keep),
            "drop-after-first" => Ok(NullPolicy::DropAfterFirst),
            other => Err(format!("unknown null policy {other:?} (expected keep or drop-after-first)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditStep {
    pub id: String,
    pub min_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedOrder {
    pub version: u32,
    pub order: Vec<String>,
    pub audit: Vec<AuditStep>,
}

pub fn prioritize(matrix: &SimilarityMatrix, policy: NullPolicy) -> Result<PrioritizedOrder, PrioritizeError> {
    let null = matrix.index_of(NULL_REPORT_ID).ok_or(PrioritizeError::MissingNull)?;
    let sim = &matrix.deep;
    let mut remaining: Vec<usize> = (0..matrix.ids.len()).filter(|&i| i != null).collect();
    // Minimum similarity of each report to the current pool.
    let mut pool_min: Vec<f64> = sim.iter().map(|row| row[null]).collect();

    let mut order = Vec::with_capacity(remaining.len());
    let mut audit = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (cand, cur) = (remaining[k], remaining[best]);
            let (c, b) = (pool_min[cand], pool_min[cur]);
            if c < b || (c == b && matrix.ids[cand] < matrix.ids[cur]) {
                best = k;
            }
        }
        let chosen = remaining.swap_remove(best);
        let first = order.is_empty();
        order.push(matrix.ids[chosen].clone());
        audit.push(AuditStep {
            id: matrix.ids[chosen].clone(),
            min_sim: pool_min[chosen],
        });
        for &r in &remaining {
            pool_min[r] = if first && policy == NullPolicy::DropAfterFirst {
                sim[r][chosen]
            } else {
                pool_min[r].min(sim[r][chosen])
            };
        }
    }
    Ok(PrioritizedOrder {
        version: ORDER_VERSION,
        order,
        audit,
    })
}
