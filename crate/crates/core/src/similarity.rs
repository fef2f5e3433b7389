//! Component similarities and their weighted composition.
//!
//! ```text
//! bug     = alpha * sim_wp + (1 - alpha) * sim_p
//! context = beta  * sim_wc + (1 - beta)  * sim_r
//! deep    = gamma * bug    + (1 - gamma) * context
//! ```
//!
//! `sim_wp` matches problem-widget keypoints, `sim_p` and `sim_wc` are
//! min-max normalized Euclidean distances of the embeddings and histograms
//! (normalized over every pair in the corpus, NULL report included, so they
//! depend on the whole corpus), and `sim_r` is one minus the normalized DTW
//! cost of the action-object sequences.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DeepFeature;
use crate::nlp::{ActionObjectPair, ActionObjectSequence};
use crate::vision::{euclidean, Keypoint, KeypointSet};
use crate::NULL_REPORT_ID;

/// Lowe ratio: nearest must be closer than this fraction of second-nearest.
pub const MATCH_RATIO: f64 = 0.75;
pub const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("weight {name} = {value} is outside [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("the NULL report appears more than once")]
    DuplicateNull,
    #[error("the NULL report is missing")]
    MissingNull,
    #[error("need at least one report besides the NULL report")]
    TooFewReports,
    #[error("duplicate report id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
        }
    }
}

impl SimilarityWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, SimilarityError> {
        let w = SimilarityWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        for (name, value) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimilarityError::WeightOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

/// Weighted composition of the four component similarities.
pub fn compose(
    sim_wp: f64,
    sim_p: f64,
    sim_wc: f64,
    sim_r: f64,
    w: &SimilarityWeights,
) -> Result<f64, SimilarityError> {
    w.validate()?;
    Ok(compose_unchecked(sim_wp, sim_p, sim_wc, sim_r, w))
}

fn compose_unchecked(sim_wp: f64, sim_p: f64, sim_wc: f64, sim_r: f64, w: &SimilarityWeights) -> f64 {
    let bug = w.alpha * sim_wp + (1.0 - w.alpha) * sim_p;
    let context = w.beta * sim_wc + (1.0 - w.beta) * sim_r;
    (w.gamma * bug + (1.0 - w.gamma) * context).clamp(0.0, 1.0)
}

/// Keypoint-set similarity in [0, 1].
///
/// Descriptor sets are compared as sets (exact duplicate descriptors
/// collapse). A pair counts when each side is the other's nearest neighbour
/// and passes the ratio test in both directions; the score is the number of
/// such pairs over the smaller set size. Two empty sets are identical; an
/// empty set against a non-empty one scores 0.
pub fn sim_problem_widget(a: &KeypointSet, b: &KeypointSet) -> f64 {
    let a = distinct_descriptors(a);
    let b = distinct_descriptors(b);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let a_to_b: Vec<Option<usize>> = a.iter().map(|d| ratio_match(d, &b)).collect();
    let b_to_a: Vec<Option<usize>> = b.iter().map(|d| ratio_match(d, &a)).collect();
    let mutual = a_to_b
        .iter()
        .enumerate()
        .filter(|(i, m)| m.is_some_and(|j| b_to_a[j] == Some(*i)))
        .count();
    mutual as f64 / a.len().min(b.len()) as f64
}

fn distinct_descriptors(set: &KeypointSet) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::with_capacity(set.len());
    for Keypoint { descriptor, .. } in set.iter() {
        if !out.contains(&descriptor.as_slice()) {
            out.push(descriptor);
        }
    }
    out
}

/// Index of the nearest descriptor in `pool` if it passes the ratio test.
/// A lone candidate always passes; ties go to the lower index.
fn ratio_match(query: &[f64], pool: &[&[f64]]) -> Option<usize> {
    let mut best = (f64::INFINITY, usize::MAX);
    let mut second = f64::INFINITY;
    for (j, d) in pool.iter().enumerate() {
        let dist = euclidean(query, d);
        if dist < best.0 {
            second = best.0;
            best = (dist, j);
        } else if dist < second {
            second = dist;
        }
    }
    if pool.len() == 1 || best.0 < MATCH_RATIO * second {
        Some(best.1)
    } else {
        None
    }
}

/// Square similarity matrix with unit diagonal, row-major.
pub type Component = Vec<Vec<f64>>;

/// Euclidean distances over all distinct pairs, min-max normalized and
/// inverted: the closest pair gets 1, the farthest 0. When every pair is
/// equally far apart all similarities are 1.
pub fn pairwise_distances_then_normalize(vectors: &[Vec<f64>]) -> Component {
    let n = vectors.len();
    let mut dist = vec![vec![0.0; n]; n];
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&vectors[i], &vectors[j]);
            dist[i][j] = d;
            dist[j][i] = d;
            min = min.min(d);
            max = max.max(d);
        }
    }
    let mut sim = vec![vec![1.0; n]; n];
    if max > min {
        let span = max - min;
        for i in 0..n {
            for j in i + 1..n {
                let s = 1.0 - (dist[i][j] - min) / span;
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }
    }
    sim
}

pub fn sim_context_widget_matrix(histograms: &[[u32; 14]]) -> Component {
    let vectors: Vec<Vec<f64>> = histograms
        .iter()
        .map(|h| h.iter().map(|&c| c as f64).collect())
        .collect();
    pairwise_distances_then_normalize(&vectors)
}

fn multiset(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_default() += 1;
    }
    m
}

/// Local cost: 0 for identical pairs, 0.5 when only the action or only the
/// object (with its supplement) agrees, 1 otherwise.
pub fn pair_cost(p: &ActionObjectPair, q: &ActionObjectPair) -> f64 {
    let action = p.action == q.action;
    let object = multiset(&p.object) == multiset(&q.object) && p.supplement == q.supplement;
    match (action, object) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 0.5,
        (false, false) => 1.0,
    }
}

/// DTW alignment cost normalized by the summed sequence lengths.
pub fn dtw_cost(a: &ActionObjectSequence, b: &ActionObjectSequence) -> f64 {
    let (n, m) = (a.len(), b.len());
    match (n, m) {
        (0, 0) => return 0.0,
        (0, _) | (_, 0) => return 1.0,
        _ => {}
    }
    // Rolling rows of D; D[i][0] = i and D[0][j] = j.
    let mut prev: Vec<f64> = (0..=m).map(|j| j as f64).collect();
    let mut curr = vec![0.0; m + 1];
    for i in 1..=n {
        curr[0] = i as f64;
        for j in 1..=m {
            let best = prev[j].min(curr[j - 1]).min(prev[j - 1]);
            curr[j] = pair_cost(&a[i - 1], &b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m] / (n + m) as f64
}

pub fn sim_reproduction_step(a: &ActionObjectSequence, b: &ActionObjectSequence) -> f64 {
    1.0 - dtw_cost(a, b)
}

/// Pairwise DeepSimilarity over a corpus plus the NULL report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub version: u32,
    pub ids: Vec<String>,
    pub deep: Component,
    pub components: Components,
    pub weights: SimilarityWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub wp: Component,
    pub p: Component,
    pub wc: Component,
    pub r: Component,
}

impl SimilarityMatrix {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.deep[self.index_of(a)?][self.index_of(b)?])
    }

    /// Rebuilds `deep` from the retained components with new weights.
    pub fn recompose(&self, w: SimilarityWeights) -> Result<SimilarityMatrix, SimilarityError> {
        w.validate()?;
        let c = &self.components;
        let deep = square(self.ids.len(), |i, j| {
            compose_unchecked(c.wp[i][j], c.p[i][j], c.wc[i][j], c.r[i][j], &w)
        });
        Ok(SimilarityMatrix {
            deep,
            weights: w,
            ..self.clone()
        })
    }

    /// Image-only variant: `gamma * sim_wp + (1 - gamma) * sim_wc`.
    pub fn image_only(&self) -> SimilarityMatrix {
        let c = &self.components;
        let g = self.weights.gamma;
        let deep = square(self.ids.len(), |i, j| {
            (g * c.wp[i][j] + (1.0 - g) * c.wc[i][j]).clamp(0.0, 1.0)
        });
        SimilarityMatrix {
            deep,
            ..self.clone()
        }
    }
}

/// Symmetric matrix from `f` on the upper triangle, unit diagonal.
fn square(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Component {
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| f(i, j)).collect())
        .collect();
    let mut m = vec![vec![1.0; n]; n];
    for (i, row) in upper.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub fn build_similarity_matrix(
    features: &[DeepFeature],
    w: SimilarityWeights,
) -> Result<SimilarityMatrix, SimilarityError> {
    w.validate()?;
    match features.iter().filter(|f| f.is_null()).count() {
        0 => return Err(SimilarityError::MissingNull),
        1 => {}
        _ => return Err(SimilarityError::DuplicateNull),
    }
    if features.len() < 2 {
        return Err(SimilarityError::TooFewReports);
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = features.iter().find(|f| !seen.insert(f.report_id.as_str())) {
        return Err(SimilarityError::DuplicateId(dup.report_id.clone()));
    }

    let n = features.len();
    let wp = square(n, |i, j| {
        sim_problem_widget(&features[i].problem_widget_keypoints, &features[j].problem_widget_keypoints)
    });
    let embeddings: Vec<Vec<f64>> = features.iter().map(|f| f.bug_description_embedding.clone()).collect();
    let p = pairwise_distances_then_normalize(&embeddings);
    let histograms: Vec<[u32; 14]> = features.iter().map(|f| f.context_histogram).collect();
    let wc = sim_context_widget_matrix(&histograms);
    let r = square(n, |i, j| {
        sim_reproduction_step(&features[i].reproduction_sequence, &features[j].reproduction_sequence)
    });
    let deep = square(n, |i, j| compose_unchecked(wp[i][j], p[i][j], wc[i][j], r[i][j], &w));
    Ok(SimilarityMatrix {
        version: MATRIX_VERSION,
        ids: features.iter().map(|f| f.report_id.clone()).collect(),
        deep,
        components: Components { wp, p, wc, r },
        weights: w,
    })
}

/// True when `ids` holds the NULL report.
pub fn has_null(ids: &[String]) -> bool {
    ids.iter().any(|id| id == NULL_REPORT_ID)
}
