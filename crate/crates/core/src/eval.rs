//! APFD, classifier metrics and strategy comparison.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelMap;
use crate::features::DeepFeature;
use crate::prioritize::{prioritize, NullPolicy, PrioritizeError};
use crate::similarity::{build_similarity_matrix, SimilarityError, SimilarityWeights};

pub const RESULTS_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no labels: APFD needs at least one bug category")]
    EmptyLabels,
    #[error("ordering and labels disagree: {0}")]
    LabelMismatch(String),
    #[error("invalid counts n={n}, M={m}: need 1 <= M <= n")]
    InvalidCounts { n: usize, m: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("no strategies requested")]
    NoStrategies,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Prioritize(#[from] PrioritizeError),
}

/// Average Percentage of Faults Detected.
///
/// `1 - sum(T_i) / (n * M) + 1 / (2n)` where `T_i` is the 0-based position
/// of the first report of category `i`. The ordering must contain every
/// labeled report exactly once and nothing else.
pub fn apfd(ordering: &[String], labels: &LabelMap) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    let mut seen = HashSet::new();
    let mut first: HashMap<&str, usize> = HashMap::new();
    for (pos, id) in ordering.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(EvalError::LabelMismatch(format!("report {id:?} ordered twice")));
        }
        let category = labels
            .category(id)
            .ok_or_else(|| EvalError::LabelMismatch(format!("report {id:?} has no label")))?;
        first.entry(category).or_insert(pos);
    }
    if let Some((id, _)) = labels.iter().find(|(id, _)| !seen.contains(id)) {
        return Err(EvalError::LabelMismatch(format!("labeled report {id:?} not in ordering")));
    }
    let n = ordering.len() as f64;
    let m = first.len() as f64;
    let sum: usize = first.values().sum();
    Ok(1.0 - sum as f64 / (n * m) + 1.0 / (2.0 * n))
}

/// Best attainable APFD for `n` reports over `m` categories.
pub fn ideal_apfd(n: usize, m: usize) -> Result<f64, EvalError> {
    if m == 0 || m > n {
        return Err(EvalError::InvalidCounts { n, m });
    }
    Ok(1.0 - (m as f64 - 2.0) / (2.0 * n as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// One-vs-rest counts of `positive` over (actual, predicted) pairs.
    pub fn one_vs_rest<T: PartialEq>(pairs: &[(T, T)], positive: &T) -> Self {
        let mut c = ConfusionCounts::default();
        for (actual, predicted) in pairs {
            match (actual == positive, predicted == positive) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision, recall and their harmonic mean; F is 0 when TP is 0.
pub fn classifier_metrics(c: &ConfusionCounts) -> Result<ClassifierMetrics, EvalError> {
    if c.tp + c.fp == 0 {
        return Err(EvalError::UndefinedMetric("precision: no positive predictions"));
    }
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::UndefinedMetric("recall: no positive samples"));
    }
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    Ok(ClassifierMetrics {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
    })
}

/// Harmonic mean: `2 / F = 1 / precision + 1 / recall`.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision <= 0.0 || recall <= 0.0 {
        return 0.0;
    }
    2.0 / (1.0 / precision + 1.0 / recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    DeepPrior,
    Image,
    Random,
    Ideal,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::DeepPrior => "deepprior",
            Strategy::Image => "image",
            Strategy::Random => "random",
            Strategy::Ideal => "ideal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deepprior" => Ok(Strategy::DeepPrior),
            "image" => Ok(Strategy::Image),
            "random" => Ok(Strategy::Random),
            "ideal" => Ok(Strategy::Ideal),
            _ => Err(EvalError::UnknownStrategy(s.to_string())),
        }
    }
}

pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>, EvalError> {
    let strategies = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Err(EvalError::NoStrategies);
    }
    Ok(strategies)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub weights: SimilarityWeights,
    pub null_policy: NullPolicy,
    pub random_runs: usize,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            weights: SimilarityWeights::default(),
            null_policy: NullPolicy::Keep,
            random_runs: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub apfd: Vec<f64>,
    pub mean_apfd: f64,
    pub runtime_ms: f64,
}

/// One report per category first (categories in order of first
/// appearance), then the rest, both in corpus order.
pub fn ideal_order(corpus_ids: &[String], labels: &LabelMap) -> Vec<String> {
    let mut covered = HashSet::new();
    let (mut head, mut tail) = (Vec::new(), Vec::new());
    for id in corpus_ids {
        let fresh = labels.category(id).is_some_and(|c| covered.insert(c));
        if fresh {
            head.push(id.clone());
        } else {
            tail.push(id.clone());
        }
    }
    head.extend(tail);
    head
}

/// Seeded permutation for random run `run`; each run has its own stream.
pub fn random_order(corpus_ids: &[String], seed: u64, run: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    let mut ids = corpus_ids.to_vec();
    ids.shuffle(&mut rng);
    ids
}

/// Runs one strategy. `features` must hold the NULL report for the
/// similarity-based strategies; `corpus_ids` fixes corpus order.
pub fn run_strategy(
    strategy: Strategy,
    corpus_ids: &[String],
    labels: &LabelMap,
    features: &[DeepFeature],
    config: &StrategyConfig,
) -> Result<StrategyResult, EvalError> {
    let start = Instant::now();
    let apfds = match strategy {
        Strategy::DeepPrior | Strategy::Image => {
            let matrix = build_similarity_matrix(features, config.weights)?;
            let matrix = if strategy == Strategy::Image {
                matrix.image_only()
            } else {
                matrix
            };
            let order = prioritize(&matrix, config.null_policy)?;
            vec![apfd(&order.order, labels)?]
        }
        Strategy::Ideal => vec![apfd(&ideal_order(corpus_ids, labels), labels)?],
        Strategy::Random => (0..config.random_runs.max(1) as u64)
            .into_par_iter()
            .map(|run| apfd(&random_order(corpus_ids, config.seed, run), labels))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let mean_apfd = apfds.iter().sum::<f64>() / apfds.len() as f64;
    Ok(StrategyResult {
        strategy,
        apfd: apfds,
        mean_apfd,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub mean_apfd: f64,
    pub runs: usize,
    pub runtime_ms: f64,
    /// Relative improvement of deepprior over this row, `(a - b) / b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deepprior_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub version: u32,
    pub rows: Vec<ResultRow>,
}

pub fn compare(
    corpus_ids: &[String],
    labels: &LabelMap,
    features: &[DeepFeature],
    strategies: &[Strategy],
    config: &StrategyConfig,
) -> Result<ComparisonTable, EvalError> {
    if strategies.is_empty() {
        return Err(EvalError::NoStrategies);
    }
    let mut results: BTreeMap<usize, StrategyResult> = BTreeMap::new();
    for (i, &s) in strategies.iter().enumerate() {
        results.insert(i, run_strategy(s, corpus_ids, labels, features, config)?);
    }
    let deepprior = results
        .values()
        .find(|r| r.strategy == Strategy::DeepPrior)
        .map(|r| r.mean_apfd);
    let rows = results
        .into_values()
        .map(|r| ResultRow {
            deepprior_improvement: match deepprior {
                Some(a) if r.strategy != Strategy::DeepPrior && r.mean_apfd > 0.0 => {
                    Some((a - r.mean_apfd) / r.mean_apfd)
                }
                _ => None,
            },
            strategy: r.strategy,
            mean_apfd: r.mean_apfd,
            runs: r.apfd.len(),
            runtime_ms: r.runtime_ms,
        })
        .collect();
    Ok(ComparisonTable {
        version: RESULTS_VERSION,
        rows,
    })
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let with_improvement = self.rows.iter().any(|r| r.deepprior_improvement.is_some());
        let mut out = String::new();
        let _ = write!(out, "{:<10} {:>9} {:>5} {:>12}", "strategy", "mean_apfd", "runs", "runtime_ms");
        if with_improvement {
            let _ = write!(out, " {:>14}", "deepprior_vs");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<10} {:>9.3} {:>5} {:>12.1}",
                r.strategy.name(),
                r.mean_apfd,
                r.runs,
                r.runtime_ms
            );
            if with_improvement {
                match r.deepprior_improvement {
                    Some(v) => {
                        let _ = write!(out, " {:>13.2}%", v * 100.0);
                    }
                    None => {
                        let _ = write!(out, " {:>14}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Strategy;

    fn labels(pairs: &[(&str, &str)]) -> LabelMap {
        LabelMap::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Labels for `n` reports "r0".."r{n-1}" where report i has category cats[i].
    fn labeled(cats: &[usize]) -> (Vec<String>, LabelMap) {
        let ids: Vec<String> = (0..cats.len()).map(|i| format!("r{i:03}")).collect();
        let map = ids.iter().zip(cats).map(|(id, c)| (id.clone(), format!("b{c}"))).collect();
        (ids, LabelMap::new(map).unwrap())
    }

    #[test]
    fn apfd_examples() {
        let (order, l) = labeled(&[0, 1, 0, 0, 1, 0, 0, 1, 0, 0]);
        assert!((apfd(&order, &l).unwrap() - 1.0).abs() < 1e-12);

        let cats: Vec<usize> = (0..134).map(|i| if i < 9 { i } else { i % 9 }).collect();
        let (order, l) = labeled(&cats);
        let v = apfd(&order, &l).unwrap();
        assert!((v - 0.97388).abs() < 1e-4, "{v}");
        assert_eq!(format!("{v:.3}"), "0.974");

        let l = labels(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        assert_eq!(apfd(&ids(&["a", "b", "c", "d"]), &l).unwrap(), 0.875);
    }

    #[test]
    fn apfd_errors() {
        let l = labels(&[("a", "x"), ("b", "y")]);
        assert!(matches!(apfd(&ids(&["a"]), &l), Err(EvalError::LabelMismatch(_))));
        assert!(matches!(apfd(&ids(&["a", "b", "c"]), &l), Err(EvalError::LabelMismatch(_))));
        assert!(matches!(apfd(&ids(&["a", "a", "b"]), &l), Err(EvalError::LabelMismatch(_))));
        assert_eq!(apfd(&ids(&["a"]), &LabelMap::default()), Err(EvalError::EmptyLabels));
    }

    #[test]
    fn ideal_examples() {
        assert_eq!(ideal_apfd(10, 2).unwrap(), 1.0);
        assert!((ideal_apfd(29, 6).unwrap() - 0.931).abs() < 5e-4);
        for n in 2..40 {
            assert_eq!(ideal_apfd(n, 2).unwrap(), 1.0);
        }
        assert_eq!(ideal_apfd(3, 0), Err(EvalError::InvalidCounts { n: 3, m: 0 }));
        assert_eq!(ideal_apfd(3, 4), Err(EvalError::InvalidCounts { n: 3, m: 4 }));
    }

    #[test]
    fn ideal_closed_form_matches_constructed_orderings() {
        for n in 1..=50 {
            for m in 1..=n {
                let cats: Vec<usize> = (0..n).map(|i| if i < m { i } else { (i * 7) % m }).collect();
                let (order, l) = labeled(&cats);
                let got = apfd(&ideal_order(&order, &l), &l).unwrap();
                let want = ideal_apfd(n, m).unwrap();
                assert!((got - want).abs() < 1e-12, "n={n} m={m}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ideal_order_layout() {
        let l = labels(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "z"), ("e", "y")]);
        assert_eq!(ideal_order(&ids(&["b", "a", "e", "c", "d"]), &l), ids(&["b", "e", "d", "a", "c"]));
    }

    #[test]
    fn metrics_examples() {
        let m = classifier_metrics(&ConfusionCounts { tp: 3, fp: 1, tn: 0, fn_: 1 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f_measure), (0.75, 0.75, 0.75));
        let m = classifier_metrics(&ConfusionCounts { tp: 5, fp: 0, tn: 4, fn_: 0 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f_measure), (1.0, 1.0, 1.0));
        assert!((f_measure(0.9981, 1.0) - 0.9990).abs() < 5e-5);
        let zero = classifier_metrics(&ConfusionCounts { tp: 0, fp: 2, tn: 1, fn_: 3 }).unwrap();
        assert_eq!(zero.f_measure, 0.0);
        assert!(classifier_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 1, fn_: 1 }).is_err());
        assert!(classifier_metrics(&ConfusionCounts { tp: 0, fp: 1, tn: 1, fn_: 0 }).is_err());
    }

    #[test]
    fn metrics_match_brute_force_confusion() {
        let pairs = [("a", "a"), ("a", "b"), ("b", "b"), ("c", "a"), ("a", "a"), ("b", "c"), ("c", "c")];
        for class in ["a", "b", "c"] {
            let c = ConfusionCounts::one_vs_rest(&pairs, &class);
            let predicted: Vec<_> = pairs.iter().filter(|p| p.1 == class).collect();
            let actual: Vec<_> = pairs.iter().filter(|p| p.0 == class).collect();
            let hits = pairs.iter().filter(|p| p.0 == class && p.1 == class).count() as f64;
            let m = classifier_metrics(&c).unwrap();
            assert_eq!(m.precision, hits / predicted.len() as f64);
            assert_eq!(m.recall, hits / actual.len() as f64);
            assert_eq!(c.tp + c.fp + c.tn + c.fn_, pairs.len() as u64);
        }
    }

    #[test]
    fn strategies_parse() {
        assert_eq!(
            parse_strategies("ideal, random,deepprior,IMAGE").unwrap(),
            vec![Strategy::Ideal, Strategy::Random, Strategy::DeepPrior, Strategy::Image]
        );
        assert_eq!(parse_strategies("bddiv"), Err(EvalError::UnknownStrategy("bddiv".into())));
        assert_eq!(parse_strategies(""), Err(EvalError::NoStrategies));
    }

    #[test]
    fn random_is_seeded() {
        let (order, l) = labeled(&[0, 0, 0, 1, 1, 2, 2, 2, 2, 3]);
        let cfg = StrategyConfig {
            random_runs: 20,
            ..StrategyConfig::default()
        };
        let a = run_strategy(Strategy::Random, &order, &l, &[], &cfg).unwrap();
        let b = run_strategy(Strategy::Random, &order, &l, &[], &cfg).unwrap();
        assert_eq!(a.apfd, b.apfd);
        assert_eq!(a.apfd.len(), 20);
        assert_ne!(random_order(&order, 42, 0), random_order(&order, 42, 1));
        let ideal = run_strategy(Strategy::Ideal, &order, &l, &[], &cfg).unwrap();
        assert_eq!(ideal.apfd.len(), 1);
        assert_eq!(ideal.mean_apfd, ideal_apfd(10, 4).unwrap());
        assert!(ideal.mean_apfd >= a.mean_apfd);
    }

    #[test]
    fn compare_table_shapes() {
        let (order, l) = labeled(&[0, 0, 0, 1, 1, 2]);
        let cfg = StrategyConfig::default();
        let t = compare(&order, &l, &[], &[Strategy::Ideal, Strategy::Random], &cfg).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows[0].mean_apfd >= t.rows[1].mean_apfd);
        assert!(t.rows.iter().all(|r| r.deepprior_improvement.is_none()));
        assert!(!t.render().contains("deepprior_vs"));
        let single = compare(&order, &l, &[], &[Strategy::Ideal], &cfg).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(compare(&order, &l, &[], &[], &cfg), Err(EvalError::NoStrategies));
    }

    /// First-occurrence scan written out independently of `apfd`.
    fn oracle_apfd(order: &[String], l: &LabelMap) -> f64 {
        let mut cats: Vec<&str> = Vec::new();
        let mut positions: Vec<usize> = Vec::new();
        for (i, id) in order.iter().enumerate() {
            let c = l.category(id).unwrap();
            if !cats.contains(&c) {
                cats.push(c);
                positions.push(i);
            }
        }
        let n = order.len() as f64;
        let m = cats.len() as f64;
        1.0 - positions.iter().sum::<usize>() as f64 / (n * m) + 1.0 / (2.0 * n)
    }

    proptest! {
        #[test]
        fn apfd_matches_oracle_and_bound(
            cats in proptest::collection::vec(0usize..5, 1..=12),
            shuffle_seed in any::<u64>(),
        ) {
            let (ids, l) = labeled(&cats);
            let order = random_order(&ids, shuffle_seed, 0);
            let got = apfd(&order, &l).unwrap();
            prop_assert_eq!(got, oracle_apfd(&order, &l));
            prop_assert!(got <= ideal_apfd(ids.len(), l.category_count()).unwrap() + 1e-12);
        }

        #[test]
        fn apfd_ignores_tail_permutations(
            cats in proptest::collection::vec(0usize..4, 2..=12),
            seed in any::<u64>(),
        ) {
            let (ids, l) = labeled(&cats);
            let order = random_order(&ids, seed, 0);
            // Position after the last first-detection.
            let mut seen = HashSet::new();
            let mut last = 0;
            for (i, id) in order.iter().enumerate() {
                if seen.insert(l.category(id).unwrap()) {
                    last = i;
                }
            }
            let mut permuted = order.clone();
            permuted[last + 1..].reverse();
            prop_assert_eq!(apfd(&order, &l).unwrap(), apfd(&permuted, &l).unwrap());
        }
    }
}
