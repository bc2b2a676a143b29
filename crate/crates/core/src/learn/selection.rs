//! Stratified cross-validation, grid search and random search.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, Dataset, Family, Hyperparams, LearnError};
use crate::eval::{auc, classification_metrics, confusion, roc_curve};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CvMetric {
    #[default]
    Accuracy,
    Auc,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub metric: CvMetric,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
}

/// Fold index per row. Within each class rows are shuffled, then dealt to
/// folds round-robin with one counter running across both classes.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>, LearnError> {
    if k < 2 || k > labels.len() {
        return Err(LearnError::InvalidParam(format!("k must lie in [2, {}], got {k}", labels.len())));
    }
    let mut rng = seeded(seed);
    let mut fold = vec![0; labels.len()];
    let mut counter = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(LearnError::TooFewMembers {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = counter % k;
            counter += 1;
        }
    }
    Ok(fold)
}

fn fold_metric(metric: CvMetric, scores: &[f64], labels: &[u8]) -> Result<f64, LearnError> {
    let bad = |e: crate::eval::EvalError| LearnError::InvalidDataset(e.to_string());
    Ok(match metric {
        CvMetric::Accuracy => classification_metrics(&confusion(scores, labels).map_err(bad)?).map_err(bad)?.accuracy,
        CvMetric::F1 => classification_metrics(&confusion(scores, labels).map_err(bad)?).map_err(bad)?.f1,
        CvMetric::Auc => auc(&roc_curve(scores, labels).map_err(bad)?),
    })
}

/// Stratified k-fold estimate of `metric`. Fold `f` is fitted with seed
/// `derive_seed(seed, f)`.
pub fn cross_validate(
    family: Family,
    params: &Hyperparams,
    data: &Dataset,
    k: usize,
    seed: u64,
    metric: CvMetric,
) -> Result<CvResult, LearnError> {
    let folds = stratified_folds(data.targets(), k, seed)?;
    let fold_scores = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
            let model = fit(family, params, &data.subset(&train), derive_seed(seed, f as u64))?;
            let test = data.subset(&test);
            let scores = model.predict_rows(test.rows())?;
            fold_metric(metric, &scores, test.targets())
        })
        .collect::<Result<Vec<f64>, LearnError>>()?;
    let mean = fold_scores.iter().sum::<f64>() / k as f64;
    let std = (fold_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    Ok(CvResult {
        metric,
        fold_scores,
        mean,
        std,
    })
}

/// One evaluated parameter assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: BTreeMap<String, f64>,
    pub cv: CvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: BTreeMap<String, f64>,
    pub best_params: Hyperparams,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

/// Range or explicit list for random search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SearchSpace {
    Range { lo: f64, hi: f64 },
    Values(Vec<f64>),
}

fn lexicographic(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> std::cmp::Ordering {
    a.values()
        .zip(b.values())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn evaluate_all(
    family: Family,
    base: &Hyperparams,
    points: Vec<BTreeMap<String, f64>>,
    data: &Dataset,
    k: usize,
    seed: u64,
    metric: CvMetric,
) -> Result<SearchResult, LearnError> {
    let trials = points
        .into_iter()
        .map(|p| {
            let mut h = base.clone();
            for (name, &v) in &p {
                h.set(family, name, v)?;
            }
            let cv = cross_validate(family, &h, data, k, seed, metric)?;
            Ok(Trial { params: p, cv })
        })
        .collect::<Result<Vec<Trial>, LearnError>>()?;
    // Highest mean wins; ties go to the lexicographically smallest assignment.
    let best = trials
        .iter()
        .max_by(|a, b| a.cv.mean.total_cmp(&b.cv.mean).then_with(|| lexicographic(&b.params, &a.params)))
        .expect("at least one trial");
    let mut best_params = base.clone();
    for (name, &v) in &best.params {
        best_params.set(family, name, v)?;
    }
    Ok(SearchResult {
        best: best.params.clone(),
        best_params,
        best_score: best.cv.mean,
        trials,
    })
}

/// Exhaustive search over the Cartesian product of `grid`, each point scored
/// by [`cross_validate`] on the same folds.
pub fn grid_search(
    family: Family,
    base: &Hyperparams,
    grid: &BTreeMap<String, Vec<f64>>,
    data: &Dataset,
    k: usize,
    seed: u64,
    metric: CvMetric,
) -> Result<SearchResult, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::InvalidParam("grid is empty".into()));
    }
    if let Some((name, _)) = grid.iter().find(|(_, v)| v.is_empty()) {
        return Err(LearnError::InvalidParam(format!("grid entry {name:?} has no values")));
    }
    let mut points = vec![BTreeMap::new()];
    for (name, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), v);
                    q
                })
            })
            .collect();
    }
    evaluate_all(family, base, points, data, k, seed, metric)
}

/// `n_trials` seeded draws from `space`, uniform over each range or list.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    family: Family,
    base: &Hyperparams,
    space: &BTreeMap<String, SearchSpace>,
    n_trials: usize,
    data: &Dataset,
    k: usize,
    seed: u64,
    metric: CvMetric,
) -> Result<SearchResult, LearnError> {
    if n_trials < 1 {
        return Err(LearnError::InvalidParam("n_trials must be >= 1".into()));
    }
    for (name, s) in space {
        match s {
            SearchSpace::Range { lo, hi } if lo > hi || !lo.is_finite() || !hi.is_finite() => {
                return Err(LearnError::InvalidParam(format!("range for {name:?} has lo {lo} > hi {hi}")));
            }
            SearchSpace::Values(v) if v.is_empty() => {
                return Err(LearnError::InvalidParam(format!("value list for {name:?} is empty")));
            }
            _ => {}
        }
    }
    let mut rng = seeded(derive_seed(seed, u64::MAX));
    let points = (0..n_trials)
        .map(|_| {
            space
                .iter()
                .map(|(name, s)| {
                    let v = match s {
                        SearchSpace::Range { lo, hi } => rng.random_range(*lo..=*hi),
                        SearchSpace::Values(v) => v[rng.random_range(0..v.len())],
                    };
                    (name.clone(), v)
                })
                .collect()
        })
        .collect();
    evaluate_all(family, base, points, data, k, seed, metric)
}
