//! Tree ensembles: bagged forests averaging their members, and weighted
//! ensembles whose member weights solve a simplex-constrained least-squares
//! problem.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{train_tree_on, FeatureSampler, TreeModel, TreeParams};
use super::{Dataset, LearnError};
use crate::rng::{derive_seed, seeded};

fn member_tree_params() -> TreeParams {
    TreeParams {
        max_depth: 10,
        min_gain: 0.01,
        prune: false,
        ..TreeParams::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    /// Draw ⌈√d⌉ candidate features at every split.
    pub feature_subsample: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            tree: member_tree_params(),
            bootstrap: true,
            feature_subsample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub tree: TreeParams,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 20,
            tree: member_tree_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub seed: u64,
    pub params: ForestParams,
}

impl ForestModel {
    /// Mean of member scores.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<TreeModel>,
    /// Non-negative, summing to one.
    pub weights: Vec<f64>,
    pub seed: u64,
    pub params: GbtParams,
}

impl GbtModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().zip(&self.weights).map(|(t, w)| w * t.score(x)).sum();
        s.clamp(0.0, 1.0)
    }
}

fn bootstrap_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Trains `n_trees` members in parallel. Member `i` draws from its own stream
/// `derive_seed(seed, i)`, so the result does not depend on scheduling.
fn grow_members(
    data: &Dataset,
    n_trees: usize,
    tree: &TreeParams,
    bootstrap: bool,
    feature_subsample: bool,
    seed: u64,
) -> Result<Vec<TreeModel>, LearnError> {
    if n_trees < 1 {
        return Err(LearnError::InvalidParam("n_trees must be >= 1".into()));
    }
    let n = data.n_samples();
    let k = (data.n_features() as f64).sqrt().ceil() as usize;
    (0..n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, i as u64));
            let indices = if bootstrap {
                bootstrap_indices(&mut rng, n)
            } else {
                (0..n).collect()
            };
            let sampler = feature_subsample.then_some(FeatureSampler { rng: &mut rng, k });
            train_tree_on(data, &indices, tree, sampler)
        })
        .collect()
}

pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<ForestModel, LearnError> {
    let trees = grow_members(data, params.n_trees, &params.tree, params.bootstrap, params.feature_subsample, seed)?;
    Ok(ForestModel {
        trees,
        seed,
        params: params.clone(),
    })
}

/// Bootstrap-trained members combined with weights from
/// [`optimize_ensemble_weights`] on the full training set.
pub fn train_gbt(data: &Dataset, params: &GbtParams, seed: u64) -> Result<GbtModel, LearnError> {
    let trees = grow_members(data, params.n_trees, &params.tree, true, false, seed)?;
    let scores: Vec<Vec<f64>> = data
        .rows()
        .iter()
        .map(|r| trees.iter().map(|t| t.score(r)).collect())
        .collect();
    let y: Vec<f64> = data.targets().iter().map(|&t| f64::from(t)).collect();
    let weights = optimize_ensemble_weights(&scores, &y)?;
    Ok(GbtModel {
        trees,
        weights,
        seed,
        params: params.clone(),
    })
}

/// Euclidean projection onto `{a : a >= 0, Σa = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn sse(g: &DMatrix<f64>, c: &DVector<f64>, yy: f64, a: &DVector<f64>) -> f64 {
    // ‖y − Sa‖² = yᵀy − 2cᵀa + aᵀGa
    yy - 2.0 * c.dot(a) + a.dot(&(g * a))
}

fn solve_spd(g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    let scale = g.trace() / m as f64 + 1.0;
    let mut jitter = 0.0;
    loop {
        let reg = g + DMatrix::identity(m, m) * jitter;
        if let Some(ch) = reg.cholesky() {
            let sol = ch.solve(rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return sol;
            }
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
}

/// Weights `a` minimising `‖y − S·a‖²` over the probability simplex, where
/// `scores[i][k]` is member `k`'s score on sample `i`.
///
/// Identical member columns are merged and share their weight equally. The
/// equality-constrained optimum comes from the Lagrange conditions on the
/// normal equations; if it has negative entries the problem is finished by
/// projected gradient descent from the better of its simplex projection and
/// the uniform point.
pub fn optimize_ensemble_weights(scores: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, LearnError> {
    let m = scores.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(LearnError::InvalidParam("need at least one ensemble member".into()));
    }
    if scores.len() != y.len() || scores.iter().any(|r| r.len() != m) {
        return Err(LearnError::InvalidDataset("score matrix shape does not match targets".into()));
    }
    let n = y.len();

    // Group bitwise-identical columns.
    let column = |k: usize| scores.iter().map(move |r| r[k].to_bits());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in 0..m {
        match groups.iter_mut().find(|g| column(g[0]).eq(column(k))) {
            Some(g) => g.push(k),
            None => groups.push(vec![k]),
        }
    }
    let q = groups.len();
    let s = DMatrix::from_fn(n, q, |i, j| scores[i][groups[j][0]]);
    let yv = DVector::from_column_slice(y);
    let g = s.transpose() * &s;
    let c = s.transpose() * &yv;
    let yy = yv.dot(&yv);

    let merged = if q == 1 {
        DVector::from_element(1, 1.0)
    } else {
        let mut rhs = DMatrix::zeros(q, 2);
        rhs.set_column(0, &c);
        rhs.set_column(1, &DVector::from_element(q, 1.0));
        let sol = solve_spd(&g, &rhs);
        let (ginv_c, ginv_1) = (sol.column(0).into_owned(), sol.column(1).into_owned());
        let mu = (ginv_c.sum() - 1.0) / ginv_1.sum();
        let a = ginv_c - ginv_1 * mu;
        if a.iter().all(|&v| v >= 0.0) {
            a
        } else {
            projected_descent(&g, &c, yy, &a)
        }
    };

    let mut out = vec![0.0; m];
    for (gi, members) in groups.iter().enumerate() {
        let share = merged[gi].max(0.0) / members.len() as f64;
        for &k in members {
            out[k] = share;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
    Ok(out)
}

fn projected_descent(g: &DMatrix<f64>, c: &DVector<f64>, yy: f64, unconstrained: &DVector<f64>) -> DVector<f64> {
    let q = g.nrows();
    let projected = DVector::from_vec(project_to_simplex(unconstrained.as_slice()));
    let uniform = DVector::from_element(q, 1.0 / q as f64);
    let mut a = if sse(g, c, yy, &projected) <= sse(g, c, yy, &uniform) {
        projected
    } else {
        uniform
    };
    let lipschitz = 2.0 * g.clone().symmetric_eigenvalues().max();
    if !(lipschitz > 0.0) {
        return a;
    }
    let step = 1.0 / lipschitz;
    for _ in 0..10_000 {
        let grad = (g * &a - c) * 2.0;
        let next = DVector::from_vec(project_to_simplex((&a - grad * step).as_slice()));
        let moved = (&next - &a).amax();
        a = next;
        if moved < 1e-14 {
            break;
        }
    }
    a
}
