//! Classifier families and model selection.
//!
//! Every family produces a score in `[0, 1]` for the positive class; the hard
//! label is `score > 0.5`, so a score of exactly one half is negative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod ensemble;
pub mod glm;
pub mod logistic;
pub mod mlp;
pub mod naive_bayes;
pub mod selection;
pub mod tree;

pub use ensemble::{optimize_ensemble_weights, train_forest, train_gbt, ForestModel, ForestParams, GbtModel, GbtParams};
pub use glm::{train_glm_elastic, GlmModel, GlmParams};
pub use logistic::{train_logistic, LogisticModel, LogisticParams};
pub use mlp::{train_mlp, Activation, MlpModel, MlpParams};
pub use naive_bayes::{train_naive_bayes, NbModel, NbParams};
pub use selection::{cross_validate, grid_search, random_search, CvMetric, CvResult, SearchResult, SearchSpace};
pub use tree::{train_tree, Criterion, TreeModel, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("Hessian is singular even after ridge jitter")]
    SingularHessian,
    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown parameter {name:?} for family {family}")]
    UnknownParam { family: Family, name: String },
    #[error("class {class} has {count} members, fewer than k = {k}; use a smaller k")]
    TooFewMembers { class: u8, count: usize, k: usize },
    #[error("model file: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
}

/// Training rows with 0/1 targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<u8>, feature_names: Vec<String>) -> Result<Self, LearnError> {
        if x.is_empty() {
            return Err(LearnError::InvalidDataset("no rows".into()));
        }
        if x.len() != y.len() {
            return Err(LearnError::InvalidDataset(format!("{} rows but {} labels", x.len(), y.len())));
        }
        let d = feature_names.len();
        if d == 0 {
            return Err(LearnError::InvalidDataset("no features".into()));
        }
        if let Some(i) = x.iter().position(|r| r.len() != d) {
            return Err(LearnError::InvalidDataset(format!("row {i} has {} values, expected {d}", x[i].len())));
        }
        if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(LearnError::InvalidDataset(format!("row {i} has a non-finite value")));
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(LearnError::InvalidDataset(format!("label {} at row {i} is not 0/1", y[i])));
        }
        Ok(Self { x, y, feature_names })
    }

    /// Unnamed features `f0..f{d-1}`.
    pub fn from_rows(x: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self, LearnError> {
        let d = x.first().map_or(0, Vec::len);
        Self::new(x, y, (0..d).map(|i| format!("f{i}")).collect())
    }

    pub fn n_samples(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn targets(&self) -> &[u8] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.y.iter().filter(|&&v| v == 1).count();
        [self.y.len() - pos, pos]
    }

    pub fn has_both_classes(&self) -> bool {
        let [neg, pos] = self.class_counts();
        neg > 0 && pos > 0
    }

    pub(crate) fn require_both_classes(&self) -> Result<(), LearnError> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(LearnError::SingleClass)
        }
    }

    /// Rows at `indices` (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: indices.iter().map(|&i| self.x[i].clone()).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Nb,
    Glm,
    Lr,
    Dt,
    Rf,
    Gbt,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 7] = [Family::Nb, Family::Glm, Family::Lr, Family::Dt, Family::Rf, Family::Gbt, Family::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Nb => "nb",
            Family::Glm => "glm",
            Family::Lr => "lr",
            Family::Dt => "dt",
            Family::Rf => "rf",
            Family::Gbt => "gbt",
            Family::Mlp => "mlp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::Nb => "Naive Bayes",
            Family::Glm => "Generalized Linear Model",
            Family::Lr => "Logistic Regression",
            Family::Dt => "Decision Tree",
            Family::Rf => "Random Forest",
            Family::Gbt => "Gradient Boosted Trees",
            Family::Mlp => "Deep Learning (MLP)",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown family {s:?}; expected one of nb, glm, lr, dt, rf, gbt, mlp"))
    }
}

/// Hyperparameters for every family. `Default` holds the reference settings
/// (forest of 100 depth-10 trees, 20 boosted depth-10 trees, depth-20 pruned
/// tree at confidence 0.1 with minimal gain 0.05, Laplace-corrected NB,
/// standardised elastic-net GLM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Hyperparams {
    pub nb: NbParams,
    pub glm: GlmParams,
    pub lr: LogisticParams,
    pub dt: TreeParams,
    pub rf: ForestParams,
    pub gbt: GbtParams,
    pub mlp: MlpParams,
}

fn as_count(name: &str, v: f64) -> Result<usize, LearnError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v.round() as usize)
    } else {
        Err(LearnError::InvalidParam(format!("{name} must be a non-negative number, got {v}")))
    }
}

impl Hyperparams {
    /// Sets one numeric parameter of `family` by name. Used by grid and
    /// random search.
    pub fn set(&mut self, family: Family, name: &str, v: f64) -> Result<(), LearnError> {
        let unknown = || LearnError::UnknownParam {
            family,
            name: name.to_owned(),
        };
        match family {
            Family::Nb => match name {
                "laplace" => self.nb.laplace = v,
                "bins" => self.nb.bins = as_count(name, v)?,
                _ => return Err(unknown()),
            },
            Family::Glm => match name {
                "lambda" => self.glm.lambda = v,
                "alpha" => self.glm.alpha = v,
                "max_iter" => self.glm.max_iter = as_count(name, v)?,
                _ => return Err(unknown()),
            },
            Family::Lr => match name {
                "max_iter" => self.lr.max_iter = as_count(name, v)?,
                "tol" => self.lr.tol = v,
                _ => return Err(unknown()),
            },
            Family::Dt => set_tree_param(&mut self.dt, name, v).ok_or_else(unknown)??,
            Family::Rf => match name {
                "n_trees" => self.rf.n_trees = as_count(name, v)?,
                _ => set_tree_param(&mut self.rf.tree, name, v).ok_or_else(unknown)??,
            },
            Family::Gbt => match name {
                "n_trees" => self.gbt.n_trees = as_count(name, v)?,
                _ => set_tree_param(&mut self.gbt.tree, name, v).ok_or_else(unknown)??,
            },
            Family::Mlp => match name {
                "learning_rate" => self.mlp.learning_rate = v,
                "l2" => self.mlp.l2 = v,
                "dropout_rate" => self.mlp.dropout_rate = v,
                "max_iter" => self.mlp.max_iter = as_count(name, v)?,
                "hidden_width" => {
                    let w = as_count(name, v)?;
                    self.mlp.hidden.iter_mut().for_each(|h| *h = w);
                }
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }
}

fn set_tree_param(p: &mut TreeParams, name: &str, v: f64) -> Option<Result<(), LearnError>> {
    let r = match name {
        "max_depth" => as_count(name, v).map(|d| p.max_depth = d),
        "min_gain" => {
            p.min_gain = v;
            Ok(())
        }
        "confidence" => {
            p.confidence = v;
            Ok(())
        }
        "prune" => {
            p.prune = v != 0.0;
            Ok(())
        }
        "min_leaf" => as_count(name, v).map(|m| p.min_leaf = m),
        _ => return None,
    };
    Some(r)
}

/// A fitted model of any family. Serialised as JSON tagged by `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Model {
    Nb(NbModel),
    Glm(GlmModel),
    Lr(LogisticModel),
    Dt(TreeModel),
    Rf(ForestModel),
    Gbt(GbtModel),
    Mlp(MlpModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Nb(_) => Family::Nb,
            Model::Glm(_) => Family::Glm,
            Model::Lr(_) => Family::Lr,
            Model::Dt(_) => Family::Dt,
            Model::Rf(_) => Family::Rf,
            Model::Gbt(_) => Family::Gbt,
            Model::Mlp(_) => Family::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Nb(m) => m.n_features(),
            Model::Glm(m) => m.beta.len(),
            Model::Lr(m) => m.b.len(),
            Model::Dt(m) => m.n_features,
            Model::Rf(m) => m.trees[0].n_features,
            Model::Gbt(m) => m.trees[0].n_features,
            Model::Mlp(m) => m.layer_sizes[0],
        }
    }

    /// Positive-class score in `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64, LearnError> {
        let expected = self.n_features();
        if x.len() != expected {
            return Err(LearnError::DimensionMismatch { expected, got: x.len() });
        }
        Ok(match self {
            Model::Nb(m) => m.score(x),
            Model::Glm(m) => m.score(x),
            Model::Lr(m) => m.score(x),
            Model::Dt(m) => m.score(x),
            Model::Rf(m) => m.score(x),
            Model::Gbt(m) => m.score(x),
            Model::Mlp(m) => m.score(x),
        })
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, LearnError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Model, LearnError> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(LearnError::UnsupportedVersion(file.version));
        }
        Ok(file.model)
    }
}

/// Hard label for a score.
pub fn predict_label(score: f64) -> u8 {
    u8::from(score > 0.5)
}

/// Trains `family` on `data`. `seed` drives every random choice.
pub fn fit(family: Family, params: &Hyperparams, data: &Dataset, seed: u64) -> Result<Model, LearnError> {
    Ok(match family {
        Family::Nb => Model::Nb(train_naive_bayes(data, &params.nb)?),
        Family::Glm => Model::Glm(train_glm_elastic(data, &params.glm)?),
        Family::Lr => Model::Lr(train_logistic(data, &params.lr)?),
        Family::Dt => Model::Dt(train_tree(data, &params.dt)?),
        Family::Rf => Model::Rf(train_forest(data, &params.rf, seed)?),
        Family::Gbt => Model::Gbt(train_gbt(data, &params.gbt, seed)?),
        Family::Mlp => Model::Mlp(train_mlp(data, &params.mlp, seed)?),
    })
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Column means and scales (population standard deviation; 1 for constant
/// columns).
pub(crate) fn column_moments(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.n_samples() as f64;
    let d = data.n_features();
    let mut mean = vec![0.0; d];
    for r in data.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in data.rows() {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let scale = var.into_iter().map(|v| {
        let s = (v / n).sqrt();
        if s > 0.0 { s } else { 1.0 }
    });
    (mean, scale.collect())
}
