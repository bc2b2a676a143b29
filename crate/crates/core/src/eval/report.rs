use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, confusion, log_loss, ConfusionMatrix};
use super::roc::{auc, roc_curve};
use super::split::{stratified_split, SplitDescriptor};
use super::EvalError;
use crate::learn::{fit, Dataset, Family, Hyperparams, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub classification_error: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub log_loss: f64,
    pub auc: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 7] =
        ["accuracy", "classification_error", "precision", "recall", "f1", "log_loss", "auc"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.classification_error,
            self.precision,
            self.recall,
            self.f1,
            self.log_loss,
            self.auc,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub family: Family,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default)]
    pub roc: Vec<(f64, f64)>,
    /// Set when the family failed to train or score.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub split: SplitDescriptor,
    pub timestamp: String,
    pub models: Vec<ModelReport>,
}

impl EvaluationReport {
    pub fn model(&self, family: Family) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.family == family)
    }
}

/// Scores `model` on `test` and collects every classification metric and
/// the ROC vertices.
pub fn evaluate_model(model: &Model, test: &Dataset) -> Result<ModelReport, EvalError> {
    let scores = model.predict_rows(test.rows())?;
    let labels = test.targets();
    let cm = confusion(&scores, labels)?;
    let cls = classification_metrics(&cm)?;
    let roc = roc_curve(&scores, labels)?;
    let metrics = Metrics {
        accuracy: cls.accuracy,
        classification_error: cls.classification_error,
        precision: cls.precision,
        recall: cls.recall,
        f1: cls.f1,
        log_loss: log_loss(&scores, labels)?,
        auc: auc(&roc),
    };
    Ok(ModelReport {
        family: model.family(),
        metrics: Some(metrics),
        confusion: Some(cm),
        roc,
        error: None,
    })
}

/// Fitted models from a comparison run, in report order, `None` where
/// training failed.
pub type ComparedModels = Vec<(Family, Option<Model>)>;

/// Trains every family on one shared stratified split and evaluates on the
/// held-out side. A failing family is recorded in its row; the others still
/// run.
pub fn compare_models(
    data: &Dataset,
    families: &[Family],
    params: &Hyperparams,
    train_fraction: f64,
    seed: u64,
) -> Result<(EvaluationReport, ComparedModels), EvalError> {
    if families.is_empty() {
        return Err(EvalError::NoFamilies);
    }
    let (train, test, split) = stratified_split(data, train_fraction, seed)?;
    let results: Vec<(ModelReport, Option<Model>)> = families
        .par_iter()
        .map(|&family| {
            let outcome = fit(family, params, &train, seed)
                .map_err(EvalError::from)
                .and_then(|m| evaluate_model(&m, &test).map(|r| (r, m)));
            match outcome {
                Ok((r, m)) => (r, Some(m)),
                Err(e) => (
                    ModelReport {
                        family,
                        metrics: None,
                        confusion: None,
                        roc: Vec::new(),
                        error: Some(format!("{family}: {e}")),
                    },
                    None,
                ),
            }
        })
        .collect();
    let models = families.iter().copied().zip(results.iter().map(|(_, m)| m.clone())).collect();
    let report = EvaluationReport {
        seed,
        split,
        timestamp: crate::timefmt::format_iso8601(chrono::Utc::now().timestamp()),
        models: results.into_iter().map(|(r, _)| r).collect(),
    };
    Ok((report, models))
}

pub fn write_report_json<W: Write>(report: &EvaluationReport, mut out: W) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// One row per family; metric columns are empty for failed families.
pub fn write_report_csv<W: Write>(report: &EvaluationReport, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["family"];
    header.extend(Metrics::NAMES);
    header.push("error");
    w.write_record(&header)?;
    for m in &report.models {
        let mut row = vec![m.family.to_string()];
        match &m.metrics {
            Some(x) => row.extend(x.values().iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), Metrics::NAMES.len())),
        }
        row.push(m.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(report: &EvaluationReport, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "fpr", "tpr"])?;
    for m in &report.models {
        for (fpr, tpr) in &m.roc {
            w.write_record([m.family.to_string(), fpr.to_string(), tpr.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{Hyperparams, NbParams};

    fn fixture() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![f64::from(i % 10), f64::from((i * 7) % 13), f64::from(i % 3)])
            .collect();
        let y = rows.iter().map(|r| u8::from(r[0] + 0.5 * r[1] > 7.0)).collect();
        Dataset::from_rows(rows, y).unwrap()
    }

    fn fast_params() -> Hyperparams {
        let mut h = Hyperparams::default();
        h.rf.n_trees = 10;
        h.mlp.max_iter = 100;
        h
    }

    #[test]
    fn single_family_single_row() {
        let (r, models) = compare_models(&fixture(), &[Family::Dt], &Hyperparams::default(), 0.6, 1).unwrap();
        assert_eq!(r.models.len(), 1);
        assert_eq!(models.len(), 1);
        let m = r.models[0].metrics.unwrap();
        assert_eq!(m.accuracy + m.classification_error, 1.0);
        assert_eq!(r.models[0].roc[0], (0.0, 0.0));
    }

    #[test]
    fn all_families_populated_and_deterministic() {
        let d = fixture();
        let (mut a, _) = compare_models(&d, &Family::ALL, &fast_params(), 0.6, 7).unwrap();
        let (mut b, _) = compare_models(&d, &Family::ALL, &fast_params(), 0.6, 7).unwrap();
        assert_eq!(a.models.len(), 7);
        for m in &a.models {
            let x = m.metrics.unwrap_or_else(|| panic!("{:?}", m.error));
            for v in x.values() {
                assert!(v.is_finite() && v >= 0.0);
            }
        }
        a.timestamp.clear();
        b.timestamp.clear();
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        write_report_json(&a, &mut ja).unwrap();
        write_report_json(&b, &mut jb).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn failing_family_does_not_stop_others() {
        let mut h = Hyperparams::default();
        h.nb = NbParams { laplace: 1.0, bins: 1 };
        let (r, _) = compare_models(&fixture(), &[Family::Nb, Family::Lr], &h, 0.6, 1).unwrap();
        assert!(r.models[0].error.as_deref().unwrap().starts_with("nb:"));
        assert!(r.models[1].metrics.is_some());
        let mut csv_out = Vec::new();
        write_report_csv(&r, &mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("family,accuracy,classification_error,precision,recall,f1,log_loss,auc,error"));
    }

    #[test]
    fn report_json_shape() {
        let (r, _) = compare_models(&fixture(), &[Family::Lr], &Hyperparams::default(), 0.6, 1).unwrap();
        let mut out = Vec::new();
        write_report_json(&r, &mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["seed"], 1);
        assert_eq!(v["models"][0]["family"], "lr");
        assert!(v["models"][0]["roc"][0].is_array());
        assert!(v["split"]["train_counts"].is_array());
        let mut roc = Vec::new();
        write_roc_csv(&r, &mut roc).unwrap();
        assert!(String::from_utf8(roc).unwrap().starts_with("family,fpr,tpr\nlr,0,0\n"));
    }
}
