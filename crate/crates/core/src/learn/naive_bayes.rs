//! Naive Bayes over equal-width discretised features.

use serde::{Deserialize, Serialize};

use super::{Dataset, LearnError};
use crate::features::equal_width_bin;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbParams {
    pub laplace: f64,
    pub bins: usize,
}

impl Default for NbParams {
    fn default() -> Self {
        Self { laplace: 1.0, bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    /// `[ln P(c=0), ln P(c=1)]`.
    pub class_log_priors: [f64; 2],
    /// Per feature, `bins + 1` equally spaced edges over the training range.
    pub bin_edges: Vec<Vec<f64>>,
    /// Per feature, per bin, `[ln P(bin | c=0), ln P(bin | c=1)]`.
    pub cond_log_prob: Vec<Vec<[f64; 2]>>,
    pub laplace: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl NbModel {
    pub fn n_features(&self) -> usize {
        self.bin_edges.len()
    }

    pub fn bin_of(&self, feature: usize, v: f64) -> usize {
        let edges = &self.bin_edges[feature];
        equal_width_bin(v, edges[0], edges[edges.len() - 1], edges.len() - 1)
    }

    /// Normalised `[ln P(c=0 | x), ln P(c=1 | x)]`.
    pub fn log_posterior(&self, x: &[f64]) -> [f64; 2] {
        let mut joint = self.class_log_priors;
        for (j, &v) in x.iter().enumerate() {
            let b = self.bin_of(j, v);
            joint[0] += self.cond_log_prob[j][b][0];
            joint[1] += self.cond_log_prob[j][b][1];
        }
        let z = log_sum_exp(joint[0], joint[1]);
        [joint[0] - z, joint[1] - z]
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.log_posterior(x)[1].exp()
    }
}

pub fn train_naive_bayes(data: &Dataset, params: &NbParams) -> Result<NbModel, LearnError> {
    if params.bins < 2 {
        return Err(LearnError::InvalidParam(format!("bins must be >= 2, got {}", params.bins)));
    }
    if !(params.laplace > 0.0) {
        return Err(LearnError::InvalidParam(format!("laplace must be > 0, got {}", params.laplace)));
    }
    data.require_both_classes()?;
    let bins = params.bins;
    let counts = data.class_counts();
    let n = data.n_samples() as f64;
    let class_log_priors = [(counts[0] as f64 / n).ln(), (counts[1] as f64 / n).ln()];

    let mut bin_edges = Vec::with_capacity(data.n_features());
    let mut cond_log_prob = Vec::with_capacity(data.n_features());
    for j in 0..data.n_features() {
        let (lo, hi) = data
            .rows()
            .iter()
            .map(|r| r[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
        edges[bins] = hi;
        let mut tally = vec![[0usize; 2]; bins];
        for (r, &t) in data.rows().iter().zip(data.targets()) {
            tally[equal_width_bin(r[j], lo, hi, bins)][usize::from(t)] += 1;
        }
        let table = tally
            .iter()
            .map(|c| {
                let p = |k: usize| {
                    ((c[k] as f64 + params.laplace) / (counts[k] as f64 + bins as f64 * params.laplace)).ln()
                };
                [p(0), p(1)]
            })
            .collect();
        bin_edges.push(edges);
        cond_log_prob.push(table);
    }
    Ok(NbModel {
        class_log_priors,
        bin_edges,
        cond_log_prob,
        laplace: params.laplace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_feature(x: &[f64], y: &[u8]) -> Dataset {
        Dataset::from_rows(x.iter().map(|&v| vec![v]).collect(), y.to_vec()).unwrap()
    }

    #[test]
    fn toy_posterior_matches_enumeration() {
        let d = one_feature(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]);
        let m = train_naive_bayes(&d, &NbParams { laplace: 1.0, bins: 2 }).unwrap();
        // Enumerate by hand: range [0.1, 0.9] split at 0.5. Class 1 has both
        // points in the upper bin, class 0 both in the lower bin.
        let count_in = |cls: u8, upper: bool| {
            d.rows()
                .iter()
                .zip(d.targets())
                .filter(|(r, &t)| t == cls && (r[0] >= 0.5) == upper)
                .count() as f64
        };
        let lik = |cls: u8| (count_in(cls, true) + 1.0) / (2.0 + 2.0);
        let prior = 0.5;
        let expected = prior * lik(1) / (prior * lik(1) + prior * lik(0));
        assert!((expected - 0.75).abs() < 1e-15);
        assert!((m.score(&[0.85]) - expected).abs() < 1e-12);
    }

    #[test]
    fn unseen_bins_keep_positive_likelihood() {
        let d = one_feature(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]);
        let m = train_naive_bayes(&d, &NbParams::default()).unwrap();
        for table in &m.cond_log_prob {
            for row in table {
                assert!(row[0].exp() > 0.0 && row[1].exp() > 0.0);
            }
        }
        let s = m.score(&[0.5]);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn identical_features_give_even_posterior() {
        let d = one_feature(&[1.0, 2.0, 1.0, 2.0], &[1, 1, 0, 0]);
        let m = train_naive_bayes(&d, &NbParams::default()).unwrap();
        assert!((m.score(&[1.0]) - 0.5).abs() < 1e-12);
        assert!((m.score(&[7.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conditionals_normalise() {
        let d = Dataset::from_rows(
            vec![vec![0.0, 5.0], vec![1.0, 3.0], vec![3.0, 3.0], vec![2.0, 0.0], vec![9.0, 1.0]],
            vec![0, 1, 1, 0, 1],
        )
        .unwrap();
        let m = train_naive_bayes(&d, &NbParams::default()).unwrap();
        let prior: f64 = m.class_log_priors.iter().map(|v| v.exp()).sum();
        assert!((prior - 1.0).abs() < 1e-9);
        for table in &m.cond_log_prob {
            for c in 0..2 {
                let s: f64 = table.iter().map(|r| r[c].exp()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_too_few_bins() {
        let d = one_feature(&[0.0, 1.0], &[0, 1]);
        assert!(train_naive_bayes(&d, &NbParams { laplace: 1.0, bins: 1 }).is_err());
    }

    proptest! {
        #[test]
        fn posteriors_sum_to_one(
            xs in proptest::collection::vec(-10.0f64..10.0, 12),
            probe in proptest::collection::vec(-20.0f64..20.0, 2),
        ) {
            let rows: Vec<Vec<f64>> = xs.chunks(2).map(<[f64]>::to_vec).collect();
            let d = Dataset::from_rows(rows, vec![0, 1, 0, 1, 1, 0]).unwrap();
            let m = train_naive_bayes(&d, &NbParams::default()).unwrap();
            let lp = m.log_posterior(&probe);
            prop_assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
        }
    }
}
