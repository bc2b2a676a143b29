//! Per-user feature vectors, quarter windows, column transforms and feature
//! ranking.
//!
//! | column | meaning |
//! |--------|---------|
//! | x1  | number of collected posts |
//! | x2  | distinct entities mentioned across posts |
//! | x3  | entity mentions in posts before quarter W |
//! | x4..x7 | entity mentions in quarters W, X, Y, Z (Z holds the reference time) |
//! | x8  | entity mentions in the profile description |
//! | x9  | verified flag (0/1) |
//! | x10 | likes received (Σ favorite_count) |
//! | x11 | number of replies |
//! | x12 | retweets received (Σ retweet_count) |
//! | x13 | followers |
//! | x14 | friends |

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UserCorpus;
use crate::knowledge::{CorpusAnnotations, MentionSource};
use crate::learn::Dataset;

pub const N_FEATURES: usize = 14;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "x10", "x11", "x12", "x13", "x14",
];

/// Descriptive names, same order as [`FEATURE_NAMES`].
pub const FEATURE_LABELS: [&str; N_FEATURES] = [
    "no_tweets",
    "unq_pol_entities",
    "pol_pre_W",
    "pol_Q_W",
    "pol_Q_X",
    "pol_Q_Y",
    "pol_Q_Z",
    "profile_pol_entities",
    "verified",
    "fav_count",
    "replies_count",
    "retweet_counts",
    "followers_count",
    "friends_count",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown feature column {0}")]
    UnknownColumn(usize),
    #[error("clip bounds inverted: lo {lo} > hi {hi}")]
    InvertedBounds { lo: f64, hi: f64 },
    #[error("log scaling needs non-negative values; column {column} row {row} is {value}")]
    NegativeValue { column: String, row: usize, value: f64 },
    #[error("feature ranking needs labels on every row")]
    MissingLabels,
    #[error("feature ranking needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("chi-squared ranking needs at least 2 bins")]
    TooFewBins,
    #[error("invalid label {0:?}; expected on_topic, off_topic or empty")]
    InvalidLabel(String),
    #[error("features.csv: {0}")]
    Csv(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    OnTopic,
    OffTopic,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::OnTopic => "on_topic",
            Label::OffTopic => "off_topic",
        }
    }

    /// 1 for on-topic, 0 for off-topic.
    pub fn as_target(self) -> u8 {
        match self {
            Label::OnTopic => 1,
            Label::OffTopic => 0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "on_topic" => Ok(Label::OnTopic),
            "off_topic" => Ok(Label::OffTopic),
            other => Err(FeatureError::InvalidLabel(other.to_owned())),
        }
    }
}

/// Half-open `[start, end)` interval in UTC seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: i64,
    pub end: i64,
}

impl Interval {
    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    PreW,
    W,
    X,
    Y,
    Z,
    /// At or after the end of Z.
    Future,
}

/// The calendar quarter Z containing the reference time, the three quarters
/// W, X, Y before it and everything earlier (pre-W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarterWindows {
    pub reference_time: i64,
    pub w: Interval,
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
}

fn quarter_start(year: i32, quarter: i32) -> i64 {
    let (year, quarter) = (year + quarter.div_euclid(4), quarter.rem_euclid(4));
    NaiveDate::from_ymd_opt(year, (quarter * 3 + 1) as u32, 1)
        .expect("first day of a quarter is a valid date")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp()
}

impl QuarterWindows {
    pub fn pre_w(&self) -> Interval {
        Interval {
            start: i64::MIN,
            end: self.w.start,
        }
    }

    pub fn bucket(&self, t: i64) -> Bucket {
        if t < self.w.start {
            Bucket::PreW
        } else if t < self.x.start {
            Bucket::W
        } else if t < self.y.start {
            Bucket::X
        } else if t < self.z.start {
            Bucket::Y
        } else if t < self.z.end {
            Bucket::Z
        } else {
            Bucket::Future
        }
    }
}

pub fn compute_quarter_windows(reference_time: i64) -> QuarterWindows {
    let dt: DateTime<Utc> = DateTime::from_timestamp(reference_time, 0).expect("timestamp in chrono range");
    let year = dt.year();
    let q = (dt.month0() / 3) as i32;
    let span = |offset: i32| Interval {
        start: quarter_start(year, q + offset),
        end: quarter_start(year, q + offset + 1),
    };
    QuarterWindows {
        reference_time,
        w: span(-3),
        x: span(-2),
        y: span(-1),
        z: span(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFeatureVector {
    pub user_id: String,
    pub values: [f64; N_FEATURES],
    pub label: Option<Label>,
}

impl UserFeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub vector: UserFeatureVector,
    /// Posts newer than the reference time, left out of every feature.
    pub excluded_posts: usize,
}

/// Builds the fourteen features of one user. Posts after the windows'
/// reference time are excluded and counted.
pub fn extract_user_features(corpus: &UserCorpus, annotations: &CorpusAnnotations, windows: &QuarterWindows) -> Extraction {
    let mut v = [0.0; N_FEATURES];
    let mut excluded = 0;
    let mut distinct = HashSet::new();
    let no_mentions = Vec::new();

    for post in &corpus.posts {
        if post.created_at > windows.reference_time {
            excluded += 1;
            continue;
        }
        let mentions = annotations
            .get(&MentionSource::Post(post.post_id.clone()))
            .unwrap_or(&no_mentions);
        let column = match windows.bucket(post.created_at) {
            Bucket::PreW => 2,
            Bucket::W => 3,
            Bucket::X => 4,
            Bucket::Y => 5,
            Bucket::Z => 6,
            Bucket::Future => unreachable!("posts after the reference time are excluded"),
        };
        v[column] += mentions.len() as f64;
        distinct.extend(mentions.iter().map(|m| m.entity_id.as_str()));

        v[0] += 1.0;
        v[9] += post.favorite_count as f64;
        if post.is_reply {
            v[10] += 1.0;
        }
        v[11] += post.retweet_count as f64;
    }

    v[1] = distinct.len() as f64;
    v[7] = annotations.get(&MentionSource::Profile).map_or(0, Vec::len) as f64;
    v[8] = if corpus.profile.verified { 1.0 } else { 0.0 };
    v[12] = corpus.profile.followers_count as f64;
    v[13] = corpus.profile.friends_count as f64;

    Extraction {
        vector: UserFeatureVector {
            user_id: corpus.profile.user_id.clone(),
            values: v,
            label: None,
        },
        excluded_posts: excluded,
    }
}

/// A column transform, replayable on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    MinMax { column: usize, min: f64, max: f64 },
    Clip { column: usize, lo: f64, hi: f64 },
    Log { column: usize },
}

impl Transform {
    fn column(&self) -> usize {
        match *self {
            Transform::MinMax { column, .. } | Transform::Clip { column, .. } | Transform::Log { column } => column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub rows: Vec<UserFeatureVector>,
    /// Transforms applied so far, in order.
    pub scaling_record: Vec<Transform>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<UserFeatureVector>) -> Self {
        Self {
            rows,
            scaling_record: Vec::new(),
        }
    }

    pub fn feature_names(&self) -> [&'static str; N_FEATURES] {
        FEATURE_NAMES
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[c]).collect()
    }

    pub fn labeled_rows(&self) -> impl Iterator<Item = &UserFeatureVector> {
        self.rows.iter().filter(|r| r.label.is_some())
    }

    /// The labelled rows as a training set (on_topic = 1).
    pub fn labeled_dataset(&self) -> Result<Dataset, crate::learn::LearnError> {
        let (x, y): (Vec<Vec<f64>>, Vec<u8>) = self
            .labeled_rows()
            .map(|r| (r.values.to_vec(), r.label.map(Label::as_target).unwrap_or(0)))
            .unzip();
        Dataset::new(x, y, FEATURE_NAMES.iter().map(|s| s.to_string()).collect())
    }

    /// User ids of the labelled rows, in dataset order.
    pub fn labeled_user_ids(&self) -> Vec<&str> {
        self.labeled_rows().map(|r| r.user_id.as_str()).collect()
    }

    fn check_column(&self, c: usize) -> Result<(), FeatureError> {
        if c < N_FEATURES {
            Ok(())
        } else {
            Err(FeatureError::UnknownColumn(c))
        }
    }

    fn map_column(&self, c: usize, f: impl Fn(f64) -> f64, record: Transform) -> FeatureMatrix {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.values[c] = f(r.values[c]);
        }
        out.scaling_record.push(record);
        out
    }
}

fn minmax(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (v - min) / (max - min)
    } else {
        0.0
    }
}

/// Maps each selected column onto [0, 1] with its observed range; constant
/// columns become 0.
pub fn scale_minmax(matrix: &FeatureMatrix, columns: &[usize]) -> Result<FeatureMatrix, FeatureError> {
    let mut out = matrix.clone();
    for &c in columns {
        out.check_column(c)?;
        let col = out.column(c);
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (min, max) = if col.is_empty() { (0.0, 0.0) } else { (min, max) };
        out = out.map_column(c, |v| minmax(v, min, max), Transform::MinMax { column: c, min, max });
    }
    Ok(out)
}

pub fn clip_outliers(matrix: &FeatureMatrix, column: usize, lo: f64, hi: f64) -> Result<FeatureMatrix, FeatureError> {
    matrix.check_column(column)?;
    if lo > hi {
        return Err(FeatureError::InvertedBounds { lo, hi });
    }
    Ok(matrix.map_column(column, |v| v.clamp(lo, hi), Transform::Clip { column, lo, hi }))
}

/// `v ↦ ln(1 + v)`.
pub fn log_scale(matrix: &FeatureMatrix, column: usize) -> Result<FeatureMatrix, FeatureError> {
    matrix.check_column(column)?;
    if let Some((row, r)) = matrix.rows.iter().enumerate().find(|(_, r)| r.values[column] < 0.0) {
        return Err(FeatureError::NegativeValue {
            column: FEATURE_NAMES[column].into(),
            row,
            value: r.values[column],
        });
    }
    Ok(matrix.map_column(column, f64::ln_1p, Transform::Log { column }))
}

/// Replays recorded transforms (e.g. on held-out data) with their stored
/// parameters.
pub fn apply_transforms(matrix: &FeatureMatrix, record: &[Transform]) -> Result<FeatureMatrix, FeatureError> {
    let mut out = matrix.clone();
    for t in record {
        out.check_column(t.column())?;
        out = match *t {
            Transform::MinMax { column, min, max } => out.map_column(column, |v| minmax(v, min, max), t.clone()),
            Transform::Clip { column, lo, hi } => clip_outliers(&out, column, lo, hi)?,
            Transform::Log { column } => log_scale(&out, column)?,
        };
    }
    Ok(out)
}

fn sort_ranking(mut scores: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scores
}

fn labels_as_f64(matrix: &FeatureMatrix) -> Result<Vec<f64>, FeatureError> {
    matrix
        .rows
        .iter()
        .map(|r| r.label.map(|l| l.as_target() as f64).ok_or(FeatureError::MissingLabels))
        .collect()
}

/// Absolute Pearson correlation of every column with the 0/1 label.
pub fn rank_features_pearson(matrix: &FeatureMatrix) -> Result<Vec<(String, f64)>, FeatureError> {
    let y = labels_as_f64(matrix)?;
    let n = y.len();
    if n < 2 {
        return Err(FeatureError::TooFewRows { needed: 2, got: n });
    }
    let scores = (0..N_FEATURES)
        .map(|c| {
            let x = matrix.column(c);
            (FEATURE_NAMES[c].to_string(), pearson(&x, &y).abs())
        })
        .collect();
    Ok(sort_ranking(scores))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

/// χ² statistic of each column, equal-width binned into `bins` bins, against
/// the label.
pub fn rank_features_chi2(matrix: &FeatureMatrix, bins: usize) -> Result<Vec<(String, f64)>, FeatureError> {
    if bins < 2 {
        return Err(FeatureError::TooFewBins);
    }
    let y = labels_as_f64(matrix)?;
    let scores = (0..N_FEATURES)
        .map(|c| (FEATURE_NAMES[c].to_string(), chi2_statistic(&matrix.column(c), &y, bins)))
        .collect();
    Ok(sort_ranking(scores))
}

pub(crate) fn equal_width_bin(v: f64, min: f64, max: f64, bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    let b = ((v - min) / (max - min) * bins as f64).floor();
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

fn chi2_statistic(x: &[f64], y: &[f64], bins: usize) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut table = vec![[0.0f64; 2]; bins];
    for (v, &label) in x.iter().zip(y) {
        table[equal_width_bin(*v, min, max, bins)][usize::from(label > 0.5)] += 1.0;
    }
    let class_totals = [0, 1].map(|k| table.iter().map(|row| row[k]).sum::<f64>());
    let mut stat = 0.0;
    for row in &table {
        let row_total = row[0] + row[1];
        for k in 0..2 {
            let expected = row_total * class_totals[k] / n;
            if expected > 0.0 {
                stat += (row[k] - expected).powi(2) / expected;
            }
        }
    }
    stat
}

/// Writes `features.csv`: `user_id,x1,...,x14,label`.
pub fn write_features_csv<W: Write>(matrix: &FeatureMatrix, writer: W) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header.push("label".into());
    w.write_record(&header).map_err(|e| FeatureError::Csv(e.to_string()))?;
    for r in &matrix.rows {
        let mut rec = vec![r.user_id.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(r.label.map(|l| l.as_str().to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(|e| FeatureError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<FeatureMatrix, FeatureError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| FeatureError::Csv(e.to_string()))?.clone();
    let expected: Vec<&str> = std::iter::once("user_id")
        .chain(FEATURE_NAMES.iter().copied())
        .chain(std::iter::once("label"))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(FeatureError::Csv(format!("unexpected header {:?}", headers)));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| FeatureError::Csv(e.to_string()))?;
        let mut values = [0.0; N_FEATURES];
        for (c, v) in values.iter_mut().enumerate() {
            *v = rec[c + 1]
                .parse()
                .map_err(|_| FeatureError::Csv(format!("row {}: bad number {:?}", i + 2, &rec[c + 1])))?;
        }
        let label = match rec[N_FEATURES + 1].trim() {
            "" => None,
            s => Some(s.parse()?),
        };
        rows.push(UserFeatureVector {
            user_id: rec[0].to_string(),
            values,
            label,
        });
    }
    Ok(FeatureMatrix::new(rows))
}

/// Label lookup helper used when attaching ground truth to rows.
pub fn attach_labels(matrix: &mut FeatureMatrix, labels: &BTreeMap<String, Label>) -> usize {
    let mut attached = 0;
    for r in &mut matrix.rows {
        r.label = labels.get(&r.user_id).copied();
        attached += usize::from(r.label.is_some());
    }
    attached
}
