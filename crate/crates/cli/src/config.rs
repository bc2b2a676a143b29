//! Pipeline configuration: one TOML file, overridable key by key.

use std::path::{Path, PathBuf};

use sbd_core::learn::{Family, Hyperparams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub posts: PathBuf,
    pub users: PathBuf,
    pub handles: Option<PathBuf>,
    /// Bundled English list when absent.
    pub stopwords: Option<PathBuf>,
    /// Bundled mini knowledge base when absent.
    pub kb: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Root directory holding batch directories.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            posts: "posts.jsonl".into(),
            users: "users.jsonl".into(),
            handles: None,
            stopwords: None,
            kb: None,
            synonyms: None,
            labels: None,
            output: "runs".into(),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.posts);
        join(&mut self.users);
        join(&mut self.output);
        for p in [
            &mut self.handles,
            &mut self.stopwords,
            &mut self.kb,
            &mut self.synonyms,
            &mut self.labels,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![("posts", self.posts.as_path()), ("users", self.users.as_path())];
        for (name, p) in [
            ("handles", &self.handles),
            ("stopwords", &self.stopwords),
            ("kb", &self.kb),
            ("synonyms", &self.synonyms),
            ("labels", &self.labels),
        ] {
            if let Some(p) = p {
                v.push((name, p.as_path()));
            }
        }
        v
    }
}

/// One normalisation step applied to a feature column at featurize time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormStep {
    None { column: String },
    Minmax { column: String },
    Log { column: String },
    Clip { column: String, lo: f64, hi: f64 },
}

impl NormStep {
    pub fn column(&self) -> &str {
        match self {
            NormStep::None { column }
            | NormStep::Minmax { column }
            | NormStep::Log { column }
            | NormStep::Clip { column, .. } => column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub train_fraction: f64,
    /// ISO-8601 anchor for the quarter windows; newest post when absent.
    pub reference_time: Option<String>,
    pub families: Vec<Family>,
    pub top_k: usize,
    /// Skip and count malformed archive lines instead of failing.
    pub skip_malformed: bool,
    pub lowercase: bool,
    pub post_cap: usize,
    pub paths: Paths,
    pub normalization: Vec<NormStep>,
    pub hyperparams: Hyperparams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: 0.6,
            reference_time: None,
            families: Family::ALL.to_vec(),
            top_k: 25,
            skip_malformed: true,
            lowercase: true,
            post_cap: sbd_core::corpus::DEFAULT_POST_CAP,
            paths: Paths::default(),
            normalization: Vec::new(),
            hyperparams: Hyperparams::default(),
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("key {key:?}: {part:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Loads `path` (defaults when `None`), applies `key=value` overrides,
    /// validates and resolves relative paths against the config file's
    /// directory (or the working directory without a file).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, base)
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config: {}", e.message())))?;
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        cfg.paths.resolve(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let Some(t) = &self.reference_time {
            if sbd_core::timefmt::parse_iso8601(t).is_none() {
                return Err(CliError::Config(format!("reference_time {t:?} is not ISO-8601")));
            }
        }
        let inputs = self.paths.inputs();
        for (i, (a, pa)) in inputs.iter().enumerate() {
            if *pa == self.paths.output {
                return Err(CliError::Config(format!("paths.{a} coincides with paths.output")));
            }
            for (b, pb) in &inputs[i + 1..] {
                if pa == pb {
                    return Err(CliError::Config(format!("paths.{a} and paths.{b} point to the same file")));
                }
            }
        }
        for step in &self.normalization {
            if !sbd_core::features::FEATURE_NAMES.contains(&step.column()) {
                return Err(CliError::Config(format!("normalization column {:?} is unknown", step.column())));
            }
        }
        if self.top_k == 0 {
            return Err(CliError::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn reference_time(&self) -> Option<i64> {
        self.reference_time.as_deref().and_then(sbd_core::timefmt::parse_iso8601)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(CliError::config)
    }
}
