//! One function per subcommand. Each reads from earlier batches, writes a
//! fresh batch and returns its id.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use sbd_core::corpus::{
    build_corpus, default_stopwords, parse_handle_map, parse_posts_archive, parse_stopwords, parse_users,
    CleansingConfig, ErrorPolicy, HandleMap, UserCorpus,
};
use sbd_core::eval::{compare_models, evaluate_model, stratified_split, EvaluationReport, ModelReport, SplitDescriptor};
use sbd_core::features::{
    attach_labels, clip_outliers, compute_quarter_windows, extract_user_features, log_scale, read_features_csv,
    scale_minmax, write_features_csv, FeatureMatrix, Label, FEATURE_NAMES,
};
use sbd_core::knowledge::{
    annotate_corpus, bundled_mini_kb, load_kb, merge_synonyms, parse_synonyms, top_entities, EntityMention,
    KnowledgeBase,
};
use sbd_core::learn::{fit, Dataset, Family, Model};
use sbd_core::timefmt::format_iso8601;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::config::{NormStep, PipelineConfig};
use crate::error::{CliError, Result};

/// What a batch holds and where it came from, persisted as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Summary {
    Ingest {
        users: usize,
        parsed_posts: usize,
        skipped_posts: usize,
        skipped_users: usize,
        deduped: usize,
        orphaned: usize,
        truncated: usize,
    },
    Featurize {
        source_batch: String,
        rows: usize,
        labeled: usize,
        unknown_label_users: usize,
        excluded_posts: usize,
        reference_time: String,
    },
    Train {
        source_batch: String,
        families: Vec<Family>,
        failed: Vec<String>,
    },
    Evaluate {
        source_batch: String,
        features_batch: String,
    },
    Compare {
        source_batch: String,
        families: Vec<Family>,
        failed: Vec<String>,
    },
    TopEntities {
        source_batch: String,
        user_id: String,
        k: usize,
        rows: usize,
    },
}

/// Per-user annotations line in `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAnnotations {
    pub user_id: String,
    pub mentions: Vec<EntityMention>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::at(path, e))
}

fn read_summary(batch: &Batch) -> Result<Summary> {
    let path = batch.path("summary.json");
    serde_json::from_reader(open(&path)?).map_err(|e| CliError::at(&path, e))
}

fn new_batch(cfg: &PipelineConfig) -> Result<Batch> {
    let batch = Batch::create(&cfg.paths.output)?;
    batch.write("config.toml", cfg.to_toml()?.as_bytes())?;
    Ok(batch)
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, &it).map_err(CliError::data)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::at(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::at(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn cleansing(cfg: &PipelineConfig) -> Result<CleansingConfig> {
    let stopwords = match &cfg.paths.stopwords {
        Some(p) => parse_stopwords(open(p)?).map_err(|e| CliError::at(p, e))?,
        None => default_stopwords(),
    };
    Ok(CleansingConfig {
        stopwords,
        lowercase: cfg.lowercase,
        post_cap: cfg.post_cap,
    })
}

pub fn ingest(cfg: &PipelineConfig, stderr: &mut dyn std::io::Write) -> Result<Batch> {
    let policy = if cfg.skip_malformed {
        ErrorPolicy::SkipAndCount
    } else {
        ErrorPolicy::FailFast
    };
    let users_path = &cfg.paths.users;
    let posts_path = &cfg.paths.posts;
    let users = parse_users(open(users_path)?, policy).map_err(|e| CliError::at(users_path, e))?;
    let posts = parse_posts_archive(open(posts_path)?, policy).map_err(|e| CliError::at(posts_path, e))?;
    if users.records.is_empty() {
        return Err(CliError::Data(format!("{}: no users", users_path.display())));
    }
    let handles = match &cfg.paths.handles {
        Some(p) => parse_handle_map(open(p)?).map_err(|e| CliError::at(p, e))?,
        None => HandleMap::new(),
    };
    for s in users.skipped.iter().map(|s| (users_path, s)).chain(posts.skipped.iter().map(|s| (posts_path, s))) {
        let _ = writeln!(stderr, "warning: {}: line {}: {}", s.0.display(), s.1.line, s.1.message);
    }
    let parsed_posts = posts.records.len();
    let built = build_corpus(&users.records, posts.records, &handles, &cleansing(cfg)?);

    let batch = new_batch(cfg)?;
    batch.write("corpus.jsonl", &jsonl(&built.corpora)?)?;
    batch.write_json(
        "summary.json",
        &Summary::Ingest {
            users: built.corpora.len(),
            parsed_posts,
            skipped_posts: posts.skipped.len(),
            skipped_users: users.skipped.len(),
            deduped: built.stats.duplicates_removed,
            orphaned: built.stats.orphaned,
            truncated: built.stats.truncated,
        },
    )?;
    Ok(batch)
}

fn knowledge_base(cfg: &PipelineConfig) -> Result<KnowledgeBase> {
    let kb = match &cfg.paths.kb {
        Some(p) => load_kb(open(p)?).map_err(|e| CliError::at(p, e))?,
        None => bundled_mini_kb(),
    };
    match &cfg.paths.synonyms {
        Some(p) => {
            let syn = parse_synonyms(open(p)?).map_err(|e| CliError::at(p, e))?;
            merge_synonyms(&kb, &syn).map_err(|e| CliError::at(p, e))
        }
        None => Ok(kb),
    }
}

/// Reads `user_id<TAB>label` lines. Blank lines, `#` comments and a
/// `user_id<TAB>label` header are ignored.
pub fn parse_labels<R: BufRead>(reader: R, origin: &Path) -> Result<BTreeMap<String, Label>> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::at(origin, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |msg: String| CliError::at(origin, format!("line {}: {msg}", i + 1));
        let (user, label) = line
            .split_once('\t')
            .ok_or_else(|| at("expected user_id<TAB>label".into()))?;
        let (user, label) = (user.trim(), label.trim());
        if out.is_empty() && user == "user_id" && label == "label" {
            continue;
        }
        let label: Label = label.parse().map_err(|e| at(format!("{e}")))?;
        out.insert(user.to_owned(), label);
    }
    Ok(out)
}

fn normalize(matrix: FeatureMatrix, plan: &[NormStep]) -> Result<FeatureMatrix> {
    let col = |name: &str| FEATURE_NAMES.iter().position(|n| *n == name).expect("validated column");
    let mut m = matrix;
    for step in plan {
        let c = col(step.column());
        m = match step {
            NormStep::None { .. } => Ok(m),
            NormStep::Minmax { .. } => scale_minmax(&m, &[c]),
            NormStep::Log { .. } => log_scale(&m, c),
            NormStep::Clip { lo, hi, .. } => clip_outliers(&m, c, *lo, *hi),
        }
        .map_err(|e| CliError::Config(format!("normalization of {}: {e}", step.column())))?;
    }
    Ok(m)
}

pub fn featurize(cfg: &PipelineConfig, source: &Batch, stderr: &mut dyn std::io::Write) -> Result<Batch> {
    let corpora: Vec<UserCorpus> = read_jsonl(&source.path("corpus.jsonl"))?;
    let kb = knowledge_base(cfg)?;
    let labels = match &cfg.paths.labels {
        Some(p) => parse_labels(open(p)?, p)?,
        None => BTreeMap::new(),
    };
    let reference = cfg
        .reference_time()
        .or_else(|| corpora.iter().flat_map(|c| c.posts.iter().map(|p| p.created_at)).max())
        .ok_or_else(|| {
            CliError::Data("corpus has no posts; set reference_time to anchor the quarter windows".into())
        })?;
    let windows = compute_quarter_windows(reference);

    let mut rows = Vec::with_capacity(corpora.len());
    let mut annotations = Vec::with_capacity(corpora.len());
    let mut excluded = 0;
    for corpus in &corpora {
        let ann = annotate_corpus(corpus, &kb);
        let ex = extract_user_features(corpus, &ann, &windows);
        excluded += ex.excluded_posts;
        rows.push(ex.vector);
        annotations.push(UserAnnotations {
            user_id: corpus.profile.user_id.clone(),
            mentions: ann.into_values().flatten().collect(),
        });
    }
    let mut matrix = FeatureMatrix::new(rows);
    let labeled = attach_labels(&mut matrix, &labels);
    let unknown = labels.len() - labeled;
    if unknown > 0 {
        let _ = writeln!(stderr, "warning: {unknown} label(s) name users absent from the corpus");
    }
    let matrix = normalize(matrix, &cfg.normalization)?;

    let batch = new_batch(cfg)?;
    let mut csv = Vec::new();
    write_features_csv(&matrix, &mut csv).map_err(CliError::data)?;
    batch.write("features.csv", &csv)?;
    batch.write_json("scaling.json", &matrix.scaling_record)?;
    batch.write("annotations.jsonl", &jsonl(&annotations)?)?;
    batch.write("kb.json", kb.to_json().as_bytes())?;
    batch.write_json(
        "summary.json",
        &Summary::Featurize {
            source_batch: source.id.to_string(),
            rows: matrix.rows.len(),
            labeled,
            unknown_label_users: unknown,
            excluded_posts: excluded,
            reference_time: format_iso8601(reference),
        },
    )?;
    Ok(batch)
}

/// The labelled rows of a featurize batch, checked for at least two users
/// per class.
pub fn labeled_features(batch: &Batch) -> Result<Dataset> {
    let path = batch.path("features.csv");
    let matrix = read_features_csv(open(&path)?).map_err(|e| CliError::at(&path, e))?;
    if matrix.labeled_rows().next().is_none() {
        return Err(CliError::Data(format!(
            "{}: no labelled rows; supply a labels file (paths.labels) and rerun featurize",
            path.display()
        )));
    }
    let data = matrix.labeled_dataset().map_err(|e| CliError::at(&path, e))?;
    let [neg, pos] = data.class_counts();
    if neg < 2 || pos < 2 {
        return Err(CliError::Data(format!(
            "{}: need at least 2 labelled users per class, got {pos} on_topic and {neg} off_topic",
            path.display()
        )));
    }
    Ok(data)
}

fn failures(stderr: &mut dyn std::io::Write, failed: &[String], total: usize) -> Result<()> {
    for f in failed {
        let _ = writeln!(stderr, "warning: {f}");
    }
    if !failed.is_empty() && failed.len() == total {
        return Err(CliError::Data("every model family failed".into()));
    }
    Ok(())
}

fn write_models(batch: &Batch, models: &[(Family, Model)]) -> Result<()> {
    for (family, model) in models {
        let json = model.to_json().map_err(CliError::data)?;
        batch.write(&format!("models/{family}.json"), json.as_bytes())?;
    }
    Ok(())
}

fn write_reports(batch: &Batch, report: &EvaluationReport) -> Result<()> {
    let mut json = Vec::new();
    sbd_core::eval::write_report_json(report, &mut json).map_err(CliError::data)?;
    batch.write("report.json", &json)?;
    let mut csv = Vec::new();
    sbd_core::eval::write_report_csv(report, &mut csv).map_err(CliError::data)?;
    batch.write("report.csv", &csv)?;
    let mut roc = Vec::new();
    sbd_core::eval::write_roc_csv(report, &mut roc).map_err(CliError::data)?;
    batch.write("roc.csv", &roc)
}

pub fn train(cfg: &PipelineConfig, source: &Batch, stderr: &mut dyn std::io::Write) -> Result<Batch> {
    let data = labeled_features(source)?;
    let (train, _, split) = stratified_split(&data, cfg.train_fraction, cfg.seed).map_err(CliError::data)?;
    let mut models = Vec::new();
    let mut failed = Vec::new();
    for &family in &cfg.families {
        match fit(family, &cfg.hyperparams, &train, cfg.seed) {
            Ok(m) => models.push((family, m)),
            Err(e) => failed.push(format!("{family}: {e}")),
        }
    }
    failures(stderr, &failed, cfg.families.len())?;
    let batch = new_batch(cfg)?;
    write_models(&batch, &models)?;
    batch.write_json("split.json", &split)?;
    batch.write_json(
        "summary.json",
        &Summary::Train {
            source_batch: source.id.to_string(),
            families: models.iter().map(|(f, _)| *f).collect(),
            failed,
        },
    )?;
    Ok(batch)
}

/// Scores the models of a train batch on the held-out side of its split.
pub fn evaluate(cfg: &PipelineConfig, source: &Batch) -> Result<Batch> {
    let (features_id, families) = match read_summary(source)? {
        Summary::Train {
            source_batch, families, ..
        } => (source_batch, families),
        other => {
            return Err(CliError::Data(format!(
                "batch {} is not a train batch ({})",
                source.id,
                stage_name(&other)
            )))
        }
    };
    let features = Batch::open(&cfg.paths.output, &features_id)?;
    let data = labeled_features(&features)?;
    let split_path = source.path("split.json");
    let split: SplitDescriptor =
        serde_json::from_reader(open(&split_path)?).map_err(|e| CliError::at(&split_path, e))?;
    let (_, test, _) = stratified_split(&data, split.train_fraction, split.seed).map_err(CliError::data)?;

    let mut reports = Vec::with_capacity(families.len());
    for family in families {
        let path = source.path(&format!("models/{family}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::at(&path, e))?;
        let model = Model::from_json(&text).map_err(|e| CliError::at(&path, e))?;
        reports.push(evaluate_model(&model, &test).unwrap_or_else(|e| ModelReport {
            family,
            metrics: None,
            confusion: None,
            roc: Vec::new(),
            error: Some(format!("{family}: {e}")),
        }));
    }
    let report = EvaluationReport {
        seed: split.seed,
        split,
        timestamp: format_iso8601(chrono::Utc::now().timestamp()),
        models: reports,
    };
    let batch = new_batch(cfg)?;
    write_reports(&batch, &report)?;
    batch.write_json(
        "summary.json",
        &Summary::Evaluate {
            source_batch: source.id.to_string(),
            features_batch: features_id,
        },
    )?;
    Ok(batch)
}

fn stage_name(s: &Summary) -> &'static str {
    match s {
        Summary::Ingest { .. } => "ingest",
        Summary::Featurize { .. } => "featurize",
        Summary::Train { .. } => "train",
        Summary::Evaluate { .. } => "evaluate",
        Summary::Compare { .. } => "compare",
        Summary::TopEntities { .. } => "top-entities",
    }
}

pub fn compare(cfg: &PipelineConfig, source: &Batch, stderr: &mut dyn std::io::Write) -> Result<Batch> {
    let data = labeled_features(source)?;
    let (report, models) =
        compare_models(&data, &cfg.families, &cfg.hyperparams, cfg.train_fraction, cfg.seed).map_err(CliError::data)?;
    let failed: Vec<String> = report.models.iter().filter_map(|m| m.error.clone()).collect();
    failures(stderr, &failed, cfg.families.len())?;
    let fitted: Vec<(Family, Model)> = models.into_iter().filter_map(|(f, m)| m.map(|m| (f, m))).collect();
    let batch = new_batch(cfg)?;
    write_models(&batch, &fitted)?;
    write_reports(&batch, &report)?;
    batch.write_json(
        "summary.json",
        &Summary::Compare {
            source_batch: source.id.to_string(),
            families: cfg.families.clone(),
            failed,
        },
    )?;
    Ok(batch)
}

pub fn top_entities_cmd(cfg: &PipelineConfig, source: &Batch, user_id: &str, k: usize) -> Result<Batch> {
    if k == 0 {
        return Err(CliError::Config("k must be >= 1".into()));
    }
    let kb_path = source.path("kb.json");
    let kb = load_kb(open(&kb_path)?).map_err(|e| CliError::at(&kb_path, e))?;
    let all: Vec<UserAnnotations> = read_jsonl(&source.path("annotations.jsonl"))?;
    let user = all
        .iter()
        .find(|u| u.user_id == user_id)
        .ok_or_else(|| CliError::Data(format!("user {user_id:?} not found in batch {}", source.id)))?;
    let table = top_entities(&user.mentions, &kb, k);

    let batch = new_batch(cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["entity", "subtype", "frequency"]).map_err(CliError::data)?;
    for t in &table {
        w.write_record([t.entity.clone(), t.subtype.to_string(), t.frequency.to_string()])
            .map_err(CliError::data)?;
    }
    batch.write("top_entities.csv", &w.into_inner().map_err(CliError::data)?)?;
    batch.write_json(
        "summary.json",
        &Summary::TopEntities {
            source_batch: source.id.to_string(),
            user_id: user_id.to_owned(),
            k,
            rows: table.len(),
        },
    )?;
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_file_format() {
        let text = "user_id\tlabel\n# comment\nu1\ton_topic\n\nu2\toff_topic\n";
        let m = parse_labels(text.as_bytes(), Path::new("labels.tsv")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["u1"], Label::OnTopic);
        let bad = parse_labels("u1\tmaybe\n".as_bytes(), Path::new("labels.tsv")).unwrap_err();
        assert_eq!(bad.exit_code(), 2);
        assert!(bad.to_string().contains("line 1"));
        assert!(parse_labels("u1 on_topic\n".as_bytes(), Path::new("l")).is_err());
    }

    #[test]
    fn summary_is_tagged_by_stage() {
        let s = Summary::TopEntities {
            source_batch: "b".into(),
            user_id: "u".into(),
            k: 3,
            rows: 1,
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["stage"], "top_entities");
    }
}
