//! Seeded generator for a labelled synthetic corpus.
//!
//! On-topic users draw a share of their post tokens from knowledge-base
//! surface forms, spread over all five quarter buckets before the reference
//! time; off-topic users write from a neutral vocabulary with rare accidental
//! knowledge-base tokens.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use sbd_core::corpus::{cleanse_text, CleansingConfig, RawPost, UserProfile};
use sbd_core::features::{compute_quarter_windows, Label};
use sbd_core::knowledge::{annotate_text, bundled_mini_kb, bundled_mini_kb_json, KnowledgeBase, MentionSource, Subtype};
use sbd_core::rng::{seeded, SeededRng};
use sbd_core::timefmt::parse_iso8601;

use crate::batch::write_atomic;
use crate::error::{CliError, Result};

pub const REFERENCE_TIME: &str = "2016-08-15T00:00:00Z";

const NEUTRAL: &[&str] = &[
    "coffee", "weekend", "music", "football", "recipe", "garden", "movie", "travel", "beach", "puppy", "sunset",
    "concert", "pizza", "guitar", "yoga", "hiking", "camera", "novel", "bakery", "festival", "kitten", "breakfast",
    "playlist", "surfing", "marathon", "sneakers", "podcast", "chocolate", "vacation", "museum", "painting",
    "brunch", "cycling", "photography", "dessert", "skateboard", "lake", "mountain", "sushi", "tennis", "cricket",
    "netball", "bbq", "sunrise", "holiday", "picnic", "jazz", "album", "series", "episode", "trailer", "gaming",
    "console", "laptop", "phone", "fashion", "makeup", "haircut", "gym", "workout", "smoothie", "tea", "cake",
    "cookies", "dog", "cat", "weather", "rain", "sunshine", "friday", "monday", "birthday", "wedding", "party",
    "dance", "karaoke", "comedy", "cinema", "ocean", "reef", "island", "road", "trip", "camping",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_on: usize,
    pub n_off: usize,
    /// Share of on-topic post tokens drawn from the knowledge base.
    pub on_fraction: f64,
    /// Share of off-topic post tokens drawn from the knowledge base.
    pub off_fraction: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n_on: usize, n_off: usize) -> Self {
        Self {
            seed,
            n_on,
            n_off,
            on_fraction: 0.4,
            off_fraction: 0.015,
        }
    }
}

pub struct SynthCorpus {
    pub users: Vec<UserProfile>,
    pub posts: Vec<RawPost>,
    pub labels: Vec<(String, Label)>,
    pub handles: Vec<(String, String)>,
}

/// Surface forms that survive default cleansing and annotate as exactly
/// their own entity, with an optional `@handle` for people.
struct Vocabulary {
    surfaces: Vec<(String, Option<String>)>,
    neutral: Vec<&'static str>,
    handles: Vec<(String, String)>,
}

fn single_match(text: &str, kb: &KnowledgeBase, cfg: &CleansingConfig) -> Option<String> {
    let m = annotate_text(&cleanse_text(text, cfg), kb, &MentionSource::Profile);
    match m.as_slice() {
        [one] => Some(one.entity_id.clone()),
        _ => None,
    }
}

fn vocabulary(kb: &KnowledgeBase) -> Vocabulary {
    let cfg = CleansingConfig::default();
    let mut surfaces = Vec::new();
    let mut handles = Vec::new();
    for e in kb.entities() {
        let handle = matches!(e.subtype, Subtype::Politician)
            .then(|| e.canonical_name.to_lowercase().chars().filter(char::is_ascii_alphanumeric).collect::<String>())
            .filter(|h| h.len() > 3 && e.canonical_name.contains(' '));
        if let Some(h) = &handle {
            handles.push((h.clone(), e.canonical_name.clone()));
        }
        for s in &e.surface_forms {
            if single_match(s, kb, &cfg).as_deref() == Some(e.entity_id.as_str()) {
                let h = handle.as_ref().filter(|_| *s == e.canonical_name).cloned();
                surfaces.push((s.clone(), h));
            }
        }
    }
    let neutral = NEUTRAL
        .iter()
        .copied()
        .filter(|w| annotate_text(&cleanse_text(w, &cfg), kb, &MentionSource::Profile).is_empty())
        .filter(|w| !cfg.stopwords.contains(*w))
        .collect();
    Vocabulary {
        surfaces,
        neutral,
        handles,
    }
}

fn url(rng: &mut SeededRng) -> String {
    const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let code: String = (0..8).map(|_| ALNUM[rng.random_range(0..ALNUM.len())] as char).collect();
    format!("https://t.co/{code}")
}

fn kb_token(rng: &mut SeededRng, vocab: &Vocabulary) -> String {
    let (surface, handle) = vocab.surfaces.choose(rng).expect("vocabulary is non-empty");
    match handle {
        Some(h) if rng.random_bool(0.3) => {
            // Mixed-case handle as typed in posts; resolution is case-insensitive.
            let display: String = surface.chars().filter(char::is_ascii_alphanumeric).collect();
            debug_assert_eq!(display.to_lowercase(), *h);
            format!("@{display}")
        }
        _ => surface.clone(),
    }
}

fn post_text(rng: &mut SeededRng, vocab: &Vocabulary, kb_share: f64) -> String {
    let slots = rng.random_range(6..=14);
    let mut words: Vec<String> = Vec::with_capacity(slots + 3);
    for _ in 0..slots {
        if rng.random_bool(kb_share) {
            words.push(kb_token(rng, vocab));
        } else {
            words.push((*vocab.neutral.choose(rng).expect("neutral vocabulary")).to_string());
        }
    }
    if rng.random_bool(0.15) {
        let at = rng.random_range(0..=words.len());
        words.insert(at, format!("#{}", vocab.neutral.choose(rng).expect("neutral vocabulary")));
    }
    if rng.random_bool(0.1) {
        let at = rng.random_range(0..=words.len());
        words.insert(at, "&amp;".into());
    }
    let mut text = words.join(" ");
    if rng.random_bool(0.3) {
        text.push('!');
    }
    if rng.random_bool(0.2) {
        text.push(' ');
        text.push_str(&url(rng));
    }
    text
}

/// Start of the earliest sampled quarter: four quarters before the one
/// containing the reference time.
fn bucket_bounds(reference: i64) -> [(i64, i64); 5] {
    let w = compute_quarter_windows(reference);
    let pre_start = w.w.start - (w.x.start - w.w.start) * 4;
    [
        (pre_start, w.w.start),
        (w.w.start, w.w.end),
        (w.x.start, w.x.end),
        (w.y.start, w.y.end),
        (w.z.start, reference + 1),
    ]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_on < 1 || cfg.n_off < 1 {
        return Err(CliError::Config("n_on and n_off must both be >= 1".into()));
    }
    for f in [cfg.on_fraction, cfg.off_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Config(format!("token fractions must lie in [0, 1], got {f}")));
        }
    }
    let kb = bundled_mini_kb();
    let vocab = vocabulary(&kb);
    let reference = parse_iso8601(REFERENCE_TIME).expect("constant is valid");
    let buckets = bucket_bounds(reference);
    let mut rng = seeded(cfg.seed);

    let mut classes: Vec<Label> = std::iter::repeat_n(Label::OnTopic, cfg.n_on)
        .chain(std::iter::repeat_n(Label::OffTopic, cfg.n_off))
        .collect();
    classes.shuffle(&mut rng);

    let width = (classes.len().max(1000)).to_string().len();
    let mut users = Vec::with_capacity(classes.len());
    let mut posts = Vec::new();
    let mut labels = Vec::with_capacity(classes.len());
    for (i, &label) in classes.iter().enumerate() {
        let user_id = format!("u{:0width$}", i + 1);
        let on = label == Label::OnTopic;
        let share = if on { cfg.on_fraction } else { cfg.off_fraction };

        let mut description = String::new();
        for _ in 0..rng.random_range(2..=5) {
            let _ = write!(description, "{} ", vocab.neutral.choose(&mut rng).expect("neutral vocabulary"));
        }
        if on && rng.random_bool(0.6) {
            description.push_str("following ");
            description.push_str(&kb_token(&mut rng, &vocab));
        }
        users.push(UserProfile {
            user_id: user_id.clone(),
            screen_name: format!("user{:0width$}", i + 1),
            description: description.trim().to_string(),
            verified: rng.random_bool(0.04),
            followers_count: 10f64.powf(rng.random_range(1.0..4.7)).round() as u64,
            friends_count: 10f64.powf(rng.random_range(1.0..3.7)).round() as u64,
        });
        labels.push((user_id.clone(), label));

        let n_posts = rng.random_range(15..=60);
        for k in 0..n_posts {
            let (lo, hi) = buckets[rng.random_range(0..buckets.len())];
            let post = RawPost {
                post_id: format!("{user_id}-p{:03}", k + 1),
                author_id: user_id.clone(),
                created_at: rng.random_range(lo..hi),
                text: post_text(&mut rng, &vocab, share),
                is_reply: rng.random_bool(0.3),
                retweet_count: rng.random_range(0..50),
                favorite_count: rng.random_range(0..120),
            };
            // Archives occasionally repeat a record verbatim.
            if rng.random_bool(0.01) {
                posts.push(post.clone());
            }
            posts.push(post);
        }
    }
    Ok(SynthCorpus {
        users,
        posts,
        labels,
        handles: vocab.handles,
    })
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).map_err(CliError::data)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// The config written next to generated files; paths are relative to it.
pub fn config_toml(seed: u64) -> String {
    format!(
        "seed = {seed}\n\
         train_fraction = 0.6\n\
         reference_time = \"{REFERENCE_TIME}\"\n\
         \n\
         [paths]\n\
         posts = \"posts.jsonl\"\n\
         users = \"users.jsonl\"\n\
         handles = \"handles.tsv\"\n\
         stopwords = \"stopwords.txt\"\n\
         kb = \"kb.json\"\n\
         labels = \"labels.tsv\"\n\
         output = \"runs\"\n"
    )
}

/// Writes posts.jsonl, users.jsonl, labels.tsv, handles.tsv, kb.json,
/// stopwords.txt and sbd.toml into `dir`.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<()> {
    let corpus = generate(cfg)?;
    write_atomic(&dir.join("posts.jsonl"), &jsonl(&corpus.posts)?)?;
    write_atomic(&dir.join("users.jsonl"), &jsonl(&corpus.users)?)?;
    let mut labels = String::from("user_id\tlabel\n");
    for (u, l) in &corpus.labels {
        let _ = writeln!(labels, "{u}\t{l}");
    }
    write_atomic(&dir.join("labels.tsv"), labels.as_bytes())?;
    let mut handles = String::new();
    for (h, name) in &corpus.handles {
        let _ = writeln!(handles, "{h}\t{name}");
    }
    write_atomic(&dir.join("handles.tsv"), handles.as_bytes())?;
    write_atomic(&dir.join("kb.json"), bundled_mini_kb_json().as_bytes())?;
    let stopwords: String = sbd_core::corpus::default_stopwords()
        .into_iter()
        .map(|w| w + "\n")
        .collect();
    write_atomic(&dir.join("stopwords.txt"), stopwords.as_bytes())?;
    write_atomic(&dir.join("sbd.toml"), config_toml(cfg.seed).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbd_core::corpus::{build_corpus, HandleMap};
    use sbd_core::features::Bucket;

    #[test]
    fn neutral_vocabulary_never_annotates() {
        let kb = bundled_mini_kb();
        let v = vocabulary(&kb);
        assert!(v.neutral.len() > 50);
        let cfg = CleansingConfig::default();
        let all = v.neutral.join(" ");
        assert!(annotate_text(&cleanse_text(&all, &cfg), &kb, &MentionSource::Profile).is_empty());
        assert!(v.surfaces.len() > 40);
    }

    #[test]
    fn deterministic_and_sized() {
        let a = generate(&SynthConfig::new(5, 3, 4)).unwrap();
        let b = generate(&SynthConfig::new(5, 3, 4)).unwrap();
        assert_eq!(a.posts, b.posts);
        assert_eq!(a.users, b.users);
        assert_eq!(a.users.len(), 7);
        assert_eq!(a.labels.iter().filter(|(_, l)| *l == Label::OnTopic).count(), 3);
        let c = generate(&SynthConfig::new(6, 3, 4)).unwrap();
        assert_ne!(a.posts, c.posts);
    }

    #[test]
    fn one_each() {
        let c = generate(&SynthConfig::new(1, 1, 1)).unwrap();
        assert_eq!((c.users.len(), c.labels.len()), (2, 2));
        assert!(generate(&SynthConfig::new(1, 0, 1)).is_err());
    }

    #[test]
    fn token_shares_and_bucket_spread() {
        let c = generate(&SynthConfig::new(11, 20, 20)).unwrap();
        let kb = bundled_mini_kb();
        let handles: HandleMap = c.handles.iter().cloned().collect();
        let built = build_corpus(&c.users, c.posts.clone(), &handles, &CleansingConfig::default());
        let windows = compute_quarter_windows(parse_iso8601(REFERENCE_TIME).unwrap());
        let mut seen = std::collections::BTreeSet::new();
        let (mut on_mentions, mut on_posts, mut off_mentions, mut off_posts) = (0, 0, 0, 0);
        for u in &built.corpora {
            let on = c.labels.iter().any(|(id, l)| *id == u.profile.user_id && *l == Label::OnTopic);
            for p in &u.posts {
                let b = windows.bucket(p.created_at);
                assert_ne!(b, Bucket::Future);
                seen.insert(format!("{b:?}"));
                let m = annotate_text(&p.text, &kb, &MentionSource::Post(p.post_id.clone())).len();
                if on {
                    on_mentions += m;
                    on_posts += 1;
                } else {
                    off_mentions += m;
                    off_posts += 1;
                }
            }
        }
        assert_eq!(seen.len(), 5);
        let on_rate = on_mentions as f64 / on_posts as f64;
        let off_rate = off_mentions as f64 / off_posts as f64;
        assert!(on_rate > 2.0, "{on_rate}");
        assert!(off_rate < 0.5, "{off_rate}");
    }
}
