//! Post and user ingestion, de-duplication, handle resolution and text
//! cleansing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::is_punct_or_symbol;

pub const DEFAULT_POST_CAP: usize = 3200;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub post_id: String,
    pub author_id: String,
    /// UTC seconds; ISO-8601 on the wire.
    #[serde(with = "crate::timefmt::iso8601")]
    pub created_at: i64,
    pub text: String,
    pub is_reply: bool,
    pub retweet_count: u64,
    pub favorite_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub screen_name: String,
    #[serde(default)]
    pub description: String,
    pub verified: bool,
    pub followers_count: u64,
    pub friends_count: u64,
}

/// One user's cleansed posts, newest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCorpus {
    pub profile: UserProfile,
    pub posts: Vec<RawPost>,
    pub cleansed_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleansingConfig {
    pub stopwords: BTreeSet<String>,
    pub lowercase: bool,
    pub post_cap: usize,
}

impl Default for CleansingConfig {
    fn default() -> Self {
        Self {
            stopwords: default_stopwords(),
            lowercase: true,
            post_cap: DEFAULT_POST_CAP,
        }
    }
}

impl CleansingConfig {
    pub fn without_stopwords() -> Self {
        Self {
            stopwords: BTreeSet::new(),
            ..Self::default()
        }
    }
}

/// The bundled English stopword list.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopword_lines(DEFAULT_STOPWORDS.lines())
}

/// Reads `stopwords.txt`: one token per line, `#` comments and blank lines
/// ignored. Tokens are lowercased.
pub fn parse_stopwords<R: BufRead>(reader: R) -> Result<BTreeSet<String>, CorpusError> {
    let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
    Ok(parse_stopword_lines(lines.iter().map(String::as_str)))
}

fn parse_stopword_lines<'a>(lines: impl Iterator<Item = &'a str>) -> BTreeSet<String> {
    lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
        .collect()
}

/// Lowercase handle (no `@`) to display name.
pub type HandleMap = HashMap<String, String>;

/// Reads `handles.tsv`: `handle<TAB>display name` per line.
pub fn parse_handle_map<R: BufRead>(reader: R) -> Result<HandleMap, CorpusError> {
    let mut map = HandleMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (handle, name) = line.split_once('\t').ok_or_else(|| CorpusError::Record {
            line: idx + 1,
            message: "expected two tab-separated columns".into(),
        })?;
        let handle = handle.trim().trim_start_matches('@').to_lowercase();
        if handle.is_empty() {
            return Err(CorpusError::Record {
                line: idx + 1,
                message: "empty handle".into(),
            });
        }
        map.insert(handle, name.trim().to_owned());
    }
    Ok(map)
}

/// What to do with a malformed record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    SkipAndCount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub skipped: Vec<SkippedRecord>,
}

fn parse_jsonl<T, R, V>(reader: R, policy: ErrorPolicy, mut validate: V) -> Result<Parsed<T>, CorpusError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
    V: FnMut(&T) -> Result<(), String>,
{
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<T>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| validate(&rec).map(|()| rec));
        match outcome {
            Ok(rec) => records.push(rec),
            Err(message) => match policy {
                ErrorPolicy::FailFast => return Err(CorpusError::Record { line: idx + 1, message }),
                ErrorPolicy::SkipAndCount => skipped.push(SkippedRecord { line: idx + 1, message }),
            },
        }
    }
    Ok(Parsed { records, skipped })
}

/// Parses `posts.jsonl`, preserving line order.
pub fn parse_posts_archive<R: BufRead>(reader: R, policy: ErrorPolicy) -> Result<Parsed<RawPost>, CorpusError> {
    parse_jsonl(reader, policy, |p: &RawPost| {
        if p.post_id.is_empty() {
            Err("empty post_id".into())
        } else if p.author_id.is_empty() {
            Err("empty author_id".into())
        } else if p.created_at <= 0 {
            Err("created_at must be after the epoch".into())
        } else {
            Ok(())
        }
    })
}

/// Parses `users.jsonl`. A repeated `user_id` is a record error.
pub fn parse_users<R: BufRead>(reader: R, policy: ErrorPolicy) -> Result<Parsed<UserProfile>, CorpusError> {
    let mut seen = HashSet::new();
    parse_jsonl(reader, policy, |u: &UserProfile| {
        if u.user_id.is_empty() {
            Err("empty user_id".into())
        } else if !seen.insert(u.user_id.clone()) {
            Err(format!("duplicate user_id {:?}", u.user_id))
        } else {
            Ok(())
        }
    })
}

/// Keeps the first occurrence of every `post_id`, preserving order.
pub fn dedupe_posts(posts: Vec<RawPost>) -> Vec<RawPost> {
    let mut seen = HashSet::with_capacity(posts.len());
    posts
        .into_iter()
        .filter(|p| seen.insert(p.post_id.clone()))
        .collect()
}

fn is_handle_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Replaces every `@handle` token with its display name, or with the bare
/// handle when it is not in `handles`.
pub fn replace_handles(text: &str, handles: &HandleMap) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    let mut at_token_start = true;
    while let Some((i, c)) = chars.next() {
        if c == '@' && at_token_start {
            let start = i + c.len_utf8();
            let mut end = start;
            while let Some(&(j, n)) = chars.peek() {
                if !is_handle_char(n) {
                    break;
                }
                end = j + n.len_utf8();
                chars.next();
            }
            if end > start {
                let handle = &text[start..end];
                match handles.get(&handle.to_lowercase()) {
                    Some(name) => out.push_str(name),
                    None => out.push_str(handle),
                }
                at_token_start = false;
                continue;
            }
        }
        out.push(c);
        at_token_start = c.is_whitespace();
    }
    out
}

fn is_url_token(token: &str) -> bool {
    let t = token.trim_start_matches(is_punct_or_symbol).to_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

/// Entity decoding, URL removal, punctuation to space, optional lowercasing,
/// stopword removal and whitespace normalisation, in that order.
pub fn cleanse_text(text: &str, config: &CleansingConfig) -> String {
    let decoded = html_escape::decode_html_entities(text);
    let without_urls: Vec<&str> = decoded.split_whitespace().filter(|t| !is_url_token(t)).collect();
    let depunct: String = without_urls
        .join(" ")
        .chars()
        .map(|c| if is_punct_or_symbol(c) { ' ' } else { c })
        .collect();
    let cased = if config.lowercase { depunct.to_lowercase() } else { depunct };
    cased
        .split_whitespace()
        .filter(|t| config.stopwords.is_empty() || !config.stopwords.contains(&t.to_lowercase()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Counters reported by [`build_corpus`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub duplicates_removed: usize,
    pub orphaned: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusBuild {
    pub corpora: Vec<UserCorpus>,
    pub stats: BuildStats,
}

/// Groups posts by author, de-duplicates, resolves handles, cleanses, sorts
/// newest first and applies the post cap. Corpora follow the order of
/// `profiles`; posts whose author has no profile are counted as orphans.
pub fn build_corpus(
    profiles: &[UserProfile],
    posts: Vec<RawPost>,
    handles: &HandleMap,
    config: &CleansingConfig,
) -> CorpusBuild {
    let total = posts.len();
    let posts = dedupe_posts(posts);
    let mut stats = BuildStats {
        duplicates_removed: total - posts.len(),
        ..BuildStats::default()
    };

    let known: HashSet<&str> = profiles.iter().map(|p| p.user_id.as_str()).collect();
    let mut by_author: BTreeMap<String, Vec<RawPost>> = BTreeMap::new();
    for post in posts {
        if known.contains(post.author_id.as_str()) {
            by_author.entry(post.author_id.clone()).or_default().push(post);
        } else {
            stats.orphaned += 1;
        }
    }

    let corpora: Vec<(UserCorpus, usize)> = profiles
        .par_iter()
        .map(|profile| {
            let mut posts = by_author.get(&profile.user_id).cloned().unwrap_or_default();
            for p in &mut posts {
                p.text = cleanse_text(&replace_handles(&p.text, handles), config);
            }
            posts.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.post_id.cmp(&b.post_id)));
            let truncated = posts.len().saturating_sub(config.post_cap);
            posts.truncate(config.post_cap);
            let cleansed_description = cleanse_text(&replace_handles(&profile.description, handles), config);
            (
                UserCorpus {
                    profile: profile.clone(),
                    posts,
                    cleansed_description,
                },
                truncated,
            )
        })
        .collect();

    stats.truncated = corpora.iter().map(|(_, t)| t).sum();
    CorpusBuild {
        corpora: corpora.into_iter().map(|(c, _)| c).collect(),
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(id: &str, author: &str, t: i64, text: &str) -> RawPost {
        RawPost {
            post_id: id.into(),
            author_id: author.into(),
            created_at: t,
            text: text.into(),
            is_reply: false,
            retweet_count: 0,
            favorite_count: 0,
        }
    }

    fn profile(id: &str) -> UserProfile {
        UserProfile {
            user_id: id.into(),
            screen_name: id.into(),
            description: String::new(),
            verified: false,
            followers_count: 0,
            friends_count: 0,
        }
    }

    const LINE: &str = r#"{"post_id":"1","author_id":"u1","created_at":"2016-08-15T00:00:00Z","text":"hi","is_reply":false,"retweet_count":2,"favorite_count":3}"#;

    #[test]
    fn parse_single_line() {
        let parsed = parse_posts_archive(LINE.as_bytes(), ErrorPolicy::FailFast).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].retweet_count, 2);
        assert_eq!(parsed.records[0].created_at, 1_471_219_200);
    }

    #[test]
    fn parse_empty_stream() {
        let parsed = parse_posts_archive(&b""[..], ErrorPolicy::FailFast).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.skipped.is_empty());
    }

    #[test]
    fn missing_field_skip_and_fail_modes() {
        let bad = r#"{"post_id":"2","author_id":"u1","created_at":"2016-08-15T00:00:00Z","is_reply":false,"retweet_count":0,"favorite_count":0}"#;
        let third = LINE.replace("\"1\"", "\"3\"");
        let input = format!("{LINE}\n{bad}\n{third}\n");
        let parsed = parse_posts_archive(input.as_bytes(), ErrorPolicy::SkipAndCount).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.skipped.len(), 1);
        assert_eq!(parsed.skipped[0].line, 2);
        assert!(parsed.skipped[0].message.contains("text"));

        match parse_posts_archive(input.as_bytes(), ErrorPolicy::FailFast) {
            Err(CorpusError::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn negative_count_and_bad_timestamp_rejected() {
        let neg = LINE.replace("\"retweet_count\":2", "\"retweet_count\":-2");
        assert!(parse_posts_archive(neg.as_bytes(), ErrorPolicy::FailFast).is_err());
        let ts = LINE.replace("2016-08-15T00:00:00Z", "not a date");
        assert!(parse_posts_archive(ts.as_bytes(), ErrorPolicy::FailFast).is_err());
    }

    #[test]
    fn duplicate_users_rejected() {
        let u = r#"{"user_id":"u1","screen_name":"a","description":"","verified":false,"followers_count":1,"friends_count":2}"#;
        let input = format!("{u}\n{u}\n");
        let parsed = parse_users(input.as_bytes(), ErrorPolicy::SkipAndCount).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.skipped.len(), 1);
    }

    #[test]
    fn dedupe_keeps_first() {
        let a = post("A", "u", 1, "first");
        let b = post("B", "u", 2, "b");
        let a2 = post("A", "u", 3, "second");
        let out = dedupe_posts(vec![a.clone(), b.clone(), a2]);
        assert_eq!(out, vec![a, b]);
        assert!(dedupe_posts(vec![]).is_empty());
    }

    #[test]
    fn dedupe_hundred_with_forty_duplicates() {
        let posts: Vec<RawPost> = (0..100)
            .map(|i| post(&format!("p{}", i % 60), "u", i + 1, "x"))
            .collect();
        let expected: HashSet<String> = posts.iter().map(|p| p.post_id.clone()).collect();
        let out = dedupe_posts(posts);
        assert_eq!(out.len(), expected.len());
        assert_eq!(out.len(), 60);
        let got: HashSet<String> = out.iter().map(|p| p.post_id.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn exact_text_duplicates_with_distinct_ids_kept() {
        let out = dedupe_posts(vec![post("1", "u", 1, "same"), post("2", "u", 1, "same")]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn handles() {
        let mut map = HandleMap::new();
        map.insert("jdoe".into(), "John Doe".into());
        assert_eq!(replace_handles("@jdoe said yes", &map), "John Doe said yes");
        assert_eq!(replace_handles("@JDoe: ok", &map), "John Doe: ok");
        assert_eq!(replace_handles("@xyz hi", &HandleMap::new()), "xyz hi");
        assert_eq!(replace_handles("no handles here", &HandleMap::new()), "no handles here");
        assert_eq!(replace_handles("mail a@b.com", &map), "mail a@b.com");
        assert_eq!(replace_handles("@ alone", &map), "@ alone");
    }

    #[test]
    fn cleanse_examples() {
        let cfg = CleansingConfig::without_stopwords();
        assert_eq!(cleanse_text("Vote &amp; win http://x.co/q", &cfg), "vote win");
        assert_eq!(cleanse_text("", &cfg), "");
        assert_eq!(cleanse_text("hello", &cfg), "hello");
        assert_eq!(cleanse_text("Go see www.example.org, NOW!!", &cfg), "go see now");
        assert_eq!(cleanse_text("#auspol @someone rocks", &cfg), "auspol someone rocks");
    }

    #[test]
    fn cleanse_removes_stopwords() {
        let cfg = CleansingConfig::default();
        assert_eq!(cleanse_text("The Member of the Parliament", &cfg), "member parliament");
        let keep_case = CleansingConfig {
            lowercase: false,
            ..CleansingConfig::default()
        };
        assert_eq!(cleanse_text("The Senate", &keep_case), "Senate");
    }

    #[test]
    fn stopword_file_parsing() {
        let sw = parse_stopwords("# comment\nThe\n\nand\n".as_bytes()).unwrap();
        assert_eq!(sw.into_iter().collect::<Vec<_>>(), vec!["and", "the"]);
        assert!(default_stopwords().contains("the"));
    }

    #[test]
    fn handle_map_parsing() {
        let map = parse_handle_map("JDoe\tJohn Doe\n\n@abc\tA B C\n".as_bytes()).unwrap();
        assert_eq!(map.get("jdoe").unwrap(), "John Doe");
        assert_eq!(map.get("abc").unwrap(), "A B C");
        assert!(parse_handle_map("nocolumns\n".as_bytes()).is_err());
    }

    #[test]
    fn build_two_posts() {
        let out = build_corpus(
            &[profile("u1")],
            vec![post("1", "u1", 10, "a"), post("2", "u1", 20, "b")],
            &HandleMap::new(),
            &CleansingConfig::without_stopwords(),
        );
        assert_eq!(out.corpora.len(), 1);
        let ids: Vec<_> = out.corpora[0].posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["2", "1"]);
    }

    #[test]
    fn build_caps_to_newest() {
        let posts: Vec<RawPost> = (0..3500)
            .map(|i| post(&format!("p{i}"), "u1", 1_000 + (i * 7919 % 3500) as i64, "t"))
            .collect();
        let mut oracle: Vec<i64> = posts.iter().map(|p| p.created_at).collect();
        oracle.sort_unstable_by(|a, b| b.cmp(a));
        oracle.truncate(3200);
        let out = build_corpus(&[profile("u1")], posts, &HandleMap::new(), &CleansingConfig::default());
        let got: Vec<i64> = out.corpora[0].posts.iter().map(|p| p.created_at).collect();
        assert_eq!(got, oracle);
        assert_eq!(out.stats.truncated, 300);
    }

    #[test]
    fn build_counts_orphans() {
        let out = build_corpus(
            &[profile("u1")],
            vec![post("1", "u1", 10, "a"), post("2", "ghost", 20, "b")],
            &HandleMap::new(),
            &CleansingConfig::default(),
        );
        assert_eq!(out.corpora.len(), 1);
        assert_eq!(out.corpora[0].posts.len(), 1);
        assert_eq!(out.stats.orphaned, 1);
    }

    #[test]
    fn build_resolves_handles_before_cleansing() {
        let mut handles = HandleMap::new();
        handles.insert("tonyabbott".into(), "Tony Abbott".into());
        let mut p = profile("u1");
        p.description = "Fan of @TonyAbbott!".into();
        let out = build_corpus(
            &[p],
            vec![post("1", "u1", 10, "RT @tonyabbott: Vote &amp; win")],
            &handles,
            &CleansingConfig::without_stopwords(),
        );
        assert_eq!(out.corpora[0].posts[0].text, "rt tony abbott vote win");
        assert_eq!(out.corpora[0].cleansed_description, "fan of tony abbott");
    }

    proptest! {
        #[test]
        fn cleanse_is_idempotent(text in "\\PC{0,60}", lower in any::<bool>()) {
            let cfg = CleansingConfig { lowercase: lower, ..CleansingConfig::default() };
            let once = cleanse_text(&text, &cfg);
            prop_assert_eq!(cleanse_text(&once, &cfg), once);
        }

        #[test]
        fn cleanse_output_has_no_entities_urls_or_punctuation(
            parts in proptest::collection::vec(
                prop_oneof![
                    Just("&amp;".to_string()), Just("&lt;".to_string()), Just("http://a.b/c".to_string()),
                    Just("HTTPS://x.y".to_string()), Just("www.z.org".to_string()), Just("@h".to_string()),
                    "[a-zA-Z0-9!?.,;:'\"()#$%]{0,8}", "\\PC{0,6}",
                ],
                0..12,
            )
        ) {
            let text = parts.join(" ");
            let out = cleanse_text(&text, &CleansingConfig::without_stopwords());
            prop_assert!(!out.contains('&'));
            prop_assert!(!out.contains("http://") && !out.contains("https://") && !out.contains("www."));
            prop_assert!(!out.chars().any(is_punct_or_symbol));
            prop_assert!(!out.contains("  ") && out.trim() == out);
        }

        #[test]
        fn dedupe_idempotent_and_stable(ids in proptest::collection::vec(0u8..20, 0..60)) {
            let posts: Vec<RawPost> = ids.iter().enumerate()
                .map(|(i, id)| post(&id.to_string(), "u", i as i64 + 1, "x")).collect();
            let once = dedupe_posts(posts.clone());
            prop_assert_eq!(dedupe_posts(once.clone()), once.clone());
            let firsts: Vec<i64> = once.iter().map(|p| p.created_at).collect();
            let mut sorted = firsts.clone();
            sorted.sort_unstable();
            prop_assert_eq!(firsts, sorted);
        }
    }
}
