//! Domain gazetteer and longest-leftmost entity annotation.
//!
//! Surface forms are normalised exactly like cleansed text (case folded,
//! punctuation treated as whitespace) and indexed as token sequences. A
//! surface form may belong to only one entity, so every mention resolves
//! without disambiguation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UserCorpus;
use crate::text::{case_fold, normalized_tokens};

const MINI_KB: &str = include_str!("../data/mini_kb.json");

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed knowledge base: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate entity id {0:?}")]
    DuplicateId(String),
    #[error("entity {entity:?} has an empty surface form")]
    EmptySurfaceForm { entity: String },
    #[error("surface form {surface:?} maps to both {first:?} and {second:?}")]
    ConflictingSurface {
        surface: String,
        first: String,
        second: String,
    },
    #[error("unknown entity id {0:?}")]
    UnknownEntity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subtype {
    Politician,
    PoliticalParty,
    Organization,
    Event,
    #[serde(rename = "Political_Slogan")]
    PoliticalSlogan,
    Voter,
    Person,
    Ontology,
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Subtype::Politician => "Politician",
            Subtype::PoliticalParty => "PoliticalParty",
            Subtype::Organization => "Organization",
            Subtype::Event => "Event",
            Subtype::PoliticalSlogan => "Political_Slogan",
            Subtype::Voter => "Voter",
            Subtype::Person => "Person",
            Subtype::Ontology => "Ontology",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "id")]
    pub entity_id: String,
    #[serde(rename = "name")]
    pub canonical_name: String,
    pub subtype: Subtype,
    pub surface_forms: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct KbFile {
    entities: Vec<Entity>,
}

/// An immutable gazetteer. Build with [`load_kb`] or [`KnowledgeBase::new`].
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
    surface_index: HashMap<Vec<String>, usize>,
    longest_key: usize,
}

impl KnowledgeBase {
    pub fn new(entities: Vec<Entity>) -> Result<Self, KbError> {
        let mut by_id = HashMap::with_capacity(entities.len());
        let mut surface_index: HashMap<Vec<String>, usize> = HashMap::new();
        let mut normalized = Vec::with_capacity(entities.len());

        for (idx, mut entity) in entities.into_iter().enumerate() {
            if by_id.insert(entity.entity_id.clone(), idx).is_some() {
                return Err(KbError::DuplicateId(entity.entity_id));
            }
            let has_name = entity
                .surface_forms
                .iter()
                .any(|s| case_fold(s) == case_fold(&entity.canonical_name));
            if !has_name {
                entity.surface_forms.insert(0, entity.canonical_name.clone());
            }

            let mut own_keys = HashSet::new();
            let mut forms = Vec::with_capacity(entity.surface_forms.len());
            for form in entity.surface_forms {
                let key = normalized_tokens(&form);
                if key.is_empty() {
                    return Err(KbError::EmptySurfaceForm {
                        entity: entity.entity_id,
                    });
                }
                if !own_keys.insert(key.clone()) {
                    continue;
                }
                if let Some(&other) = surface_index.get(&key) {
                    let first: &Entity = &normalized[other];
                    return Err(KbError::ConflictingSurface {
                        surface: form,
                        first: first.entity_id.clone(),
                        second: entity.entity_id,
                    });
                }
                surface_index.insert(key, idx);
                forms.push(form);
            }
            entity.surface_forms = forms;
            normalized.push(entity);
        }

        let longest_key = surface_index.keys().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            entities: normalized,
            by_id,
            surface_index,
            longest_key,
        })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    /// Case-folded token sequences currently indexed.
    pub fn surface_keys(&self) -> impl Iterator<Item = &[String]> {
        self.surface_index.keys().map(Vec::as_slice)
    }

    pub fn lookup(&self, tokens: &[String]) -> Option<&Entity> {
        self.surface_index.get(tokens).map(|&i| &self.entities[i])
    }

    /// The gazetteer as `kb.json` text.
    pub fn to_json(&self) -> String {
        let file = KbFile {
            entities: self.entities.clone(),
        };
        serde_json::to_string_pretty(&file).expect("entities serialize")
    }
}

/// Reads a `kb.json` document.
pub fn load_kb<R: Read>(reader: R) -> Result<KnowledgeBase, KbError> {
    let file: KbFile = serde_json::from_reader(reader)?;
    KnowledgeBase::new(file.entities)
}

/// The bundled gazetteer of Australian politics entities.
pub fn bundled_mini_kb() -> KnowledgeBase {
    load_kb(MINI_KB.as_bytes()).expect("bundled knowledge base is valid")
}

pub fn bundled_mini_kb_json() -> &'static str {
    MINI_KB
}

/// Entity id to extra surface forms, as in `synonyms.json`.
pub type SynonymMap = BTreeMap<String, Vec<String>>;

pub fn parse_synonyms<R: Read>(reader: R) -> Result<SynonymMap, KbError> {
    Ok(serde_json::from_reader(reader)?)
}

/// Returns a new gazetteer whose entities carry the union of their own and
/// the supplied surface forms.
pub fn merge_synonyms(kb: &KnowledgeBase, synonyms: &SynonymMap) -> Result<KnowledgeBase, KbError> {
    if let Some(unknown) = synonyms.keys().find(|id| kb.entity(id).is_none()) {
        return Err(KbError::UnknownEntity(unknown.clone()));
    }
    let entities = kb
        .entities
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if let Some(extra) = synonyms.get(&e.entity_id) {
                e.surface_forms.extend(extra.iter().cloned());
            }
            e
        })
        .collect();
    KnowledgeBase::new(entities)
}

/// Where a mention was found.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionSource {
    Profile,
    Post(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: String,
    pub source: MentionSource,
    /// Half-open token span in the whitespace tokenisation of the source.
    pub token_start: usize,
    pub token_end: usize,
    pub matched_surface: String,
}

/// Longest-leftmost, non-overlapping gazetteer matches over the whitespace
/// tokens of already-cleansed `text`.
pub fn annotate_text(text: &str, kb: &KnowledgeBase, source: &MentionSource) -> Vec<EntityMention> {
    let raw: Vec<&str> = text.split_whitespace().collect();
    let folded: Vec<String> = raw.iter().map(|t| case_fold(t)).collect();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < folded.len() {
        let max_len = kb.longest_key.min(folded.len() - i);
        let hit = (1..=max_len)
            .rev()
            .find_map(|len| kb.surface_index.get(&folded[i..i + len]).map(|&e| (len, e)));
        match hit {
            Some((len, e)) => {
                mentions.push(EntityMention {
                    entity_id: kb.entities[e].entity_id.clone(),
                    source: source.clone(),
                    token_start: i,
                    token_end: i + len,
                    matched_surface: raw[i..i + len].join(" "),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    mentions
}

pub type CorpusAnnotations = BTreeMap<MentionSource, Vec<EntityMention>>;

/// Annotates every post and the cleansed profile description. Sources without
/// mentions are omitted.
pub fn annotate_corpus(corpus: &UserCorpus, kb: &KnowledgeBase) -> CorpusAnnotations {
    let mut out = CorpusAnnotations::new();
    let profile = annotate_text(&corpus.cleansed_description, kb, &MentionSource::Profile);
    if !profile.is_empty() {
        out.insert(MentionSource::Profile, profile);
    }
    for post in &corpus.posts {
        let source = MentionSource::Post(post.post_id.clone());
        let found = annotate_text(&post.text, kb, &source);
        if !found.is_empty() {
            out.insert(source, found);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopEntity {
    pub entity: String,
    pub subtype: Subtype,
    pub frequency: usize,
}

/// The `k` most frequently mentioned entities, ties by canonical name.
pub fn top_entities<'a, I>(mentions: I, kb: &KnowledgeBase, k: usize) -> Vec<TopEntity>
where
    I: IntoIterator<Item = &'a EntityMention>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for m in mentions {
        *counts.entry(m.entity_id.as_str()).or_default() += 1;
    }
    let mut rows: Vec<TopEntity> = counts
        .into_iter()
        .filter_map(|(id, frequency)| {
            kb.entity(id).map(|e| TopEntity {
                entity: e.canonical_name.clone(),
                subtype: e.subtype,
                frequency,
            })
        })
        .collect();
    rows.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.entity.cmp(&b.entity)));
    rows.truncate(k);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawPost, UserProfile};
    use proptest::prelude::*;

    fn entity(id: &str, name: &str, subtype: Subtype, forms: &[&str]) -> Entity {
        Entity {
            entity_id: id.into(),
            canonical_name: name.into(),
            subtype,
            surface_forms: forms.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn politicians() -> KnowledgeBase {
        KnowledgeBase::new(vec![
            entity("ta", "Tony Abbott", Subtype::Politician, &["Tony Abbott", "abbott"]),
            entity("mt", "Malcolm Turnbull", Subtype::Politician, &["Malcolm Turnbull"]),
            entity("labor", "Labor", Subtype::PoliticalParty, &["labor"]),
            entity("alp", "Australian Labor Party", Subtype::PoliticalParty, &["Australian Labor Party"]),
            entity("mp", "Member of Parliament", Subtype::Politician, &["Member of Parliament"]),
            entity("el", "Elections", Subtype::Event, &["Elections", "election"]),
        ])
        .unwrap()
    }

    fn src() -> MentionSource {
        MentionSource::Post("p".into())
    }

    #[test]
    fn index_counts_surface_forms() {
        let kb = KnowledgeBase::new(vec![
            entity("a", "A one", Subtype::Event, &["A one", "a two", "a three"]),
            entity("b", "B one", Subtype::Event, &["B one", "b two", "b three"]),
        ])
        .unwrap();
        assert_eq!(kb.surface_keys().count(), 6);
    }

    #[test]
    fn canonical_name_is_always_a_surface_form() {
        let kb = KnowledgeBase::new(vec![entity("x", "Greg Hunt", Subtype::Politician, &["hunt"])]).unwrap();
        assert_eq!(kb.entity("x").unwrap().surface_forms, vec!["Greg Hunt", "hunt"]);
        assert_eq!(kb.surface_keys().count(), 2);
    }

    #[test]
    fn empty_kb_is_valid() {
        let kb = load_kb(r#"{"entities": []}"#.as_bytes()).unwrap();
        assert!(kb.is_empty());
        assert!(annotate_text("anything at all", &kb, &src()).is_empty());
    }

    #[test]
    fn load_errors() {
        let dup = r#"{"entities": [
            {"id": "a", "name": "x", "subtype": "Event", "surface_forms": []},
            {"id": "a", "name": "y", "subtype": "Event", "surface_forms": []}]}"#;
        assert!(matches!(load_kb(dup.as_bytes()), Err(KbError::DuplicateId(id)) if id == "a"));

        let empty = r#"{"entities": [{"id": "a", "name": "x", "subtype": "Event", "surface_forms": ["--"]}]}"#;
        assert!(matches!(load_kb(empty.as_bytes()), Err(KbError::EmptySurfaceForm { .. })));

        let shared = r#"{"entities": [
            {"id": "alp", "name": "ALP", "subtype": "PoliticalParty", "surface_forms": ["labor"]},
            {"id": "uk_labour", "name": "UK Labour", "subtype": "PoliticalParty", "surface_forms": ["Labor"]}]}"#;
        let err = load_kb(shared.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alp") && msg.contains("uk_labour"), "{msg}");

        let bad_subtype = r#"{"entities": [{"id": "a", "name": "x", "subtype": "Wizard", "surface_forms": []}]}"#;
        assert!(matches!(load_kb(bad_subtype.as_bytes()), Err(KbError::Parse(_))));
    }

    #[test]
    fn subtype_wire_names() {
        let s: Subtype = serde_json::from_str("\"Political_Slogan\"").unwrap();
        assert_eq!(s, Subtype::PoliticalSlogan);
        assert_eq!(s.to_string(), "Political_Slogan");
    }

    #[test]
    fn two_politicians() {
        let kb = politicians();
        let m = annotate_text("tony abbott met malcolm turnbull", &kb, &src());
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].entity_id.as_str(), m[0].token_start, m[0].token_end), ("ta", 0, 2));
        assert_eq!((m[1].entity_id.as_str(), m[1].token_start, m[1].token_end), ("mt", 3, 5));
        assert_eq!(m[1].matched_surface, "malcolm turnbull");
    }

    #[test]
    fn empty_text() {
        assert!(annotate_text("", &politicians(), &src()).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let m = annotate_text("australian labor party wins", &politicians(), &src());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity_id, "alp");
        assert_eq!((m[0].token_start, m[0].token_end), (0, 3));
        let m = annotate_text("labor wins", &politicians(), &src());
        assert_eq!(m[0].entity_id, "labor");
    }

    #[test]
    fn hyphenated_names_match_cleansed_text() {
        let kb = KnowledgeBase::new(vec![entity("shy", "Sarah Hanson-Young", Subtype::Politician, &["Hanson-Young"])]).unwrap();
        let m = annotate_text("thanks hanson young", &kb, &src());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].token_start, 1);
    }

    #[test]
    fn case_folding() {
        let m = annotate_text("TONY Abbott", &politicians(), &src());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].matched_surface, "TONY Abbott");
    }

    #[test]
    fn synonyms_extend_matching() {
        let kb = politicians();
        assert!(annotate_text("cast your ballot", &kb, &src()).is_empty());
        let mut syn = SynonymMap::new();
        syn.insert("el".into(), vec!["ballot".into(), "opinion poll".into()]);
        let merged = merge_synonyms(&kb, &syn).unwrap();
        let m = annotate_text("cast your ballot", &merged, &src());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity_id, "el");
        // input untouched
        assert!(annotate_text("cast your ballot", &kb, &src()).is_empty());
    }

    #[test]
    fn synonym_edge_cases() {
        let kb = politicians();
        let same = merge_synonyms(&kb, &SynonymMap::new()).unwrap();
        assert_eq!(same.entities(), kb.entities());

        let mut dup = SynonymMap::new();
        dup.insert("ta".into(), vec!["ABBOTT".into()]);
        let merged = merge_synonyms(&kb, &dup).unwrap();
        assert_eq!(merged.entities(), kb.entities());

        let mut unknown = SynonymMap::new();
        unknown.insert("nobody".into(), vec!["x".into()]);
        assert!(matches!(merge_synonyms(&kb, &unknown), Err(KbError::UnknownEntity(_))));

        let mut conflict = SynonymMap::new();
        conflict.insert("mt".into(), vec!["abbott".into()]);
        assert!(matches!(merge_synonyms(&kb, &conflict), Err(KbError::ConflictingSurface { .. })));
    }

    #[test]
    fn merging_never_loses_coverage_on_fixtures() {
        let kb = politicians();
        let mut syn = SynonymMap::new();
        syn.insert("alp".into(), vec!["labor party".into()]);
        syn.insert("ta".into(), vec!["tony".into()]);
        let merged = merge_synonyms(&kb, &syn).unwrap();
        let coverage = |kb: &KnowledgeBase, t: &str| -> usize {
            annotate_text(t, kb, &src()).iter().map(|m| m.token_end - m.token_start).sum()
        };
        for text in [
            "labor party wins",
            "tony abbott and labor",
            "australian labor party elections tony",
            "nothing to see",
        ] {
            assert!(coverage(&merged, text) >= coverage(&kb, text), "{text}");
        }
    }

    fn corpus_with(posts: &[(&str, &str)], description: &str) -> UserCorpus {
        UserCorpus {
            profile: UserProfile {
                user_id: "u".into(),
                screen_name: "u".into(),
                description: description.into(),
                verified: false,
                followers_count: 0,
                friends_count: 0,
            },
            posts: posts
                .iter()
                .enumerate()
                .map(|(i, (id, text))| RawPost {
                    post_id: id.to_string(),
                    author_id: "u".into(),
                    created_at: 100 - i as i64,
                    text: text.to_string(),
                    is_reply: false,
                    retweet_count: 0,
                    favorite_count: 0,
                })
                .collect(),
            cleansed_description: description.into(),
        }
    }

    #[test]
    fn corpus_annotation() {
        let kb = politicians();
        assert!(annotate_corpus(&corpus_with(&[], ""), &kb).is_empty());

        let ann = annotate_corpus(&corpus_with(&[("1", "go abbott"), ("2", "election day"), ("3", "lunch")], ""), &kb);
        assert_eq!(ann.len(), 2);
        assert!(ann.values().all(|m| m.len() == 1));

        let ann = annotate_corpus(&corpus_with(&[], "member of parliament"), &kb);
        assert_eq!(ann[&MentionSource::Profile].len(), 1);
    }

    fn mention(id: &str) -> EntityMention {
        EntityMention {
            entity_id: id.into(),
            source: src(),
            token_start: 0,
            token_end: 1,
            matched_surface: String::new(),
        }
    }

    #[test]
    fn top_entities_ordering() {
        let kb = KnowledgeBase::new(vec![
            entity("a", "Beta", Subtype::Event, &[]),
            entity("b", "Alpha", Subtype::Voter, &[]),
            entity("c", "Gamma", Subtype::Person, &[]),
        ])
        .unwrap();
        let ms: Vec<_> = ["a", "a", "a", "c"].iter().map(|i| mention(i)).collect();
        let top = top_entities(&ms, &kb, 2);
        assert_eq!(
            top.iter().map(|t| (t.entity.as_str(), t.frequency)).collect::<Vec<_>>(),
            [("Beta", 3), ("Gamma", 1)]
        );
        assert_eq!(top_entities(&ms, &kb, 25).len(), 2);

        let tied: Vec<_> = ["a", "b", "a", "b"].iter().map(|i| mention(i)).collect();
        let top = top_entities(&tied, &kb, 5);
        assert_eq!(top[0].entity, "Alpha");
        assert_eq!(top[0].subtype, Subtype::Voter);
    }

    #[test]
    fn bundled_kb_loads() {
        let kb = bundled_mini_kb();
        assert!(kb.len() >= 40);
        let m = annotate_text("sarah hanson young questioned peter dutton in the senate", &kb, &src());
        let ids: Vec<_> = m.iter().map(|m| m.entity_id.as_str()).collect();
        assert_eq!(ids, ["sarah_hanson_young", "peter_dutton", "senate"]);
        let reparsed = load_kb(kb.to_json().as_bytes()).unwrap();
        assert_eq!(reparsed.entities(), kb.entities());
    }

    fn vocab() -> Vec<&'static str> {
        vec!["a", "b", "c", "d", "e", "f"]
    }

    fn arb_kb() -> impl Strategy<Value = KnowledgeBase> {
        proptest::collection::vec(proptest::collection::vec(0usize..6, 1..4), 0..10).prop_map(|forms| {
            let v = vocab();
            let mut seen = HashSet::new();
            let entities = forms
                .into_iter()
                .filter_map(|f| {
                    let s = f.iter().map(|&i| v[i]).collect::<Vec<_>>().join(" ");
                    seen.insert(s.clone()).then_some(s)
                })
                .enumerate()
                .map(|(i, s)| Entity {
                    entity_id: format!("e{i}"),
                    canonical_name: s.clone(),
                    subtype: Subtype::Event,
                    surface_forms: vec![s],
                })
                .collect();
            KnowledgeBase::new(entities).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mentions_are_disjoint_in_bounds_and_indexed(
            kb in arb_kb(),
            words in proptest::collection::vec(0usize..7, 0..30),
        ) {
            let v = vocab();
            let text = words.iter().map(|&i| if i < 6 { v[i] } else { "zz" }).collect::<Vec<_>>().join(" ");
            let n = text.split_whitespace().count();
            let ms = annotate_text(&text, &kb, &src());
            let mut last_end = 0;
            for m in &ms {
                prop_assert!(m.token_start < m.token_end && m.token_end <= n);
                prop_assert!(m.token_start >= last_end);
                last_end = m.token_end;
                let key = normalized_tokens(&m.matched_surface);
                prop_assert!(kb.lookup(&key).is_some());
                prop_assert_eq!(&kb.lookup(&key).unwrap().entity_id, &m.entity_id);
            }
            prop_assert_eq!(annotate_text(&text, &kb, &src()), ms);
        }
    }
}
