//! Verb–object concept extraction from dependency-parsed captions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Object placeholder for intransitive uses ("run none").
pub const NO_OBJECT: &str = "none";

const DEFAULT_HUMAN_TERMS: &[&str] = &[
    "man", "woman", "men", "women", "person", "people", "boy", "girl", "boys", "girls", "child",
    "children", "guy", "lady", "he", "she", "they", "someone", "player", "worker", "crowd",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub word: String,
    pub pos: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub relation: String,
    pub head_index: usize,
    pub dependent_index: usize,
}

/// One parsed caption of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub image_id: String,
    pub sentence_id: String,
    pub tokens: Vec<Token>,
    pub deps: Vec<Dependency>,
}

impl CorpusRecord {
    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidRecord {
            record: format!("{}/{}", self.image_id, self.sentence_id),
            message: message.into(),
        }
    }

    /// Checks the structural invariants: non-empty image id, token indices
    /// `1..=n` in order, and dependency indices that point at tokens. A
    /// head index of 0 is tolerated for the `root` relation only.
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(self.invalid("empty image_id"));
        }
        for (pos, token) in self.tokens.iter().enumerate() {
            if token.index != pos + 1 {
                return Err(self.invalid(format!(
                    "token indices must be contiguous from 1, found {} at position {}",
                    token.index,
                    pos + 1
                )));
            }
        }
        let n = self.tokens.len();
        for dep in &self.deps {
            let root_head = dep.head_index == 0 && dep.relation.eq_ignore_ascii_case("root");
            if (!root_head && !(1..=n).contains(&dep.head_index))
                || !(1..=n).contains(&dep.dependent_index)
            {
                return Err(self.invalid(format!(
                    "dependency {}({}, {}) refers to a missing token",
                    dep.relation, dep.head_index, dep.dependent_index
                )));
            }
        }
        Ok(())
    }

    fn token(&self, index: usize) -> &Token {
        &self.tokens[index - 1]
    }
}

/// A (verb, object) pair, written `"verb object"` when serialized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptKey {
    pub verb: String,
    pub object: String,
}

impl ConceptKey {
    pub fn new(verb: impl Into<String>, object: impl Into<String>) -> Self {
        ConceptKey {
            verb: verb.into(),
            object: object.into(),
        }
    }
}

impl fmt::Display for ConceptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb, self.object)
    }
}

impl FromStr for ConceptKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(verb), Some(object), None) => Ok(ConceptKey::new(verb, object)),
            _ => Err(Error::InvalidArgument(format!(
                "concept key must be \"verb object\", got {s:?}"
            ))),
        }
    }
}

impl TryFrom<String> for ConceptKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConceptKey> for String {
    fn from(key: ConceptKey) -> String {
        key.to_string()
    }
}

/// A candidate action concept and the images whose captions evidence it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub verb: String,
    pub object: String,
    pub image_ids: BTreeSet<String>,
    /// Distinct (image, sentence) evidences; at least `image_ids.len()`.
    pub count: usize,
}

impl Concept {
    pub fn key(&self) -> ConceptKey {
        ConceptKey::new(self.verb.clone(), self.object.clone())
    }
}

/// Subject words treated as human.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanLexicon {
    terms: BTreeSet<String>,
}

impl Default for HumanLexicon {
    fn default() -> Self {
        HumanLexicon {
            terms: DEFAULT_HUMAN_TERMS.iter().map(|t| t.to_string()).collect(),
        }
    }
}

impl HumanLexicon {
    pub fn from_terms<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms: BTreeSet<String> = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        if terms.is_empty() {
            return Err(Error::Empty("human lexicon"));
        }
        Ok(HumanLexicon { terms })
    }

    /// One term per line; `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_terms(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or_default())
                .filter(|l| !l.trim().is_empty()),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.terms.contains(&word.to_lowercase())
    }
}

/// Reads a line-delimited JSON corpus. Blank lines are skipped.
pub fn load_records(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Human-subject verb–object pairs of one record, ordered by verb position.
pub fn extract_vo_pairs(record: &CorpusRecord, lexicon: &HumanLexicon) -> Result<Vec<ConceptKey>> {
    record.validate()?;
    let mut found: Vec<(usize, ConceptKey)> = Vec::new();
    for dep in &record.deps {
        if dep.relation != "nsubj" || dep.head_index == 0 {
            continue;
        }
        if !lexicon.contains(&record.token(dep.dependent_index).word) {
            continue;
        }
        let head = record.token(dep.head_index);
        if !head.pos.starts_with("VB") {
            continue;
        }
        let object = record
            .deps
            .iter()
            .find(|d| {
                (d.relation == "dobj" || d.relation == "obj") && d.head_index == dep.head_index
            })
            .map(|d| record.token(d.dependent_index).word.to_lowercase())
            .unwrap_or_else(|| NO_OBJECT.to_string());
        found.push((dep.head_index, ConceptKey::new(head.word.to_lowercase(), object)));
    }
    found.sort_by_key(|(head, _)| *head);
    let mut seen = BTreeSet::new();
    Ok(found
        .into_iter()
        .filter_map(|(_, key)| seen.insert(key.clone()).then_some(key))
        .collect())
}

#[derive(Default)]
struct Evidence {
    images: BTreeSet<String>,
    sentences: BTreeSet<(String, String)>,
}

/// Aggregates evidences over the corpus and keeps concepts seen at least
/// `min_count` times. Sorted by descending count, then by key.
pub fn build_concept_table(
    records: &[CorpusRecord],
    lexicon: &HumanLexicon,
    min_count: usize,
) -> Result<Vec<Concept>> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be at least 1".into()));
    }
    let extracted: Vec<Option<Vec<ConceptKey>>> = records
        .par_iter()
        .map(|record| match extract_vo_pairs(record, lexicon) {
            Ok(pairs) => Some(pairs),
            Err(e) => {
                log::warn!("skipping record: {e}");
                None
            }
        })
        .collect();

    let mut evidence: BTreeMap<ConceptKey, Evidence> = BTreeMap::new();
    for (record, pairs) in records.iter().zip(extracted) {
        for key in pairs.into_iter().flatten() {
            let entry = evidence.entry(key).or_default();
            entry.images.insert(record.image_id.clone());
            entry
                .sentences
                .insert((record.image_id.clone(), record.sentence_id.clone()));
        }
    }

    let mut table: Vec<Concept> = evidence
        .into_iter()
        .filter(|(_, ev)| ev.sentences.len() >= min_count)
        .map(|(key, ev)| Concept {
            verb: key.verb,
            object: key.object,
            count: ev.sentences.len(),
            image_ids: ev.images,
        })
        .collect();
    sort_table(&mut table);
    Ok(table)
}

fn sort_table(table: &mut [Concept]) {
    table.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| (&a.verb, &a.object).cmp(&(&b.verb, &b.object)))
    });
}

/// Maps verbs and objects through `lemma_map` (identity for unmapped
/// tokens) and merges concepts that collide.
pub fn apply_lemmatizer(table: &[Concept], lemma_map: &HashMap<String, String>) -> Vec<Concept> {
    let lemma = |t: &str| lemma_map.get(t).cloned().unwrap_or_else(|| t.to_string());
    let mut merged: BTreeMap<ConceptKey, Concept> = BTreeMap::new();
    for concept in table {
        let key = ConceptKey::new(lemma(&concept.verb), lemma(&concept.object));
        let entry = merged.entry(key.clone()).or_insert_with(|| Concept {
            verb: key.verb,
            object: key.object,
            image_ids: BTreeSet::new(),
            count: 0,
        });
        entry.count += concept.count;
        entry.image_ids.extend(concept.image_ids.iter().cloned());
    }
    let mut out: Vec<Concept> = merged.into_values().collect();
    sort_table(&mut out);
    out
}

/// Reads a two-column `token lemma` file.
pub fn load_lemma_map(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(from), Some(to), None) => {
                map.insert(from.to_lowercase(), to.to_lowercase());
            }
            _ => {
                return Err(Error::Parse {
                    context: path.display().to_string(),
                    line: n + 1,
                    message: "expected `token lemma`".into(),
                })
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Builds a record from `(word, pos)` tokens and `(rel, head, dep)` arcs.
    pub(crate) fn record(
        image: &str,
        sentence: &str,
        tokens: &[(&str, &str)],
        deps: &[(&str, usize, usize)],
    ) -> CorpusRecord {
        CorpusRecord {
            image_id: image.into(),
            sentence_id: sentence.into(),
            tokens: tokens
                .iter()
                .enumerate()
                .map(|(i, (w, p))| Token {
                    index: i + 1,
                    word: w.to_string(),
                    pos: p.to_string(),
                })
                .collect(),
            deps: deps
                .iter()
                .map(|(r, h, d)| Dependency {
                    relation: r.to_string(),
                    head_index: *h,
                    dependent_index: *d,
                })
                .collect(),
        }
    }

    fn man_rides_horse(image: &str, sentence: &str) -> CorpusRecord {
        record(
            image,
            sentence,
            &[("a", "DT"), ("man", "NN"), ("rides", "VBZ"), ("a", "DT"), ("horse", "NN")],
            &[("det", 2, 1), ("nsubj", 3, 2), ("dobj", 3, 5), ("det", 5, 4), ("root", 0, 3)],
        )
    }

    fn evidences(key: (&str, &str), n: usize) -> Vec<CorpusRecord> {
        (0..n)
            .map(|i| {
                record(
                    &format!("img{i}"),
                    &format!("s{i}"),
                    &[("The", "DT"), ("Man", "NN"), (key.0, "VBZ"), ("a", "DT"), (key.1, "NN")],
                    &[("nsubj", 3, 2), ("dobj", 3, 5)],
                )
            })
            .collect()
    }

    #[test]
    fn transitive_pair_uses_surface_forms() {
        let pairs = extract_vo_pairs(&man_rides_horse("i", "s"), &HumanLexicon::default()).unwrap();
        assert_eq!(pairs, vec![ConceptKey::new("rides", "horse")]);
    }

    #[test]
    fn intransitive_pair_gets_none_object() {
        let r = record(
            "i",
            "s",
            &[("two", "CD"), ("men", "NNS"), ("run", "VBP")],
            &[("nummod", 2, 1), ("nsubj", 3, 2)],
        );
        let pairs = extract_vo_pairs(&r, &HumanLexicon::default()).unwrap();
        assert_eq!(pairs, vec![ConceptKey::new("run", NO_OBJECT)]);
    }

    #[test]
    fn non_human_subject_is_filtered() {
        let r = record(
            "i",
            "s",
            &[("the", "DT"), ("dog", "NN"), ("barks", "VBZ")],
            &[("nsubj", 3, 2)],
        );
        assert!(extract_vo_pairs(&r, &HumanLexicon::default()).unwrap().is_empty());
    }

    #[test]
    fn obj_relation_and_non_verb_heads() {
        let r = record(
            "i",
            "s",
            &[("she", "PRP"), ("plays", "VBZ"), ("guitar", "NN"), ("he", "PRP"), ("happy", "JJ")],
            &[("nsubj", 2, 1), ("obj", 2, 3), ("nsubj", 5, 4)],
        );
        let pairs = extract_vo_pairs(&r, &HumanLexicon::default()).unwrap();
        assert_eq!(pairs, vec![ConceptKey::new("plays", "guitar")]);
    }

    #[test]
    fn pairs_are_deduplicated_and_ordered_by_verb_position() {
        let r = record(
            "i",
            "s",
            &[
                ("man", "NN"),
                ("and", "CC"),
                ("woman", "NN"),
                ("sing", "VBP"),
                ("while", "IN"),
                ("people", "NNS"),
                ("dance", "VBP"),
            ],
            &[("nsubj", 7, 6), ("nsubj", 4, 1), ("nsubj", 4, 3)],
        );
        let pairs = extract_vo_pairs(&r, &HumanLexicon::default()).unwrap();
        assert_eq!(
            pairs,
            vec![ConceptKey::new("sing", "none"), ConceptKey::new("dance", "none")]
        );
    }

    #[test]
    fn malformed_dependency_is_a_record_error() {
        let r = record("i", "s", &[("man", "NN"), ("runs", "VBZ")], &[("nsubj", 2, 9)]);
        assert!(matches!(
            extract_vo_pairs(&r, &HumanLexicon::default()),
            Err(Error::InvalidRecord { .. })
        ));
        let mut bad = man_rides_horse("", "s");
        assert!(bad.validate().is_err());
        bad.image_id = "x".into();
        bad.tokens[2].index = 7;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn malformed_records_are_skipped_in_table() {
        let mut records = evidences(("ride", "horse"), 3);
        records.push(record("bad", "s", &[("man", "NN")], &[("nsubj", 4, 1)]));
        let table = build_concept_table(&records, &HumanLexicon::default(), 1).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].count, 3);
    }

    #[test]
    fn threshold_keeps_and_drops() {
        let mut records = evidences(("ride", "horse"), 35);
        records.extend(evidences(("take", "break"), 29));
        let table = build_concept_table(&records, &HumanLexicon::default(), 30).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!((table[0].verb.as_str(), table[0].object.as_str()), ("ride", "horse"));
        assert_eq!(table[0].count, 35);
        assert!(build_concept_table(&[], &HumanLexicon::default(), 30).unwrap().is_empty());
        assert!(build_concept_table(&records, &HumanLexicon::default(), 0).is_err());
    }

    #[test]
    fn count_is_per_sentence_and_images_are_distinct() {
        let records = vec![
            man_rides_horse("img1", "a"),
            man_rides_horse("img1", "b"),
            man_rides_horse("img1", "b"),
            man_rides_horse("img2", "a"),
        ];
        let table = build_concept_table(&records, &HumanLexicon::default(), 1).unwrap();
        assert_eq!(table[0].count, 3);
        assert_eq!(table[0].image_ids.len(), 2);
    }

    #[test]
    fn table_order_is_count_then_key() {
        let mut records = evidences(("b", "x"), 2);
        records.extend(evidences(("a", "x"), 2));
        records.extend(evidences(("c", "x"), 3));
        let table = build_concept_table(&records, &HumanLexicon::default(), 1).unwrap();
        let verbs: Vec<_> = table.iter().map(|c| c.verb.as_str()).collect();
        assert_eq!(verbs, ["c", "a", "b"]);
    }

    fn concept(verb: &str, object: &str, images: &[&str], count: usize) -> Concept {
        Concept {
            verb: verb.into(),
            object: object.into(),
            image_ids: images.iter().map(|s| s.to_string()).collect(),
            count,
        }
    }

    #[test]
    fn lemmatizer_merges_and_identity() {
        let table = vec![
            concept("ride", "horse", &["a", "b"], 25),
            concept("rides", "horse", &["b", "c"], 10),
        ];
        let map = HashMap::from([("rides".to_string(), "ride".to_string())]);
        let merged = apply_lemmatizer(&table, &map);
        assert_eq!(merged, vec![concept("ride", "horse", &["a", "b", "c"], 35)]);

        let unchanged = apply_lemmatizer(&table, &HashMap::new());
        assert_eq!(unchanged, table);

        let bikes = vec![concept("biking", "none", &["a"], 3), concept("bike", "none", &["b"], 3)];
        assert_eq!(apply_lemmatizer(&bikes, &HashMap::new()).len(), 2);
    }

    #[test]
    fn concept_key_round_trips_as_string() {
        let key = ConceptKey::new("play", "guitar");
        let json = serde_json::to_string(&key).unwrap();
        assert_eq!(json, "\"play guitar\"");
        assert_eq!(serde_json::from_str::<ConceptKey>(&json).unwrap(), key);
        assert!("one".parse::<ConceptKey>().is_err());
    }

    #[test]
    fn lexicon_is_case_insensitive() {
        let lex = HumanLexicon::from_terms(["Worker"]).unwrap();
        assert!(lex.contains("WORKER"));
        assert!(HumanLexicon::from_terms(Vec::<String>::new()).is_err());
    }

    fn arb_records() -> impl Strategy<Value = Vec<CorpusRecord>> {
        let verbs = prop::sample::select(vec!["ride", "play", "run", "jump"]);
        let objects = prop::sample::select(vec!["horse", "guitar", "ball"]);
        let subjects = prop::sample::select(vec!["man", "dog", "girl"]);
        prop::collection::vec((subjects, verbs, objects, any::<bool>(), 0u8..6), 0..40).prop_map(
            |rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (s, v, o, transitive, img))| {
                        let deps: Vec<(&str, usize, usize)> = if transitive {
                            vec![("nsubj", 2, 1), ("dobj", 2, 3)]
                        } else {
                            vec![("nsubj", 2, 1)]
                        };
                        record(
                            &format!("img{img}"),
                            &format!("s{i}"),
                            &[(s, "NN"), (v, "VBZ"), (o, "NN")],
                            &deps,
                        )
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn total_count_is_order_invariant(records in arb_records(), rot in 0usize..40) {
            let lex = HumanLexicon::default();
            let total = |rs: &[CorpusRecord]| -> usize {
                build_concept_table(rs, &lex, 1).unwrap().iter().map(|c| c.count).sum()
            };
            let mut rotated = records.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
            }
            rotated.reverse();
            prop_assert_eq!(total(&records), total(&rotated));
        }

        #[test]
        fn raising_min_count_never_adds(records in arb_records(), k in 1usize..6) {
            let lex = HumanLexicon::default();
            let low = build_concept_table(&records, &lex, k).unwrap();
            let high = build_concept_table(&records, &lex, k + 1).unwrap();
            for c in &high {
                prop_assert!(low.contains(c));
            }
            for c in &low {
                prop_assert!(c.count >= c.image_ids.len());
                prop_assert!(records.iter().any(|r| r.deps.iter().any(|d| d.relation == "nsubj"
                    && r.tokens[d.head_index - 1].word.to_lowercase() == c.verb
                    && lex.contains(&r.tokens[d.dependent_index - 1].word))));
            }
        }
    }
}
