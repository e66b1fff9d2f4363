//! Corpus ingestion and the overlap taxonomy.
//!
//! The on-disk corpus format is JSON lines, one object per sentence:
//! `{"sentText": "...", "relationMentions": [{"em1Text": "...",
//! "em2Text": "...", "label": "..."}]}`. Entities arrive as surface strings
//! and are resolved to token spans by first-occurrence subsequence match;
//! `"None"` relations are filtered out; unresolvable mentions are dropped
//! and counted.

use crate::attention::Span;
use crate::tagger::Triplet;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use thiserror::Error;

pub const DEFAULT_T_MAX: usize = 120;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: unknown relation label {label:?}")]
    UnknownRelation { line: usize, label: String },
    #[error("duplicate relation label {0:?}")]
    DuplicateRelation(String),
    #[error("unknown relation label {0:?}")]
    UnknownLabel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluation inputs disagree on sentence ids at position {0}")]
    MisalignedIds(usize),
}

/// Dense label↔id bijection for the relation set.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSchema {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl RelationSchema {
    pub fn new(labels: Vec<String>) -> Result<Self, DataError> {
        let mut index = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(DataError::DuplicateRelation(l.clone()));
            }
        }
        Ok(RelationSchema { labels, index })
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn add(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    /// Schema file format: `{"relations": ["a", "b", ...]}`.
    pub fn from_json(reader: impl std::io::Read) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        struct File {
            relations: Vec<String>,
        }
        let f: File = serde_json::from_reader(reader).map_err(|source| DataError::Json { line: 1, source })?;
        RelationSchema::new(f.relations)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct File<'a> {
            relations: &'a [String],
        }
        serde_json::to_string(&File { relations: &self.labels }).expect("schema serializes")
    }
}

/// One gold mention with its relation still as a label string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTriplet {
    pub subject: Span,
    pub label: String,
    pub object: Span,
}

/// A tokenized sentence plus its gold triplets; the raw text is retained for
/// audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    pub tokens: Vec<String>,
    pub triplets: Vec<GoldTriplet>,
    pub source: String,
}

impl AnnotatedExample {
    /// Gold triplets with relation ids under `schema`.
    pub fn resolve(&self, schema: &RelationSchema) -> Result<Vec<Triplet>, DataError> {
        self.triplets
            .iter()
            .map(|g| {
                let relation = schema
                    .id(&g.label)
                    .ok_or_else(|| DataError::UnknownLabel(g.label.clone()))?;
                Ok(Triplet {
                    subject: g.subject,
                    relation,
                    object: g.object,
                })
            })
            .collect()
    }
}

/// Whitespace tokenization with every non-alphanumeric character split off
/// as its own token ("IBM's" → ["IBM", "'", "s"]); keeps fixtures stable.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// First occurrence of `needle` as a contiguous token subsequence.
pub fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<Span> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    for start in 0..=(haystack.len() - needle.len()) {
        if haystack[start..start + needle.len()] == *needle {
            return Some(Span::new(start, start + needle.len() - 1));
        }
    }
    None
}

#[derive(Debug, Deserialize, Serialize)]
pub struct RawMention {
    #[serde(rename = "em1Text")]
    pub em1_text: String,
    #[serde(rename = "em2Text")]
    pub em2_text: String,
    pub label: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct RawSentence {
    #[serde(rename = "sentText")]
    pub sent_text: String,
    #[serde(rename = "relationMentions")]
    pub relation_mentions: Vec<RawMention>,
}

/// Ingestion counters; non-zero drop counts are reported, never silent.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub lines: usize,
    pub sentences: usize,
    pub triplets: usize,
    pub dropped_none: usize,
    pub dropped_unlocatable: usize,
    pub dropped_duplicates: usize,
    pub rejected_subject_overlap: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub t_max: usize,
    /// extend the schema with unseen labels instead of erroring
    pub auto_extend: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            t_max: DEFAULT_T_MAX,
            auto_extend: false,
        }
    }
}

/// Loads a JSON-lines corpus against a relation schema.
///
/// Sentences whose gold subject spans nest or cross are rejected whole (the
/// subject tag encoding cannot represent them) and counted.
pub fn load_corpus(
    reader: impl std::io::Read,
    schema: &mut RelationSchema,
    opts: LoadOptions,
) -> Result<(Vec<AnnotatedExample>, LoadStats), DataError> {
    let mut stats = LoadStats::default();
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let raw: RawSentence =
            serde_json::from_str(&line).map_err(|source| DataError::Json { line: lineno + 1, source })?;
        let mut tokens = tokenize(&raw.sent_text);
        if tokens.len() > opts.t_max {
            tokens.truncate(opts.t_max);
            stats.truncated += 1;
        }
        let mut triplets = Vec::new();
        let mut seen: BTreeSet<(Span, String, Span)> = BTreeSet::new();
        for m in &raw.relation_mentions {
            if m.label == "None" {
                stats.dropped_none += 1;
                continue;
            }
            if schema.id(&m.label).is_none() {
                if opts.auto_extend {
                    schema.add(&m.label);
                } else {
                    return Err(DataError::UnknownRelation {
                        line: lineno + 1,
                        label: m.label.clone(),
                    });
                }
            }
            let em1 = tokenize(&m.em1_text);
            let em2 = tokenize(&m.em2_text);
            let (subject, object) = match (
                find_subsequence(&tokens, &em1),
                find_subsequence(&tokens, &em2),
            ) {
                (Some(s), Some(o)) => (s, o),
                _ => {
                    stats.dropped_unlocatable += 1;
                    continue;
                }
            };
            if !seen.insert((subject, m.label.clone(), object)) {
                stats.dropped_duplicates += 1;
                continue;
            }
            triplets.push(GoldTriplet {
                subject,
                label: m.label.clone(),
                object,
            });
        }

        let subjects: BTreeSet<Span> = triplets.iter().map(|t| t.subject).collect();
        let subjects: Vec<Span> = subjects.into_iter().collect();
        let conflict = subjects
            .iter()
            .enumerate()
            .any(|(i, a)| subjects[i + 1..].iter().any(|b| a.nests_or_crosses(b)));
        if conflict {
            stats.rejected_subject_overlap += 1;
            continue;
        }

        stats.sentences += 1;
        stats.triplets += triplets.len();
        out.push(AnnotatedExample {
            tokens,
            triplets,
            source: raw.sent_text,
        });
    }
    Ok((out, stats))
}

/// Serializes examples back to the JSON-lines corpus format.
pub fn to_jsonl(examples: &[AnnotatedExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let raw = RawSentence {
            sent_text: ex.tokens.join(" "),
            relation_mentions: ex
                .triplets
                .iter()
                .map(|t| RawMention {
                    em1_text: ex.tokens[t.subject.start..=t.subject.end].join(" "),
                    em2_text: ex.tokens[t.object.start..=t.object.end].join(" "),
                    label: t.label.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

/// Triplet overlap categories; EPO takes precedence over SEO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum OverlapCategory {
    Normal,
    Seo,
    Epo,
}

impl std::fmt::Display for OverlapCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OverlapCategory::Normal => write!(f, "Normal"),
            OverlapCategory::Seo => write!(f, "SEO"),
            OverlapCategory::Epo => write!(f, "EPO"),
        }
    }
}

fn unordered_pair(t: &Triplet) -> (Span, Span) {
    if t.subject <= t.object {
        (t.subject, t.object)
    } else {
        (t.object, t.subject)
    }
}

/// Categorizes every triplet of one sentence.
///
/// EPO: shares its unordered entity pair with another triplet. SEO: shares
/// at least one entity span but not the pair. Normal: shares nothing.
pub fn categorize_overlap(triplets: &[Triplet]) -> Vec<OverlapCategory> {
    triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let pair = unordered_pair(t);
            let mut epo = false;
            let mut shared = false;
            for (j, other) in triplets.iter().enumerate() {
                if i == j {
                    continue;
                }
                if unordered_pair(other) == pair {
                    epo = true;
                    break;
                }
                for e in [t.subject, t.object] {
                    if e == other.subject || e == other.object {
                        shared = true;
                    }
                }
            }
            if epo {
                OverlapCategory::Epo
            } else if shared {
                OverlapCategory::Seo
            } else {
                OverlapCategory::Normal
            }
        })
        .collect()
}

/// Corpus statistics in the relations/sentences/Normal/SEO/EPO layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub relations: usize,
    pub sentences: usize,
    pub normal: usize,
    pub seo: usize,
    pub epo: usize,
}

pub fn corpus_stats(
    corpus: &[AnnotatedExample],
    schema: &RelationSchema,
) -> Result<CorpusStats, DataError> {
    let mut stats = CorpusStats {
        relations: schema.len(),
        sentences: corpus.len(),
        normal: 0,
        seo: 0,
        epo: 0,
    };
    for ex in corpus {
        let triplets = ex.resolve(schema)?;
        for cat in categorize_overlap(&triplets) {
            match cat {
                OverlapCategory::Normal => stats.normal += 1,
                OverlapCategory::Seo => stats.seo += 1,
                OverlapCategory::Epo => stats.epo += 1,
            }
        }
    }
    Ok(stats)
}

impl CorpusStats {
    /// Aligned text table, one statistic per row.
    pub fn to_table(&self) -> String {
        let rows = [
            ("# Relations", self.relations),
            ("# Sentences", self.sentences),
            ("# Normal", self.normal),
            ("# SEO", self.seo),
            ("# EPO", self.epo),
        ];
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(n, v)| format!("{:<width$}  {}", n, v, width = width))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    fn triplet(s: (usize, usize), r: usize, o: (usize, usize)) -> Triplet {
        Triplet {
            subject: span(s.0, s.1),
            relation: r,
            object: span(o.0, o.1),
        }
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("IBM's unit, Informix."),
            vec!["IBM", "'", "s", "unit", ",", "Informix", "."]
        );
        assert_eq!(tokenize("  a  b "), vec!["a", "b"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn none_relations_are_filtered() {
        let jsonl = r#"{"sentText": "acme bought orion .", "relationMentions": [
            {"em1Text": "acme", "em2Text": "orion", "label": "None"},
            {"em1Text": "acme", "em2Text": "orion", "label": "owns"}]}"#
            .replace('\n', " ");
        let mut schema = RelationSchema::new(vec!["owns".into()]).unwrap();
        let (corpus, stats) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        assert_eq!(corpus[0].triplets.len(), 1);
        assert_eq!(stats.dropped_none, 1);
        assert_eq!(stats.triplets, 1);
    }

    #[test]
    fn unlocatable_entities_are_dropped_and_counted() {
        let jsonl = r#"{"sentText": "acme bought orion .", "relationMentions": [{"em1Text": "ghost", "em2Text": "orion", "label": "owns"}]}"#;
        let mut schema = RelationSchema::new(vec!["owns".into()]).unwrap();
        let (corpus, stats) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        assert!(corpus[0].triplets.is_empty());
        assert_eq!(stats.dropped_unlocatable, 1);
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let jsonl = "{\"sentText\": \"ok\", \"relationMentions\": []}\nnot json\n";
        let mut schema = RelationSchema::new(vec![]).unwrap();
        let err = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap_err();
        match err {
            DataError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn unknown_relation_errors_unless_auto_extend() {
        let jsonl = r#"{"sentText": "acme bought orion", "relationMentions": [{"em1Text": "acme", "em2Text": "orion", "label": "mystery"}]}"#;
        let mut schema = RelationSchema::new(vec!["owns".into()]).unwrap();
        assert!(matches!(
            load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()),
            Err(DataError::UnknownRelation { .. })
        ));
        let mut schema = RelationSchema::new(vec!["owns".into()]).unwrap();
        let opts = LoadOptions {
            auto_extend: true,
            ..LoadOptions::default()
        };
        let (corpus, _) = load_corpus(jsonl.as_bytes(), &mut schema, opts).unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(corpus[0].triplets[0].label, "mystery");
    }

    #[test]
    fn spans_resolve_to_first_occurrence() {
        let jsonl = r#"{"sentText": "orion met acme and orion left", "relationMentions": [{"em1Text": "acme", "em2Text": "orion", "label": "met"}]}"#;
        let mut schema = RelationSchema::new(vec!["met".into()]).unwrap();
        let (corpus, _) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        let g = &corpus[0].triplets[0];
        assert_eq!(g.subject, span(2, 2));
        assert_eq!(g.object, span(0, 0)); // first occurrence, not the later one
    }

    #[test]
    fn multiword_fixture_spans_match_hand_annotation() {
        let jsonl = concat!(
            r#"{"sentText": "the acme holding group bought orion labs .", "relationMentions": [{"em1Text": "acme holding group", "em2Text": "orion labs", "label": "owns"}]}"#,
            "\n",
            r#"{"sentText": "vega corp , a unit of acme holding group , won .", "relationMentions": [{"em1Text": "acme holding group", "em2Text": "vega corp", "label": "parent_of"}]}"#,
        );
        let mut schema = RelationSchema::new(vec!["owns".into(), "parent_of".into()]).unwrap();
        let (corpus, stats) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        assert_eq!(stats.sentences, 2);
        assert_eq!(corpus[0].triplets[0].subject, span(1, 3));
        assert_eq!(corpus[0].triplets[0].object, span(5, 6));
        assert_eq!(corpus[1].triplets[0].subject, span(6, 8));
        assert_eq!(corpus[1].triplets[0].object, span(0, 1));
    }

    #[test]
    fn nesting_subjects_reject_the_sentence() {
        // "acme holding" and "acme" both as subjects nest
        let jsonl = r#"{"sentText": "acme holding bought orion and vega", "relationMentions": [
            {"em1Text": "acme holding", "em2Text": "orion", "label": "owns"},
            {"em1Text": "acme", "em2Text": "vega", "label": "owns"}]}"#
            .replace('\n', " ");
        let mut schema = RelationSchema::new(vec!["owns".into()]).unwrap();
        let (corpus, stats) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        assert!(corpus.is_empty());
        assert_eq!(stats.rejected_subject_overlap, 1);
    }

    #[test]
    fn single_triplet_is_normal() {
        let cats = categorize_overlap(&[triplet((0, 0), 0, (2, 2))]);
        assert_eq!(cats, vec![OverlapCategory::Normal]);
    }

    #[test]
    fn one_shared_entity_is_seo_for_both() {
        let cats = categorize_overlap(&[
            triplet((0, 0), 0, (2, 2)),
            triplet((0, 0), 1, (4, 5)),
        ]);
        assert_eq!(cats, vec![OverlapCategory::Seo, OverlapCategory::Seo]);
    }

    #[test]
    fn same_entity_pair_is_epo_even_when_relations_differ() {
        let cats = categorize_overlap(&[
            triplet((0, 0), 0, (6, 6)),
            triplet((0, 0), 1, (6, 6)),
        ]);
        assert_eq!(cats, vec![OverlapCategory::Epo, OverlapCategory::Epo]);
    }

    #[test]
    fn reversed_pair_counts_as_epo() {
        let cats = categorize_overlap(&[
            triplet((0, 0), 0, (2, 2)),
            triplet((2, 2), 0, (0, 0)),
        ]);
        assert_eq!(cats, vec![OverlapCategory::Epo, OverlapCategory::Epo]);
    }

    #[test]
    fn categorization_is_order_independent() {
        let triplets = vec![
            triplet((0, 0), 0, (2, 2)),
            triplet((0, 0), 1, (2, 2)),
            triplet((4, 4), 0, (6, 6)),
            triplet((6, 6), 1, (8, 8)),
        ];
        let base: BTreeMap<Triplet, OverlapCategory> = triplets
            .iter()
            .copied()
            .zip(categorize_overlap(&triplets))
            .collect();
        let mut reordered = triplets.clone();
        reordered.reverse();
        let got: BTreeMap<Triplet, OverlapCategory> = reordered
            .iter()
            .copied()
            .zip(categorize_overlap(&reordered))
            .collect();
        assert_eq!(base, got);
    }

    #[test]
    fn stats_on_the_three_sentence_fixture() {
        // 1 relation; sentence 1 Normal, sentence 2 an SEO pair, sentence 3
        // a reversed-pair EPO pair -> (1, 3, 1, 2, 2)
        let jsonl = concat!(
            r#"{"sentText": "acme runs orion", "relationMentions": [{"em1Text": "acme", "em2Text": "orion", "label": "linked_to"}]}"#,
            "\n",
            r#"{"sentText": "acme runs orion and orion runs vega", "relationMentions": [{"em1Text": "acme", "em2Text": "orion", "label": "linked_to"}, {"em1Text": "orion", "em2Text": "vega", "label": "linked_to"}]}"#,
            "\n",
            r#"{"sentText": "acme and orion run each other", "relationMentions": [{"em1Text": "acme", "em2Text": "orion", "label": "linked_to"}, {"em1Text": "orion", "em2Text": "acme", "label": "linked_to"}]}"#,
        );
        let mut schema = RelationSchema::new(vec!["linked_to".into()]).unwrap();
        let (corpus, _) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        let stats = corpus_stats(&corpus, &schema).unwrap();
        assert_eq!(
            stats,
            CorpusStats {
                relations: 1,
                sentences: 3,
                normal: 1,
                seo: 2,
                epo: 2,
            }
        );
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let schema = RelationSchema::new(vec!["a".into(), "b".into()]).unwrap();
        let stats = corpus_stats(&[], &schema).unwrap();
        assert_eq!(stats.sentences, 0);
        assert_eq!(stats.normal + stats.seo + stats.epo, 0);
        assert_eq!(stats.relations, 2);
    }

    #[test]
    fn jsonl_round_trip_preserves_examples() {
        let jsonl = r#"{"sentText": "acme holding bought orion labs .", "relationMentions": [{"em1Text": "acme holding", "em2Text": "orion labs", "label": "owns"}]}"#;
        let mut schema = RelationSchema::new(vec!["owns".into()]).unwrap();
        let (corpus, _) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        let written = to_jsonl(&corpus);
        let (back, _) = load_corpus(written.as_bytes(), &mut schema, LoadOptions::default()).unwrap();
        assert_eq!(corpus, back);
    }
}
