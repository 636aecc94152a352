//! Item ingestion and the per-query corpus structures built from it.
//!
//! Items arrive as JSONL, one record per line. A [`QueryCollection`] keeps
//! the items of each source platform in a separate list; every later stage
//! works on those lists, the [`Vocabulary`] built from their text, and the
//! [`HashtagProfile`]s extracted from their annotations.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Default minimum corpus frequency for a token to enter the vocabulary.
pub const DEFAULT_MIN_FREQ: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no valid item records in {input} ({invalid} invalid lines)")]
    AllRecordsInvalid { input: String, invalid: usize },
    #[error("no token survived vocabulary filtering")]
    EmptyVocabulary,
}

/// A rejected input line. Collected during ingestion, never fatal on its own.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SchemaViolation {
    pub line: usize,
    pub message: String,
}

/// Source platform of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Twitter,
    Flickr,
    #[serde(rename = "youtube")]
    YouTube,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Twitter, Source::Flickr, Source::YouTube];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Twitter => "twitter",
            Source::Flickr => "flickr",
            Source::YouTube => "youtube",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Source::Twitter => 0,
            Source::Flickr => 1,
            Source::YouTube => 2,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "twitter" => Ok(Source::Twitter),
            "flickr" => Ok(Source::Flickr),
            "youtube" => Ok(Source::YouTube),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

/// Attached media, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Media {
    Image { width: u32, height: u32 },
    Video { duration: f64 },
}

/// One social post.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub source: Source,
    pub text: String,
    /// Normalized hashtags, see [`normalize_hashtag`].
    pub hashtags: Vec<String>,
    pub timestamp: u64,
    pub comments: u64,
    pub endorsements: u64,
    pub media: Option<Media>,
    /// Collected by following a hashtag rather than returned by the query
    /// itself. Extended items are modeled but not counted for cluster ranking.
    pub extended: bool,
}

impl Item {
    /// Builds an item, normalizing and deduplicating `hashtags`.
    pub fn new<I, S>(id: impl Into<String>, source: Source, text: impl Into<String>, hashtags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Item {
            id: id.into(),
            source,
            text: text.into(),
            hashtags: normalize_hashtags(hashtags),
            timestamp: 0,
            comments: 0,
            endorsements: 0,
            media: None,
            extended: false,
        }
    }

    pub fn with_timestamp(mut self, timestamp: u64) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// Lowercase, strip leading `#`, Unicode NFC. Returns `None` for an empty tag.
pub fn normalize_hashtag(raw: &str) -> Option<String> {
    let trimmed = raw.trim().trim_start_matches('#');
    let tag: String = trimmed.to_lowercase().nfc().collect();
    if tag.is_empty() {
        None
    } else {
        Some(tag)
    }
}

fn normalize_hashtags<I, S>(raw: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    raw.into_iter()
        .filter_map(|t| normalize_hashtag(t.as_ref()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// On-disk form of an [`Item`].
#[derive(Debug, Serialize, Deserialize)]
struct ItemRecord {
    id: String,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing)]
    title: Option<String>,
    #[serde(default, skip_serializing)]
    description: Option<String>,
    hashtags: Vec<String>,
    timestamp: i64,
    comments: i64,
    endorsements: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    extended: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl ItemRecord {
    fn into_item(self) -> Result<Item, String> {
        let source: Source = self.source.parse()?;
        // Flickr and YouTube exports may carry title/description instead of text.
        let text = match self.text {
            Some(t) => t,
            None => {
                let parts: Vec<&str> = [self.title.as_deref(), self.description.as_deref()]
                    .into_iter()
                    .flatten()
                    .filter(|s| !s.is_empty())
                    .collect();
                if parts.is_empty() {
                    return Err("missing field `text`".into());
                }
                parts.join(" ")
            }
        };
        let non_negative = |name: &str, v: i64| -> Result<u64, String> {
            u64::try_from(v).map_err(|_| format!("`{name}` must be non-negative, got {v}"))
        };
        let media = match (self.width, self.height, self.duration) {
            (None, None, None) => None,
            (Some(width), Some(height), None) => Some(Media::Image { width, height }),
            (None, None, Some(duration)) if duration.is_finite() && duration >= 0.0 => {
                Some(Media::Video { duration })
            }
            (None, None, Some(d)) => return Err(format!("invalid duration {d}")),
            _ => return Err("media needs both `width` and `height`, or only `duration`".into()),
        };
        Ok(Item {
            id: self.id,
            source,
            text,
            hashtags: normalize_hashtags(&self.hashtags),
            timestamp: non_negative("timestamp", self.timestamp)?,
            comments: non_negative("comments", self.comments)?,
            endorsements: non_negative("endorsements", self.endorsements)?,
            media,
            extended: self.extended,
        })
    }

    fn from_item(item: &Item) -> Self {
        let (width, height, duration) = match item.media {
            None => (None, None, None),
            Some(Media::Image { width, height }) => (Some(width), Some(height), None),
            Some(Media::Video { duration }) => (None, None, Some(duration)),
        };
        ItemRecord {
            id: item.id.clone(),
            source: item.source.as_str().to_string(),
            text: Some(item.text.clone()),
            title: None,
            description: None,
            hashtags: item.hashtags.clone(),
            timestamp: item.timestamp as i64,
            comments: item.comments as i64,
            endorsements: item.endorsements as i64,
            width,
            height,
            duration,
            extended: item.extended,
        }
    }
}

/// Items returned for one query, split by source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryCollection {
    pub query: String,
    lists: [Vec<Item>; 3],
}

impl QueryCollection {
    /// Routes each item into the list of its own source, preserving input order.
    pub fn from_items(query: impl Into<String>, items: impl IntoIterator<Item = Item>) -> Self {
        let mut lists: [Vec<Item>; 3] = Default::default();
        for item in items {
            lists[item.source.index()].push(item);
        }
        QueryCollection {
            query: query.into(),
            lists,
        }
    }

    pub fn items(&self, source: Source) -> &[Item] {
        &self.lists[source.index()]
    }

    /// All items, Twitter first, then Flickr, then YouTube.
    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.lists.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of [`ingest`]: the collection plus every rejected line.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub collection: QueryCollection,
    pub violations: Vec<SchemaViolation>,
}

/// Reads a JSONL item file. The query name defaults to the file stem.
pub fn ingest(path: &Path) -> Result<Ingested, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let query = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_jsonl(BufReader::new(file), &query).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        CorpusError::AllRecordsInvalid { invalid, .. } => CorpusError::AllRecordsInvalid {
            input: path.display().to_string(),
            invalid,
        },
        other => other,
    })
}

/// Parses JSONL from any reader. Blank lines are ignored.
pub fn read_jsonl<R: BufRead>(reader: R, query: &str) -> Result<Ingested, CorpusError> {
    let mut items = Vec::new();
    let mut violations = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ItemRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(ItemRecord::into_item);
        match parsed {
            Ok(item) => items.push(item),
            Err(message) => violations.push(SchemaViolation {
                line: idx + 1,
                message,
            }),
        }
    }
    if items.is_empty() {
        return Err(CorpusError::AllRecordsInvalid {
            input: query.to_string(),
            invalid: violations.len(),
        });
    }
    for v in &violations {
        log::warn!("skipping record: {v}");
    }
    Ok(Ingested {
        collection: QueryCollection::from_items(query, items),
        violations,
    })
}

/// Writes items in the ingest format, one per line.
pub fn write_jsonl<'a, W: Write>(mut out: W, items: impl IntoIterator<Item = &'a Item>) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &ItemRecord::from_item(item))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits text on anything that is not alphanumeric, lowercases, and drops
/// stopwords.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
    pub min_freq: usize,
}

impl Tokenizer {
    pub fn new(stopwords: impl IntoIterator<Item = String>, min_freq: usize) -> Self {
        Tokenizer {
            stopwords: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            min_freq,
        }
    }

    /// Tokenizer with the bundled English stopword list.
    pub fn english(min_freq: usize) -> Self {
        Self::new(parse_stopwords(ENGLISH_STOPWORDS), min_freq)
    }

    /// Stopwords from a UTF-8 file, one word per line.
    pub fn from_stopword_file(path: &Path, min_freq: usize) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| {
            if source.kind() == io::ErrorKind::NotFound {
                CorpusError::FileNotFound(path.to_path_buf())
            } else {
                CorpusError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        Ok(Self::new(parse_stopwords(&text), min_freq))
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        let lowered: String = text.nfc().collect::<String>().to_lowercase();
        lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !self.stopwords.contains(*t))
            .map(str::to_string)
            .collect()
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::english(DEFAULT_MIN_FREQ)
    }
}

fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Ordered set of unique words with a reverse index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorts and deduplicates `words`.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let words: Vec<String> = set.into_iter().collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    /// Union of several vocabularies, lexicographically ordered.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a Vocabulary>) -> Self {
        Self::from_words(parts.into_iter().flat_map(|v| v.words.iter().cloned()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Token indices of `text`, dropping out-of-vocabulary tokens.
    pub fn encode(&self, text: &str, tokenizer: &Tokenizer) -> Vec<usize> {
        tokenizer
            .tokens(text)
            .iter()
            .filter_map(|t| self.get(t))
            .collect()
    }
}

/// Vocabulary of all tokens occurring at least `tokenizer.min_freq` times.
pub fn build_vocabulary(items: &[Item], tokenizer: &Tokenizer) -> Result<Vocabulary, CorpusError> {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for item in items {
        for tok in tokenizer.tokens(&item.text) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let min = tokenizer.min_freq.max(1);
    let vocab = Vocabulary::from_words(freq.into_iter().filter(|(_, n)| *n >= min).map(|(w, _)| w));
    if vocab.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid topic distribution for hashtag `{tag}`: {reason}")]
pub struct InvalidDistribution {
    pub tag: String,
    pub reason: String,
}

/// A hashtag on one source together with the items it annotates.
#[derive(Debug, Clone, PartialEq)]
pub struct HashtagProfile {
    pub tag: String,
    pub source: Source,
    pub item_ids: BTreeSet<String>,
    topic_dist: Option<Vec<f64>>,
}

impl HashtagProfile {
    pub fn new(tag: impl Into<String>, source: Source, item_ids: BTreeSet<String>) -> Self {
        HashtagProfile {
            tag: tag.into(),
            source,
            item_ids,
            topic_dist: None,
        }
    }

    /// `source:tag`, unique across a query.
    pub fn key(&self) -> String {
        format!("{}:{}", self.source, self.tag)
    }

    pub fn topic_dist(&self) -> Option<&[f64]> {
        self.topic_dist.as_deref()
    }

    pub fn set_topic_dist(&mut self, dist: Vec<f64>) -> Result<(), InvalidDistribution> {
        let bad = |reason: String| InvalidDistribution {
            tag: self.tag.clone(),
            reason,
        };
        if let Some(x) = dist.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(bad(format!("entry {x} is not a non-negative number")));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad(format!("sums to {total}")));
        }
        self.topic_dist = Some(dist);
        Ok(())
    }
}

/// One profile per (source, tag) pair, ordered by source then tag.
pub fn extract_hashtag_profiles(qc: &QueryCollection) -> Vec<HashtagProfile> {
    let mut by_key: BTreeMap<(Source, &str), BTreeSet<String>> = BTreeMap::new();
    for item in qc.iter() {
        for tag in &item.hashtags {
            by_key
                .entry((item.source, tag.as_str()))
                .or_default()
                .insert(item.id.clone());
        }
    }
    by_key
        .into_iter()
        .map(|((source, tag), ids)| HashtagProfile::new(tag, source, ids))
        .collect()
}

/// Symmetric hashtag co-occurrence counts with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    n: usize,
    counts: Vec<u32>,
}

impl CooccurrenceMatrix {
    pub fn zeros(n: usize) -> Self {
        CooccurrenceMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n + j]
    }

    /// Adds one co-occurrence of `i` and `j` to both triangle halves.
    pub fn add_pair(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.counts[i * self.n + j] += 1;
        self.counts[j * self.n + i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| f64::from(self.get(i, j)))
    }
}

/// `O[i][j]` = number of items annotated with both profile `i` and profile `j`.
///
/// Items whose tags are not covered by `profiles` contribute nothing for those tags.
pub fn build_cooccurrence(profiles: &[HashtagProfile], qc: &QueryCollection) -> CooccurrenceMatrix {
    let position: HashMap<(Source, &str), usize> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.source, p.tag.as_str()), i))
        .collect();
    let mut matrix = CooccurrenceMatrix::zeros(profiles.len());
    for item in qc.iter() {
        let idx: Vec<usize> = item
            .hashtags
            .iter()
            .filter_map(|t| position.get(&(item.source, t.as_str())).copied())
            .collect();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                matrix.add_pair(i, j);
            }
        }
    }
    matrix
}

/// Descriptive statistics of one source's items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceStats {
    pub source: Source,
    pub items: usize,
    /// Mean width × height over items with an image.
    pub mean_resolution: Option<f64>,
    /// Mean duration in seconds over items with a video.
    pub mean_duration: Option<f64>,
    pub hashtag_fraction: f64,
    pub unique_hashtags: usize,
    pub mean_comments: f64,
    pub mean_endorsements: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub query: String,
    pub sources: Vec<SourceStats>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn corpus_stats(qc: &QueryCollection) -> CorpusStats {
    let sources = Source::ALL
        .iter()
        .map(|&source| {
            let items = qc.items(source);
            let resolution = items.iter().filter_map(|it| match it.media {
                Some(Media::Image { width, height }) => Some(f64::from(width) * f64::from(height)),
                _ => None,
            });
            let duration = items.iter().filter_map(|it| match it.media {
                Some(Media::Video { duration }) => Some(duration),
                _ => None,
            });
            let tagged = items.iter().filter(|it| !it.hashtags.is_empty()).count();
            let unique: BTreeSet<&str> = items
                .iter()
                .flat_map(|it| it.hashtags.iter().map(String::as_str))
                .collect();
            SourceStats {
                source,
                items: items.len(),
                mean_resolution: mean(resolution),
                mean_duration: mean(duration),
                hashtag_fraction: if items.is_empty() {
                    0.0
                } else {
                    tagged as f64 / items.len() as f64
                },
                unique_hashtags: unique.len(),
                mean_comments: mean(items.iter().map(|it| it.comments as f64)).unwrap_or(0.0),
                mean_endorsements: mean(items.iter().map(|it| it.endorsements as f64)).unwrap_or(0.0),
            }
        })
        .collect();
    CorpusStats {
        query: qc.query.clone(),
        sources,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Ingested, CorpusError> {
        read_jsonl(text.as_bytes(), "q")
    }

    const THREE: &str = r##"{"id":"t1","source":"twitter","text":"hello","hashtags":["#A"],"timestamp":1,"comments":0,"endorsements":2}
{"id":"f1","source":"flickr","text":"pic","hashtags":[],"timestamp":2,"comments":1,"endorsements":0,"width":10,"height":20}
{"id":"y1","source":"youtube","text":"vid","hashtags":["b"],"timestamp":3,"comments":4,"endorsements":5,"duration":61.5}
"##;

    #[test]
    fn one_item_per_source() {
        let qc = parse(THREE).unwrap().collection;
        for s in Source::ALL {
            assert_eq!(qc.items(s).len(), 1);
        }
        assert_eq!(qc.items(Source::Twitter)[0].hashtags, vec!["a"]);
        assert_eq!(qc.items(Source::Flickr)[0].media, Some(Media::Image { width: 10, height: 20 }));
    }

    #[test]
    fn empty_input_is_all_invalid() {
        assert!(matches!(parse(""), Err(CorpusError::AllRecordsInvalid { invalid: 0, .. })));
    }

    #[test]
    fn missing_hashtags_line_is_skipped() {
        let text = format!(
            "{THREE}{}\n",
            r#"{"id":"x","source":"twitter","text":"t","timestamp":1,"comments":0,"endorsements":0}"#
        );
        let ing = parse(&text).unwrap();
        assert_eq!(ing.collection.len(), 3);
        assert_eq!(ing.violations.len(), 1);
        assert_eq!(ing.violations[0].line, 4);
        assert!(ing.violations[0].message.contains("hashtags"));
    }

    #[test]
    fn negative_counts_and_bad_source_rejected() {
        let text = r#"{"id":"x","source":"twitter","text":"t","hashtags":[],"timestamp":-1,"comments":0,"endorsements":0}
{"id":"y","source":"myspace","text":"t","hashtags":[],"timestamp":1,"comments":0,"endorsements":0}
{"id":"z","source":"flickr","text":"t","hashtags":[],"timestamp":1,"comments":0,"endorsements":0,"width":3}
"#;
        assert!(matches!(parse(text), Err(CorpusError::AllRecordsInvalid { invalid: 3, .. })));
    }

    #[test]
    fn title_and_description_form_the_text() {
        let text = r#"{"id":"f","source":"flickr","title":"Sunset","description":"over the bay","hashtags":[],"timestamp":1,"comments":0,"endorsements":0}"#;
        let qc = parse(text).unwrap().collection;
        assert_eq!(qc.items(Source::Flickr)[0].text, "Sunset over the bay");
    }

    #[test]
    fn missing_file() {
        let err = ingest(Path::new("/definitely/not/here.jsonl")).unwrap_err();
        assert!(matches!(err, CorpusError::FileNotFound(_)));
    }

    #[test]
    fn hashtag_normalization() {
        assert_eq!(normalize_hashtag("#Trump2016").as_deref(), Some("trump2016"));
        assert_eq!(normalize_hashtag("#"), None);
        // Decomposed e + combining acute composes to a single code point.
        assert_eq!(normalize_hashtag("#Cafe\u{301}").as_deref(), Some("caf\u{e9}"));
        let item = Item::new("1", Source::Twitter, "", ["#A", "a", "#B"]);
        assert_eq!(item.hashtags, vec!["a", "b"]);
    }

    fn texts(texts: &[&str]) -> Vec<Item> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Item::new(i.to_string(), Source::Twitter, *t, Vec::<&str>::new()))
            .collect()
    }

    #[test]
    fn vocabulary_frequency_filter() {
        let items = texts(&["Trump rally", "rally live"]);
        let v1 = build_vocabulary(&items, &Tokenizer::english(1)).unwrap();
        assert_eq!(v1.words(), ["live", "rally", "trump"]);
        let v2 = build_vocabulary(&items, &Tokenizer::english(2)).unwrap();
        assert_eq!(v2.words(), ["rally"]);
        assert_eq!(v2.get("rally"), Some(0));
    }

    #[test]
    fn all_stopwords_is_empty_vocabulary() {
        let items = texts(&["the and of", "it is what it is"]);
        assert!(matches!(
            build_vocabulary(&items, &Tokenizer::english(1)),
            Err(CorpusError::EmptyVocabulary)
        ));
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        let tok = Tokenizer::english(1);
        assert_eq!(tok.tokens("Don't STOP: #Rally, now!"), vec!["stop", "rally", "now"]);
    }

    #[test]
    fn profiles_per_source() {
        let qc = QueryCollection::from_items(
            "q",
            [
                Item::new("1", Source::Twitter, "x", ["a", "b"]),
                Item::new("2", Source::Flickr, "x", ["a"]),
            ],
        );
        let profiles = extract_hashtag_profiles(&qc);
        let keys: Vec<String> = profiles.iter().map(HashtagProfile::key).collect();
        assert_eq!(keys, ["twitter:a", "twitter:b", "flickr:a"]);
        assert!(profiles[..2].iter().all(|p| p.item_ids == BTreeSet::from(["1".to_string()])));
    }

    #[test]
    fn profile_counts_match_tally() {
        let tags = ["a", "b", "c", "d"];
        let items: Vec<Item> = (0..10)
            .map(|i| {
                let chosen: Vec<&str> = tags.iter().enumerate().filter(|(k, _)| (i * 7 + k * 3) % 4 < 2).map(|(_, t)| *t).collect();
                Item::new(i.to_string(), Source::Twitter, "x", chosen)
            })
            .collect();
        let qc = QueryCollection::from_items("q", items.clone());
        let profiles = extract_hashtag_profiles(&qc);
        for tag in tags {
            let expected = items.iter().filter(|it| it.hashtags.iter().any(|t| t == tag)).count();
            let got = profiles.iter().find(|p| p.tag == tag).map_or(0, |p| p.item_ids.len());
            assert_eq!(got, expected, "tag {tag}");
        }
    }

    #[test]
    fn cooccurrence_triple() {
        let qc = QueryCollection::from_items("q", [Item::new("1", Source::Twitter, "x", ["a", "b", "c"])]);
        let profiles = extract_hashtag_profiles(&qc);
        let o = build_cooccurrence(&profiles, &qc);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(o.get(i, j), u32::from(i != j));
            }
        }
    }

    #[test]
    fn disjoint_tags_give_zero_matrix() {
        let qc = QueryCollection::from_items(
            "q",
            [
                Item::new("1", Source::Twitter, "x", ["a"]),
                Item::new("2", Source::Twitter, "x", ["b"]),
            ],
        );
        let profiles = extract_hashtag_profiles(&qc);
        assert_eq!(build_cooccurrence(&profiles, &qc).total(), 0);
    }

    #[test]
    fn stats_resolution_and_fraction() {
        let mut a = Item::new("1", Source::Flickr, "x", Vec::<&str>::new());
        a.media = Some(Media::Image { width: 100, height: 100 });
        let mut b = Item::new("2", Source::Flickr, "x", Vec::<&str>::new());
        b.media = Some(Media::Image { width: 300, height: 300 });
        let stats = corpus_stats(&QueryCollection::from_items("q", [a, b]));
        let flickr = &stats.sources[Source::Flickr.index()];
        assert_eq!(flickr.mean_resolution, Some(50000.0));
        assert_eq!(flickr.hashtag_fraction, 0.0);
        assert_eq!(flickr.mean_duration, None);
        assert_eq!(stats.sources[0].items, 0);
    }

    fn arb_item() -> impl Strategy<Value = Item> {
        (
            "[a-z0-9]{1,8}",
            0usize..3,
            "[a-zA-Z ,.!#]{0,30}",
            prop::collection::vec("#?[a-zA-Z]{1,5}", 0..4),
            0u64..2_000_000_000,
            0u64..1000,
            0u64..1000,
            prop::option::of(prop_oneof![
                (1u32..5000, 1u32..5000).prop_map(|(width, height)| Media::Image { width, height }),
                (0.0f64..1e5).prop_map(|duration| Media::Video { duration }),
            ]),
            any::<bool>(),
        )
            .prop_map(|(id, s, text, tags, timestamp, comments, endorsements, media, extended)| {
                let mut it = Item::new(id, Source::ALL[s], text, tags);
                it.timestamp = timestamp;
                it.comments = comments;
                it.endorsements = endorsements;
                it.media = media;
                it.extended = extended;
                it
            })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(items in prop::collection::vec(arb_item(), 1..20)) {
            let qc = QueryCollection::from_items("q", items);
            let mut buf = Vec::new();
            write_jsonl(&mut buf, qc.iter()).unwrap();
            let back = read_jsonl(buf.as_slice(), "q").unwrap();
            prop_assert!(back.violations.is_empty());
            prop_assert_eq!(back.collection, qc);
        }

        #[test]
        fn cooccurrence_invariants(tag_sets in prop::collection::vec(prop::collection::vec(0usize..6, 0..5), 1..20)) {
            let items: Vec<Item> = tag_sets.iter().enumerate().map(|(i, ts)| {
                Item::new(i.to_string(), Source::ALL[i % 3], "x", ts.iter().map(|t| format!("t{t}")))
            }).collect();
            let qc = QueryCollection::from_items("q", items);
            let profiles = extract_hashtag_profiles(&qc);
            let o = build_cooccurrence(&profiles, &qc);
            // Brute-force pair enumeration over every item and every pair of profiles.
            for i in 0..o.dim() {
                prop_assert_eq!(o.get(i, i), 0);
                for j in 0..o.dim() {
                    prop_assert_eq!(o.get(i, j), o.get(j, i));
                    if i != j {
                        let (pi, pj) = (&profiles[i], &profiles[j]);
                        let both = qc.iter().filter(|it| {
                            it.source == pi.source && it.source == pj.source
                                && it.hashtags.contains(&pi.tag) && it.hashtags.contains(&pj.tag)
                        }).count() as u32;
                        prop_assert_eq!(o.get(i, j), both);
                    }
                }
            }
            let pairs: u64 = qc.iter().map(|it| { let k = it.hashtags.len() as u64; k * k.saturating_sub(1) / 2 }).sum();
            prop_assert_eq!(o.total(), 2 * pairs);
            for p in &profiles {
                let expected: BTreeSet<String> = qc.iter()
                    .filter(|it| it.source == p.source && it.hashtags.contains(&p.tag))
                    .map(|it| it.id.clone()).collect();
                prop_assert_eq!(&p.item_ids, &expected);
            }
        }

        #[test]
        fn vocabulary_is_deterministic(words in prop::collection::vec("[a-z]{2,6}", 1..30)) {
            let text = words.join(" ");
            let rev: Vec<String> = words.iter().rev().cloned().collect();
            let a = build_vocabulary(&texts(&[text.as_str()]), &Tokenizer::new(Vec::new(), 1)).unwrap();
            let b = build_vocabulary(&texts(&[rev.join(" ").as_str()]), &Tokenizer::new(Vec::new(), 1)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
