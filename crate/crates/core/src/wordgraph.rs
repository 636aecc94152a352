//! Word similarity graph and the random walk that spreads each source's
//! topic-word distribution over the unified vocabulary.
//!
//! A walk step is `s' = alpha * s R + (1 - alpha) * t` with `s` a row vector
//! and `R` row-stochastic. It converges to the fixed point
//! `s = (1 - alpha) t (I - alpha R)^-1`, which [`WalkMode::ClosedForm`]
//! solves directly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::corpus::{Source, Vocabulary};
use crate::topics::TopicModel;

#[derive(Debug, Error)]
pub enum WordGraphError {
    #[error("similarity table not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to read similarity table {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("similarity table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("threshold must lie in [0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("row {row} of the transition matrix sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("random walk alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("scores must be finite and non-negative")]
    NegativeScores,
    #[error("random walk did not converge in {iterations} iterations (L1 change {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("word `{word}` of the {platform} vocabulary is missing from the unified vocabulary")]
    VocabularyMismatch { platform: Source, word: String },
}

/// Symmetric word similarities in [0, 1] over vocabulary indices.
/// Self-similarity is always 1 and is not stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityTable {
    n: usize,
    pairs: BTreeMap<(usize, usize), f64>,
}

impl SimilarityTable {
    pub fn new(n: usize) -> Self {
        SimilarityTable {
            n,
            pairs: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Records a similarity; repeated pairs keep the maximum. Self pairs are ignored.
    pub fn insert(&mut self, i: usize, j: usize, sim: f64) {
        assert!(i < self.n && j < self.n, "word index out of range");
        if i == j {
            return;
        }
        let key = (i.min(j), i.max(j));
        let slot = self.pairs.entry(key).or_insert(sim);
        *slot = slot.max(sim);
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        self.pairs.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    /// Stored off-diagonal pairs `(i, j, sim)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pairs.iter().map(|(&(i, j), &s)| (i, j, s))
    }
}

/// Loads a `word1 \t word2 \t sim` table, keeping pairs whose words are
/// both in `vocab`.
pub fn load_similarity(path: &Path, vocab: &Vocabulary) -> Result<SimilarityTable, WordGraphError> {
    let file = fs::File::open(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            WordGraphError::FileNotFound(path.to_path_buf())
        } else {
            WordGraphError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    parse_similarity(BufReader::new(file), vocab).map_err(|e| match e {
        WordGraphError::Io { source, .. } => WordGraphError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Parses the similarity TSV. Blank lines and lines starting with `#` are skipped.
pub fn parse_similarity<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<SimilarityTable, WordGraphError> {
    let mut table = SimilarityTable::new(vocab.len());
    let mut skipped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| WordGraphError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, sim] = fields[..] else {
            return Err(WordGraphError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let sim: f64 = sim.trim().parse().map_err(|_| WordGraphError::Parse {
            line: line_no,
            message: format!("similarity `{sim}` is not a number"),
        })?;
        if !(0.0..=1.0).contains(&sim) {
            return Err(WordGraphError::Parse {
                line: line_no,
                message: format!("similarity {sim} outside [0, 1]"),
            });
        }
        match (vocab.get(a.trim()), vocab.get(b.trim())) {
            (Some(i), Some(j)) => table.insert(i, j, sim),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::debug!("similarity table: {skipped} pairs outside the vocabulary");
    }
    Ok(table)
}

/// Sparse row-stochastic matrix in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Rows with no edge to another word.
    isolated: Vec<bool>,
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.isolated[i]
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Row vector times matrix: `s R`.
    pub fn left_mul(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &si) in s.iter().enumerate() {
            if si == 0.0 {
                continue;
            }
            for (j, r) in self.row(i) {
                out[j] += si * r;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Wraps a dense non-negative matrix whose rows each sum to 1 or 0.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self, WordGraphError> {
        if m.nrows() != m.ncols() {
            return Err(WordGraphError::Dimension(format!("{}x{} is not square", m.nrows(), m.ncols())));
        }
        let n = m.nrows();
        let mut row_ptr = vec![0];
        let (mut cols, mut vals, mut isolated) = (Vec::new(), Vec::new(), Vec::with_capacity(n));
        for i in 0..n {
            let sum: f64 = m.row(i).sum();
            if m.row(i).iter().any(|&v| !(v >= 0.0 && v.is_finite())) || (sum != 0.0 && (sum - 1.0).abs() > 1e-9) {
                return Err(WordGraphError::NotStochastic { row: i, sum });
            }
            let mut off_diagonal = false;
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    cols.push(j);
                    vals.push(m[(i, j)]);
                    off_diagonal |= i != j;
                }
            }
            isolated.push(!off_diagonal);
            row_ptr.push(cols.len());
        }
        Ok(TransitionMatrix {
            n,
            row_ptr,
            cols,
            vals,
            isolated,
        })
    }
}

/// Row-normalized similarity graph. Pairs below `threshold` are dropped
/// first; every word keeps its self-loop of weight 1.
pub fn build_transition(table: &SimilarityTable, threshold: f64) -> Result<TransitionMatrix, WordGraphError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(WordGraphError::InvalidThreshold(threshold));
    }
    let n = table.dim();
    let mut adjacency: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
    for (i, j, sim) in table.pairs() {
        if sim >= threshold && sim > 0.0 {
            adjacency[i].push((j, sim));
            adjacency[j].push((i, sim));
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let (mut cols, mut vals, mut isolated) = (Vec::new(), Vec::new(), Vec::with_capacity(n));
    for mut row in adjacency {
        row.sort_by_key(|&(j, _)| j);
        let total: f64 = row.iter().map(|&(_, w)| w).sum();
        isolated.push(row.len() == 1);
        for (j, w) in row {
            cols.push(j);
            vals.push(w / total);
        }
        row_ptr.push(cols.len());
    }
    if n > 0 && isolated.iter().all(|&b| b) {
        log::warn!("word graph has no edges above threshold {threshold}; the walk is the identity");
    }
    Ok(TransitionMatrix {
        n,
        row_ptr,
        cols,
        vals,
        isolated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkMode {
    Iterative,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    pub alpha: f64,
    /// Similarities below this are not graph edges.
    pub threshold: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            alpha: 0.5,
            threshold: 0.3,
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkResult {
    pub scores: Vec<f64>,
    /// Steps taken; 0 for the closed form.
    pub iterations: usize,
}

/// Relevance propagation over `r` starting from, and restarting to, `t`.
pub fn random_walk(
    r: &TransitionMatrix,
    t: &[f64],
    alpha: f64,
    mode: WalkMode,
    tol: f64,
    max_iter: usize,
) -> Result<WalkResult, WordGraphError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WordGraphError::InvalidAlpha(alpha));
    }
    if t.len() != r.dim() {
        return Err(WordGraphError::Dimension(format!(
            "score vector has {} entries, matrix is {}x{}",
            t.len(),
            r.dim(),
            r.dim()
        )));
    }
    if t.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(WordGraphError::NegativeScores);
    }
    match mode {
        WalkMode::Iterative => {
            let mut s = t.to_vec();
            let mut residual = f64::INFINITY;
            for it in 1..=max_iter {
                let next: Vec<f64> = r
                    .left_mul(&s)
                    .into_iter()
                    .zip(t)
                    .map(|(p, &ti)| alpha * p + (1.0 - alpha) * ti)
                    .collect();
                residual = next.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum();
                s = next;
                if residual < tol {
                    return Ok(WalkResult { scores: s, iterations: it });
                }
            }
            Err(WordGraphError::NonConvergence {
                iterations: max_iter,
                residual,
            })
        }
        WalkMode::ClosedForm => {
            // s (I - alpha R) = (1 - alpha) t, solved as its transpose.
            let n = r.dim();
            let system = DMatrix::identity(n, n) - r.to_dense().transpose() * alpha;
            let rhs = DVector::from_iterator(n, t.iter().map(|&x| (1.0 - alpha) * x));
            let s = system.lu().solve(&rhs).ok_or(WordGraphError::SingularSystem)?;
            Ok(WalkResult {
                scores: s.iter().copied().collect(),
                iterations: 0,
            })
        }
    }
}

/// A leaf topic expressed over the unified vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedTopic {
    pub source: Source,
    pub leaf: usize,
    pub dist: Vec<f64>,
}

/// All leaf topics of all sources over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedTopicSpace {
    pub topics: Vec<UnifiedTopic>,
    /// Walk iterations per topic.
    pub iterations: Vec<usize>,
}

impl UnifiedTopicSpace {
    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Column offset of each source's first topic, with `len()` appended.
    pub fn source_offsets(&self) -> [usize; 4] {
        let mut offsets = [0; 4];
        for s in Source::ALL {
            offsets[s.index() + 1] = offsets[s.index()] + self.topics.iter().filter(|t| t.source == s).count();
        }
        offsets
    }

    /// Topic-word matrix, one row per topic.
    pub fn matrix(&self) -> DMatrix<f64> {
        let cols = self.topics.first().map_or(0, |t| t.dist.len());
        DMatrix::from_fn(self.topics.len(), cols, |i, j| self.topics[i].dist[j])
    }

    /// Top `top_n` words of each topic, one line per topic: `source leaf word:p ...`.
    pub fn write_dump<W: Write>(&self, vocab: &Vocabulary, top_n: usize, mut out: W) -> io::Result<()> {
        for t in &self.topics {
            let mut order: Vec<usize> = (0..t.dist.len()).collect();
            order.sort_by(|&a, &b| t.dist[b].total_cmp(&t.dist[a]).then(a.cmp(&b)));
            write!(out, "{} {}", t.source, t.leaf)?;
            for &w in order.iter().take(top_n) {
                write!(out, " {}:{:.6}", vocab.word(w), t.dist[w])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Embeds every leaf topic of every model into `vocab_all`, runs the walk
/// and renormalizes. Models are expected in source order; topics keep that order.
pub fn unify_topics(
    models: &[(&TopicModel, &Vocabulary)],
    vocab_all: &Vocabulary,
    r: &TransitionMatrix,
    cfg: &WalkConfig,
) -> Result<UnifiedTopicSpace, WordGraphError> {
    if r.dim() != vocab_all.len() {
        return Err(WordGraphError::Dimension(format!(
            "transition matrix is {0}x{0}, unified vocabulary has {1} words",
            r.dim(),
            vocab_all.len()
        )));
    }
    let mut topics = Vec::new();
    let mut iterations = Vec::new();
    for (model, vocab) in models {
        let embed: Vec<usize> = vocab
            .words()
            .iter()
            .map(|w| {
                vocab_all.get(w).ok_or_else(|| WordGraphError::VocabularyMismatch {
                    platform: model.source,
                    word: w.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        for (leaf, dist) in model.leaf_topics().iter().enumerate() {
            let mut t = vec![0.0; vocab_all.len()];
            for (&p, &w) in dist.iter().zip(&embed) {
                t[w] = p;
            }
            let walk = random_walk(r, &t, cfg.alpha, WalkMode::Iterative, cfg.tol, cfg.max_iter)?;
            let total: f64 = walk.scores.iter().sum();
            let dist = walk.scores.iter().map(|s| s / total).collect();
            topics.push(UnifiedTopic {
                source: model.source,
                leaf,
                dist,
            });
            iterations.push(walk.iterations);
        }
    }
    Ok(UnifiedTopicSpace { topics, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topics::DocTopics;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn l1(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    fn tsv(text: &str, words: &[&str]) -> Result<SimilarityTable, WordGraphError> {
        parse_similarity(text.as_bytes(), &Vocabulary::from_words(words.iter().copied()))
    }

    #[test]
    fn symmetrized_with_unit_diagonal() {
        let t = tsv("cat\tdog\t0.8\n", &["cat", "dog"]).unwrap();
        assert_eq!(t.get(0, 1), 0.8);
        assert_eq!(t.get(1, 0), 0.8);
        assert_eq!(t.get(0, 0), 1.0);
    }

    #[test]
    fn out_of_range_similarity_rejected() {
        let err = tsv("# header\ncat\tdog\t1.5\n", &["cat", "dog"]).unwrap_err();
        assert!(matches!(err, WordGraphError::Parse { line: 2, .. }), "{err}");
        assert!(matches!(tsv("cat dog 0.5\n", &["cat", "dog"]), Err(WordGraphError::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_rows_take_max() {
        let t = tsv("a\tb\t0.3\nb\ta\t0.5\nz\ta\t0.9\n", &["a", "b"]).unwrap();
        assert_eq!(t.get(0, 1), 0.5);
        assert_eq!(t.get(1, 0), 0.5);
        assert_eq!(t.pairs().count(), 1);
    }

    #[test]
    fn missing_table_file() {
        let err = load_similarity(Path::new("/no/such/table.tsv"), &Vocabulary::default()).unwrap_err();
        assert!(matches!(err, WordGraphError::FileNotFound(_)));
    }

    #[test]
    fn transition_from_two_words() {
        let mut table = SimilarityTable::new(2);
        table.insert(0, 1, 0.5);
        let r = build_transition(&table, 0.3).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert!((r - expected).abs().max() < 1e-15);

        let r = build_transition(&table, 0.6).unwrap();
        assert_eq!(r.to_dense(), DMatrix::identity(2, 2));
        assert!(r.is_isolated(0) && r.is_isolated(1));
        assert!(matches!(build_transition(&table, 1.0), Err(WordGraphError::InvalidThreshold(_))));
    }

    #[test]
    fn alpha_near_zero_returns_restart_vector() {
        let mut table = SimilarityTable::new(3);
        table.insert(0, 1, 0.9);
        table.insert(1, 2, 0.4);
        let r = build_transition(&table, 0.0).unwrap();
        let t = [0.2, 0.5, 0.3];
        for mode in [WalkMode::Iterative, WalkMode::ClosedForm] {
            let s = random_walk(&r, &t, 1e-12, mode, 1e-14, 100).unwrap().scores;
            assert!(l1(&s, &t) < 1e-9);
        }
    }

    #[test]
    fn swap_graph_fixed_point() {
        // s = 0.5 s R + 0.5 t with R swapping the two nodes: a = 0.5 b + 0.5, b = 0.5 a.
        let r = TransitionMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        for mode in [WalkMode::Iterative, WalkMode::ClosedForm] {
            let s = random_walk(&r, &[1.0, 0.0], 0.5, mode, 1e-13, 200).unwrap().scores;
            assert!(l1(&s, &[2.0 / 3.0, 1.0 / 3.0]) < 1e-12, "{mode:?} {s:?}");
        }
    }

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> TransitionMatrix {
        let mut m = DMatrix::from_fn(n, n, |_, _| if rng.gen::<f64>() < 0.2 { rng.gen::<f64>() } else { 0.0 });
        for i in 0..n {
            m[(i, i)] += 0.1;
            let s = m.row(i).sum();
            m.row_mut(i).scale_mut(1.0 / s);
        }
        TransitionMatrix::from_dense(&m).unwrap()
    }

    #[test]
    fn iterative_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let r = random_stochastic(50, &mut rng);
        let t: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let it = random_walk(&r, &t, 0.5, WalkMode::Iterative, 1e-12, 1000).unwrap();
        let cf = random_walk(&r, &t, 0.5, WalkMode::ClosedForm, 0.0, 0).unwrap();
        assert!(l1(&it.scores, &cf.scores) < 1e-8);
        assert!(it.iterations > 1);
    }

    #[test]
    fn walk_errors() {
        let r = build_transition(&SimilarityTable::new(2), 0.0).unwrap();
        assert!(matches!(random_walk(&r, &[1.0], 0.5, WalkMode::Iterative, 1e-9, 10), Err(WordGraphError::Dimension(_))));
        assert!(matches!(random_walk(&r, &[1.0, 0.0], 1.0, WalkMode::Iterative, 1e-9, 10), Err(WordGraphError::InvalidAlpha(_))));
        assert!(matches!(random_walk(&r, &[-1.0, 0.0], 0.5, WalkMode::Iterative, 1e-9, 10), Err(WordGraphError::NegativeScores)));
        let swap = TransitionMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(matches!(
            random_walk(&swap, &[1.0, 0.0], 0.9, WalkMode::Iterative, 1e-15, 3),
            Err(WordGraphError::NonConvergence { iterations: 3, .. })
        ));
    }

    fn model(source: Source, leaves: Vec<Vec<f64>>) -> TopicModel {
        let v = leaves[0].len();
        TopicModel::from_parts(
            source,
            vec![1.0 / v as f64; v],
            leaves,
            vec![("d".into(), Some(DocTopics { root: 0.5, leaf: 0.5, leaf_index: 0 }))],
        )
    }

    #[test]
    fn isolated_word_keeps_its_mass() {
        let vocab = Vocabulary::from_words(["a", "b"]);
        let src = Vocabulary::from_words(["a"]);
        let r = build_transition(&SimilarityTable::new(2), 0.3).unwrap();
        let m = model(Source::Twitter, vec![vec![1.0]]);
        let space = unify_topics(&[(&m, &src)], &vocab, &r, &WalkConfig::default()).unwrap();
        assert!(l1(&space.topics[0].dist, &[1.0, 0.0]) < 1e-12);
    }

    #[test]
    fn linked_word_receives_mass() {
        let vocab = Vocabulary::from_words(["a", "b"]);
        let src = Vocabulary::from_words(["a"]);
        let mut table = SimilarityTable::new(2);
        table.insert(0, 1, 1.0);
        let r = build_transition(&table, 0.3).unwrap();
        let m = model(Source::Flickr, vec![vec![1.0]]);
        let space = unify_topics(&[(&m, &src)], &vocab, &r, &WalkConfig::default()).unwrap();
        let d = &space.topics[0].dist;
        assert!(d[1] > 0.0);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn topics_concatenate_across_sources() {
        let vocab = Vocabulary::from_words(["a", "b", "c"]);
        let models: Vec<(TopicModel, Vocabulary)> = Source::ALL
            .iter()
            .map(|&s| (model(s, vec![vec![0.5, 0.5], vec![0.9, 0.1]]), Vocabulary::from_words(["a", "c"])))
            .collect();
        let refs: Vec<(&TopicModel, &Vocabulary)> = models.iter().map(|(m, v)| (m, v)).collect();
        let r = build_transition(&SimilarityTable::new(3), 0.3).unwrap();
        let space = unify_topics(&refs, &vocab, &r, &WalkConfig::default()).unwrap();
        assert_eq!(space.len(), 6);
        assert_eq!(space.source_offsets(), [0, 2, 4, 6]);
        assert_eq!(space.matrix().shape(), (6, 3));
        // "a" and "c" sit at unified positions 0 and 2.
        assert!(l1(&space.topics[1].dist, &[0.9, 0.0, 0.1]) < 1e-12);

        let missing = Vocabulary::from_words(["zzz"]);
        let m = model(Source::Twitter, vec![vec![1.0]]);
        assert!(matches!(
            unify_topics(&[(&m, &missing)], &vocab, &r, &WalkConfig::default()),
            Err(WordGraphError::VocabularyMismatch { .. })
        ));
    }

    fn arb_instance() -> impl Strategy<Value = (TransitionMatrix, Vec<f64>)> {
        (2usize..15, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_stochastic(n, &mut rng);
            let t = (0..n).map(|_| rng.gen::<f64>()).collect();
            (r, t)
        })
    }

    proptest! {
        #[test]
        fn walk_is_non_negative_and_linear((r, t) in arb_instance(), alpha in 0.05f64..0.95, c in 0.1f64..10.0) {
            let s = random_walk(&r, &t, alpha, WalkMode::ClosedForm, 0.0, 0).unwrap().scores;
            prop_assert!(s.iter().all(|&x| x >= -1e-12));
            let scaled: Vec<f64> = t.iter().map(|x| c * x).collect();
            let s2 = random_walk(&r, &scaled, alpha, WalkMode::ClosedForm, 0.0, 0).unwrap().scores;
            let expect: Vec<f64> = s.iter().map(|x| c * x).collect();
            prop_assert!(l1(&s2, &expect) < 1e-9 * c.max(1.0));
            let it = random_walk(&r, &t, alpha, WalkMode::Iterative, 1e-13, 10_000).unwrap().scores;
            prop_assert!(l1(&it, &s) < 1e-9);
        }

        #[test]
        fn transition_rows_are_stochastic(pairs in prop::collection::vec((0usize..8, 0usize..8, 0.0f64..=1.0), 0..30), th in 0.0f64..0.99) {
            let mut table = SimilarityTable::new(8);
            for (i, j, s) in pairs {
                table.insert(i, j, s);
            }
            let r = build_transition(&table, th).unwrap();
            for i in 0..8 {
                let sum: f64 = r.row(i).map(|(_, v)| v).sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }
}
