//! Two-level hierarchical topic model (root topic plus nCRP leaves).
//!
//! Every document follows the path root → leaf. The collapsed Gibbs sampler
//! alternates between resampling a document's leaf, using the marginal
//! likelihood of its leaf-level words under each existing leaf or a fresh
//! one, and resampling the level (root or leaf) of each token.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::corpus::{HashtagProfile, Source, Vocabulary};

/// Tree depth. Fixed: one shared root and one leaf level.
pub const DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopicError {
    #[error("need at least 2 non-empty documents, found {0}")]
    TooFewDocuments(usize),
    #[error("document `{doc}` has token index {token} outside a vocabulary of {vocab}")]
    TokenOutOfRange { doc: String, token: usize, vocab: usize },
    #[error("invalid topic model configuration: {0}")]
    InvalidConfig(String),
    #[error("item `{0}` was not part of the fitted corpus")]
    UnknownItem(String),
    #[error("none of the items of hashtag `{0}` has modeled text")]
    NoModeledItems(String),
}

/// Sampler hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HldaConfig {
    /// Dirichlet concentration over the two levels of a document.
    pub alpha: f64,
    /// nCRP concentration: weight of opening a new leaf.
    pub gamma: f64,
    /// Topic-word smoothing.
    pub eta: f64,
    /// Gibbs sweeps. The first half is burn-in and never used as the estimate.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for HldaConfig {
    fn default() -> Self {
        HldaConfig {
            alpha: 10.0,
            gamma: 1.0,
            eta: 0.1,
            iterations: 500,
            seed: 0,
        }
    }
}

impl HldaConfig {
    pub fn validate(&self) -> Result<(), TopicError> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma), ("eta", self.eta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TopicError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.iterations == 0 {
            return Err(TopicError::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.iterations / 2
    }
}

/// A tokenized document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<usize>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<usize>) -> Self {
        Document {
            id: id.into(),
            tokens,
        }
    }
}

/// Topic proportions of one document: mass on the root and on its leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocTopics {
    pub root: f64,
    pub leaf: f64,
    pub leaf_index: usize,
}

/// A fitted topic tree for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub source: Source,
    root_topic: Vec<f64>,
    leaf_topics: Vec<Vec<f64>>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    /// `None` for documents skipped as empty.
    doc_topics: Vec<Option<DocTopics>>,
    log_likelihood: Vec<f64>,
}

impl TopicModel {
    /// Assembles a model from already estimated parts.
    pub fn from_parts(
        source: Source,
        root_topic: Vec<f64>,
        leaf_topics: Vec<Vec<f64>>,
        docs: Vec<(String, Option<DocTopics>)>,
    ) -> Self {
        let (doc_ids, doc_topics): (Vec<String>, Vec<Option<DocTopics>>) = docs.into_iter().unzip();
        let doc_index = doc_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        TopicModel {
            source,
            root_topic,
            leaf_topics,
            doc_ids,
            doc_index,
            doc_topics,
            log_likelihood: Vec::new(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_topics.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.root_topic.len()
    }

    pub fn root_topic(&self) -> &[f64] {
        &self.root_topic
    }

    pub fn leaf_topics(&self) -> &[Vec<f64>] {
        &self.leaf_topics
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_topics(&self, id: &str) -> Option<&DocTopics> {
        self.doc_index.get(id).and_then(|&i| self.doc_topics[i].as_ref())
    }

    /// Leaf of each document in input order; `None` for skipped documents.
    pub fn leaf_assignment(&self) -> Vec<Option<usize>> {
        self.doc_topics.iter().map(|d| d.map(|d| d.leaf_index)).collect()
    }

    /// Joint log-likelihood after each sweep.
    pub fn log_likelihood(&self) -> &[f64] {
        &self.log_likelihood
    }

    /// Writes the top `top_n` words of the root and every leaf as plain text.
    ///
    /// ```text
    /// source twitter
    /// leaves 2
    /// root docs=40 rally:0.120000 vote:0.080000
    /// leaf 0 docs=25 debate:0.210000 ...
    /// ```
    pub fn write_dump<W: Write>(&self, vocab: &Vocabulary, top_n: usize, mut out: W) -> io::Result<()> {
        let mut leaf_docs = vec![0usize; self.leaf_count()];
        for d in self.doc_topics.iter().flatten() {
            leaf_docs[d.leaf_index] += 1;
        }
        writeln!(out, "source {}", self.source)?;
        writeln!(out, "leaves {}", self.leaf_count())?;
        let modeled = self.doc_topics.iter().flatten().count();
        write!(out, "root docs={modeled}")?;
        write_top_words(&mut out, vocab, &self.root_topic, top_n)?;
        for (k, topic) in self.leaf_topics.iter().enumerate() {
            write!(out, "leaf {k} docs={}", leaf_docs[k])?;
            write_top_words(&mut out, vocab, topic, top_n)?;
        }
        Ok(())
    }
}

fn write_top_words<W: Write>(out: &mut W, vocab: &Vocabulary, dist: &[f64], top_n: usize) -> io::Result<()> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    for &w in order.iter().take(top_n) {
        write!(out, " {}:{:.6}", vocab.word(w), dist[w])?;
    }
    writeln!(out)
}

#[derive(Debug, Clone)]
struct TopicCounts {
    words: Vec<u32>,
    total: u32,
}

impl TopicCounts {
    fn new(vocab: usize) -> Self {
        TopicCounts {
            words: vec![0; vocab],
            total: 0,
        }
    }

    fn add(&mut self, w: usize) {
        self.words[w] += 1;
        self.total += 1;
    }

    fn remove(&mut self, w: usize) {
        self.words[w] -= 1;
        self.total -= 1;
    }
}

#[derive(Debug, Clone)]
struct Leaf {
    docs: usize,
    counts: TopicCounts,
}

/// Copy of the sampler state kept as the point estimate.
#[derive(Debug, Clone)]
struct Snapshot {
    level_counts: Vec<[u32; DEPTH]>,
    path: Vec<usize>,
    root: TopicCounts,
    leaves: Vec<Option<Leaf>>,
}

struct Sampler<'a> {
    cfg: &'a HldaConfig,
    vocab: usize,
    docs: Vec<&'a [usize]>,
    levels: Vec<Vec<u8>>,
    /// Per document: tokens at the root and at the leaf.
    level_counts: Vec<[u32; DEPTH]>,
    path: Vec<usize>,
    root: TopicCounts,
    /// Leaf slots; `None` marks a free slot, reused lowest-first.
    leaves: Vec<Option<Leaf>>,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a HldaConfig, vocab: usize, docs: Vec<&'a [usize]>) -> Self {
        let n = docs.len();
        Sampler {
            cfg,
            vocab,
            docs,
            levels: vec![Vec::new(); n],
            level_counts: vec![[0; DEPTH]; n],
            path: vec![0; n],
            root: TopicCounts::new(vocab),
            leaves: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    fn initialize(&mut self) {
        for d in 0..self.docs.len() {
            let levels: Vec<u8> = (0..self.docs[d].len()).map(|_| self.rng.gen_range(0..DEPTH as u8)).collect();
            for (&w, &l) in self.docs[d].iter().zip(&levels) {
                self.level_counts[d][l as usize] += 1;
                if l == 0 {
                    self.root.add(w);
                }
            }
            self.levels[d] = levels;
            let leaf = self.sample_path(d);
            self.attach(d, leaf);
        }
    }

    fn leaf_words(&self, d: usize) -> Vec<(usize, u32)> {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for (&w, &l) in self.docs[d].iter().zip(&self.levels[d]) {
            if l == 1 {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        counts.into_iter().collect()
    }

    fn attach(&mut self, d: usize, slot: usize) {
        if slot == self.leaves.len() {
            self.leaves.push(None);
        }
        let vocab = self.vocab;
        let leaf = self.leaves[slot].get_or_insert_with(|| Leaf {
            docs: 0,
            counts: TopicCounts::new(vocab),
        });
        leaf.docs += 1;
        for (&w, &l) in self.docs[d].iter().zip(&self.levels[d]) {
            if l == 1 {
                leaf.counts.add(w);
            }
        }
        self.path[d] = slot;
    }

    fn detach(&mut self, d: usize) {
        let slot = self.path[d];
        let leaf = self.leaves[slot].as_mut().expect("document on a live leaf");
        leaf.docs -= 1;
        for (&w, &l) in self.docs[d].iter().zip(&self.levels[d]) {
            if l == 1 {
                leaf.counts.remove(w);
            }
        }
        if leaf.docs == 0 {
            debug_assert_eq!(leaf.counts.total, 0);
            self.leaves[slot] = None;
        }
    }

    /// Log marginal likelihood of `words` added to a topic with `counts`.
    fn word_block_ll(&self, counts: Option<&TopicCounts>, words: &[(usize, u32)]) -> f64 {
        let eta = self.cfg.eta;
        let v_eta = self.vocab as f64 * eta;
        let total = counts.map_or(0, |c| c.total) as f64;
        let added: u32 = words.iter().map(|&(_, c)| c).sum();
        let mut ll = ln_gamma(total + v_eta) - ln_gamma(total + added as f64 + v_eta);
        for &(w, c) in words {
            let n = counts.map_or(0, |t| t.words[w]) as f64;
            ll += ln_gamma(n + c as f64 + eta) - ln_gamma(n + eta);
        }
        ll
    }

    /// Draws a leaf slot for a detached document.
    fn sample_path(&mut self, d: usize) -> usize {
        let words = self.leaf_words(d);
        let mut slots = Vec::with_capacity(self.leaves.len() + 1);
        let mut logp = Vec::with_capacity(self.leaves.len() + 1);
        for (slot, leaf) in self.leaves.iter().enumerate() {
            if let Some(leaf) = leaf {
                slots.push(slot);
                logp.push((leaf.docs as f64).ln() + self.word_block_ll(Some(&leaf.counts), &words));
            }
        }
        let fresh = self.leaves.iter().position(Option::is_none).unwrap_or(self.leaves.len());
        slots.push(fresh);
        logp.push(self.cfg.gamma.ln() + self.word_block_ll(None, &words));
        slots[sample_log(&mut self.rng, &logp)]
    }

    fn resample_levels(&mut self, d: usize) {
        let alpha = self.cfg.alpha;
        let v_eta = self.vocab as f64 * self.cfg.eta;
        let eta = self.cfg.eta;
        let slot = self.path[d];
        for i in 0..self.docs[d].len() {
            let w = self.docs[d][i];
            let old = self.levels[d][i] as usize;
            self.level_counts[d][old] -= 1;
            let leaf = self.leaves[slot].as_mut().expect("live leaf");
            if old == 0 {
                self.root.remove(w);
            } else {
                leaf.counts.remove(w);
            }
            let p_root = (f64::from(self.level_counts[d][0]) + alpha) * (f64::from(self.root.words[w]) + eta)
                / (f64::from(self.root.total) + v_eta);
            let p_leaf = (f64::from(self.level_counts[d][1]) + alpha) * (f64::from(leaf.counts.words[w]) + eta)
                / (f64::from(leaf.counts.total) + v_eta);
            let new = usize::from(self.rng.gen::<f64>() * (p_root + p_leaf) >= p_root);
            if new == 0 {
                self.root.add(w);
            } else {
                leaf.counts.add(w);
            }
            self.level_counts[d][new] += 1;
            self.levels[d][i] = new as u8;
        }
    }

    fn sweep(&mut self) {
        for d in 0..self.docs.len() {
            self.detach(d);
            let slot = self.sample_path(d);
            self.attach(d, slot);
            self.resample_levels(d);
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            level_counts: self.level_counts.clone(),
            path: self.path.clone(),
            root: self.root.clone(),
            leaves: self.leaves.clone(),
        }
    }

    fn topic_ll(&self, counts: &TopicCounts) -> f64 {
        let eta = self.cfg.eta;
        let v = self.vocab as f64;
        let mut ll = ln_gamma(v * eta) - v * ln_gamma(eta) - ln_gamma(f64::from(counts.total) + v * eta);
        ll += counts
            .words
            .iter()
            .map(|&n| ln_gamma(f64::from(n) + eta))
            .sum::<f64>();
        ll
    }

    /// log p(words, levels, paths).
    fn joint_log_likelihood(&self) -> f64 {
        let alpha = self.cfg.alpha;
        let gamma = self.cfg.gamma;
        let mut ll = self.topic_ll(&self.root);
        let mut live = 0usize;
        for leaf in self.leaves.iter().flatten() {
            ll += self.topic_ll(&leaf.counts);
            ll += ln_gamma(leaf.docs as f64);
            live += 1;
        }
        let n_docs = self.docs.len() as f64;
        ll += live as f64 * gamma.ln() + ln_gamma(gamma) - ln_gamma(n_docs + gamma);
        let depth = DEPTH as f64;
        for counts in &self.level_counts {
            let n: u32 = counts.iter().sum();
            ll += ln_gamma(depth * alpha) - depth * ln_gamma(alpha) - ln_gamma(f64::from(n) + depth * alpha);
            ll += counts.iter().map(|&c| ln_gamma(f64::from(c) + alpha)).sum::<f64>();
        }
        ll
    }
}

fn sample_log<R: Rng>(rng: &mut R, logp: &[f64]) -> usize {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn normalized(counts: &TopicCounts, eta: f64) -> Vec<f64> {
    let denom = f64::from(counts.total) + counts.words.len() as f64 * eta;
    counts.words.iter().map(|&n| (f64::from(n) + eta) / denom).collect()
}

/// Fits the two-level topic tree with collapsed Gibbs sampling.
///
/// Documents without tokens are skipped and carry no topic proportions.
/// Estimates come from the sample with the highest joint log-likelihood
/// after burn-in; its empty leaf slots are dropped and the remaining leaves
/// renumbered in slot order.
pub fn fit_hlda(docs: &[Document], vocab_size: usize, source: Source, cfg: &HldaConfig) -> Result<TopicModel, TopicError> {
    cfg.validate()?;
    for doc in docs {
        if let Some(&token) = doc.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(TopicError::TokenOutOfRange {
                doc: doc.id.clone(),
                token,
                vocab: vocab_size,
            });
        }
    }
    let modeled: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].tokens.is_empty()).collect();
    if modeled.len() < 2 {
        return Err(TopicError::TooFewDocuments(modeled.len()));
    }
    if modeled.len() < docs.len() {
        log::warn!(
            "{source}: skipping {} empty documents",
            docs.len() - modeled.len()
        );
    }

    let mut sampler = Sampler::new(cfg, vocab_size, modeled.iter().map(|&i| docs[i].tokens.as_slice()).collect());
    sampler.initialize();
    let burn_in = cfg.burn_in();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, Snapshot)> = None;
    for sweep in 0..cfg.iterations {
        sampler.sweep();
        let ll = sampler.joint_log_likelihood();
        trace.push(ll);
        if sweep >= burn_in && best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, sampler.snapshot()));
        }
    }
    let state = best.map(|(_, s)| s).unwrap_or_else(|| sampler.snapshot());

    let mut renumber = HashMap::new();
    let mut leaf_topics = Vec::new();
    for (slot, leaf) in state.leaves.iter().enumerate() {
        if let Some(leaf) = leaf {
            renumber.insert(slot, leaf_topics.len());
            leaf_topics.push(normalized(&leaf.counts, cfg.eta));
        }
    }
    let mut doc_topics = vec![None; docs.len()];
    let two_alpha = DEPTH as f64 * cfg.alpha;
    for (m, &i) in modeled.iter().enumerate() {
        let [root, leaf] = state.level_counts[m];
        let n = f64::from(root + leaf);
        let p_root = (f64::from(root) + cfg.alpha) / (n + two_alpha);
        doc_topics[i] = Some(DocTopics {
            root: p_root,
            leaf: 1.0 - p_root,
            leaf_index: renumber[&state.path[m]],
        });
    }
    let mut model = TopicModel::from_parts(
        source,
        normalized(&state.root, cfg.eta),
        leaf_topics,
        docs.iter().map(|d| d.id.clone()).zip(doc_topics).collect(),
    );
    model.log_likelihood = trace;
    Ok(model)
}

/// Sums per-document leaf weight vectors and normalizes the total.
/// Returns `None` when there is no mass at all.
pub fn aggregate_leaf_weights<'a>(rows: impl IntoIterator<Item = &'a [f64]>, leaves: usize) -> Option<Vec<f64>> {
    let mut mass = vec![0.0; leaves];
    for row in rows {
        for (m, w) in mass.iter_mut().zip(row) {
            *m += w;
        }
    }
    let total: f64 = mass.iter().sum();
    (total > 0.0).then(|| mass.into_iter().map(|m| m / total).collect())
}

impl DocTopics {
    /// Leaf weights over `leaves` leaves: the leaf mass on the assigned leaf, zero elsewhere.
    pub fn leaf_weights(&self, leaves: usize) -> Vec<f64> {
        let mut w = vec![0.0; leaves];
        w[self.leaf_index] = self.leaf;
        w
    }
}

/// Leaf-topic distribution of a hashtag, aggregated over its annotated
/// items. The root topic is excluded.
///
/// Items skipped as empty during fitting are ignored.
pub fn hashtag_topic_distribution(model: &TopicModel, profile: &HashtagProfile) -> Result<Vec<f64>, TopicError> {
    let k = model.leaf_count();
    let mut rows = Vec::with_capacity(profile.item_ids.len());
    for id in &profile.item_ids {
        let &idx = model
            .doc_index
            .get(id)
            .ok_or_else(|| TopicError::UnknownItem(id.clone()))?;
        if let Some(dt) = &model.doc_topics[idx] {
            rows.push(dt.leaf_weights(k));
        }
    }
    aggregate_leaf_weights(rows.iter().map(Vec::as_slice), k).ok_or_else(|| TopicError::NoModeledItems(profile.tag.clone()))
}
