//! End-to-end run: corpus → per-source topics → unified topics →
//! co-clustering → ranked hierarchy, plus the written artifacts.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::cocluster::{choose_restart, CoClusterConfig, CoClusterProblem, CoClusterResult};
use crate::corpus::{
    build_cooccurrence, build_vocabulary, extract_hashtag_profiles, ingest, CorpusError, HashtagProfile, QueryCollection, Source,
    Tokenizer, Vocabulary,
};
use crate::ranking::{
    appearance_counts, assemble_hierarchy, cluster_topic_dist, describe_cluster, rank_clusters, semantic_relevance, Hierarchy,
};
use crate::topics::{fit_hlda, hashtag_topic_distribution, Document, HldaConfig, TopicError, TopicModel};
use crate::wordgraph::{build_transition, load_similarity, unify_topics, UnifiedTopicSpace, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Corpus,
    Topics,
    WordGraph,
    CoCluster,
    Ranking,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Corpus => "corpus",
            Stage::Topics => "topics",
            Stage::WordGraph => "wordgraph",
            Stage::CoCluster => "cocluster",
            Stage::Ranking => "ranking",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

macro_rules! at {
    ($stage:expr) => {
        |e| fail($stage)(&e)
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HldaSection {
    pub alpha: f64,
    pub gamma: f64,
    pub eta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for HldaSection {
    fn default() -> Self {
        let d = HldaConfig::default();
        HldaSection {
            alpha: d.alpha,
            gamma: d.gamma,
            eta: d.eta,
            iterations: d.iterations,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    #[serde(default = "default_walk_alpha")]
    pub alpha: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_walk_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub similarity: PathBuf,
}

fn default_walk_alpha() -> f64 {
    WalkConfig::default().alpha
}
fn default_threshold() -> f64 {
    WalkConfig::default().threshold
}
fn default_walk_tol() -> f64 {
    WalkConfig::default().tol
}
fn default_max_iter() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoClusterSection {
    pub row_clusters: usize,
    #[serde(default = "default_col_clusters")]
    pub col_clusters: usize,
    #[serde(default = "one")]
    pub lambda_topic: f64,
    #[serde(default = "one")]
    pub lambda_cooccur: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_cc_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_col_clusters() -> usize {
    20
}
fn one() -> f64 {
    1.0
}
fn default_restarts() -> usize {
    8
}
fn default_cc_iter() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingSection {
    pub psi: f64,
    pub description_words: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RankingSection {
    fn default() -> Self {
        RankingSection {
            psi: 0.5,
            description_words: 8,
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    /// One word per line; the built-in English list when absent.
    pub stopwords: Option<PathBuf>,
    pub min_freq: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            stopwords: None,
            min_freq: 2,
        }
    }
}

/// Everything a run needs. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Defaults to the input file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default)]
    pub hlda: HldaSection,
    pub walk: WalkSection,
    pub cocluster: CoClusterSection,
    #[serde(default)]
    pub ranking: RankingSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(at!(Stage::Config))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| fail(Stage::Config)(&format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output);
        fix(&mut self.walk.similarity);
        if let Some(p) = self.tokenizer.stopwords.as_mut() {
            fix(p);
        }
    }

    /// Sets both sampling seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.hlda.seed = seed;
        self.cocluster.seed = seed;
        self
    }

    fn hlda_config(&self, source: Source) -> HldaConfig {
        HldaConfig {
            alpha: self.hlda.alpha,
            gamma: self.hlda.gamma,
            eta: self.hlda.eta,
            iterations: self.hlda.iterations,
            seed: self.hlda.seed.wrapping_add(source.index() as u64),
        }
    }

    fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            alpha: self.walk.alpha,
            threshold: self.walk.threshold,
            tol: self.walk.tol,
            max_iter: self.walk.max_iter,
        }
    }
}

/// Everything computed by a run, before anything is written.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub collection: QueryCollection,
    pub vocab: Vocabulary,
    /// Fitted models in source order; sources without text are absent.
    pub models: Vec<(TopicModel, Vocabulary)>,
    pub topics: UnifiedTopicSpace,
    /// Hashtags that entered co-clustering, in row order.
    pub profiles: Vec<HashtagProfile>,
    /// Hashtags dropped because none of their items had modeled text.
    pub dropped: Vec<String>,
    pub col_clusters: usize,
    pub clustering: CoClusterResult,
    pub appearances: Vec<f64>,
    pub importance: Vec<f64>,
    pub ranking_iterations: usize,
    pub hierarchy: Hierarchy,
}

fn tokenizer(cfg: &PipelineConfig) -> Result<Tokenizer, PipelineError> {
    match &cfg.tokenizer.stopwords {
        Some(p) => Tokenizer::from_stopword_file(p, cfg.tokenizer.min_freq).map_err(at!(Stage::Corpus)),
        None => Ok(Tokenizer::english(cfg.tokenizer.min_freq)),
    }
}

fn fit_sources(cfg: &PipelineConfig, qc: &QueryCollection, tok: &Tokenizer) -> Result<Vec<(TopicModel, Vocabulary)>, PipelineError> {
    let mut inputs = Vec::new();
    for source in Source::ALL {
        let items = qc.items(source);
        if items.is_empty() {
            log::warn!("no {source} items; source skipped");
            continue;
        }
        let vocab = match build_vocabulary(items, tok) {
            Ok(v) => v,
            Err(CorpusError::EmptyVocabulary) => {
                log::warn!("no {source} word reaches min_freq {}; source skipped", tok.min_freq);
                continue;
            }
            Err(e) => return Err(fail(Stage::Corpus)(&e)),
        };
        let docs: Vec<Document> = items.iter().map(|it| Document::new(it.id.clone(), vocab.encode(&it.text, tok))).collect();
        inputs.push((source, vocab, docs));
    }
    let fitted: Vec<Result<TopicModel, TopicError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .iter()
            .map(|(source, vocab, docs)| {
                let hcfg = cfg.hlda_config(*source);
                scope.spawn(move || fit_hlda(docs, vocab.len(), *source, &hcfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("topic model thread panicked")).collect()
    });
    let mut models = Vec::new();
    for ((source, vocab, _), model) in inputs.into_iter().zip(fitted) {
        let model = model.map_err(|e| fail(Stage::Topics)(&format!("{source}: {e}")))?;
        log::info!("{source}: {} leaf topics", model.leaf_count());
        models.push((model, vocab));
    }
    if models.is_empty() {
        return Err(fail(Stage::Topics)(&"no source has modelable text"));
    }
    Ok(models)
}

/// Runs every stage in memory.
pub fn execute(cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let ingested = ingest(&cfg.input).map_err(at!(Stage::Corpus))?;
    for v in &ingested.violations {
        log::warn!("{}: line {}: {}", cfg.input.display(), v.line, v.message);
    }
    let mut collection = ingested.collection;
    if let Some(q) = &cfg.query {
        collection.query = q.clone();
    }
    let tok = tokenizer(cfg)?;
    let models = fit_sources(cfg, &collection, &tok)?;

    // Hashtag leaf distributions, widened to the unified topic columns below.
    let mut profiles = Vec::new();
    let mut leaf_dists = Vec::new();
    let mut dropped = Vec::new();
    for mut p in extract_hashtag_profiles(&collection) {
        let Some((model, _)) = models.iter().find(|(m, _)| m.source == p.source) else {
            dropped.push(p.key());
            continue;
        };
        match hashtag_topic_distribution(model, &p) {
            Ok(d) => {
                p.set_topic_dist(d.clone()).map_err(at!(Stage::Topics))?;
                leaf_dists.push(d);
                profiles.push(p);
            }
            Err(TopicError::NoModeledItems(_)) => dropped.push(p.key()),
            Err(e) => return Err(fail(Stage::Topics)(&e)),
        }
    }
    if !dropped.is_empty() {
        log::warn!("{} hashtags without modeled items dropped", dropped.len());
    }

    let vocab = Vocabulary::union(models.iter().map(|(_, v)| v));
    let table = load_similarity(&cfg.walk.similarity, &vocab).map_err(at!(Stage::WordGraph))?;
    let transition = build_transition(&table, cfg.walk.threshold).map_err(at!(Stage::WordGraph))?;
    let pairs: Vec<(&TopicModel, &Vocabulary)> = models.iter().map(|(m, v)| (m, v)).collect();
    let topics = unify_topics(&pairs, &vocab, &transition, &cfg.walk_config()).map_err(at!(Stage::WordGraph))?;

    let offsets = topics.source_offsets();
    let n_topics = topics.len();
    let mut h = DMatrix::zeros(profiles.len(), n_topics);
    for (i, (p, d)) in profiles.iter().zip(&leaf_dists).enumerate() {
        for (leaf, &w) in d.iter().enumerate() {
            h[(i, offsets[p.source.index()] + leaf)] = w;
        }
    }
    let t = topics.matrix();
    let o = build_cooccurrence(&profiles, &collection).to_dense();
    let mass = profiles.iter().map(|p| p.item_ids.len() as f64).collect();
    let problem = CoClusterProblem::new(h.clone(), t.clone(), o)
        .and_then(|p| p.with_row_mass(mass))
        .map_err(at!(Stage::CoCluster))?;

    let col_clusters = cfg.cocluster.col_clusters.min(n_topics);
    if col_clusters < cfg.cocluster.col_clusters {
        log::warn!("{} topic clusters requested but only {n_topics} topics exist; using {n_topics}", cfg.cocluster.col_clusters);
    }
    let cc_cfg = CoClusterConfig {
        row_clusters: cfg.cocluster.row_clusters,
        col_clusters,
        lambda_topic: cfg.cocluster.lambda_topic,
        lambda_cooccur: cfg.cocluster.lambda_cooccur,
        max_iter: cfg.cocluster.max_iter,
        tol: cfg.cocluster.tol,
        seed: cfg.cocluster.seed,
    };
    let clustering = choose_restart(&problem, &cc_cfg, cfg.cocluster.restarts).map_err(at!(Stage::CoCluster))?;

    let rows: Vec<Vec<f64>> = h.row_iter().map(|r| r.iter().copied().collect()).collect();
    let l = cc_cfg.row_clusters;
    let cluster_dists = cluster_topic_dist(&clustering.rho, &clustering.hashtag_weights, &rows, l).map_err(at!(Stage::Ranking))?;
    let kappa = if l >= 2 {
        semantic_relevance(&cluster_dists).map_err(at!(Stage::Ranking))?.kappa
    } else {
        DMatrix::from_element(1, 1, 1.0)
    };
    let appearances = appearance_counts(&clustering.rho, &profiles, &collection, l);
    let ranking = rank_clusters(&kappa, &appearances, cfg.ranking.psi, cfg.ranking.tol, cfg.ranking.max_iter).map_err(at!(Stage::Ranking))?;
    let descriptions: Vec<Vec<String>> = cluster_dists
        .iter()
        .map(|d| describe_cluster(d, &t, &vocab, cfg.ranking.description_words).into_iter().map(|(w, _)| w).collect())
        .collect();
    let hierarchy = assemble_hierarchy(&collection, &profiles, &clustering.rho, &clustering.hashtag_weights, &ranking.eta, &descriptions);

    Ok(PipelineRun {
        collection,
        vocab,
        models,
        topics,
        profiles,
        dropped,
        col_clusters,
        clustering,
        appearances,
        importance: ranking.eta,
        ranking_iterations: ranking.iterations,
        hierarchy,
    })
}

impl PipelineRun {
    pub fn hierarchy_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.hierarchy).expect("hierarchy serializes");
        s.push('\n');
        s
    }

    /// Parameters, seeds, iteration counts and objective traces.
    pub fn run_log(&self, cfg: &PipelineConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# resolved configuration");
        s.push_str(&cfg.to_toml());
        let _ = writeln!(s, "\n# corpus");
        let _ = writeln!(s, "query = {}", self.collection.query);
        for source in Source::ALL {
            let _ = writeln!(s, "{source}_items = {}", self.collection.items(source).len());
        }
        let _ = writeln!(s, "unified_vocabulary = {}", self.vocab.len());
        let _ = writeln!(s, "\n# topics");
        for (m, v) in &self.models {
            let ll = m.log_likelihood();
            let _ = writeln!(
                s,
                "{} seed={} vocabulary={} leaves={} sweeps={} final_log_likelihood={:.6}",
                m.source,
                cfg.hlda_config(m.source).seed,
                v.len(),
                m.leaf_count(),
                ll.len(),
                ll.last().copied().unwrap_or(f64::NAN)
            );
        }
        let _ = writeln!(s, "walk_iterations = {:?}", self.topics.iterations);
        let _ = writeln!(s, "\n# cocluster");
        let _ = writeln!(s, "hashtags = {}", self.profiles.len());
        let _ = writeln!(s, "dropped_hashtags = {:?}", self.dropped);
        let _ = writeln!(s, "topics = {}", self.topics.len());
        let _ = writeln!(s, "col_clusters_used = {}", self.col_clusters);
        let _ = writeln!(s, "chosen_seed = {}", self.clustering.seed);
        let _ = writeln!(s, "iterations = {}", self.clustering.iterations);
        let trace: Vec<String> = self.clustering.objective_trace.iter().map(|v| format!("{v:.12e}")).collect();
        let _ = writeln!(s, "objective_trace = [{}]", trace.join(", "));
        let _ = writeln!(s, "\n# ranking");
        let _ = writeln!(s, "appearances = {:?}", self.appearances);
        let _ = writeln!(s, "importance = {:?}", self.importance);
        let _ = writeln!(s, "iterations = {}", self.ranking_iterations);
        s
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Static, script-free page mirroring `hierarchy.json`.
pub fn render_report(h: &Hierarchy) -> String {
    let mut s = String::new();
    let q = escape(&h.query);
    let _ = writeln!(s, "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{q}</title>");
    let _ = writeln!(
        s,
        "<style>body{{font-family:sans-serif;max-width:60em;margin:auto}}section{{border-top:1px solid #ccc}}.meta{{color:#666}}</style>\n</head>\n<body>"
    );
    let _ = writeln!(s, "<h1>{q}</h1>");
    for c in &h.clusters {
        let _ = writeln!(s, "<section id=\"cluster-{}\">", c.rank);
        let _ = writeln!(s, "<h2>{}. {}</h2>", c.rank, escape(&c.description.join(" ")));
        let _ = writeln!(s, "<p class=\"meta\">importance {:.6}</p>", c.importance);
        for t in &c.hashtags {
            let _ = writeln!(s, "<h3>#{} <span class=\"meta\">{} · {:.4}</span></h3>\n<ol>", escape(&t.tag), t.source, t.weight);
            for it in &t.items {
                let _ = writeln!(
                    s,
                    "<li data-id=\"{}\"><span class=\"meta\">{} · {} comments · {} endorsements</span> {}</li>",
                    escape(&it.id),
                    it.timestamp,
                    it.comments,
                    it.endorsements,
                    escape(&it.text)
                );
            }
            let _ = writeln!(s, "</ol>");
        }
        let _ = writeln!(s, "</section>");
    }
    let _ = writeln!(s, "</body>\n</html>");
    s
}

/// Writes `hierarchy.json`, `report.html` and `run_log` into `dir`. Each file
/// goes to a temporary name first, so a failed write leaves no partial file.
pub fn write_outputs(run: &PipelineRun, cfg: &PipelineConfig, dir: &Path) -> Result<(), PipelineError> {
    let contents = [
        ("hierarchy.json", run.hierarchy_json()),
        ("report.html", render_report(&run.hierarchy)),
        ("run_log", run.run_log(cfg)),
    ];
    std::fs::create_dir_all(dir).map_err(|e| fail(Stage::Output)(&format!("{}: {e}", dir.display())))?;
    let mut staged = Vec::new();
    for (name, text) in &contents {
        let mut tmp = NamedTempFile::new_in(dir).map_err(at!(Stage::Output))?;
        tmp.write_all(text.as_bytes()).map_err(at!(Stage::Output))?;
        tmp.as_file().sync_all().map_err(at!(Stage::Output))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| fail(Stage::Output)(&format!("{}: {}", target.display(), e.error)))?;
    }
    Ok(())
}

/// Loads the config, applies overrides, runs and writes. Returns the run
/// and the output directory used.
pub fn run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<(PipelineRun, PathBuf), PipelineError> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(o) = out {
        cfg.output = o.to_path_buf();
    }
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let result = execute(&cfg)?;
    write_outputs(&result, &cfg, &cfg.output)?;
    Ok((result, cfg.output))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
input = "data/q.jsonl"
output = "out"

[walk]
similarity = "sim.tsv"

[cocluster]
row_clusters = 3
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.hlda, HldaSection::default());
        assert_eq!(cfg.hlda.alpha, 10.0);
        assert_eq!(cfg.walk.alpha, 0.5);
        assert_eq!(cfg.cocluster.col_clusters, 20);
        assert_eq!(cfg.cocluster.lambda_topic, 1.0);
        assert_eq!(cfg.ranking.psi, 0.5);
        assert_eq!(cfg.ranking.description_words, 8);
        assert_eq!(cfg.tokenizer.min_freq, 2);
    }

    #[test]
    fn row_clusters_required_and_unknown_keys_rejected() {
        let missing = MINIMAL.replace("row_clusters = 3", "");
        let err = PipelineConfig::from_toml(&missing).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
        assert!(err.message.contains("row_clusters"));
        let extra = format!("{MINIMAL}bogus = 1\n");
        assert!(PipelineConfig::from_toml(&extra).is_err());
    }

    #[test]
    fn toml_round_trip_and_path_resolution() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.input, Path::new("/base/data/q.jsonl"));
        assert_eq!(cfg.walk.similarity, Path::new("/base/sim.tsv"));
        let seeded = cfg.with_seed(9);
        assert_eq!((seeded.hlda.seed, seeded.cocluster.seed), (9, 9));
    }

    #[test]
    fn report_escapes_text() {
        let h = Hierarchy {
            query: "a<b".into(),
            clusters: vec![crate::ranking::HierarchyCluster {
                rank: 1,
                importance: 1.0,
                description: vec!["x&y".into()],
                hashtags: vec![crate::ranking::HierarchyHashtag {
                    tag: "t".into(),
                    source: Source::Twitter,
                    weight: 1.0,
                    items: vec![crate::ranking::HierarchyItem {
                        id: "i\"1".into(),
                        timestamp: 3,
                        text: "<script>alert(1)</script>".into(),
                        comments: 0,
                        endorsements: 0,
                    }],
                }],
            }],
        };
        let html = render_report(&h);
        assert!(!html.contains("<script"));
        assert!(html.contains("a&lt;b"));
        assert!(html.contains("x&amp;y"));
        assert!(html.contains("data-id=\"i&quot;1\""));
    }
}
