//! Planted-structure generators with known ground truth.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::corpus::{write_jsonl, Item, Media, QueryCollection, Source};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid planted spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub n_subtopics: usize,
    /// Hashtags per subtopic on each source.
    pub tags_per_subtopic: usize,
    /// Items per hashtag for the smallest subtopic.
    pub items_per_tag: usize,
    /// Extra items per hashtag for each step up in subtopic size; subtopic 0
    /// is the largest.
    pub size_step: usize,
    pub words_per_subtopic: usize,
    pub words_per_item: usize,
    /// Probability that a token is drawn from the whole vocabulary instead
    /// of the item's subtopic block.
    pub noise: f64,
    /// Probability that an item also carries a second hashtag of its own
    /// subtopic and source.
    pub cotag_rate: f64,
    pub seed: u64,
    pub query: String,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_subtopics: 3,
            tags_per_subtopic: 2,
            items_per_tag: 10,
            size_step: 0,
            words_per_subtopic: 20,
            words_per_item: 12,
            noise: 0.0,
            cotag_rate: 0.0,
            seed: 0,
            query: "planted".into(),
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let counts = [
            ("n_subtopics", self.n_subtopics),
            ("tags_per_subtopic", self.tags_per_subtopic),
            ("items_per_tag", self.items_per_tag),
            ("words_per_subtopic", self.words_per_subtopic),
            ("words_per_item", self.words_per_item),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(SynthError::InvalidSpec(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(SynthError::InvalidSpec(format!("noise {} outside [0, 1)", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.cotag_rate) {
            return Err(SynthError::InvalidSpec(format!("cotag rate {} outside [0, 1]", self.cotag_rate)));
        }
        if self.query.trim().is_empty() {
            return Err(SynthError::InvalidSpec("query must not be empty".into()));
        }
        Ok(())
    }

    /// Items per hashtag of subtopic `k`.
    pub fn items_for(&self, k: usize) -> usize {
        self.items_per_tag + (self.n_subtopics - 1 - k) * self.size_step
    }
}

/// Word `j` of subtopic `k`'s block.
pub fn word_name(k: usize, j: usize) -> String {
    format!("s{k}w{j}")
}

pub fn tag_name(k: usize, source: Source, j: usize) -> String {
    format!("s{k}_{source}_{j}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub collection: QueryCollection,
    /// `source:tag` → subtopic.
    pub tag_labels: BTreeMap<String, usize>,
    /// item id → subtopic.
    pub item_labels: BTreeMap<String, usize>,
    /// Similar word pairs: consecutive words within a subtopic block.
    pub similarity: Vec<(String, String, f64)>,
}

/// Planted corpus: every subtopic owns a disjoint word block shared across
/// sources; every hashtag belongs to one subtopic and one source.
pub fn generate_corpus(spec: &PlantedSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total_words = spec.n_subtopics * spec.words_per_subtopic;
    let mut items = Vec::new();
    let mut tag_labels = BTreeMap::new();
    let mut item_labels = BTreeMap::new();

    for source in Source::ALL {
        for k in 0..spec.n_subtopics {
            for j in 0..spec.tags_per_subtopic {
                let tag = tag_name(k, source, j);
                tag_labels.insert(format!("{source}:{tag}"), k);
                for n in 0..spec.items_for(k) {
                    let words: Vec<String> = (0..spec.words_per_item)
                        .map(|_| {
                            if rng.gen::<f64>() < spec.noise {
                                let w = rng.gen_range(0..total_words);
                                word_name(w / spec.words_per_subtopic, w % spec.words_per_subtopic)
                            } else {
                                word_name(k, rng.gen_range(0..spec.words_per_subtopic))
                            }
                        })
                        .collect();
                    let mut tags = vec![format!("#{tag}")];
                    if spec.tags_per_subtopic > 1 && rng.gen::<f64>() < spec.cotag_rate {
                        let other = (j + rng.gen_range(1..spec.tags_per_subtopic)) % spec.tags_per_subtopic;
                        tags.push(format!("#{}", tag_name(k, source, other)));
                    }
                    let id = format!("{source}-{k}-{j}-{n}");
                    let mut item = Item::new(id.clone(), source, words.join(" "), tags).with_timestamp(rng.gen_range(1_000_000..2_000_000));
                    item.comments = rng.gen_range(0..50);
                    item.endorsements = rng.gen_range(0..200);
                    item.media = match source {
                        Source::Twitter => None,
                        Source::Flickr => Some(Media::Image {
                            width: 640 + 64 * rng.gen_range(0..16u32),
                            height: 480 + 48 * rng.gen_range(0..16u32),
                        }),
                        Source::YouTube => Some(Media::Video {
                            duration: rng.gen_range(30..600) as f64,
                        }),
                    };
                    item_labels.insert(id, k);
                    items.push(item);
                }
            }
        }
    }

    let similarity = (0..spec.n_subtopics)
        .flat_map(|k| (1..spec.words_per_subtopic).map(move |j| (word_name(k, j - 1), word_name(k, j), 0.6)))
        .collect();

    Ok(SynthCorpus {
        collection: QueryCollection::from_items(spec.query.clone(), items),
        tag_labels,
        item_labels,
        similarity,
    })
}

/// Where `write_fixture` put each file.
#[derive(Debug, Clone, PartialEq)]
pub struct FixturePaths {
    pub corpus: PathBuf,
    pub tag_truth: PathBuf,
    pub item_truth: PathBuf,
    pub similarity: PathBuf,
}

fn write_labels(path: &Path, labels: &BTreeMap<String, usize>) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "element,label")?;
    for (k, v) in labels {
        writeln!(out, "{k},{v}")?;
    }
    out.flush()
}

/// Writes `<query>.jsonl`, `tag_truth.csv`, `item_truth.csv` and
/// `similarity.tsv` into `dir`.
pub fn write_fixture(dir: &Path, corpus: &SynthCorpus) -> io::Result<FixturePaths> {
    std::fs::create_dir_all(dir)?;
    let paths = FixturePaths {
        corpus: dir.join(format!("{}.jsonl", corpus.collection.query)),
        tag_truth: dir.join("tag_truth.csv"),
        item_truth: dir.join("item_truth.csv"),
        similarity: dir.join("similarity.tsv"),
    };
    let mut out = BufWriter::new(File::create(&paths.corpus)?);
    write_jsonl(&mut out, corpus.collection.iter())?;
    out.flush()?;
    write_labels(&paths.tag_truth, &corpus.tag_labels)?;
    write_labels(&paths.item_truth, &corpus.item_labels)?;
    let mut out = BufWriter::new(File::create(&paths.similarity)?);
    for (a, b, s) in &corpus.similarity {
        writeln!(out, "{a}\t{b}\t{s}")?;
    }
    out.flush()?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub matrix: DMatrix<f64>,
    pub rho: Vec<usize>,
    pub gamma: Vec<usize>,
}

fn balanced_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    labels
}

/// Block-constant matrix with distinct block values in (0, 1] plus Gaussian
/// noise, clipped at 0.
pub fn generate_block_matrix(
    n_rows: usize,
    n_cols: usize,
    row_clusters: usize,
    col_clusters: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<BlockMatrix, SynthError> {
    if row_clusters == 0 || col_clusters == 0 || row_clusters > n_rows || col_clusters > n_cols {
        return Err(SynthError::InvalidSpec(format!(
            "{row_clusters}x{col_clusters} blocks do not fit a {n_rows}x{n_cols} matrix"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| SynthError::InvalidSpec(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = balanced_labels(n_rows, row_clusters, &mut rng);
    let gamma = balanced_labels(n_cols, col_clusters, &mut rng);
    let blocks = row_clusters * col_clusters;
    let mut values: Vec<f64> = (1..=blocks).map(|v| v as f64 / blocks as f64).collect();
    values.shuffle(&mut rng);
    let matrix = DMatrix::from_fn(n_rows, n_cols, |i, j| values[rho[i] * col_clusters + gamma[j]]);
    let matrix = if noise_sigma > 0.0 {
        matrix.map(|v| (v + noise.sample(&mut rng)).max(0.0))
    } else {
        matrix
    };
    Ok(BlockMatrix { matrix, rho, gamma })
}
