//! Cluster ranking, cluster descriptions and the cluster-hashtag-item hierarchy.
//!
//! Importance scores trade each cluster's appearance count `U` against
//! smoothness over a semantic relevance graph `κ`:
//!
//! ```text
//! η ← (η S + ψ U) / (1 + ψ),   S = D^-1/2 κ D^-1/2
//! ```
//!
//! whose fixed point is `η* = ψ U ((1 + ψ) I − S)^-1`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{HashtagProfile, QueryCollection, Source, Vocabulary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankingError {
    #[error("cluster {0} has no hashtags")]
    EmptyCluster(usize),
    #[error("semantic relevance needs at least two clusters, got {0}")]
    TooFewClusters(usize),
    #[error("psi must be positive, got {0}")]
    InvalidPsi(f64),
    #[error("relevance entries must be non-negative")]
    NegativeRelevance,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ranking did not converge after {iterations} iterations (L1 change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },
    #[error("ranking system is singular")]
    Singular,
}

/// Topic distribution of each hashtag cluster: the `p(h|C)`-weighted mix of
/// its hashtags' topic distributions.
pub fn cluster_topic_dist(rho: &[usize], weights: &[f64], dists: &[Vec<f64>], clusters: usize) -> Result<Vec<Vec<f64>>, RankingError> {
    if weights.len() != rho.len() || dists.len() != rho.len() {
        return Err(RankingError::Dimension(format!(
            "{} assignments, {} weights, {} distributions",
            rho.len(),
            weights.len(),
            dists.len()
        )));
    }
    let width = dists.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; width]; clusters];
    let mut seen = vec![false; clusters];
    for ((&l, &w), d) in rho.iter().zip(weights).zip(dists) {
        if d.len() != width {
            return Err(RankingError::Dimension("topic distributions differ in length".into()));
        }
        seen[l] = true;
        for (acc, &p) in out[l].iter_mut().zip(d) {
            *acc += w * p;
        }
    }
    if let Some(l) = seen.iter().position(|&s| !s) {
        return Err(RankingError::EmptyCluster(l));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relevance {
    pub kappa: DMatrix<f64>,
    pub sigma: f64,
    /// All clusters coincide; `kappa` is all ones by convention.
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian kernel between cluster topic distributions, with bandwidth the
/// mean pairwise Euclidean distance.
pub fn semantic_relevance(clusters: &[Vec<f64>]) -> Result<Relevance, RankingError> {
    let n = clusters.len();
    if n < 2 {
        return Err(RankingError::TooFewClusters(n));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sq_dist(&clusters[i], &clusters[j]).sqrt();
        }
    }
    let sigma = total / (n * (n - 1) / 2) as f64;
    if sigma == 0.0 {
        log::warn!("all {n} clusters share one topic distribution; relevance set to 1");
        return Ok(Relevance {
            kappa: DMatrix::from_element(n, n, 1.0),
            sigma,
            degenerate: true,
        });
    }
    let kappa = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (-sq_dist(&clusters[i], &clusters[j]) / (2.0 * sigma * sigma)).exp()
        }
    });
    Ok(Relevance {
        kappa,
        sigma,
        degenerate: false,
    })
}

/// `D^-1/2 κ D^-1/2` with `D` the row sums of `κ`; zero-degree rows stay zero.
pub fn normalized_affinity(kappa: &DMatrix<f64>) -> DMatrix<f64> {
    let inv_sqrt: Vec<f64> = kappa
        .row_iter()
        .map(|r| {
            let d = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(kappa.nrows(), kappa.ncols(), |i, j| inv_sqrt[i] * kappa[(i, j)] * inv_sqrt[j])
}

fn check_inputs(kappa: &DMatrix<f64>, u: &[f64], psi: f64) -> Result<(), RankingError> {
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(RankingError::InvalidPsi(psi));
    }
    if !kappa.is_square() || kappa.nrows() != u.len() {
        return Err(RankingError::Dimension(format!(
            "relevance is {}x{}, {} appearance counts",
            kappa.nrows(),
            kappa.ncols(),
            u.len()
        )));
    }
    if kappa.iter().any(|&k| k.is_nan() || k < 0.0) {
        return Err(RankingError::NegativeRelevance);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub eta: Vec<f64>,
    pub iterations: usize,
}

/// Iterates the importance update from `η = U` until the L1 change drops
/// below `tol`.
pub fn rank_clusters(kappa: &DMatrix<f64>, u: &[f64], psi: f64, tol: f64, max_iter: usize) -> Result<Ranking, RankingError> {
    check_inputs(kappa, u, psi)?;
    let s = normalized_affinity(kappa);
    let u = DVector::from_column_slice(u);
    let mut eta = u.clone();
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        // S is symmetric, so η S and S η coincide.
        let next = (&s * &eta + psi * &u) / (1.0 + psi);
        change = (&next - &eta).lp_norm(1);
        eta = next;
        if change < tol {
            return Ok(Ranking {
                eta: eta.iter().copied().collect(),
                iterations: it,
            });
        }
    }
    Err(RankingError::NonConvergence {
        iterations: max_iter,
        change,
    })
}

/// Direct solve of the importance fixed point.
pub fn rank_clusters_closed_form(kappa: &DMatrix<f64>, u: &[f64], psi: f64) -> Result<Vec<f64>, RankingError> {
    check_inputs(kappa, u, psi)?;
    let n = u.len();
    let s = normalized_affinity(kappa);
    let system = DMatrix::<f64>::identity(n, n) * (1.0 + psi) - s;
    let rhs = DVector::from_column_slice(u) * psi;
    // η A = ψU with A symmetric is the same as A η = ψU.
    let eta = system.lu().solve(&rhs).ok_or(RankingError::Singular)?;
    Ok(eta.iter().copied().collect())
}

/// Occurrences of each cluster's hashtags over the original (non-extended)
/// result items.
pub fn appearance_counts(rho: &[usize], profiles: &[HashtagProfile], qc: &QueryCollection, clusters: usize) -> Vec<f64> {
    let index: BTreeMap<(Source, &str), usize> = profiles.iter().enumerate().map(|(i, p)| ((p.source, p.tag.as_str()), i)).collect();
    let mut u = vec![0.0; clusters];
    for item in qc.iter().filter(|it| !it.extended) {
        for tag in &item.hashtags {
            if let Some(&i) = index.get(&(item.source, tag.as_str())) {
                u[rho[i]] += 1.0;
            }
        }
    }
    u
}

/// Word scores of a cluster, `Σ_t p(t|C) p(w|t)`, for every word.
pub fn cluster_word_scores(topic_dist: &[f64], topic_words: &DMatrix<f64>) -> Vec<f64> {
    (0..topic_words.ncols())
        .map(|w| topic_dist.iter().enumerate().map(|(t, &p)| p * topic_words[(t, w)]).sum())
        .collect()
}

/// Top `k` words of a cluster by score, ties in lexicographic order.
pub fn describe_cluster(topic_dist: &[f64], topic_words: &DMatrix<f64>, vocab: &Vocabulary, k: usize) -> Vec<(String, f64)> {
    let scores = cluster_word_scores(topic_dist, topic_words);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| vocab.word(a).cmp(vocab.word(b))));
    order.into_iter().take(k).map(|w| (vocab.word(w).to_string(), scores[w])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyItem {
    pub id: String,
    pub timestamp: u64,
    pub text: String,
    pub comments: u64,
    pub endorsements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyHashtag {
    pub tag: String,
    pub source: Source,
    pub weight: f64,
    pub items: Vec<HierarchyItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyCluster {
    pub rank: usize,
    pub importance: f64,
    pub description: Vec<String>,
    pub hashtags: Vec<HierarchyHashtag>,
}

/// The ranked cluster → hashtag → item organization of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub query: String,
    pub clusters: Vec<HierarchyCluster>,
}

/// Orders clusters by importance (ties by cluster index), hashtags by weight
/// (ties by tag, then source) and items by timestamp (ties by id).
#[allow(clippy::too_many_arguments)]
pub fn assemble_hierarchy(
    qc: &QueryCollection,
    profiles: &[HashtagProfile],
    rho: &[usize],
    weights: &[f64],
    eta: &[f64],
    descriptions: &[Vec<String>],
) -> Hierarchy {
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    let by_id: BTreeMap<(Source, &str), &crate::corpus::Item> = qc.iter().map(|it| ((it.source, it.id.as_str()), it)).collect();

    let clusters = order
        .iter()
        .enumerate()
        .map(|(pos, &l)| {
            let mut members: Vec<usize> = (0..rho.len()).filter(|&i| rho[i] == l).collect();
            members.sort_by(|&a, &b| {
                weights[b]
                    .total_cmp(&weights[a])
                    .then_with(|| profiles[a].tag.cmp(&profiles[b].tag))
                    .then_with(|| profiles[a].source.cmp(&profiles[b].source))
            });
            let hashtags = members
                .into_iter()
                .map(|i| {
                    let p = &profiles[i];
                    let mut items: Vec<HierarchyItem> = p
                        .item_ids
                        .iter()
                        .filter_map(|id| by_id.get(&(p.source, id.as_str())))
                        .map(|it| HierarchyItem {
                            id: it.id.clone(),
                            timestamp: it.timestamp,
                            text: it.text.clone(),
                            comments: it.comments,
                            endorsements: it.endorsements,
                        })
                        .collect();
                    items.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
                    HierarchyHashtag {
                        tag: p.tag.clone(),
                        source: p.source,
                        weight: weights[i],
                        items,
                    }
                })
                .collect();
            HierarchyCluster {
                rank: pos + 1,
                importance: eta[l],
                description: descriptions.get(l).cloned().unwrap_or_default(),
                hashtags,
            }
        })
        .collect();
    Hierarchy {
        query: qc.query.clone(),
        clusters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_hashtag_profiles, Item};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cluster_dist_examples() {
        let d = cluster_topic_dist(&[0], &[1.0], &[vec![0.2, 0.8]], 1).unwrap();
        assert_eq!(d, vec![vec![0.2, 0.8]]);
        let d = cluster_topic_dist(&[0, 0], &[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]], 1).unwrap();
        assert_eq!(d, vec![vec![0.5, 0.5]]);
        // Hand-evaluated three-hashtag mix.
        let dists = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.2, 0.8], vec![1.0, 0.0, 0.0]];
        let d = cluster_topic_dist(&[0, 0, 1], &[0.25, 0.75, 1.0], &dists, 2).unwrap();
        assert_abs_diff_eq!(d[0][0], 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(d[0][1], 0.275, epsilon = 1e-15);
        assert_abs_diff_eq!(d[0][2], 0.6, epsilon = 1e-15);
        assert_eq!(d[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(cluster_topic_dist(&[0], &[1.0], &[vec![1.0]], 2), Err(RankingError::EmptyCluster(1)));
    }

    #[test]
    fn relevance_examples() {
        let r = semantic_relevance(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        assert!(r.degenerate);
        assert!(r.kappa.iter().all(|&k| k == 1.0));

        let r = semantic_relevance(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(r.sigma, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.kappa[(0, 1)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.kappa[(0, 1)], 0.6065306597, epsilon = 1e-9);
        assert!(matches!(semantic_relevance(&[vec![1.0]]), Err(RankingError::TooFewClusters(1))));
    }

    #[test]
    fn ranking_two_by_two() {
        let kappa = DMatrix::from_element(2, 2, 1.0);
        let closed = rank_clusters_closed_form(&kappa, &[1.0, 0.0], 0.5).unwrap();
        assert_abs_diff_eq!(closed[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(closed[1], 1.0 / 3.0, epsilon = 1e-12);
        let it = rank_clusters(&kappa, &[1.0, 0.0], 0.5, 1e-12, 10_000).unwrap();
        assert_abs_diff_eq!(it.eta[0], 2.0 / 3.0, epsilon = 1e-10);

        let sym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let eta = rank_clusters(&sym, &[1.0, 1.0], 0.5, 1e-12, 10_000).unwrap().eta;
        assert_eq!(eta[0], eta[1]);
    }

    #[test]
    fn ranking_rejects_bad_inputs() {
        let k = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(rank_clusters(&k, &[1.0, 1.0], 0.0, 1e-9, 10), Err(RankingError::InvalidPsi(0.0)));
        assert!(matches!(rank_clusters(&k, &[1.0], 0.5, 1e-9, 10), Err(RankingError::Dimension(_))));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, -0.1, 1.0]);
        assert_eq!(rank_clusters_closed_form(&neg, &[1.0, 1.0], 0.5), Err(RankingError::NegativeRelevance));
        assert!(matches!(rank_clusters(&k, &[1.0, 0.0], 0.5, 0.0, 5), Err(RankingError::NonConvergence { .. })));
    }

    fn vocab_ab() -> Vocabulary {
        Vocabulary::from_words(["a", "b"])
    }

    #[test]
    fn description_examples() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let d = describe_cluster(&[0.5, 0.5], &t, &vocab_ab(), 8);
        assert_eq!(d, vec![("a".to_string(), 0.5), ("b".to_string(), 0.5)]);

        let t = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 0.6, 0.4]);
        let d = describe_cluster(&[1.0, 0.0], &t, &vocab_ab(), 1);
        assert_eq!(d, vec![("b".to_string(), 0.9)]);

        // Three-topic mixture by hand: a = .2*.5+.3*.1+.5*.7, b = 1 - a.
        let t = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.1, 0.9, 0.7, 0.3]);
        let d = describe_cluster(&[0.2, 0.3, 0.5], &t, &vocab_ab(), 2);
        assert_eq!(d[0].0, "b");
        assert_abs_diff_eq!(d[0].1, 0.52, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1].1, 0.48, epsilon = 1e-12);
    }

    fn fixture() -> (QueryCollection, Vec<HashtagProfile>) {
        let items = vec![
            Item::new("t1", Source::Twitter, "x", ["#a"]).with_timestamp(30),
            Item::new("t2", Source::Twitter, "x", ["#a", "#b"]).with_timestamp(10),
            Item::new("t3", Source::Twitter, "x", ["#a"]).with_timestamp(20),
            {
                let mut it = Item::new("t4", Source::Twitter, "x", ["#b"]).with_timestamp(5);
                it.extended = true;
                it
            },
            Item::new("f1", Source::Flickr, "x", ["#a"]).with_timestamp(1),
        ];
        let qc = QueryCollection::from_items("q", items);
        let profiles = extract_hashtag_profiles(&qc);
        (qc, profiles)
    }

    #[test]
    fn appearance_counts_skip_extended_items() {
        let (qc, profiles) = fixture();
        let keys: Vec<String> = profiles.iter().map(HashtagProfile::key).collect();
        assert_eq!(keys, ["twitter:a", "twitter:b", "flickr:a"]);
        let u = appearance_counts(&[0, 1, 1], &profiles, &qc, 2);
        assert_eq!(u, vec![3.0, 2.0]);
    }

    #[test]
    fn hierarchy_ordering() {
        let (qc, profiles) = fixture();
        let h = assemble_hierarchy(&qc, &profiles, &[1, 0, 1], &[0.4, 1.0, 0.6], &[0.2, 0.7], &[vec!["w0".into()], vec!["w1".into()]]);
        assert_eq!(h.query, "q");
        assert_eq!(h.clusters[0].rank, 1);
        assert_eq!(h.clusters[0].importance, 0.7);
        assert_eq!(h.clusters[0].description, ["w1"]);
        let tags: Vec<(&str, Source)> = h.clusters[0].hashtags.iter().map(|t| (t.tag.as_str(), t.source)).collect();
        assert_eq!(tags, [("a", Source::Flickr), ("a", Source::Twitter)]);
        let times: Vec<u64> = h.clusters[0].hashtags[1].items.iter().map(|i| i.timestamp).collect();
        assert_eq!(times, [10, 20, 30]);
        assert_eq!(h.clusters[1].hashtags[0].items.len(), 2);
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, f64)> {
        (2usize..=20, 2usize..6).prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), n),
                prop::collection::vec(0.0f64..50.0, n),
                0.05f64..5.0,
            )
        })
    }

    proptest! {
        #[test]
        fn iterative_matches_closed_form((dists, u, psi) in arb_instance()) {
            let kappa = semantic_relevance(&dists).unwrap().kappa;
            let it = rank_clusters(&kappa, &u, psi, 1e-12, 100_000).unwrap();
            let closed = rank_clusters_closed_form(&kappa, &u, psi).unwrap();
            let gap: f64 = it.eta.iter().zip(&closed).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(gap < 1e-8 * (1.0 + closed.iter().sum::<f64>()));
            prop_assert!(closed.iter().all(|&e| e >= -1e-12));
        }

        #[test]
        fn scaling_u_scales_eta((dists, u, psi) in arb_instance(), c in 0.1f64..10.0) {
            let kappa = semantic_relevance(&dists).unwrap().kappa;
            let a = rank_clusters_closed_form(&kappa, &u, psi).unwrap();
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            let b = rank_clusters_closed_form(&kappa, &scaled, psi).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * c - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn relevance_symmetric_and_order_invariant((dists, _u, _psi) in arb_instance(), rot in 0usize..20) {
            let r = semantic_relevance(&dists).unwrap();
            let n = dists.len();
            for i in 0..n {
                prop_assert_eq!(r.kappa[(i, i)], 1.0);
                for j in 0..n {
                    prop_assert_eq!(r.kappa[(i, j)], r.kappa[(j, i)]);
                    prop_assert!(r.kappa[(i, j)] > 0.0);
                }
            }
            let k = rot % n;
            let mut rotated = dists.clone();
            rotated.rotate_left(k);
            let r2 = semantic_relevance(&rotated).unwrap();
            prop_assert!((r.sigma - r2.sigma).abs() <= 1e-12 * r.sigma.max(1e-300));
            for i in 0..n {
                for j in 0..n {
                    let a = r.kappa[((i + k) % n, (j + k) % n)];
                    prop_assert!((a - r2.kappa[(i, j)]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn word_scores_sum_to_one(n in 1usize..6, w in 1usize..10, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut t = DMatrix::from_fn(n, w, |_, _| rng.gen::<f64>() + 1e-3);
            for mut row in t.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            let mut mix: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = mix.iter().sum();
            mix.iter_mut().for_each(|m| *m /= s);
            let total: f64 = cluster_word_scores(&mix, &t).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
