//! Evaluation measures: normalized Spearman's footrule, NMI, NDCG and
//! Pearson correlation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ranked list contains duplicate element at position {0}")]
    DuplicateElements(usize),
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("labelings cover different element sets")]
    DomainMismatch,
    #[error("empty input")]
    EmptyList,
    #[error("need at least two observations")]
    TooShort,
    #[error("k = {k} outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("relevance must be finite and non-negative")]
    InvalidRelevance,
    #[error("zero variance")]
    ZeroVariance,
}

/// Normalized footrule between two rankings, with the intermediate terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footrule {
    /// `1 - distance / max_distance`.
    pub nfr: f64,
    pub distance: u64,
    pub max_distance: u64,
    pub overlap: usize,
    /// Set when fewer than two elements overlap; `nfr` is then 1.0.
    pub degenerate: bool,
}

fn check_unique<T: Eq + Hash>(list: &[T]) -> Result<(), MetricError> {
    let mut seen = HashSet::with_capacity(list.len());
    match list.iter().position(|x| !seen.insert(x)) {
        Some(pos) => Err(MetricError::DuplicateElements(pos)),
        None => Ok(()),
    }
}

/// Largest footrule distance between two permutations of `n` elements.
pub fn max_footrule(n: usize) -> u64 {
    let n = n as u64;
    if n.is_multiple_of(2) {
        n * n / 2
    } else {
        (n + 1) * (n - 1) / 2
    }
}

/// Footrule over the elements both lists share. Ranks are re-indexed
/// 1..=|S| within the overlap, keeping each list's relative order.
pub fn footrule<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<Footrule, MetricError> {
    check_unique(a)?;
    check_unique(b)?;
    let in_b: HashSet<&T> = b.iter().collect();
    let in_a: HashSet<&T> = a.iter().collect();
    let a_overlap: Vec<&T> = a.iter().filter(|x| in_b.contains(x)).collect();
    let b_rank: HashMap<&T, usize> = b
        .iter()
        .filter(|x| in_a.contains(x))
        .enumerate()
        .map(|(r, x)| (x, r))
        .collect();
    let overlap = a_overlap.len();
    let distance: u64 = a_overlap
        .iter()
        .enumerate()
        .map(|(ra, x)| ra.abs_diff(b_rank[x]) as u64)
        .sum();
    let max_distance = max_footrule(overlap);
    if overlap <= 1 {
        return Ok(Footrule {
            nfr: 1.0,
            distance,
            max_distance,
            overlap,
            degenerate: true,
        });
    }
    Ok(Footrule {
        nfr: 1.0 - distance as f64 / max_distance as f64,
        distance,
        max_distance,
        overlap,
        degenerate: false,
    })
}

pub fn nfr<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    footrule(a, b).map(|f| f.nfr)
}

/// Cluster labels of a set of named elements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labeling {
    labels: BTreeMap<String, String>,
}

impl Labeling {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, element: impl Into<String>, label: impl Into<String>) {
        self.labels.insert(element.into(), label.into());
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, element: &str) -> Option<&str> {
        self.labels.get(element).map(String::as_str)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Labeling {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Labeling {
            labels: iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

/// NMI between two labelings of the same element set.
pub fn nmi_labelings(a: &Labeling, b: &Labeling) -> Result<f64, MetricError> {
    if a.len() != b.len() || a.labels.keys().ne(b.labels.keys()) {
        return Err(MetricError::DomainMismatch);
    }
    let la: Vec<&String> = a.labels.values().collect();
    let lb: Vec<&String> = b.labels.values().collect();
    nmi(&la, &lb)
}

/// NMI between two label vectors aligned by element position.
///
/// Entropies use `-Σ p ln p`. If either side has a single cluster the
/// entropy is zero and 0.0 is returned.
pub fn nmi<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let n = a.len() as f64;
    let ids_a = dense_ids(a);
    let ids_b = dense_ids(b);
    let ka = ids_a.iter().max().map_or(0, |m| m + 1);
    let kb = ids_b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut pa = vec![0usize; ka];
    let mut pb = vec![0usize; kb];
    for (&i, &j) in ids_a.iter().zip(&ids_b) {
        joint[i * kb + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let entropy = |counts: &[usize]| -> f64 {
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ka < 2 || kb < 2 || ha <= 0.0 || hb <= 0.0 {
        log::warn!("degenerate entropy in NMI (single-cluster labeling); returning 0");
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = joint[i * kb + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij / ((pa[i] as f64 / n) * (pb[j] as f64 / n))).ln();
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn dense_ids<T: Eq + Hash>(labels: &[T]) -> Vec<usize> {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

fn dcg(relevance: &[f64], k: usize) -> f64 {
    relevance[..k]
        .iter()
        .enumerate()
        .map(|(j, &r)| (2f64.powf(r) - 1.0) / ((j + 2) as f64).ln())
        .sum()
}

/// NDCG@k with gain `2^r - 1` and discount `ln(1 + j)` for rank `j`.
///
/// Returns 0.0 when the ideal DCG is zero.
pub fn ndcg(ranked: &[f64], ideal: &[f64], k: usize) -> Result<f64, MetricError> {
    if ranked.is_empty() || ideal.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let len = ranked.len().min(ideal.len());
    if k == 0 || k > len {
        return Err(MetricError::KOutOfRange { k, len });
    }
    if ranked.iter().chain(ideal).any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(MetricError::InvalidRelevance);
    }
    let z = dcg(ideal, k);
    if z == 0.0 {
        log::warn!("ideal DCG is zero; NDCG defined as 0");
        return Ok(0.0);
    }
    Ok(dcg(ranked, k) / z)
}

/// NDCG@k where the ideal ordering is `ranked` sorted by decreasing relevance.
pub fn ndcg_sorted_ideal(ranked: &[f64], k: usize) -> Result<f64, MetricError> {
    let mut ideal = ranked.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    ndcg(ranked, &ideal, k)
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn nfr_golden() {
        assert_eq!(nfr(&["a", "b", "c", "d"], &["a", "b", "c", "d"]).unwrap(), 1.0);
        assert_eq!(nfr(&["a", "b"], &["b", "a"]).unwrap(), 0.0);
        let f = footrule(&["a", "b", "c"], &["a", "c", "b"]).unwrap();
        assert_eq!((f.distance, f.max_distance), (2, 4));
        assert_eq!(f.nfr, 0.5);
    }

    #[test]
    fn nfr_uses_overlap_ranks() {
        // Overlap {b, c}: same relative order in both lists.
        let f = footrule(&["a", "b", "x", "c"], &["c0", "b", "c", "z"]).unwrap();
        assert_eq!(f.overlap, 2);
        assert_eq!(f.nfr, 1.0);
        let f = footrule(&["a"], &["b"]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.nfr, 1.0);
    }

    #[test]
    fn nfr_duplicates() {
        assert_eq!(nfr(&["a", "a"], &["a"]), Err(MetricError::DuplicateElements(1)));
    }

    #[test]
    fn max_footrule_matches_reversal() {
        for n in 1..12usize {
            let a: Vec<usize> = (0..n).collect();
            let b: Vec<usize> = (0..n).rev().collect();
            assert_eq!(footrule(&a, &b).unwrap().distance, max_footrule(n));
        }
    }

    #[test]
    fn nmi_golden() {
        assert_abs_diff_eq!(nmi(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(), 1.0, epsilon = 1e-12);
        // {1,2|3,4} vs {1,3|2,4}
        assert_abs_diff_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_by_element_name() {
        let a: Labeling = [("x", "1"), ("y", "1"), ("z", "2")].into_iter().collect();
        let b: Labeling = [("z", "q"), ("y", "p"), ("x", "p")].into_iter().collect();
        assert_abs_diff_eq!(nmi_labelings(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        let c: Labeling = [("x", "1"), ("w", "1"), ("z", "2")].into_iter().collect();
        assert_eq!(nmi_labelings(&a, &c), Err(MetricError::DomainMismatch));
    }

    #[test]
    fn ndcg_golden() {
        assert_eq!(ndcg_sorted_ideal(&[1.0, 1.0, 0.0], 3).unwrap(), 1.0);
        let v = ndcg(&[0.0, 1.0], &[1.0, 0.0], 2).unwrap();
        assert_abs_diff_eq!(v, 2f64.ln() / 3f64.ln(), epsilon = 1e-12);
        assert_eq!(ndcg_sorted_ideal(&[0.0, 0.0], 2).unwrap(), 0.0);
        assert_eq!(ndcg(&[], &[], 1), Err(MetricError::EmptyList));
        assert!(matches!(ndcg(&[1.0], &[1.0], 2), Err(MetricError::KOutOfRange { .. })));
    }

    #[test]
    fn pearson_golden() {
        assert_abs_diff_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(MetricError::TooShort));
    }

    fn perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn nfr_symmetric_and_bounded(a in (2usize..10).prop_flat_map(perm), b in (2usize..10).prop_flat_map(perm)) {
            let ab = nfr(&a, &b).unwrap();
            prop_assert_eq!(ab, nfr(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(nfr(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn nmi_symmetric_and_permutation_invariant(
            a in prop::collection::vec(0u8..4, 2..40),
            seed in prop::collection::vec(0u8..4, 40),
            relabel in Just(vec![3u8, 0, 2, 1]).prop_shuffle(),
        ) {
            let b: Vec<u8> = seed[..a.len()].to_vec();
            let v = nmi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - nmi(&b, &a).unwrap()).abs() < 1e-12);
            let a2: Vec<u8> = a.iter().map(|&x| relabel[x as usize]).collect();
            prop_assert!((v - nmi(&a2, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ndcg_ideal_is_one_and_swaps_hurt(rel in prop::collection::btree_set(0u32..50, 2..10), pos in 0usize..9) {
            let mut ideal: Vec<f64> = rel.iter().rev().map(|&r| f64::from(r) / 10.0).collect();
            let k = ideal.len();
            prop_assert!((ndcg(&ideal, &ideal, k).unwrap() - 1.0).abs() < 1e-12);
            let i = pos % (k - 1);
            let mut swapped = ideal.clone();
            swapped.swap(i, i + 1);
            let v = ndcg(&swapped, &ideal, k).unwrap();
            prop_assert!(v < 1.0);
            ideal.sort_by(|a, b| b.total_cmp(a));
            prop_assert!(v <= ndcg(&ideal, &ideal, k).unwrap());
        }

        #[test]
        fn pearson_affine_invariant(
            x in prop::collection::vec(-100.0f64..100.0, 3..20),
            noise in prop::collection::vec(-100.0f64..100.0, 20),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let y: Vec<f64> = noise[..x.len()].to_vec();
            if let Ok(r) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                prop_assert!((r - pearson(&x2, &y).unwrap()).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
