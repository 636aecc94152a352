//! Hashtag-topic co-clustering with bilateral regularization.
//!
//! Squared Euclidean Bregman co-clustering of the hashtag-topic matrix `H`
//! with block-average approximations, where the topic (column) assignment
//! is also asked to cluster the rows of the topic-word matrix `T`, and the
//! hashtag (row) assignment is also asked to cluster the rows of the
//! co-occurrence matrix `O`. The objective is
//!
//! ```text
//! |H - Ĥ|² / (Nh·Nt) + λT·|T - T̂|² / (Nt·W) + λO·|O - Ô|² / Nh²
//! ```
//!
//! where `Ĥ` holds block means over (row cluster, column cluster), `T̂`
//! replaces each topic's word row by its topic-cluster mean and `Ô` each
//! hashtag's co-occurrence row by its hashtag-cluster mean.
//!
//! Starting mappings come from k-means++ seeding on the rows and columns.
//! Each iteration recomputes those statistics, moves every topic to its
//! cheapest cluster, recomputes, then moves every hashtag. Each pass can
//! only lower the objective; an iteration that fails to (floating point
//! noise) is rolled back and ends the run.

use std::thread;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoClusterError {
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("matrix shapes disagree: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoClusterConfig {
    /// Hashtag clusters. Required; there is no default.
    pub row_clusters: usize,
    /// Topic clusters.
    pub col_clusters: usize,
    /// Weight of the topic-word term.
    pub lambda_topic: f64,
    /// Weight of the co-occurrence term.
    pub lambda_cooccur: f64,
    pub max_iter: usize,
    /// Stop once an iteration improves the objective by less than this.
    pub tol: f64,
    /// Drives the initial assignment only.
    pub seed: u64,
}

impl CoClusterConfig {
    pub fn new(row_clusters: usize, col_clusters: usize) -> Self {
        CoClusterConfig {
            row_clusters,
            col_clusters,
            lambda_topic: 1.0,
            lambda_cooccur: 1.0,
            max_iter: 100,
            tol: 0.0,
            seed: 0,
        }
    }
}

/// The three matrices plus the per-hashtag mass used for `p(h|C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoClusterProblem {
    pub h: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub o: DMatrix<f64>,
    /// Weight of each hashtag within its cluster, before normalization.
    pub row_mass: Vec<f64>,
}

impl CoClusterProblem {
    /// `h` is hashtags × topics, `t` topics × words, `o` hashtags × hashtags.
    /// Row mass defaults to uniform.
    pub fn new(h: DMatrix<f64>, t: DMatrix<f64>, o: DMatrix<f64>) -> Result<Self, CoClusterError> {
        if t.nrows() != h.ncols() {
            return Err(CoClusterError::Shape(format!(
                "H has {} topic columns but T has {} rows",
                h.ncols(),
                t.nrows()
            )));
        }
        if o.nrows() != h.nrows() || o.ncols() != h.nrows() {
            return Err(CoClusterError::Shape(format!(
                "O is {}x{}, expected {n}x{n}",
                o.nrows(),
                o.ncols(),
                n = h.nrows()
            )));
        }
        let row_mass = vec![1.0; h.nrows()];
        Ok(CoClusterProblem { h, t, o, row_mass })
    }

    pub fn with_row_mass(mut self, mass: Vec<f64>) -> Result<Self, CoClusterError> {
        if mass.len() != self.h.nrows() || mass.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(CoClusterError::Shape("row mass needs one positive entry per hashtag".into()));
        }
        self.row_mass = mass;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn cols(&self) -> usize {
        self.h.ncols()
    }

    fn words(&self) -> usize {
        self.t.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoClusterResult {
    /// Hashtag → row cluster, 0-based.
    pub rho: Vec<usize>,
    /// Topic → column cluster, 0-based.
    pub gamma: Vec<usize>,
    /// Objective of the initial assignment, then after every kept iteration.
    pub objective_trace: Vec<f64>,
    /// `p(h|C)` for each hashtag within its own cluster.
    pub hashtag_weights: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl CoClusterResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }

    /// Hashtag indices of row cluster `l`.
    pub fn members(&self, l: usize) -> Vec<usize> {
        (0..self.rho.len()).filter(|&i| self.rho[i] == l).collect()
    }
}

fn check_config(p: &CoClusterProblem, cfg: &CoClusterConfig) -> Result<(), CoClusterError> {
    let (nh, nt) = (p.rows(), p.cols());
    if cfg.row_clusters == 0 || cfg.row_clusters > nh {
        return Err(CoClusterError::InfeasibleConfig(format!(
            "{} hashtag clusters for {nh} hashtags",
            cfg.row_clusters
        )));
    }
    if cfg.col_clusters == 0 || cfg.col_clusters > nt {
        return Err(CoClusterError::InfeasibleConfig(format!(
            "{} topic clusters for {nt} topics",
            cfg.col_clusters
        )));
    }
    if !(cfg.lambda_topic >= 0.0 && cfg.lambda_cooccur >= 0.0) {
        return Err(CoClusterError::InfeasibleConfig("regularizer weights must be non-negative".into()));
    }
    Ok(())
}

/// Block-average approximation of `h`: every entry becomes the mean of its
/// (row cluster, column cluster) block. Empty blocks take the global mean.
pub fn mbi_approximation(h: &DMatrix<f64>, rho: &[usize], gamma: &[usize], row_clusters: usize, col_clusters: usize) -> DMatrix<f64> {
    let means = block_means(h, rho, gamma, row_clusters, col_clusters);
    DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| means[(rho[i], gamma[j])])
}

fn block_means(h: &DMatrix<f64>, rho: &[usize], gamma: &[usize], lr: usize, lc: usize) -> DMatrix<f64> {
    // Deviations from each block's first entry are summed so constant blocks
    // come out exact.
    let mut first = DMatrix::<f64>::zeros(lr, lc);
    let mut dev = DMatrix::<f64>::zeros(lr, lc);
    let mut counts = DMatrix::<f64>::zeros(lr, lc);
    for j in 0..h.ncols() {
        for i in 0..h.nrows() {
            let b = (rho[i], gamma[j]);
            if counts[b] == 0.0 {
                first[b] = h[(i, j)];
            }
            dev[b] += h[(i, j)] - first[b];
            counts[b] += 1.0;
        }
    }
    let global = if h.is_empty() { 0.0 } else { h.mean() };
    DMatrix::from_fn(lr, lc, |r, c| {
        let n = counts[(r, c)];
        if n > 0.0 {
            first[(r, c)] + dev[(r, c)] / n
        } else {
            global
        }
    })
}

/// Mean row of `m` within each cluster of `labels`; empty clusters get the
/// global mean row.
fn row_centroids(m: &DMatrix<f64>, labels: &[usize], k: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::<f64>::zeros(k, m.ncols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..m.ncols() {
            sums[(l, j)] += m[(i, j)];
        }
    }
    let n = m.nrows().max(1) as f64;
    let global: Vec<f64> = (0..m.ncols()).map(|j| m.column(j).sum() / n).collect();
    for (l, &c) in counts.iter().enumerate() {
        for j in 0..m.ncols() {
            sums[(l, j)] = if c > 0 { sums[(l, j)] / c as f64 } else { global[j] };
        }
    }
    sums
}

fn scaled(weight: f64, total: f64, denom: usize) -> f64 {
    if denom == 0 || weight == 0.0 {
        0.0
    } else {
        weight * total / denom as f64
    }
}

/// The regularized co-clustering objective of a pair of mappings.
pub fn objective(p: &CoClusterProblem, rho: &[usize], gamma: &[usize], cfg: &CoClusterConfig) -> f64 {
    let (lr, lc) = (cfg.row_clusters, cfg.col_clusters);
    let (nh, nt, nw) = (p.rows(), p.cols(), p.words());
    let h_hat = mbi_approximation(&p.h, rho, gamma, lr, lc);
    let h_term = (&p.h - h_hat).norm_squared();
    let t_term = if cfg.lambda_topic > 0.0 {
        let cent = row_centroids(&p.t, gamma, lc);
        (0..nt).map(|t| (p.t.row(t) - cent.row(gamma[t])).norm_squared()).sum()
    } else {
        0.0
    };
    let o_term = if cfg.lambda_cooccur > 0.0 {
        let cent = row_centroids(&p.o, rho, lr);
        (0..nh).map(|h| (p.o.row(h) - cent.row(rho[h])).norm_squared()).sum()
    } else {
        0.0
    };
    scaled(1.0, h_term, nh * nt) + scaled(cfg.lambda_topic, t_term, nt * nw) + scaled(cfg.lambda_cooccur, o_term, nh * nh)
}

/// Cost of placing each topic in each column cluster with the statistics
/// of the current mappings held fixed. Shape: topics × column clusters.
pub fn column_costs(p: &CoClusterProblem, rho: &[usize], gamma: &[usize], cfg: &CoClusterConfig) -> DMatrix<f64> {
    let (lr, lc) = (cfg.row_clusters, cfg.col_clusters);
    let (nh, nt, nw) = (p.rows(), p.cols(), p.words());
    let means = block_means(&p.h, rho, gamma, lr, lc);
    let cent = (cfg.lambda_topic > 0.0).then(|| row_centroids(&p.t, gamma, lc));
    let mut costs = DMatrix::zeros(nt, lc);
    let mut s1 = vec![0.0; lr];
    let mut s2 = vec![0.0; lr];
    let mut n = vec![0.0; lr];
    for t in 0..nt {
        s1.fill(0.0);
        s2.fill(0.0);
        n.fill(0.0);
        for h in 0..nh {
            let v = p.h[(h, t)];
            s1[rho[h]] += v;
            s2[rho[h]] += v * v;
            n[rho[h]] += 1.0;
        }
        for c in 0..lc {
            let h_cost: f64 = (0..lr)
                .map(|r| {
                    let mu = means[(r, c)];
                    s2[r] - 2.0 * mu * s1[r] + n[r] * mu * mu
                })
                .sum();
            let t_cost = cent.as_ref().map_or(0.0, |cent| (p.t.row(t) - cent.row(c)).norm_squared());
            costs[(t, c)] = scaled(1.0, h_cost, nh * nt) + scaled(cfg.lambda_topic, t_cost, nt * nw);
        }
    }
    costs
}

/// Cost of placing each hashtag in each row cluster with the statistics
/// of the current mappings held fixed. Shape: hashtags × row clusters.
pub fn row_costs(p: &CoClusterProblem, rho: &[usize], gamma: &[usize], cfg: &CoClusterConfig) -> DMatrix<f64> {
    let (lr, lc) = (cfg.row_clusters, cfg.col_clusters);
    let (nh, nt) = (p.rows(), p.cols());
    let means = block_means(&p.h, rho, gamma, lr, lc);
    let cent = (cfg.lambda_cooccur > 0.0).then(|| row_centroids(&p.o, rho, lr));
    let mut costs = DMatrix::zeros(nh, lr);
    let mut s1 = vec![0.0; lc];
    let mut s2 = vec![0.0; lc];
    let mut n = vec![0.0; lc];
    for h in 0..nh {
        s1.fill(0.0);
        s2.fill(0.0);
        n.fill(0.0);
        for t in 0..nt {
            let v = p.h[(h, t)];
            s1[gamma[t]] += v;
            s2[gamma[t]] += v * v;
            n[gamma[t]] += 1.0;
        }
        for r in 0..lr {
            let h_cost: f64 = (0..lc)
                .map(|c| {
                    let mu = means[(r, c)];
                    s2[c] - 2.0 * mu * s1[c] + n[c] * mu * mu
                })
                .sum();
            let o_cost = cent.as_ref().map_or(0.0, |cent| (p.o.row(h) - cent.row(r)).norm_squared());
            costs[(h, r)] = scaled(1.0, h_cost, nh * nt) + scaled(cfg.lambda_cooccur, o_cost, nh * nh);
        }
    }
    costs
}

/// Cheapest cluster per element. The current cluster is kept unless another
/// is cheaper by more than a relative 1e-12; among cheaper ones the lowest
/// cost wins, ties to the lowest index.
pub fn reassign(costs: &DMatrix<f64>, current: &[usize]) -> Vec<usize> {
    (0..costs.nrows())
        .map(|i| {
            let cur = current[i];
            let cur_cost = costs[(i, cur)];
            let mut best = cur;
            let mut best_cost = cur_cost;
            for c in 0..costs.ncols() {
                let v = costs[(i, c)];
                if v < best_cost && (cur_cost - v) > 1e-12 * cur_cost.abs() {
                    best = c;
                    best_cost = v;
                }
            }
            best
        })
        .collect()
}

/// Moves the worst-fitting element of a multi-member cluster into each empty
/// cluster.
fn repair_empty(labels: &mut [usize], k: usize, costs: impl Fn(&[usize]) -> DMatrix<f64>) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let current = costs(labels);
        let mut worst: Option<(usize, f64)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let c = current[(i, l)];
            if worst.is_none_or(|(_, w)| c > w) {
                worst = Some((i, c));
            }
        }
        match worst {
            Some((i, _)) => labels[i] = empty,
            None => return,
        }
    }
}

#[cfg(test)]
fn random_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = if pos < k { pos } else { rng.gen_range(0..k) };
    }
    labels
}

/// k-means++ seeding over the rows of `features`: the first center is
/// uniform, each further one is drawn with probability proportional to the
/// squared distance to the nearest chosen center. Every element then joins
/// its nearest center (ties to the lowest cluster), centers keep their own.
fn plus_plus_labels(features: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = features.nrows();
    let dist = |a: usize, b: usize| (features.row(a) - features.row(b)).norm_squared();
    let mut centers = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = (0..n).filter(|i| !centers.contains(i)).map(|i| nearest[i]).sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|i| !centers.contains(i)) {
                pick = Some(i);
                target -= nearest[i];
                if target < 0.0 && nearest[i] > 0.0 {
                    break;
                }
            }
            pick.expect("more elements than centers")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !centers.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        centers.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(i, next));
        }
    }
    let mut labels: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if dist(i, centers[c]) < dist(i, centers[best]) {
                    best = c;
                }
            }
            best
        })
        .collect();
    for (c, &i) in centers.iter().enumerate() {
        labels[i] = c;
    }
    labels
}

/// Row and column feature vectors scaled so that squared distances match
/// the terms of the objective.
fn seeding_features(p: &CoClusterProblem, cfg: &CoClusterConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nh, nt, nw) = (p.rows(), p.cols(), p.words());
    let h_scale = 1.0 / ((nh * nt) as f64).sqrt();
    let o_scale = cfg.lambda_cooccur.sqrt() / nh as f64;
    let t_scale = if nw == 0 { 0.0 } else { (cfg.lambda_topic / (nt * nw) as f64).sqrt() };
    let rows = DMatrix::from_fn(nh, nt + nh, |i, j| if j < nt { p.h[(i, j)] * h_scale } else { p.o[(i, j - nt)] * o_scale });
    let cols = DMatrix::from_fn(nt, nh + nw, |t, j| if j < nh { p.h[(j, t)] * h_scale } else { p.t[(t, j - nh)] * t_scale });
    (rows, cols)
}

fn hashtag_weights(p: &CoClusterProblem, rho: &[usize], k: usize) -> Vec<f64> {
    let mut totals = vec![0.0; k];
    for (i, &l) in rho.iter().enumerate() {
        totals[l] += p.row_mass[i];
    }
    rho.iter().enumerate().map(|(i, &l)| p.row_mass[i] / totals[l]).collect()
}

/// One co-clustering run from a seeded random start.
pub fn ccbr_fit(p: &CoClusterProblem, cfg: &CoClusterConfig) -> Result<CoClusterResult, CoClusterError> {
    check_config(p, cfg)?;
    let (lr, lc) = (cfg.row_clusters, cfg.col_clusters);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (row_features, col_features) = seeding_features(p, cfg);
    let mut gamma = plus_plus_labels(&col_features, lc, &mut rng);
    let mut rho = plus_plus_labels(&row_features, lr, &mut rng);
    let mut current = objective(p, &rho, &gamma, cfg);
    let mut trace = vec![current];
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut next_gamma = reassign(&column_costs(p, &rho, &gamma, cfg), &gamma);
        repair_empty(&mut next_gamma, lc, |g| column_costs(p, &rho, g, cfg));
        let mut next_rho = reassign(&row_costs(p, &rho, &next_gamma, cfg), &rho);
        repair_empty(&mut next_rho, lr, |r| row_costs(p, r, &next_gamma, cfg));

        if next_gamma == gamma && next_rho == rho {
            break;
        }
        let value = objective(p, &next_rho, &next_gamma, cfg);
        if value > current {
            log::debug!("co-clustering step raised the objective by {:e}; keeping the previous mapping", value - current);
            break;
        }
        gamma = next_gamma;
        rho = next_rho;
        trace.push(value);
        let improvement = current - value;
        current = value;
        if improvement < cfg.tol {
            break;
        }
    }

    Ok(CoClusterResult {
        hashtag_weights: hashtag_weights(p, &rho, lr),
        rho,
        gamma,
        objective_trace: trace,
        iterations,
        seed: cfg.seed,
    })
}

/// Best of `restarts` runs with seeds `cfg.seed ..`; lowest objective wins,
/// ties to the lowest seed. Runs execute on separate threads.
pub fn choose_restart(p: &CoClusterProblem, cfg: &CoClusterConfig, restarts: usize) -> Result<CoClusterResult, CoClusterError> {
    if restarts == 0 {
        return Err(CoClusterError::InfeasibleConfig("need at least one restart".into()));
    }
    check_config(p, cfg)?;
    let results: Vec<Result<CoClusterResult, CoClusterError>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..restarts as u64)
            .map(|k| {
                let run_cfg = CoClusterConfig {
                    seed: cfg.seed.wrapping_add(k),
                    ..cfg.clone()
                };
                scope.spawn(move || ccbr_fit(p, &run_cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("co-clustering thread panicked")).collect()
    });
    let mut best: Option<CoClusterResult> = None;
    for r in results {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.objective() < b.objective()) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}
