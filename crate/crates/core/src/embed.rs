//! tSNE on local spherical distances.
//!
//! Each point's `k`-neighbourhood is fitted with a spherelet and neighbour
//! distances are measured along it. The sparse distances become Gaussian-type
//! affinities `exp(-D_ij / sigma^2)`, which are matched by a Student-t
//! embedding minimizing `KL(P || Q)`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{knn, row_vec, seeded_gaussian, select_rows};
use crate::spca::fit_sphere;
use crate::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    Spherical,
    Euclidean,
}

impl FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(DistanceMode::Spherical),
            "euclidean" => Ok(DistanceMode::Euclidean),
            other => Err(Error::Parameter(format!("unknown distance mode '{other}'"))),
        }
    }
}

/// Symmetric sparse distance matrix; absent pairs have zero affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistances {
    /// `rows[i]` holds `(j, D_ij)` sorted by `j`, never `j == i`.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Neighbourhoods whose sphere fit degenerated and used Euclidean distances.
    pub fallbacks: usize,
}

impl SparseDistances {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .ok()
            .map(|pos| self.rows[i][pos].1)
    }

    /// Symmetrizes directed neighbour distances: the smaller value where both
    /// directions exist, the union of supports otherwise.
    pub fn from_directed(directed: Vec<Vec<(usize, f64)>>, fallbacks: usize) -> Self {
        let n = directed.len();
        let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for (i, row) in directed.into_iter().enumerate() {
            for (j, dist) in row {
                if i == j {
                    continue;
                }
                for (a, b) in [(i, j), (j, i)] {
                    maps[a]
                        .entry(b)
                        .and_modify(|v| *v = v.min(dist))
                        .or_insert(dist);
                }
            }
        }
        SparseDistances {
            rows: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
            fallbacks,
        }
    }
}

/// Neighbour distances measured on each point's local spherelet.
///
/// For every `i`, a `d`-sphere is fitted to the `k` nearest rows (including
/// `i`); `i` and each neighbour are projected onto it and their geodesic
/// distance is recorded. Degenerate fits use Euclidean distances.
pub fn spherical_knn_distances(x: &DataMatrix, d: usize, k: usize) -> Result<SparseDistances> {
    knn_distances(x, d, k, DistanceMode::Spherical)
}

pub fn knn_distances(x: &DataMatrix, d: usize, k: usize, mode: DistanceMode) -> Result<SparseDistances> {
    let n = x.nrows();
    if k > n || (mode == DistanceMode::Spherical && k < d + 3) || k < 2 {
        return Err(Error::Parameter(format!(
            "k = {k} must lie in {}..={n}",
            if mode == DistanceMode::Spherical { (d + 3).max(2) } else { 2 }
        )));
    }
    let rows: Vec<(Vec<(usize, f64)>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let nl = knn(x, &row_vec(x, i), k, None)?;
            let euclid = |fell_back: bool| {
                let row = nl
                    .indices
                    .iter()
                    .zip(&nl.distances)
                    .filter(|(&j, _)| j != i)
                    .map(|(&j, &dist)| (j, dist))
                    .collect();
                (row, fell_back)
            };
            if mode == DistanceMode::Euclidean {
                return Ok(euclid(false));
            }
            let local = select_rows(x, &nl.indices);
            let sphere = match fit_sphere(&local, d) {
                Ok((s, _)) if !s.degenerate => s,
                _ => return Ok(euclid(true)),
            };
            let xi: DVector<f64> = x.row(i).transpose();
            let Ok(pi) = sphere.project(&xi) else {
                return Ok(euclid(true));
            };
            let mut row = Vec::with_capacity(k);
            for &j in nl.indices.iter().filter(|&&j| j != i) {
                let xj: DVector<f64> = x.row(j).transpose();
                let dist = match sphere.project(&xj) {
                    Ok(pj) => sphere.distance(&pi, &pj)?,
                    Err(_) => (&xi - &xj).norm(),
                };
                row.push((j, dist));
            }
            Ok((row, false))
        })
        .collect::<Result<_>>()?;
    let fallbacks = rows.iter().filter(|r| r.1).count();
    Ok(SparseDistances::from_directed(
        rows.into_iter().map(|r| r.0).collect(),
        fallbacks,
    ))
}

/// Conditional affinities `p_{j|i} = exp(-D_ij/sigma^2) / sum_l exp(-D_il/sigma^2)`
/// over each row's support.
pub fn conditional_affinities(dist: &SparseDistances, sigma: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let s2 = sigma * sigma;
    dist.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.is_empty() {
                return Err(Error::Parameter(format!("point {i} has no neighbours")));
            }
            // shift by the smallest distance; the normalization cancels it
            let dmin = row.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = row.iter().map(|e| (-(e.1 - dmin) / s2).exp()).collect();
            let total: f64 = w.iter().sum();
            Ok(row.iter().zip(w).map(|(e, w)| (e.0, w / total)).collect())
        })
        .collect()
}

/// Symmetric joint affinities `P_ij = (p_{j|i} + p_{i|j}) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub p: DMatrix<f64>,
}

pub fn affinities(dist: &SparseDistances, sigma: f64) -> Result<AffinityMatrix> {
    let cond = conditional_affinities(dist, sigma)?;
    let n = cond.len();
    let mut p = DMatrix::zeros(n, n);
    for (i, row) in cond.iter().enumerate() {
        for &(j, v) in row {
            p[(i, j)] += 0.5 * v;
            p[(j, i)] += 0.5 * v;
        }
    }
    Ok(AffinityMatrix { p })
}

/// Student-t similarities `(1 + |y_i - y_j|^2)^-1`, normalized over all
/// ordered pairs `i != j`.
pub fn student_t_affinities(y: &DataMatrix) -> DMatrix<f64> {
    let w = kernel(y);
    let z = w.sum();
    w / z
}

fn kernel(y: &DataMatrix) -> DMatrix<f64> {
    let n = y.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let d2: f64 = y
                .row(i)
                .iter()
                .zip(y.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            1.0 / (1.0 + d2)
        }
    })
}

/// `sum_{i != j} p_ij log(p_ij / q_ij)`; zero-probability terms contribute
/// nothing and `q_ij = 0` where `p_ij > 0` gives infinity.
pub fn kl_divergence(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for j in 0..p.ncols() {
        for i in 0..p.nrows() {
            let pij = p[(i, j)];
            if i == j || pij <= 0.0 {
                continue;
            }
            let qij = q[(i, j)];
            if qij <= 0.0 {
                return f64::INFINITY;
            }
            total += pij * (pij / qij).ln();
        }
    }
    total
}

/// `P` rescaled to sum to one.
pub fn normalize(p: &DMatrix<f64>) -> DMatrix<f64> {
    p / p.sum()
}

/// KL objective of embedding `y` against normalized affinities `p`.
pub fn kl_objective(p: &DMatrix<f64>, y: &DataMatrix) -> f64 {
    kl_divergence(p, &student_t_affinities(y))
}

/// Gradient of [`kl_objective`] with respect to `y`:
/// `4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)`.
pub fn kl_gradient(p: &DMatrix<f64>, y: &DataMatrix) -> DataMatrix {
    let w = kernel(y);
    let z = w.sum();
    let (n, m) = y.shape();
    let mut grad = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let coef = 4.0 * (p[(i, j)] - w[(i, j)] / z) * w[(i, j)];
            for c in 0..m {
                grad[(i, c)] += coef * (y[(i, c)] - y[(j, c)]);
            }
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub sigma: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub mode: DistanceMode,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            m: 2,
            d: 1,
            k: 10,
            sigma: 1.0,
            iters: 1000,
            learning_rate: 100.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            mode: DistanceMode::Spherical,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.m) {
            return Err(Error::Parameter(format!("m must be 1, 2 or 3, got {}", self.m)));
        }
        if self.iters == 0 {
            return Err(Error::Parameter("iters must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// KL recorded at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlRecord {
    pub iter: usize,
    /// KL of the iterate at this checkpoint.
    pub kl: f64,
    /// Lowest KL recorded so far; the returned embedding attains it.
    pub best_kl: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    pub y: DataMatrix,
    pub log: Vec<KlRecord>,
}

pub const LOG_EVERY: usize = 50;
const MAX_HALVINGS: usize = 20;

/// Momentum gradient descent with per-coordinate gains on `KL(P || Q)`.
///
/// Starts from a seeded Gaussian with standard deviation `1e-4`. KL is
/// evaluated every [`LOG_EVERY`] iterations and at the end; once early
/// exaggeration is over, a checkpoint whose KL exceeds the best so far rolls
/// back to the best iterate and halves the step size. A non-finite gradient
/// also halves the step; twenty halvings in a row abort with a divergence
/// error.
pub fn embed(p: &AffinityMatrix, cfg: &EmbedConfig) -> Result<EmbedResult> {
    cfg.validate()?;
    let n = p.p.nrows();
    if n < 2 || p.p.ncols() != n {
        return Err(Error::Parameter("affinity matrix must be square with n >= 2".into()));
    }
    let target = normalize(&p.p);
    let mut y = seeded_gaussian(n, cfg.m, 1e-4, cfg.seed)?;
    let mut velocity = DMatrix::zeros(n, cfg.m);
    let mut gains = DMatrix::from_element(n, cfg.m, 1.0);
    let mut lr = cfg.learning_rate;

    let first = kl_objective(&target, &y);
    let mut best = (first, y.clone());
    let mut log = vec![KlRecord {
        iter: 0,
        kl: first,
        best_kl: first,
    }];

    let mut halvings = 0;
    let mut iter = 0;
    while iter < cfg.iters {
        let exaggerate = iter < cfg.exaggeration_iters;
        let scaled;
        let pt = if exaggerate {
            scaled = &target * cfg.exaggeration;
            &scaled
        } else {
            &target
        };
        let grad = kl_gradient(pt, &y);
        if grad.iter().any(|g| !g.is_finite()) {
            halvings += 1;
            if halvings >= MAX_HALVINGS {
                return Err(Error::Divergence(format!(
                    "non-finite gradient at iteration {iter} after {MAX_HALVINGS} step halvings"
                )));
            }
            lr *= 0.5;
            y = best.1.clone();
            velocity.fill(0.0);
            continue;
        }
        halvings = 0;
        let momentum = if iter < cfg.momentum_switch {
            cfg.momentum_early
        } else {
            cfg.momentum_late
        };
        for idx in 0..gains.len() {
            let same_sign = (grad[idx] > 0.0) == (velocity[idx] > 0.0);
            gains[idx] = if same_sign {
                (gains[idx] * 0.8_f64).max(0.01)
            } else {
                gains[idx] + 0.2
            };
            velocity[idx] = momentum * velocity[idx] - lr * gains[idx] * grad[idx];
        }
        y += &velocity;
        // keep the embedding centered; KL is translation invariant
        let mean = y.row_mean();
        for mut row in y.row_iter_mut() {
            row -= &mean;
        }
        iter += 1;

        if iter % LOG_EVERY == 0 || iter == cfg.iters {
            let kl = kl_objective(&target, &y);
            if !kl.is_finite() {
                lr *= 0.5;
                y = best.1.clone();
                velocity.fill(0.0);
                gains.fill(1.0);
            } else if kl < best.0 {
                best = (kl, y.clone());
            } else if iter > cfg.exaggeration_iters {
                lr *= 0.5;
                y = best.1.clone();
                velocity.fill(0.0);
                gains.fill(1.0);
            }
            log.push(KlRecord {
                iter,
                kl,
                best_kl: best.0,
            });
        }
    }
    Ok(EmbedResult { y: best.1, log })
}

/// Distances, affinities and embedding in one call.
pub fn s_tsne(x: &DataMatrix, cfg: &EmbedConfig) -> Result<(EmbedResult, SparseDistances)> {
    let dist = knn_distances(x, cfg.d, cfg.k, cfg.mode)?;
    let p = affinities(&dist, cfg.sigma)?;
    Ok((embed(&p, cfg)?, dist))
}

/// Fraction of points whose nearest other point in `y` shares their label.
pub fn one_nn_agreement(y: &DataMatrix, labels: &[usize]) -> f64 {
    let n = y.nrows();
    let hits = (0..n)
        .filter(|&i| {
            knn(y, &row_vec(y, i), 1, Some(i))
                .map(|nl| labels[nl.indices[0]] == labels[i])
                .unwrap_or(false)
        })
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize) -> DataMatrix {
        DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            if j == 0 {
                t.cos()
            } else {
                t.sin()
            }
        })
    }

    #[test]
    fn circle_distances_are_arc_lengths() {
        let n = 60;
        let dist = spherical_knn_distances(&circle(n), 1, 6).unwrap();
        assert_eq!(dist.fallbacks, 0);
        for (i, row) in dist.rows.iter().enumerate() {
            for &(j, dij) in row {
                let steps = (i as i64 - j as i64).rem_euclid(n as i64);
                let steps = steps.min(n as i64 - steps) as f64;
                let arc = steps * std::f64::consts::TAU / n as f64;
                assert!((dij - arc).abs() < 1e-6, "{i} {j} {dij} {arc}");
            }
        }
    }

    #[test]
    fn collinear_points_use_euclidean() {
        let x = DMatrix::from_fn(10, 2, |i, j| i as f64 * [1.0, 2.0][j]);
        let dist = spherical_knn_distances(&x, 1, 4).unwrap();
        assert_eq!(dist.fallbacks, 10);
        for (i, row) in dist.rows.iter().enumerate() {
            for &(j, dij) in row {
                assert!((dij - (x.row(i) - x.row(j)).norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_points_have_unit_affinity() {
        let dist = SparseDistances::from_directed(vec![vec![(1, 0.7)], vec![(0, 0.9)]], 0);
        assert_eq!(dist.get(0, 1), Some(0.7));
        let p = affinities(&dist, 1.0).unwrap();
        assert_eq!(p.p[(0, 1)], 1.0);
        assert_eq!(p.p[(1, 0)], 1.0);
        assert_eq!(p.p[(0, 0)], 0.0);
    }

    #[test]
    fn chain_matches_hand_softmax() {
        // 5-point chain: each point sees its immediate neighbours
        let d = [0.5, 1.0, 2.0, 0.25];
        let directed: Vec<Vec<(usize, f64)>> = (0..5)
            .map(|i| {
                let mut row = Vec::new();
                if i > 0 {
                    row.push((i - 1, d[i - 1]));
                }
                if i < 4 {
                    row.push((i + 1, d[i]));
                }
                row
            })
            .collect();
        let dist = SparseDistances::from_directed(directed, 0);
        let sigma = 0.8;
        let p = affinities(&dist, sigma).unwrap().p;
        let e = |x: f64| (-x / (sigma * sigma)).exp();
        // p_{2|1} and p_{1|2}
        let p21 = e(d[1]) / (e(d[0]) + e(d[1]));
        let p12 = e(d[1]) / (e(d[1]) + e(d[2]));
        assert!((p[(1, 2)] - 0.5 * (p21 + p12)).abs() < 1e-15);
        assert!((p[(0, 1)] - 0.5 * (1.0 + e(d[0]) / (e(d[0]) + e(d[1])))).abs() < 1e-15);
        assert_eq!(p[(0, 2)], 0.0);
        assert_eq!(p, p.transpose());
    }

    #[test]
    fn empty_support_is_an_error() {
        let dist = SparseDistances::from_directed(vec![vec![], vec![]], 0);
        assert!(affinities(&dist, 1.0).is_err());
        let ok = SparseDistances::from_directed(vec![vec![(1, 1.0)], vec![]], 0);
        assert!(affinities(&ok, 0.0).is_err());
    }

    #[test]
    fn kl_basics() {
        let y = crate::numeric::seeded_gaussian(6, 2, 1.0, 3).unwrap();
        let q = student_t_affinities(&y);
        assert!(kl_divergence(&q, &q).abs() < 1e-15);
        let mut p = DMatrix::zeros(6, 6);
        p[(0, 1)] = 0.5;
        p[(1, 0)] = 0.5;
        let mut q0 = q.clone();
        q0[(0, 1)] = 0.0;
        assert_eq!(kl_divergence(&p, &q0), f64::INFINITY);
    }

    #[test]
    fn two_point_embedding_is_exact() {
        let p = AffinityMatrix {
            p: DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]),
        };
        let cfg = EmbedConfig {
            iters: 100,
            ..Default::default()
        };
        let out = embed(&p, &cfg).unwrap();
        assert!(out.log.last().unwrap().best_kl.abs() < 1e-6);
    }

    #[test]
    fn config_checks() {
        let p = AffinityMatrix {
            p: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        };
        for bad in [
            EmbedConfig { m: 4, ..Default::default() },
            EmbedConfig { iters: 0, ..Default::default() },
            EmbedConfig { learning_rate: 0.0, ..Default::default() },
        ] {
            assert!(embed(&p, &bad).is_err());
        }
        assert!("manhattan".parse::<DistanceMode>().is_err());
    }
}
