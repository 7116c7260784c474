//! Shared numeric kernels: dense symmetric eigendecomposition, exhaustive
//! k-nearest-neighbour search and seeded Gaussian sampling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::DataMatrix;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
#[derive(Debug, Clone)]
pub struct SymEigResult {
    pub eigenvalues: DVector<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEigResult {
    /// The leading `k` eigenvectors as a `D x k` frame.
    pub fn top(&self, k: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, k).into_owned()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm drops below `1e-12 * ||S||_F`.
/// Each eigenvector is signed so that its largest-magnitude entry is positive,
/// which keeps downstream frames reproducible.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEigResult> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            s.ncols()
        )));
    }
    let scale = s.amax().max(1.0);
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = s.clone();
    // symmetrize exactly so rotations see a consistent matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = a.norm();
    let target = JACOBI_TOL * norm;

    let mut converged = n < 2 || norm == 0.0;
    let mut sweeps = 0;
    while !converged {
        if off_diagonal_norm(&a) <= target {
            converged = true;
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            break;
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        let lead = col.iter().copied().fold(0.0_f64, |best, x| {
            if x.abs() > best.abs() {
                x
            } else {
                best
            }
        });
        if lead < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Applies `A <- J^T A J`, `V <- V J` for the rotation in the (p, q) plane.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// The `k` nearest rows to a query point, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Exhaustive k-nearest-neighbour scan over the rows of `data`.
///
/// `exclude` names a row (normally the query's own row) that must not be
/// returned. Ties in distance go to the lower row index.
pub fn knn(
    data: &DataMatrix,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Result<NeighborList> {
    let n = data.nrows();
    if query.len() != data.ncols() {
        return Err(Error::Dimension(format!(
            "query has {} coordinates, data has {}",
            query.len(),
            data.ncols()
        )));
    }
    let available = match exclude {
        Some(i) if i < n => n - 1,
        _ => n,
    };
    if k == 0 || k > available {
        return Err(Error::Parameter(format!(
            "k = {k} outside 1..={available}"
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..n)
        .filter(|&i| Some(i) != exclude)
        .map(|i| (squared_distance_row(data, i, query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(NeighborList {
        indices: scored.iter().map(|&(_, i)| i).collect(),
        distances: scored.iter().map(|&(d, _)| d.sqrt()).collect(),
    })
}

/// Neighbourhoods of every row (the row itself included), computed in parallel.
pub fn all_knn(data: &DataMatrix, k: usize) -> Result<Vec<NeighborList>> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| knn(data, &row_vec(data, i), k, None))
        .collect()
}

/// `n x dim` matrix of independent `N(0, sigma^2)` draws from a ChaCha8 stream.
pub fn seeded_gaussian(n: usize, dim: usize, sigma: f64, seed: u64) -> Result<DataMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!(
            "sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut out = DMatrix::zeros(n, dim);
    // fill row-major so the stream order matches the sample order
    for i in 0..n {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            out[(i, j)] = sigma * z;
        }
    }
    Ok(out)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn row_vec(data: &DataMatrix, i: usize) -> Vec<f64> {
    data.row(i).iter().copied().collect()
}

pub fn squared_distance_row(data: &DataMatrix, i: usize, q: &[f64]) -> f64 {
    data.row(i)
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Largest pairwise Euclidean distance between rows.
pub fn diameter(data: &DataMatrix) -> f64 {
    let n = data.nrows();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

/// Column means of a data matrix.
pub fn column_mean(data: &DataMatrix) -> DVector<f64> {
    let n = data.nrows().max(1) as f64;
    DVector::from_iterator(
        data.ncols(),
        data.column_iter().map(|c| c.iter().sum::<f64>() / n),
    )
}

/// Stacks the listed rows into a new matrix.
pub fn select_rows(data: &DataMatrix, rows: &[usize]) -> DataMatrix {
    DMatrix::from_fn(rows.len(), data.ncols(), |i, j| data[(rows[i], j)])
}
