//! Benchmarks comparing local SPCA with local PCA: MSE against number of
//! pieces on a held-out split, and approximation error against segment scale.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::datasets::{
    euler_point, euler_spiral, load_csv, noisy_spiral, sphere_sample, train_test_split, Sampling,
};
use crate::error::{Error, Result};
use crate::numeric::select_rows;
use crate::partition::{Fitter, Piece, TreeConfig};
use crate::{DataMatrix, SphereletModel};

/// One `(method, eps)` cell of a benchmark grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: Fitter,
    pub eps: f64,
    pub pieces: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub wall_time: f64,
    pub error: Option<String>,
}

/// Dataset named on the `bench` command line: `euler[:N]`, `spiral[:N]`,
/// `circle[:N]` (N train and N test points each) or `csv:PATH` (80/20 split).
#[derive(Debug, Clone, PartialEq)]
pub enum BenchDataset {
    Euler(usize),
    Spiral(usize),
    Circle(usize),
    Csv(PathBuf),
}

pub const DEFAULT_BENCH_N: usize = 2500;
pub const SPIRAL_BENCH_NOISE: f64 = 0.2;
/// Seed used by `bench` when none is given.
pub const DEFAULT_BENCH_SEED: u64 = 2024;

impl FromStr for BenchDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("csv:") {
            return Ok(BenchDataset::Csv(PathBuf::from(path)));
        }
        let (name, n) = match s.split_once(':') {
            Some((name, n)) => (
                name,
                n.parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad sample count in '{s}'")))?,
            ),
            None => (s, DEFAULT_BENCH_N),
        };
        match name {
            "euler" => Ok(BenchDataset::Euler(n)),
            "spiral" => Ok(BenchDataset::Spiral(n)),
            "circle" => Ok(BenchDataset::Circle(n)),
            _ => Err(Error::Parameter(format!("unknown dataset '{s}'"))),
        }
    }
}

impl BenchDataset {
    /// Train and test matrices for this dataset.
    pub fn load(&self, seed: u64) -> Result<(DataMatrix, DataMatrix)> {
        let halves = |x: DataMatrix, n: usize| {
            let train = x.rows(0, n).into_owned();
            let test = x.rows(n, x.nrows() - n).into_owned();
            (train, test)
        };
        match self {
            BenchDataset::Euler(n) => {
                let c = euler_spiral(2 * n, 2.0, seed, Sampling::Random)?;
                Ok(halves(c.points, *n))
            }
            BenchDataset::Spiral(n) => {
                let c = noisy_spiral(2 * n, SPIRAL_BENCH_NOISE, seed, Sampling::Random)?;
                Ok(halves(c.points, *n))
            }
            BenchDataset::Circle(n) => {
                let s = sphere_sample(2 * n, 1, 2, &DVector::from_vec(vec![1.0, -2.0]), 3.0, seed)?;
                Ok(halves(s.points, *n))
            }
            BenchDataset::Csv(path) => {
                let x = load_csv(path)?;
                let (train, test) = train_test_split(x.nrows(), 0.8, seed);
                Ok((select_rows(&x, &train), select_rows(&x, &test)))
            }
        }
    }
}

/// Fits every `(eps, method)` pair on `train` and reports piece counts with
/// training and predictive MSE. Records are ordered by method, then eps.
pub fn bench_curve(
    train: &DataMatrix,
    test: &DataMatrix,
    d: usize,
    eps_grid: &[f64],
    n_min: usize,
    methods: &[Fitter],
) -> Result<Vec<BenchRecord>> {
    if eps_grid.is_empty() {
        return Err(Error::Parameter("eps grid is empty".into()));
    }
    if eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Parameter("eps grid must be strictly decreasing".into()));
    }
    let jobs: Vec<(Fitter, f64)> = methods
        .iter()
        .flat_map(|&m| eps_grid.iter().map(move |&e| (m, e)))
        .collect();
    use rayon::prelude::*;
    Ok(jobs
        .par_iter()
        .map(|&(method, eps)| run_cell(train, test, d, eps, n_min, method))
        .collect())
}

fn run_cell(
    train: &DataMatrix,
    test: &DataMatrix,
    d: usize,
    eps: f64,
    n_min: usize,
    method: Fitter,
) -> BenchRecord {
    let cfg = TreeConfig {
        d,
        eps,
        n_min,
        fitter: method,
    };
    let start = Instant::now();
    let fitted = SphereletModel::fit(train, &cfg);
    let wall_time = start.elapsed().as_secs_f64();
    let result = fitted.and_then(|m| Ok((m.pieces_count(), m.mse(train)?.overall, m.mse(test)?.overall)));
    match result {
        Ok((pieces, train_mse, test_mse)) => BenchRecord {
            method,
            eps,
            pieces,
            train_mse,
            test_mse,
            wall_time,
            error: None,
        },
        Err(e) => BenchRecord {
            method,
            eps,
            pieces: 0,
            train_mse: f64::NAN,
            test_mse: f64::NAN,
            wall_time,
            error: Some(e.to_string()),
        },
    }
}

/// `count` log-spaced values from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Segment midpoints (arc length) used to calibrate the scale constant.
pub const RATE_CALIBRATION_CENTERS: [f64; 4] = [0.6, 0.9, 1.2, 1.5];
/// Segment midpoints used to check the calibrated bound.
pub const RATE_VALIDATION_CENTERS: [f64; 3] = [0.75, 1.05, 1.35];
pub const RATE_SEGMENT_POINTS: usize = 200;

/// Mean squared residual of each segment scale for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub method: Fitter,
    pub alphas: Vec<f64>,
    pub mse: Vec<f64>,
    /// Least-squares slope of `log(mse)` against `log(alpha)`.
    pub slope: f64,
}

/// Euler-spiral points on the arc-length window `[s0 - alpha/2, s0 + alpha/2]`.
pub fn euler_segment(s0: f64, alpha: f64, count: usize) -> DataMatrix {
    let lo = s0 - 0.5 * alpha;
    let rows: Vec<[f64; 2]> = (0..count)
        .map(|i| euler_point(lo + alpha * i as f64 / (count - 1) as f64))
        .collect();
    DMatrix::from_fn(count, 2, |i, j| rows[i][j])
}

/// Mean residual of one piece fitted to each segment, averaged over `centers`.
pub fn segment_mse(method: Fitter, alpha: f64, centers: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for &s0 in centers {
        if s0 - 0.5 * alpha < 0.0 || s0 + 0.5 * alpha > 2.0 {
            return Err(Error::Parameter(format!(
                "segment of length {alpha} around {s0} leaves the spiral"
            )));
        }
        let seg = euler_segment(s0, alpha, RATE_SEGMENT_POINTS);
        let piece = match Piece::fit(&seg, 1, method) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if matches!(piece, Piece::Plane { fallback: true, .. }) {
            continue;
        }
        total += piece.mse(&seg)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Parameter(format!("every segment fit at scale {alpha} degenerated")));
    }
    Ok(total / used as f64)
}

/// Error-versus-scale study on Euler-spiral segments.
pub fn rate_study(alpha_grid: &[f64], methods: &[Fitter], centers: &[f64]) -> Result<Vec<RateCurve>> {
    if alpha_grid.len() < 2 {
        return Err(Error::Parameter("alpha grid needs at least two values".into()));
    }
    if alpha_grid.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Parameter("alpha values must be positive".into()));
    }
    methods
        .iter()
        .map(|&method| {
            let mse = alpha_grid
                .iter()
                .map(|&a| segment_mse(method, a, centers))
                .collect::<Result<Vec<_>>>()?;
            let xs: Vec<f64> = alpha_grid.iter().map(|a| a.ln()).collect();
            let ys: Vec<f64> = mse.iter().map(|m| m.ln()).collect();
            Ok(RateCurve {
                method,
                alphas: alpha_grid.to_vec(),
                mse,
                slope: ls_slope(&xs, &ys),
            })
        })
        .collect()
}

/// Smallest `theta` with `mse <= theta * alpha^4` on every point of `curve`.
pub fn quartic_constant(curve: &RateCurve) -> f64 {
    curve
        .alphas
        .iter()
        .zip(&curve.mse)
        .map(|(a, m)| m / a.powi(4))
        .fold(0.0, f64::max)
}

pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
