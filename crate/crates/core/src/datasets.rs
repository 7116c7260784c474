//! Synthetic manifolds, CSV point clouds and distance-to-curve oracles.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::seeded_rng;
use crate::DataMatrix;

/// Absolute tolerance of the Fresnel-type quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// How curve parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Random,
    /// Evenly spaced over the parameter range, endpoints included.
    Equispaced,
}

/// Points sampled along a parametrized curve.
#[derive(Debug, Clone)]
pub struct CurveSample {
    pub points: DataMatrix,
    pub params: Vec<f64>,
    pub clean: Option<DataMatrix>,
}

fn draw_params(n: usize, lo: f64, hi: f64, sampling: Sampling, rng: &mut impl Rng) -> Vec<f64> {
    match sampling {
        Sampling::Random => (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
        Sampling::Equispaced if n == 1 => vec![lo],
        Sampling::Equispaced => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `(int_0^s cos(t^2) dt, int_0^s sin(t^2) dt)` by adaptive Simpson quadrature.
pub fn euler_point_with_tol(s: f64, tol: f64) -> [f64; 2] {
    [
        adaptive_simpson(&|t: f64| (t * t).cos(), 0.0, s, tol),
        adaptive_simpson(&|t: f64| (t * t).sin(), 0.0, s, tol),
    ]
}

/// Point of the unit-speed Euler spiral at arc length `s`.
pub fn euler_point(s: f64) -> [f64; 2] {
    euler_point_with_tol(s, QUADRATURE_TOL)
}

/// Euler spiral (curvature equal to arc length) sampled on `[0, s_max]`.
pub fn euler_spiral(n: usize, s_max: f64, seed: u64, sampling: Sampling) -> Result<CurveSample> {
    if n < 2 {
        return Err(Error::Parameter(format!("need n >= 2, got {n}")));
    }
    if !(s_max > 0.0 && s_max <= 2.0) {
        return Err(Error::Parameter(format!("s_max must lie in (0, 2], got {s_max}")));
    }
    let mut rng = seeded_rng(seed);
    let params = draw_params(n, 0.0, s_max, sampling, &mut rng);
    let points = DMatrix::from_fn(n, 2, |i, j| euler_point(params[i])[j]);
    Ok(CurveSample {
        points,
        params,
        clean: None,
    })
}

pub const SPIRAL_RANGE: (f64, f64) = (PI, 4.0 * PI);

/// `(2t cos t, 2t sin t)`.
pub fn spiral_point(t: f64) -> [f64; 2] {
    [2.0 * t * t.cos(), 2.0 * t * t.sin()]
}

/// Archimedean spiral on `t in [pi, 4pi]` with isotropic Gaussian noise.
pub fn noisy_spiral(n: usize, noise_sd: f64, seed: u64, sampling: Sampling) -> Result<CurveSample> {
    if n < 2 {
        return Err(Error::Parameter(format!("need n >= 2, got {n}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    let mut rng = seeded_rng(seed);
    let params = draw_params(n, SPIRAL_RANGE.0, SPIRAL_RANGE.1, sampling, &mut rng);
    let clean = DMatrix::from_fn(n, 2, |i, j| spiral_point(params[i])[j]);
    let mut points = clean.clone();
    for i in 0..n {
        for j in 0..2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            points[(i, j)] += noise_sd * z;
        }
    }
    Ok(CurveSample {
        points,
        params,
        clean: Some(clean),
    })
}

/// Enneper's minimal surface at parameters `(u, v)`.
pub fn enneper_point(u: f64, v: f64) -> [f64; 3] {
    [
        u - u * u * u / 3.0 + u * v * v,
        -v - u * u * v + v * v * v / 3.0,
        u * u - v * v,
    ]
}

/// Enneper's surface over the parameter disk `u^2 + v^2 <= radius^2`,
/// with parameters uniform on the disk.
pub fn enneper(n: usize, radius: f64, seed: u64) -> Result<DataMatrix> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    let mut rng = seeded_rng(seed);
    let mut out = DMatrix::zeros(n, 3);
    for i in 0..n {
        let rho = radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        let p = enneper_point(rho * theta.cos(), rho * theta.sin());
        for j in 0..3 {
            out[(i, j)] = p[j];
        }
    }
    Ok(out)
}

/// Random `dim x k` matrix with orthonormal columns (Gram-Schmidt on Gaussians).
pub fn random_frame(dim: usize, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    assert!(k <= dim, "frame with {k} columns in dimension {dim}");
    let mut frame = DMatrix::<f64>::zeros(dim, k);
    let mut j = 0;
    while j < k {
        let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        for _ in 0..2 {
            for p in 0..j {
                let q = frame.column(p).into_owned();
                v -= &q * q.dot(&v);
            }
        }
        let len = v.norm();
        if len > 1e-8 {
            frame.set_column(j, &(v / len));
            j += 1;
        }
    }
    frame
}

/// A sphere `S_V(c, r)` together with points drawn uniformly on it.
#[derive(Debug, Clone)]
pub struct SphereSample {
    pub points: DataMatrix,
    pub frame: DMatrix<f64>,
    pub center: DVector<f64>,
    pub radius: f64,
}

/// Uniform points on a random `d`-sphere in `R^ambient` with the given
/// center and radius.
pub fn sphere_sample(
    n: usize,
    d: usize,
    ambient: usize,
    center: &DVector<f64>,
    radius: f64,
    seed: u64,
) -> Result<SphereSample> {
    if d + 1 > ambient {
        return Err(Error::Parameter(format!(
            "a {d}-sphere does not fit in dimension {ambient}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    if center.len() != ambient {
        return Err(Error::Dimension(format!(
            "center has {} coordinates, expected {ambient}",
            center.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let frame = random_frame(ambient, d + 1, &mut rng);
    let mut points = DMatrix::zeros(n, ambient);
    for i in 0..n {
        let dir = loop {
            let g = DVector::from_fn(d + 1, |_, _| StandardNormal.sample(&mut rng));
            let len: f64 = g.norm();
            if len > 1e-12 {
                break g / len;
            }
        };
        let p = center + &frame * dir * radius;
        points.set_row(i, &p.transpose());
    }
    Ok(SphereSample {
        points,
        frame,
        center: center.clone(),
        radius,
    })
}

/// Seeded shuffle split into disjoint, exhaustive train and test index sets.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

/// Curves with a known parametrization, for distance-to-truth evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    Euler { s_max: f64 },
    Spiral,
}

impl Curve {
    fn range(&self) -> (f64, f64) {
        match self {
            Curve::Euler { s_max } => (0.0, *s_max),
            Curve::Spiral => SPIRAL_RANGE,
        }
    }

    /// `grid_n + 1` points at evenly spaced parameters, so doubling `grid_n`
    /// refines the previous grid.
    pub fn grid(&self, grid_n: usize) -> Vec<[f64; 2]> {
        let (lo, hi) = self.range();
        let ts = (0..=grid_n).map(|k| lo + (hi - lo) * k as f64 / grid_n as f64);
        match self {
            Curve::Spiral => ts.map(spiral_point).collect(),
            Curve::Euler { .. } => {
                // accumulate panel integrals instead of restarting at 0
                let ts: Vec<f64> = ts.collect();
                let mut out = Vec::with_capacity(ts.len());
                let mut acc = [0.0, 0.0];
                out.push(acc);
                for w in ts.windows(2) {
                    acc[0] += adaptive_simpson(&|t: f64| (t * t).cos(), w[0], w[1], 1e-13);
                    acc[1] += adaptive_simpson(&|t: f64| (t * t).sin(), w[0], w[1], 1e-13);
                    out.push(acc);
                }
                out
            }
        }
    }

    /// Largest arc length between consecutive grid points.
    pub fn grid_spacing(&self, grid_n: usize) -> f64 {
        let (lo, hi) = self.range();
        let dt = (hi - lo) / grid_n as f64;
        match self {
            Curve::Euler { .. } => dt,
            Curve::Spiral => 2.0 * (1.0 + hi * hi).sqrt() * dt,
        }
    }
}

/// Distance from each row to the nearest of the `grid_n + 1` curve grid points.
pub fn distance_to_curve(points: &DataMatrix, curve: Curve, grid_n: usize) -> Result<Vec<f64>> {
    if grid_n < 1000 {
        return Err(Error::Parameter(format!("grid_n must be at least 1000, got {grid_n}")));
    }
    if points.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "curve points are planar, data has {} columns",
            points.ncols()
        )));
    }
    let grid = curve.grid(grid_n);
    Ok(points
        .row_iter()
        .map(|row| {
            grid.iter()
                .map(|g| (row[0] - g[0]).powi(2) + (row[1] - g[1]).powi(2))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Reads a rectangular numeric table. A first row containing any non-numeric
/// cell is taken as a header; lines starting with `#` are ignored.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file)
}

pub fn read_csv(input: impl std::io::Read) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            location: e
                .position()
                .map(|p| format!("line {}", p.line()))
                .unwrap_or_else(|| format!("record {}", r + 1)),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(r as u64 + 1);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> =
            record.iter().map(|c| c.parse::<f64>()).collect();
        if r == 0 && rows.is_empty() && parsed.iter().any(|p| p.is_err()) {
            continue;
        }
        let mut values = Vec::with_capacity(parsed.len());
        for (c, p) in parsed.into_iter().enumerate() {
            values.push(p.map_err(|_| Error::Parse {
                location: format!("line {line} column {}", c + 1),
                message: format!("'{}' is not a number", &record[c]),
            })?);
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    location: format!("line {line}"),
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    let w = width.unwrap_or(0);
    Ok(DMatrix::from_fn(rows.len(), w, |i, j| rows[i][j]))
}

/// Formats a float so that parsing it back gives the identical value.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes `x` as CSV, preceded by `# `-prefixed comment lines.
pub fn write_csv(mut out: impl Write, x: &DataMatrix, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    for row in x.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_csv(x: &DataMatrix, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(file, x, &[])
}
