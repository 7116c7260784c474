//! Spherical PCA: closed-form least-squares sphere fitting inside the top
//! principal subspace, plus the matching projections and geodesic distance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{column_mean, sym_eig};
use crate::DataMatrix;

/// Condition number of the reduced scatter above which the fit is treated
/// as flat.
pub const MAX_CONDITION: f64 = 1e12;
/// Radius, in multiples of the data diameter, above which the fit is treated
/// as flat.
pub const MAX_RADIUS_RATIO: f64 = 1e6;

/// Affine subspace `mu + span(frame)` with an orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub mu: DVector<f64>,
    pub frame: DMatrix<f64>,
}

impl Hyperplane {
    /// Principal affine subspace with `dim` frame columns: the sample mean and
    /// the leading eigenvectors of the centered scatter matrix.
    pub fn fit(x: &DataMatrix, dim: usize) -> Result<Self> {
        let (n, ambient) = x.shape();
        if dim > ambient {
            return Err(Error::Dimension(format!(
                "subspace of dimension {dim} does not fit in ambient dimension {ambient}"
            )));
        }
        if n < dim.max(1) {
            return Err(Error::InsufficientData {
                needed: dim.max(1),
                got: n,
            });
        }
        let mu = column_mean(x);
        let centered = center_rows(x, &mu);
        let scatter = centered.transpose() * &centered;
        let eig = sym_eig(&scatter)?;
        Ok(Self {
            mu,
            frame: eig.top(dim),
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.mu.len()
    }

    /// Number of frame columns.
    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    /// `mu + V V^T (x - mu)`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.ambient_dim())?;
        let w = x - &self.mu;
        Ok(&self.mu + &self.frame * (self.frame.transpose() * w))
    }

    /// The same affine subspace restricted to its leading `dim` directions.
    pub fn truncate(&self, dim: usize) -> Hyperplane {
        Hyperplane {
            mu: self.mu.clone(),
            frame: self.frame.columns(0, dim.min(self.dim())).into_owned(),
        }
    }

    pub fn residual_sq(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((x - self.project(x)?).norm_squared())
    }
}

/// Best-fit `(d+1)`-dimensional principal subspace, the reduction step of SPCA.
pub fn fit_hyperplane(x: &DataMatrix, d: usize) -> Result<Hyperplane> {
    if x.nrows() < d + 1 {
        return Err(Error::InsufficientData {
            needed: d + 1,
            got: x.nrows(),
        });
    }
    Hyperplane::fit(x, d + 1)
}

/// Best-fit `d`-dimensional affine subspace (the local PCA piece).
pub fn fit_tangent_plane(x: &DataMatrix, d: usize) -> Result<Hyperplane> {
    Hyperplane::fit(x, d)
}

/// Maps every row onto the affine subspace of `plane`.
pub fn reduce(x: &DataMatrix, plane: &Hyperplane) -> Result<DataMatrix> {
    if x.ncols() != plane.ambient_dim() {
        return Err(Error::Dimension(format!(
            "data has {} columns, plane lives in dimension {}",
            x.ncols(),
            plane.ambient_dim()
        )));
    }
    let centered = center_rows(x, &plane.mu);
    let proj = &centered * &plane.frame * plane.frame.transpose();
    let mut out = proj;
    for mut row in out.row_iter_mut() {
        row += plane.mu.transpose();
    }
    Ok(out)
}

/// A `d`-sphere `{y : ||y - center|| = radius, y - center in span(frame)}`.
///
/// A degenerate spherelet stands for the infinite-radius limit: it behaves
/// like the `d`-dimensional principal plane of its reduction subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Spherelet {
    pub frame: DMatrix<f64>,
    pub center: DVector<f64>,
    pub radius: f64,
    pub degenerate: bool,
    pub plane: Hyperplane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFitDiagnostics {
    pub h_condition: f64,
    pub algebraic_loss: f64,
    pub geometric_mse: f64,
}

impl Spherelet {
    /// Wraps a reduction subspace as an infinite-radius sphere.
    pub fn flat(plane: Hyperplane) -> Self {
        Self {
            frame: plane.frame.clone(),
            center: plane.mu.clone(),
            radius: f64::INFINITY,
            degenerate: true,
            plane,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.frame.ncols().saturating_sub(1)
    }

    pub fn ambient_dim(&self) -> usize {
        self.center.len()
    }

    /// The flat piece used when the sphere degenerates.
    pub fn tangent_plane(&self) -> Hyperplane {
        self.plane.truncate(self.intrinsic_dim())
    }

    /// Closest point on the sphere: `c + r * VV^T(x - c) / ||VV^T(x - c)||`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.ambient_dim())?;
        if self.degenerate {
            return self.tangent_plane().project(x);
        }
        let u = &self.frame * (self.frame.transpose() * (x - &self.center));
        let len = u.norm();
        if !(len > 1e-12 * self.radius) {
            return Err(Error::SingularProjection);
        }
        Ok(&self.center + u * (self.radius / len))
    }

    /// Squared distance from `x` to the sphere (or plane when degenerate).
    ///
    /// Defined everywhere, including at points whose projection is singular.
    pub fn residual_sq(&self, x: &DVector<f64>) -> Result<f64> {
        check_len(x, self.ambient_dim())?;
        if self.degenerate {
            return self.tangent_plane().residual_sq(x);
        }
        let w = x - &self.center;
        let a = self.frame.transpose() * &w;
        let perp = w - &self.frame * &a;
        let radial = a.norm() - self.radius;
        Ok(perp.norm_squared() + radial * radial)
    }

    /// Geodesic distance `r * arccos((x-c).(y-c) / r^2)` between two points on
    /// the sphere; Euclidean distance when degenerate.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_len(x, self.ambient_dim())?;
        check_len(y, self.ambient_dim())?;
        if self.degenerate {
            return Ok((x - y).norm());
        }
        let cos = ((x - &self.center).dot(&(y - &self.center)) / (self.radius * self.radius))
            .clamp(-1.0, 1.0);
        Ok(self.radius * cos.acos())
    }
}

pub fn project_sphere(x: &DVector<f64>, s: &Spherelet) -> Result<DVector<f64>> {
    s.project(x)
}

pub fn project_plane(x: &DVector<f64>, p: &Hyperplane) -> Result<DVector<f64>> {
    p.project(x)
}

pub fn sphere_distance(x: &DVector<f64>, y: &DVector<f64>, s: &Spherelet) -> Result<f64> {
    s.distance(x, y)
}

/// Fits a `d`-dimensional sphere by SPCA.
///
/// The data are first reduced onto their `(d+1)`-dimensional principal
/// subspace; the algebraic sphere `y'y + f'y + b = 0` is then solved in the
/// subspace coordinates `z = V^T(y - mean)`, where the scatter `H` is
/// invertible unless the points are flat. The returned center is mapped back
/// into the ambient space and the radius is the mean distance of the reduced
/// points to it.
pub fn fit_sphere(x: &DataMatrix, d: usize) -> Result<(Spherelet, SphereFitDiagnostics)> {
    let n = x.nrows();
    if n < d + 3 {
        return Err(Error::InsufficientData {
            needed: d + 3,
            got: n,
        });
    }
    let plane = fit_hyperplane(x, d)?;
    let z = center_rows(x, &plane.mu) * &plane.frame;
    let fit = solve_reduced(&z);

    let flat = |plane: Hyperplane, cond: f64| -> Result<(Spherelet, SphereFitDiagnostics)> {
        let s = Spherelet::flat(plane);
        let geometric_mse = mean_residual(x, &s)?;
        Ok((
            s,
            SphereFitDiagnostics {
                h_condition: cond,
                algebraic_loss: 0.0,
                geometric_mse,
            },
        ))
    };

    let Some(ReducedFit {
        center: zc,
        condition,
        loss,
    }) = fit
    else {
        return flat(plane, f64::INFINITY);
    };
    if !(condition <= MAX_CONDITION) {
        return flat(plane, condition);
    }
    let radius = z
        .row_iter()
        .map(|row| (row.transpose() - &zc).norm())
        .sum::<f64>()
        / n as f64;
    let diameter = crate::numeric::diameter(&z);
    if !(radius > 0.0) || radius > MAX_RADIUS_RATIO * diameter {
        return flat(plane, condition);
    }
    let center = &plane.mu + &plane.frame * &zc;
    let s = Spherelet {
        frame: plane.frame.clone(),
        center,
        radius,
        degenerate: false,
        plane,
    };
    let geometric_mse = mean_residual(x, &s)?;
    Ok((
        s,
        SphereFitDiagnostics {
            h_condition: condition,
            algebraic_loss: loss,
            geometric_mse,
        },
    ))
}

struct ReducedFit {
    center: DVector<f64>,
    condition: f64,
    loss: f64,
}

/// Minimizes `g(f)` over the rows of `z` and returns the center `-f/2`.
fn solve_reduced(z: &DMatrix<f64>) -> Option<ReducedFit> {
    let n = z.nrows() as f64;
    let zbar = column_mean(z);
    let zc = center_rows(z, &zbar);
    let sq: Vec<f64> = z.row_iter().map(|r| r.norm_squared()).collect();
    let sq_mean = sq.iter().sum::<f64>() / n;

    let h = zc.transpose() * &zc;
    let mut xi = DVector::zeros(z.ncols());
    for (row, l) in zc.row_iter().zip(&sq) {
        xi += row.transpose() * (l - sq_mean);
    }

    let eig = sym_eig(&h).ok()?;
    let lmax = eig.eigenvalues[0];
    let lmin = eig.eigenvalues[eig.eigenvalues.len() - 1];
    if !(lmin > 0.0) {
        return None;
    }
    let condition = lmax / lmin;
    let q = &eig.eigenvectors;
    let inv = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v)) * q.transpose();
    let f = -(inv * &xi);
    let loss = zc
        .row_iter()
        .zip(&sq)
        .map(|(row, l)| {
            let r = l - sq_mean + (row * &f)[0];
            r * r
        })
        .sum();
    Some(ReducedFit {
        center: f * -0.5,
        condition,
        loss,
    })
}

/// The algebraic sphere loss `sum_i (y_i'y_i + f'y_i + b)^2`.
pub fn algebraic_loss(y: &DataMatrix, f: &DVector<f64>, b: f64) -> f64 {
    y.row_iter()
        .map(|row| {
            let r = row.norm_squared() + (row * f)[0] + b;
            r * r
        })
        .sum()
}

/// The offset `b` minimizing the algebraic loss for fixed `f`:
/// `-(1/n) sum_i (y_i'y_i + f'y_i)`.
pub fn optimal_offset(y: &DataMatrix, f: &DVector<f64>) -> f64 {
    -y.row_iter()
        .map(|row| row.norm_squared() + (row * f)[0])
        .sum::<f64>()
        / y.nrows() as f64
}

/// Mean squared distance of the rows of `x` to `s`.
pub fn mean_residual(x: &DataMatrix, s: &Spherelet) -> Result<f64> {
    let mut total = 0.0;
    for row in x.row_iter() {
        total += s.residual_sq(&row.transpose())?;
    }
    Ok(total / x.nrows().max(1) as f64)
}

pub(crate) fn center_rows(x: &DataMatrix, mu: &DVector<f64>) -> DataMatrix {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mu.transpose();
    }
    out
}

fn check_len(x: &DVector<f64>, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Dimension(format!(
            "point has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    Ok(())
}
