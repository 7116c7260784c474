//! Manifold denoising by Gaussian blurring and local projection.
//!
//! The methods are ablations of one pass:
//!
//! | method  | blur | local projection |
//! |---------|------|------------------|
//! | `gbms`  | yes  | none             |
//! | `ltp`   | no   | linear           |
//! | `mbms`  | yes  | linear           |
//! | `lsp`   | no   | spherical        |
//! | `smbms` | yes  | spherical        |

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{all_knn, row_vec, select_rows};
use crate::spca::{fit_sphere, fit_tangent_plane};
use crate::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gbms,
    Ltp,
    Mbms,
    Smbms,
    Lsp,
}

impl Method {
    fn blurs(self) -> bool {
        matches!(self, Method::Gbms | Method::Mbms | Method::Smbms)
    }

    fn projection(self) -> Option<Projection> {
        match self {
            Method::Gbms => None,
            Method::Ltp | Method::Mbms => Some(Projection::Linear),
            Method::Smbms | Method::Lsp => Some(Projection::Spherical),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gbms" => Method::Gbms,
            "ltp" => Method::Ltp,
            "mbms" => Method::Mbms,
            "smbms" => Method::Smbms,
            "lsp" => Method::Lsp,
            other => return Err(Error::Parameter(format!("unknown denoising method '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Linear,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    pub method: Method,
    pub k: usize,
    pub sigma: f64,
    pub iters: usize,
    pub d: usize,
}

impl DenoiseConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::Parameter(format!("k = {} outside 1..={n}", self.k)));
        }
        if self.method.projection().is_some() && self.k < self.d + 3 {
            return Err(Error::Parameter(format!(
                "k = {} is below d + 3 = {} needed for local fits",
                self.k,
                self.d + 3
            )));
        }
        if self.method.blurs() && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.iters == 0 {
            return Err(Error::Parameter("iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Denoised points plus the number of local fits that fell back to a
/// linear projection.
#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub points: DataMatrix,
    pub fallbacks: usize,
}

/// Row indices of the `k` nearest neighbours of every row, the row included.
pub fn neighborhoods(x: &DataMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    Ok(all_knn(x, k)?.into_iter().map(|nl| nl.indices).collect())
}

/// Shifts each point to the Gaussian-weighted mean of its `k`-neighbourhood.
pub fn blur_step(x: &DataMatrix, k: usize, sigma: f64) -> Result<DataMatrix> {
    let nbrs = neighborhoods(x, k)?;
    blur_with(x, &nbrs, sigma)
}

fn blur_with(x: &DataMatrix, nbrs: &[Vec<usize>], sigma: f64) -> Result<DataMatrix> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = row_vec(x, i);
            let logits: Vec<f64> = nbrs[i]
                .iter()
                .map(|&j| -crate::numeric::squared_distance_row(x, j, &xi) / (2.0 * sigma * sigma))
                .collect();
            // subtract the max logit so the self weight never underflows
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut out = vec![0.0; x.ncols()];
            for (&j, wj) in nbrs[i].iter().zip(&w) {
                for (o, v) in out.iter_mut().zip(x.row(j).iter()) {
                    *o += wj / total * v;
                }
            }
            out
        })
        .collect();
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| rows[i][j]))
}

/// Projects each row `i` of `points` onto a `d`-dimensional plane or sphere
/// fitted to the rows listed in `nbrs[i]`.
///
/// A spherical fit that degenerates, or whose projection is singular, falls
/// back to the linear projection and is counted.
pub fn local_projection(
    points: &DataMatrix,
    nbrs: &[Vec<usize>],
    d: usize,
    kind: Projection,
) -> Result<DenoiseOutput> {
    let fallbacks = AtomicUsize::new(0);
    let rows = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let local = select_rows(points, &nbrs[i]);
            let target: DVector<f64> = points.row(i).transpose();
            let linear = || fit_tangent_plane(&local, d)?.project(&target);
            match kind {
                Projection::Linear => linear(),
                Projection::Spherical => {
                    let spherical = fit_sphere(&local, d)
                        .ok()
                        .filter(|(s, _)| !s.degenerate)
                        .and_then(|(s, _)| s.project(&target).ok());
                    match spherical {
                        Some(p) => Ok(p),
                        None => {
                            fallbacks.fetch_add(1, Ordering::Relaxed);
                            linear()
                        }
                    }
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let out = DMatrix::from_fn(points.nrows(), points.ncols(), |i, j| rows[i][j]);
    Ok(DenoiseOutput {
        points: out,
        fallbacks: fallbacks.into_inner(),
    })
}

/// Runs `cfg.iters` passes of the configured method. Within a pass the
/// neighbourhoods come from the pass input; the local fits use the blurred
/// images of those neighbours.
pub fn denoise(x: &DataMatrix, cfg: &DenoiseConfig) -> Result<DenoiseOutput> {
    cfg.validate(x.nrows())?;
    let mut current = x.clone();
    let mut fallbacks = 0;
    for _ in 0..cfg.iters {
        let nbrs = neighborhoods(&current, cfg.k)?;
        let shifted = if cfg.method.blurs() {
            blur_with(&current, &nbrs, cfg.sigma)?
        } else {
            current.clone()
        };
        current = match cfg.method.projection() {
            None => shifted,
            Some(kind) => {
                let out = local_projection(&shifted, &nbrs, cfg.d, kind)?;
                fallbacks += out.fallbacks;
                out.points
            }
        };
    }
    Ok(DenoiseOutput {
        points: current,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{noisy_spiral, Sampling};
    use crate::numeric::{column_mean, diameter};

    fn cfg(method: Method, k: usize, sigma: f64) -> DenoiseConfig {
        DenoiseConfig {
            method,
            k,
            sigma,
            iters: 1,
            d: 1,
        }
    }

    #[test]
    fn huge_bandwidth_collapses_to_mean() {
        let x = noisy_spiral(40, 0.3, 1, Sampling::Random).unwrap().points;
        let sigma = 1e9 * diameter(&x);
        let y = blur_step(&x, 40, sigma).unwrap();
        let mean = column_mean(&x);
        for row in y.row_iter() {
            assert!((row.transpose() - &mean).norm() < 1e-6);
        }
        let out = denoise(&x, &cfg(Method::Gbms, 40, sigma)).unwrap();
        assert!((out.points - y).amax() < 1e-12);
    }

    #[test]
    fn single_point_is_fixed() {
        let x = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        assert_eq!(blur_step(&x, 1, 0.5).unwrap(), x);
        assert!(blur_step(&x, 2, 0.5).is_err());
    }

    #[test]
    fn three_collinear_points_match_softmax() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0]);
        let y = blur_step(&x, 3, 1.0).unwrap();
        let pos = [0.0f64, 1.0, 3.0];
        for i in 0..3 {
            let w: Vec<f64> = pos.iter().map(|p| (-(pos[i] - p).powi(2) / 2.0).exp()).collect();
            let expect = w.iter().zip(&pos).map(|(w, p)| w * p).sum::<f64>() / w.iter().sum::<f64>();
            assert!((y[(i, 0)] - expect).abs() < 1e-15);
            assert_eq!(y[(i, 1)], 0.0);
        }
    }

    #[test]
    fn tiny_bandwidth_is_identity() {
        let x = noisy_spiral(60, 0.3, 2, Sampling::Random).unwrap().points;
        let y = blur_step(&x, 10, 1e-12 * diameter(&x)).unwrap();
        assert!((y - &x).amax() < 1e-9);
    }

    #[test]
    fn circle_is_a_fixed_set_of_lsp() {
        let n = 80;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            if j == 0 {
                2.0 + 5.0 * t.cos()
            } else {
                5.0 * t.sin()
            }
        });
        let out = denoise(&x, &cfg(Method::Lsp, 10, 1.0)).unwrap();
        assert!((out.points - &x).amax() < 1e-8);
        assert_eq!(out.fallbacks, 0);
    }

    #[test]
    fn mbms_is_blur_then_linear_projection() {
        let x = noisy_spiral(120, 0.2, 3, Sampling::Random).unwrap().points;
        let nbrs = neighborhoods(&x, 12).unwrap();
        let blurred = blur_step(&x, 12, 1.0).unwrap();
        let composed = local_projection(&blurred, &nbrs, 1, Projection::Linear).unwrap();
        let mbms = denoise(&x, &cfg(Method::Mbms, 12, 1.0)).unwrap();
        assert!((mbms.points - composed.points).amax() < 1e-12);
        let ltp = denoise(&x, &cfg(Method::Ltp, 12, 1.0)).unwrap();
        let direct = local_projection(&x, &nbrs, 1, Projection::Linear).unwrap();
        assert!((ltp.points - direct.points).amax() < 1e-12);
    }

    #[test]
    fn config_checks() {
        let x = DMatrix::zeros(10, 2);
        assert!(denoise(&x, &cfg(Method::Smbms, 3, 1.0)).is_err());
        assert!(denoise(&x, &cfg(Method::Gbms, 11, 1.0)).is_err());
        assert!(denoise(&x, &cfg(Method::Gbms, 5, 0.0)).is_err());
        let mut c = cfg(Method::Gbms, 5, 1.0);
        c.iters = 0;
        assert!(denoise(&x, &c).is_err());
        assert!("blur".parse::<Method>().is_err());
    }
}
