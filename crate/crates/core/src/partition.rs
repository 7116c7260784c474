//! Recursive bisection of the ambient space by the sign of the first
//! principal-component score.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{column_mean, select_rows, sym_eig};
use crate::spca::{center_rows, fit_sphere, fit_tangent_plane, Hyperplane, Spherelet};
use crate::DataMatrix;

/// Which local model is fitted in each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fitter {
    Spca,
    Pca,
}

impl Fitter {
    /// Smallest cell that still determines the local model.
    pub fn min_points(self, d: usize) -> usize {
        match self {
            Fitter::Spca => d + 3,
            Fitter::Pca => d.max(1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fitter::Spca => "spca",
            Fitter::Pca => "pca",
        }
    }
}

impl std::str::FromStr for Fitter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spca" => Ok(Fitter::Spca),
            "pca" => Ok(Fitter::Pca),
            other => Err(Error::Parameter(format!("unknown method '{other}'"))),
        }
    }
}

/// A fitted local piece of the manifold estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Sphere(Spherelet),
    /// `fallback` is set when an SPCA fit degenerated to its flat limit.
    Plane { plane: Hyperplane, fallback: bool },
}

impl Piece {
    pub fn fit(x: &DataMatrix, d: usize, fitter: Fitter) -> Result<Piece> {
        match fitter {
            Fitter::Pca => Ok(Piece::Plane {
                plane: fit_tangent_plane(x, d)?,
                fallback: false,
            }),
            Fitter::Spca => {
                let (s, _) = fit_sphere(x, d)?;
                if s.degenerate {
                    Ok(Piece::Plane {
                        plane: s.tangent_plane(),
                        fallback: true,
                    })
                } else {
                    Ok(Piece::Sphere(s))
                }
            }
        }
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Piece::Sphere(s) => s.project(x),
            Piece::Plane { plane, .. } => plane.project(x),
        }
    }

    pub fn residual_sq(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Piece::Sphere(s) => s.residual_sq(x),
            Piece::Plane { plane, .. } => plane.residual_sq(x),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Piece::Sphere(s) => s.ambient_dim(),
            Piece::Plane { plane, .. } => plane.ambient_dim(),
        }
    }

    /// Mean squared residual of the rows of `x`.
    pub fn mse(&self, x: &DataMatrix) -> Result<f64> {
        let mut total = 0.0;
        for row in x.row_iter() {
            total += self.residual_sq(&row.transpose())?;
        }
        Ok(total / x.nrows().max(1) as f64)
    }
}

/// Split hyperplane through the cell mean, orthogonal to the first principal
/// direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRule {
    pub mu: DVector<f64>,
    pub direction: DVector<f64>,
}

impl SplitRule {
    pub fn score(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mu.iter())
            .zip(self.direction.iter())
            .map(|((xi, mi), vi)| (xi - mi) * vi)
            .sum()
    }

    /// Strictly positive scores go left; zero and negative go right.
    pub fn goes_left(&self, x: &[f64]) -> bool {
        self.score(x) > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionNode {
    Internal {
        rule: SplitRule,
        left: Box<PartitionNode>,
        right: Box<PartitionNode>,
    },
    Leaf {
        cell_id: usize,
        members: Vec<usize>,
    },
}

impl PartitionNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            PartitionNode::Leaf { .. } => 1,
            PartitionNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            PartitionNode::Leaf { .. } => 0,
            PartitionNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaves in depth-first (left before right) order.
    pub fn leaves(&self) -> Vec<(usize, &[usize])> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(usize, &'a [usize])>) {
        match self {
            PartitionNode::Leaf { cell_id, members } => out.push((*cell_id, members)),
            PartitionNode::Internal { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    fn ambient_dim(&self) -> Option<usize> {
        match self {
            PartitionNode::Internal { rule, .. } => Some(rule.mu.len()),
            PartitionNode::Leaf { .. } => None,
        }
    }
}

/// Cell that `x` falls into.
pub fn route(x: &[f64], tree: &PartitionNode) -> usize {
    let mut node = tree;
    loop {
        match node {
            PartitionNode::Leaf { cell_id, .. } => return *cell_id,
            PartitionNode::Internal { rule, left, right } => {
                node = if rule.goes_left(x) { left } else { right };
            }
        }
    }
}

pub(crate) fn check_route_dim(x: &[f64], tree: &PartitionNode) -> Result<()> {
    match tree.ambient_dim() {
        Some(dim) if dim != x.len() => Err(Error::Dimension(format!(
            "point has {} coordinates, tree was built in dimension {dim}",
            x.len()
        ))),
        _ => Ok(()),
    }
}

/// Computes the PC1 split of a cell and the row indices (into `x`) on each side.
pub fn split_cell(x: &DataMatrix) -> Result<(SplitRule, Vec<usize>, Vec<usize>)> {
    if x.nrows() < 2 {
        return Err(Error::DegenerateSplit);
    }
    let mu = column_mean(x);
    let centered = center_rows(x, &mu);
    let scatter = centered.transpose() * &centered;
    let eig = sym_eig(&scatter)?;
    if !(eig.eigenvalues[0] > 0.0) {
        return Err(Error::DegenerateSplit);
    }
    let rule = SplitRule {
        mu,
        direction: eig.eigenvectors.column(0).into_owned(),
    };
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (i, row) in x.row_iter().enumerate() {
        let row: Vec<f64> = row.iter().copied().collect();
        if rule.goes_left(&row) {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        return Err(Error::DegenerateSplit);
    }
    Ok((rule, left, right))
}

/// Stopping and fitting parameters for [`build_tree`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub d: usize,
    pub eps: f64,
    pub n_min: usize,
    pub fitter: Fitter,
}

impl TreeConfig {
    pub fn new(d: usize, eps: f64, fitter: Fitter) -> Self {
        Self {
            d,
            eps,
            n_min: default_n_min(d),
            fitter,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        let floor = self.fitter.min_points(self.d);
        if self.n_min < floor {
            return Err(Error::Parameter(format!(
                "n_min = {} is below the {} points a {} piece needs",
                self.n_min,
                floor,
                self.fitter.name()
            )));
        }
        if n < self.n_min {
            return Err(Error::InsufficientData {
                needed: self.n_min,
                got: n,
            });
        }
        Ok(())
    }
}

pub fn default_n_min(d: usize) -> usize {
    10.max(d + 3)
}

/// Recursively splits cells whose fitted-piece MSE exceeds `eps` while they
/// hold more than `n_min` points.
pub fn build_tree(x: &DataMatrix, cfg: &TreeConfig) -> Result<PartitionNode> {
    Ok(grow(x, cfg)?.0)
}

/// Builds the tree and returns the fitted piece of each leaf, indexed by
/// cell id.
pub(crate) fn grow(x: &DataMatrix, cfg: &TreeConfig) -> Result<(PartitionNode, Vec<Piece>)> {
    cfg.validate(x.nrows())?;
    let all: Vec<usize> = (0..x.nrows()).collect();
    let (mut tree, pieces) = grow_cell(x, all, cfg)?;
    let mut next = 0;
    number_leaves(&mut tree, &mut next);
    Ok((tree, pieces))
}

fn grow_cell(
    x: &DataMatrix,
    members: Vec<usize>,
    cfg: &TreeConfig,
) -> Result<(PartitionNode, Vec<Piece>)> {
    let cell = select_rows(x, &members);
    let piece = Piece::fit(&cell, cfg.d, cfg.fitter)?;
    let mse = piece.mse(&cell)?;
    let leaf = |members: Vec<usize>, piece: Piece| {
        Ok((PartitionNode::Leaf { cell_id: 0, members }, vec![piece]))
    };
    if !(mse > cfg.eps) || members.len() <= cfg.n_min {
        return leaf(members, piece);
    }
    let (rule, l, r) = match split_cell(&cell) {
        Ok(split) => split,
        Err(Error::DegenerateSplit) => return leaf(members, piece),
        Err(e) => return Err(e),
    };
    if l.len() < cfg.n_min || r.len() < cfg.n_min {
        return leaf(members, piece);
    }
    let left_members: Vec<usize> = l.iter().map(|&i| members[i]).collect();
    let right_members: Vec<usize> = r.iter().map(|&i| members[i]).collect();
    let (left, right) = rayon::join(
        || grow_cell(x, left_members, cfg),
        || grow_cell(x, right_members, cfg),
    );
    let (left, mut pieces) = left?;
    let (right, right_pieces) = right?;
    pieces.extend(right_pieces);
    Ok((
        PartitionNode::Internal {
            rule,
            left: Box::new(left),
            right: Box::new(right),
        },
        pieces,
    ))
}

fn number_leaves(node: &mut PartitionNode, next: &mut usize) {
    match node {
        PartitionNode::Leaf { cell_id, .. } => {
            *cell_id = *next;
            *next += 1;
        }
        PartitionNode::Internal { left, right, .. } => {
            number_leaves(left, next);
            number_leaves(right, next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_gaussian;
    use nalgebra::DMatrix;

    fn line(values: &[f64]) -> DataMatrix {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn split_by_sign_of_centered_value() {
        let (rule, left, right) = split_cell(&line(&[-2.0, -1.0, 1.0, 2.0])).unwrap();
        assert_eq!(rule.direction[0], 1.0);
        assert_eq!(left, vec![2, 3]);
        assert_eq!(right, vec![0, 1]);
    }

    #[test]
    fn zero_score_goes_right() {
        let (_, left, right) = split_cell(&line(&[-1.0, 0.0, 1.0])).unwrap();
        assert_eq!(left, vec![2]);
        assert_eq!(right, vec![0, 1]);
    }

    #[test]
    fn identical_points_cannot_split() {
        assert!(matches!(
            split_cell(&line(&[3.0, 3.0, 3.0])),
            Err(Error::DegenerateSplit)
        ));
    }

    #[test]
    fn split_is_orthogonal_to_dominant_direction() {
        let mut g = seeded_gaussian(400, 2, 1.0, 11).unwrap();
        // stretch along (1, 1)/sqrt(2)
        for mut row in g.row_iter_mut() {
            let (a, b) = (row[0] * 5.0, row[1] * 0.5);
            row[0] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
            row[1] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        let (rule, _, _) = split_cell(&g).unwrap();
        let mu = column_mean(&g);
        let c = center_rows(&g, &mu);
        let cov = c.transpose() * &c;
        let oracle = sym_eig(&cov).unwrap();
        let v = oracle.eigenvectors.column(0);
        assert!((rule.direction.dot(&v).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_split_on_tiny_line() {
        let cfg = TreeConfig {
            d: 0,
            eps: 1e-12,
            n_min: 1,
            fitter: Fitter::Pca,
        };
        let tree = build_tree(&line(&[-2.0, -1.0, 1.0, 2.0]), &cfg).unwrap();
        let PartitionNode::Internal { rule, .. } = &tree else {
            panic!("expected a split");
        };
        assert_eq!(rule.mu[0], 0.0);
        assert_eq!(tree.leaf_count(), 4);
        let mut members: Vec<usize> = tree.leaves().iter().flat_map(|l| l.1.to_vec()).collect();
        members.sort();
        assert_eq!(members, vec![0, 1, 2, 3]);
        // depth-first numbering
        let ids: Vec<usize> = tree.leaves().iter().map(|l| l.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn circle_is_one_leaf_under_spca() {
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            if j == 0 {
                3.0 + 2.0 * t.cos()
            } else {
                -1.0 + 2.0 * t.sin()
            }
        });
        let tree = build_tree(&x, &TreeConfig::new(1, 1e-6, Fitter::Spca)).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        let tree = build_tree(&x, &TreeConfig::new(1, 1e-6, Fitter::Pca)).unwrap();
        assert!(tree.leaf_count() > 1);
    }

    #[test]
    fn rejects_bad_config() {
        let x = line(&[0.0, 1.0, 2.0, 3.0]);
        let mut cfg = TreeConfig::new(0, 0.0, Fitter::Pca);
        assert!(build_tree(&x, &cfg).is_err());
        cfg.eps = 1.0;
        cfg.n_min = 5;
        assert!(matches!(
            build_tree(&x, &cfg),
            Err(Error::InsufficientData { .. })
        ));
        let spca = TreeConfig {
            d: 1,
            eps: 1.0,
            n_min: 3,
            fitter: Fitter::Spca,
        };
        assert!(matches!(build_tree(&x, &spca), Err(Error::Parameter(_))));
    }
}
