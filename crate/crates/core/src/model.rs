//! Piecewise manifold estimate: a partition tree with one fitted sphere or
//! plane per leaf, out-of-sample projection, MSE and model files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{check_route_dim, grow, route, Fitter, PartitionNode, Piece, SplitRule, TreeConfig};
use crate::spca::{Hyperplane, Spherelet};
use crate::DataMatrix;

pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SphereletModel {
    pub tree: PartitionNode,
    /// Fitted piece of each leaf, indexed by cell id.
    pub pieces: Vec<Piece>,
    pub d: usize,
    pub ambient_dim: usize,
    pub fitter: Fitter,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub eps: f64,
    pub n_min: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Command line that produced the model, when written by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_version: Option<String>,
}

/// Per-cell and overall mean squared projection residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub overall: f64,
    pub per_cell: BTreeMap<usize, f64>,
    pub counts: BTreeMap<usize, usize>,
}

impl SphereletModel {
    pub fn fit(x: &DataMatrix, cfg: &TreeConfig) -> Result<Self> {
        let (tree, pieces) = grow(x, cfg)?;
        Ok(Self {
            tree,
            pieces,
            d: cfg.d,
            ambient_dim: x.ncols(),
            fitter: cfg.fitter,
            provenance: Provenance {
                eps: cfg.eps,
                n_min: cfg.n_min,
                seed: None,
                command: None,
                library_version: Some(env!("CARGO_PKG_VERSION").to_string()),
            },
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.provenance.seed = seed;
        self
    }

    /// Number of pieces.
    pub fn pieces_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn route(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len())?;
        check_route_dim(x, &self.tree)?;
        Ok(route(x, &self.tree))
    }

    /// Routes `x` to its cell and applies that cell's projection.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let cell = self.route(x.as_slice())?;
        self.pieces[cell].project(x)
    }

    /// Projects every row of `x`.
    pub fn project_all(&self, x: &DataMatrix) -> Result<DataMatrix> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (i, row) in x.row_iter().enumerate() {
            let p = self.project(&row.transpose())?;
            out.set_row(i, &p.transpose());
        }
        Ok(out)
    }

    /// Mean squared distance between rows of `x` and their projections, both
    /// overall and per cell. Works the same for training and held-out data.
    pub fn mse(&self, x: &DataMatrix) -> Result<MseReport> {
        if x.nrows() == 0 {
            return Err(Error::Parameter("mse needs at least one point".into()));
        }
        self.check_dim(x.ncols())?;
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut total = 0.0;
        for row in x.row_iter() {
            let v = row.transpose();
            let cell = route(v.as_slice(), &self.tree);
            let r = self.pieces[cell].residual_sq(&v)?;
            total += r;
            *sums.entry(cell).or_default() += r;
            *counts.entry(cell).or_default() += 1;
        }
        let per_cell = sums
            .into_iter()
            .map(|(k, s)| (k, s / counts[&k] as f64))
            .collect();
        Ok(MseReport {
            overall: total / x.nrows() as f64,
            per_cell,
            counts,
        })
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.ambient_dim {
            return Err(Error::Dimension(format!(
                "input has {dim} coordinates, model was fitted in dimension {}",
                self.ambient_dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self))
            .expect("model contains only finite numbers")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(MODEL_VERSION) => {}
            Some(found) => {
                return Err(Error::Version {
                    found,
                    expected: MODEL_VERSION,
                })
            }
            None => {
                return Err(Error::Parse {
                    location: "field 'version'".into(),
                    message: "missing or not an unsigned integer".into(),
                })
            }
        }
        let file: ModelFile = serde_json::from_str(text).map_err(parse_error)?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u64,
    d: usize,
    #[serde(rename = "D")]
    ambient: usize,
    fitter: Fitter,
    provenance: Provenance,
    tree: TreeFile,
    leaves: Vec<LeafFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TreeFile {
    Split {
        split: SplitFile,
        left: Box<TreeFile>,
        right: Box<TreeFile>,
    },
    Leaf {
        leaf: usize,
        members: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    mu: Vec<f64>,
    direction: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum LeafKind {
    Sphere,
    Plane,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafFile {
    id: usize,
    kind: LeafKind,
    mu: Vec<f64>,
    /// Row-major `D x k` frame.
    frame: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default)]
    fallback: bool,
}

impl ModelFile {
    fn from_model(m: &SphereletModel) -> Self {
        let leaves = m
            .pieces
            .iter()
            .enumerate()
            .map(|(id, piece)| match piece {
                Piece::Sphere(s) => LeafFile {
                    id,
                    kind: LeafKind::Sphere,
                    mu: s.plane.mu.iter().copied().collect(),
                    frame: matrix_rows(&s.frame),
                    center: Some(s.center.iter().copied().collect()),
                    radius: Some(s.radius),
                    fallback: false,
                },
                Piece::Plane { plane, fallback } => LeafFile {
                    id,
                    kind: LeafKind::Plane,
                    mu: plane.mu.iter().copied().collect(),
                    frame: matrix_rows(&plane.frame),
                    center: None,
                    radius: None,
                    fallback: *fallback,
                },
            })
            .collect();
        ModelFile {
            version: MODEL_VERSION,
            d: m.d,
            ambient: m.ambient_dim,
            fitter: m.fitter,
            provenance: m.provenance.clone(),
            tree: tree_to_file(&m.tree),
            leaves,
        }
    }

    fn into_model(self) -> Result<SphereletModel> {
        let ambient = self.ambient;
        let d = self.d;
        let tree = tree_from_file(self.tree, ambient)?;
        let k = tree.leaf_count();
        let mut ids: Vec<usize> = tree.leaves().iter().map(|l| l.0).collect();
        ids.sort_unstable();
        if ids != (0..k).collect::<Vec<_>>() {
            return Err(field_error("tree", "leaf ids must be 0..K with no repeats"));
        }
        let mut slots: Vec<Option<Piece>> = vec![None; k];
        for (pos, leaf) in self.leaves.into_iter().enumerate() {
            let at = format!("leaves[{pos}]");
            let id = leaf.id;
            if id >= k || slots[id].is_some() {
                return Err(field_error(&at, &format!("id {id} is unknown or duplicated")));
            }
            slots[id] = Some(leaf_to_piece(leaf, d, ambient, &at)?);
        }
        let pieces = slots
            .into_iter()
            .enumerate()
            .map(|(id, p)| p.ok_or_else(|| field_error("leaves", &format!("no piece for cell {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SphereletModel {
            tree,
            pieces,
            d,
            ambient_dim: ambient,
            fitter: self.fitter,
            provenance: self.provenance,
        })
    }
}

fn field_error(location: &str, message: &str) -> Error {
    Error::Parse {
        location: location.to_string(),
        message: message.to_string(),
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>, len: usize, at: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(field_error(at, &format!("expected {len} entries, found {}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

fn leaf_to_piece(leaf: LeafFile, d: usize, ambient: usize, at: &str) -> Result<Piece> {
    let mu = vector(leaf.mu, ambient, &format!("{at}.mu"))?;
    let cols = match leaf.kind {
        LeafKind::Sphere => d + 1,
        LeafKind::Plane => d,
    };
    if leaf.frame.len() != ambient || leaf.frame.iter().any(|r| r.len() != cols) {
        return Err(field_error(
            &format!("{at}.frame"),
            &format!("expected {ambient} rows of {cols} entries"),
        ));
    }
    let frame = DMatrix::from_fn(ambient, cols, |i, j| leaf.frame[i][j]);
    match leaf.kind {
        LeafKind::Plane => Ok(Piece::Plane {
            plane: Hyperplane { mu, frame },
            fallback: leaf.fallback,
        }),
        LeafKind::Sphere => {
            let center = leaf
                .center
                .ok_or_else(|| field_error(&format!("{at}.center"), "missing for a sphere"))?;
            let center = vector(center, ambient, &format!("{at}.center"))?;
            let radius = leaf
                .radius
                .ok_or_else(|| field_error(&format!("{at}.radius"), "missing for a sphere"))?;
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(field_error(&format!("{at}.radius"), "must be positive and finite"));
            }
            Ok(Piece::Sphere(Spherelet {
                frame: frame.clone(),
                center,
                radius,
                degenerate: false,
                plane: Hyperplane { mu, frame },
            }))
        }
    }
}

fn tree_to_file(node: &PartitionNode) -> TreeFile {
    match node {
        PartitionNode::Leaf { cell_id, members } => TreeFile::Leaf {
            leaf: *cell_id,
            members: members.clone(),
        },
        PartitionNode::Internal { rule, left, right } => TreeFile::Split {
            split: SplitFile {
                mu: rule.mu.iter().copied().collect(),
                direction: rule.direction.iter().copied().collect(),
            },
            left: Box::new(tree_to_file(left)),
            right: Box::new(tree_to_file(right)),
        },
    }
}

fn tree_from_file(node: TreeFile, ambient: usize) -> Result<PartitionNode> {
    Ok(match node {
        TreeFile::Leaf { leaf, members } => PartitionNode::Leaf {
            cell_id: leaf,
            members,
        },
        TreeFile::Split { split, left, right } => PartitionNode::Internal {
            rule: SplitRule {
                mu: vector(split.mu, ambient, "tree.split.mu")?,
                direction: vector(split.direction, ambient, "tree.split.direction")?,
            },
            left: Box::new(tree_from_file(*left, ambient)?),
            right: Box::new(tree_from_file(*right, ambient)?),
        },
    })
}
