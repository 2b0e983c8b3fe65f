//! JSON model-specification files.
//!
//! ```json
//! {
//!   "p": 6, "q": 2,
//!   "mean_structure": true,
//!   "se_threshold": 5.0,
//!   "matrices": {
//!     "nu":     [{"row": 1, "col": 1, "free": "nu1"}],
//!     "lambda": [{"row": 1, "col": 1, "fixed": 1.0},
//!                {"row": 2, "col": 1, "free": "l21"}],
//!     "theta":  [{"row": 1, "col": 1, "free": "th1"}],
//!     "alpha":  [],
//!     "b":      [],
//!     "psi":    [{"row": 1, "col": 1, "fixed": 1.0}]
//!   }
//! }
//! ```
//!
//! Rows and columns are 1-based. Unlisted cells are fixed at zero. Repeating
//! one free label ties those cells to a single parameter (within one matrix).
//! Parameter indices are assigned by first occurrence in canonical order
//! (ν, Λ row-major, Θ lower triangle, α, B row-major, Ψ lower triangle).

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{Cell, MatrixId, MatrixPattern, ModelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    p: usize,
    q: usize,
    #[serde(default = "default_true")]
    mean_structure: bool,
    #[serde(default)]
    se_threshold: Option<f64>,
    matrices: MatricesFile,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatricesFile {
    #[serde(default)]
    nu: Vec<CellFile>,
    #[serde(default)]
    lambda: Vec<CellFile>,
    #[serde(default)]
    theta: Vec<CellFile>,
    #[serde(default)]
    alpha: Vec<CellFile>,
    #[serde(default)]
    b: Vec<CellFile>,
    #[serde(default)]
    psi: Vec<CellFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellFile {
    row: usize,
    #[serde(default = "default_col")]
    col: usize,
    #[serde(default)]
    fixed: Option<f64>,
    #[serde(default)]
    free: Option<String>,
}

fn default_col() -> usize {
    1
}

pub fn from_json_str(text: &str) -> Result<ModelSpec> {
    let file: SpecFile = serde_json::from_str(text)?;
    build(file)
}

pub fn from_json_path(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    from_json_str(&text)
}

fn build(file: SpecFile) -> Result<ModelSpec> {
    let p = file.p;
    let q = file.q;
    struct Staged<'a> {
        id: MatrixId,
        cells: &'a [CellFile],
        pattern: MatrixPattern,
    }
    let mut staged = vec![
        Staged { id: MatrixId::Nu, cells: &file.matrices.nu, pattern: MatrixPattern::general(p, 1) },
        Staged {
            id: MatrixId::Lambda,
            cells: &file.matrices.lambda,
            pattern: MatrixPattern::general(p, q),
        },
        Staged { id: MatrixId::Theta, cells: &file.matrices.theta, pattern: MatrixPattern::symmetric(p) },
        Staged { id: MatrixId::Alpha, cells: &file.matrices.alpha, pattern: MatrixPattern::general(q, 1) },
        Staged { id: MatrixId::B, cells: &file.matrices.b, pattern: MatrixPattern::general(q, q) },
        Staged { id: MatrixId::Psi, cells: &file.matrices.psi, pattern: MatrixPattern::symmetric(q) },
    ];

    // First pass: place fixed values and remember labelled cells per matrix.
    let mut labelled: Vec<(MatrixId, usize, usize, String)> = Vec::new();
    for s in staged.iter_mut() {
        for c in s.cells {
            if c.row == 0 || c.col == 0 {
                return Err(Error::InvalidSpec(format!(
                    "{}: rows and columns are 1-based",
                    s.id.name()
                )));
            }
            let (i, j) = (c.row - 1, c.col - 1);
            match (&c.fixed, &c.free) {
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidSpec(format!(
                        "{}({},{}): cell is both fixed and free",
                        s.id.name(),
                        c.row,
                        c.col
                    )))
                }
                (None, None) => {
                    return Err(Error::InvalidSpec(format!(
                        "{}({},{}): cell needs either \"fixed\" or \"free\"",
                        s.id.name(),
                        c.row,
                        c.col
                    )))
                }
                (Some(v), None) => {
                    let existing = if i < s.pattern.rows() && j < s.pattern.cols() {
                        Some(s.pattern.get(i, j))
                    } else {
                        None
                    };
                    if let Some(prev) = existing {
                        if prev != Cell::Fixed(0.0) && prev != Cell::Fixed(*v) {
                            return Err(Error::ValueConflict(format!(
                                "{}({},{}) listed twice with different content",
                                s.id.name(),
                                c.row,
                                c.col
                            )));
                        }
                    }
                    s.pattern.set_fixed(i, j, *v)?;
                }
                (None, Some(label)) => labelled.push((s.id, i, j, label.clone())),
            }
        }
    }

    // Second pass: assign indices by first occurrence in canonical order.
    let mut order: Vec<(MatrixId, usize, usize, String)> = labelled.clone();
    order.sort_by_key(|(id, i, j, _)| {
        let mid = MatrixId::CANONICAL_ORDER.iter().position(|m| m == id).unwrap();
        // lower-triangle representative for symmetric matrices
        let (ci, cj) = if matches!(id, MatrixId::Theta | MatrixId::Psi) && j > i {
            (*j, *i)
        } else {
            (*i, *j)
        };
        (mid, ci, cj)
    });
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut matrix_of: HashMap<String, MatrixId> = HashMap::new();
    for (id, _, _, label) in &order {
        if let Some(owner) = matrix_of.get(label) {
            if owner != id {
                return Err(Error::InvalidSpec(format!(
                    "label {label:?} is shared across {} and {}",
                    owner.name(),
                    id.name()
                )));
            }
        } else {
            matrix_of.insert(label.clone(), *id);
            let next = index_of.len();
            index_of.insert(label.clone(), next);
        }
    }
    for (id, i, j, label) in &labelled {
        let idx = index_of[label];
        let s = staged.iter_mut().find(|s| s.id == *id).unwrap();
        let existing = s.pattern.get(*i, *j);
        if existing != Cell::Fixed(0.0) && existing != Cell::Free(idx) {
            return Err(Error::ValueConflict(format!(
                "{}({},{}) listed twice with different content",
                id.name(),
                i + 1,
                j + 1
            )));
        }
        s.pattern.set_free(*i, *j, idx)?;
    }

    let mut it = staged.into_iter();
    let nu = it.next().unwrap().pattern;
    let lambda = it.next().unwrap().pattern;
    let theta = it.next().unwrap().pattern;
    let alpha = it.next().unwrap().pattern;
    let b = it.next().unwrap().pattern;
    let psi = it.next().unwrap().pattern;
    let mut spec = ModelSpec::new(p, q, nu, lambda, theta, alpha, b, psi, file.mean_structure)?;
    spec.se_threshold = file.se_threshold;
    Ok(spec)
}
