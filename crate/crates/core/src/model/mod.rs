//! Model specification and moment structure.
//!
//! A structural equation model over p observed variables and q latent
//! variables is parameterized by six matrices:
//!
//! * measurement: y = ν + Λη + ε, with Cov(ε) = Θ
//! * structural:  η = α + Bη + ζ, with Cov(ζ) = Ψ
//!
//! Each matrix is a [`MatrixPattern`] whose cells are either fixed constants
//! or free parameters identified by index. The implied moments are
//!
//! * μ(ϑ) = ν + Λ(I−B)⁻¹α
//! * Σ(ϑ) = Λ(I−B)⁻¹Ψ(I−B)⁻ᵀΛᵀ + Θ
//!
//! One free index may tag several cells of the *same* matrix (an equality
//! constraint, e.g. a common residual variance on every diagonal cell);
//! sharing an index across different matrices is rejected. Mirrored cells of
//! a symmetric pattern count as a single cell.

pub mod json;
pub mod presets;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivot-magnitude threshold for declaring I−B numerically singular.
pub const STRUCTURAL_PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixId {
    Nu,
    Lambda,
    Theta,
    Alpha,
    B,
    Psi,
}

impl MatrixId {
    pub fn name(self) -> &'static str {
        match self {
            MatrixId::Nu => "nu",
            MatrixId::Lambda => "lambda",
            MatrixId::Theta => "theta",
            MatrixId::Alpha => "alpha",
            MatrixId::B => "b",
            MatrixId::Psi => "psi",
        }
    }

    fn is_vector(self) -> bool {
        matches!(self, MatrixId::Nu | MatrixId::Alpha)
    }

    /// Canonical packing order: ν, Λ, Θ, α, B, Ψ.
    pub const CANONICAL_ORDER: [MatrixId; 6] = [
        MatrixId::Nu,
        MatrixId::Lambda,
        MatrixId::Theta,
        MatrixId::Alpha,
        MatrixId::B,
        MatrixId::Psi,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Fixed(f64),
    Free(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    General,
    Symmetric,
    Diagonal,
}

/// A rows×cols pattern of fixed and free cells, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPattern {
    rows: usize,
    cols: usize,
    kind: PatternKind,
    cells: Vec<Cell>,
}

impl MatrixPattern {
    pub fn general(rows: usize, cols: usize) -> Self {
        Self { rows, cols, kind: PatternKind::General, cells: vec![Cell::Fixed(0.0); rows * cols] }
    }

    pub fn symmetric(dim: usize) -> Self {
        Self { rows: dim, cols: dim, kind: PatternKind::Symmetric, cells: vec![Cell::Fixed(0.0); dim * dim] }
    }

    pub fn diagonal(dim: usize) -> Self {
        Self { rows: dim, cols: dim, kind: PatternKind::Diagonal, cells: vec![Cell::Fixed(0.0); dim * dim] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.cols + j]
    }

    /// Sets a cell; symmetric and diagonal patterns mirror (i,j) to (j,i),
    /// and diagonal patterns reject off-diagonal non-zero structure.
    pub fn set(&mut self, i: usize, j: usize, cell: Cell) -> Result<()> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::ShapeMismatch(format!(
                "cell ({},{}) outside {}×{} pattern",
                i + 1,
                j + 1,
                self.rows,
                self.cols
            )));
        }
        match self.kind {
            PatternKind::General => {
                self.cells[i * self.cols + j] = cell;
            }
            PatternKind::Symmetric => {
                self.cells[i * self.cols + j] = cell;
                self.cells[j * self.cols + i] = cell;
            }
            PatternKind::Diagonal => {
                if i != j && cell != Cell::Fixed(0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "diagonal pattern cannot hold structure at off-diagonal cell ({},{})",
                        i + 1,
                        j + 1
                    )));
                }
                self.cells[i * self.cols + j] = cell;
            }
        }
        Ok(())
    }

    pub fn set_fixed(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        self.set(i, j, Cell::Fixed(value))
    }

    pub fn set_free(&mut self, i: usize, j: usize, index: usize) -> Result<()> {
        self.set(i, j, Cell::Free(index))
    }

    fn is_square_symmetric_kind(&self) -> bool {
        self.rows == self.cols && matches!(self.kind, PatternKind::Symmetric | PatternKind::Diagonal)
    }

    /// Iterates cells in canonical order: row-major, restricted to the lower
    /// triangle for symmetric/diagonal kinds (one visit per mirrored pair).
    fn canonical_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.is_square_symmetric_kind() && j > i {
                    continue;
                }
                out.push((i, j));
            }
        }
        out
    }

    fn validate(&self, id: MatrixId) -> Result<()> {
        match self.kind {
            PatternKind::General => {}
            PatternKind::Symmetric | PatternKind::Diagonal => {
                if self.rows != self.cols {
                    return Err(Error::InvalidSpec(format!("{} must be square", id.name())));
                }
                for i in 0..self.rows {
                    for j in 0..i {
                        if self.get(i, j) != self.get(j, i) {
                            return Err(Error::InvalidSpec(format!(
                                "{} has asymmetric structure at ({},{})",
                                id.name(),
                                i + 1,
                                j + 1
                            )));
                        }
                        if self.kind == PatternKind::Diagonal && self.get(i, j) != Cell::Fixed(0.0) {
                            return Err(Error::InvalidSpec(format!(
                                "{} is diagonal but has structure at ({},{})",
                                id.name(),
                                i + 1,
                                j + 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Where a free parameter lives (0-based; the display form is 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamLabel {
    pub matrix: MatrixId,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for ParamLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.matrix.is_vector() {
            write!(f, "{}_{}", self.matrix.name(), self.row + 1)
        } else {
            write!(f, "{}_{}_{}", self.matrix.name(), self.row + 1, self.col + 1)
        }
    }
}

/// All cells tagged by one free parameter (always within a single matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct FreeGroup {
    pub matrix: MatrixId,
    /// Canonical cell positions; for symmetric matrices only the lower-
    /// triangle representative of each mirrored pair is listed.
    pub cells: Vec<(usize, usize)>,
}

/// Dense numeric values for all six model matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub nu: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub b: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

/// Implied first and second moments at a parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStructure {
    pub mu: DVector<f64>,
    /// Σ(ϑ) = Σ* + Θ, exactly symmetric by construction. Positive
    /// definiteness is *not* guaranteed here; it is checked downstream.
    pub sigma: DMatrix<f64>,
    /// Common (explained) part Σ* = Λ(I−B)⁻¹Ψ(I−B)⁻ᵀΛᵀ.
    pub sigma_star: DMatrix<f64>,
}

/// A full model specification: patterns, mean-structure flag, labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub p: usize,
    pub q: usize,
    pub nu: MatrixPattern,
    pub lambda: MatrixPattern,
    pub theta: MatrixPattern,
    pub alpha: MatrixPattern,
    pub b: MatrixPattern,
    pub psi: MatrixPattern,
    /// When false the model is fitted to the covariance matrix only and the
    /// mean part of the likelihood is dropped.
    pub mean_structure: bool,
    /// Acceptability threshold on standard errors; `None` uses a data-scaled
    /// default.
    pub se_threshold: Option<f64>,
    labels: Vec<ParamLabel>,
    groups: Vec<FreeGroup>,
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        q: usize,
        nu: MatrixPattern,
        lambda: MatrixPattern,
        theta: MatrixPattern,
        alpha: MatrixPattern,
        b: MatrixPattern,
        psi: MatrixPattern,
        mean_structure: bool,
    ) -> Result<Self> {
        let expect = |pat: &MatrixPattern, id: MatrixId, r: usize, c: usize| -> Result<()> {
            if pat.rows() != r || pat.cols() != c {
                return Err(Error::ShapeMismatch(format!(
                    "{} must be {}×{}, got {}×{}",
                    id.name(),
                    r,
                    c,
                    pat.rows(),
                    pat.cols()
                )));
            }
            pat.validate(id)
        };
        if p == 0 {
            return Err(Error::InvalidSpec("p must be at least 1".into()));
        }
        expect(&nu, MatrixId::Nu, p, 1)?;
        expect(&lambda, MatrixId::Lambda, p, q)?;
        expect(&theta, MatrixId::Theta, p, p)?;
        expect(&alpha, MatrixId::Alpha, q, 1)?;
        expect(&b, MatrixId::B, q, q)?;
        expect(&psi, MatrixId::Psi, q, q)?;
        if !matches!(theta.kind(), PatternKind::Symmetric | PatternKind::Diagonal) {
            return Err(Error::InvalidSpec("theta must be a symmetric or diagonal pattern".into()));
        }
        if !matches!(psi.kind(), PatternKind::Symmetric | PatternKind::Diagonal) {
            return Err(Error::InvalidSpec("psi must be a symmetric or diagonal pattern".into()));
        }
        for k in 0..q {
            if b.get(k, k) != Cell::Fixed(0.0) {
                return Err(Error::InvalidSpec("diagonal of B must be fixed at zero".into()));
            }
        }

        // Collect free-parameter groups in canonical order and validate:
        // contiguous indices, no cross-matrix sharing.
        let mut groups: Vec<Option<FreeGroup>> = Vec::new();
        let with_ids: [(&MatrixPattern, MatrixId); 6] = [
            (&nu, MatrixId::Nu),
            (&lambda, MatrixId::Lambda),
            (&theta, MatrixId::Theta),
            (&alpha, MatrixId::Alpha),
            (&b, MatrixId::B),
            (&psi, MatrixId::Psi),
        ];
        for (pat, id) in with_ids {
            for (i, j) in pat.canonical_cells() {
                if let Cell::Free(idx) = pat.get(i, j) {
                    if groups.len() <= idx {
                        groups.resize(idx + 1, None);
                    }
                    match &mut groups[idx] {
                        None => groups[idx] = Some(FreeGroup { matrix: id, cells: vec![(i, j)] }),
                        Some(g) => {
                            if g.matrix != id {
                                return Err(Error::InvalidSpec(format!(
                                    "free parameter {idx} is shared across {} and {}",
                                    g.matrix.name(),
                                    id.name()
                                )));
                            }
                            g.cells.push((i, j));
                        }
                    }
                }
            }
        }
        let mut resolved = Vec::with_capacity(groups.len());
        for (idx, g) in groups.into_iter().enumerate() {
            match g {
                Some(g) => resolved.push(g),
                None => {
                    return Err(Error::InvalidSpec(format!(
                        "free parameter indices are not contiguous: index {idx} unused"
                    )))
                }
            }
        }
        let m = resolved.len();
        let budget = p + p * (p + 1) / 2;
        if m > budget {
            return Err(Error::InvalidSpec(format!(
                "{m} free parameters exceed the moment budget {budget} (p + p(p+1)/2)"
            )));
        }
        let labels = resolved
            .iter()
            .map(|g| ParamLabel { matrix: g.matrix, row: g.cells[0].0, col: g.cells[0].1 })
            .collect();
        Ok(Self {
            p,
            q,
            nu,
            lambda,
            theta,
            alpha,
            b,
            psi,
            mean_structure,
            se_threshold: None,
            labels,
            groups: resolved,
        })
    }

    /// Saturated model: q = 0, every mean and every covariance entry free.
    pub fn saturated(p: usize) -> Self {
        let mut nu = MatrixPattern::general(p, 1);
        let mut theta = MatrixPattern::symmetric(p);
        let mut idx = 0;
        for i in 0..p {
            nu.set_free(i, 0, idx).unwrap();
            idx += 1;
        }
        for i in 0..p {
            for j in 0..=i {
                theta.set_free(i, j, idx).unwrap();
                idx += 1;
            }
        }
        Self::new(
            p,
            0,
            nu,
            MatrixPattern::general(p, 0),
            theta,
            MatrixPattern::general(0, 1),
            MatrixPattern::general(0, 0),
            MatrixPattern::symmetric(0),
            true,
        )
        .expect("saturated spec is always valid")
    }

    pub fn n_params(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[ParamLabel] {
        &self.labels
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.to_string()).collect()
    }

    pub fn free_groups(&self) -> &[FreeGroup] {
        &self.groups
    }

    fn check_len(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::LengthMismatch { got: theta.len(), expected: self.n_params() });
        }
        Ok(())
    }

    /// Reads the free-cell values out of dense matrices into a parameter
    /// vector. Every cell must agree exactly with the pattern: fixed cells
    /// must hold their fixed value and all cells sharing a free index must
    /// hold one common value, so `pack(unpack(ϑ)) == ϑ` bit for bit.
    pub fn pack(&self, mats: &ModelMatrices) -> Result<DVector<f64>> {
        let shape_ok = mats.nu.len() == self.p
            && mats.lambda.nrows() == self.p
            && mats.lambda.ncols() == self.q
            && mats.theta.nrows() == self.p
            && mats.theta.ncols() == self.p
            && mats.alpha.len() == self.q
            && mats.b.nrows() == self.q
            && mats.b.ncols() == self.q
            && mats.psi.nrows() == self.q
            && mats.psi.ncols() == self.q;
        if !shape_ok {
            return Err(Error::ShapeMismatch("matrix dimensions do not match the specification".into()));
        }
        let value_at = |id: MatrixId, i: usize, j: usize| -> f64 {
            match id {
                MatrixId::Nu => mats.nu[i],
                MatrixId::Lambda => mats.lambda[(i, j)],
                MatrixId::Theta => mats.theta[(i, j)],
                MatrixId::Alpha => mats.alpha[i],
                MatrixId::B => mats.b[(i, j)],
                MatrixId::Psi => mats.psi[(i, j)],
            }
        };
        // Fixed cells must agree.
        let pats: [(&MatrixPattern, MatrixId); 6] = [
            (&self.nu, MatrixId::Nu),
            (&self.lambda, MatrixId::Lambda),
            (&self.theta, MatrixId::Theta),
            (&self.alpha, MatrixId::Alpha),
            (&self.b, MatrixId::B),
            (&self.psi, MatrixId::Psi),
        ];
        for (pat, id) in pats {
            for (i, j) in pat.canonical_cells() {
                if let Cell::Fixed(v) = pat.get(i, j) {
                    let got = value_at(id, i, j);
                    if got != v {
                        return Err(Error::ValueConflict(format!(
                            "{}({},{}): fixed at {v}, matrix holds {got}",
                            id.name(),
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        let mut theta = DVector::zeros(self.n_params());
        for (idx, group) in self.groups.iter().enumerate() {
            let first = value_at(group.matrix, group.cells[0].0, group.cells[0].1);
            for &(i, j) in &group.cells {
                let got = value_at(group.matrix, i, j);
                if got != first {
                    return Err(Error::ValueConflict(format!(
                        "{}({},{}): shared parameter {idx} holds {first} elsewhere, {got} here",
                        group.matrix.name(),
                        i + 1,
                        j + 1
                    )));
                }
                if group.matrix.is_vector()
                    || !self.pattern(group.matrix).is_square_symmetric_kind()
                {
                    continue;
                }
                // Mirror consistency for symmetric storage.
                let mirrored = value_at(group.matrix, j, i);
                if mirrored != first {
                    return Err(Error::ValueConflict(format!(
                        "{}({},{}): symmetric mirror holds {mirrored}, expected {first}",
                        group.matrix.name(),
                        j + 1,
                        i + 1
                    )));
                }
            }
            theta[idx] = first;
        }
        Ok(theta)
    }

    fn pattern(&self, id: MatrixId) -> &MatrixPattern {
        match id {
            MatrixId::Nu => &self.nu,
            MatrixId::Lambda => &self.lambda,
            MatrixId::Theta => &self.theta,
            MatrixId::Alpha => &self.alpha,
            MatrixId::B => &self.b,
            MatrixId::Psi => &self.psi,
        }
    }

    /// Expands a parameter vector into dense matrices (fixed cells filled
    /// from the pattern, free cells from ϑ, symmetric mirrors identical).
    pub fn unpack(&self, theta: &DVector<f64>) -> Result<ModelMatrices> {
        self.check_len(theta)?;
        let fill = |pat: &MatrixPattern| -> DMatrix<f64> {
            let mut out = DMatrix::zeros(pat.rows(), pat.cols());
            for i in 0..pat.rows() {
                for j in 0..pat.cols() {
                    out[(i, j)] = match pat.get(i, j) {
                        Cell::Fixed(v) => v,
                        Cell::Free(idx) => theta[idx],
                    };
                }
            }
            out
        };
        Ok(ModelMatrices {
            nu: DVector::from_column_slice(fill(&self.nu).as_slice()),
            lambda: fill(&self.lambda),
            theta: fill(&self.theta),
            alpha: DVector::from_column_slice(fill(&self.alpha).as_slice()),
            b: fill(&self.b),
            psi: fill(&self.psi),
        })
    }

    /// Implied moments at ϑ. Fails only if I−B is numerically singular
    /// (pivot magnitude below [`STRUCTURAL_PIVOT_TOL`]).
    pub fn implied_moments(&self, theta: &DVector<f64>) -> Result<MomentStructure> {
        let mats = self.unpack(theta)?;
        self.implied_moments_from(&mats)
    }

    pub fn implied_moments_from(&self, mats: &ModelMatrices) -> Result<MomentStructure> {
        let (mu, sigma_star) = if self.q == 0 {
            (mats.nu.clone(), DMatrix::zeros(self.p, self.p))
        } else {
            let b_tilde = invert_i_minus_b(&mats.b)?;
            let kappa = &b_tilde * &mats.alpha;
            let g = &mats.lambda * &b_tilde;
            let star = &g * &mats.psi * g.transpose();
            (&mats.nu + &mats.lambda * kappa, symmetrize(&star))
        };
        let sigma = symmetrize(&(&sigma_star + &mats.theta));
        Ok(MomentStructure { mu, sigma, sigma_star })
    }

    /// Average proportion of each indicator's implied variance explained by
    /// the common part: (1/p) Σⱼ Σ*ⱼⱼ/Σⱼⱼ.
    pub fn reliability(&self, theta: &DVector<f64>) -> Result<f64> {
        let m = self.implied_moments(theta)?;
        let mut acc = 0.0;
        for j in 0..self.p {
            let denom = m.sigma[(j, j)];
            if denom <= 0.0 {
                return Err(Error::Data(format!(
                    "implied variance of indicator {} is not positive",
                    j + 1
                )));
            }
            acc += m.sigma_star[(j, j)] / denom;
        }
        Ok(acc / self.p as f64)
    }

    /// True when the model is saturated (q = 0, all means and all covariance
    /// cells free with no sharing), so the MLE has the closed form ν̂ = ȳ,
    /// Θ̂ = S.
    pub fn is_saturated(&self) -> bool {
        if self.q != 0 {
            return false;
        }
        let mean_ok = !self.mean_structure
            || (0..self.p).all(|i| matches!(self.nu.get(i, 0), Cell::Free(_)));
        if !mean_ok {
            return false;
        }
        let mut seen = std::collections::HashSet::new();
        for (i, j) in self.theta.canonical_cells() {
            match self.theta.get(i, j) {
                Cell::Free(idx) => {
                    if !seen.insert(idx) {
                        return false;
                    }
                }
                Cell::Fixed(_) => return false,
            }
        }
        if self.mean_structure {
            let mut mean_seen = std::collections::HashSet::new();
            for i in 0..self.p {
                if let Cell::Free(idx) = self.nu.get(i, 0) {
                    if !mean_seen.insert(idx) || seen.contains(&idx) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// When the mean part is exactly μ = ν with every ν free (all α fixed at
    /// zero), the intercepts can be profiled out as ν̂ = ȳ and the rest of
    /// the model fitted to the covariance matrix alone. Returns the reduced
    /// covariance-only spec plus the index bookkeeping.
    pub fn profiled_reduction(&self) -> Option<ProfiledReduction> {
        if !self.mean_structure {
            return None;
        }
        let nu_all_free = (0..self.p).all(|i| matches!(self.nu.get(i, 0), Cell::Free(_)));
        let alpha_all_zero = (0..self.q).all(|k| self.alpha.get(k, 0) == Cell::Fixed(0.0));
        if !nu_all_free || !alpha_all_zero {
            return None;
        }
        let mut nu_indices = Vec::with_capacity(self.p);
        for i in 0..self.p {
            if let Cell::Free(idx) = self.nu.get(i, 0) {
                if self.groups[idx].cells.len() != 1 {
                    return None; // shared intercepts: no simple profile
                }
                nu_indices.push(idx);
            }
        }
        let is_nu: Vec<bool> = (0..self.n_params()).map(|i| nu_indices.contains(&i)).collect();
        let mut kept = Vec::new();
        let mut remap = vec![usize::MAX; self.n_params()];
        for idx in 0..self.n_params() {
            if !is_nu[idx] {
                remap[idx] = kept.len();
                kept.push(idx);
            }
        }
        let remap_pattern = |pat: &MatrixPattern| -> MatrixPattern {
            let mut out = pat.clone();
            for c in out.cells.iter_mut() {
                if let Cell::Free(idx) = c {
                    *idx = remap[*idx];
                }
            }
            out
        };
        let mut nu_fixed = MatrixPattern::general(self.p, 1);
        for i in 0..self.p {
            nu_fixed.set_fixed(i, 0, 0.0).unwrap();
        }
        let mut reduced = ModelSpec::new(
            self.p,
            self.q,
            nu_fixed,
            remap_pattern(&self.lambda),
            remap_pattern(&self.theta),
            self.alpha.clone(),
            remap_pattern(&self.b),
            remap_pattern(&self.psi),
            false,
        )
        .ok()?;
        reduced.se_threshold = self.se_threshold;
        Some(ProfiledReduction { reduced, nu_indices, kept })
    }
}

/// Bookkeeping for intercept profiling: `reduced` is the covariance-only
/// spec; `nu_indices[i]` is the full-spec parameter index of νᵢ; `kept[r]`
/// maps reduced index r back to its full-spec index.
#[derive(Debug, Clone)]
pub struct ProfiledReduction {
    pub reduced: ModelSpec,
    pub nu_indices: Vec<usize>,
    pub kept: Vec<usize>,
}

/// (I−B)⁻¹ by LU with an explicit pivot-magnitude check; a pivot smaller in
/// magnitude than [`STRUCTURAL_PIVOT_TOL`] reports a singular structural part
/// instead of returning garbage.
pub(crate) fn invert_i_minus_b(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = b.nrows();
    let i_minus_b = DMatrix::identity(q, q) - b;
    let lu = i_minus_b.lu();
    for k in 0..q {
        if lu.u()[(k, k)].abs() < STRUCTURAL_PIVOT_TOL {
            return Err(Error::SingularStructural { threshold: STRUCTURAL_PIVOT_TOL });
        }
    }
    lu.try_inverse().ok_or(Error::SingularStructural { threshold: STRUCTURAL_PIVOT_TOL })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Single-entry structure matrix ∂M/∂mᵢⱼ for a rows×cols matrix: a unit at
/// (i,j), mirrored to (j,i) as well when the matrix is symmetric (the
/// diagonal case i = j keeps a single unit).
pub fn structure_matrix(i: usize, j: usize, rows: usize, cols: usize, symmetric: bool) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    out[(i, j)] = 1.0;
    if symmetric && i != j {
        out[(j, i)] = 1.0;
    }
    out
}
