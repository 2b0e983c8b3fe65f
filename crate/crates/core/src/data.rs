//! Raw datasets and their sufficient statistics.
//!
//! A [`Dataset`] is an n×p matrix of observations (rows = cases). The normal
//! log-likelihood only depends on the sample mean and the biased (divisor n)
//! sample covariance, collected in [`DataSummary`]; per-observation work
//! (score contributions, resampling) goes back to the raw rows.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Observed data, one row per case.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
}

impl Dataset {
    /// Wraps an n×p matrix. All entries must be finite and n ≥ 1.
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Data("dataset must have at least one row and one column".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("dataset must have at least one row".into()));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Data("ragged rows in dataset".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), p, &flat))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    /// New dataset holding the given rows (with repetition allowed), in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Data("row selection is empty".into()));
        }
        let mut out = DMatrix::zeros(indices.len(), self.p());
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.n() {
                return Err(Error::Data(format!("row index {i} out of range")));
            }
            out.row_mut(k).copy_from(&self.rows.row(i));
        }
        Ok(Self { rows: out })
    }

    /// Leave-one-out copy without row `i`.
    pub fn without_row(&self, i: usize) -> Result<Self> {
        if self.n() < 2 {
            return Err(Error::Data("cannot drop a row from a single-row dataset".into()));
        }
        let keep: Vec<usize> = (0..self.n()).filter(|&r| r != i).collect();
        self.select_rows(&keep)
    }

    /// Reads a CSV file with one row per observation. A header line is
    /// detected by attempting to parse the first record as numbers.
    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|f| f.trim().parse::<f64>()).collect();
            match parsed {
                Ok(vals) => rows.push(vals),
                Err(_) if idx == 0 => continue, // header line
                Err(e) => return Err(Error::Data(format!("bad numeric field on line {}: {e}", idx + 1))),
            }
        }
        Self::from_rows(&rows)
    }

    /// Writes the rows as headerless CSV with shortest round-trip formatting,
    /// so re-reading reproduces the exact same values.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n() {
            let line: Vec<String> = (0..self.p()).map(|j| format!("{}", self.rows[(i, j)])).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_csv(&mut f)
    }

    pub fn summary(&self) -> DataSummary {
        DataSummary::from_dataset(self)
    }
}

/// Sufficient statistics: n, sample mean, and biased (divisor n) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub n: usize,
    pub ybar: DVector<f64>,
    /// Biased sample covariance S = (1/n) Σᵢ (yᵢ − ȳ)(yᵢ − ȳ)ᵀ, exactly symmetric.
    pub s: DMatrix<f64>,
}

impl DataSummary {
    pub fn from_dataset(data: &Dataset) -> Self {
        let n = data.n();
        let p = data.p();
        let nf = n as f64;
        let mut ybar = DVector::zeros(p);
        for i in 0..n {
            for j in 0..p {
                ybar[j] += data.matrix()[(i, j)];
            }
        }
        ybar /= nf;
        let mut s = DMatrix::zeros(p, p);
        for i in 0..n {
            for a in 0..p {
                let da = data.matrix()[(i, a)] - ybar[a];
                for b in a..p {
                    s[(a, b)] += da * (data.matrix()[(i, b)] - ybar[b]);
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                let v = s[(a, b)] / nf;
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        Self { n, ybar, s }
    }

    /// Builds a summary directly (used by tests that need S = Σ(ϑ) exactly).
    pub fn new(n: usize, ybar: DVector<f64>, s: DMatrix<f64>) -> Result<Self> {
        let p = ybar.len();
        if s.nrows() != p || s.ncols() != p {
            return Err(Error::ShapeMismatch(format!(
                "covariance is {}×{}, mean has length {p}",
                s.nrows(),
                s.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::Data("summary requires n ≥ 1".into()));
        }
        let asym = (&s - s.transpose()).abs().max();
        if asym > 1e-12 * s.abs().max().max(1.0) {
            return Err(Error::Data("covariance matrix is not symmetric".into()));
        }
        Ok(Self { n, ybar, s })
    }

    pub fn p(&self) -> usize {
        self.ybar.len()
    }
}
