//! Hyperspectral cubes, the mean-removed augmented observation model, and
//! matrix CSV files.
//!
//! Pixels are linearized row-major: pixel `(r, c)` of a `T1 × T2` scene is
//! column `r * T2 + c` of the `M × T` data matrix.

use crate::error::{HutampError, Result};
use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// An `M × T` observation matrix over a `T1 × T2` pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    data: DMatrix<f64>,
    bands: Option<Vec<f64>>,
    spatial: (usize, usize),
}

impl HsiCube {
    pub fn new(data: DMatrix<f64>, t1: usize, t2: usize) -> Result<Self> {
        if data.nrows() == 0 || t1 == 0 || t2 == 0 {
            return Err(HutampError::Dimension(format!(
                "cube needs M, T1, T2 >= 1, got M={} T1={t1} T2={t2}",
                data.nrows()
            )));
        }
        if data.ncols() != t1 * t2 {
            return Err(HutampError::Dimension(format!(
                "cube has {} columns but T1*T2 = {}",
                data.ncols(),
                t1 * t2
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(HutampError::Input(format!(
                "non-finite entry at band {}, pixel {}",
                k % data.nrows(),
                k / data.nrows()
            )));
        }
        Ok(Self {
            data,
            bands: None,
            spatial: (t1, t2),
        })
    }

    pub fn with_bands(mut self, bands: Vec<f64>) -> Result<Self> {
        if bands.len() != self.bands_len() {
            return Err(HutampError::Dimension(format!(
                "{} band labels for {} bands",
                bands.len(),
                self.bands_len()
            )));
        }
        self.bands = Some(bands);
        Ok(self)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn bands(&self) -> Option<&[f64]> {
        self.bands.as_deref()
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.spatial
    }

    /// Number of bands `M`.
    pub fn bands_len(&self) -> usize {
        self.data.nrows()
    }

    /// Number of pixels `T`.
    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }
}

/// Mean-removed data with the all-ones row appended.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedObs {
    pub ybar: DMatrix<f64>,
    pub mu: f64,
    pub psi: DVector<f64>,
}

impl AugmentedObs {
    pub fn bands(&self) -> usize {
        self.ybar.nrows() - 1
    }

    /// The mean-removed rows `Ỹ`.
    pub fn ytilde(&self) -> DMatrix<f64> {
        let m = self.bands();
        self.ybar.rows(0, m).into_owned()
    }

    /// Undo augmentation and mean removal.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.ytilde().add_scalar(self.mu)
    }
}

/// Endmember spectra as the columns of an `M × N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Endmembers {
    pub s: DMatrix<f64>,
}

impl Endmembers {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if s.ncols() == 0 || s.nrows() == 0 {
            return Err(HutampError::Dimension("endmember matrix is empty".into()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(HutampError::Input("endmember matrix has non-finite entries".into()));
        }
        Ok(Self { s })
    }

    pub fn count(&self) -> usize {
        self.s.ncols()
    }
}

/// Abundance maps as the columns of an `N × T` matrix, one simplex point per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Abundances {
    pub a: DMatrix<f64>,
}

pub const SIMPLEX_TOL: f64 = 1e-6;

impl Abundances {
    /// Checks nonnegativity and unit column sums within [`SIMPLEX_TOL`].
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        for (t, col) in a.column_iter().enumerate() {
            let sum: f64 = col.iter().sum();
            if col.iter().any(|&v| !(v >= -SIMPLEX_TOL)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(HutampError::Input(format!(
                    "abundance column {t} is off the simplex (sum {sum})"
                )));
            }
        }
        Ok(Self { a })
    }
}

/// Global mean `μ` and `Ỹ = Y - μ 1 1ᵀ`.
pub fn mean_remove(cube: &HsiCube) -> Result<(f64, DMatrix<f64>)> {
    let y = cube.data();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(HutampError::Input("cube has non-finite entries".into()));
    }
    let mu = y.mean();
    let mut yt = y.add_scalar(-mu);
    // second pass removes the rounding residue of the first
    let resid = yt.mean();
    yt.add_scalar_mut(-resid);
    Ok((mu, yt))
}

/// Append the all-ones row to `Ỹ`.
pub fn augment(ytilde: &DMatrix<f64>, mu: f64, psi: &DVector<f64>) -> Result<AugmentedObs> {
    let (m, t) = ytilde.shape();
    if psi.len() != m {
        return Err(HutampError::Dimension(format!("psi has length {} for {m} bands", psi.len())));
    }
    if let Some(v) = psi.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(HutampError::Parameter(format!("noise variance must be positive, got {v}")));
    }
    let mut ybar = ytilde.clone().insert_row(m, 1.0);
    ybar.row_mut(m).fill(1.0);
    debug_assert_eq!(ybar.shape(), (m + 1, t));
    Ok(AugmentedObs {
        ybar,
        mu,
        psi: psi.clone(),
    })
}

/// Header of a matrix CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvHeader {
    Cube { m: usize, t1: usize, t2: usize },
    Plain { rows: usize, cols: usize },
}

impl CsvHeader {
    fn shape(&self) -> (usize, usize) {
        match *self {
            CsvHeader::Cube { m, t1, t2 } => (m, t1 * t2),
            CsvHeader::Plain { rows, cols } => (rows, cols),
        }
    }

    fn parse(line: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for part in line.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| HutampError::Parse {
                line: 1,
                msg: format!("header field `{part}` is not key=value"),
            })?;
            let v: usize = v.trim().parse().map_err(|_| HutampError::Parse {
                line: 1,
                msg: format!("header value for `{}` is not an integer", k.trim()),
            })?;
            kv.insert(k.trim().to_ascii_uppercase(), v);
        }
        let get = |k: &str| {
            kv.get(k).copied().ok_or_else(|| HutampError::Parse {
                line: 1,
                msg: format!("header is missing `{k}`"),
            })
        };
        if kv.contains_key("M") {
            Ok(CsvHeader::Cube {
                m: get("M")?,
                t1: get("T1")?,
                t2: get("T2")?,
            })
        } else {
            Ok(CsvHeader::Plain {
                rows: get("ROWS")?,
                cols: get("COLS")?,
            })
        }
    }

    fn render(&self) -> String {
        match *self {
            CsvHeader::Cube { m, t1, t2 } => format!("M={m},T1={t1},T2={t2}"),
            CsvHeader::Plain { rows, cols } => format!("ROWS={rows},COLS={cols}"),
        }
    }
}

/// Parse a matrix CSV document.
pub fn parse_matrix_csv(text: &str) -> Result<(CsvHeader, DMatrix<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| HutampError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = CsvHeader::parse(head.trim())?;
    let (rows, cols) = header.shape();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for (ln, line) in lines {
        if r == rows {
            return Err(HutampError::Dimension(format!(
                "body has more than the {rows} rows declared in the header (line {})",
                ln + 1
            )));
        }
        let mut c = 0;
        for field in line.split(',') {
            if c == cols {
                return Err(HutampError::Dimension(format!(
                    "line {} has more than {cols} values",
                    ln + 1
                )));
            }
            out[(r, c)] = field.trim().parse().map_err(|_| HutampError::Parse {
                line: ln + 1,
                msg: format!("`{}` is not a number", field.trim()),
            })?;
            c += 1;
        }
        if c != cols {
            return Err(HutampError::Dimension(format!(
                "line {} has {c} values, expected {cols}",
                ln + 1
            )));
        }
        r += 1;
    }
    if r != rows {
        return Err(HutampError::Dimension(format!("body has {r} rows, header declares {rows}")));
    }
    Ok((header, out))
}

/// Render a matrix CSV document. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn render_matrix_csv(header: CsvHeader, mat: &DMatrix<f64>) -> String {
    let mut s = header.render();
    s.push('\n');
    for row in mat.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v}").expect("writing to a String");
        }
        s.push('\n');
    }
    s
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    Ok(parse_matrix_csv(&fs::read_to_string(path)?)?.1)
}

pub fn write_matrix(path: impl AsRef<Path>, mat: &DMatrix<f64>) -> Result<()> {
    let header = CsvHeader::Plain {
        rows: mat.nrows(),
        cols: mat.ncols(),
    };
    fs::write(path, render_matrix_csv(header, mat))?;
    Ok(())
}

/// Load a cube; a plain `ROWS,COLS` matrix is read as a `1 × COLS` scene.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let (header, mat) = parse_matrix_csv(&fs::read_to_string(path)?)?;
    match header {
        CsvHeader::Cube { t1, t2, .. } => HsiCube::new(mat, t1, t2),
        CsvHeader::Plain { cols, .. } => HsiCube::new(mat, 1, cols),
    }
}

pub fn store_cube(path: impl AsRef<Path>, cube: &HsiCube) -> Result<()> {
    let (t1, t2) = cube.spatial();
    let header = CsvHeader::Cube {
        m: cube.bands_len(),
        t1,
        t2,
    };
    fs::write(path, render_matrix_csv(header, cube.data()))?;
    Ok(())
}
