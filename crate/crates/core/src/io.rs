//! JSON documents for problems, dictionaries, shapes and results, plus data
//! normalization.
//!
//! Every document is parsed strictly: unknown top-level fields are rejected
//! except under the free-form `"meta"` key. Numbers are written in the
//! shortest form that parses back to the identical `f64`, so a write/read
//! round trip is lossless.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::storage::RawStorage;
use nalgebra::{Dim, Matrix, Matrix2xX, Matrix3xX, Vector2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::convex::SolverReport;
use crate::error::{Error, Result};
use crate::pipeline::PipelineOutput;
use crate::shape::{Landmarks2D, PointSet, Shape3D, ShapeDictionary};

/// One 2D observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub p: usize,
    /// `[[x...], [y...]]`.
    pub landmarks: Vec<Vec<f64>>,
    pub visibility: Vec<bool>,
    /// Ground-truth shape `[[x...], [y...], [z...]]` for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_shape: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

/// Basis shapes, `bases[i]` being `[[x...], [y...], [z...]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryFile {
    pub k: usize,
    pub p: usize,
    pub bases: Vec<Vec<Vec<f64>>>,
    /// Whether the bases were learned with nonnegative codes.
    pub nonneg: bool,
    /// Whether every basis has Frobenius norm at most 1.
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

/// A single 3D shape (training data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeFile {
    pub p: usize,
    pub shape: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

impl From<&SolverReport> for ReportRecord {
    fn from(r: &SolverReport) -> Self {
        Self {
            iterations: r.iterations,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            objective: r.objective,
            converged: r.converged,
        }
    }
}

/// Output of `solve`/`solve-robust`. Exactly one of `rotation` and
/// `rotations` is non-null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub coefficients: Vec<f64>,
    pub rotation: Option<Vec<Vec<f64>>>,
    pub rotations: Option<Vec<Vec<Vec<f64>>>>,
    pub shape: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Option<Vec<Vec<f64>>>,
    #[serde(rename = "T")]
    pub t: Option<Vec<f64>>,
    pub report: ReportRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

/// Scale and translation removed by [`normalize_problem`]:
/// `original = scale · normalized + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub scale: f64,
    pub translation: [f64; 2],
}

/// Row-major nested vectors of a matrix.
fn matrix_rows<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_rows<const R: usize>(path: &Path, what: &str, data: &[Vec<f64>], p: usize) -> Result<Vec<f64>> {
    if data.len() != R {
        return Err(format_err(path, format!("{what} must have {R} rows, found {}", data.len())));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != p {
            return Err(format_err(
                path,
                format!("{what} row {i} has {} entries, expected p = {p}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(format_err(path, format!("{what} row {i} contains non-finite values")));
        }
    }
    // Column-major storage for nalgebra.
    Ok((0..p).flat_map(|j| (0..R).map(move |r| data[r][j])).collect())
}

fn shape_from_rows(path: &Path, what: &str, data: &[Vec<f64>], p: usize) -> Result<Shape3D> {
    let values = parse_rows::<3>(path, what, data, p)?;
    Shape3D::new(Matrix3xX::from_column_slice(&values)).map_err(|e| format_err(path, e.to_string()))
}

impl ProblemFile {
    pub fn from_landmarks(w: &Landmarks2D) -> Self {
        Self {
            p: w.num_points(),
            landmarks: matrix_rows(w.points()),
            visibility: w.visibility().to_vec(),
            truth_shape: None,
            meta: None,
        }
    }

    pub fn with_truth(mut self, truth: &Shape3D) -> Self {
        self.truth_shape = Some(matrix_rows(truth.points()));
        self
    }

    /// Checks consistency and builds the observation; `path` is used for
    /// error messages.
    pub fn landmarks(&self, path: &Path) -> Result<Landmarks2D> {
        let values = parse_rows::<2>(path, "landmarks", &self.landmarks, self.p)?;
        if self.visibility.len() != self.p {
            return Err(format_err(
                path,
                format!("visibility has {} entries, expected p = {}", self.visibility.len(), self.p),
            ));
        }
        Landmarks2D::new(Matrix2xX::from_column_slice(&values), self.visibility.clone())
            .map_err(|e| format_err(path, e.to_string()))
    }

    pub fn truth(&self, path: &Path) -> Result<Option<Shape3D>> {
        self.truth_shape
            .as_ref()
            .map(|t| shape_from_rows(path, "truth_shape", t, self.p))
            .transpose()
    }
}

impl DictionaryFile {
    pub fn from_dictionary(dict: &ShapeDictionary, nonneg: bool) -> Self {
        Self {
            k: dict.k(),
            p: dict.p(),
            bases: dict.bases().iter().map(|b| matrix_rows(b.points())).collect(),
            nonneg,
            normalized: dict.within_unit_norm(1e-9),
            meta: None,
        }
    }

    /// Bases exactly as stored (no re-centering).
    pub fn dictionary(&self, path: &Path) -> Result<ShapeDictionary> {
        if self.bases.len() != self.k {
            return Err(format_err(path, format!("expected k = {} bases, found {}", self.k, self.bases.len())));
        }
        if self.k == 0 {
            return Err(format_err(path, "dictionary has no bases"));
        }
        let bases = self
            .bases
            .iter()
            .enumerate()
            .map(|(i, b)| shape_from_rows(path, &format!("bases[{i}]"), b, self.p))
            .collect::<Result<Vec<_>>>()?;
        let dict = ShapeDictionary::from_raw(bases).map_err(|e| format_err(path, e.to_string()))?;
        if self.normalized && !dict.within_unit_norm(1e-9) {
            return Err(format_err(path, "marked normalized but a basis has Frobenius norm above 1"));
        }
        Ok(dict)
    }

    /// Optional mean training shape stored under `meta.mean_shape`.
    pub fn mean_shape(&self, path: &Path) -> Result<Option<Shape3D>> {
        let Some(v) = self.meta.as_ref().and_then(|m| m.get("mean_shape")) else {
            return Ok(None);
        };
        let rows: Vec<Vec<f64>> =
            serde_json::from_value(v.clone()).map_err(|e| format_err(path, format!("meta.mean_shape: {e}")))?;
        shape_from_rows(path, "meta.mean_shape", &rows, self.p).map(Some)
    }
}

impl ShapeFile {
    pub fn from_shape(s: &Shape3D) -> Self {
        Self {
            p: s.num_points(),
            shape: matrix_rows(s.points()),
            meta: None,
        }
    }

    pub fn shape(&self, path: &Path) -> Result<Shape3D> {
        shape_from_rows(path, "shape", &self.shape, self.p)
    }
}

impl ResultFile {
    pub fn from_output(out: &PipelineOutput) -> Self {
        Self {
            coefficients: out.coefficients.as_slice().to_vec(),
            rotation: out.rotation.as_ref().map(|r| matrix_rows(r.matrix())),
            rotations: out
                .rotations
                .as_ref()
                .map(|rs| rs.iter().map(|r| matrix_rows(r.matrix())).collect()),
            shape: matrix_rows(out.shape.points()),
            e: out.e.as_ref().map(|e| matrix_rows(e)),
            t: out.t.as_ref().map(|t| vec![t.x, t.y]),
            report: ReportRecord::from(&out.report),
            meta: None,
        }
    }

    /// Checks the one-of-rotation/rotations rule.
    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.rotation.is_some() == self.rotations.is_some() {
            return Err(format_err(path, "exactly one of `rotation` and `rotations` must be present"));
        }
        Ok(())
    }

    /// Number of landmarks flagged by a nonzero column of `E`.
    pub fn outlier_count(&self) -> usize {
        let Some(e) = &self.e else { return 0 };
        let p = e.first().map_or(0, Vec::len);
        (0..p).filter(|&j| e.iter().any(|row| row[j] != 0.0)).count()
    }
}

/// Centers the visible landmarks and scales them to unit average variance.
pub fn normalize_landmarks(w: &Landmarks2D) -> Result<(Landmarks2D, Normalization)> {
    let (centered, mean) = w.centralize()?;
    let (scaled, scale) = centered.normalize_unit_variance()?;
    Ok((
        scaled,
        Normalization {
            scale,
            translation: [mean.x, mean.y],
        },
    ))
}

/// Normalizes the observation of a problem file. The ground-truth shape, if
/// any, is left untouched (errors are scale- and translation-invariant);
/// the factors are recorded under `meta.normalization`.
pub fn normalize_problem(problem: &ProblemFile, path: &Path) -> Result<(ProblemFile, Normalization)> {
    let w = problem.landmarks(path)?;
    let (wn, norm) = normalize_landmarks(&w).map_err(|e| format_err(path, e.to_string()))?;
    let mut out = ProblemFile::from_landmarks(&wn);
    out.truth_shape = problem.truth_shape.clone();
    let mut meta = match problem.meta.clone() {
        Some(Value::Object(m)) => m,
        Some(other) => {
            let mut m = serde_json::Map::new();
            m.insert("original".into(), other);
            m
        }
        None => serde_json::Map::new(),
    };
    meta.insert("normalization".into(), serde_json::to_value(norm).expect("serializable"));
    out.meta = Some(Value::Object(meta));
    Ok((out, norm))
}

impl Normalization {
    /// Maps normalized landmarks back to input units.
    pub fn denormalize(&self, w: &Landmarks2D) -> Landmarks2D {
        let t = Vector2::new(self.translation[0], self.translation[1]);
        let mut pts = w.points() * self.scale;
        for mut col in pts.column_iter_mut() {
            col += t;
        }
        w.with_points(pts)
    }
}

/// Reads and strictly parses a JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a pretty-printed JSON document (trailing newline included).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `*.json` files of a directory in lexicographic order.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
