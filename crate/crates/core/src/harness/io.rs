//! Feature file formats.
//!
//! Both formats store one sample per row.
//!
//! - **CSV**: a header row, then one row per sample. A column named `label`
//!   (if present) holds integer class labels; every other column is a feature.
//! - **raw-f64**: little-endian `f64` values, row-major, `rows × cols`, with a
//!   JSON sidecar at `<path>.json` of the form
//!   `{"rows": R, "cols": C, "labels": [..]?}`.
//!
//! Labels may be arbitrary integers. [`LabelMap`] assigns dense class indices
//! from the source domain's sorted label set.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDomain, UnlabeledDomain};
use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;

pub const LABEL_COLUMN: &str = "label";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFormat {
    Csv,
    RawF64,
}

impl FeatureFormat {
    /// `.csv` is CSV, anything else is raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::RawF64,
        }
    }
}

/// Features (`ℓ × m`, columns are samples) plus optional raw labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<i64>>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<i64>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureFile> {
    match format {
        FeatureFormat::Csv => load_csv(path),
        FeatureFormat::RawF64 => load_raw(path),
    }
}

pub fn save_features(path: &Path, format: FeatureFormat, file: &FeatureFile) -> Result<()> {
    if let Some(labels) = &file.labels {
        if labels.len() != file.features.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                file.features.ncols()
            )));
        }
    }
    match format {
        FeatureFormat::Csv => save_csv(path, file),
        FeatureFormat::RawF64 => save_raw(path, file),
    }
}

fn load_csv(path: &Path) -> Result<FeatureFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_col = headers.iter().position(|h| h == LABEL_COLUMN);
    let dim = headers.len() - usize::from(label_col.is_some());
    if dim == 0 {
        return Err(Error::format(path, "no feature columns"));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != headers.len() {
            return Err(Error::format(
                path,
                format!(
                    "row {row} has {} fields, header has {}",
                    record.len(),
                    headers.len()
                ),
            ));
        }
        let mut col = 0;
        for (i, field) in record.iter().enumerate() {
            if Some(i) == label_col {
                let label = field.parse::<i64>().map_err(|_| {
                    Error::format(
                        path,
                        format!("row {row}: label {field:?} is not an integer"),
                    )
                })?;
                labels.push(label);
                continue;
            }
            let v = field.parse::<f64>().map_err(|_| {
                Error::format(
                    path,
                    format!("row {row}, column {i}: {field:?} is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row,
                    col,
                });
            }
            values.push(v);
            col += 1;
        }
    }
    let samples = values.len() / dim;
    if samples == 0 {
        return Err(Error::format(path, "no samples"));
    }
    // row-major samples become the columns of an ℓ × m matrix
    Ok(FeatureFile {
        features: FeatureMatrix::from_column_slice(dim, samples, &values),
        labels: label_col.map(|_| labels),
    })
}

fn save_csv(path: &Path, file: &FeatureFile) -> Result<()> {
    let dim = file.features.nrows();
    let mut out = String::new();
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    if file.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (j, column) in file.features.column_iter().enumerate() {
        let mut fields: Vec<String> = column.iter().map(|v| format!("{v:?}")).collect();
        if let Some(labels) = &file.labels {
            fields.push(labels[j].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn load_raw(path: &Path) -> Result<FeatureFile> {
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::format(&side_path, format!("bad sidecar: {e}")))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = side
        .rows
        .checked_mul(side.cols)
        .and_then(|v| v.checked_mul(8));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!(
                "sidecar declares {} x {} values but file holds {} bytes",
                side.rows,
                side.cols,
                bytes.len()
            ),
        ));
    }
    if side.rows == 0 || side.cols == 0 {
        return Err(Error::format(path, "empty feature matrix"));
    }
    if let Some(labels) = &side.labels {
        if labels.len() != side.rows {
            return Err(Error::format(
                &side_path,
                format!("{} labels for {} rows", labels.len(), side.rows),
            ));
        }
    }
    let mut values = Vec::with_capacity(side.rows * side.cols);
    for (idx, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                row: idx / side.cols,
                col: idx % side.cols,
            });
        }
        values.push(v);
    }
    Ok(FeatureFile {
        features: FeatureMatrix::from_column_slice(side.cols, side.rows, &values),
        labels: side.labels,
    })
}

fn save_raw(path: &Path, file: &FeatureFile) -> Result<()> {
    let mut bytes = Vec::with_capacity(file.features.len() * 8);
    // column-major ℓ × m storage is row-major m × ℓ
    for v in file.features.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let side = Sidecar {
        rows: file.features.ncols(),
        cols: file.features.nrows(),
        labels: file.labels.clone(),
    };
    write_atomic(
        &sidecar_path(path),
        serde_json::to_string_pretty(&side)?.as_bytes(),
    )
}

/// Write to a sibling temp file, then rename over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Dense class indices for arbitrary integer labels, keyed by the source set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    /// Original label of each class index, ascending.
    pub original: Vec<i64>,
}

impl LabelMap {
    pub fn from_labels(labels: &[i64]) -> Self {
        let mut original = labels.to_vec();
        original.sort_unstable();
        original.dedup();
        Self { original }
    }

    pub fn class_count(&self) -> usize {
        self.original.len()
    }

    pub fn index_of(&self, label: i64) -> Option<usize> {
        self.original.binary_search(&label).ok()
    }

    pub fn map(&self, labels: &[i64]) -> Result<Vec<usize>> {
        labels
            .iter()
            .enumerate()
            .map(|(row, &label)| {
                self.index_of(label)
                    .ok_or(Error::LabelOutOfRange { label, row })
            })
            .collect()
    }
}

/// A labelled source domain plus the mapping that produced its class indices.
pub fn into_source(
    file: FeatureFile,
    name: &str,
    path: &Path,
) -> Result<(LabeledDomain, LabelMap)> {
    let raw = file
        .labels
        .ok_or_else(|| Error::format(path, "source domain needs a label column"))?;
    let map = LabelMap::from_labels(&raw);
    let labels = map.map(&raw)?;
    Ok((LabeledDomain::new(file.features, labels, name)?, map))
}

/// An unlabelled target domain; labels, if present, become held-out truth.
pub fn into_target(
    file: FeatureFile,
    name: &str,
    map: &LabelMap,
) -> Result<(UnlabeledDomain, Option<Vec<usize>>)> {
    let truth = file.labels.as_deref().map(|l| map.map(l)).transpose()?;
    Ok((UnlabeledDomain::new(file.features, name)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "a,b,label\n1.5,2,3\n-4,5e-1,7\n").unwrap();
        let f = load_features(&path, FeatureFormat::Csv).unwrap();
        assert_eq!(f.features.nrows(), 2);
        assert_eq!(f.features.ncols(), 2);
        assert_eq!(f.features[(0, 0)], 1.5);
        assert_eq!(f.features[(1, 1)], 0.5);
        assert_eq!(f.labels, Some(vec![3, 7]));
    }

    #[test]
    fn csv_without_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "x,y,z\n1,2,3\n").unwrap();
        let f = load_features(&path, FeatureFormat::Csv).unwrap();
        assert_eq!(f.features.shape(), (3, 1));
        assert!(f.labels.is_none());
    }

    #[test]
    fn csv_diagnostics_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "a,b\n1,NaN\n").unwrap();
        assert!(matches!(
            load_features(&path, FeatureFormat::Csv),
            Err(Error::NonFinite { row: 0, col: 1, .. })
        ));
        fs::write(&path, "a,b\n1,zz\n").unwrap();
        assert!(matches!(
            load_features(&path, FeatureFormat::Csv),
            Err(Error::Format { .. })
        ));
        fs::write(&path, "a,label\n1,0.5\n").unwrap();
        assert!(matches!(
            load_features(&path, FeatureFormat::Csv),
            Err(Error::Format { .. })
        ));
        let missing = dir.path().join("nope.csv");
        assert!(matches!(
            load_features(&missing, FeatureFormat::Csv),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn raw_sidecar_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.f64");
        fs::write(&path, [0u8; 48]).unwrap();
        fs::write(sidecar_path(&path), r#"{"rows": 2, "cols": 4}"#).unwrap();
        assert!(matches!(
            load_features(&path, FeatureFormat::RawF64),
            Err(Error::Format { .. })
        ));
        fs::write(sidecar_path(&path), r#"{"rows": 2, "cols": 3}"#).unwrap();
        let f = load_features(&path, FeatureFormat::RawF64).unwrap();
        assert_eq!(f.features.shape(), (3, 2));
    }

    #[test]
    fn raw_layout_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.f64");
        let mut bytes = Vec::new();
        for v in [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"rows": 2, "cols": 3, "labels": [4, -1]}"#,
        )
        .unwrap();
        let f = load_features(&path, FeatureFormat::RawF64).unwrap();
        // sample 1 is the second row: 4, 5, 6
        assert_eq!(
            f.features.column(1).iter().cloned().collect::<Vec<_>>(),
            vec![4.0, 5.0, 6.0]
        );
        assert_eq!(f.labels, Some(vec![4, -1]));
    }

    #[test]
    fn label_map_remaps_and_rejects_unknown() {
        let map = LabelMap::from_labels(&[10, -3, 10, 7]);
        assert_eq!(map.original, vec![-3, 7, 10]);
        assert_eq!(map.map(&[7, 10, -3]).unwrap(), vec![1, 2, 0]);
        assert!(matches!(
            map.map(&[7, 8]),
            Err(Error::LabelOutOfRange { label: 8, row: 1 })
        ));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(
            FeatureFormat::from_path(Path::new("a/b.CSV")),
            FeatureFormat::Csv
        );
        assert_eq!(
            FeatureFormat::from_path(Path::new("a/b.f64")),
            FeatureFormat::RawF64
        );
    }
}
