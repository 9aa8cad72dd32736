//! File formats.
//!
//! * Point patterns: CSV with header `x,y`, one point per line.
//! * Arrays: raw little-endian `f64` in `<name>.f64` with a JSON sidecar
//!   `<name>.json` giving the shape and meaning.
//! * Everything else: pretty JSON with a trailing newline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::geometry::Rect;
use crate::simulate::PointPattern;

use super::Cause;

/// Error with the file it concerns.
#[derive(Debug)]
pub struct FileError {
    pub file: Option<PathBuf>,
    pub cause: Cause,
}

pub type IoResult<T> = std::result::Result<T, FileError>;

pub(crate) trait At<T> {
    fn at(self, file: &Path) -> IoResult<T>;
}

impl<T, E: Into<Cause>> At<T> for std::result::Result<T, E> {
    fn at(self, file: &Path) -> IoResult<T> {
        self.map_err(|e| FileError {
            file: Some(file.to_path_buf()),
            cause: e.into(),
        })
    }
}

impl<E: Into<Cause>> From<E> for FileError {
    fn from(e: E) -> Self {
        FileError {
            file: None,
            cause: e.into(),
        }
    }
}

pub fn write_points(path: &Path, pattern: &PointPattern) -> IoResult<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(["x", "y"]).at(path)?;
    for &(x, y) in pattern.points() {
        w.write_record([x.to_string(), y.to_string()]).at(path)?;
    }
    w.flush().at(path)
}

#[derive(Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
}

/// Read a pattern and check it against `domain`.
pub fn read_points(path: &Path, domain: Rect) -> IoResult<PointPattern> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).at(path)?;
    let headers = r.headers().at(path)?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(Cause::Parse(format!("expected header x,y, found {}", headers.iter().collect::<Vec<_>>().join(","))))
            .at(path);
    }
    let mut points = Vec::new();
    for row in r.deserialize::<PointRow>() {
        let row = row.at(path)?;
        points.push((row.x, row.y));
    }
    PointPattern::new(points, domain).at(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub description: String,
}

pub const DTYPE: &str = "f64-le";

/// Writes `<dir>/<name>.f64` and `<dir>/<name>.json`; returns both file names.
pub fn write_array(dir: &Path, name: &str, shape: &[usize], data: &[f64], description: &str) -> IoResult<Vec<String>> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Cause::Parse(format!("array {name}: shape {shape:?} does not hold {} values", data.len())).into());
    }
    let bin = dir.join(format!("{name}.f64"));
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).at(&bin)?;
    let meta = ArrayMeta {
        name: name.into(),
        dtype: DTYPE.into(),
        shape: shape.to_vec(),
        description: description.into(),
    };
    write_json(&dir.join(format!("{name}.json")), &meta)?;
    Ok(vec![format!("{name}.f64"), format!("{name}.json")])
}

pub fn read_array(dir: &Path, name: &str) -> IoResult<(Vec<usize>, Vec<f64>)> {
    let meta: ArrayMeta = read_json(&dir.join(format!("{name}.json")))?;
    let bin = dir.join(format!("{name}.f64"));
    if meta.dtype != DTYPE {
        return Err(Cause::Parse(format!("unsupported dtype {}", meta.dtype))).at(&bin);
    }
    let bytes = fs::read(&bin).at(&bin)?;
    let count: usize = meta.shape.iter().product();
    if bytes.len() != 8 * count {
        return Err(Cause::Parse(format!("expected {} bytes for shape {:?}, found {}", 8 * count, meta.shape, bytes.len())))
            .at(&bin);
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((meta.shape, data))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value).at(path)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).at(path)
}

pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    fs::write(path, text).at(path)
}
