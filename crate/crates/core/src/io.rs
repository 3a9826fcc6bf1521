//! Reading and writing landmark configurations.
//!
//! Formats:
//! - configuration CSV: one landmark per row, `x,y` or `x,y,z`, optional
//!   header row;
//! - configuration JSON: `{"landmarks": [[x, y], ...]}` or a bare array;
//! - samples CSV: `sample_id,x,y[,z]`, rows grouped by id in order of first
//!   appearance, landmark order = row order;
//! - samples JSON: `{"samples": [[[x, y], ...], ...]}` or a bare array.
//!
//! Numbers are written with 17 significant digits so files round-trip
//! exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::geometry::Configuration;

pub(crate) fn is_json(path: &Path, text: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with(['{', '['])
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ShapeError::io(path, e))
}

pub(crate) fn format_err(path: &Path, message: impl Into<String>) -> ShapeError {
    ShapeError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Rows of a headerless-or-headed numeric CSV, with 1-based line numbers.
/// A first row whose fields do not all parse as numbers is a header.
pub(crate) fn csv_rows(path: &Path, text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            ShapeError::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record.iter().map(str::to_owned).collect::<Vec<_>>()));
    }
    Ok(rows)
}

pub(crate) fn looks_like_header(fields: &[String], skip: usize) -> bool {
    fields.iter().skip(skip).any(|f| f.parse::<f64>().is_err())
}

fn parse_coords(path: &Path, line: usize, fields: &[String]) -> Result<Vec<f64>> {
    if !(2..=3).contains(&fields.len()) {
        return Err(ShapeError::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: format!("expected 2 or 3 coordinates, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ShapeError::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    message: format!("'{f}' is not a finite number"),
                })
        })
        .collect()
}

fn build(path: &Path, landmarks: &[Vec<f64>]) -> Result<Configuration> {
    Configuration::from_landmarks(landmarks).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigurationJson {
    Wrapped { landmarks: Vec<Vec<f64>> },
    Bare(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SamplesJson {
    Wrapped { samples: Vec<Vec<Vec<f64>>> },
    Bare(Vec<Vec<Vec<f64>>>),
}

#[derive(Serialize)]
struct ConfigurationOut<'a> {
    landmarks: &'a [Vec<f64>],
}

pub fn read_configuration(path: impl AsRef<Path>) -> Result<Configuration> {
    let path = path.as_ref();
    let text = read_text(path)?;
    if is_json(path, &text) {
        let parsed: ConfigurationJson =
            serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
        let landmarks = match parsed {
            ConfigurationJson::Wrapped { landmarks } | ConfigurationJson::Bare(landmarks) => {
                landmarks
            }
        };
        return build(path, &landmarks);
    }
    let mut rows = csv_rows(path, &text)?;
    if rows.first().is_some_and(|(_, f)| looks_like_header(f, 0)) {
        rows.remove(0);
    }
    let landmarks = rows
        .iter()
        .map(|(line, fields)| parse_coords(path, *line, fields))
        .collect::<Result<Vec<_>>>()?;
    build(path, &landmarks)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<Configuration>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    if is_json(path, &text) {
        let parsed: SamplesJson =
            serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
        let samples = match parsed {
            SamplesJson::Wrapped { samples } | SamplesJson::Bare(samples) => samples,
        };
        return samples.iter().map(|s| build(path, s)).collect();
    }
    let mut rows = csv_rows(path, &text)?;
    if rows.first().is_some_and(|(_, f)| looks_like_header(f, 1)) {
        rows.remove(0);
    }
    let mut ids: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
    for (line, fields) in &rows {
        let Some((id, coords)) = fields.split_first() else {
            continue;
        };
        let point = parse_coords(path, *line, coords)?;
        match ids.iter().position(|x| x == id) {
            Some(g) => groups[g].push(point),
            None => {
                ids.push(id.clone());
                groups.push(vec![point]);
            }
        }
    }
    let samples = groups
        .iter()
        .map(|g| build(path, g))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = samples.first() {
        for s in &samples {
            if s.matrix().shape() != first.matrix().shape() {
                return Err(format_err(
                    path,
                    "samples differ in landmark count or dimension",
                ));
            }
        }
    }
    Ok(samples)
}

pub(crate) fn fmt_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn header(m: usize) -> &'static str {
    if m == 3 {
        "x,y,z"
    } else {
        "x,y"
    }
}

/// Configuration as CSV text with a header row.
pub fn configuration_csv(c: &Configuration) -> String {
    let mut out = String::from(header(c.dim()));
    out.push('\n');
    for p in c.to_landmarks() {
        out.push_str(&fmt_row(&p));
        out.push('\n');
    }
    out
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| ShapeError::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| ShapeError::io(path, e))
}

/// Writes CSV, or JSON when the extension is `.json`.
pub fn write_configuration(path: impl AsRef<Path>, c: &Configuration) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let landmarks = c.to_landmarks();
        let text = serde_json::to_string_pretty(&ConfigurationOut {
            landmarks: &landmarks,
        })
        .expect("serializable");
        write_text(path, &text)
    } else {
        write_text(path, &configuration_csv(c))
    }
}

/// Writes `sample_id,x,y[,z]` rows, ids numbered from 0.
pub fn write_samples(path: impl AsRef<Path>, samples: &[Configuration]) -> Result<()> {
    let path = path.as_ref();
    let m = samples.first().map_or(2, Configuration::dim);
    let mut out = format!("sample_id,{}\n", header(m));
    for (i, s) in samples.iter().enumerate() {
        for p in s.to_landmarks() {
            out.push_str(&format!("{i},{}\n", fmt_row(&p)));
        }
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(name: &str, contents: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        fs::File::create(&path)
            .unwrap()
            .write_all(contents.as_bytes())
            .unwrap();
        (dir, path)
    }

    #[test]
    fn csv_with_and_without_header() {
        let (_d, a) = temp_file("a.csv", "x,y\n0,0\n1,0\n0,1\n");
        let (_e, b) = temp_file("b.csv", "0,0\n1,0\n\n0,1\n");
        assert_eq!(read_configuration(&a).unwrap(), read_configuration(&b).unwrap());
        assert_eq!(read_configuration(&a).unwrap().landmarks(), 3);
    }

    #[test]
    fn json_forms() {
        let (_d, a) = temp_file("a.json", r#"{"landmarks": [[0,0],[1,0],[0,1]]}"#);
        let (_e, b) = temp_file("b.txt", "[[0,0],[1,0],[0,1]]");
        assert_eq!(read_configuration(&a).unwrap(), read_configuration(&b).unwrap());
    }

    #[test]
    fn malformed_row_reports_line() {
        let (_d, p) = temp_file("bad.csv", "x,y\n0,0\n1,abc\n0,1\n");
        match read_configuration(&p) {
            Err(ShapeError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let (_e, q) = temp_file("short.csv", "0,0\n1\n0,1\n");
        assert!(matches!(
            read_configuration(&q),
            Err(ShapeError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn samples_grouped_by_id() {
        let (_d, p) = temp_file(
            "s.csv",
            "sample_id,x,y\na,0,0\na,1,0\na,0,1\nb,0,0\nb,2,0\nb,0,2\n",
        );
        let s = read_samples(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].landmark(1), vec![2.0, 0.0]);
    }

    #[test]
    fn samples_must_agree_in_shape() {
        let (_d, p) = temp_file("s.csv", "0,0,0\n0,1,0\n0,0,1\n1,0,0\n1,1,0\n1,0,1\n1,1,1\n");
        assert!(matches!(read_samples(&p), Err(ShapeError::Format { .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = Configuration::from_landmarks(&[
            vec![0.1, 1.0 / 3.0],
            vec![std::f64::consts::PI, -2.5e-17],
            vec![1e300, 7.0],
        ])
        .unwrap();
        for name in ["c.csv", "c.json"] {
            let path = dir.path().join(name);
            write_configuration(&path, &c).unwrap();
            assert_eq!(read_configuration(&path).unwrap(), c);
        }
        let path = dir.path().join("s.csv");
        write_samples(&path, &[c.clone(), c.clone()]).unwrap();
        assert_eq!(read_samples(&path).unwrap(), vec![c.clone(), c]);
    }

    #[test]
    fn missing_file_carries_path() {
        let err = read_configuration("/nonexistent/shape.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/shape.csv"));
    }
}
