//! Embedding TSV files: `<node_id>\t<v_1,...,v_d>`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hetgraph::{parse_floats, write_file};

/// Values are printed with Rust's shortest round-trip formatting, so reading
/// the file back reproduces the matrix exactly.
pub fn write_embeddings(path: &Path, names: &[String], matrix: &Array2<f64>) -> Result<()> {
    if names.len() != matrix.nrows() {
        return Err(Error::Shape(format!(
            "{} names for {} embedding rows",
            names.len(),
            matrix.nrows()
        )));
    }
    let mut out = String::new();
    for (name, row) in names.iter().zip(matrix.rows()) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{name}\t{}", cells.join(","));
    }
    write_file(path, &out)
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (name, raw) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `<id>\\t<values>`".into()))?;
        let row = parse_floats(raw).map_err(bad)?;
        match dim {
            Some(d) if d != row.len() => {
                return Err(Error::FeatureDimension {
                    path: path.to_path_buf(),
                    line: i + 1,
                    expected: d,
                    found: row.len(),
                })
            }
            _ => dim = Some(row.len()),
        }
        names.push(name.to_string());
        values.extend(row);
    }
    let d = dim.unwrap_or(0);
    let matrix = Array2::from_shape_vec((names.len(), d), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((names, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tsv");
        let m = array![[0.1 + 0.2, -1e-300], [1.0 / 3.0, 7.0]];
        let names = vec!["a".to_string(), "b".to_string()];
        write_embeddings(&path, &names, &m).unwrap();
        let (n2, m2) = read_embeddings(&path).unwrap();
        assert_eq!(n2, names);
        assert_eq!(m2, m);
        assert!(write_embeddings(&path, &names[..1], &m).is_err());
    }
}
