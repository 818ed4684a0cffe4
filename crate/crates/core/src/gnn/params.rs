use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::write_file;

/// Flat view over a parameter container.
///
/// Every tensor is kept in standard (row-major) layout so it can be viewed
/// as a slice; gradients use the same container type and shape tree.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    /// `self += scale * other`.
    fn accumulate(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are row-major")
}

pub(crate) fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are row-major")
}

/// Row-major copy when `a` is not already in standard layout.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

/// Plain-text tensor dump: a `kind`, free-form `meta` lines, and shape-prefixed
/// row-major tensors printed with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<Array2<f64>>,
}

const MAGIC: &str = "togrl-params 1";

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind {}", snapshot.kind);
    for (k, v) in &snapshot.meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    for t in &snapshot.tensors {
        let _ = writeln!(out, "tensor {} {}", t.nrows(), t.ncols());
        for row in t.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    }
    write_file(path, &out)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(bad(1, "missing snapshot header")),
    }
    let kind = match lines.next() {
        Some((_, l)) if l.starts_with("kind ") => l[5..].to_string(),
        _ => return Err(bad(2, "missing kind line")),
    };
    let mut meta = Vec::new();
    let mut tensors = Vec::new();
    while let Some((no, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let k = parts.next().ok_or_else(|| bad(no, "meta key"))?;
                let v = parts.collect::<Vec<_>>().join(" ");
                meta.push((k.to_string(), v));
            }
            Some("tensor") => {
                let dims: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|_| bad(no, "tensor shape")))
                    .collect::<Result<_>>()?;
                if dims.len() != 2 {
                    return Err(bad(no, "tensor shape needs two dimensions"));
                }
                let mut values = Vec::with_capacity(dims[0] * dims[1]);
                for _ in 0..dims[0] {
                    let (rno, row) = lines.next().ok_or_else(|| bad(no, "truncated tensor"))?;
                    let cells: Vec<f64> = row
                        .split_whitespace()
                        .map(|c| c.parse().map_err(|_| bad(rno, "bad number")))
                        .collect::<Result<_>>()?;
                    if cells.len() != dims[1] {
                        return Err(bad(rno, "row width"));
                    }
                    values.extend(cells);
                }
                tensors.push(
                    Array2::from_shape_vec((dims[0], dims[1]), values)
                        .map_err(|e| Error::Shape(e.to_string()))?,
                );
            }
            None => {}
            Some(_) => return Err(bad(no, "unexpected line")),
        }
    }
    Ok(Snapshot {
        kind,
        meta,
        tensors,
    })
}
