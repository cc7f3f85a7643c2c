//! Finite labeled point sets and their file formats.
//!
//! Datasets move through two interchange formats:
//! * CSV with header `x_0,...,x_{d-1},label`, floats in the crate-wide
//!   17-significant-digit encoding;
//! * a binary container with a 16-byte header (`CURLDATA` magic, then `n`
//!   and `d` as little-endian u32) followed by `n` row-major records of
//!   `d` feature f64s plus the label as an f64, all little-endian.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::prior::ClassPrior;
use crate::textfmt::{csv_line, fmt_f64};

const BINARY_MAGIC: &[u8; 8] = b"CURLDATA";

/// A finite point set with latent-class labels and per-class index buckets.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    points: Array2<f64>,
    labels: Vec<usize>,
    class_index: Vec<Vec<usize>>,
}

impl LabeledDataset {
    /// Validates that labels match points, every label is below
    /// `num_classes`, and every class owns at least one point.
    pub fn new(points: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points vs {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidParams("dataset needs at least one class".into()));
        }
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::InvalidParams(format!(
                    "label {label} at row {i} exceeds C = {num_classes}"
                )));
            }
            class_index[label].push(i);
        }
        if let Some(empty) = class_index.iter().position(Vec::is_empty) {
            return Err(Error::InvalidParams(format!(
                "class {empty} has no points"
            )));
        }
        Ok(Self {
            points,
            labels,
            class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Indices of the points in class `c`.
    pub fn class_points(&self, c: usize) -> &[usize] {
        &self.class_index[c]
    }

    /// True iff every class has at least two points, as required for
    /// distinct-positive pairing.
    pub fn supports_distinct_positives(&self) -> bool {
        self.class_index.iter().all(|b| b.len() >= 2)
    }

    /// Empirical class distribution (counts / n).
    pub fn empirical_prior(&self) -> ClassPrior {
        let n = self.len() as f64;
        let probs = self
            .class_index
            .iter()
            .map(|b| b.len() as f64 / n)
            .collect();
        ClassPrior::new(probs).expect("empirical counts always form a distribution")
    }

    /// Relabels through a total surjective mapping `[C] -> [C']`.
    pub fn coarse_grain(&self, mapping: &[usize], coarse_classes: usize) -> Result<Self> {
        if mapping.len() != self.num_classes() {
            return Err(Error::InvalidParams(format!(
                "mapping covers {} classes, dataset has {}",
                mapping.len(),
                self.num_classes()
            )));
        }
        if coarse_classes == 0 || coarse_classes > self.num_classes() {
            return Err(Error::InvalidParams(format!(
                "coarse class count {coarse_classes} must be in [1, C]"
            )));
        }
        let mut hit = vec![false; coarse_classes];
        for (c, &target) in mapping.iter().enumerate() {
            if target >= coarse_classes {
                return Err(Error::InvalidParams(format!(
                    "class {c} maps to {target}, beyond C' = {coarse_classes}"
                )));
            }
            hit[target] = true;
        }
        if let Some(missed) = hit.iter().position(|&h| !h) {
            return Err(Error::InvalidParams(format!(
                "mapping is not surjective: coarse class {missed} is never hit"
            )));
        }
        let labels = self.labels.iter().map(|&l| mapping[l]).collect();
        Self::new(self.points.clone(), labels, coarse_classes)
    }

    /// Restricts to the given classes (relabeled 0..len in the given order).
    /// Returns the restricted dataset together with the original row index of
    /// each kept point, so feature tables can be sliced to match.
    pub fn subset_classes(&self, keep: &[usize]) -> Result<(Self, Vec<usize>)> {
        if keep.is_empty() {
            return Err(Error::InvalidParams("class subset must be nonempty".into()));
        }
        let mut new_label = vec![None; self.num_classes()];
        for (new, &c) in keep.iter().enumerate() {
            if c >= self.num_classes() {
                return Err(Error::InvalidParams(format!("unknown class {c}")));
            }
            if new_label[c].replace(new).is_some() {
                return Err(Error::InvalidParams(format!("class {c} listed twice")));
            }
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| new_label[self.labels[i]].is_some())
            .collect();
        let mut points = Array2::zeros((rows.len(), self.dim()));
        let mut labels = Vec::with_capacity(rows.len());
        for (new_row, &old_row) in rows.iter().enumerate() {
            points.row_mut(new_row).assign(&self.points.row(old_row));
            labels.push(new_label[self.labels[old_row]].unwrap());
        }
        Ok((Self::new(points, labels, keep.len())?, rows))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        let header: Vec<String> = (0..self.dim())
            .map(|j| format!("x_{j}"))
            .chain(["label".to_string()])
            .collect();
        w.write_all(csv_line(&header).as_bytes())?;
        for i in 0..self.len() {
            let fields: Vec<String> = self
                .points
                .row(i)
                .iter()
                .map(|&x| fmt_f64(x))
                .chain([self.labels[i].to_string()])
                .collect();
            w.write_all(csv_line(&fields).as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 2 || cols[cols.len() - 1] != "label" {
            return Err(Error::Parse(
                "expected header x_0,...,x_{d-1},label".into(),
            ));
        }
        let d = cols.len() - 1;
        let mut flat = Vec::new();
        let mut labels = Vec::new();
        let mut max_label = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Parse(format!(
                    "row {}: {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    d + 1
                )));
            }
            for f in &fields[..d] {
                flat.push(f.parse::<f64>().map_err(|e| {
                    Error::Parse(format!("row {}: bad float {f:?}: {e}", lineno + 2))
                })?);
            }
            let label = fields[d].parse::<usize>().map_err(|e| {
                Error::Parse(format!("row {}: bad label {:?}: {e}", lineno + 2, fields[d]))
            })?;
            max_label = max_label.max(label);
            labels.push(label);
        }
        let n = labels.len();
        let points = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::Parse(format!("shape error: {e}")))?;
        Self::new(points, labels, max_label + 1)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&u32::try_from(self.len()).map_err(|_| {
            Error::InvalidParams("dataset too large for the u32 header".into())
        })?.to_le_bytes())?;
        w.write_all(&u32::try_from(self.dim()).map_err(|_| {
            Error::InvalidParams("dimension too large for the u32 header".into())
        })?.to_le_bytes())?;
        for i in 0..self.len() {
            for &x in self.points.row(i) {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&(self.labels[i] as f64).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_binary_path(&self, path: &Path) -> Result<()> {
        self.write_binary(std::fs::File::create(path)?)
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("bad magic; not a CURLDATA container".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let d = u32::from_le_bytes(word) as usize;
        let mut flat = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        let mut max_label = 0usize;
        for _ in 0..n {
            for _ in 0..d {
                r.read_exact(&mut buf)?;
                flat.push(f64::from_le_bytes(buf));
            }
            r.read_exact(&mut buf)?;
            let raw = f64::from_le_bytes(buf);
            if raw < 0.0 || raw.fract() != 0.0 || !raw.is_finite() {
                return Err(Error::Parse(format!("non-integral label {raw}")));
            }
            let label = raw as usize;
            max_label = max_label.max(label);
            labels.push(label);
        }
        let points = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::Parse(format!("shape error: {e}")))?;
        Self::new(points, labels, max_label + 1)
    }

    pub fn from_binary_path(path: &Path) -> Result<Self> {
        Self::read_binary(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> LabeledDataset {
        let points = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]];
        LabeledDataset::new(points, vec![0, 0, 1, 1], 2).unwrap()
    }

    #[test]
    fn construction_checks() {
        let points = array![[0.0], [1.0]];
        assert!(LabeledDataset::new(points.clone(), vec![0], 1).is_err());
        assert!(LabeledDataset::new(points.clone(), vec![0, 3], 2).is_err());
        // class 1 empty
        assert!(LabeledDataset::new(points, vec![0, 0], 2).is_err());
    }

    #[test]
    fn buckets_and_prior() {
        let d = toy();
        assert_eq!(d.class_points(0), &[0, 1]);
        assert_eq!(d.class_points(1), &[2, 3]);
        assert!(d.supports_distinct_positives());
        assert_eq!(d.empirical_prior().probs(), &[0.5, 0.5]);
    }

    #[test]
    fn coarse_grain_identity_and_merge() {
        let d = toy();
        let same = d.coarse_grain(&[0, 1], 2).unwrap();
        assert_eq!(same.labels(), d.labels());

        let merged = d.coarse_grain(&[0, 0], 1).unwrap();
        assert_eq!(merged.num_classes(), 1);
        assert_eq!(merged.labels(), &[0, 0, 0, 0]);

        assert!(d.coarse_grain(&[0, 0], 2).is_err()); // not surjective
        assert!(d.coarse_grain(&[0], 1).is_err()); // not total
    }

    #[test]
    fn subset_keeps_rows() {
        let d = toy();
        let (sub, rows) = d.subset_classes(&[1]).unwrap();
        assert_eq!(rows, vec![2, 3]);
        assert_eq!(sub.num_classes(), 1);
        assert_eq!(sub.point(0).to_vec(), vec![2.0, 2.0]);
    }

    #[test]
    fn csv_round_trip() {
        let d = toy();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,label\n"));
        assert!(!text.contains('\r'));
        let back = LabeledDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.points(), d.points());
    }

    #[test]
    fn binary_round_trip() {
        let d = toy();
        let mut buf = Vec::new();
        d.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"CURLDATA");
        assert_eq!(buf.len(), 16 + 4 * 3 * 8);
        let back = LabeledDataset::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.points(), d.points());
    }

    #[test]
    fn binary_rejects_garbage() {
        assert!(LabeledDataset::read_binary(&b"NOTMAGIC\0\0\0\0\0\0\0\0"[..]).is_err());
    }
}
