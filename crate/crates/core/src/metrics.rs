//! Confusion matrices and the per-class precision/recall/F1 and overall
//! accuracy report.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Counts with rows indexed by reference class and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidShape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Config(format!(
                "cannot add a {}-class confusion matrix to a {}-class one",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Precision, recall and F1 of one class. A zero denominator gives 0
    /// when the class occurs in the reference or prediction, and 1 when it
    /// is absent from both.
    pub fn prf1(&self, class: usize) -> ClassScores {
        let tp = self.get(class, class);
        let row: u64 = (0..self.classes).map(|p| self.get(class, p)).sum();
        let col: u64 = (0..self.classes).map(|r| self.get(r, class)).sum();
        let absent = row == 0 && col == 0;
        let ratio = |den: u64| {
            if den > 0 {
                tp as f64 / den as f64
            } else if absent {
                1.0
            } else {
                0.0
            }
        };
        let (precision, recall) = (ratio(col), ratio(row));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassScores { precision, recall, f1 }
    }

    /// Trace over total; 1 for an empty matrix.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            1.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Rows scaled to percentages of the reference count; empty rows stay zero.
    pub fn normalize_rows(&self) -> Vec<Vec<f64>> {
        self.counts
            .chunks(self.classes.max(1))
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if sum == 0 { 0.0 } else { 100.0 * v as f64 / sum as f64 })
                    .collect()
            })
            .collect()
    }

    /// The matrix restricted to the listed classes, in the given order.
    pub fn submatrix(&self, keep: &[usize]) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::new(keep.len());
        for (i, &r) in keep.iter().enumerate() {
            for (j, &p) in keep.iter().enumerate() {
                out.counts[i * keep.len() + j] = self.get(r, p);
            }
        }
        out
    }
}

/// Confusion matrix of `prediction` against `reference`, skipping pixels
/// where `ignore` is set.
pub fn confusion(
    reference: &LabelMap,
    prediction: &LabelMap,
    classes: usize,
    ignore: Option<&[bool]>,
) -> Result<ConfusionMatrix> {
    if reference.height() != prediction.height() || reference.width() != prediction.width() {
        return Err(Error::InvalidShape(format!(
            "reference {}x{} and prediction {}x{} differ",
            reference.height(),
            reference.width(),
            prediction.height(),
            prediction.width()
        )));
    }
    if ignore.is_some_and(|m| m.len() != reference.len()) {
        return Err(Error::InvalidShape("ignore mask size differs from label map".into()));
    }
    reference.check_range(classes)?;
    prediction.check_range(classes)?;
    let mut cm = ConfusionMatrix::new(classes);
    for (i, (&r, &p)) in reference.data().iter().zip(prediction.data()).enumerate() {
        if ignore.is_some_and(|m| m[i]) {
            continue;
        }
        cm.counts[r as usize * classes + p as usize] += 1;
    }
    Ok(cm)
}

/// Elementwise sum of per-tile matrices.
pub fn accumulate(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Config("no confusion matrices to accumulate".into()))?;
    let mut out = ConfusionMatrix::new(first.classes);
    for m in matrices {
        out.add(m)?;
    }
    Ok(out)
}

/// Marks every pixel that has a differently labeled pixel within
/// Chebyshev distance `radius`.
pub fn erode_boundaries(labels: &LabelMap, radius: usize) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    if radius == 0 || labels.is_empty() {
        return vec![false; labels.len()];
    }
    // separable sliding min and max of the labels
    let window = |get: &dyn Fn(usize, usize) -> (u8, u8), y: usize, x: usize, along_x: bool| {
        let (c, len) = if along_x { (x, w) } else { (y, h) };
        let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(len - 1));
        let mut acc = (u8::MAX, u8::MIN);
        for k in lo..=hi {
            let (a, b) = if along_x { get(y, k) } else { get(k, x) };
            acc = (acc.0.min(a), acc.1.max(b));
        }
        acc
    };
    let data = labels.data();
    let base = |y: usize, x: usize| (data[y * w + x], data[y * w + x]);
    let rows: Vec<(u8, u8)> = (0..h * w).map(|i| window(&base, i / w, i % w, true)).collect();
    let row_get = |y: usize, x: usize| rows[y * w + x];
    (0..h * w)
        .map(|i| {
            let (lo, hi) = window(&row_get, i / w, i % w, false);
            lo != data[i] || hi != data[i]
        })
        .collect()
}

/// Per-class scores and overall accuracy of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// `(class index, name, scores)` for the reported classes.
    pub classes: Vec<(usize, String, ClassScores)>,
    pub overall_accuracy: f64,
}

impl Report {
    /// Scores every class except those in `excluded`; OA uses the full matrix.
    pub fn new(cm: &ConfusionMatrix, names: &[&str], excluded: &[usize]) -> Result<Report> {
        if names.len() != cm.classes() {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                names.len(),
                cm.classes()
            )));
        }
        Ok(Report {
            classes: (0..cm.classes())
                .filter(|c| !excluded.contains(c))
                .map(|c| (c, names[c].to_string(), cm.prf1(c)))
                .collect(),
            overall_accuracy: cm.overall_accuracy(),
        })
    }

    /// F1 per class and OA, in percent, one row per model.
    pub fn f1_table(rows: &[(&str, &Report)]) -> String {
        let Some((_, first)) = rows.first() else {
            return String::new();
        };
        let width = first.classes.iter().map(|c| c.1.len()).max().unwrap_or(0).max(6);
        let label = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<label$}", "Model");
        for (_, name, _) in &first.classes {
            let _ = write!(out, " | {name:>width$}");
        }
        let _ = writeln!(out, " | {:>8}", "OA");
        let rule = label + first.classes.len() * (width + 3) + 11;
        let _ = writeln!(out, "{}", "-".repeat(rule));
        for (model, report) in rows {
            let _ = write!(out, "{model:<label$}");
            for (_, _, s) in &report.classes {
                let _ = write!(out, " | {:>width$.1}", 100.0 * s.f1);
            }
            let _ = writeln!(out, " | {:>8.1}", 100.0 * report.overall_accuracy);
        }
        out
    }

    /// `class,precision,recall,f1` rows followed by an `overall_accuracy` row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["class", "precision", "recall", "f1"]).map_err(err)?;
        for (_, name, s) in &self.classes {
            w.write_record([name.clone(), s.precision.to_string(), s.recall.to_string(), s.f1.to_string()])
                .map_err(err)?;
        }
        w.write_record(["overall_accuracy".to_string(), String::new(), String::new(), self.overall_accuracy.to_string()])
            .map_err(err)?;
        w.flush()?;
        Ok(())
    }
}

/// Row-normalized matrix over the non-excluded classes, as percentages.
pub fn normalized_table(cm: &ConfusionMatrix, names: &[&str], excluded: &[usize]) -> String {
    let keep: Vec<usize> = (0..cm.classes()).filter(|c| !excluded.contains(c)).collect();
    let norm = cm.submatrix(&keep).normalize_rows();
    let width = keep.iter().map(|&c| names[c].len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "");
    for &c in &keep {
        let _ = write!(out, " | {:>width$}", names[c]);
    }
    out.push('\n');
    for (i, &c) in keep.iter().enumerate() {
        let _ = write!(out, "{:<width$}", names[c]);
        for v in &norm[i] {
            let _ = write!(out, " | {v:>width$.2}");
        }
        out.push('\n');
    }
    out
}
