//! Labelled feature data: CSV ingestion, the synthetic generator, and
//! per-subject train/test splits.
//!
//! Labels are held zero-based in memory. On disk (CSV) classes are written
//! one-based, `1..=K`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `N x D`, one sample per row.
    pub features: DMatrix<f64>,
    /// Private labels `y`, zero-based.
    pub private_labels: Vec<usize>,
    /// Target labels `z`, zero-based; absent for reconstruction-only utility.
    pub target_labels: Option<Vec<usize>>,
    pub subject_ids: Vec<usize>,
    pub num_private_classes: usize,
    pub num_target_classes: usize,
}

impl Dataset {
    /// Builds a dataset, inferring class counts as `max label + 1`.
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        private_labels: Vec<usize>,
        target_labels: Option<Vec<usize>>,
        subject_ids: Vec<usize>,
    ) -> Result<Self> {
        let n = features.nrows();
        if private_labels.len() != n || subject_ids.len() != n || target_labels.as_ref().is_some_and(|z| z.len() != n) {
            return Err(Error::Shape(format!("label vectors must all have {n} entries")));
        }
        let count = |v: &[usize]| v.iter().max().map_or(0, |m| m + 1);
        let num_private_classes = count(&private_labels);
        let num_target_classes = target_labels.as_deref().map_or(0, count);
        Ok(Self {
            name: name.into(),
            features,
            private_labels,
            target_labels,
            subject_ids,
            num_private_classes,
            num_target_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn target(&self) -> Result<&[usize]> {
        self.target_labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("dataset '{}' has no target labels", self.name)))
    }

    /// Rows in the given order; class counts are kept from `self`.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let features = self.features.select_rows(rows);
        let pick = |v: &[usize]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            name: self.name.clone(),
            features,
            private_labels: pick(&self.private_labels),
            target_labels: self.target_labels.as_deref().map(pick),
            subject_ids: pick(&self.subject_ids),
            num_private_classes: self.num_private_classes,
            num_target_classes: self.num_target_classes,
        }
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> Dataset {
        Dataset { features, ..self.clone() }
    }
}

/// Column names of a CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Explicit feature columns; when empty, every `f<k>` column is used in
    /// order of `k`.
    pub feature_columns: Vec<String>,
    pub private_column: String,
    pub target_column: Option<String>,
    pub subject_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            feature_columns: Vec::new(),
            private_column: "y".into(),
            target_column: Some("z".into()),
            subject_column: "subject".into(),
        }
    }
}

fn relabel(raw: &[i64]) -> Vec<usize> {
    let map: BTreeMap<i64, usize> = raw
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    raw.iter().map(|v| map[v]).collect()
}

fn parse_label(s: &str, row: usize, col: &str) -> Result<i64> {
    let t = s.trim();
    t.parse::<i64>()
        .or_else(|_| match t.parse::<f64>() {
            Ok(f) if f.fract() == 0.0 && f.is_finite() => Ok(f as i64),
            _ => Err(()),
        })
        .map_err(|_| Error::Parse(format!("row {row}: column '{col}' has non-integer label '{t}'")))
}

/// Reads a CSV with header. Class and subject values are relabelled to
/// contiguous indices in ascending order of their original values. A missing
/// target column loads as an absent target.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let feature_idx: Vec<usize> = if schema.feature_columns.is_empty() {
        let mut cols: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.trim().strip_prefix('f').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, i)))
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, i)| i).collect()
    } else {
        schema
            .feature_columns
            .iter()
            .map(|c| find(c).ok_or_else(|| Error::Parse(format!("missing feature column '{c}'"))))
            .collect::<Result<_>>()?
    };
    if feature_idx.is_empty() {
        return Err(Error::Parse("no feature columns found".into()));
    }
    let y_idx = find(&schema.private_column)
        .ok_or_else(|| Error::Parse(format!("missing column '{}'", schema.private_column)))?;
    let s_idx = find(&schema.subject_column)
        .ok_or_else(|| Error::Parse(format!("missing column '{}'", schema.subject_column)))?;
    let z_idx = schema.target_column.as_deref().and_then(find);

    let mut values = Vec::new();
    let (mut ys, mut zs, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for &c in &feature_idx {
            let field = rec.get(c).unwrap_or("").trim();
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: cannot parse '{field}' in column '{}'", &headers[c])))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row });
            }
            values.push(v);
        }
        ys.push(parse_label(rec.get(y_idx).unwrap_or(""), row, &schema.private_column)?);
        ss.push(parse_label(rec.get(s_idx).unwrap_or(""), row, &schema.subject_column)?);
        if let Some(zi) = z_idx {
            zs.push(parse_label(rec.get(zi).unwrap_or(""), row, "z")?);
        }
    }
    let n = ys.len();
    let features = DMatrix::from_row_slice(n, feature_idx.len(), &values);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, features, relabel(&ys), z_idx.map(|_| relabel(&zs)), relabel(&ss))
}

/// Writes the canonical CSV layout `f0..f{D-1},y,z,subject` with one-based
/// labels. Floats use the shortest representation that round-trips exactly.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("f{k}")).collect();
    header.push("y".into());
    if data.target_labels.is_some() {
        header.push("z".into());
    }
    header.push("subject".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push((data.private_labels[i] + 1).to_string());
        if let Some(z) = &data.target_labels {
            rec.push((z[i] + 1).to_string());
        }
        rec.push((data.subject_ids[i] + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Geometry of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_subjects: usize,
    pub n_target_classes: usize,
    pub per_subject: usize,
    /// Angle in degrees between the subject axis and the target axis.
    pub angle_deg: f64,
    pub subject_sep: f64,
    pub target_sep: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 20,
            n_subjects: 8,
            n_target_classes: 2,
            per_subject: 40,
            angle_deg: 90.0,
            subject_sep: 4.0,
            target_sep: 4.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Subjects sit on the first axis, `subject_sep` apart and centred on the
/// origin. Target classes are offset along the unit direction at
/// `angle_deg` from the first axis within the first two coordinates,
/// `target_sep` apart. Every sample adds isotropic Gaussian noise of standard
/// deviation `noise`. Target classes cycle within each subject, so they are
/// balanced. The private label is the subject.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.dim < 2 {
        return Err(Error::InvalidArgument("synthetic data needs at least two dimensions".into()));
    }
    if !spec.angle_deg.is_finite() || !(0.0..=180.0).contains(&spec.angle_deg) {
        return Err(Error::InvalidArgument(format!("angle {} outside [0, 180] degrees", spec.angle_deg)));
    }
    if spec.n_subjects == 0 || spec.n_target_classes == 0 || spec.per_subject == 0 {
        return Err(Error::InvalidArgument("subject, class and sample counts must be positive".into()));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be non-negative".into()));
    }
    let theta = spec.angle_deg.to_radians();
    let (dir0, dir1) = if spec.angle_deg == 90.0 { (0.0, 1.0) } else { (theta.cos(), theta.sin()) };
    let n = spec.n_subjects * spec.per_subject;
    let mut rng = rng_from_seed(spec.seed);
    let mut features = DMatrix::zeros(n, spec.dim);
    let mut subjects = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let centre = |count: usize, k: usize| k as f64 - (count as f64 - 1.0) / 2.0;
    for s in 0..spec.n_subjects {
        for j in 0..spec.per_subject {
            let i = s * spec.per_subject + j;
            let c = j % spec.n_target_classes;
            let subj_pos = centre(spec.n_subjects, s) * spec.subject_sep;
            let tgt_pos = centre(spec.n_target_classes, c) * spec.target_sep;
            for k in 0..spec.dim {
                let noise: f64 = if spec.noise > 0.0 { spec.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng) } else { 0.0 };
                features[(i, k)] = noise;
            }
            features[(i, 0)] += subj_pos + tgt_pos * dir0;
            features[(i, 1)] += tgt_pos * dir1;
            subjects.push(s);
            targets.push(c);
        }
    }
    Dataset::new("synthetic", features, subjects.clone(), Some(targets), subjects)
}

/// Splits each subject's samples independently: a seeded shuffle puts
/// `ceil(fraction * n_s)` of them (at most `n_s - 1`) in the training split.
/// Row order within each split follows the original order.
pub fn split_per_subject(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut by_subject: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in data.subject_ids.iter().enumerate() {
        by_subject.entry(s).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&subject, rows) in &by_subject {
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(format!("subject {} has a single sample", subject + 1)));
        }
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut derived_rng(seed, &[subject as u64]));
        let k = ((fraction * rows.len() as f64).ceil() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&shuffled[..k]);
        test.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_generator_gives_rectangle_corners() {
        let spec = SyntheticSpec {
            dim: 3,
            n_subjects: 2,
            n_target_classes: 2,
            per_subject: 6,
            angle_deg: 90.0,
            subject_sep: 10.0,
            target_sep: 1.0,
            noise: 0.0,
            seed: 1,
        };
        let data = gen_synthetic(&spec).unwrap();
        let mut points: Vec<Vec<u64>> = (0..data.len())
            .map(|i| data.features.row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        points.sort();
        points.dedup();
        assert_eq!(points.len(), 4);
        for p in &points {
            let v: Vec<f64> = p.iter().map(|b| f64::from_bits(*b)).collect();
            assert_eq!(v[0].abs(), 5.0);
            assert_eq!(v[1].abs(), 0.5);
            assert_eq!(v[2], 0.0);
        }
    }

    #[test]
    fn generator_validates_input() {
        let bad_angle = SyntheticSpec { angle_deg: 200.0, ..Default::default() };
        assert!(gen_synthetic(&bad_angle).is_err());
        let bad_dim = SyntheticSpec { dim: 1, ..Default::default() };
        assert!(gen_synthetic(&bad_dim).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let spec = SyntheticSpec { n_subjects: 3, per_subject: 10, ..Default::default() };
        let data = gen_synthetic(&spec).unwrap();
        let (train, test) = split_per_subject(&data, 0.8, 5).unwrap();
        for s in 0..3 {
            assert_eq!(train.subject_ids.iter().filter(|&&v| v == s).count(), 8);
            assert_eq!(test.subject_ids.iter().filter(|&&v| v == s).count(), 2);
        }
        let mut all: Vec<Vec<u64>> = train
            .features
            .row_iter()
            .chain(test.features.row_iter())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> = data.features.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);

        let again = split_per_subject(&data, 0.8, 5).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, test);
    }

    #[test]
    fn split_rejects_singleton_subject() {
        let data = Dataset::new("t", DMatrix::zeros(3, 2), vec![0, 1, 1], None, vec![0, 1, 1]).unwrap();
        assert!(split_per_subject(&data, 0.5, 0).is_err());
        assert!(split_per_subject(&data, 1.0, 0).is_err());
    }

    #[test]
    fn relabels_to_contiguous_classes() {
        assert_eq!(relabel(&[7, 3, 7, 10]), vec![1, 0, 1, 2]);
    }
}
