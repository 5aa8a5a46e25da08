//! Irregularly sampled multivariate functional observations.
//!
//! Each subject carries its own observation grid; at every observed time all `p`
//! variables are present. Times are stored on `[0, 1]` and the affine map back to
//! raw units travels with the dataset.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FafpcaError, Result};

pub const CSV_HEADER: [&str; 4] = ["subject", "time", "var", "value"];

/// Affine map `s = (t - offset) * scale` from raw time units onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub offset: f64,
    pub scale: f64,
}

impl TimeMap {
    pub fn identity() -> Self {
        TimeMap {
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Map sending `[lo, hi]` onto `[0, 1]`; a degenerate range maps to the origin.
    pub fn from_range(lo: f64, hi: f64) -> Self {
        let scale = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
        TimeMap { offset: lo, scale }
    }

    pub fn forward(&self, t: f64) -> f64 {
        (t - self.offset) * self.scale
    }

    pub fn inverse(&self, s: f64) -> f64 {
        s / self.scale + self.offset
    }

    /// Raw-unit endpoints of `[0, 1]`.
    pub fn range(&self) -> (f64, f64) {
        (self.inverse(0.0), self.inverse(1.0))
    }

    /// Forward map, clamping values within a few ulps of the unit interval.
    pub fn to_unit(&self, t: f64) -> Result<f64> {
        let s = self.forward(t);
        const SLACK: f64 = 1e-12;
        if !(-SLACK..=1.0 + SLACK).contains(&s) || !s.is_finite() {
            let (lo, hi) = self.range();
            return Err(FafpcaError::OutOfRange { time: t, lo, hi });
        }
        Ok(s.clamp(0.0, 1.0))
    }
}

/// One subject's curve: `values` row `l` holds all `p` variables at `times[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl SubjectRecord {
    pub fn n_obs(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    p: usize,
    subjects: Vec<SubjectRecord>,
    time_map: TimeMap,
    var_labels: Vec<String>,
    centers: Option<Vec<f64>>,
}

impl FunctionalDataset {
    /// Validate and assemble a dataset whose subject times already live on `[0, 1]`.
    pub fn new(
        p: usize,
        subjects: Vec<SubjectRecord>,
        time_map: TimeMap,
        var_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if p == 0 {
            return Err(invalid!("dataset needs at least one variable"));
        }
        let var_labels = var_labels.unwrap_or_else(|| (0..p).map(|j| j.to_string()).collect());
        if var_labels.len() != p {
            return Err(FafpcaError::DimensionMismatch(format!(
                "{} variable labels for p = {p}",
                var_labels.len()
            )));
        }
        for s in &subjects {
            validate_subject(s, p)?;
        }
        Ok(FunctionalDataset {
            p,
            subjects,
            time_map,
            var_labels,
            centers: None,
        })
    }

    /// Like [`FunctionalDataset::new`], but the subject times are in raw units and are
    /// mapped through `time_map` first.
    pub fn from_raw_times(
        p: usize,
        mut subjects: Vec<SubjectRecord>,
        time_map: TimeMap,
        var_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        for s in &mut subjects {
            for t in &mut s.times {
                *t = time_map.to_unit(*t)?;
            }
        }
        Self::new(p, subjects, time_map, var_labels)
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn time_map(&self) -> TimeMap {
        self.time_map
    }

    pub fn var_labels(&self) -> &[String] {
        &self.var_labels
    }

    /// Per-variable centers subtracted so far, if the dataset is centered.
    pub fn centers(&self) -> Option<&[f64]> {
        self.centers.as_deref()
    }

    pub fn is_centered(&self) -> bool {
        self.centers.is_some()
    }

    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.n_obs()).sum()
    }

    pub fn min_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.n_obs()).min().unwrap_or(0)
    }

    /// Values in original units (centers added back) for subject `i`.
    pub fn raw_values(&self, i: usize) -> DMatrix<f64> {
        let mut v = self.subjects[i].values.clone();
        if let Some(c) = &self.centers {
            add_centers(&mut v, c, 1.0);
        }
        v
    }

    /// The `1/n_i`-weighted pooled mean of every variable.
    pub fn weighted_means(&self) -> Vec<f64> {
        weighted_means(&self.subjects, self.p)
    }

    /// Copy of this dataset restricted to the given subject indices.
    pub fn select(&self, indices: &[usize]) -> FunctionalDataset {
        FunctionalDataset {
            p: self.p,
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            time_map: self.time_map,
            var_labels: self.var_labels.clone(),
            centers: self.centers.clone(),
        }
    }

    /// Undo any centering.
    pub fn uncentered(&self) -> FunctionalDataset {
        let mut out = self.clone();
        if let Some(c) = out.centers.take() {
            for s in &mut out.subjects {
                add_centers(&mut s.values, &c, 1.0);
            }
        }
        out
    }

    /// Subtract the given per-variable centers (composing with any existing ones).
    pub fn centered_with(&self, centers: &[f64]) -> Result<FunctionalDataset> {
        if centers.len() != self.p {
            return Err(FafpcaError::DimensionMismatch(format!(
                "{} centers for p = {}",
                centers.len(),
                self.p
            )));
        }
        let mut out = self.clone();
        for s in &mut out.subjects {
            add_centers(&mut s.values, centers, -1.0);
        }
        let total = match &self.centers {
            Some(prev) => prev.iter().zip(centers).map(|(a, b)| a + b).collect(),
            None => centers.to_vec(),
        };
        out.centers = Some(total);
        Ok(out)
    }

    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for (i, s) in self.subjects.iter().enumerate() {
            let raw = self.raw_values(i);
            for (l, &t) in s.times.iter().enumerate() {
                let time = self.time_map.inverse(t).to_string();
                for j in 0..self.p {
                    w.write_record([
                        s.id.as_str(),
                        time.as_str(),
                        self.var_labels[j].as_str(),
                        raw[(l, j)].to_string().as_str(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| FafpcaError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn export_long_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FafpcaError::io(path, e))?;
        self.write_long_csv(std::io::BufWriter::new(file))
    }
}

fn validate_subject(s: &SubjectRecord, p: usize) -> Result<()> {
    if s.times.is_empty() {
        return Err(invalid!("subject {:?} has no observations", s.id));
    }
    if s.values.nrows() != s.times.len() || s.values.ncols() != p {
        return Err(FafpcaError::DimensionMismatch(format!(
            "subject {:?}: values are {}x{}, expected {}x{p}",
            s.id,
            s.values.nrows(),
            s.values.ncols(),
            s.times.len()
        )));
    }
    if s.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(invalid!("subject {:?} has times outside [0, 1]", s.id));
    }
    if s.times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid!("subject {:?} times are not strictly increasing", s.id));
    }
    if s.values.iter().any(|v| !v.is_finite()) {
        return Err(FafpcaError::NonFinite(format!("values of subject {:?}", s.id)));
    }
    Ok(())
}

fn add_centers(values: &mut DMatrix<f64>, centers: &[f64], sign: f64) {
    for (j, c) in centers.iter().enumerate() {
        values.column_mut(j).add_scalar_mut(sign * c);
    }
}

fn weighted_means(subjects: &[SubjectRecord], p: usize) -> Vec<f64> {
    let mut mean = vec![0.0; p];
    if subjects.is_empty() {
        return mean;
    }
    for s in subjects {
        let w = 1.0 / s.n_obs() as f64;
        for (j, m) in mean.iter_mut().enumerate() {
            *m += w * s.values.column(j).sum();
        }
    }
    let n = subjects.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Subtract the `1/n_i`-weighted pooled per-variable mean.
pub fn center(dataset: &FunctionalDataset) -> FunctionalDataset {
    let means = dataset.weighted_means();
    dataset
        .centered_with(&means)
        .expect("means have length p by construction")
}

/// Subject-level random split. Centering statistics come from the training part and
/// are applied to both parts.
///
/// For a fixed seed, the training set drawn with fraction `f` is the complement of the
/// training set drawn with `1 - f`.
pub fn split(
    dataset: &FunctionalDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(FunctionalDataset, FunctionalDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid!("train fraction must lie in (0, 1), got {train_fraction}"));
    }
    let n = dataset.n();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = if train_fraction > 0.5 {
        let k = (train_fraction * n as f64).round() as usize;
        (perm[..k].to_vec(), perm[k..].to_vec())
    } else {
        let k = ((1.0 - train_fraction) * n as f64).round() as usize;
        (perm[k..].to_vec(), perm[..k].to_vec())
    };
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(invalid!(
            "split of {n} subjects at fraction {train_fraction} leaves an empty part"
        ));
    }
    let mut train_idx = train_idx;
    let mut test_idx = test_idx;
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let base = dataset.uncentered();
    let train = base.select(&train_idx);
    let test = base.select(&test_idx);
    let centers = train.weighted_means();
    Ok((train.centered_with(&centers)?, test.centered_with(&centers)?))
}

/// Options for [`ingest_long_csv`].
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Raw-unit time interval mapped onto `[0, 1]`; the global min/max when absent.
    pub time_domain: Option<(f64, f64)>,
}

struct Row {
    subject: usize,
    time: f64,
    var: usize,
    value: f64,
    line: u64,
}

pub fn ingest_long_csv(path: impl AsRef<Path>) -> Result<FunctionalDataset> {
    ingest_long_csv_with(path, IngestOptions::default())
}

pub fn ingest_long_csv_with(
    path: impl AsRef<Path>,
    options: IngestOptions,
) -> Result<FunctionalDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| FafpcaError::io(path, e))?;
    read_long_csv(std::io::BufReader::new(file), path, options)
}

/// Parse the long `subject,time,var,value` format. `source` is only used in errors.
pub fn read_long_csv<R: Read>(
    reader: R,
    source: impl AsRef<Path>,
    options: IngestOptions,
) -> Result<FunctionalDataset> {
    let source = source.as_ref();
    let parse_err = |line: u64, message: String| FafpcaError::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", CSV_HEADER.join(",")),
        ));
    }

    let mut subject_ids: Vec<String> = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut raw_vars: Vec<String> = Vec::new();
    let mut partial: Vec<(usize, f64, f64, u64)> = Vec::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let subject = rec[0].trim().to_string();
        let time: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid time {:?}", &rec[1])))?;
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid value {:?}", &rec[3])))?;
        if !time.is_finite() {
            return Err(parse_err(line, format!("non-finite time {:?}", &rec[1])));
        }
        if !value.is_finite() {
            return Err(parse_err(line, format!("non-finite value {:?}", &rec[3])));
        }
        let next = subject_ids.len();
        let sid = *subject_index.entry(subject.clone()).or_insert_with(|| {
            subject_ids.push(subject);
            next
        });
        raw_vars.push(rec[2].trim().to_string());
        partial.push((sid, time, value, line));
    }

    // Variables: integer indices if every label parses, otherwise first-appearance labels.
    let numeric: Option<Vec<usize>> = raw_vars.iter().map(|v| v.parse().ok()).collect();
    let (var_ids, var_labels) = match numeric {
        Some(idx) => {
            let p = idx.iter().max().map_or(0, |m| m + 1);
            (idx, (0..p).map(|j| j.to_string()).collect::<Vec<_>>())
        }
        None => {
            let mut labels: Vec<String> = Vec::new();
            let mut lookup: HashMap<&str, usize> = HashMap::new();
            let ids = raw_vars
                .iter()
                .map(|v| {
                    *lookup.entry(v.as_str()).or_insert_with(|| {
                        labels.push(v.clone());
                        labels.len() - 1
                    })
                })
                .collect();
            (ids, labels)
        }
    };
    let p = var_labels.len();
    if p == 0 {
        return Err(parse_err(1, "no observations".into()));
    }

    let rows: Vec<Row> = partial
        .into_iter()
        .zip(var_ids)
        .map(|((subject, time, value, line), var)| Row {
            subject,
            time,
            var,
            value,
            line,
        })
        .collect();

    let time_map = match options.time_domain {
        Some((lo, hi)) => {
            if !(hi > lo) {
                return Err(invalid!("time domain [{lo}, {hi}] is empty"));
            }
            TimeMap::from_range(lo, hi)
        }
        None => {
            let lo = rows.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.time).fold(f64::NEG_INFINITY, f64::max);
            TimeMap::from_range(lo, hi)
        }
    };

    let mut by_subject: Vec<Vec<&Row>> = vec![Vec::new(); subject_ids.len()];
    for r in &rows {
        by_subject[r.subject].push(r);
    }

    let mut subjects = Vec::with_capacity(subject_ids.len());
    for (sid, mut obs) in by_subject.into_iter().enumerate() {
        obs.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.var.cmp(&b.var)));
        for w in obs.windows(2) {
            if w[0].time == w[1].time && w[0].var == w[1].var {
                return Err(FafpcaError::DuplicateObservation {
                    subject: subject_ids[sid].clone(),
                    time: w[1].time,
                    var: var_labels[w[1].var].clone(),
                });
            }
        }
        let mut times = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for group in obs.chunk_by(|a, b| a.time == b.time) {
            if group.len() != p {
                return Err(FafpcaError::RaggedObservation {
                    subject: subject_ids[sid].clone(),
                    time: group[0].time,
                    found: group.len(),
                    expected: p,
                });
            }
            let s = time_map.to_unit(group[0].time).map_err(|_| {
                parse_err(
                    group[0].line,
                    format!("time {} outside the time domain", group[0].time),
                )
            })?;
            times.push(s);
            values.extend(group.iter().map(|r| r.value));
        }
        // Distinct raw times can collide after mapping only through rounding.
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!(
                "subject {:?} has times that coincide after rescaling",
                subject_ids[sid]
            ));
        }
        let n_i = times.len();
        subjects.push(SubjectRecord {
            id: subject_ids[sid].clone(),
            times,
            values: DMatrix::from_row_slice(n_i, p, &values),
        });
    }

    FunctionalDataset::new(p, subjects, time_map, Some(var_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FunctionalDataset {
        let csv = "subject,time,var,value\n\
                   a,0,0,1.0\na,0,1,2.0\na,5,0,3.0\na,5,1,4.0\na,10,0,5.0\na,10,1,6.0\n\
                   b,0,0,-1.0\nb,0,1,0.5\nb,5,0,2.5\nb,5,1,1.5\nb,10,0,0.0\nb,10,1,7.0\n";
        read_long_csv(csv.as_bytes(), "mem.csv", IngestOptions::default()).unwrap()
    }

    #[test]
    fn ingest_rescales_time() {
        let d = small();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert!((d.time_map().scale - 0.1).abs() < 1e-15);
        assert_eq!(d.subjects()[0].times, vec![0.0, 0.5, 1.0]);
        assert_eq!(d.subjects()[1].values[(2, 1)], 7.0);
    }

    #[test]
    fn duplicate_row_is_named() {
        let csv = "subject,time,var,value\na,1,0,1\na,1,0,2\n";
        let err = read_long_csv(csv.as_bytes(), "x", IngestOptions::default()).unwrap_err();
        match err {
            FafpcaError::DuplicateObservation { subject, time, var } => {
                assert_eq!(subject, "a");
                assert_eq!(time, 1.0);
                assert_eq!(var, "0");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_time_point_rejected() {
        let csv = "subject,time,var,value\na,1,0,1\na,1,1,2\na,2,0,3\n";
        let err = read_long_csv(csv.as_bytes(), "x", IngestOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            FafpcaError::RaggedObservation { found: 1, expected: 2, .. }
        ));
    }

    #[test]
    fn bad_values_report_line() {
        let csv = "subject,time,var,value\na,1,0,1\na,1,1,NaN\n";
        let err = read_long_csv(csv.as_bytes(), "x", IngestOptions::default()).unwrap_err();
        assert!(matches!(err, FafpcaError::Parse { line: 3, .. }), "{err}");
        let csv = "subject,time,var,value\na,1,0,1\na,oops,1,2\n";
        let err = read_long_csv(csv.as_bytes(), "x", IngestOptions::default()).unwrap_err();
        assert!(matches!(err, FafpcaError::Parse { line: 3, .. }), "{err}");
        let csv = "subj,time,var,value\n";
        assert!(read_long_csv(csv.as_bytes(), "x", IngestOptions::default()).is_err());
    }

    #[test]
    fn string_labels_in_first_appearance_order() {
        let csv = "subject,time,var,value\ns,0,hippo,1\ns,0,amyg,2\ns,1,amyg,3\ns,1,hippo,4\n";
        let d = read_long_csv(csv.as_bytes(), "x", IngestOptions::default()).unwrap();
        assert_eq!(d.var_labels(), &["hippo".to_string(), "amyg".to_string()]);
        assert_eq!(d.subjects()[0].values[(1, 0)], 4.0);
    }

    #[test]
    fn centering_constant_and_idempotent() {
        let subjects = vec![SubjectRecord {
            id: "x".into(),
            times: vec![0.0, 0.5, 1.0],
            values: DMatrix::from_element(3, 2, 4.2),
        }];
        let d = FunctionalDataset::new(2, subjects, TimeMap::identity(), None).unwrap();
        let c = center(&d);
        assert!(c.subjects()[0].values.iter().all(|v| v.abs() < 1e-15));
        let c2 = center(&c);
        assert!((&c2.subjects()[0].values - &c.subjects()[0].values).amax() < 1e-12);

        let d = small();
        let c = center(&d);
        assert!(c.weighted_means().iter().all(|m| m.abs() < 1e-10));
        let raw = c.raw_values(1);
        assert!((raw - &d.subjects()[1].values).amax() < 1e-12);
    }

    #[test]
    fn split_partition_and_complement() {
        let subjects = (0..10)
            .map(|i| SubjectRecord {
                id: format!("s{i}"),
                times: vec![0.0, 1.0],
                values: DMatrix::from_element(2, 1, i as f64),
            })
            .collect();
        let d = FunctionalDataset::new(1, subjects, TimeMap::identity(), None).unwrap();
        let ids = |x: &FunctionalDataset| {
            let mut v: Vec<String> = x.subjects().iter().map(|s| s.id.clone()).collect();
            v.sort();
            v
        };
        let (tr, te) = split(&d, 0.6, 1).unwrap();
        assert_eq!((tr.n(), te.n()), (6, 4));
        let mut all = ids(&tr);
        all.extend(ids(&te));
        all.sort();
        assert_eq!(all, ids(&d));

        let (tr2, te2) = split(&d, 0.6, 1).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);

        let (tr4, te4) = split(&d, 0.4, 1).unwrap();
        assert_eq!(ids(&tr4), ids(&te));
        assert_eq!(ids(&te4), ids(&tr));

        assert!(split(&d, 1.0, 1).is_err());
        assert!(split(&d, 0.01, 1).is_err());
    }

    #[test]
    fn export_round_trip() {
        let d = center(&small());
        let mut buf = Vec::new();
        d.write_long_csv(&mut buf).unwrap();
        let back = read_long_csv(buf.as_slice(), "x", IngestOptions::default()).unwrap();
        for i in 0..d.n() {
            assert!((back.raw_values(i) - d.raw_values(i)).amax() < 1e-12);
            for (a, b) in back.subjects()[i].times.iter().zip(&d.subjects()[i].times) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
