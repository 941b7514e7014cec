//! Ordinal datasets: synthetic generation, CSV ingestion and group-level
//! splitting.
//!
//! Every sample carries a group id (the "patient"). Splits never place one
//! group on both sides.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ClassIndex;
use crate::numeric::{Mat2, Rng};

/// Per-grade sample counts (0..=3) of a reference imbalanced ordinal cohort;
/// the default synthetic priors are these counts normalized.
pub const REFERENCE_CLASS_COUNTS: [u64; 4] = [6105, 3052, 1254, 865];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Mat2,
    labels: Vec<ClassIndex>,
    groups: Vec<u64>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Mat2, labels: Vec<ClassIndex>, groups: Vec<u64>, n_classes: usize) -> Result<Self> {
        let m = features.nrows();
        if labels.len() != m || groups.len() != m {
            return Err(Error::invalid(format!(
                "{m} feature rows, {} labels, {} groups",
                labels.len(),
                groups.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features contain non-finite values"));
        }
        Ok(Self {
            features,
            labels,
            groups,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Mat2 {
        &self.features
    }

    pub fn labels(&self) -> &[ClassIndex] {
        &self.labels
    }

    pub fn groups(&self) -> &[u64] {
        &self.groups
    }

    /// Distinct group ids, ascending.
    pub fn group_ids(&self) -> BTreeSet<u64> {
        self.groups.iter().copied().collect()
    }

    /// Sample indices of each group, in dataset order.
    pub fn group_members(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, g) in self.groups.iter().enumerate() {
            members.entry(*g).or_default().push(i);
        }
        members
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Fraction of samples per class.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_classes];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts.iter().map(|&c| c as f64 / self.len().max(1) as f64).collect()
    }
}

/// Parameters of the synthetic ordinal generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_groups: usize,
    pub samples_per_group: usize,
    /// Width of the informative block.
    pub feature_dim: usize,
    pub class_priors: Vec<f64>,
    pub class_separation: f64,
    pub noise_std: f64,
    /// Extra pure-noise columns appended after the informative block.
    pub distractor_dims: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let total: u64 = REFERENCE_CLASS_COUNTS.iter().sum();
        Self {
            n_classes: 4,
            n_groups: 600,
            samples_per_group: 20,
            feature_dim: 8,
            class_priors: REFERENCE_CLASS_COUNTS
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect(),
            class_separation: 1.0,
            noise_std: 0.7,
            distractor_dims: 8,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if self.n_groups == 0 || self.samples_per_group == 0 || self.feature_dim == 0 {
            return Err(Error::invalid(
                "n_groups, samples_per_group and feature_dim must be positive",
            ));
        }
        if self.class_priors.len() != self.n_classes {
            return Err(Error::invalid(format!(
                "{} class priors for {} classes",
                self.class_priors.len(),
                self.n_classes
            )));
        }
        if self.class_priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("class priors must be non-negative"));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("class priors sum to {total}, expected 1")));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::invalid("class_separation must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        Ok(())
    }
}

/// Draws a class per group from the priors; each sample of a group gets
/// `class * separation * u + N(0, noise_std^2 I)` on the informative block,
/// with `u` a random unit direction, followed by `N(0, noise_std^2)` distractors.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let d = config.feature_dim;
    let mut direction: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        direction = vec![1.0 / (d as f64).sqrt(); d];
    } else {
        direction.iter_mut().for_each(|v| *v /= norm);
    }

    let width = d + config.distractor_dims;
    let m = config.n_groups * config.samples_per_group;
    let mut features = Mat2::zeros((m, width));
    let mut labels = Vec::with_capacity(m);
    let mut groups = Vec::with_capacity(m);
    let mut row = 0;
    for g in 0..config.n_groups {
        let class = rng.categorical(&config.class_priors);
        let offset = class as f64 * config.class_separation;
        for _ in 0..config.samples_per_group {
            let mut r = features.row_mut(row);
            for (j, u) in direction.iter().enumerate() {
                r[j] = offset * u + config.noise_std * rng.normal();
            }
            for j in d..width {
                r[j] = config.noise_std * rng.normal();
            }
            labels.push(class);
            groups.push(g as u64);
            row += 1;
        }
    }
    Dataset::new(features, labels, groups, config.n_classes)
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Header `f0,...,f{d-1},label,group`, one sample per line.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let mut header: Vec<String> = (0..dataset.feature_dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("group".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in dataset.features.rows().into_iter().enumerate() {
        for v in row {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&dataset.labels[i].to_string());
        out.push(',');
        out.push_str(&dataset.groups[i].to_string());
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_csv`]. When `n_classes` is `None` the
/// class count is one more than the largest label (at least 2).
pub fn load_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 {
        return Err(parse_error(path, 1, "header needs at least one feature plus label and group"));
    }
    let d = cols.len() - 2;
    for (j, name) in cols[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(parse_error(path, 1, format!("expected column 'f{j}', found '{name}'")));
        }
    }
    if cols[d] != "label" {
        return Err(parse_error(path, 1, "missing column 'label'"));
    }
    if cols[d + 1] != "group" {
        return Err(parse_error(path, 1, "missing column 'group'"));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 2 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", d + 2, record.len()),
            ));
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line, format!("f{j}: '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("f{j}: non-finite value")));
            }
            values.push(v);
        }
        let label: usize = record[d]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("label '{}' is not a class index", &record[d])))?;
        if let Some(n) = n_classes {
            if label >= n {
                return Err(parse_error(
                    path,
                    line,
                    format!("label {label} out of range for {n} classes"),
                ));
            }
        }
        let group: u64 = record[d + 1]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("group '{}' is not an integer", &record[d + 1])))?;
        labels.push(label);
        groups.push(group);
    }
    if labels.is_empty() {
        return Err(parse_error(path, 2, "no data rows"));
    }
    let n = n_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let features = Mat2::from_shape_vec((labels.len(), d), values).expect("row lengths checked");
    Dataset::new(features, labels, groups, n)
}

/// Sample indices on each side of a split, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_groups(dataset: &Dataset, seed: u64) -> (Vec<u64>, BTreeMap<u64, Vec<usize>>) {
    let members = dataset.group_members();
    let mut ids: Vec<u64> = members.keys().copied().collect();
    Rng::new(seed).shuffle(&mut ids);
    (ids, members)
}

/// Moves whole shuffled groups into the test side until it first holds at
/// least `test_fraction * M` samples. At least one group always stays on the
/// training side.
pub fn group_holdout_indices(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let (ids, members) = shuffled_groups(dataset, seed);
    if ids.len() < 2 {
        return Err(Error::invalid(format!(
            "holdout split needs at least 2 groups, found {}",
            ids.len()
        )));
    }
    let target = test_fraction * dataset.len() as f64;
    let mut test = Vec::new();
    for id in &ids[..ids.len() - 1] {
        if test.len() as f64 >= target {
            break;
        }
        test.extend(&members[id]);
    }
    test.sort_unstable();
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let train = (0..dataset.len()).filter(|i| !test_set.contains(i)).collect();
    Ok(SplitIndices { train, test })
}

/// `(train, test)` datasets for a group-level holdout.
pub fn group_holdout_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = group_holdout_indices(dataset, test_fraction, seed)?;
    Ok((dataset.subset(&split.train), dataset.subset(&split.test)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    /// Fold index of every group.
    pub fold_of_group: BTreeMap<u64, usize>,
    /// `folds[i].test` is fold i's validation portion, `train` the remainder.
    pub folds: Vec<SplitIndices>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

/// Shuffles groups and deals them round-robin into `k` folds.
pub fn group_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let (ids, members) = shuffled_groups(dataset, seed);
    if ids.len() < k {
        return Err(Error::invalid(format!(
            "{k} folds requested but only {} groups",
            ids.len()
        )));
    }
    let fold_of_group: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &g)| (g, i % k)).collect();
    let folds = (0..k)
        .map(|f| {
            let (mut test, mut train) = (Vec::new(), Vec::new());
            for (g, idx) in &members {
                if fold_of_group[g] == f {
                    test.extend(idx);
                } else {
                    train.extend(idx);
                }
            }
            test.sort_unstable();
            train.sort_unstable();
            SplitIndices { train, test }
        })
        .collect();
    Ok(FoldAssignment { fold_of_group, folds })
}

/// Group ids present on both sides of a split; empty when the split is clean.
pub fn leaked_groups(dataset: &Dataset, split: &SplitIndices) -> BTreeSet<u64> {
    let train: BTreeSet<u64> = split.train.iter().map(|&i| dataset.groups[i]).collect();
    split
        .test
        .iter()
        .map(|&i| dataset.groups[i])
        .filter(|g| train.contains(g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_groups(n_groups: usize, per_group: usize) -> Dataset {
        let m = n_groups * per_group;
        let features = Mat2::from_shape_fn((m, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..m).map(|i| (i / per_group) % 3).collect();
        let groups = (0..m).map(|i| (i / per_group) as u64).collect();
        Dataset::new(features, labels, groups, 3).unwrap()
    }

    #[test]
    fn default_priors_are_normalized_reference_counts() {
        let c = SyntheticConfig::default();
        c.validate().unwrap();
        assert_abs_diff_eq!(c.class_priors.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.class_priors[0], 0.5414, epsilon = 1e-4);
        assert_abs_diff_eq!(c.class_priors[3], 0.0767, epsilon = 1e-4);
    }

    #[test]
    fn synthetic_class_frequencies_follow_priors() {
        let config = SyntheticConfig {
            n_groups: 10_000,
            samples_per_group: 1,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&config, 3).unwrap();
        for (f, p) in ds.class_frequencies().iter().zip(&config.class_priors) {
            assert!((f - p).abs() < 0.02, "{f} vs {p}");
        }
        // The percentages as printed in the reference table, too.
        for (f, p) in ds.class_frequencies().iter().zip([0.5414, 0.277, 0.1112, 0.0767]) {
            assert!((f - p).abs() < 0.02, "{f} vs {p}");
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_class_pure_per_group() {
        let config = SyntheticConfig {
            n_groups: 30,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&config, 9).unwrap();
        assert_eq!(a, generate_synthetic(&config, 9).unwrap());
        assert_ne!(a, generate_synthetic(&config, 10).unwrap());
        assert_eq!(a.feature_dim(), 16);
        assert_eq!(a.len(), 600);
        for idx in a.group_members().values() {
            assert!(idx.iter().all(|&i| a.labels()[i] == a.labels()[idx[0]]));
        }
    }

    #[test]
    fn low_noise_is_separable_by_nearest_centroid() {
        let config = SyntheticConfig {
            n_groups: 200,
            noise_std: 1e-6,
            distractor_dims: 0,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&config, 1).unwrap();
        let mut centroids = vec![vec![0.0; ds.feature_dim()]; 4];
        let mut counts = [0usize; 4];
        for (i, &y) in ds.labels().iter().enumerate() {
            counts[y] += 1;
            for (c, v) in centroids[y].iter_mut().zip(ds.features().row(i)) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        for (i, &y) in ds.labels().iter().enumerate() {
            let row = ds.features().row(i);
            let dist = |c: &Vec<f64>| c.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let nearest = (0..4)
                .filter(|&k| counts[k] > 0)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            assert_eq!(nearest, y);
        }
    }

    #[test]
    fn synthetic_config_validation() {
        let bad = |f: fn(&mut SyntheticConfig)| {
            let mut c = SyntheticConfig::default();
            f(&mut c);
            generate_synthetic(&c, 0).is_err()
        };
        assert!(bad(|c| c.class_priors = vec![0.5, 0.5, 0.5, 0.5]));
        assert!(bad(|c| c.class_priors = vec![0.5, 0.5]));
        assert!(bad(|c| c.noise_std = 0.0));
        assert!(bad(|c| c.class_separation = -1.0));
        assert!(bad(|c| c.n_groups = 0));
    }

    #[test]
    fn holdout_takes_whole_groups() {
        let ds = uniform_groups(10, 10);
        let split = group_holdout_indices(&ds, 0.15, 4).unwrap();
        assert_eq!(split.test.len(), 20);
        assert_eq!(split.train.len(), 80);
        assert!(leaked_groups(&ds, &split).is_empty());
        assert_eq!(split, group_holdout_indices(&ds, 0.15, 4).unwrap());
        let (train, test) = group_holdout_split(&ds, 0.15, 4).unwrap();
        assert!(train.group_ids().is_disjoint(&test.group_ids()));
    }

    #[test]
    fn holdout_keeps_a_training_group() {
        let ds = uniform_groups(2, 5);
        let split = group_holdout_indices(&ds, 0.99, 0).unwrap();
        assert_eq!(split.test.len(), 5);
        assert_eq!(split.train.len(), 5);
    }

    #[test]
    fn holdout_errors() {
        assert!(group_holdout_indices(&uniform_groups(1, 5), 0.15, 0).is_err());
        assert!(group_holdout_indices(&uniform_groups(4, 5), 0.0, 0).is_err());
        assert!(group_holdout_indices(&uniform_groups(4, 5), 1.0, 0).is_err());
    }

    #[test]
    fn kfold_partitions_groups() {
        let ds = uniform_groups(10, 3);
        let folds = group_kfold(&ds, 10, 7).unwrap();
        assert_eq!(folds.k(), 10);
        let mut seen = vec![0usize; ds.len()];
        for f in &folds.folds {
            assert_eq!(f.test.len(), 3);
            assert_eq!(ds.subset(&f.test).group_ids().len(), 1);
            assert!(leaked_groups(&ds, f).is_empty());
            assert_eq!(f.test.len() + f.train.len(), ds.len());
            f.test.iter().for_each(|&i| seen[i] += 1);
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(folds, group_kfold(&ds, 10, 7).unwrap());
    }

    #[test]
    fn kfold_errors() {
        assert!(group_kfold(&uniform_groups(3, 2), 4, 0).is_err());
        assert!(group_kfold(&uniform_groups(3, 2), 1, 0).is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = Mat2::zeros((2, 1));
        assert!(Dataset::new(x.clone(), vec![0, 1], vec![0], 2).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 2], vec![0, 1], 2).is_err());
        assert!(Dataset::new(x, vec![0, 1], vec![0, 1], 1).is_err());
    }
}
