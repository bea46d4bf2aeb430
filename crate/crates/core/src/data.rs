//! Dataset loading, synthetic generation, splits, and class-imbalance
//! transforms. Features are held as 64-bit reals; datasets are immutable
//! once constructed and every transform is deterministic given its seed.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::{Array2, ArrayView1, Axis};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {msg}")]
    Format { path: String, row: usize, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Labeled feature matrix with a fixed class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    k: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        k: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() == 0 {
            return Err(DataError::InvalidArgument("dataset must be non-empty".into()));
        }
        if k == 0 {
            return Err(DataError::InvalidArgument("class count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(DataError::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            k,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Number of samples per class; sums to `len()`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Empirical class frequencies.
    pub fn class_priors(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }

    fn subset(&self, indices: &[usize], name: String) -> Result<Self, DataError> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.k, name)
    }
}

/// Loads a comma-separated file of numeric rows. The label column defaults
/// to the last one; a leading row that does not parse as numbers is treated
/// as a header and skipped. Labels must be non-negative integers; the class
/// count is inferred as `max label + 1`.
pub fn load_csv(path: &Path, label_col: Option<usize>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(path, std::io::Error::other(e.to_string())),
            _ => DataError::Format {
                path: path.display().to_string(),
                row: 0,
                msg: e.to_string(),
            },
        })?;

    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = record.map_err(|e| DataError::Format {
            path: display.clone(),
            row: row_no,
            msg: e.to_string(),
        })?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(e) if idx == 0 => {
                // Header row: skip it.
                let _ = e;
                continue;
            }
            Err(e) => {
                return Err(DataError::Format {
                    path: display,
                    row: row_no,
                    msg: format!("non-numeric field: {e}"),
                })
            }
        };
        if values.len() < 2 {
            return Err(DataError::Format {
                path: display,
                row: row_no,
                msg: "need at least one feature and one label column".into(),
            });
        }
        let w = *width.get_or_insert(values.len());
        if values.len() != w {
            return Err(DataError::Format {
                path: display,
                row: row_no,
                msg: format!("expected {w} columns, found {}", values.len()),
            });
        }
        let col = label_col.unwrap_or(w - 1);
        if col >= w {
            return Err(DataError::InvalidArgument(format!(
                "label column {col} out of range for {w} columns"
            )));
        }
        let raw = values[col];
        if !raw.is_finite() || raw < 0.0 || raw.fract() != 0.0 {
            return Err(DataError::Format {
                path: display,
                row: row_no,
                msg: format!("label {raw} is not a non-negative integer"),
            });
        }
        labels.push(raw as usize);
        rows.push(
            values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != col)
                .map(|(_, v)| *v)
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(DataError::Format {
            path: display,
            row: 0,
            msg: "no data rows".into(),
        });
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    let features = Array2::from_shape_vec((n, d), flat).expect("consistent row widths");
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(features, labels, k, name)
}

/// Writes features followed by the integer label as the last column, one
/// row per sample, full round-trip precision.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    for (row, &label) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        fields.push(label.to_string());
        writer.write_record(&fields).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an images/labels pair in the big-endian IDX layout. Pixels are
/// scaled to `[0, 1]`; the class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let mut img = std::io::BufReader::new(
        std::fs::File::open(images_path).map_err(|e| io_err(images_path, e))?,
    );
    let magic = img.read_u32::<BigEndian>().map_err(|e| io_err(images_path, e))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Format {
            path: images_path.display().to_string(),
            row: 0,
            msg: format!("image magic {magic:#010x} != {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = img.read_u32::<BigEndian>().map_err(|e| io_err(images_path, e))? as usize;
    let rows = img.read_u32::<BigEndian>().map_err(|e| io_err(images_path, e))? as usize;
    let cols = img.read_u32::<BigEndian>().map_err(|e| io_err(images_path, e))? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    img.read_exact(&mut pixels).map_err(|e| io_err(images_path, e))?;

    let mut lbl = std::io::BufReader::new(
        std::fs::File::open(labels_path).map_err(|e| io_err(labels_path, e))?,
    );
    let magic = lbl.read_u32::<BigEndian>().map_err(|e| io_err(labels_path, e))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Format {
            path: labels_path.display().to_string(),
            row: 0,
            msg: format!("label magic {magic:#010x} != {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = lbl.read_u32::<BigEndian>().map_err(|e| io_err(labels_path, e))? as usize;
    if n_labels != n {
        return Err(DataError::Format {
            path: labels_path.display().to_string(),
            row: 0,
            msg: format!("{n} images but {n_labels} labels"),
        });
    }
    let mut raw_labels = vec![0u8; n_labels];
    lbl.read_exact(&mut raw_labels).map_err(|e| io_err(labels_path, e))?;

    let d = rows * cols;
    let features = Array2::from_shape_vec(
        (n, d),
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
    )
    .expect("length checked by read_exact");
    let labels: Vec<usize> = raw_labels.into_iter().map(|l| l as usize).collect();
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(features, labels, k, name)
}

/// Seeded Gaussian clusters: `k` centers drawn uniformly in `[-5, 5]^d`
/// (redrawn, up to a cap, while closer than three spreads to an earlier
/// center), `n_per_class` samples per cluster with isotropic `spread`.
pub fn make_blobs(
    n_per_class: usize,
    k: usize,
    d: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_per_class == 0 || k == 0 || d == 0 {
        return Err(DataError::InvalidArgument(
            "per-class count, class count and dimension must be positive".into(),
        ));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(DataError::InvalidArgument(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sep = (3.0 * spread).max(1e-6);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut candidate: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        for _attempt in 0..100 {
            let too_close = centers.iter().any(|c| {
                let dist2: f64 = c
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist2.sqrt() < min_sep
            });
            if !too_close {
                break;
            }
            candidate = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        }
        centers.push(candidate);
    }

    let n = n_per_class * k;
    let normal = StandardNormal;
    let mut flat = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let noise: f64 = normal.sample(&mut rng);
                flat.push(c + spread * noise);
            }
            labels.push(class);
        }
    }
    let features = Array2::from_shape_vec((n, d), flat).expect("sized above");
    Dataset::new(
        features,
        labels,
        k,
        format!("blobs-k{k}-c{n_per_class}-d{d}-seed{seed}"),
    )
}

/// Step-imbalance construction: the fraction of classes turned into
/// minorities and the majority/minority size ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    /// Minority fraction of the classes, in (0, 1).
    pub mu: f64,
    /// Majority-to-minority sample ratio, at least 1.
    pub rho: f64,
    /// Seed for the dedicated selection/subsample stream.
    pub seed: u64,
}

impl ImbalanceSpec {
    pub fn validate(&self, k: usize) -> Result<(), DataError> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "minority fraction must lie in (0, 1), got {}",
                self.mu
            )));
        }
        if !self.rho.is_finite() || self.rho < 1.0 {
            return Err(DataError::InvalidArgument(format!(
                "imbalance ratio must be at least 1, got {}",
                self.rho
            )));
        }
        if (self.mu * k as f64).floor() < 1.0 {
            return Err(DataError::InvalidArgument(format!(
                "minority fraction {} selects zero of {k} classes",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Subsamples `floor(mu * k)` randomly chosen minority classes down to
/// `floor(n_max / rho)` samples each; majority classes are untouched and
/// original sample order is preserved.
pub fn step_imbalance(dataset: &Dataset, spec: &ImbalanceSpec) -> Result<Dataset, DataError> {
    spec.validate(dataset.k())?;
    let k = dataset.k();
    let k_min = (spec.mu * k as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let minority_idx = rand::seq::index::sample(&mut rng, k, k_min).into_vec();
    let mut is_minority = vec![false; k];
    for c in minority_idx {
        is_minority[c] = true;
    }

    let counts = dataset.class_counts();
    let n_max = counts
        .iter()
        .enumerate()
        .filter(|(c, _)| !is_minority[*c])
        .map(|(_, &n)| n)
        .max()
        .unwrap_or_else(|| counts.iter().copied().max().unwrap_or(0));
    let target = (n_max as f64 / spec.rho).floor() as usize;
    if target < 1 {
        return Err(DataError::InvalidArgument(format!(
            "ratio {} exceeds the majority class size {n_max}",
            spec.rho
        )));
    }

    // Per minority class, pick which occurrences survive.
    let mut keep_quota = vec![usize::MAX; k];
    for (c, quota) in keep_quota.iter_mut().enumerate() {
        if is_minority[c] && counts[c] > target {
            *quota = target;
        }
    }
    let mut kept_per_class: Vec<Vec<bool>> = counts
        .iter()
        .enumerate()
        .map(|(c, &count)| {
            if keep_quota[c] == usize::MAX {
                vec![true; count]
            } else {
                let mut keep = vec![false; count];
                for i in rand::seq::index::sample(&mut rng, count, keep_quota[c]).into_vec() {
                    keep[i] = true;
                }
                keep
            }
        })
        .collect();

    let mut occurrence = vec![0usize; k];
    let mut indices = Vec::new();
    for (i, &label) in dataset.labels().iter().enumerate() {
        let occ = occurrence[label];
        occurrence[label] += 1;
        if std::mem::take(&mut kept_per_class[label][occ]) {
            indices.push(i);
        }
    }
    dataset.subset(
        &indices,
        format!("{}-imb-mu{}-rho{}", dataset.name(), spec.mu, spec.rho),
    )
}

/// Random minority oversampling: each class is topped up to the largest
/// class count by duplicating its own rows, drawn with replacement from the
/// given seed. Originals stay in place; duplicates are appended.
pub fn oversample_minority(dataset: &Dataset, seed: u64) -> Result<Dataset, DataError> {
    let counts = dataset.class_counts();
    let max_count = *counts.iter().max().expect("non-empty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut per_class_rows: Vec<Vec<usize>> = vec![Vec::new(); dataset.k()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        per_class_rows[label].push(i);
    }

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for rows in per_class_rows.iter().filter(|r| !r.is_empty()) {
        for _ in rows.len()..max_count {
            indices.push(rows[rng.gen_range(0..rows.len())]);
        }
    }
    dataset.subset(&indices, format!("{}-oversampled", dataset.name()))
}

/// Disjoint, exhaustive train/test split. In stratified mode the split is
/// drawn per class, keeping class proportions within one sample.
pub fn split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dataset.len();
    let mut test_indices: Vec<usize>;
    if stratified {
        test_indices = Vec::new();
        let mut per_class_rows: Vec<Vec<usize>> = vec![Vec::new(); dataset.k()];
        for (i, &label) in dataset.labels().iter().enumerate() {
            per_class_rows[label].push(i);
        }
        for rows in per_class_rows.iter_mut().filter(|r| !r.is_empty()) {
            use rand::seq::SliceRandom;
            rows.shuffle(&mut rng);
            let take = (rows.len() as f64 * test_fraction).round() as usize;
            test_indices.extend_from_slice(&rows[..take.min(rows.len())]);
        }
    } else {
        let take = (n as f64 * test_fraction).round() as usize;
        test_indices = rand::seq::index::sample(&mut rng, n, take.min(n)).into_vec();
    }
    if test_indices.is_empty() || test_indices.len() >= n {
        return Err(DataError::InvalidArgument(format!(
            "fraction {test_fraction} leaves an empty side for {n} samples"
        )));
    }
    let mut in_test = vec![false; n];
    for &i in &test_indices {
        in_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
    test_indices.sort_unstable();
    let train = dataset.subset(&train_indices, format!("{}-train", dataset.name()))?;
    let test = dataset.subset(&test_indices, format!("{}-test", dataset.name()))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let original = make_blobs(5, 2, 3, 1.0, 7).unwrap();
        save_csv(&original, &path).unwrap();
        let back = load_csv(&path, None).unwrap();
        assert_eq!(back.len(), original.len());
        assert_eq!(back.k(), original.k());
        assert_eq!(back.labels(), original.labels());
        for (a, b) in back.features().iter().zip(original.features().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_infers_k_and_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "x1,x2,label\n0.5,1.0,0\n1.5,2.0,1\n0.2,0.1,0\n").unwrap();
        let ds = load_csv(&path, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }

    #[test]
    fn csv_rejects_empty_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_csv(&empty, None),
            Err(DataError::Format { .. })
        ));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "0.5,1.0,0\n1.5,2.0,1.5\n").unwrap();
        let err = load_csv(&bad, None).unwrap_err();
        match err {
            DataError::Format { row, .. } => assert_eq!(row, 2),
            other => panic!("expected format error, got {other}"),
        }
    }

    fn write_idx_pair(dir: &Path, pixels: &[u8], labels: &[u8], rows: u32, cols: u32) {
        let n = labels.len() as u32;
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&n.to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        img.extend_from_slice(pixels);
        std::fs::File::create(dir.join("images.idx"))
            .unwrap()
            .write_all(&img)
            .unwrap();

        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&n.to_be_bytes());
        lbl.extend_from_slice(labels);
        std::fs::File::create(dir.join("labels.idx"))
            .unwrap()
            .write_all(&lbl)
            .unwrap();
    }

    #[test]
    fn idx_parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0u8..12).collect(); // 3 samples of 2x2
        let labels = [0u8, 1, 2];
        write_idx_pair(dir.path(), &pixels, &labels, 2, 2);
        let ds = load_idx(&dir.path().join("images.idx"), &dir.path().join("labels.idx")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.k(), 3);
        // First sample, byte-level oracle: bytes 0..4 scaled by 1/255.
        for (j, &b) in pixels[..4].iter().enumerate() {
            assert!((ds.features()[[0, j]] - b as f64 / 255.0).abs() < 1e-15);
        }
    }

    #[test]
    fn idx_rejects_bad_magic_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_pair(dir.path(), &[0u8; 8], &[0u8, 1], 2, 2);

        // Corrupt the image magic.
        let img_path = dir.path().join("images.idx");
        let mut bytes = std::fs::read(&img_path).unwrap();
        bytes[3] = 0x99;
        std::fs::write(&img_path, &bytes).unwrap();
        assert!(matches!(
            load_idx(&img_path, &dir.path().join("labels.idx")),
            Err(DataError::Format { .. })
        ));

        // Rewrite valid images but drop one label.
        write_idx_pair(dir.path(), &[0u8; 8], &[0u8, 1], 2, 2);
        let lbl_path = dir.path().join("labels.idx");
        let mut lbl = std::fs::read(&lbl_path).unwrap();
        lbl[7] = 1; // claim 1 label
        lbl.truncate(9);
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert!(matches!(
            load_idx(&img_path, &lbl_path),
            Err(DataError::Format { .. })
        ));
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = make_blobs(200, 3, 2, 1.0, 11).unwrap();
        assert_eq!(a.len(), 600);
        assert_eq!(a.class_counts(), vec![200, 200, 200]);
        let b = make_blobs(200, 3, 2, 1.0, 11).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn blobs_zero_spread_separable_by_nearest_centroid() {
        let ds = make_blobs(10, 4, 3, 0.0, 3).unwrap();
        // Nearest-centroid oracle: centroids from the data itself.
        let mut centroids = vec![vec![0.0; ds.dim()]; ds.k()];
        let counts = ds.class_counts();
        for (row, &label) in ds.features().rows().into_iter().zip(ds.labels()) {
            for (j, v) in row.iter().enumerate() {
                centroids[label][j] += v / counts[label] as f64;
            }
        }
        for (row, &label) in ds.features().rows().into_iter().zip(ds.labels()) {
            let nearest = centroids
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(&row).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = b.iter().zip(&row).map(|(x, y)| (x - y).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(c, _)| c)
                .unwrap();
            assert_eq!(nearest, label);
        }
    }

    #[test]
    fn step_imbalance_matches_count_arithmetic() {
        let ds = make_blobs(500, 10, 2, 1.0, 5).unwrap();
        let spec = ImbalanceSpec {
            mu: 0.2,
            rho: 10.0,
            seed: 9,
        };
        let out = step_imbalance(&ds, &spec).unwrap();
        let counts = out.class_counts();
        let minority = counts.iter().filter(|&&c| c == 50).count();
        let majority = counts.iter().filter(|&&c| c == 500).count();
        assert_eq!(minority, 2);
        assert_eq!(majority, 8);
    }

    #[test]
    fn transforms_are_deterministic_per_seed() {
        let ds = make_blobs(40, 4, 2, 1.0, 2).unwrap();
        let spec = ImbalanceSpec {
            mu: 0.25,
            rho: 4.0,
            seed: 11,
        };
        let a = step_imbalance(&ds, &spec).unwrap();
        let b = step_imbalance(&ds, &spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());

        let oa = oversample_minority(&a, 3).unwrap();
        let ob = oversample_minority(&b, 3).unwrap();
        assert_eq!(oa.features(), ob.features());

        let (ta, va) = split(&ds, 0.3, 5, true).unwrap();
        let (tb, vb) = split(&ds, 0.3, 5, true).unwrap();
        assert_eq!(ta.features(), tb.features());
        assert_eq!(va.features(), vb.features());
    }

    #[test]
    fn step_imbalance_preserves_majority_rows() {
        let ds = make_blobs(50, 5, 2, 1.0, 6).unwrap();
        let spec = ImbalanceSpec {
            mu: 0.2,
            rho: 5.0,
            seed: 2,
        };
        let out = step_imbalance(&ds, &spec).unwrap();
        let minority_class = out
            .class_counts()
            .iter()
            .position(|&c| c == 10)
            .expect("one class shrunk to 10");
        // Majority rows keep their original relative order and values.
        let original: Vec<Vec<f64>> = ds
            .features()
            .rows()
            .into_iter()
            .zip(ds.labels())
            .filter(|(_, &l)| l != minority_class)
            .map(|(r, _)| r.to_vec())
            .collect();
        let kept: Vec<Vec<f64>> = out
            .features()
            .rows()
            .into_iter()
            .zip(out.labels())
            .filter(|(_, &l)| l != minority_class)
            .map(|(r, _)| r.to_vec())
            .collect();
        assert_eq!(original, kept);
    }

    #[test]
    fn step_imbalance_identity_and_rejections() {
        let ds = make_blobs(20, 5, 2, 1.0, 8).unwrap();
        let identity = step_imbalance(
            &ds,
            &ImbalanceSpec {
                mu: 0.2,
                rho: 1.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(identity.class_counts(), ds.class_counts());
        assert_eq!(identity.features(), ds.features());

        // Fraction too small to select any class.
        assert!(matches!(
            step_imbalance(
                &ds,
                &ImbalanceSpec {
                    mu: 0.1,
                    rho: 2.0,
                    seed: 1
                }
            ),
            Err(DataError::InvalidArgument(_))
        ));
        // Ratio larger than any class.
        assert!(matches!(
            step_imbalance(
                &ds,
                &ImbalanceSpec {
                    mu: 0.2,
                    rho: 100.0,
                    seed: 1
                }
            ),
            Err(DataError::InvalidArgument(_))
        ));
    }

    #[test]
    fn oversample_rebalances_counts() {
        let ds = make_blobs(500, 2, 2, 1.0, 5).unwrap();
        let spec = ImbalanceSpec {
            mu: 0.5,
            rho: 10.0,
            seed: 3,
        };
        let skewed = step_imbalance(&ds, &spec).unwrap();
        let mut counts = skewed.class_counts();
        counts.sort_unstable();
        assert_eq!(counts, vec![50, 500]);

        let balanced = oversample_minority(&skewed, 4).unwrap();
        assert_eq!(balanced.class_counts(), vec![500, 500]);

        // Every synthetic row equals some original row of the same class.
        for (row, &label) in balanced
            .features()
            .rows()
            .into_iter()
            .zip(balanced.labels())
            .skip(skewed.len())
        {
            let found = skewed
                .features()
                .rows()
                .into_iter()
                .zip(skewed.labels())
                .any(|(orig, &ol)| ol == label && orig == row);
            assert!(found);
        }

        // Balanced input passes through unchanged.
        let same = oversample_minority(&ds, 4).unwrap();
        assert_eq!(same.features(), ds.features());
    }

    #[test]
    fn oversample_then_imbalance_restores_counts() {
        let ds = make_blobs(100, 5, 2, 1.0, 13).unwrap();
        let spec = ImbalanceSpec {
            mu: 0.4,
            rho: 4.0,
            seed: 31,
        };
        let skewed = step_imbalance(&ds, &spec).unwrap();
        let restored = oversample_minority(&skewed, 32).unwrap();
        assert_eq!(restored.class_counts(), vec![100; 5]);
    }

    #[test]
    fn split_sizes_and_union() {
        let ds = make_blobs(50, 2, 2, 1.0, 17).unwrap();
        let (train, test) = split(&ds, 0.2, 1, false).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);

        // Union of the splits is the original multiset of rows.
        let mut all: Vec<(Vec<u64>, usize)> = Vec::new();
        for part in [&train, &test] {
            for (row, &label) in part.features().rows().into_iter().zip(part.labels()) {
                all.push((row.iter().map(|v| v.to_bits()).collect(), label));
            }
        }
        let mut original: Vec<(Vec<u64>, usize)> = ds
            .features()
            .rows()
            .into_iter()
            .zip(ds.labels())
            .map(|(r, &l)| (r.iter().map(|v| v.to_bits()).collect(), l))
            .collect();
        all.sort();
        original.sort();
        assert_eq!(all, original);
    }

    #[test]
    fn stratified_split_preserves_proportions() {
        let ds = make_blobs(500, 2, 2, 1.0, 19).unwrap();
        let spec = ImbalanceSpec {
            mu: 0.5,
            rho: 10.0,
            seed: 23,
        };
        let skewed = step_imbalance(&ds, &spec).unwrap();
        let (_, test) = split(&skewed, 0.2, 7, true).unwrap();
        let mut counts = test.class_counts();
        counts.sort_unstable();
        assert!((counts[0] as i64 - 10).abs() <= 1);
        assert!((counts[1] as i64 - 100).abs() <= 1);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = make_blobs(5, 2, 2, 1.0, 1).unwrap();
        assert!(split(&ds, 0.0, 1, false).is_err());
        assert!(split(&ds, 1.0, 1, false).is_err());
        assert!(split(&ds, 0.01, 1, false).is_err());
    }
}
