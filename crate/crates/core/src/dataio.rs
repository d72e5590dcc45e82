//! Dataset ingestion: IDX image files, tabular CSV, synthetic
//! group-structured blobs, per-class subsampling, and a binary container
//! for fast reload across audit rounds.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Guard against division by ~zero when standardizing constant columns.
const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

/// A fixed design matrix with class and group labels.
///
/// Features are 64-bit floats, row-major. Image features lie in [0, 1];
/// tabular features are standardized z-scores. Immutable after
/// construction and safe to share across audit workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Vec<f64>,
    n: usize,
    d: usize,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
    /// Declared number of classes L (labels range over [0, L)).
    pub num_classes: usize,
    /// Declared number of groups K (groups range over [0, K)).
    pub num_groups: usize,
    /// Logical feature shape, e.g. [1, 28, 28] for images or [d] for tabular.
    pub feature_shape: Vec<usize>,
    /// Names of the expanded feature columns, when known (CSV source).
    pub feature_names: Option<Vec<String>>,
    /// Original group values in dense-index order, when known (CSV source).
    pub group_names: Option<Vec<String>>,
    /// Original label values in dense-index order, when known (CSV source).
    pub label_names: Option<Vec<String>>,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        features: Vec<f64>,
        labels: Vec<usize>,
        groups: Vec<usize>,
        num_classes: usize,
        num_groups: usize,
        feature_shape: Vec<usize>,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        let d: usize = feature_shape.iter().product();
        if feature_shape.is_empty() || d == 0 {
            return Err(DataError::Consistency("empty feature shape".into()));
        }
        if features.len() != n * d {
            return Err(DataError::Consistency(format!(
                "feature matrix has {} values, expected n*d = {}*{}",
                features.len(),
                n,
                d
            )));
        }
        if groups.len() != n {
            return Err(DataError::Consistency(format!(
                "groups length {} != n {}",
                groups.len(),
                n
            )));
        }
        if num_classes < 2 || num_groups < 2 {
            return Err(DataError::Consistency(
                "need at least 2 classes and 2 groups".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Consistency(format!(
                "label {bad} out of range [0, {num_classes})"
            )));
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= num_groups) {
            return Err(DataError::Consistency(format!(
                "group {bad} out of range [0, {num_groups})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Consistency(
                "features contain NaN or Inf".into(),
            ));
        }
        Ok(Self {
            name,
            features,
            n,
            d,
            labels,
            groups,
            num_classes,
            num_groups,
            feature_shape,
            feature_names: None,
            group_names: None,
            label_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Number of records in each group, over the given index set.
    pub fn group_sizes(&self, indices: &[usize]) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_groups];
        for &i in indices {
            sizes[self.groups[i]] += 1;
        }
        sizes
    }
}

/// Index sets for one experiment: disjoint train/test plus the audited
/// subset Z (of size m) drawn from the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub audit_indices: Vec<usize>,
}

impl SplitPlan {
    /// Deterministic shuffled split. `audit_samples = None` audits the whole
    /// training set (m = n); `Some(m)` audits the first m train records,
    /// balanced across nothing in particular (they are already shuffled).
    pub fn random(
        n: usize,
        train_fraction: f64,
        audit_samples: Option<usize>,
        seed: u64,
    ) -> Result<Self, DataError> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(DataError::Config(format!(
                "train_fraction {train_fraction} outside [0, 1]"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(seed, stream::SPLIT);
        order.shuffle(&mut rng);
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let mut train_indices: Vec<usize> = order[..n_train].to_vec();
        let mut test_indices: Vec<usize> = order[n_train..].to_vec();
        train_indices.sort_unstable();
        test_indices.sort_unstable();
        let m = audit_samples.unwrap_or(n_train).min(n_train);
        let mut audit_indices: Vec<usize> = {
            // Pick m audit records from the shuffled train order, then sort
            // so trace columns are keyed by ascending dataset index.
            let mut picked: Vec<usize> = order[..n_train].iter().copied().take(m).collect();
            picked.sort_unstable();
            picked
        };
        audit_indices.dedup();
        let plan = Self {
            train_indices,
            test_indices,
            audit_indices,
        };
        plan.validate(n)?;
        Ok(plan)
    }

    pub fn validate(&self, n: usize) -> Result<(), DataError> {
        let mut seen = vec![false; n];
        for &i in &self.train_indices {
            if i >= n {
                return Err(DataError::Consistency(format!("train index {i} >= n {n}")));
            }
            seen[i] = true;
        }
        for &i in &self.test_indices {
            if i >= n {
                return Err(DataError::Consistency(format!("test index {i} >= n {n}")));
            }
            if seen[i] {
                return Err(DataError::Consistency(format!(
                    "index {i} appears in both train and test"
                )));
            }
        }
        for &i in &self.audit_indices {
            if i >= n || !seen[i] {
                return Err(DataError::Consistency(format!(
                    "audit index {i} is not a training index"
                )));
            }
        }
        if self.audit_indices.len() > n {
            return Err(DataError::Consistency("m > n".into()));
        }
        Ok(())
    }

    pub fn num_train(&self) -> usize {
        self.train_indices.len()
    }

    pub fn num_audit(&self) -> usize {
        self.audit_indices.len()
    }
}

fn read_u32_be(r: &mut impl Read, path: &str) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|source| DataError::Io {
        path: path.to_string(),
        source,
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image/label file pair (the MNIST container format).
///
/// Pixels are scaled into [0, 1] by dividing by 255. The class label doubles
/// as the group label, and both L and K are declared as 10.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();

    let mut img = BufReader::new(File::open(images_path).map_err(|source| DataError::Io {
        path: img_name.clone(),
        source,
    })?);
    let magic = read_u32_be(&mut img, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&mut img, &img_name)? as usize;
    let rows = read_u32_be(&mut img, &img_name)? as usize;
    let cols = read_u32_be(&mut img, &img_name)? as usize;
    if rows == 0 || cols == 0 {
        return Err(DataError::Format(format!(
            "degenerate image shape {rows}x{cols}"
        )));
    }
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels).map_err(|_| {
        DataError::Format(format!(
            "image file truncated: expected {} pixel bytes",
            count * rows * cols
        ))
    })?;

    let mut lbl = BufReader::new(File::open(labels_path).map_err(|source| DataError::Io {
        path: lbl_name.clone(),
        source,
    })?);
    let magic = read_u32_be(&mut lbl, &lbl_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Format(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let lbl_count = read_u32_be(&mut lbl, &lbl_name)? as usize;
    if lbl_count != count {
        return Err(DataError::Consistency(format!(
            "{count} images but {lbl_count} labels"
        )));
    }
    let mut raw_labels = vec![0u8; count];
    lbl.read_exact(&mut raw_labels)
        .map_err(|_| DataError::Format("label file truncated".into()))?;

    let features: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&y| y > 9) {
        return Err(DataError::Format(format!("label {bad} outside 0..=9")));
    }
    let groups = labels.clone(); // class-as-group convention
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());

    Dataset::new(name, features, labels, groups, 10, 10, vec![1, rows, cols])
}

/// Dense first-appearance mapping from raw values to 0..K-1.
struct DenseMap {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl DenseMap {
    fn new() -> Self {
        Self {
            index: HashMap::new(),
            names: Vec::new(),
        }
    }

    fn get(&mut self, value: &str) -> usize {
        if let Some(&i) = self.index.get(value) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(value.to_string(), i);
        self.names.push(value.to_string());
        i
    }
}

/// Load a CSV file with a header row into a standardized Dataset.
///
/// Numeric feature columns are standardized to zero mean / unit variance
/// over the whole file (constant columns become all-zeros). Non-numeric
/// columns are one-hot expanded in first-appearance order. Label and group
/// values are mapped densely, also in first-appearance order.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    group_column: &str,
) -> Result<Dataset, DataError> {
    let path_name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::Format(format!("{path_name}: {e}")))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Format(format!("{path_name}: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_col = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::Config(format!("label column '{label_column}' not found")))?;
    let group_col = headers
        .iter()
        .position(|h| h == group_column)
        .ok_or_else(|| DataError::Config(format!("group column '{group_column}' not found")))?;
    if label_col == group_col {
        return Err(DataError::Config(
            "label and group columns must differ".into(),
        ));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (ri, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Format(format!("row {ri}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(DataError::Format(format!(
                "row {ri}: {} fields, expected {}",
                rec.len(),
                headers.len()
            )));
        }
        rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(DataError::Data("CSV has no data rows".into()));
    }

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && c != group_col)
        .collect();

    // A feature column is numeric iff every cell parses as f64. Empty cells
    // are rejected outright; mixed columns fall back to categorical.
    let mut numeric: Vec<bool> = vec![true; feature_cols.len()];
    for (ri, row) in rows.iter().enumerate() {
        for (fi, &c) in feature_cols.iter().enumerate() {
            let cell = &row[c];
            if cell.is_empty() {
                return Err(DataError::Format(format!(
                    "row {ri}: empty cell in column '{}'",
                    headers[c]
                )));
            }
            if numeric[fi] && cell.parse::<f64>().is_err() {
                numeric[fi] = false;
            }
        }
    }

    // First-appearance one-hot vocabularies for categorical columns.
    let mut vocabs: Vec<DenseMap> = feature_cols.iter().map(|_| DenseMap::new()).collect();
    for row in &rows {
        for (fi, &c) in feature_cols.iter().enumerate() {
            if !numeric[fi] {
                vocabs[fi].get(&row[c]);
            }
        }
    }

    let mut feature_names: Vec<String> = Vec::new();
    for (fi, &c) in feature_cols.iter().enumerate() {
        if numeric[fi] {
            feature_names.push(headers[c].clone());
        } else {
            for v in &vocabs[fi].names {
                feature_names.push(format!("{}={}", headers[c], v));
            }
        }
    }
    let d = feature_names.len();
    let n = rows.len();

    let mut features = vec![0.0f64; n * d];
    let mut labels_map = DenseMap::new();
    let mut groups_map = DenseMap::new();
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);

    for (ri, row) in rows.iter().enumerate() {
        let mut col = 0usize;
        for (fi, &c) in feature_cols.iter().enumerate() {
            if numeric[fi] {
                let v: f64 = row[c].parse().map_err(|_| {
                    DataError::Format(format!(
                        "row {ri}: cannot parse '{}' in column '{}'",
                        row[c], headers[c]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(DataError::Format(format!(
                        "row {ri}: non-finite value in column '{}'",
                        headers[c]
                    )));
                }
                features[ri * d + col] = v;
                col += 1;
            } else {
                let k = vocabs[fi].get(&row[c]);
                features[ri * d + col + k] = 1.0;
                col += vocabs[fi].names.len();
            }
        }
        labels.push(labels_map.get(&row[label_col]));
        groups.push(groups_map.get(&row[group_col]));
    }

    // Standardize numeric columns over the whole file (population variance).
    let mut col = 0usize;
    for (fi, _) in feature_cols.iter().enumerate() {
        if numeric[fi] {
            let mean: f64 = (0..n).map(|r| features[r * d + col]).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|r| {
                    let z = features[r * d + col] - mean;
                    z * z
                })
                .sum::<f64>()
                / n as f64;
            let denom = var.sqrt().max(STD_FLOOR);
            for r in 0..n {
                features[r * d + col] = (features[r * d + col] - mean) / denom;
            }
            col += 1;
        } else {
            col += vocabs[fi].names.len();
        }
    }

    let num_classes = labels_map.names.len();
    let num_groups = groups_map.names.len();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    let mut ds = Dataset::new(
        name,
        features,
        labels,
        groups,
        num_classes,
        num_groups,
        vec![d],
    )?;
    ds.feature_names = Some(feature_names);
    ds.group_names = Some(groups_map.names);
    ds.label_names = Some(labels_map.names);
    Ok(ds)
}

/// Generate Gaussian blobs with group-indexed means.
///
/// Group k is centered at distance `separation * k` along the first axis,
/// so higher-index groups carry larger feature norms. Labels equal the
/// group index, except that with probability `label_noise` a label is
/// resampled uniformly among the other classes (for K = 2 this is a plain
/// flip). Features and label noise use independent seed streams, so two
/// runs with the same seed but different `label_noise` produce identical
/// features.
pub fn synth_blobs(
    n_per_group: usize,
    num_groups: usize,
    dims: usize,
    separation: f64,
    label_noise: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_groups < 2 {
        return Err(DataError::Config("need at least 2 groups".into()));
    }
    if dims == 0 {
        return Err(DataError::Config("need at least 1 dimension".into()));
    }
    if n_per_group == 0 {
        return Err(DataError::Config("need at least 1 record per group".into()));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(DataError::Config(format!(
            "label_noise {label_noise} outside [0, 1]"
        )));
    }

    let n = n_per_group * num_groups;
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);

    let mut feat_rng = stream_rng(seed, stream::SYNTH_FEATURES);
    let mut noise_rng = stream_rng(seed, stream::SYNTH_LABELS);

    for k in 0..num_groups {
        let mean0 = separation * k as f64;
        for _ in 0..n_per_group {
            for dim in 0..dims {
                let z: f64 = feat_rng.sample(StandardNormal);
                features.push(if dim == 0 { mean0 + z } else { z });
            }
            let mut label = k;
            let u: f64 = noise_rng.gen();
            if u < label_noise {
                label = (k + 1 + noise_rng.gen_range(0..num_groups - 1)) % num_groups;
            }
            labels.push(label);
            groups.push(k);
        }
    }

    Dataset::new(
        format!("blobs-k{num_groups}-d{dims}"),
        features,
        labels,
        groups,
        num_groups,
        num_groups,
        vec![dims],
    )
}

/// Keep exactly `per_class` records of every class, deterministically
/// shuffled under `seed`.
pub fn subsample_per_class(
    ds: &Dataset,
    per_class: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(DataError::Data(format!(
                "class {c} has {} records, need {per_class}",
                members.len()
            )));
        }
    }
    let mut rng = stream_rng(seed, stream::SUBSAMPLE);
    let mut chosen: Vec<usize> = Vec::with_capacity(per_class * ds.num_classes);
    for members in &mut by_class {
        members.shuffle(&mut rng);
        chosen.extend(members.iter().take(per_class));
    }
    chosen.shuffle(&mut rng);

    let d = ds.dim();
    let mut features = Vec::with_capacity(chosen.len() * d);
    let mut labels = Vec::with_capacity(chosen.len());
    let mut groups = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        features.extend_from_slice(ds.row(i));
        labels.push(ds.labels[i]);
        groups.push(ds.groups[i]);
    }
    let mut out = Dataset::new(
        format!("{}-sub{per_class}", ds.name),
        features,
        labels,
        groups,
        ds.num_classes,
        ds.num_groups,
        ds.feature_shape.clone(),
    )?;
    out.feature_names = ds.feature_names.clone();
    out.group_names = ds.group_names.clone();
    out.label_names = ds.label_names.clone();
    Ok(out)
}

/// Sidecar metadata for the binary container.
#[derive(Debug, Serialize, Deserialize)]
struct ContainerMeta {
    name: String,
    n: usize,
    d: usize,
    num_classes: usize,
    num_groups: usize,
    feature_shape: Vec<usize>,
    labels: Vec<usize>,
    groups: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_names: Option<Vec<String>>,
}

/// Write `<stem>.bin` (features, little-endian f64, row-major) and
/// `<stem>.json` (everything else). Reloading yields bit-identical matrices.
pub fn save_container(ds: &Dataset, stem: &Path) -> Result<(), DataError> {
    let bin_path = stem.with_extension("bin");
    let json_path = stem.with_extension("json");

    let file = File::create(&bin_path).map_err(|source| DataError::Io {
        path: bin_path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for v in &ds.features {
        w.write_all(&v.to_le_bytes()).map_err(|source| DataError::Io {
            path: bin_path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: bin_path.display().to_string(),
        source,
    })?;

    let meta = ContainerMeta {
        name: ds.name.clone(),
        n: ds.n,
        d: ds.d,
        num_classes: ds.num_classes,
        num_groups: ds.num_groups,
        feature_shape: ds.feature_shape.clone(),
        labels: ds.labels.clone(),
        groups: ds.groups.clone(),
        feature_names: ds.feature_names.clone(),
        group_names: ds.group_names.clone(),
        label_names: ds.label_names.clone(),
    };
    let json = serde_json::to_string(&meta)
        .map_err(|e| DataError::Format(format!("metadata encode: {e}")))?;
    std::fs::write(&json_path, json).map_err(|source| DataError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Load a dataset written by [`save_container`].
pub fn load_container(stem: &Path) -> Result<Dataset, DataError> {
    let bin_path = stem.with_extension("bin");
    let json_path = stem.with_extension("json");

    let json = std::fs::read_to_string(&json_path).map_err(|source| DataError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    let meta: ContainerMeta = serde_json::from_str(&json)
        .map_err(|e| DataError::Format(format!("metadata decode: {e}")))?;

    let bytes = std::fs::read(&bin_path).map_err(|source| DataError::Io {
        path: bin_path.display().to_string(),
        source,
    })?;
    let expected = meta.n * meta.d * 8;
    if bytes.len() != expected {
        return Err(DataError::Consistency(format!(
            "feature file has {} bytes, metadata implies {expected}",
            bytes.len()
        )));
    }
    let features: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut ds = Dataset::new(
        meta.name,
        features,
        meta.labels,
        meta.groups,
        meta.num_classes,
        meta.num_groups,
        meta.feature_shape,
    )?;
    ds.feature_names = meta.feature_names;
    ds.group_names = meta.group_names;
    ds.label_names = meta.label_names;
    Ok(ds)
}
