//! Datasets, subset masks, membership bookkeeping and input transforms.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::nn::Example;

/// A labelled pool with dense ids `0..m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub d: usize,
    pub k: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, d: usize, k: usize, examples: Vec<Example>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            seed,
            d,
            k,
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples.len() < 2 {
            return Err(Error::invalid(format!(
                "dataset needs at least 2 examples, has {}",
                self.examples.len()
            )));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.id != i {
                return Err(Error::invalid(format!("example at position {i} has id {}", ex.id)));
            }
            if ex.x.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: ex.x.len(),
                });
            }
            if ex.y >= self.k {
                return Err(Error::invalid(format!("label {} >= k={}", ex.y, self.k)));
            }
            if ex.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of example {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Stable hash over `(name, seed, examples)`.
    pub fn digest(&self) -> String {
        digest::digest_of(&(&self.name, self.seed, &self.examples))
    }

    /// Examples selected by `mask`, in id order, with their original ids.
    pub fn select(&self, mask: &SubsetMask) -> Vec<Example> {
        assert_eq!(mask.len(), self.len(), "mask length");
        self.examples
            .iter()
            .zip(mask.bits())
            .filter(|(_, &b)| b)
            .map(|(e, _)| e.clone())
            .collect()
    }

    /// A new dataset holding the masked examples, re-indexed densely in id
    /// order. Returns the original ids alongside.
    pub fn subset(&self, mask: &SubsetMask, name: impl Into<String>) -> Result<(Dataset, Vec<usize>)> {
        let picked = self.select(mask);
        let original: Vec<usize> = picked.iter().map(|e| e.id).collect();
        let examples = picked
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.id = i;
                e
            })
            .collect();
        Ok((Dataset::new(name, self.seed, self.d, self.k, examples)?, original))
    }

    /// Writes `x_0,...,x_{d-1},y` rows without a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| csv_err(path, 0, e))?;
        for ex in &self.examples {
            let mut row: Vec<String> = ex.x.iter().map(|v| format!("{v:.16e}")).collect();
            row.push(ex.y.to_string());
            w.write_record(&row).map_err(|e| csv_err(path, ex.id + 1, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, line: usize, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

/// Membership bits over a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetMask(Vec<bool>);

impl SubsetMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn full(m: usize) -> Self {
        Self(vec![true; m])
    }

    pub fn from_ids(m: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; m];
        for i in ids {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0[id]
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| !b).collect())
    }
}

/// `in_matrix[j][i]` is true when example `i` was in model `j`'s training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipLedger {
    pub in_matrix: Vec<Vec<bool>>,
}

impl MembershipLedger {
    pub fn from_masks(masks: &[SubsetMask]) -> Self {
        Self {
            in_matrix: masks.iter().map(|m| m.bits().to_vec()).collect(),
        }
    }

    pub fn n_models(&self) -> usize {
        self.in_matrix.len()
    }

    pub fn n_examples(&self) -> usize {
        self.in_matrix.first().map_or(0, Vec::len)
    }

    pub fn is_in(&self, model: usize, example: usize) -> bool {
        self.in_matrix[model][example]
    }

    pub fn in_count(&self, example: usize) -> usize {
        self.in_matrix.iter().filter(|row| row[example]).count()
    }
}

/// Class-conditional isotropic Gaussians.
///
/// Class `c` is centered at `separation * (1 + c / (2d)) * (±e_{c mod d})`,
/// with the sign alternating every `d` classes, so the first `2d` classes sit
/// on distinct coordinate half-axes. Examples are emitted class by class.
pub fn gen_gaussian_mixture(
    k: usize,
    d: usize,
    per_class: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 || d == 0 || per_class == 0 {
        return Err(Error::invalid(format!(
            "mixture needs k >= 2, d >= 1, per_class >= 1 (got k={k}, d={d}, per_class={per_class})"
        )));
    }
    if !(noise > 0.0 && noise.is_finite()) || !separation.is_finite() {
        return Err(Error::invalid(format!(
            "mixture needs finite separation and noise > 0 (got {separation}, {noise})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(k * per_class);
    for c in 0..k {
        let center = class_center(c, d, separation);
        for _ in 0..per_class {
            let x = center
                .iter()
                .map(|mu| mu + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            examples.push(Example {
                id: examples.len(),
                x,
                y: c,
            });
        }
    }
    Dataset::new(format!("mixture-k{k}-d{d}-n{per_class}"), seed, d, k, examples)
}

/// Center of class `c` in the mixture generator.
pub fn class_center(c: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut center = vec![0.0; d];
    let sign = if (c / d).is_multiple_of(2) { 1.0 } else { -1.0 };
    center[c % d] = sign * separation * (1.0 + (c / (2 * d)) as f64);
    center
}

/// Column layout for [`load_csv`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CsvSchema {
    /// Feature column indices; `None` means every column except the label.
    #[serde(default)]
    pub feature_columns: Option<Vec<usize>>,
    /// Label column index; `None` means the last column.
    #[serde(default)]
    pub label_column: Option<usize>,
    /// Declared class count; inferred as `max label + 1` when absent.
    #[serde(default)]
    pub n_classes: Option<usize>,
    #[serde(default)]
    pub header: bool,
}

/// Reads a comma-separated file; row order becomes example ids.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut examples = Vec::new();
    let mut width: Option<usize> = None;
    for (row_idx, rec) in reader.records().enumerate() {
        let line = row_idx + 1 + usize::from(schema.header);
        let rec = rec.map_err(|e| csv_err(path, line, e))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(csv_err(
                path,
                line,
                format!("ragged row: {} cells, expected {w}", rec.len()),
            ));
        }
        let label_col = schema.label_column.unwrap_or(w - 1);
        let feature_cols: Vec<usize> = match &schema.feature_columns {
            Some(cols) => cols.clone(),
            None => (0..w).filter(|&c| c != label_col).collect(),
        };
        if label_col >= w || feature_cols.iter().any(|&c| c >= w) {
            return Err(csv_err(
                path,
                line,
                format!("ragged row: {w} cells do not cover the declared columns"),
            ));
        }
        let x = feature_cols
            .iter()
            .map(|&c| {
                let cell = &rec[c];
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| csv_err(path, line, format!("non-numeric cell `{cell}` in column {c}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let cell = &rec[label_col];
        let y = cell
            .parse::<usize>()
            .map_err(|_| csv_err(path, line, format!("label `{cell}` is not a class index")))?;
        if let Some(k) = schema.n_classes {
            if y >= k {
                return Err(csv_err(path, line, format!("label {y} >= declared class count {k}")));
            }
        }
        examples.push(Example {
            id: examples.len(),
            x,
            y,
        });
    }
    if examples.is_empty() {
        return Err(csv_err(path, 0, "no rows"));
    }
    let d = examples[0].x.len();
    let k = schema
        .n_classes
        .unwrap_or_else(|| examples.iter().map(|e| e.y).max().unwrap_or(0) + 1)
        .max(2);
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, 0, d, k, examples)
}

/// Exactly `count` ids drawn uniformly without replacement.
pub fn sample_subset_count(m: usize, count: usize, seed: u64) -> Result<SubsetMask> {
    if count == 0 || count > m {
        return Err(Error::invalid(format!("cannot sample {count} of {m} examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(SubsetMask::from_ids(m, index::sample(&mut rng, m, count)))
}

/// `floor(fraction * m)` examples drawn uniformly without replacement.
pub fn sample_subset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<SubsetMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    let m = dataset.len();
    let count = (fraction * m as f64).floor() as usize;
    if count == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {m} examples selects nothing"
        )));
    }
    sample_subset_count(m, count, seed)
}

/// The `count` examples of smallest score; ties go to the lower id.
pub fn select_lowest_curvature(dataset: &Dataset, scores: &[f64], count: usize) -> Result<SubsetMask> {
    let m = dataset.len();
    if scores.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: scores.len(),
        });
    }
    if count > m {
        return Err(Error::invalid(format!("cannot select {count} of {m} examples")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("curvature score is NaN".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Ok(SubsetMask::from_ids(m, order.into_iter().take(count)))
}

/// Label-preserving input transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Identity,
    /// Reverses the feature vector, the vector analogue of a horizontal flip.
    Mirror,
    GaussianJitter {
        sigma: f64,
        seed: u64,
    },
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TransformSpec::GaussianJitter { sigma, .. } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("jitter sigma must be > 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }
}

/// Applies `t` to the features; the id and label are kept. Jitter noise is
/// drawn from a stream keyed by `(t.seed, example.id)`.
pub fn apply_transform(example: &Example, t: &TransformSpec) -> Example {
    let x = match t {
        TransformSpec::Identity => example.x.clone(),
        TransformSpec::Mirror => example.x.iter().rev().copied().collect(),
        TransformSpec::GaussianJitter { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(digest::derive_seed(*seed, example.id as u64));
            example
                .x
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    Example {
        id: example.id,
        x,
        y: example.y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn mixture_counts_and_determinism() {
        let ds = gen_gaussian_mixture(2, 2, 5, 4.0, 1.0, 1).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.examples.iter().filter(|e| e.y == 0).count(), 5);
        assert_eq!(ds.examples.iter().filter(|e| e.y == 1).count(), 5);
        assert_eq!(ds, gen_gaussian_mixture(2, 2, 5, 4.0, 1.0, 1).unwrap());
        assert_ne!(
            ds.digest(),
            gen_gaussian_mixture(2, 2, 5, 4.0, 1.0, 2).unwrap().digest()
        );
    }

    #[test]
    fn well_separated_mixture_is_nearest_centroid_separable() {
        let (k, d) = (4, 3);
        let ds = gen_gaussian_mixture(k, d, 50, 10.0, 0.1, 9).unwrap();
        let centers: Vec<Vec<f64>> = (0..k).map(|c| class_center(c, d, 10.0)).collect();
        for ex in &ds.examples {
            let dist = |c: &Vec<f64>| c.iter().zip(&ex.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let nearest = (0..k)
                .min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b])))
                .unwrap();
            assert_eq!(nearest, ex.y);
        }
    }

    #[test]
    fn mixture_rejects_bad_args() {
        assert!(gen_gaussian_mixture(1, 2, 5, 1.0, 1.0, 0).is_err());
        assert!(gen_gaussian_mixture(2, 0, 5, 1.0, 1.0, 0).is_err());
        assert!(gen_gaussian_mixture(2, 2, 0, 1.0, 1.0, 0).is_err());
        assert!(gen_gaussian_mixture(2, 2, 5, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn csv_three_rows() {
        let f = write_tmp("0.0,1.0,0\n1.0,0.0,1\n0.5,0.5,0\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!((ds.len(), ds.d, ds.k), (3, 2, 2));
        assert_eq!(ds.examples[1].x, vec![1.0, 0.0]);
        assert_eq!(ds.examples[2].id, 2);
    }

    #[test]
    fn csv_header_skip() {
        let f = write_tmp("a,b,label\n0.0,1.0,0\n1.0,0.0,1\n");
        let schema = CsvSchema {
            header: true,
            ..CsvSchema::default()
        };
        assert_eq!(load_csv(f.path(), &schema).unwrap().len(), 2);
    }

    #[test]
    fn csv_errors() {
        let empty = write_tmp("");
        assert!(load_csv(empty.path(), &CsvSchema::default()).is_err());

        let ragged = write_tmp("0.0,1.0,0\n1.0,1\n");
        let schema = CsvSchema {
            feature_columns: Some(vec![0, 1]),
            label_column: Some(2),
            ..CsvSchema::default()
        };
        let err = load_csv(ragged.path(), &schema).unwrap_err().to_string();
        assert!(err.contains("ragged"), "{err}");

        let bad = write_tmp("0.0,abc,0\n1.0,0.0,1\n");
        let err = load_csv(bad.path(), &CsvSchema::default()).unwrap_err().to_string();
        assert!(err.contains("non-numeric"), "{err}");

        let label = write_tmp("0.0,1.0,0\n1.0,0.0,3\n");
        let schema = CsvSchema {
            n_classes: Some(2),
            ..CsvSchema::default()
        };
        assert!(load_csv(label.path(), &schema).is_err());

        assert!(load_csv(Path::new("/nonexistent/x.csv"), &CsvSchema::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_gaussian_mixture(3, 4, 3, 2.0, 0.7, 5).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.write_csv(f.path()).unwrap();
        let back = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(back.examples, ds.examples);
    }

    #[test]
    fn subset_cardinality() {
        let ds = gen_gaussian_mixture(2, 2, 5, 4.0, 1.0, 1).unwrap();
        let mask = sample_subset(&ds, 0.5, 3).unwrap();
        assert_eq!(mask.count(), 5);
        assert_eq!(mask, sample_subset(&ds, 0.5, 3).unwrap());
        assert_eq!(sample_subset(&ds, 1.0, 3).unwrap(), SubsetMask::full(10));
        assert!(sample_subset(&ds, 0.05, 3).is_err());
        assert!(sample_subset(&ds, 0.0, 3).is_err());
        assert!(sample_subset(&ds, 1.5, 3).is_err());
    }

    #[test]
    fn subset_inclusion_is_uniform() {
        let ds = gen_gaussian_mixture(2, 1, 5, 1.0, 1.0, 0).unwrap();
        let mut counts = [0usize; 10];
        for seed in 0..1000 {
            for i in sample_subset(&ds, 0.5, seed).unwrap().ids() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 1000.0;
            assert!((0.45..=0.55).contains(&f), "inclusion frequency {f}");
        }
    }

    #[test]
    fn lowest_curvature_selection() {
        let ds = gen_gaussian_mixture(3, 1, 1, 1.0, 1.0, 0).unwrap();
        let mask = select_lowest_curvature(&ds, &[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(mask.ids().collect::<Vec<_>>(), vec![1, 2]);
        let mask = select_lowest_curvature(&ds, &[1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(mask.ids().collect::<Vec<_>>(), vec![0]);
        assert!(select_lowest_curvature(&ds, &[1.0, 1.0, 1.0], 4).is_err());
        assert!(select_lowest_curvature(&ds, &[1.0, f64::NAN, 1.0], 1).is_err());
    }

    #[test]
    fn transforms() {
        let ex = Example {
            id: 3,
            x: vec![1.0, 2.0, 3.0],
            y: 1,
        };
        assert_eq!(apply_transform(&ex, &TransformSpec::Identity), ex);
        let m = apply_transform(&ex, &TransformSpec::Mirror);
        assert_eq!(m.x, vec![3.0, 2.0, 1.0]);
        assert_eq!(m.y, 1);
        assert_eq!(apply_transform(&m, &TransformSpec::Mirror), ex);
        let j = TransformSpec::GaussianJitter { sigma: 0.1, seed: 4 };
        let a = apply_transform(&ex, &j);
        assert_eq!(a, apply_transform(&ex, &j));
        assert_ne!(a.x, ex.x);
        assert!(TransformSpec::GaussianJitter { sigma: 0.0, seed: 0 }
            .validate()
            .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lowest_selection_matches_full_sort(
                scores in proptest::collection::vec(-5i32..5, 2..40),
                frac in 0.0f64..=1.0,
            ) {
                let m = scores.len();
                let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
                let ds = gen_gaussian_mixture(2, 1, m, 1.0, 1.0, 0).unwrap();
                let ds = Dataset::new("t", 0, 1, 2, ds.examples[..m].to_vec()).unwrap();
                let count = (frac * m as f64) as usize;
                let got: Vec<usize> = select_lowest_curvature(&ds, &scores, count).unwrap().ids().collect();

                let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..m).collect();
                pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut want: Vec<usize> = pairs[..count].iter().map(|p| p.1).collect();
                want.sort_unstable();
                prop_assert_eq!(got, want);
            }
        }
    }
}
