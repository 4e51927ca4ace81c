//! Dataset ingestion: IDX-format digit images (gray replicated to RGB,
//! scaled to [0,1]) and the whitespace-delimited fuel-economy table with its
//! canonical 9-feature preprocessing. Loaded datasets are immutable.

mod idx;
mod mpg;

pub use idx::load_mnist;
pub use mpg::load_auto_mpg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream, Tensor};

pub const MNIST_FEATURES: usize = 28 * 28 * 3;
pub const AUTO_MPG_FEATURES: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetName {
    Mnist,
    AutoMpg,
}

impl DatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::AutoMpg => "auto_mpg",
        }
    }
}

impl std::str::FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "auto_mpg" | "auto-mpg" | "autompg" => Ok(DatasetName::AutoMpg),
            other => Err(Error::invalid(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Feature/target scaling applied at load time, kept for de-standardizing
/// predictions later.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Normalization {
    /// Pixels divided by `factor` (255 for byte images).
    PixelScale { factor: f64 },
    /// Per-column z-score over the training split; one-hot columns carry
    /// mean 0 / std 1 placeholders. Target statistics are from the training
    /// split as well.
    ZScore {
        means: Vec<f64>,
        stds: Vec<f64>,
        target_mean: f64,
        target_std: f64,
    },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    /// One row per sample.
    pub features: Matrix,
    /// Class index (as f64) or raw target value per sample.
    pub targets: Vec<f64>,
    pub feature_names: Vec<String>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.features.cols()
    }

    /// Model-shaped input tensor for sample `i`: `[28, 28, 3]` for images,
    /// `[9]` for tabular rows.
    pub fn sample(&self, i: usize) -> Result<Tensor> {
        if i >= self.len() {
            return Err(Error::invalid(format!(
                "sample index {i} out of range for {} rows",
                self.len()
            )));
        }
        Tensor::new(self.input_shape(), self.features.row(i).to_vec())
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self.name {
            DatasetName::Mnist => vec![28, 28, 3],
            DatasetName::AutoMpg => vec![AUTO_MPG_FEATURES],
        }
    }

    /// Training targets in model units: class indices unchanged, regression
    /// targets standardized.
    pub fn standardized_targets(&self) -> Vec<f64> {
        match &self.normalization {
            Normalization::PixelScale { .. } => self.targets.clone(),
            Normalization::ZScore {
                target_mean,
                target_std,
                ..
            } => self
                .targets
                .iter()
                .map(|t| (t - target_mean) / target_std)
                .collect(),
        }
    }

    /// Maps a model output back to raw target units.
    pub fn destandardize_target(&self, v: f64) -> f64 {
        match &self.normalization {
            Normalization::PixelScale { .. } => v,
            Normalization::ZScore {
                target_mean,
                target_std,
                ..
            } => v * target_std + target_mean,
        }
    }
}

/// Deterministic, duplicate-free draw of evaluation rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSelection {
    pub dataset: DatasetName,
    pub seed: u64,
    pub count: usize,
    pub indices: Vec<usize>,
}

pub fn select_samples(dataset: &Dataset, seed: u64, count: usize) -> Result<SampleSelection> {
    let n = dataset.len();
    if count > n {
        return Err(Error::invalid(format!(
            "cannot select {count} samples from {n} rows"
        )));
    }
    use rand::Rng;
    let mut rng = RngStream::new(seed).rng();
    let mut pool: Vec<usize> = (0..n).collect();
    let mut indices = Vec::with_capacity(count);
    for k in 0..count {
        let j = rng.gen_range(k..n);
        pool.swap(k, j);
        indices.push(pool[k]);
    }
    Ok(SampleSelection {
        dataset: dataset.name,
        seed,
        count,
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;

    fn mnist_fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let (imgs, labels) = datagen::generate_digit_images(30, 5);
        let ip = dir.join("imgs");
        let lp = dir.join("labels");
        datagen::write_idx_images(&ip, &imgs).unwrap();
        datagen::write_idx_labels(&lp, &labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn mnist_loads_with_rgb_replication() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = mnist_fixture(dir.path());
        let ds = load_mnist(&ip, &lp, Split::Train).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.feature_count(), MNIST_FEATURES);
        for i in 0..ds.len() {
            let row = ds.features.row(i);
            for px in 0..784 {
                let (r, g, b) = (row[px * 3], row[px * 3 + 1], row[px * 3 + 2]);
                assert_eq!(r, g);
                assert_eq!(g, b);
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn mnist_rejects_bad_magic_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = mnist_fixture(dir.path());

        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[3] = 9; // magic becomes 2057
        let bad = dir.path().join("bad");
        std::fs::write(&bad, &bytes).unwrap();
        match load_mnist(&bad, &lp, Split::Train) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("magic"), "{detail}"),
            other => panic!("expected parse error, got {other:?}"),
        }

        let (imgs, _) = datagen::generate_digit_images(30, 5);
        let short_labels = dir.path().join("short_labels");
        datagen::write_idx_labels(&short_labels, &[0, 1, 2]).unwrap();
        let ip2 = dir.path().join("imgs2");
        datagen::write_idx_images(&ip2, &imgs).unwrap();
        match load_mnist(&ip2, &short_labels, Split::Train) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("mismatch"), "{detail}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mnist_reload_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = mnist_fixture(dir.path());
        let a = load_mnist(&ip, &lp, Split::Test).unwrap();
        let b = load_mnist(&ip, &lp, Split::Test).unwrap();
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn auto_mpg_has_nine_features_with_one_hot_origin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("auto-mpg.data");
        std::fs::write(&path, datagen::generate_mpg_table(120, 4, 3)).unwrap();
        let (train, test) = load_auto_mpg(&path).unwrap();
        assert_eq!(train.feature_count(), AUTO_MPG_FEATURES);
        assert_eq!(test.feature_count(), AUTO_MPG_FEATURES);
        // 4 rows dropped for missing horsepower
        assert_eq!(train.len() + test.len(), 116);
        for ds in [&train, &test] {
            for i in 0..ds.len() {
                let row = ds.features.row(i);
                let onehot: f64 = row[6] + row[7] + row[8];
                assert_eq!(onehot, 1.0);
                assert!(row[6..9].iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }

    #[test]
    fn auto_mpg_standardizes_on_train_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("auto-mpg.data");
        std::fs::write(&path, datagen::generate_mpg_table(200, 0, 9)).unwrap();
        let (train, _) = load_auto_mpg(&path).unwrap();
        let n = train.len() as f64;
        for col in 0..6 {
            let mean: f64 = (0..train.len()).map(|i| train.features.get(i, col)).sum::<f64>() / n;
            let var: f64 = (0..train.len())
                .map(|i| {
                    let d = train.features.get(i, col) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            assert!(mean.abs() <= 1e-6, "col {col} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-6, "col {col} std {}", var.sqrt());
        }
    }

    #[test]
    fn auto_mpg_names_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("auto-mpg.data");
        let mut table = datagen::generate_mpg_table(10, 0, 1);
        table.push_str("18.0   eight   307.0   130.0   3504.0   12.0   70  1\t\"broken row\"\n");
        std::fs::write(&path, table).unwrap();
        match load_auto_mpg(&path) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("line 11"), "{detail}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn select_samples_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("auto-mpg.data");
        std::fs::write(&path, datagen::generate_mpg_table(100, 0, 2)).unwrap();
        let (train, _) = load_auto_mpg(&path).unwrap();

        let empty = select_samples(&train, 1, 0).unwrap();
        assert!(empty.indices.is_empty());

        let a = select_samples(&train, 7, 10).unwrap();
        let b = select_samples(&train, 7, 10).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.indices.len(), 10);
        let mut sorted = a.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10, "duplicate indices in {:?}", a.indices);

        assert!(select_samples(&train, 7, train.len() + 1).is_err());
    }
}
