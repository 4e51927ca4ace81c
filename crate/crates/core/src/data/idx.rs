//! IDX binary container parsing (big-endian, magic 2051 for images and 2049
//! for labels).

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetName, Normalization, Split, MNIST_FEATURES};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Loads an image/label IDX pair, scales pixels to [0,1] and replicates the
/// gray channel to three channels.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let ipath = images_path.display().to_string();
    let lpath = labels_path.display().to_string();

    let magic = read_u32_be(&img_bytes, 0, &ipath, "magic")?;
    if magic != 2051 {
        return Err(Error::parse(&ipath, format!("image magic number {magic}, expected 2051")));
    }
    let count = read_u32_be(&img_bytes, 4, &ipath, "count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, &ipath, "rows")? as usize;
    let cols = read_u32_be(&img_bytes, 12, &ipath, "cols")? as usize;
    if rows != 28 || cols != 28 {
        return Err(Error::parse(&ipath, format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(Error::parse(
            &ipath,
            format!("payload: file has {} bytes, header implies {expected}", img_bytes.len()),
        ));
    }

    let lbl_magic = read_u32_be(&lbl_bytes, 0, &lpath, "magic")?;
    if lbl_magic != 2049 {
        return Err(Error::parse(&lpath, format!("label magic number {lbl_magic}, expected 2049")));
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, &lpath, "count")? as usize;
    if lbl_bytes.len() != 8 + lbl_count {
        return Err(Error::parse(&lpath, "label payload length mismatch"));
    }
    if lbl_count != count {
        return Err(Error::parse(
            &lpath,
            format!("image/label count mismatch: {count} images, {lbl_count} labels"),
        ));
    }

    let mut features = Vec::with_capacity(count * MNIST_FEATURES);
    for s in 0..count {
        let base = 16 + s * 784;
        for &byte in &img_bytes[base..base + 784] {
            let v = byte as f64 / 255.0;
            features.extend_from_slice(&[v, v, v]);
        }
    }
    let targets: Vec<f64> = lbl_bytes[8..].iter().map(|&b| b as f64).collect();
    if let Some(bad) = targets.iter().find(|&&t| t >= 10.0) {
        return Err(Error::parse(&lpath, format!("label value {bad} out of range")));
    }

    let feature_names = (0..MNIST_FEATURES)
        .map(|i| format!("px_{}_{}_{}", i / 3 / 28, i / 3 % 28, ["r", "g", "b"][i % 3]))
        .collect();

    Ok(Dataset {
        name: DatasetName::Mnist,
        split,
        features: Matrix::new(count, MNIST_FEATURES, features)?,
        targets,
        feature_names,
        normalization: Normalization::PixelScale { factor: 255.0 },
    })
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &str, field: &str) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::parse(path, format!("truncated header reading {field}")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}
