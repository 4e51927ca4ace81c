//! Fuel-economy table ingestion: drops rows with missing horsepower, one-hot
//! encodes origin, z-standardizes the six numeric columns on training-split
//! statistics and splits 80/20 with a fixed seed.

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetName, Normalization, Split, AUTO_MPG_FEATURES};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};

const SPLIT_SEED: u64 = 42;
const TRAIN_FRACTION: f64 = 0.8;

pub const FEATURE_NAMES: [&str; 9] = [
    "cylinders",
    "displacement",
    "horsepower",
    "weight",
    "acceleration",
    "model_year",
    "origin_usa",
    "origin_europe",
    "origin_japan",
];

struct RawRow {
    mpg: f64,
    numeric: [f64; 6],
    origin: u32,
}

pub fn load_auto_mpg(path: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pstr = path.display().to_string();

    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // numeric fields precede the quoted car name
        let numeric_part = line.split('"').next().unwrap_or(line);
        let fields: Vec<&str> = numeric_part.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                &pstr,
                format!("line {}: expected 8 numeric fields, found {}", lineno + 1, fields.len()),
            ));
        }
        if fields[3] == "?" {
            continue; // missing horsepower
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            fields[idx].parse::<f64>().map_err(|_| {
                Error::parse(
                    &pstr,
                    format!("line {}: bad {name} value {:?}", lineno + 1, fields[idx]),
                )
            })
        };
        let origin = num(7, "origin")? as u32;
        if !(1..=3).contains(&origin) {
            return Err(Error::parse(
                &pstr,
                format!("line {}: origin must be 1..3, got {origin}", lineno + 1),
            ));
        }
        rows.push(RawRow {
            mpg: num(0, "mpg")?,
            numeric: [
                num(1, "cylinders")?,
                num(2, "displacement")?,
                num(3, "horsepower")?,
                num(4, "weight")?,
                num(5, "acceleration")?,
                num(6, "model_year")?,
            ],
            origin,
        });
    }
    if rows.len() < 5 {
        return Err(Error::parse(&pstr, format!("only {} usable rows", rows.len())));
    }

    // deterministic 80/20 split
    use rand::Rng;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = RngStream::new(SPLIT_SEED).rng();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_n = ((rows.len() as f64) * TRAIN_FRACTION).round() as usize;
    let (train_idx, test_idx) = order.split_at(train_n);

    // training-split statistics for the six numeric columns (population std)
    let mut means = [0.0f64; 6];
    let mut stds = [0.0f64; 6];
    for &i in train_idx {
        for c in 0..6 {
            means[c] += rows[i].numeric[c];
        }
    }
    for m in &mut means {
        *m /= train_n as f64;
    }
    for &i in train_idx {
        for c in 0..6 {
            let d = rows[i].numeric[c] - means[c];
            stds[c] += d * d;
        }
    }
    for s in &mut stds {
        *s = (*s / train_n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let target_mean = train_idx.iter().map(|&i| rows[i].mpg).sum::<f64>() / train_n as f64;
    let target_var = train_idx
        .iter()
        .map(|&i| {
            let d = rows[i].mpg - target_mean;
            d * d
        })
        .sum::<f64>()
        / train_n as f64;
    let target_std = target_var.sqrt().max(1e-12);

    let norm = Normalization::ZScore {
        means: means.to_vec(),
        stds: stds.to_vec(),
        target_mean,
        target_std,
    };

    let build = |indices: &[usize], split: Split| -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * AUTO_MPG_FEATURES);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let row = &rows[i];
            for c in 0..6 {
                features.push((row.numeric[c] - means[c]) / stds[c]);
            }
            features.push(if row.origin == 1 { 1.0 } else { 0.0 });
            features.push(if row.origin == 2 { 1.0 } else { 0.0 });
            features.push(if row.origin == 3 { 1.0 } else { 0.0 });
            targets.push(row.mpg);
        }
        let matrix = Matrix::new(indices.len(), AUTO_MPG_FEATURES, features)?;
        if matrix.cols() != AUTO_MPG_FEATURES {
            return Err(Error::invalid("feature count drifted from 9"));
        }
        Ok(Dataset {
            name: DatasetName::AutoMpg,
            split,
            features: matrix,
            targets,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            normalization: norm.clone(),
        })
    };

    Ok((build(train_idx, Split::Train)?, build(test_idx, Split::Test)?))
}
