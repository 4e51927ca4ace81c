//! Deterministic synthetic stand-ins for the two benchmark datasets, written
//! in their exact on-disk formats: IDX binaries for the digit images and the
//! whitespace-delimited table (with `?` missing markers) for the fuel-economy
//! data. Lets the full pipeline run where the original files are not
//! available; the loaders treat real and generated files identically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::RngStream;

/// Stroke-based 28x28 digit images with per-sample affine jitter. The
/// background is exactly zero, like the original scans.
pub fn generate_digit_images(count: usize, seed: u64) -> (Vec<[u8; 784]>, Vec<u8>) {
    let base = RngStream::new(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    // balanced labels in a deterministic shuffled order
    let mut order: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    let mut shuffle_rng = base.substream(u64::MAX).rng();
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for (idx, &label) in order.iter().enumerate() {
        let mut rng = base.substream(idx as u64).rng();
        images.push(render_digit(label, &mut rng));
        labels.push(label);
    }
    (images, labels)
}

fn render_digit(label: u8, rng: &mut ChaCha8Rng) -> [u8; 784] {
    let strokes = digit_strokes(label);
    let rot: f64 = rng.gen_range(-0.22..0.22);
    let scale: f64 = rng.gen_range(17.0..21.5);
    let shear: f64 = rng.gen_range(-0.18..0.18);
    let dx: f64 = rng.gen_range(-1.8..1.8);
    let dy: f64 = rng.gen_range(-1.8..1.8);
    let radius: f64 = rng.gen_range(0.8..1.5);
    let amp: f64 = rng.gen_range(0.72..1.0);

    let (sin, cos) = rot.sin_cos();
    let map = |(u, v): (f64, f64)| -> (f64, f64) {
        let (cu, cv) = (u - 0.5 + shear * (v - 0.5), v - 0.5);
        let (ru, rv) = (cu * cos - cv * sin, cu * sin + cv * cos);
        (ru * scale + 14.0 + dx, rv * scale + 14.0 + dy)
    };

    let segments: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|line| {
            line.windows(2)
                .map(|w| (map(w[0]), map(w[1])))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut out = [0u8; 784];
    for py in 0..28 {
        for px in 0..28 {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let mut dist = f64::INFINITY;
            for &(a, b) in &segments {
                dist = dist.min(point_segment_distance(p, a, b));
            }
            let v = (amp * (radius + 0.6 - dist)).clamp(0.0, amp);
            out[py * 28 + px] = (v * 255.0).round() as u8;
        }
    }
    out
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * abx - p.0, a.1 + t * aby - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, steps: usize) -> Vec<(f64, f64)> {
    (0..=steps)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn digit_strokes(d: u8) -> Vec<Vec<(f64, f64)>> {
    match d {
        0 => vec![arc(0.5, 0.5, 0.26, 0.36, 0.0, 360.0, 20)],
        1 => vec![vec![(0.36, 0.3), (0.52, 0.13), (0.52, 0.87)]],
        2 => {
            let mut top = arc(0.5, 0.32, 0.24, 0.2, 180.0, 360.0, 10);
            top.push((0.28, 0.85));
            vec![top, vec![(0.28, 0.85), (0.76, 0.85)]]
        }
        3 => vec![
            arc(0.45, 0.32, 0.24, 0.19, 150.0, 390.0, 10),
            arc(0.45, 0.67, 0.27, 0.21, 330.0, 570.0, 10),
        ],
        4 => vec![
            vec![(0.62, 0.13), (0.22, 0.6), (0.8, 0.6)],
            vec![(0.62, 0.13), (0.62, 0.87)],
        ],
        5 => {
            let mut s = vec![(0.74, 0.14), (0.3, 0.14), (0.29, 0.45)];
            s.extend(arc(0.47, 0.65, 0.24, 0.21, 250.0, 480.0, 10));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.64, 0.13)];
            s.extend(arc(0.78, 0.52, 0.45, 0.4, 140.0, 180.0, 4));
            s.extend(arc(0.49, 0.66, 0.19, 0.2, 180.0, 540.0, 14));
            vec![s]
        }
        7 => vec![vec![(0.24, 0.15), (0.77, 0.15), (0.42, 0.87)]],
        8 => vec![
            arc(0.5, 0.32, 0.18, 0.17, 90.0, 450.0, 14),
            arc(0.5, 0.67, 0.22, 0.2, 270.0, 630.0, 14),
        ],
        9 => {
            let mut tail = vec![(0.68, 0.36), (0.62, 0.87)];
            let circle = arc(0.5, 0.33, 0.19, 0.19, 0.0, 360.0, 14);
            tail.rotate_left(0);
            vec![circle, tail]
        }
        _ => unreachable!("labels are 0..10"),
    }
}

/// Big-endian IDX image container (magic 2051).
pub fn write_idx_images(path: impl AsRef<Path>, images: &[[u8; 784]]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + images.len() * 784);
    buf.extend_from_slice(&2051u32.to_be_bytes());
    buf.extend_from_slice(&(images.len() as u32).to_be_bytes());
    buf.extend_from_slice(&28u32.to_be_bytes());
    buf.extend_from_slice(&28u32.to_be_bytes());
    for img in images {
        buf.extend_from_slice(img);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Big-endian IDX label container (magic 2049).
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&2049u32.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

const MAKES: &[&str] = &[
    "fairmont", "vectra", "kestrel", "aldora", "pinefield", "tarrano", "velmont", "coriander",
];
const MODELS: &[&str] = &[
    "sedan", "wagon", "coupe", "custom", "deluxe", "brougham", "sport", "estate", "gl", "sl",
];

/// Whitespace-delimited fuel-economy table matching the original column
/// layout, including a handful of `?` horsepower markers.
pub fn generate_mpg_table(rows: usize, missing: usize, seed: u64) -> String {
    let mut out = String::new();
    let base = RngStream::new(seed);
    let mut missing_rows: Vec<usize> = Vec::new();
    {
        let mut rng = base.substream(u64::MAX - 1).rng();
        while missing_rows.len() < missing.min(rows) {
            let r = rng.gen_range(0..rows);
            if !missing_rows.contains(&r) {
                missing_rows.push(r);
            }
        }
    }
    for i in 0..rows {
        let mut rng = base.substream(i as u64).rng();
        let origin: u32 = match rng.gen_range(0.0..1.0) {
            p if p < 0.625 => 1,
            p if p < 0.8 => 2,
            _ => 3,
        };
        let cylinders: u32 = if origin == 1 {
            *pick(&mut rng, &[4, 4, 6, 6, 8, 8, 8])
        } else {
            *pick(&mut rng, &[4, 4, 4, 4, 5, 6])
        };
        let displacement: f64 = match cylinders {
            4 => rng.gen_range(68.0..151.0),
            5 | 6 => rng.gen_range(145.0..262.0),
            _ => rng.gen_range(260.0..455.0),
        };
        let hp_base = match cylinders {
            4 => 75.0,
            5 | 6 => 105.0,
            _ => 155.0,
        };
        let horsepower: f64 =
            (hp_base + 0.22 * (displacement - 200.0) + rng.gen_range(-18.0..18.0)).clamp(46.0, 230.0);
        let weight: f64 =
            (1613.0 + 5.4 * displacement + 6.0 * horsepower + rng.gen_range(-220.0..220.0))
                .clamp(1600.0, 5140.0);
        let acceleration: f64 =
            (27.0 - 0.06 * horsepower - 0.001 * weight + rng.gen_range(-1.4..1.4)).clamp(8.0, 24.8);
        let year: u32 = rng.gen_range(70..83);
        let origin_bonus = match origin {
            1 => 0.0,
            2 => 1.4,
            _ => 2.0,
        };
        let mpg: f64 = (49.0 - 0.0058 * weight - 0.048 * horsepower - 0.012 * displacement
            + 0.6 * (year as f64 - 70.0)
            + origin_bonus
            + rng.gen_range(-2.0..2.0))
        .clamp(9.0, 46.6);

        let name = format!(
            "{} {}",
            MAKES[rng.gen_range(0..MAKES.len())],
            MODELS[rng.gen_range(0..MODELS.len())]
        );
        let hp_field = if missing_rows.contains(&i) {
            "?".to_string()
        } else {
            format!("{horsepower:.1}")
        };
        out.push_str(&format!(
            "{:.1}   {}   {:.1}      {}      {:.1}      {:.1}   {}  {}\t\"{}\"\n",
            (mpg * 10.0).round() / 10.0,
            cylinders,
            (displacement * 10.0).round() / 10.0,
            hp_field,
            (weight * 10.0).round() / 10.0,
            (acceleration * 10.0).round() / 10.0,
            year,
            origin,
            name
        ));
    }
    out
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

/// Paths of a generated fixture tree.
pub struct FixturePaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub auto_mpg: PathBuf,
}

/// Writes a complete data tree under `dir`: `mnist/` IDX files and
/// `auto-mpg.data`. Fully determined by `seed` and the counts.
pub fn write_fixture_tree(
    dir: impl AsRef<Path>,
    seed: u64,
    train_count: usize,
    test_count: usize,
    mpg_rows: usize,
) -> Result<FixturePaths> {
    let dir = dir.as_ref();
    let mnist_dir = dir.join("mnist");
    fs::create_dir_all(&mnist_dir).map_err(|e| Error::io(&mnist_dir, e))?;

    let (train_imgs, train_labels) = generate_digit_images(train_count, seed);
    let (test_imgs, test_labels) = generate_digit_images(test_count, seed.wrapping_add(1));

    let paths = FixturePaths {
        train_images: mnist_dir.join("train-images-idx3-ubyte"),
        train_labels: mnist_dir.join("train-labels-idx1-ubyte"),
        test_images: mnist_dir.join("t10k-images-idx3-ubyte"),
        test_labels: mnist_dir.join("t10k-labels-idx1-ubyte"),
        auto_mpg: dir.join("auto-mpg.data"),
    };
    write_idx_images(&paths.train_images, &train_imgs)?;
    write_idx_labels(&paths.train_labels, &train_labels)?;
    write_idx_images(&paths.test_images, &test_imgs)?;
    write_idx_labels(&paths.test_labels, &test_labels)?;

    let table = generate_mpg_table(mpg_rows, 6.min(mpg_rows / 40), seed.wrapping_add(2));
    let mut f = fs::File::create(&paths.auto_mpg).map_err(|e| Error::io(&paths.auto_mpg, e))?;
    f.write_all(table.as_bytes())
        .map_err(|e| Error::io(&paths.auto_mpg, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic_and_sparse() {
        let (a, la) = generate_digit_images(20, 7);
        let (b, lb) = generate_digit_images(20, 7);
        assert_eq!(la, lb);
        assert!(a.iter().zip(&b).all(|(x, y)| x[..] == y[..]));
        // stroke images keep most of the background at exactly zero
        for img in &a {
            let zeros = img.iter().filter(|&&v| v == 0).count();
            assert!(zeros > 450, "only {zeros} zero pixels");
            assert!(img.iter().any(|&v| v > 128), "no bright stroke pixels");
        }
    }

    #[test]
    fn idx_headers_match_the_format() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![[0u8; 784]; 3];
        let img_path = dir.path().join("imgs");
        write_idx_images(&img_path, &imgs).unwrap();
        let bytes = std::fs::read(&img_path).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 3]);
        assert_eq!(&bytes[8..12], &[0, 0, 0, 28]);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 28]);
        assert_eq!(bytes.len(), 16 + 3 * 784);

        let lbl_path = dir.path().join("labels");
        write_idx_labels(&lbl_path, &[1, 2, 3]).unwrap();
        let bytes = std::fs::read(&lbl_path).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(bytes.len(), 8 + 3);
    }

    #[test]
    fn mpg_table_shape() {
        let table = generate_mpg_table(50, 3, 11);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 50);
        assert_eq!(lines.iter().filter(|l| l.contains('?')).count(), 3);
        assert!(table == generate_mpg_table(50, 3, 11));
        for line in &lines {
            assert!(line.contains('"'), "car name missing in {line}");
        }
    }
}
