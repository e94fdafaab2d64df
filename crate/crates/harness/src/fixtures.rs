//! Synthetic MNIST-shaped IDX fixtures: digit-like 28x28 grayscale images
//! written in the IDX container format. Used by the test suites (the sandbox
//! ships no real dataset and downloading is out of scope) and usable for
//! smoke-testing the CLI.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

const SIDE: usize = 28;

fn put(canvas: &mut [u8], i: i64, j: i64, v: u8) {
    if (0..SIDE as i64).contains(&i) && (0..SIDE as i64).contains(&j) {
        let cell = &mut canvas[i as usize * SIDE + j as usize];
        *cell = (*cell).max(v);
    }
}

fn stroke_intensity(rng: &mut ChaCha8Rng) -> u8 {
    rng.random_range(180..=255)
}

/// A "one": a bright, slightly slanted vertical stroke.
fn draw_one(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut canvas = vec![0_u8; SIDE * SIDE];
    let center = rng.random_range(11..=16) as i64;
    let slant = rng.random_range(-2..=2) as f64 / 20.0;
    let width = rng.random_range(2..=3) as i64;
    let top = rng.random_range(3..=6) as i64;
    let bottom = rng.random_range(22..=25) as i64;
    for i in top..bottom {
        let drift = ((i - top) as f64 * slant).round() as i64;
        for w in 0..width {
            put(&mut canvas, i, center + drift + w, stroke_intensity(rng));
        }
    }
    // Small head serif, common in handwritten ones.
    if rng.random_bool(0.6) {
        for d in 1..=2 {
            put(&mut canvas, top + d, center - d, stroke_intensity(rng));
        }
    }
    canvas
}

/// Any other digit: simple bright shapes (ring, bar grid, diagonal, blob)
/// selected by label so the out-of-distribution set has varied structure.
fn draw_other(rng: &mut ChaCha8Rng, label: u8) -> Vec<u8> {
    let mut canvas = vec![0_u8; SIDE * SIDE];
    let cx = rng.random_range(12..=15) as f64;
    let cy = rng.random_range(12..=15) as f64;
    match label % 4 {
        0 => {
            // Ring (zero-like).
            let radius = rng.random_range(6..=9) as f64;
            for step in 0..200 {
                let angle = step as f64 * std::f64::consts::TAU / 200.0;
                let i = (cx + radius * angle.sin()).round() as i64;
                let j = (cy + radius * 0.8 * angle.cos()).round() as i64;
                put(&mut canvas, i, j, stroke_intensity(rng));
                put(&mut canvas, i, j + 1, stroke_intensity(rng));
            }
        }
        1 => {
            // Two horizontal bars (seven-like).
            let top = rng.random_range(5..=8) as i64;
            for j in 6..22 {
                put(&mut canvas, top, j, stroke_intensity(rng));
                put(&mut canvas, top + 1, j, stroke_intensity(rng));
            }
            for i in top..24 {
                let j = 21 - (i - top) / 2;
                put(&mut canvas, i, j, stroke_intensity(rng));
                put(&mut canvas, i, j - 1, stroke_intensity(rng));
            }
        }
        2 => {
            // Diagonal cross.
            for d in -9_i64..=9 {
                put(&mut canvas, cx as i64 + d, cy as i64 + d, stroke_intensity(rng));
                put(&mut canvas, cx as i64 + d, cy as i64 - d, stroke_intensity(rng));
            }
        }
        _ => {
            // Filled blob (eight-like mass).
            let r = rng.random_range(4..=6) as i64;
            for i in -r..=r {
                for j in -r..=r {
                    if i * i + j * j <= r * r {
                        put(&mut canvas, cx as i64 + i, cy as i64 + j, stroke_intensity(rng));
                    }
                }
            }
        }
    }
    canvas
}

/// Writes `ones` label-1 images followed by `others` images with labels
/// cycling over {2,...,9,0}, as an IDX image/label file pair. The header bytes
/// are assembled by hand so the files double as an independent oracle for the
/// reader.
pub fn write_synthetic_idx(
    dir: &Path,
    ones: usize,
    others: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let images_path = dir.join("synthetic-images.idx");
    let labels_path = dir.join("synthetic-labels.idx");
    let count = ones + others;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut image_bytes: Vec<u8> = Vec::with_capacity(16 + count * SIDE * SIDE);
    image_bytes.extend_from_slice(&2051_u32.to_be_bytes());
    image_bytes.extend_from_slice(&(count as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(SIDE as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(SIDE as u32).to_be_bytes());

    let mut label_bytes: Vec<u8> = Vec::with_capacity(8 + count);
    label_bytes.extend_from_slice(&2049_u32.to_be_bytes());
    label_bytes.extend_from_slice(&(count as u32).to_be_bytes());

    let other_labels = [2_u8, 3, 4, 5, 6, 7, 8, 9, 0];
    for k in 0..count {
        let (pixels, label) = if k < ones {
            (draw_one(&mut rng), 1)
        } else {
            let label = other_labels[(k - ones) % other_labels.len()];
            (draw_other(&mut rng, label), label)
        };
        image_bytes.extend_from_slice(&pixels);
        label_bytes.push(label);
    }

    std::fs::File::create(&images_path)?.write_all(&image_bytes)?;
    std::fs::File::create(&labels_path)?.write_all(&label_bytes)?;
    Ok((images_path, labels_path))
}
