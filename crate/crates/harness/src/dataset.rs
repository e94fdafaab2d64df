//! Dataset splits: disjoint train/test subsets of label-1 images plus an
//! out-of-distribution test set, selected as the first k indices under a
//! seeded shuffle.

use std::path::PathBuf;

use precond::linalg::Image;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};
use crate::idx::load_idx;

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub train_ones: usize,
    pub test_ones: usize,
    pub test_others: usize,
    pub seed: u64,
}

/// One split member: the image together with its index in the source file
/// (used to derive per-image noise seeds).
#[derive(Debug, Clone)]
pub struct Element {
    pub source_index: usize,
    pub image: Image,
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<Element>,
    pub test_ones: Vec<Element>,
    pub test_others: Vec<Element>,
}

/// Loads the IDX pair and splits it: `train_ones` and `test_ones` are disjoint
/// label-1 subsets, `test_others` is drawn from the remaining labels.
pub fn split(spec: &DatasetSpec) -> Result<SplitDataset> {
    let data = load_idx(&spec.images, &spec.labels)?;
    let mut ones: Vec<usize> = Vec::new();
    let mut others: Vec<usize> = Vec::new();
    for (i, (_, label)) in data.iter().enumerate() {
        if *label == 1 {
            ones.push(i);
        } else {
            others.push(i);
        }
    }
    if ones.len() < spec.train_ones + spec.test_ones {
        return Err(HarnessError::Dataset(format!(
            "need {} label-1 images, found {}",
            spec.train_ones + spec.test_ones,
            ones.len()
        )));
    }
    if others.len() < spec.test_others {
        return Err(HarnessError::Dataset(format!(
            "need {} non-1 images, found {}",
            spec.test_others,
            others.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ones.shuffle(&mut rng);
    others.shuffle(&mut rng);

    let take = |indices: &[usize]| -> Vec<Element> {
        indices
            .iter()
            .map(|&i| Element {
                source_index: i,
                image: data[i].0.clone(),
            })
            .collect()
    };
    Ok(SplitDataset {
        train: take(&ones[..spec.train_ones]),
        test_ones: take(&ones[spec.train_ones..spec.train_ones + spec.test_ones]),
        test_others: take(&others[..spec.test_others]),
    })
}

/// Area-weighted downsampling to a `target x target` image; used by small
/// smoke configurations.
pub fn downscale(image: &Image, target: usize) -> Image {
    let (m1, m2) = (image.height(), image.width());
    if (m1, m2) == (target, target) {
        return image.clone();
    }
    let mut out = vec![0.0_f64; target * target];
    let scale_i = m1 as f64 / target as f64;
    let scale_j = m2 as f64 / target as f64;
    for oi in 0..target {
        let lo_i = oi as f64 * scale_i;
        let hi_i = (oi + 1) as f64 * scale_i;
        for oj in 0..target {
            let lo_j = oj as f64 * scale_j;
            let hi_j = (oj + 1) as f64 * scale_j;
            let mut acc = 0.0;
            let mut area = 0.0;
            let mut i = lo_i.floor() as usize;
            while (i as f64) < hi_i && i < m1 {
                let wi = (hi_i.min((i + 1) as f64) - lo_i.max(i as f64)).max(0.0);
                let mut j = lo_j.floor() as usize;
                while (j as f64) < hi_j && j < m2 {
                    let wj = (hi_j.min((j + 1) as f64) - lo_j.max(j as f64)).max(0.0);
                    acc += wi * wj * image.get(i, j);
                    area += wi * wj;
                    j += 1;
                }
                i += 1;
            }
            out[oi * target + oj] = if area > 0.0 { acc / area } else { 0.0 };
        }
    }
    Image::from_pixels(target, target, out).expect("averages of finite pixels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::write_synthetic_idx;

    #[test]
    fn splits_are_disjoint_and_sized() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_synthetic_idx(dir.path(), 30, 20, 3).unwrap();
        for seed in [0_u64, 1, 99] {
            let spec = DatasetSpec {
                images: images.clone(),
                labels: labels.clone(),
                train_ones: 12,
                test_ones: 6,
                test_others: 10,
                seed,
            };
            let split = split(&spec).unwrap();
            assert_eq!(split.train.len(), 12);
            assert_eq!(split.test_ones.len(), 6);
            assert_eq!(split.test_others.len(), 10);
            let train: std::collections::HashSet<usize> =
                split.train.iter().map(|e| e.source_index).collect();
            let test: std::collections::HashSet<usize> =
                split.test_ones.iter().map(|e| e.source_index).collect();
            assert!(train.is_disjoint(&test));
            // Label-1 images occupy the first 30 source slots in the fixture.
            assert!(train.iter().all(|i| *i < 30));
            assert!(test.iter().all(|i| *i < 30));
            assert!(split
                .test_others
                .iter()
                .all(|e| e.source_index >= 30));
        }
    }

    #[test]
    fn insufficient_data_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_synthetic_idx(dir.path(), 5, 2, 3).unwrap();
        let spec = DatasetSpec {
            images,
            labels,
            train_ones: 5,
            test_ones: 1,
            test_others: 1,
            seed: 0,
        };
        assert!(matches!(
            split(&spec),
            Err(HarnessError::Dataset(_))
        ));
    }

    #[test]
    fn downscale_preserves_constant_images_and_mass() {
        let constant = Image::from_pixels(28, 28, vec![0.4; 784]).unwrap();
        let small = downscale(&constant, 8);
        assert_eq!((small.height(), small.width()), (8, 8));
        for v in small.array() {
            assert!((v - 0.4).abs() < 1e-12);
        }

        // Mean intensity is preserved by area weighting.
        let ramp = Image::from_pixels(28, 28, (0..784).map(|v| v as f64 / 784.0).collect())
            .unwrap();
        let small = downscale(&ramp, 7);
        let mean_big: f64 = ramp.array().iter().sum::<f64>() / 784.0;
        let mean_small: f64 = small.array().iter().sum::<f64>() / 49.0;
        assert!((mean_big - mean_small).abs() < 1e-12);
    }
}
