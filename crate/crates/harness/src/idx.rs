//! Reader for the IDX image/label container (big-endian headers, magic 2051
//! for images and 2049 for labels), with pixels mapped to `[0, 1]`.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use precond::linalg::Image;

use crate::error::{HarnessError, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn read_u32(r: &mut impl Read, what: &str, path: &Path) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|_| {
        HarnessError::Parse(format!(
            "{}: truncated header, missing {what}",
            path.display()
        ))
    })
}

/// Loads an IDX image file and its label file; pixel bytes are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<(Image, u8)>> {
    let mut img_file = std::fs::File::open(images_path)?;
    let magic = read_u32(&mut img_file, "image magic number", images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(HarnessError::Parse(format!(
            "{}: bad image magic {magic}, expected {IMAGE_MAGIC}",
            images_path.display()
        )));
    }
    let count = read_u32(&mut img_file, "image count", images_path)? as usize;
    let rows = read_u32(&mut img_file, "row count", images_path)? as usize;
    let cols = read_u32(&mut img_file, "column count", images_path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(HarnessError::Parse(format!(
            "{}: image dimensions {rows}x{cols} are not usable",
            images_path.display()
        )));
    }
    let mut pixels = vec![0_u8; count * rows * cols];
    img_file.read_exact(&mut pixels).map_err(|_| {
        HarnessError::Parse(format!(
            "{}: truncated pixel data, expected {} bytes",
            images_path.display(),
            count * rows * cols
        ))
    })?;

    let mut label_file = std::fs::File::open(labels_path)?;
    let magic = read_u32(&mut label_file, "label magic number", labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(HarnessError::Parse(format!(
            "{}: bad label magic {magic}, expected {LABEL_MAGIC}",
            labels_path.display()
        )));
    }
    let label_count = read_u32(&mut label_file, "label count", labels_path)? as usize;
    if label_count != count {
        return Err(HarnessError::Parse(format!(
            "label count {label_count} does not match image count {count}"
        )));
    }
    let mut labels = vec![0_u8; count];
    label_file.read_exact(&mut labels).map_err(|_| {
        HarnessError::Parse(format!(
            "{}: truncated label data, expected {count} bytes",
            labels_path.display()
        ))
    })?;

    let mut out = Vec::with_capacity(count);
    for (i, label) in labels.into_iter().enumerate() {
        let bytes = &pixels[i * rows * cols..(i + 1) * rows * cols];
        let values: Vec<f64> = bytes.iter().map(|b| f64::from(*b) / 255.0).collect();
        out.push((
            Image::from_pixels(rows, cols, values).map_err(HarnessError::Core)?,
            label,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    /// Hand-assembled two-image fixture, independent of any writer code.
    fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("fixture-images.idx");
        let labels = dir.join("fixture-labels.idx");

        let mut img_bytes: Vec<u8> = Vec::new();
        img_bytes.extend_from_slice(&2051_u32.to_be_bytes());
        img_bytes.extend_from_slice(&2_u32.to_be_bytes());
        img_bytes.extend_from_slice(&2_u32.to_be_bytes());
        img_bytes.extend_from_slice(&3_u32.to_be_bytes());
        img_bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255]); // image 0
        img_bytes.extend_from_slice(&[0, 0, 0, 0, 0, 0]); // image 1: all zero
        std::fs::File::create(&images)
            .unwrap()
            .write_all(&img_bytes)
            .unwrap();

        let mut label_bytes: Vec<u8> = Vec::new();
        label_bytes.extend_from_slice(&2049_u32.to_be_bytes());
        label_bytes.extend_from_slice(&2_u32.to_be_bytes());
        label_bytes.extend_from_slice(&[7, 1]);
        std::fs::File::create(&labels)
            .unwrap()
            .write_all(&label_bytes)
            .unwrap();
        (images, labels)
    }

    #[test]
    fn reads_fixture_images_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_fixture(dir.path());
        let data = load_idx(&images, &labels).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].1, 7);
        assert_eq!(data[1].1, 1);
        assert_eq!(data[0].0.get(0, 1), 51.0 / 255.0);
        assert_eq!(data[0].0.get(1, 2), 1.0);
        assert!(data[1].0.array().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn truncated_header_names_the_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("short.idx");
        std::fs::write(&images, 2051_u32.to_be_bytes()).unwrap();
        let labels = dir.path().join("labels.idx");
        std::fs::write(&labels, []).unwrap();
        let err = load_idx(&images, &labels).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("image count"), "{msg}");
    }

    #[test]
    fn bad_magic_and_count_mismatch_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_fixture(dir.path());

        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 9;
        let corrupt = dir.path().join("corrupt.idx");
        std::fs::write(&corrupt, &bytes).unwrap();
        assert!(load_idx(&corrupt, &labels)
            .unwrap_err()
            .to_string()
            .contains("bad image magic"));

        let mut label_bytes: Vec<u8> = Vec::new();
        label_bytes.extend_from_slice(&2049_u32.to_be_bytes());
        label_bytes.extend_from_slice(&3_u32.to_be_bytes());
        label_bytes.extend_from_slice(&[1, 2, 3]);
        let mismatched = dir.path().join("mismatch.idx");
        std::fs::write(&mismatched, &label_bytes).unwrap();
        assert!(load_idx(&images, &mismatched)
            .unwrap_err()
            .to_string()
            .contains("does not match"));
    }
}
