//! IDX (MNIST-style) image and label files.
//!
//! Images: magic `0x00000803`, then big-endian `u32` count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, `u32`
//! count, then one byte per label.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated(what))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = bytes.get(..4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")));
    if found != Some(expected) {
        return Err(Error::BadMagic {
            expected: expected.to_be_bytes().to_vec(),
            found: bytes.iter().take(4).copied().collect(),
        });
    }
    Ok(())
}

/// Parses in-memory IDX image and label files into `[N, rows, cols, 1]`
/// features scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    check_magic(images, IDX_IMAGES_MAGIC)?;
    check_magic(labels, IDX_LABELS_MAGIC)?;
    let count = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "image rows")? as usize;
    let cols = be_u32(images, 12, "image cols")? as usize;
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if count != label_count {
        return Err(Error::CountMismatch(format!(
            "{count} images but {label_count} labels"
        )));
    }
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::EmptyData("IDX file holds no pixels".into()));
    }
    let pixels = images
        .get(16..16 + count * rows * cols)
        .ok_or(Error::Truncated("image pixels"))?;
    let label_bytes = labels.get(8..8 + count).ok_or(Error::Truncated("labels"))?;
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![count, rows, cols, 1], data)?,
        Some(labels),
        num_classes,
        Provenance::new("idx", "all", None),
    )
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path.as_ref())?;
    let labels = fs::read(labels_path.as_ref())?;
    let mut d = parse_idx(&images, &labels)?;
    d.provenance.name = images_path
        .as_ref()
        .file_stem()
        .map_or_else(|| "idx".into(), |s| s.to_string_lossy().into_owned());
    Ok(d)
}

/// Encodes images (row-major bytes, `count * rows * cols`) and labels as a
/// pair of IDX byte buffers.
pub fn write_idx(pixels: &[u8], labels: &[u8], rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    let count = labels.len();
    if pixels.len() != count * rows * cols {
        return Err(Error::CountMismatch(format!(
            "{} pixels for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [count, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + count);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(count as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    Ok((img, lab))
}
