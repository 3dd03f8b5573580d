//! IDX (MNIST-family) file reader.
//!
//! Images: magic `0x00000803`, then big-endian u32 count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` bytes.

use std::path::Path;

use super::{DataPool, FeatureLayout, LabeledExample};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn idx_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parsed image file: `(rows, cols, images scaled to [0, 1])`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let magic = read_u32(bytes, 0).ok_or_else(|| idx_err(path, "truncated header"))?;
    if magic != IMAGES_MAGIC {
        return Err(idx_err(path, format!("bad image magic {magic:#010x}")));
    }
    let header = |i: usize| {
        read_u32(bytes, 4 * i)
            .map(|v| v as usize)
            .ok_or_else(|| idx_err(path, "truncated header"))
    };
    let (count, rows, cols) = (header(1)?, header(2)?, header(3)?);
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(idx_err(path, "zero-sized images"));
    }
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(idx_err(
            path,
            format!("truncated: expected {} pixel bytes, found {}", count * pixels, body.len()),
        ));
    }
    let images = body
        .chunks_exact(pixels)
        .take(count)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0).ok_or_else(|| idx_err(path, "truncated header"))?;
    if magic != LABELS_MAGIC {
        return Err(idx_err(path, format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4).ok_or_else(|| idx_err(path, "truncated header"))? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(idx_err(
            path,
            format!("truncated: expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair into a pool; the class count is
/// `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DataPool> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (rows, cols, images) = parse_idx_images(images_path, &image_bytes)?;
    let labels = parse_idx_labels(labels_path, &label_bytes)?;
    if images.len() != labels.len() {
        return Err(idx_err(
            labels_path,
            format!("count mismatch: {} images vs {} labels", images.len(), labels.len()),
        ));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(2);
    let examples = images
        .into_iter()
        .zip(labels)
        .map(|(x, y)| LabeledExample::new(x, y))
        .collect();
    DataPool::new(
        examples,
        num_classes,
        rows * cols,
        FeatureLayout::Image { rows, cols },
    )
}
