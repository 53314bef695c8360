//! IDX (MNIST) reader.

use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdxOptions {
    /// 2x2 average pooling (28x28 becomes 14x14).
    pub downsample_14: bool,
    /// Keep only the first `n` examples.
    pub subset_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "images: truncated payload, {} of {need} bytes",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(Error::Format(format!("images: {} trailing bytes", payload.len() - need)));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format(format!(
            "labels: truncated payload, {} of {count} bytes",
            payload.len()
        )));
    }
    if payload.len() > count {
        return Err(Error::Format(format!("labels: {} trailing bytes", payload.len() - count)));
    }
    Ok(payload.to_vec())
}

/// Builds a dataset from parsed IDX buffers.
pub fn idx_dataset(images: &IdxImages, labels: &[u8], opts: IdxOptions, split: Split) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::Format(format!(
            "count mismatch: {} images, {} labels",
            images.count,
            labels.len()
        )));
    }
    if images.rows != images.cols {
        return Err(Error::Format("only square images are supported".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= IDX_CLASSES) {
        return Err(Error::Format(format!("label {bad} out of range")));
    }
    let n = opts.subset_n.map_or(images.count, |s| s.min(images.count));
    let side = images.rows;
    let plane = side * side;
    let (out_side, data) = if opts.downsample_14 {
        if side % 2 != 0 {
            return Err(Error::input("downsampling needs an even image side"));
        }
        let h = side / 2;
        let mut data = Vec::with_capacity(n * h * h);
        for img in images.pixels[..n * plane].chunks(plane) {
            for r in 0..h {
                for c in 0..h {
                    let s = img[2 * r * side + 2 * c] as u32
                        + img[2 * r * side + 2 * c + 1] as u32
                        + img[(2 * r + 1) * side + 2 * c] as u32
                        + img[(2 * r + 1) * side + 2 * c + 1] as u32;
                    data.push(s as f64 / (4.0 * 255.0));
                }
            }
        }
        (h, data)
    } else {
        (side, images.pixels[..n * plane].iter().map(|&p| p as f64 / 255.0).collect())
    };
    let x = Tensor::from_vec(&[n, out_side * out_side], data)?;
    let y = labels[..n].iter().map(|&l| l as usize).collect();
    Dataset::new(x, y, IDX_CLASSES, split, Some(out_side))
}

pub fn load_idx(images_path: &Path, labels_path: &Path, opts: IdxOptions, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    idx_dataset(&images, &labels, opts, split)
}
