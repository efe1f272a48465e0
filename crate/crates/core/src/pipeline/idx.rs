use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::{ImageShape, Tensor};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled images with pixels in `[0, 1]`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: ImageShape,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(shape: ImageShape, images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * shape.len() {
            return Err(Error::mismatch(format!(
                "{} pixel values for {} labels of {} pixels",
                images.len(),
                labels.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn image_tensor(&self, i: usize) -> Tensor<f32> {
        Tensor::new(self.shape.dims(), self.image(i).to_vec()).expect("shape checked on construction")
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Samples `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let end = end.min(self.len());
        let start = start.min(end);
        let n = self.shape.len();
        Dataset {
            shape: self.shape,
            images: self.images[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Images and labels at `idx`, in that order.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<u8>) {
        let mut images = Vec::with_capacity(idx.len() * self.shape.len());
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        (images, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (images, labels) = self.gather(idx);
        Dataset { shape: self.shape, images, labels }
    }
}

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::format("IDX header truncated"))
}

/// Decode an IDX image file (`u8` pixels, rank 3) into `[0, 1]` floats.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(ImageShape, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::format(format!("IDX image payload is {} bytes, header implies {expected}", body.len())));
    }
    let shape = ImageShape { channels: 1, height: rows, width: cols };
    Ok((shape, count, body.iter().map(|&p| p as f32 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(format!("IDX label payload is {} bytes, header implies {count}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (shape, count, images) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != count {
        return Err(Error::format(format!("{count} images but {} labels", labels.len())));
    }
    Dataset::new(shape, images, labels)
}

/// Encode a dataset back into IDX image and label files (pixels rounded to `u8`).
pub fn encode_idx(data: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + data.images.len());
    img.extend(IMAGES_MAGIC.to_be_bytes());
    img.extend((data.len() as u32).to_be_bytes());
    img.extend((data.shape.height as u32).to_be_bytes());
    img.extend((data.shape.width as u32).to_be_bytes());
    img.extend(data.images.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend(LABELS_MAGIC.to_be_bytes());
    lab.extend((data.len() as u32).to_be_bytes());
    lab.extend(&data.labels);
    (img, lab)
}
