//! IDX files (the MNIST distribution format): a big-endian `u32` magic, one
//! big-endian `u32` per dimension, then raw `u8` values.

use std::path::Path;

use super::{Dataset, Inputs};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, needed: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < needed {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos,
                needed,
                len: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + needed];
        self.pos += needed;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]`; samples
/// have shape `[1, rows, cols]`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img_bytes = read(images)?;
    let mut r = Reader {
        path: images,
        bytes: &img_bytes,
        pos: 0,
    };
    r.magic(IMAGES_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(n * rows * cols)?;
    let values: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();

    let lab_bytes = read(labels)?;
    let mut r = Reader {
        path: labels,
        bytes: &lab_bytes,
        pos: 0,
    };
    r.magic(LABELS_MAGIC)?;
    let m = r.u32()? as usize;
    if m != n {
        return Err(Error::Format(format!(
            "{} holds {n} images but {} holds {m} labels",
            images.display(),
            labels.display()
        )));
    }
    let ys: Vec<usize> = r.take(m)?.iter().map(|&y| usize::from(y)).collect();
    let classes = ys.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(
        Inputs::Dense {
            sample_shape: vec![1, rows, cols],
            values,
        },
        ys,
        classes,
        format!("idx:{}", images.display()),
    )
}

pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
