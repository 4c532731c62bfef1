//! IDX binary format (big-endian), as distributed with MNIST.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::Dataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Class count produced by the loader; labels above this are rejected.
pub const CLASS_COUNT: usize = 10;

struct Reader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(Reader {
            path,
            bytes: fs::read(path)?,
            pos: 0,
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(Error::IdxTruncated {
                path: self.path.to_path_buf(),
                expected: end,
                found: self.bytes.len(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().expect("4 bytes"));
        self.pos = end;
        Ok(v)
    }

    fn payload(&self, expected: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if available < expected {
            return Err(Error::IdxTruncated {
                path: self.path.to_path_buf(),
                expected: self.pos + expected,
                found: self.bytes.len(),
            });
        }
        Ok(&self.bytes[self.pos..self.pos + expected])
    }

    fn expect_magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32()?;
        if got != expected {
            return Err(Error::IdxBadMagic {
                path: self.path.to_path_buf(),
                expected,
                got,
            });
        }
        Ok(())
    }
}

/// Parse an image/label file pair into a dataset.
///
/// Pixels are scaled by `1/255`; labels become one-hot rows over
/// [`CLASS_COUNT`] classes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = Reader::open(images_path)?;
    images.expect_magic(IMAGES_MAGIC)?;
    let count = images.u32()? as usize;
    let rows = images.u32()? as usize;
    let cols = images.u32()? as usize;
    let dim = rows * cols;
    let pixels = images.payload(count * dim)?;

    let mut labels = Reader::open(labels_path)?;
    labels.expect_magic(LABELS_MAGIC)?;
    let label_count = labels.u32()? as usize;
    if label_count != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let label_bytes = labels.payload(count)?;

    let mut features = Matrix::zeros(count, dim);
    for (i, chunk) in pixels.chunks_exact(dim.max(1)).take(count).enumerate() {
        for (v, &byte) in features.row_mut(i).iter_mut().zip(chunk) {
            *v = byte as f64 / 255.0;
        }
    }
    let mut label_matrix = Matrix::zeros(count, CLASS_COUNT);
    for (i, &byte) in label_bytes.iter().enumerate() {
        if byte as usize >= CLASS_COUNT {
            return Err(Error::IdxBadLabel {
                value: byte,
                class_count: CLASS_COUNT,
            });
        }
        label_matrix.set(i, byte as usize, 1.0);
    }
    Dataset::new(features, label_matrix, CLASS_COUNT)
}

/// Write a dataset as an IDX image/label file pair.
///
/// `rows * cols` must equal the feature dimension. Pixels are quantized to
/// bytes, so a read-back reproduces the dataset exactly iff every feature is
/// a multiple of `1/255` (true for anything loaded via [`load_idx`]).
pub fn write_idx(
    dataset: &Dataset,
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != dataset.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{rows}x{cols} image does not match feature dim {}",
            dataset.feature_dim()
        )));
    }
    let n = dataset.len();
    let mut image_bytes = Vec::with_capacity(16 + n * dataset.feature_dim());
    image_bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for i in 0..n {
        for &v in dataset.features().row(i) {
            image_bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(images_path, image_bytes)?;

    let mut label_bytes = Vec::with_capacity(8 + n);
    label_bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        label_bytes.push(dataset.class_of(i) as u8);
    }
    fs::write(labels_path, label_bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    fn quantized(ds: Dataset) -> Dataset {
        // Snap features onto the byte grid so an IDX round trip is exact.
        let mut features = ds.features().clone();
        for r in 0..features.rows() {
            for v in features.row_mut(r) {
                *v = (*v * 255.0).round() / 255.0;
            }
        }
        Dataset::new(features, ds.labels().clone(), ds.class_count()).unwrap()
    }

    #[test]
    fn round_trip_reproduces_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = quantized(make_blobs(4, 3, 9, 0.2, 17).unwrap());
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lbl, 3, 3).unwrap();
        let back = load_idx(&img, &lbl).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.features(), ds.features());
        for i in 0..ds.len() {
            assert_eq!(back.class_of(i), ds.class_of(i));
        }
    }

    #[test]
    fn four_image_fixture_parses() {
        let dir = tempfile::tempdir().unwrap();
        let ds = quantized(make_blobs(2, 2, 784, 0.1, 3).unwrap());
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lbl, 28, 28).unwrap();
        let back = load_idx(&img, &lbl).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.feature_dim(), 784);
        assert_eq!(back.class_count(), CLASS_COUNT);
    }

    #[test]
    fn wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ds = quantized(make_blobs(2, 2, 4, 0.1, 3).unwrap());
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lbl, 2, 2).unwrap();
        // Labels file handed where images are expected -> image magic check fails.
        match load_idx(&lbl, &img) {
            Err(Error::IdxBadMagic { expected, got, .. }) => {
                assert_eq!(expected, IMAGES_MAGIC);
                assert_eq!(got, LABELS_MAGIC);
            }
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ds = quantized(make_blobs(2, 2, 4, 0.1, 3).unwrap());
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        write_idx(&ds, &img, &lbl, 2, 2).unwrap();
        let mut bytes = std::fs::read(&img).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&img, bytes).unwrap();
        assert!(matches!(
            load_idx(&img, &lbl),
            Err(Error::IdxTruncated { .. })
        ));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let a = quantized(make_blobs(2, 2, 4, 0.1, 3).unwrap());
        let b = quantized(make_blobs(2, 3, 4, 0.1, 3).unwrap());
        let img = dir.path().join("images.idx");
        let lbl_a = dir.path().join("labels_a.idx");
        let img_b = dir.path().join("images_b.idx");
        let lbl = dir.path().join("labels.idx");
        write_idx(&a, &img, &lbl_a, 2, 2).unwrap();
        write_idx(&b, &img_b, &lbl, 2, 2).unwrap();
        assert!(matches!(
            load_idx(&img, &lbl),
            Err(Error::IdxCountMismatch { images: 4, labels: 6 })
        ));
    }
}
