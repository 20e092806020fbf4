//! Binary feature and label files.
//!
//! Feature file (all integers little-endian):
//!
//! ```text
//! "RMSHFEAT" | version u16 (= 1) | N u64 | D u64 | N·D f32, row-major
//! ```
//!
//! Label file:
//!
//! ```text
//! "RMSHLBL0" | N u64 | C u64 | N·C bytes, each 0 or 1
//! ```

use std::path::Path;

use super::{FeatureMatrix, LabelMatrix, Modality};
use crate::binio::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"RMSHFEAT";
pub const LABEL_MAGIC: &[u8; 8] = b"RMSHLBL0";
const FEATURE_VERSION: u16 = 1;

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(26 + features.data().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(features.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(features.d() as u64).to_le_bytes());
    for v in features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path.as_ref(), &buf)
}

/// Reads a feature file; the format carries no modality, so the caller names it.
pub fn read_features(path: impl AsRef<Path>, modality: Modality) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u16("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = r.dim("N")?;
    let d = r.dim("D")?;
    let count = n.checked_mul(d).ok_or_else(|| Error::DimensionMismatch {
        path: path.to_path_buf(),
        found: format!("{n}x{d}"),
        expected: "a feature matrix that fits in memory".into(),
    })?;
    let len = r.payload_len(count, 4, "floats")?;
    let payload = r.take(len, "feature payload")?;
    r.finish()?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(n, d, data, modality)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + labels.entries().len());
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&(labels.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(labels.c() as u64).to_le_bytes());
    buf.extend_from_slice(labels.entries());
    write_file(path.as_ref(), &buf)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(LABEL_MAGIC)?;
    let n = r.dim("N")?;
    let c = r.dim("C")?;
    let len = r.payload_len(n, c, "label bytes")?;
    let payload = r.take(len, "label payload")?;
    r.finish()?;
    LabelMatrix::new(n, c, payload.to_vec())
}
