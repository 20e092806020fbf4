//! Model checkpoint file.
//!
//! ```text
//! "RMSHMODL" | version u16 (= 1)
//! | d_image u64 | d_text u64 | hidden u64 | K u64 | C u64 | param count u64
//! | params as f32, little-endian, in HashModel::tensors() order
//! ```

use std::path::Path;

use super::{HashModel, ModelDims};
use crate::binio::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RMSHMODL";
const VERSION: u16 = 1;

pub fn save_checkpoint(path: impl AsRef<Path>, model: &HashModel) -> Result<()> {
    let d = model.dims();
    let mut buf = Vec::with_capacity(58 + model.num_params() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.d_image, d.d_text, d.hidden, d.k, d.c, model.num_params()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &p in model.params() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    write_file(path.as_ref(), &buf)
}

/// Loads a checkpoint, optionally checking its dimensions against `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<ModelDims>) -> Result<HashModel> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dims = ModelDims {
        d_image: r.dim("d_image")?,
        d_text: r.dim("d_text")?,
        hidden: r.dim("hidden")?,
        k: r.dim("K")?,
        c: r.dim("C")?,
    };
    if let Some(exp) = expected {
        if exp != dims {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                found: format!("{dims:?}"),
                expected: format!("{exp:?}"),
            });
        }
    }
    let count = r.dim("param count")?;
    let len = r.payload_len(count, 4, "parameters")?;
    let payload = r.take(len, "parameters")?;
    r.finish()?;
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    HashModel::from_params(dims, params).map_err(|e| Error::DimensionMismatch {
        path: r.path().to_path_buf(),
        found: format!("{count} parameters"),
        expected: e.to_string(),
    })
}
