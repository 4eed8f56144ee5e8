//! Binary parameter file: `GOALCKPT`, u32 version, u64 header length, a JSON
//! header, then every parameter as little-endian f64 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Module, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GOALCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct CheckpointFile {
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    /// First 16 hex digits of the SHA-256 of the file bytes.
    pub id: String,
    tensors: Vec<(TensorEntry, Vec<f64>)>,
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint<R: Real>(config: &serde_json::Value, meta: &serde_json::Value, module: &impl Module<R>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut values = Vec::new();
    module.visit(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: [p.value.nrows(), p.value.ncols()],
        });
        values.extend(p.value.iter().map(|v| v.f64()));
    });
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes the module and returns the checkpoint id.
pub fn write_checkpoint<R: Real>(
    path: &Path,
    config: &serde_json::Value,
    meta: &serde_json::Value,
    module: &impl Module<R>,
) -> Result<String> {
    let bytes = encode_checkpoint(config, meta, module)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, &bytes)?;
    Ok(content_id(&bytes))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile> {
    CheckpointFile::decode(&std::fs::read(path)?)
}

impl CheckpointFile {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut rest = &bytes[20 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n = t.shape[0] * t.shape[1];
            if rest.len() < 8 * n {
                return Err(Error::Checkpoint(format!("truncated values for {}", t.name)));
            }
            let vals = rest[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[8 * n..];
            tensors.push((t, vals));
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after values"));
        }
        Ok(Self {
            config: header.config,
            meta: header.meta,
            id: content_id(bytes),
            tensors,
        })
    }

    /// Copies values into `module`; names and shapes must match exactly.
    pub fn load_into<R: Real>(&self, module: &mut impl Module<R>) -> Result<()> {
        let mut i = 0;
        let mut err = None;
        module.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(i) {
                Some((t, vals)) if t.name == p.name && t.shape == [p.value.nrows(), p.value.ncols()] => {
                    for (dst, &v) in p.value.iter_mut().zip(vals) {
                        *dst = R::of(v);
                    }
                }
                Some((t, _)) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {i}: file has {} {:?}, model expects {} {:?}",
                        t.name,
                        t.shape,
                        p.name,
                        p.value.dim()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {}", p.name))),
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != self.tensors.len() {
            return Err(Error::Checkpoint(format!("file has {} tensors, model {}", self.tensors.len(), i)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::Linear;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_values_and_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::<f64>::new("l", 3, 2, true, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = serde_json::json!({"hidden": 2});
        let id = write_checkpoint(&path, &cfg, &serde_json::Value::Null, &lin).unwrap();
        let file = read_checkpoint(&path).unwrap();
        assert_eq!(file.id, id);
        assert_eq!(file.config, cfg);
        let mut other = Linear::<f64>::zeroed("l", 3, 2, true);
        file.load_into(&mut other).unwrap();
        assert_eq!(other.w.value, lin.w.value);
        assert_eq!(other.b.unwrap().value, lin.b.unwrap().value);
    }

    #[test]
    fn shape_mismatch_and_corruption_are_rejected() {
        let lin = Linear::<f64>::zeroed("l", 3, 2, true);
        let bytes = encode_checkpoint(&serde_json::Value::Null, &serde_json::Value::Null, &lin).unwrap();
        let file = CheckpointFile::decode(&bytes).unwrap();
        let mut wrong = Linear::<f64>::zeroed("l", 2, 2, true);
        assert!(file.load_into(&mut wrong).is_err());
        assert!(CheckpointFile::decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(CheckpointFile::decode(b"NOTACKPT0000000000000").is_err());
    }
}
