//! Model serialization: one JSON header line, then raw little-endian f64.
//!
//! The header records tensor names, shapes, and byte offsets into the
//! payload that follows the first newline. Values are written bit-for-bit,
//! so a save/load round trip reproduces training state exactly.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

const FORMAT_TAG: &str = "protoskill-ckpt-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the payload (everything after the header newline).
    offset: usize,
}

/// An ordered bag of named tensors plus free-form JSON metadata.
pub struct Checkpoint {
    pub meta: serde_json::Value,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: &Tensor) -> Result<()> {
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name}")));
        }
        self.tensors.push((name.to_string(), t.clone()));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but missing names are hard errors.
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn meta_str(&self, key: &str) -> Result<String> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key}")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key}")))
    }

    /// The full file image: one JSON header line, then raw little-endian
    /// f64 payload.
    pub fn save_to_vec(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload: Vec<u8> = Vec::new();
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(Error::NonFinite("checkpoint save"));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                rows: t.rows,
                cols: t.cols,
                offset: payload.len(),
            });
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT_TAG.to_string(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let mut out = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.push(b'\n');
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.save_to_vec()?;
        let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_from_slice(bytes: &[u8]) -> Result<Checkpoint> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("no header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "unknown format tag {:?}",
                header.format
            )));
        }
        let payload = &bytes[nl + 1..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n = e.rows * e.cols;
            let end = e.offset + n * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} runs past end of file",
                    e.name
                )));
            }
            let mut data = Vec::with_capacity(n);
            for chunk in payload[e.offset..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            tensors.push((e.name.clone(), Tensor::from_vec(e.rows, e.cols, data)?));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Checkpoint::load_from_slice(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = Tensor::randn(7, 3, 1.0, &mut rng);
        // Values chosen to stress the encoding: subnormals, negative zero,
        // huge magnitudes.
        let b = Tensor::from_vec(1, 4, vec![1e-308, -0.0, 1e300, -std::f64::consts::PI])
            .unwrap();

        let mut ck = Checkpoint::new(serde_json::json!({"kind": "test", "tau": 0.1}));
        ck.insert("enc.w", &a).unwrap();
        ck.insert("extremes", &b).unwrap();
        ck.save(&path).unwrap();

        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta_str("kind").unwrap(), "test");
        assert_eq!(back.meta_f64("tau").unwrap(), 0.1);
        let a2 = back.tensor("enc.w").unwrap();
        assert_eq!(a2.shape(), (7, 3));
        for (x, y) in a.data.iter().zip(a2.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let b2 = back.tensor("extremes").unwrap();
        for (x, y) in b.data.iter().zip(b2.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // Order preserved.
        let names: Vec<&str> = back.names().collect();
        assert_eq!(names, vec!["enc.w", "extremes"]);
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::randn(4, 4, 2.0, &mut rng);
        let mut ck = Checkpoint::new(serde_json::json!({"n": 1}));
        ck.insert("t", &t).unwrap();
        ck.save(&p1).unwrap();
        ck.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.insert("x", &Tensor::zeros(1, 1)).unwrap();
        assert!(ck.insert("x", &Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn nan_rejected_at_save() {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.insert("bad", &Tensor::scalar(f64::NAN)).unwrap();
        assert!(ck.save(&dir.path().join("x.ckpt")).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.insert("t", &Tensor::full(4, 4, 1.5)).unwrap();
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn garbage_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not json\n\x00\x01").unwrap();
        assert!(Checkpoint::load(&path).is_err());
        std::fs::write(&path, b"{\"format\":\"other\",\"meta\":null,\"tensors\":[]}\nx")
            .unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn missing_tensor_lookup_errors() {
        let ck = Checkpoint::new(serde_json::Value::Null);
        assert!(ck.tensor("absent").is_err());
    }
}
