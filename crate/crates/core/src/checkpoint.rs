//! Checkpoint files: a magic line, the byte length of a TOML header, the
//! header itself, then every tensor as raw little-endian `f32`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{ArchSpec, Weights};
use crate::nn::Tensor;

const MAGIC: &[u8] = b"PARKGEN-CHECKPOINT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the payload.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: ArchSpec,
    init_seed: u64,
    image_size: Option<usize>,
    payload_sha256: String,
    #[serde(default)]
    notes: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub weights: Weights,
    /// Side length the network was trained on, when known.
    pub image_size: Option<usize>,
    /// Free-form provenance (task, epochs, schedule, ...).
    pub notes: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(arch: ArchSpec, weights: Weights) -> Self {
        Self {
            arch,
            weights,
            image_size: None,
            notes: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.weights.scalar_count() * 4);
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, t) in &self.weights.params {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            arch: self.arch.clone(),
            init_seed: self.weights.seed,
            image_size: self.image_size,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            notes: self.notes.clone(),
            tensors,
        };
        let text = toml::to_string(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + text.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::data("not a checkpoint file (bad magic)"))?;
        if rest.len() < 8 {
            return Err(Error::data("checkpoint truncated before header"));
        }
        let header_len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < header_len {
            return Err(Error::data("checkpoint truncated inside header"));
        }
        let text = std::str::from_utf8(&rest[..header_len])
            .map_err(|_| Error::data("checkpoint header is not UTF-8"))?;
        let header: Header =
            toml::from_str(text).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let payload = &rest[header_len..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::Integrity("checkpoint payload checksum mismatch".into()));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut params = IndexMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let data = floats
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::data(format!("tensor `{}` runs past the payload", e.name)))?;
            params.insert(e.name, Tensor::new(&e.shape, data.to_vec())?);
        }
        let weights = Weights {
            params,
            seed: header.init_seed,
        };
        // binding checks names and shapes against the architecture
        crate::nets::Net::<f32>::frozen(&header.arch, &weights)?;
        Ok(Self {
            arch: header.arch,
            weights,
            image_size: header.image_size,
            notes: header.notes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
                _ => Error::io(path, e),
            })?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::build;

    fn sample() -> Checkpoint {
        let arch = ArchSpec::patch_disc(3).with_width(4);
        let mut c = Checkpoint::new(arch.clone(), build(&arch, 5).unwrap());
        c.image_size = Some(64);
        c.notes.insert("task".into(), "seg_extract".into());
        c
    }

    #[test]
    fn round_trip_bit_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        assert!(matches!(
            Checkpoint::load(Path::new("/nonexistent/x.ckpt")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn version_mismatch_reported() {
        let mut bytes = sample().to_bytes();
        let key = b"format_version = 1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        bytes[at + key.len() - 1] = b'7';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Version { found: 7, expected: 1 }), "{err}");
    }
}
