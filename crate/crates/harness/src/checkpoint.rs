//! Checkpoint file format: a small binary container for named f64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"GSPT"
//! version  u32
//! arch     u64   architecture fingerprint of the module that wrote it
//! count    u32   number of tensor records
//! record*  name_len u32, name utf-8,
//!          dtype u8 (0 = f64),
//!          ndim u32, dim u32 × ndim,
//!          flags u8 (bit 0 = frozen),
//!          data f64 × prod(dims)
//! ```
//!
//! Records are sorted by name, so saving the same parameters always produces
//! the same bytes. Readers reject truncated files, bad magic, unknown dtypes,
//! trailing garbage, version mismatches, fingerprint mismatches, and shape
//! mismatches, each with its own error.

use std::path::Path;

use glyphspot_core::nn::ParameterStore;

use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 4] = b"GSPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f64>,
}

/// An in-memory checkpoint: header fields plus tensor records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    /// Captures every parameter whose name starts with one of `prefixes`
    /// (all parameters if `prefixes` is empty), in sorted-name order.
    pub fn from_store(store: &ParameterStore, prefixes: &[&str], fingerprint: u64) -> Self {
        let mut tensors = Vec::new();
        for name in store.sorted_names() {
            if !prefixes.is_empty() && !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let id = store.id(name).expect("sorted_names yields registered names");
            let t = store.value(id);
            tensors.push(TensorRecord {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                frozen: store.is_frozen(id),
                data: t.data().to_vec(),
            });
        }
        Checkpoint { version: FORMAT_VERSION, fingerprint, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(u8::from(t.frozen));
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        let corrupt = |detail: String| HarnessError::CorruptHeader {
            path: path.to_path_buf(),
            detail,
        };
        let mut cur = Cursor { bytes: &bytes, pos: 0 };

        let magic = cur.take(4).map_err(&corrupt)?;
        if magic != MAGIC {
            return Err(corrupt(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = cur.u32().map_err(&corrupt)?;
        if version != FORMAT_VERSION {
            return Err(HarnessError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let fingerprint = cur.u64().map_err(&corrupt)?;
        let count = cur.u32().map_err(&corrupt)? as usize;

        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let at = |d: String| corrupt(format!("record {i}: {d}"));
            let name_len = cur.u32().map_err(&at)? as usize;
            let name_bytes = cur.take(name_len).map_err(&at)?;
            let name = core::str::from_utf8(name_bytes)
                .map_err(|_| at(String::from("name is not valid utf-8")))?
                .to_string();
            let dtype = cur.u8().map_err(&at)?;
            if dtype != DTYPE_F64 {
                return Err(at(format!("unknown dtype tag {dtype}")));
            }
            let ndim = cur.u32().map_err(&at)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut numel = 1usize;
            for _ in 0..ndim {
                let d = cur.u32().map_err(&at)? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| at(String::from("dimension product overflows")))?;
                shape.push(d);
            }
            let flags = cur.u8().map_err(&at)?;
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(cur.f64().map_err(&at)?);
            }
            tensors.push(TensorRecord { name, shape, frozen: flags & 1 != 0, data });
        }
        if cur.pos != bytes.len() {
            return Err(corrupt(format!(
                "{} trailing bytes after the last record",
                bytes.len() - cur.pos
            )));
        }
        Ok(Checkpoint { version, fingerprint, tensors })
    }

    /// Copies every record into the store by name, restoring values and
    /// frozen flags. The store may hold extra parameters (a full system
    /// absorbing a single module's checkpoint); records without a matching
    /// parameter or with a different shape are errors. Returns the number of
    /// tensors loaded.
    pub fn load_into(&self, store: &mut ParameterStore, path: &Path) -> Result<usize> {
        // Validate everything first so a failed load cannot leave the store
        // half-written.
        for t in &self.tensors {
            let id = store.id(&t.name).map_err(|_| HarnessError::MissingTensor {
                path: path.to_path_buf(),
                name: t.name.clone(),
            })?;
            if store.value(id).shape() != t.shape.as_slice() {
                return Err(HarnessError::ShapeMismatch {
                    path: path.to_path_buf(),
                    name: t.name.clone(),
                    found: t.shape.clone(),
                    expected: store.value(id).shape().to_vec(),
                });
            }
        }
        for t in &self.tensors {
            let id = store.id(&t.name)?;
            store.set_value(id, &t.data)?;
            store.set_frozen(id, t.frozen);
        }
        Ok(self.tensors.len())
    }
}

/// Saves the parameters under `prefixes` (all when empty) with the module's
/// architecture fingerprint.
pub fn save_module(
    path: &Path,
    store: &ParameterStore,
    prefixes: &[&str],
    fingerprint: u64,
) -> Result<()> {
    Checkpoint::from_store(store, prefixes, fingerprint).write(path)
}

/// Loads a checkpoint into the store after checking its fingerprint. Returns
/// the number of tensors loaded.
pub fn load_module(
    path: &Path,
    store: &mut ParameterStore,
    expected_fingerprint: u64,
) -> Result<usize> {
    let ckpt = Checkpoint::read(path)?;
    if ckpt.fingerprint != expected_fingerprint {
        return Err(HarnessError::ArchitectureMismatch {
            path: path.to_path_buf(),
            found: ckpt.fingerprint,
            expected: expected_fingerprint,
        });
    }
    ckpt.load_into(store, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> core::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> core::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> core::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> core::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> core::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
