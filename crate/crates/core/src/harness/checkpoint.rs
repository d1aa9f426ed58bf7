//! Versioned checkpoint container: a JSON header followed by raw
//! little-endian arrays named in the header.
//!
//! ```text
//! "EMAXCKPT" | u32 version | u64 header length | header JSON | array bytes...
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"EMAXCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {0} is not supported (expected {VERSION})")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint is missing array `{0}`")]
    MissingArray(String),
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Array {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Array {
    fn len(&self) -> usize {
        match self {
            Array::F64(v) => v.len(),
            Array::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    U64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: Dtype,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<S> {
    kind: String,
    state: S,
    arrays: Vec<Entry>,
}

/// Named arrays in write order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Arrays(Vec<(String, Array)>);

impl Arrays {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f64(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.0.push((name.into(), Array::F64(data)));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, data: Vec<u64>) {
        self.0.push((name.into(), Array::U64(data)));
    }
}

/// Arrays read back from a file, taken out by name.
#[derive(Debug, Default)]
pub struct LoadedArrays(BTreeMap<String, Array>);

impl LoadedArrays {
    pub fn take_f64(&mut self, name: &str) -> Result<Vec<f64>, CheckpointError> {
        match self.0.remove(name) {
            Some(Array::F64(v)) => Ok(v),
            Some(Array::U64(_)) => Err(CheckpointError::Mismatch(format!("array `{name}` is not f64"))),
            None => Err(CheckpointError::MissingArray(name.to_string())),
        }
    }

    pub fn take_u64(&mut self, name: &str) -> Result<Vec<u64>, CheckpointError> {
        match self.0.remove(name) {
            Some(Array::U64(v)) => Ok(v),
            Some(Array::F64(_)) => Err(CheckpointError::Mismatch(format!("array `{name}` is not u64"))),
            None => Err(CheckpointError::MissingArray(name.to_string())),
        }
    }
}

pub fn write<S: Serialize>(path: &Path, kind: &str, state: &S, arrays: &Arrays) -> Result<(), CheckpointError> {
    let header = Header {
        kind: kind.to_string(),
        state,
        arrays: arrays
            .0
            .iter()
            .map(|(name, a)| Entry {
                name: name.clone(),
                dtype: match a {
                    Array::F64(_) => Dtype::F64,
                    Array::U64(_) => Dtype::U64,
                },
                len: a.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, a) in &arrays.0 {
        match a {
            Array::F64(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))?,
            Array::U64(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint, returning its kind, header state and arrays.
pub fn read<S: DeserializeOwned>(path: &Path) -> Result<(String, S, LoadedArrays), CheckpointError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header<S> = serde_json::from_slice(&json)?;
    let mut arrays = BTreeMap::new();
    let mut buf = [0u8; 8];
    for e in header.arrays {
        let a = match e.dtype {
            Dtype::F64 => Array::F64(
                (0..e.len)
                    .map(|_| input.read_exact(&mut buf).map(|_| f64::from_le_bytes(buf)))
                    .collect::<Result<_, _>>()?,
            ),
            Dtype::U64 => Array::U64(
                (0..e.len)
                    .map(|_| input.read_exact(&mut buf).map(|_| u64::from_le_bytes(buf)))
                    .collect::<Result<_, _>>()?,
            ),
        };
        arrays.insert(e.name, a);
    }
    Ok((header.kind, header.state, LoadedArrays(arrays)))
}

/// Peeks at the kind of a checkpoint without loading its arrays.
pub fn kind(path: &Path) -> Result<String, CheckpointError> {
    let (kind, _, _): (String, serde_json::Value, _) = read(path)?;
    Ok(kind)
}
