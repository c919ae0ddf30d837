//! Little-endian binary encoding of named tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::real::{DType, Real};
use crate::tensor::{numel, Tensor};

/// Location of one tensor inside a blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// Byte offset into the blob.
    pub offset: usize,
}

impl BlobEntry {
    fn byte_len(&self) -> usize {
        numel(&self.shape) * self.dtype.size()
    }
}

/// Concatenates the tensors in native precision.
pub fn encode<'a, T: Real>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> (Vec<u8>, Vec<BlobEntry>) {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in tensors {
        entries.push(BlobEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: T::DTYPE,
            offset: blob.len(),
        });
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => blob.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
                DType::F64 => blob.extend_from_slice(&v.f64().to_le_bytes()),
            }
        }
    }
    (blob, entries)
}

/// Reads one entry, converting to `T` if the stored precision differs.
pub fn decode_entry<T: Real>(blob: &[u8], entry: &BlobEntry) -> Result<Tensor<T>> {
    let end = entry.offset.checked_add(entry.byte_len());
    let bytes = end
        .and_then(|end| blob.get(entry.offset..end))
        .ok_or_else(|| {
            TensorError::Serialization(format!(
                "tensor `{}` ({:?}, {}) extends past the end of a {}-byte blob",
                entry.name,
                entry.shape,
                entry.dtype.name(),
                blob.len()
            ))
        })?;
    let data: Vec<T> = match entry.dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    Tensor::new(&entry.shape, data)
}

pub fn decode<T: Real>(blob: &[u8], entries: &[BlobEntry]) -> Result<Vec<Tensor<T>>> {
    entries.iter().map(|e| decode_entry(blob, e)).collect()
}
