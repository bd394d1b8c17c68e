//! Named-array container shared by datasets, checkpoints and label files.
//!
//! Files use the safetensors layout (little-endian arrays behind a JSON
//! header). The header carries a single `manifest` metadata string so the
//! output is byte-for-byte reproducible.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, View};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    I32(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedArray { name: name.into(), shape, data: ArrayData::F64(data) }
    }

    pub fn i32(name: impl Into<String>, shape: Vec<usize>, data: Vec<i32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedArray { name: name.into(), shape, data: ArrayData::I32(data) }
    }
}

struct Bytes<'a> {
    dtype: Dtype,
    shape: &'a [usize],
    bytes: Vec<u8>,
}

impl View for &Bytes<'_> {
    fn dtype(&self) -> Dtype {
        self.dtype
    }
    fn shape(&self) -> &[usize] {
        self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }
    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

/// Writes `arrays` plus one manifest string.
pub fn write(path: &Path, arrays: &[NamedArray], manifest: &[(&str, String)]) -> Result<()> {
    if manifest.len() > 1 {
        return Err(Error::Format("at most one metadata entry is supported".into()));
    }
    let encoded: Vec<(String, Bytes<'_>)> = arrays
        .iter()
        .map(|a| {
            let (dtype, bytes) = match &a.data {
                ArrayData::F64(v) => (Dtype::F64, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
                ArrayData::I32(v) => (Dtype::I32, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
            };
            (a.name.clone(), Bytes { dtype, shape: &a.shape, bytes })
        })
        .collect();
    let meta: Option<HashMap<String, String>> =
        (!manifest.is_empty()).then(|| manifest.iter().map(|(k, v)| (k.to_string(), v.clone())).collect());
    let buf = safetensors::serialize(encoded.iter().map(|(n, b)| (n.as_str(), b)), &meta)
        .map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads every array and the metadata map.
pub fn read(path: &Path) -> Result<(HashMap<String, NamedArray>, HashMap<String, String>)> {
    let buf = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| Error::Format(e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(&buf).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        let shape = view.shape().to_vec();
        let raw = view.data();
        let data = match view.dtype() {
            Dtype::F64 => ArrayData::F64(
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            ),
            Dtype::I32 => ArrayData::I32(
                raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            ),
            other => return Err(Error::Format(format!("unsupported dtype {other:?} for {name}"))),
        };
        out.insert(name.clone(), NamedArray { name, shape, data });
    }
    Ok((out, meta))
}

/// Borrows a float array by name, checking its shape.
pub fn take_f64<'a>(arrays: &'a HashMap<String, NamedArray>, name: &str, shape: &[usize]) -> Result<&'a [f64]> {
    let a = arrays.get(name).ok_or_else(|| Error::Format(format!("missing array {name}")))?;
    if a.shape != shape {
        return Err(Error::Format(format!("array {name} has shape {:?}, expected {:?}", a.shape, shape)));
    }
    match &a.data {
        ArrayData::F64(v) => Ok(v),
        ArrayData::I32(_) => Err(Error::Format(format!("array {name} is not f64"))),
    }
}

pub fn take_i32<'a>(arrays: &'a HashMap<String, NamedArray>, name: &str, shape: &[usize]) -> Result<&'a [i32]> {
    let a = arrays.get(name).ok_or_else(|| Error::Format(format!("missing array {name}")))?;
    if a.shape != shape {
        return Err(Error::Format(format!("array {name} has shape {:?}, expected {:?}", a.shape, shape)));
    }
    match &a.data {
        ArrayData::I32(v) => Ok(v),
        ArrayData::F64(_) => Err(Error::Format(format!("array {name} is not i32"))),
    }
}
