//! Shared layout of the model and stats containers.
//!
//! ```text
//! magic (8 bytes) | header length (u64 LE) | JSON header, space padded | payload
//! ```
//!
//! The payload starts on a 64-byte boundary and every tensor within it is
//! 64-byte aligned. Tensor offsets are relative to the payload start.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LordError, Result};

pub const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::U64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
    pub role: String,
    #[serde(default)]
    pub factored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A tensor to be written: table metadata (offset and size are filled in)
/// plus its little-endian bytes.
pub struct Pending {
    pub entry: TensorEntry,
    pub bytes: Vec<u8>,
}

impl Pending {
    pub fn new(name: String, dtype: Dtype, shape: Vec<usize>, role: &str, bytes: Vec<u8>) -> Self {
        debug_assert_eq!(bytes.len(), dtype.size() * shape.iter().product::<usize>());
        Pending {
            entry: TensorEntry {
                name,
                dtype,
                shape,
                offset: 0,
                nbytes: bytes.len() as u64,
                role: role.to_string(),
                factored: false,
                group: None,
            },
            bytes,
        }
    }
}

pub fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn f64_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Assign offsets and serialize. `make_header` receives the finished tensor
/// table.
pub fn write<H: Serialize>(
    magic: &[u8; 8],
    tensors: Vec<Pending>,
    make_header: impl FnOnce(Vec<TensorEntry>) -> H,
) -> Vec<u8> {
    let mut offset = 0usize;
    let mut table = Vec::with_capacity(tensors.len());
    for t in &tensors {
        let mut e = t.entry.clone();
        e.offset = offset as u64;
        offset = align_up(offset + t.bytes.len());
        table.push(e);
    }
    let mut header = serde_json::to_string(&make_header(table.clone())).expect("header serializes");
    let header_len = align_up(16 + header.len()) - 16;
    header.extend(std::iter::repeat_n(' ', header_len - header.len()));

    let mut out = Vec::with_capacity(16 + header_len + offset);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header_len as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let payload_start = out.len();
    for (t, e) in tensors.iter().zip(&table) {
        out.resize(payload_start + e.offset as usize, 0);
        out.extend_from_slice(&t.bytes);
    }
    out
}

/// A parsed container borrowing the file bytes.
pub struct Parsed<'a, H> {
    pub header: H,
    payload: &'a [u8],
}

/// Header fields every container must carry.
pub trait ContainerHeader {
    fn format_version(&self) -> u32;
    fn tensors(&self) -> &[TensorEntry];
}

pub fn read<'a, H: DeserializeOwned + ContainerHeader>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<Parsed<'a, H>> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(LordError::Format(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| LordError::Format("file ends inside the header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| LordError::Format(format!("header length {header_len} exceeds the file size")))?
        as usize;
    let text = std::str::from_utf8(&bytes[16..header_end])
        .map_err(|e| LordError::Format(format!("header is not UTF-8: {e}")))?;

    // Check the version before the full schema so that future layouts
    // report a version error rather than a parse error.
    #[derive(Deserialize)]
    struct Versioned {
        format_version: u32,
    }
    let v: Versioned =
        serde_json::from_str(text).map_err(|e| LordError::Format(format!("invalid header JSON: {e}")))?;
    if v.format_version != version {
        return Err(LordError::Version { found: v.format_version, expected: version });
    }
    let header: H =
        serde_json::from_str(text).map_err(|e| LordError::Format(format!("invalid header JSON: {e}")))?;

    let payload = &bytes[header_end..];
    let mut prev_end = 0u64;
    for t in header.tensors() {
        let expected = (t.dtype.size() * t.numel()) as u64;
        if t.nbytes != expected {
            return Err(LordError::Corruption {
                tensor: t.name.clone(),
                reason: format!("nbytes {} does not match shape {:?}", t.nbytes, t.shape),
            });
        }
        if t.offset < prev_end || t.offset % ALIGN as u64 != 0 {
            return Err(LordError::Corruption {
                tensor: t.name.clone(),
                reason: format!("offset {} is misaligned or overlaps the previous tensor", t.offset),
            });
        }
        let end = t.offset.checked_add(t.nbytes).filter(|&e| e <= payload.len() as u64).ok_or_else(|| {
            LordError::Corruption {
                tensor: t.name.clone(),
                reason: format!(
                    "payload truncated: tensor needs bytes {}..{} but the payload has {}",
                    t.offset,
                    t.offset.saturating_add(t.nbytes),
                    payload.len()
                ),
            }
        })?;
        prev_end = end;
    }
    Ok(Parsed { header, payload })
}

impl<H> Parsed<'_, H> {
    fn raw(&self, e: &TensorEntry, dtype: Dtype) -> Result<&[u8]> {
        if e.dtype != dtype {
            return Err(LordError::Corruption {
                tensor: e.name.clone(),
                reason: format!("dtype {:?}, expected {dtype:?}", e.dtype),
            });
        }
        Ok(&self.payload[e.offset as usize..(e.offset + e.nbytes) as usize])
    }

    pub fn f32s(&self, e: &TensorEntry) -> Result<Vec<f32>> {
        let raw = self.raw(e, Dtype::F32)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f64s(&self, e: &TensorEntry) -> Result<Vec<f64>> {
        let raw = self.raw(e, Dtype::F64)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn u64s(&self, e: &TensorEntry) -> Result<Vec<u64>> {
        let raw = self.raw(e, Dtype::U64)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
