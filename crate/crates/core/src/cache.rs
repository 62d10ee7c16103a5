//! Binary bank cache shared by kernel and reconstruction banks.
//!
//! Little-endian layout:
//!
//! ```text
//! magic [4]  "EMKB" | "EMRB"
//! version    u32
//! order      u32
//! block_len  u32
//! tag        u32   scheme tag (kernel) or strategy tag (reconstruction)
//! max_blocks u32
//! mem_length u32   0 for kernel banks
//! decay      f64   0 unless exponential sampling
//! checksum   u64   first 8 bytes of SHA-256 over the payload
//! payload    row-major f64 matrices in index order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    Kernel,
    Reconstruction,
}

impl BankKind {
    fn magic(self) -> &'static [u8; 4] {
        match self {
            BankKind::Kernel => b"EMKB",
            BankKind::Reconstruction => b"EMRB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankHeader {
    pub kind: BankKind,
    pub order: usize,
    pub block_length: usize,
    pub tag: u32,
    pub max_blocks: usize,
    pub mem_length: usize,
    pub decay: f64,
}

impl BankHeader {
    fn encode(&self, checksum: u64) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(self.kind.magic());
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, v) in [("order", self.order), ("block_length", self.block_length)] {
            out.extend_from_slice(&to_u32(name, v)?.to_le_bytes());
        }
        out.extend_from_slice(&self.tag.to_le_bytes());
        for (name, v) in [
            ("max_blocks", self.max_blocks),
            ("mem_length", self.mem_length),
        ] {
            out.extend_from_slice(&to_u32(name, v)?.to_le_bytes());
        }
        out.extend_from_slice(&self.decay.to_le_bytes());
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }
}

fn to_u32(name: &'static str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(name, format!("{v} does not fit the cache header")))
}

fn payload_checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Write `matrices` under `header`; returns the file size in bytes.
pub fn write_bank<'a>(
    path: &Path,
    header: &BankHeader,
    matrices: impl IntoIterator<Item = &'a Array2<f64>>,
) -> Result<u64> {
    let mut payload = Vec::new();
    for m in matrices {
        // iter() walks logical row-major order regardless of memory layout
        for v in m.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut bytes = header.encode(payload_checksum(&payload))?;
    bytes.extend_from_slice(&payload);
    // write to a sibling then rename so readers never see a partial file
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(bytes.len() as u64)
}

/// Read a bank written by [`write_bank`], checking that the header equals
/// `expected` and the payload holds exactly the given shapes.
pub fn read_bank(
    path: &Path,
    expected: &BankHeader,
    shapes: &[(usize, usize)],
) -> Result<Vec<Array2<f64>>> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Cache("file shorter than header".into()));
    }
    let (head, payload) = bytes.split_at(HEADER_LEN);
    let stored_checksum = u64::from_le_bytes(head[HEADER_LEN - 8..].try_into().expect("8 bytes"));
    if head[..HEADER_LEN - 8] != expected.encode(0)?[..HEADER_LEN - 8] {
        return Err(Error::Cache(
            "header does not match requested parameters".into(),
        ));
    }
    let needed: usize = shapes.iter().map(|(r, c)| r * c * 8).sum();
    if payload.len() != needed {
        return Err(Error::Cache(format!(
            "payload is {} bytes, expected {needed}",
            payload.len()
        )));
    }
    if payload_checksum(payload) != stored_checksum {
        return Err(Error::Cache("payload checksum mismatch".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut out = Vec::with_capacity(shapes.len());
    for &(rows, cols) in shapes {
        let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
        let m =
            Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Cache(e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
