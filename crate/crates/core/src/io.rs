//! Framed binary files: a 4-byte magic, a format version, a JSON header and a
//! little-endian `f64` payload. Payloads round-trip bit-exactly.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn write_framed<W: Write, H: Serialize>(
    mut w: W,
    magic: &[u8; 4],
    header: &H,
    payload: &[f64],
) -> Result<(), FormatError> {
    let header = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read_framed<R: Read, H: DeserializeOwned>(
    mut r: R,
    magic: &[u8; 4],
) -> Result<(H, Vec<f64>), FormatError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let hlen = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header = serde_json::from_slice(&hbuf)?;
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], FormatError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}
