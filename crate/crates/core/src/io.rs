//! Binary container shared by the dataset, checkpoint and forecast files.
//!
//! Layout: magic bytes, `u64` little-endian header length, UTF-8 JSON header,
//! `f64` little-endian payload, then a 32-byte SHA-256 digest of every byte
//! that precedes it.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKSUM_ALGORITHM: &str = "sha256";
const DIGEST_LEN: usize = 32;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Hash of a float slice by its exact bit patterns.
pub fn hash_f64s(values: &[f64]) -> String {
    sha256_hex(&f64_bytes(values))
}

pub fn encode_container<H: Serialize>(magic: &[u8], header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(magic.len() + 8 + header.len() + payload.len() * 8 + DIGEST_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&f64_bytes(payload));
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn write_container<H: Serialize>(
    path: &Path,
    magic: &[u8],
    header: &H,
    payload: &[f64],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, encode_container(magic, header, payload)?)?;
    Ok(())
}

fn corrupt(path: &Path, what: &str) -> Error {
    Error::Corrupt(format!("{}: {what}", path.display()))
}

/// Reads only the magic and JSON header.
pub fn read_header<H: DeserializeOwned>(path: &Path, magic: &[u8]) -> Result<H> {
    let mut f = fs::File::open(path)?;
    let mut head = vec![0u8; magic.len() + 8];
    f.read_exact(&mut head)
        .map_err(|_| corrupt(path, "truncated before header"))?;
    if &head[..magic.len()] != magic {
        return Err(corrupt(path, "bad magic bytes"));
    }
    let len = u64::from_le_bytes(head[magic.len()..].try_into().expect("8 bytes")) as usize;
    let mut header = vec![0u8; len];
    f.read_exact(&mut header)
        .map_err(|_| corrupt(path, "truncated header"))?;
    serde_json::from_slice(&header).map_err(|e| corrupt(path, &format!("bad header: {e}")))
}

pub fn decode_container<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8],
    path: &Path,
) -> Result<(H, Vec<f64>)> {
    if bytes.len() < magic.len() + 8 + DIGEST_LEN {
        return Err(corrupt(path, "file too short"));
    }
    if &bytes[..magic.len()] != magic {
        return Err(corrupt(path, "bad magic bytes"));
    }
    let body_end = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(corrupt(path, "checksum mismatch"));
    }
    let len_at = magic.len();
    let hlen = u64::from_le_bytes(bytes[len_at..len_at + 8].try_into().expect("8 bytes")) as usize;
    let hstart = len_at + 8;
    let pstart = hstart
        .checked_add(hlen)
        .filter(|&p| p <= body_end)
        .ok_or_else(|| corrupt(path, "header length exceeds file"))?;
    let header = serde_json::from_slice(&bytes[hstart..pstart])
        .map_err(|e| corrupt(path, &format!("bad header: {e}")))?;
    let payload = &bytes[pstart..body_end];
    if !payload.len().is_multiple_of(8) {
        return Err(corrupt(path, "payload is not a whole number of f64 values"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn read_container<H: DeserializeOwned>(path: &Path, magic: &[u8]) -> Result<(H, Vec<f64>)> {
    let bytes = fs::read(path)?;
    decode_container(&bytes, magic, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_detects_tampering() {
        let bytes = encode_container(b"TEST\n", &serde_json::json!({"a": 1}), &[1.0, 2.5]).unwrap();
        let p = Path::new("mem");
        let (h, v): (serde_json::Value, Vec<f64>) = decode_container(&bytes, b"TEST\n", p).unwrap();
        assert_eq!(h["a"], 1);
        assert_eq!(v, vec![1.0, 2.5]);

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - DIGEST_LEN - 3] ^= 0x01;
        assert!(matches!(
            decode_container::<serde_json::Value>(&bad, b"TEST\n", p),
            Err(Error::Corrupt(_))
        ));
        assert!(decode_container::<serde_json::Value>(&bytes[..n - 5], b"TEST\n", p).is_err());
        assert!(decode_container::<serde_json::Value>(&bytes, b"NOPE\n", p).is_err());
    }
}
