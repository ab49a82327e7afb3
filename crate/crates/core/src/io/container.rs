//! A small versioned binary container used for model checkpoints.
//!
//! Layout on disk:
//!
//! ```text
//! magic (8)  kind (4)  version u16  header_len u32  header (JSON)
//! payload_len u64  payload  crc32 u32
//! ```
//!
//! The checksum covers everything before it, so truncation and corruption are
//! both caught before any content is interpreted.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use super::crc32::crc32;

const MAGIC: &[u8; 8] = b"NTXCNTNR";

/// Bumped whenever the container layout or a header schema changes.
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint container (bad magic)")]
    BadMagic,
    #[error("container holds a {found:?} artifact, expected {expected:?}")]
    WrongKind { found: String, expected: String },
    #[error("unsupported container version {found} (this build reads {expected})")]
    Version { found: u16, expected: u16 },
    #[error("container truncated: {0}")]
    Truncated(String),
    #[error("container checksum mismatch (file corrupt or truncated)")]
    Checksum,
    #[error("container header malformed: {0}")]
    Header(#[from] serde_json::Error),
}

/// Header metadata common to every checkpoint kind.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ContainerHeader<H> {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: H,
}

/// Serialize `header` and `payload` into a container file at `path`.
pub fn write_container<H: Serialize>(
    path: &Path,
    kind: &[u8; 4],
    header: &H,
    payload: &[u8],
) -> Result<(), ContainerError> {
    let header_bytes = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(26 + header_bytes.len() + payload.len() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(kind);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a container back, returning the deserialized header and raw payload.
pub fn read_container<H: DeserializeOwned>(
    path: &Path,
    kind: &[u8; 4],
) -> Result<(H, Vec<u8>), ContainerError> {
    let data = std::fs::read(path)?;
    if data.len() < 18 {
        return Err(ContainerError::Truncated("shorter than fixed prefix".into()));
    }
    if &data[0..8] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let found_kind = &data[8..12];
    let version = u16::from_le_bytes(data[12..14].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(ContainerError::Version {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    if found_kind != kind {
        return Err(ContainerError::WrongKind {
            found: String::from_utf8_lossy(found_kind).into_owned(),
            expected: String::from_utf8_lossy(kind).into_owned(),
        });
    }
    let header_len = u32::from_le_bytes(data[14..18].try_into().unwrap()) as usize;
    let header_end = 18 + header_len;
    if data.len() < header_end + 8 {
        return Err(ContainerError::Truncated("header cut short".into()));
    }
    let payload_len = u64::from_le_bytes(data[header_end..header_end + 8].try_into().unwrap());
    let payload_start = header_end + 8;
    let payload_end = payload_start + payload_len as usize;
    if data.len() < payload_end + 4 {
        return Err(ContainerError::Truncated("payload cut short".into()));
    }
    let stored_crc = u32::from_le_bytes(data[payload_end..payload_end + 4].try_into().unwrap());
    if crc32(&data[..payload_end]) != stored_crc {
        return Err(ContainerError::Checksum);
    }
    let header: H = serde_json::from_slice(&data[18..header_end])?;
    Ok((header, data[payload_start..payload_end].to_vec()))
}

/// Writes a sequence of `f64` arrays as a length-prefixed payload.
#[derive(Default)]
pub struct ArrayWriter {
    buf: Vec<u8>,
}

impl ArrayWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, array: &[f64]) {
        self.buf
            .extend_from_slice(&(array.len() as u64).to_le_bytes());
        for &v in array {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Reads back arrays written by [`ArrayWriter`], in the same order.
pub struct ArrayReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ArrayReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn next(&mut self) -> Result<Vec<f64>, ContainerError> {
        if self.pos + 8 > self.data.len() {
            return Err(ContainerError::Truncated("array length prefix".into()));
        }
        let len = u64::from_le_bytes(self.data[self.pos..self.pos + 8].try_into().unwrap()) as usize;
        self.pos += 8;
        let end = self.pos + len * 8;
        if end > self.data.len() {
            return Err(ContainerError::Truncated("array body".into()));
        }
        let mut out = Vec::with_capacity(len);
        for chunk in self.data[self.pos..end].chunks_exact(8) {
            out.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        self.pos = end;
        Ok(out)
    }

    /// Remaining unread bytes; zero once every array has been consumed.
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Toy {
        name: String,
        n: u32,
    }

    #[test]
    fn round_trip_preserves_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ntck");
        let mut w = ArrayWriter::new();
        w.push(&[1.0, -2.5, 3.5e-300]);
        w.push(&[]);
        let payload = w.finish();
        let header = Toy {
            name: "x".into(),
            n: 7,
        };
        write_container(&path, b"TOY ", &header, &payload).unwrap();
        let (back, data): (Toy, _) = read_container(&path, b"TOY ").unwrap();
        assert_eq!(back, header);
        let mut r = ArrayReader::new(&data);
        assert_eq!(r.next().unwrap(), vec![1.0, -2.5, 3.5e-300]);
        assert_eq!(r.next().unwrap(), Vec::<f64>::new());
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn corruption_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ntck");
        let header = Toy {
            name: "x".into(),
            n: 1,
        };
        write_container(&path, b"TOY ", &header, &[9u8; 64]).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[30] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_container::<Toy>(&path, b"TOY "),
            Err(ContainerError::Checksum)
        ));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(
            read_container::<Toy>(&path, b"TOY "),
            Err(ContainerError::Truncated(_))
        ));
    }

    #[test]
    fn kind_and_version_mismatches_are_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ntck");
        let header = Toy {
            name: "x".into(),
            n: 1,
        };
        write_container(&path, b"TOY ", &header, &[]).unwrap();
        assert!(matches!(
            read_container::<Toy>(&path, b"RVQ "),
            Err(ContainerError::WrongKind { .. })
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[12] = 0xEE; // version field
        bytes[13] = 0x00;
        // refresh checksum so only the version differs
        let crc = crc32(&bytes[..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_container::<Toy>(&path, b"TOY "),
            Err(ContainerError::Version { found: 0xEE, .. })
        ));
    }
}
