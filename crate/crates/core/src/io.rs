//! Artifact formats: a tagged binary container for dense f64 payloads, CSV
//! tables with a header row, and content hashing.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 16] = b"STFRAC-CONTAINER";
pub const VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ContainerKind {
    Matrix = 1,
    Field = 2,
    DnRecord = 3,
    Vector = 4,
}

impl ContainerKind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            1 => Self::Matrix,
            2 => Self::Field,
            3 => Self::DnRecord,
            4 => Self::Vector,
            other => return Err(Error::Container(format!("unknown kind {other}"))),
        })
    }
}

/// Layout (all little-endian):
/// magic[16] | version u32 | kind u32 | n_dims u32 | n_meta u32 | tag_len u32 |
/// dims u64[n_dims] | meta f64[n_meta] | tag utf8[tag_len] | payload f64[prod(dims)]
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub dims: Vec<u64>,
    /// Scalar header values (e.g. h, tau, alpha, s).
    pub meta: Vec<f64>,
    /// Free-form text header (geometry hash, measurement convention).
    pub tag: String,
    pub payload: Vec<f64>,
}

impl Container {
    pub fn new(kind: ContainerKind, dims: Vec<u64>, meta: Vec<f64>, tag: String, payload: Vec<f64>) -> Result<Self> {
        let expected: u64 = dims.iter().product();
        if expected != payload.len() as u64 {
            return Err(Error::Container(format!(
                "dims {dims:?} describe {expected} values, payload has {}",
                payload.len()
            )));
        }
        Ok(Self { kind, dims, meta, tag, payload })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * (self.dims.len() + self.meta.len() + self.payload.len()) + self.tag.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.kind as u32, self.dims.len() as u32, self.meta.len() as u32, self.tag.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for m in &self.meta {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(self.tag.as_bytes());
        for p in &self.payload {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(16)? != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let kind = ContainerKind::from_u32(cur.u32()?)?;
        let n_dims = cur.u32()? as usize;
        let n_meta = cur.u32()? as usize;
        let tag_len = cur.u32()? as usize;
        let dims = (0..n_dims).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let meta = (0..n_meta).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let tag = String::from_utf8(cur.take(tag_len)?.to_vec())
            .map_err(|_| Error::Container("tag is not utf-8".into()))?;
        let count: u64 = dims.iter().product();
        let payload = (0..count).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        if cur.pos != bytes.len() {
            return Err(Error::Container("trailing bytes".into()));
        }
        Self::new(kind, dims, meta, tag, payload)
    }

    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Container("truncated".into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Render a CSV table; floats use the shortest round-trip representation.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let text = csv_string(header, rows);
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_is_bit_exact() {
        let c = Container::new(
            ContainerKind::Field,
            vec![2, 3],
            vec![0.1, f64::MIN_POSITIVE],
            "geom:abc".into(),
            vec![1.0, -0.0, 1e-300, f64::MAX, 3.5, -2.25],
        )
        .unwrap();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..16], MAGIC);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.payload[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_corruption() {
        let c = Container::new(ContainerKind::Vector, vec![2], vec![], String::new(), vec![1.0, 2.0]).unwrap();
        let mut bytes = c.to_bytes();
        bytes.pop();
        assert!(Container::from_bytes(&bytes).is_err());
        let mut bad = c.to_bytes();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        assert!(Container::new(ContainerKind::Vector, vec![3], vec![], String::new(), vec![1.0]).is_err());
    }

    #[test]
    fn csv_has_header() {
        let s = csv_string(&["a", "b"], &[vec![1.0, 0.5]]);
        assert_eq!(s, "a,b\n1.0,0.5\n");
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
