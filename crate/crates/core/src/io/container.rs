use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Reader;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"MCKP";
const VERSION: u32 = 1;

/// Named binary sections behind a length-prefixed table, closed by a
/// SHA-256 digest of every preceding byte.
///
/// Layout: magic `MCKP`, `u32` version, `u32` section count, then per
/// section `u16` name length, UTF-8 name, `u64` payload length; then the
/// payloads in table order; then the 32-byte digest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Container {
    sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a section; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate section `{name}`")));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Format("section name too long".into()));
        }
        self.sections.push((name, bytes));
        Ok(())
    }

    pub fn add_tensor<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        self.add(name, super::encode_tensor(t))
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[u8]> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        super::decode_tensor(self.require(name)?)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, bytes) in &self.sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        }
        for (_, bytes) in &self.sections {
            out.extend_from_slice(bytes);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::Format("container: truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("container: content hash mismatch".into()));
        }
        let mut r = Reader::new(body, "container");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("container: unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("container: section name is not UTF-8".into()))?
                .to_string();
            let size = r.u64()? as usize;
            table.push((name, size));
        }
        let mut c = Container::new();
        for (name, size) in table {
            let data = r.take(size)?.to_vec();
            c.add(name, data)?;
        }
        r.finish()?;
        Ok(c)
    }

    /// Hex SHA-256 of the serialized body (the digest stored in the trailer).
    pub fn content_hash(&self) -> String {
        let bytes = self.to_bytes();
        hex(&bytes[bytes.len() - 32..])
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash_check() {
        let mut c = Container::new();
        c.add("config", b"a=1\n".to_vec()).unwrap();
        c.add("empty", vec![]).unwrap();
        c.add_tensor("w", &Tensor::<f32>::from_f64(&[2], &[1.0, -1.0]).unwrap()).unwrap();
        assert!(c.add("config", vec![]).is_err());
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensor::<f32>("w").unwrap().data(), &[1.0, -1.0]);
        assert_eq!(c.content_hash().len(), 64);

        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(m)) if m.contains("hash")));
        assert!(back.require("missing").is_err());
    }
}
