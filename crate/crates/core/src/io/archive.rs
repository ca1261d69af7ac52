use std::collections::BTreeMap;
use std::path::Path;

use super::{config::parse_config, put_f64s, IoError, Reader, Result, MAGIC};
use crate::autodiff::Matrix;

/// Set in the version word of archives so they never parse as datasets.
pub const ARCHIVE_FLAG: u32 = 0x8000_0000;
const ARCHIVE_VERSION: u32 = ARCHIVE_FLAG | 1;

/// Metadata text plus named matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub metadata: BTreeMap<String, String>,
    pub blocks: Vec<(String, Matrix)>,
}

impl Archive {
    pub fn new(kind: &str) -> Self {
        let mut a = Self::default();
        a.set("kind", kind);
        a
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| IoError::Format(format!("archive lacks metadata {key}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse().map_err(|_| IoError::Format(format!("bad metadata {key} = {v:?}")))
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.blocks.push((name.into(), m));
    }

    pub fn block(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| IoError::Format(format!("archive lacks block {name}")))
    }

    /// `KHDM`, flagged version, metadata length and text, block count, then
    /// per block: name length and bytes, rows, cols, column-major `f64`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        let text: String = self.metadata.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for (name, m) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            put_f64s(&mut out, m.as_slice());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(IoError::Format("missing KHDM magic".into()));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(IoError::Format(format!("expected archive version {ARCHIVE_VERSION:#x}, found {version:#x}")));
        }
        let len = r.usize()?;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| IoError::Format("metadata is not UTF-8".into()))?;
        let metadata = parse_config(text)?;
        let count = r.usize()?;
        let mut blocks = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| IoError::Format("block name is not UTF-8".into()))?
                .to_string();
            let (rows, cols) = (r.usize()?, r.usize()?);
            let size = rows
                .checked_mul(cols)
                .ok_or_else(|| IoError::Format("block size overflow".into()))?;
            blocks.push((name, Matrix::from_vec(rows, cols, r.f64s(size)?)));
        }
        if !r.finished() {
            return Err(IoError::Format("trailing bytes after archive".into()));
        }
        Ok(Self { metadata, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = Archive::new("test");
        a.set("alpha", 3.46e-12);
        a.set("f_r", f64::INFINITY);
        a.push("w", Matrix::from_fn(3, 2, |i, j| (i as f64 - j as f64) / 7.0));
        a.push("empty", Matrix::zeros(0, 4));
        let b = Archive::decode(&a.encode()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.kind(), Some("test"));
        assert_eq!(b.meta_parse::<f64>("alpha").unwrap(), 3.46e-12);
        assert_eq!(b.meta_parse::<f64>("f_r").unwrap(), f64::INFINITY);
        assert!(b.block("missing").is_err());
    }

    #[test]
    fn datasets_and_archives_do_not_mix() {
        let bytes = Archive::new("x").encode();
        assert!(crate::io::decode_dataset(&bytes).is_err());
        let ds = crate::dynamics::sample_dataset(&crate::dynamics::SystemSpec::vanderpol(), 1, 0.5, 0.25, 1).unwrap();
        assert!(Archive::decode(&crate::io::encode_dataset(&ds)).is_err());
    }
}
