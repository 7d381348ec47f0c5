//! Checkpoint serialization: a text header (key=value metadata) followed by
//! named f32 tensors. Round-trips are bit-exact because parameters are stored
//! as f32 both in memory and on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::matrix::Matrix;
use crate::numcore::ParamStore;

pub const CKPT_MAGIC: &[u8; 4] = b"MDCK";
pub const CKPT_VERSION: u32 = 1;

/// In-memory checkpoint: ordered metadata plus named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Matrix<f32>)>,
}

impl Checkpoint {
    pub fn from_params(ps: &ParamStore<f32>, meta: BTreeMap<String, String>) -> Result<Self> {
        let mut tensors = Vec::new();
        for name in ps.names() {
            tensors.push((name.clone(), ps.value(name)?.clone()));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Rebuilds a parameter store with tensors registered in stored order.
    pub fn to_params(&self) -> Result<ParamStore<f32>> {
        let mut ps = ParamStore::new();
        for (name, m) in &self.tensors {
            ps.register(name, m.clone())?;
        }
        Ok(ps)
    }

    pub fn meta_get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Schema(format!("checkpoint missing metadata key '{key}'")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta_get(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("checkpoint metadata '{key}' is malformed")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut out, CKPT_VERSION);
    let header: String = ckpt
        .meta
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_str(&mut out, &header);
    put_u32(&mut out, ckpt.tensors.len() as u32);
    for (name, m) in &ckpt.tensors {
        put_str(&mut out, name);
        put_u32(&mut out, m.rows() as u32);
        put_u32(&mut out, m.cols() as u32);
        for &v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Parse("checkpoint string is not UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
        )));
    }
    let mut meta = BTreeMap::new();
    for line in r.string()?.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad checkpoint header line '{line}'")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { meta, tensors })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &encode_checkpoint(ckpt))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
