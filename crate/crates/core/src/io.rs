use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Writes a file atomically: temp file in the same directory, then rename.
/// A killed run never leaves a partial artifact under the final name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Io(format!("bad path {}", path.display())))?
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Binary matrix container: 4-byte magic, version u32, rows u32, cols u32,
/// then rows·cols little-endian f32 values, row-major. Bit-exact.
pub const MATRIX_VERSION: u32 = 1;

pub fn encode_matrix(magic: &[u8; 4], m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.data().len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(magic: &[u8; 4], bytes: &[u8], what: &str) -> Result<Matrix<f32>> {
    if bytes.len() < 16 {
        return Err(Error::Schema(format!("{what}: truncated header")));
    }
    if &bytes[0..4] != magic {
        return Err(Error::Schema(format!(
            "{what}: bad magic {:?}, expected {:?}",
            &bytes[0..4],
            magic
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(Error::Schema(format!(
            "{what}: unsupported version {version}"
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let need = 16 + rows * cols * 4;
    if bytes.len() != need {
        return Err(Error::Schema(format!(
            "{what}: payload is {} bytes, header {}x{} requires {}",
            bytes.len(),
            rows,
            cols,
            need
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[16..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_matrix_file(path: &Path, magic: &[u8; 4], m: &Matrix<f32>) -> Result<()> {
    atomic_write(path, &encode_matrix(magic, m))
}

pub fn read_matrix_file(path: &Path, magic: &[u8; 4]) -> Result<Matrix<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    decode_matrix(magic, &bytes, &path.display().to_string())
}
