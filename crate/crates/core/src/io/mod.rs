//! On-disk formats: activation matrices, model checkpoints, CSV matrices,
//! PGM images and flat experiment configs.

mod act;
mod checkpoint;
mod config;
mod text;

pub use act::{read_act, read_act_file, read_capture_dir, write_act, write_act_file, write_capture, ActivationFile};
pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, ModelCheckpoint};
pub use config::ExperimentConfig;
pub use text::{matrix_from_csv, matrix_to_csv, pgm_bytes, write_pgm_file};

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Reads a whole file, naming the path in any I/O error.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::parse(format!("{}: not valid UTF-8", path.display())))
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::parse(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

pub(crate) fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, what)?))
}

pub(crate) fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::parse(format!("truncated file while reading {what}")));
    }
    String::from_utf8(buf).map_err(|_| Error::parse(format!("{what} is not valid UTF-8")))
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::invalid("string too long for u32 length prefix"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Reads `count` little-endian f64 values, rejecting short payloads.
pub(crate) fn read_f64_payload<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = count
        .checked_mul(8)
        .ok_or_else(|| Error::parse(format!("{what}: declared size overflows")))?;
    let mut buf = Vec::new();
    r.take(bytes as u64).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return Err(Error::parse(format!(
            "{what}: expected {bytes} payload bytes, found {}",
            buf.len()
        )));
    }
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(format!("{what}: payload contains non-finite values")));
    }
    Ok(values)
}

pub(crate) fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::parse(format!("{what}: trailing bytes after payload"))),
    }
}
