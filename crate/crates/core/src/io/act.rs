use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::vae::ActivationCapture;

use super::{expect_eof, put_string, read_exact, read_f64_payload, read_string, read_u16, read_u32};

const MAGIC: &[u8; 4] = b"ACTV";
const VERSION: u16 = 1;

/// One activation matrix with the layer and model it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFile {
    pub layer_name: String,
    pub model_id: String,
    pub epoch: u32,
    pub matrix: Matrix,
}

fn dim(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit in u32")))
}

pub fn write_act(file: &ActivationFile) -> Result<Vec<u8>> {
    let m = &file.matrix;
    let mut out = Vec::with_capacity(64 + 8 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_string(&mut out, &file.layer_name)?;
    put_string(&mut out, &file.model_id)?;
    out.extend_from_slice(&file.epoch.to_le_bytes());
    out.extend_from_slice(&dim(m.rows(), "row count")?.to_le_bytes());
    out.extend_from_slice(&dim(m.cols(), "column count")?.to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_act<R: Read>(mut r: R) -> Result<ActivationFile> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::parse("not an activation file (bad magic)"));
    }
    let version = read_u16(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::parse(format!("unsupported activation file version {version}")));
    }
    let layer_name = read_string(&mut r, "layer name")?;
    let model_id = read_string(&mut r, "model id")?;
    let epoch = read_u32(&mut r, "epoch")?;
    let rows = read_u32(&mut r, "row count")? as usize;
    let cols = read_u32(&mut r, "column count")? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::parse("activation file: declared size overflows"))?;
    let data = read_f64_payload(&mut r, count, "activation file")?;
    expect_eof(&mut r, "activation file")?;
    Ok(ActivationFile {
        layer_name,
        model_id,
        epoch,
        matrix: Matrix::new(rows, cols, data)?,
    })
}

pub fn write_act_file(path: &Path, file: &ActivationFile) -> Result<()> {
    fs::write(path, write_act(file)?)?;
    Ok(())
}

pub fn read_act_file(path: &Path) -> Result<ActivationFile> {
    let bytes = super::read_bytes(path)?;
    read_act(bytes.as_slice())
}

/// Writes one `<prefix>_<layer>.act` file per captured layer plus
/// `<prefix>_noise.act`; returns the paths written.
pub fn write_capture(dir: &Path, prefix: &str, capture: &ActivationCapture) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let noise = ("noise".to_string(), capture.noise().clone());
    for (name, m) in capture.layers().iter().chain(std::iter::once(&noise)) {
        let path = dir.join(format!("{prefix}_{name}.act"));
        write_act_file(
            &path,
            &ActivationFile {
                layer_name: name.clone(),
                model_id: capture.model_id.clone(),
                epoch: capture.epoch,
                matrix: m.clone(),
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Reassembles a capture written by [`write_capture`], in `layers` order.
pub fn read_capture_dir(dir: &Path, prefix: &str, layers: &[&str]) -> Result<ActivationCapture> {
    let load = |name: &str| read_act_file(&dir.join(format!("{prefix}_{name}.act")));
    let noise = load("noise")?;
    let mut loaded = Vec::with_capacity(layers.len());
    for &name in layers {
        loaded.push((name.to_string(), load(name)?.matrix));
    }
    ActivationCapture::from_layers(noise.model_id, noise.epoch, loaded, noise.matrix)
}
