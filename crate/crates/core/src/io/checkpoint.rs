use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vae::{Activation, Architecture, ObjectiveKind, ObjectiveSpec, VaeModel};

use super::{expect_eof, read_exact, read_f64, read_f64_payload, read_u16, read_u32, read_u64, read_u8};

const MAGIC: &[u8; 4] = b"VAEC";
const VERSION: u16 = 1;

/// A model together with how and for how long it was trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: VaeModel,
    pub objective: ObjectiveSpec,
    pub step: u64,
    /// Training seed; also seeds the evaluation noise of captures.
    pub seed: u64,
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("layer size {n} does not fit in u32")))
}

pub fn write_checkpoint(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let arch = ckpt.model.architecture();
    let obj = &ckpt.objective;
    let mut out = Vec::with_capacity(128 + 8 * arch.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [arch.input_dim, arch.hidden[0], arch.hidden[1], arch.latent_dim] {
        out.extend_from_slice(&dim(n)?.to_le_bytes());
    }
    out.push(arch.encoder_activation.code());
    out.push(arch.decoder_activation.code());
    out.push(obj.kind.code());
    for v in [obj.beta, obj.gamma, obj.c_max] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&obj.anneal_steps.to_le_bytes());
    for v in [obj.lambda_tc, obj.lambda_d, obj.lambda_od] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    for p in ckpt.model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelCheckpoint> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::parse("not a model checkpoint (bad magic)"));
    }
    let version = read_u16(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::parse(format!("unsupported checkpoint version {version}")));
    }
    let mut sizes = [0usize; 4];
    for s in sizes.iter_mut() {
        *s = read_u32(&mut r, "architecture")? as usize;
    }
    let encoder_activation = Activation::from_code(read_u8(&mut r, "architecture")?)?;
    let decoder_activation = Activation::from_code(read_u8(&mut r, "architecture")?)?;
    let arch = Architecture {
        input_dim: sizes[0],
        hidden: [sizes[1], sizes[2]],
        latent_dim: sizes[3],
        encoder_activation,
        decoder_activation,
    };
    arch.validate().map_err(|e| Error::parse(e.to_string()))?;
    let objective = ObjectiveSpec {
        kind: ObjectiveKind::from_code(read_u8(&mut r, "objective")?)?,
        beta: read_f64(&mut r, "objective")?,
        gamma: read_f64(&mut r, "objective")?,
        c_max: read_f64(&mut r, "objective")?,
        anneal_steps: read_u64(&mut r, "objective")?,
        lambda_tc: read_f64(&mut r, "objective")?,
        lambda_d: read_f64(&mut r, "objective")?,
        lambda_od: read_f64(&mut r, "objective")?,
    };
    let step = read_u64(&mut r, "step count")?;
    let seed = read_u64(&mut r, "seed")?;
    let params = read_f64_payload(&mut r, arch.param_count(), "checkpoint parameters")?;
    expect_eof(&mut r, "checkpoint")?;
    Ok(ModelCheckpoint {
        model: VaeModel::from_flat(arch, &params)?,
        objective,
        step,
        seed,
    })
}

pub fn write_checkpoint_file(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    fs::write(path, write_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = super::read_bytes(path)?;
    read_checkpoint(bytes.as_slice())
}
