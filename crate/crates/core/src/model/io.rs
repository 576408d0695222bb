//! Binary `VEGM` model file (little-endian).
//!
//! ```text
//! magic "VEGM" | version u16 = 1 | variant u8 | config_len u32 | config JSON
//! | n_params u64 | params f32… | n_buffers u64 | buffers f32…
//! ```
//!
//! Counts are scalar counts. Buffers hold each batch-norm layer's running
//! mean followed by its running variance.

use super::{Layout, ModelConfig, ModelError, ModelParams, Result, Variant};
use crate::tensor::{RunningStats, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VEGM";
pub const VERSION: u16 = 1;

pub fn write_model_to<W: Write>(m: &ModelParams, mut w: W) -> Result<()> {
    let json = m.config.to_canonical_json();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[m.config.variant.code()])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let params = m.flat();
    let buffers = m.flat_buffers();
    for block in [&params, &buffers] {
        w.write_all(&(block.len() as u64).to_le_bytes())?;
        let mut bytes = Vec::with_capacity(block.len() * 4);
        for v in block.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

fn format(field: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::Format {
        field,
        detail: detail.into(),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            format(field, "truncated")
        } else {
            ModelError::Io(e)
        }
    })
}

fn read_f32s<R: Read>(r: &mut R, n: usize, field: &'static str) -> Result<Vec<f32>> {
    let mut raw = vec![0u8; n * 4];
    read_exact(r, &mut raw, field)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_model_from<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(format("magic", format!("expected \"VEGM\", found {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    read_exact(&mut r, &mut b2, "version")?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(format("version", format!("unsupported version {version}")));
    }
    let mut b1 = [0u8; 1];
    read_exact(&mut r, &mut b1, "variant")?;
    let variant = Variant::from_code(b1[0])
        .ok_or_else(|| format("variant", format!("unknown variant byte {}", b1[0])))?;
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4, "config_len")?;
    let len = u32::from_le_bytes(b4) as usize;
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "config")?;
    let config: ModelConfig =
        serde_json::from_slice(&json).map_err(|e| format("config", e.to_string()))?;
    if config.variant != variant {
        return Err(format(
            "variant",
            format!("header says {variant}, config says {}", config.variant),
        ));
    }
    config.validate().map_err(|e| format("config", e.to_string()))?;
    let layout = Layout::new(&config);

    let mut b8 = [0u8; 8];
    read_exact(&mut r, &mut b8, "n_params")?;
    let n_params = u64::from_le_bytes(b8) as usize;
    if n_params != layout.n_scalars() {
        return Err(format(
            "n_params",
            format!("config needs {}, file has {n_params}", layout.n_scalars()),
        ));
    }
    let flat = read_f32s(&mut r, n_params, "params")?;
    read_exact(&mut r, &mut b8, "n_buffers")?;
    let n_buffers = u64::from_le_bytes(b8) as usize;
    if n_buffers != layout.n_buffer_scalars() {
        return Err(format(
            "n_buffers",
            format!("config needs {}, file has {n_buffers}", layout.n_buffer_scalars()),
        ));
    }
    let buffers = read_f32s(&mut r, n_buffers, "buffers")?;
    if r.read(&mut b1)? != 0 {
        return Err(format("buffers", "unexpected trailing bytes"));
    }

    let mut off = 0;
    let tensors = layout
        .params
        .iter()
        .map(|p| {
            let n = p.numel();
            let t = Tensor::new(&p.shape, flat[off..off + n].to_vec());
            off += n;
            t.map_err(ModelError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut off = 0;
    let stats = layout
        .norms
        .iter()
        .map(|(_, c)| {
            let s = RunningStats {
                mean: buffers[off..off + c].to_vec(),
                var: buffers[off + c..off + 2 * c].to_vec(),
            };
            off += 2 * c;
            s
        })
        .collect();
    Ok(ModelParams {
        config,
        tensors,
        stats,
    })
}

pub fn model_write(m: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_model_to(m, BufWriter::new(File::create(path)?))
}

pub fn model_read(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_model_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::model_init;

    fn bytes(m: &ModelParams) -> Vec<u8> {
        let mut v = Vec::new();
        write_model_to(m, &mut v).unwrap();
        v
    }

    fn field(e: ModelError) -> &'static str {
        match e {
            ModelError::Format { field, .. } => field,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_keeps_buffers() {
        let mut m = model_init(&ModelConfig::tiny(Variant::V2), 3).unwrap();
        m.stats[1].mean[0] = 0.25;
        m.stats[2].var[1] = 3.5;
        let back = read_model_from(&bytes(&m)[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncation_and_mismatches() {
        let m = model_init(&ModelConfig::tiny(Variant::V1), 3).unwrap();
        let good = bytes(&m);
        assert_eq!(field(read_model_from(&good[..good.len() - 1]).unwrap_err()), "buffers");
        assert_eq!(field(read_model_from(&good[..30]).unwrap_err()), "config");
        let mut b = good.clone();
        b[6] = 2;
        assert_eq!(field(read_model_from(&b[..]).unwrap_err()), "variant");
        let mut b = good.clone();
        b[0] = 0;
        assert_eq!(field(read_model_from(&b[..]).unwrap_err()), "magic");
        let cfg_len = u32::from_le_bytes([good[7], good[8], good[9], good[10]]) as usize;
        let at = 11 + cfg_len;
        let mut b = good.clone();
        b[at] ^= 1;
        assert_eq!(field(read_model_from(&b[..]).unwrap_err()), "n_params");
    }
}
