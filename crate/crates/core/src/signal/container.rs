//! Binary `VEEG` dataset container (little-endian).
//!
//! ```text
//! magic "VEEG" | version u16 = 1 | flags u16 | n_trials u32 | n_channels u32 = 22
//! | n_samples u32 = 512 | fs f32 | norm_min f32 | norm_max f32
//! | labels n_trials × u8 | data n_trials·22·512 × f32 (trial, channel, sample)
//! ```
//!
//! Flag bit 0 marks a normalized dataset. Bit 1 marks that bits 8..16 carry a
//! subject id.

use super::{EpochedDataset, Result, SignalError, EPOCH_SAMPLES, N_CHANNELS};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VEEG";
pub const VERSION: u16 = 1;

const FLAG_NORMALIZED: u16 = 1;
const FLAG_SUBJECT: u16 = 1 << 1;

pub fn write_dataset_to<W: Write>(d: &EpochedDataset, mut w: W) -> Result<()> {
    d.validate()?;
    let mut flags = 0u16;
    if d.norm.is_some() {
        flags |= FLAG_NORMALIZED;
    }
    if let Some(s) = d.subject_id {
        flags |= FLAG_SUBJECT | (s as u16) << 8;
    }
    let (lo, hi) = d.norm.unwrap_or((0.0, 0.0));
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&(d.n_trials() as u32).to_le_bytes())?;
    w.write_all(&(N_CHANNELS as u32).to_le_bytes())?;
    w.write_all(&(EPOCH_SAMPLES as u32).to_le_bytes())?;
    w.write_all(&d.fs.to_le_bytes())?;
    w.write_all(&lo.to_le_bytes())?;
    w.write_all(&hi.to_le_bytes())?;
    w.write_all(&d.labels)?;
    let mut buf = Vec::with_capacity(d.data.len() * 4);
    for v in &d.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Fields<R> {
    r: R,
}

impl<R: Read> Fields<R> {
    fn bytes<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, field)?;
        Ok(b)
    }

    fn fill(&mut self, b: &mut [u8], field: &'static str) -> Result<()> {
        self.r.read_exact(b).map_err(|e| SignalError::Format {
            field,
            detail: if e.kind() == std::io::ErrorKind::UnexpectedEof {
                "truncated".into()
            } else {
                e.to_string()
            },
        })
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(field)?))
    }
    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(field)?))
    }
    fn f32(&mut self, field: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(field)?))
    }
}

fn expect(field: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(SignalError::Format {
            field,
            detail: detail(),
        })
    }
}

pub fn read_dataset_from<R: Read>(r: R) -> Result<EpochedDataset> {
    let mut f = Fields { r };
    let magic: [u8; 4] = f.bytes("magic")?;
    expect("magic", &magic == MAGIC, || format!("expected \"VEEG\", found {magic:?}"))?;
    let version = f.u16("version")?;
    expect("version", version == VERSION, || format!("unsupported version {version}"))?;
    let flags = f.u16("flags")?;
    let n_trials = f.u32("n_trials")? as usize;
    let n_channels = f.u32("n_channels")?;
    expect("n_channels", n_channels as usize == N_CHANNELS, || {
        format!("expected {N_CHANNELS}, found {n_channels}")
    })?;
    let n_samples = f.u32("n_samples")?;
    expect("n_samples", n_samples as usize == EPOCH_SAMPLES, || {
        format!("expected {EPOCH_SAMPLES}, found {n_samples}")
    })?;
    let fs = f.f32("fs")?;
    expect("fs", fs == 128.0, || format!("expected 128, found {fs}"))?;
    let lo = f.f32("norm_min")?;
    let hi = f.f32("norm_max")?;
    let mut labels = vec![0u8; n_trials];
    f.fill(&mut labels, "labels")?;
    expect("labels", labels.iter().all(|&l| l <= 3), || "label outside 0..=3".into())?;
    let mut raw = vec![0u8; n_trials * EpochedDataset::TRIAL_LEN * 4];
    f.fill(&mut raw, "data")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut trailing = [0u8; 1];
    expect("data", f.r.read(&mut trailing)? == 0, || "unexpected trailing bytes".into())?;
    let normalized = flags & FLAG_NORMALIZED != 0;
    let d = EpochedDataset {
        data,
        labels,
        fs,
        norm: normalized.then_some((lo, hi)),
        subject_id: (flags & FLAG_SUBJECT != 0).then_some((flags >> 8) as u8),
    };
    d.validate().map_err(|e| SignalError::Format {
        field: "data",
        detail: e.to_string(),
    })?;
    Ok(d)
}

pub fn dataset_write(d: &EpochedDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_to(d, BufWriter::new(File::create(path)?))
}

pub fn dataset_read(path: impl AsRef<Path>) -> Result<EpochedDataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EpochedDataset {
        let n = 2 * EpochedDataset::TRIAL_LEN;
        let data = (0..n).map(|i| ((i * 7919) % 1000) as f32 * 0.001 - 0.5).collect();
        let mut d = EpochedDataset::new(data, vec![3, 1]).unwrap();
        d.subject_id = Some(4);
        d
    }

    fn bytes(d: &EpochedDataset) -> Vec<u8> {
        let mut v = Vec::new();
        write_dataset_to(d, &mut v).unwrap();
        v
    }

    fn field_of(err: SignalError) -> &'static str {
        match err {
            SignalError::Format { field, .. } => field,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let d = sample();
        let back = read_dataset_from(&bytes(&d)[..]).unwrap();
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.subject_id, Some(4));
        assert_eq!(back.norm, None);
        assert!(back.data.iter().zip(&d.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_layout() {
        let b = bytes(&sample());
        assert_eq!(&b[..4], b"VEEG");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes([b[8], b[9], b[10], b[11]]), 2);
        assert_eq!(u32::from_le_bytes([b[12], b[13], b[14], b[15]]), 22);
        assert_eq!(u32::from_le_bytes([b[16], b[17], b[18], b[19]]), 512);
        assert_eq!(b.len(), 32 + 2 + 2 * 22 * 512 * 4);
    }

    #[test]
    fn corruption_names_the_field() {
        let good = bytes(&sample());
        let mut b = good.clone();
        b[0] = b'X';
        assert_eq!(field_of(read_dataset_from(&b[..]).unwrap_err()), "magic");
        let mut b = good.clone();
        b[4] = 9;
        assert_eq!(field_of(read_dataset_from(&b[..]).unwrap_err()), "version");
        let mut b = good.clone();
        b[16..20].copy_from_slice(&256u32.to_le_bytes());
        assert_eq!(field_of(read_dataset_from(&b[..]).unwrap_err()), "n_samples");
        let b = &good[..good.len() - 3];
        assert_eq!(field_of(read_dataset_from(b).unwrap_err()), "data");
        assert_eq!(field_of(read_dataset_from(&good[..20]).unwrap_err()), "fs");
    }
}
