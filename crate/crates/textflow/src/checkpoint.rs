//! Binary checkpoint format.
//!
//! Layout: magic `MNTA`, format version (u32 LE), model kind tag (length-
//! prefixed string), then named tensor records — name length (u32 LE), name
//! bytes, rank (u32 LE), dims (u32 LE each), payload (f64 LE, row-major) —
//! and a trailing CRC32 of all preceding bytes. Round trips are bit-exact
//! and the CRC is verified on load.

use std::path::Path;

use thiserror::Error;

use crate::controller::{Controller, ControllerConfig};
use crate::vae::{Vae, VaeConfig};

pub const MAGIC: [u8; 4] = *b"MNTA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("truncated or malformed checkpoint: {0}")]
    Truncated(String),
    #[error("checkpoint holds a {got:?} model, expected {expected:?}")]
    WrongKind { expected: String, got: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named-tensor container decoupled from any model structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

// ── crc32 (IEEE 802.3) ───────────────────────────────────────────────────

fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 {
                0xedb8_8320 ^ (c >> 1)
            } else {
                c >> 1
            };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(crc32_table);
    let mut c = 0xffff_ffffu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

// ── encoding ─────────────────────────────────────────────────────────────

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        push_u32(&mut buf, FORMAT_VERSION);
        push_str(&mut buf, &self.kind);
        for (name, shape, data) in &self.tensors {
            debug_assert_eq!(shape.iter().product::<usize>(), data.len());
            push_str(&mut buf, name);
            push_u32(&mut buf, shape.len() as u32);
            for &d in shape {
                push_u32(&mut buf, d as u32);
            }
            for &v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&buf);
        push_u32(&mut buf, crc);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(CheckpointError::Truncated(
                "shorter than header plus checksum".into(),
            ));
        }
        if bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32(&bytes[..body_len]);
        if stored != computed {
            return Err(CheckpointError::CrcMismatch { stored, computed });
        }
        let mut pos = 4usize;
        let take_u32 = |pos: &mut usize| -> Result<u32, CheckpointError> {
            if *pos + 4 > body_len {
                return Err(CheckpointError::Truncated(format!(
                    "u32 read past end at offset {pos}"
                )));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let take_str = |pos: &mut usize| -> Result<String, CheckpointError> {
            let len = take_u32(pos)? as usize;
            if *pos + len > body_len {
                return Err(CheckpointError::Truncated("string past end".into()));
            }
            let s = String::from_utf8(bytes[*pos..*pos + len].to_vec())
                .map_err(|_| CheckpointError::Truncated("non-utf8 name".into()))?;
            *pos += len;
            Ok(s)
        };
        let version = take_u32(&mut pos)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let kind = take_str(&mut pos)?;
        let mut tensors = Vec::new();
        while pos < body_len {
            let name = take_str(&mut pos)?;
            let rank = take_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(take_u32(&mut pos)? as usize);
            }
            let count: usize = shape.iter().product();
            if pos + count * 8 > body_len {
                return Err(CheckpointError::Truncated(format!(
                    "payload of {name:?} past end"
                )));
            }
            let mut data = Vec::with_capacity(count);
            for i in 0..count {
                data.push(f64::from_le_bytes(
                    bytes[pos + i * 8..pos + (i + 1) * 8].try_into().unwrap(),
                ));
            }
            pos += count * 8;
            tensors.push((name, shape, data));
        }
        Ok(Checkpoint { kind, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    fn meta(&self) -> Result<&[f64], CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == "meta")
            .map(|(_, _, data)| data.as_slice())
            .ok_or_else(|| CheckpointError::Invalid("missing meta tensor".into()))
    }
}

// ── model adapters ───────────────────────────────────────────────────────

pub fn vae_to_checkpoint(model: &Vae) -> Checkpoint {
    let cfg = &model.cfg;
    let meta = vec![
        cfg.vocab_size as f64,
        cfg.embed_dim as f64,
        cfg.latent_dim as f64,
        cfg.channels as f64,
        cfg.kernel as f64,
        cfg.downsample as f64,
        cfg.beta_max,
        cfg.beta_warmup_steps as f64,
        cfg.stab_weight,
    ];
    let mut tensors = vec![("meta".to_string(), vec![meta.len()], meta)];
    tensors.extend(model.export_tensors());
    Checkpoint {
        kind: "vae".into(),
        tensors,
    }
}

pub fn vae_from_checkpoint(ckpt: &Checkpoint) -> Result<Vae, CheckpointError> {
    if ckpt.kind != "vae" {
        return Err(CheckpointError::WrongKind {
            expected: "vae".into(),
            got: ckpt.kind.clone(),
        });
    }
    let meta = ckpt.meta()?;
    if meta.len() != 9 {
        return Err(CheckpointError::Invalid("vae meta must have 9 fields".into()));
    }
    let cfg = VaeConfig {
        vocab_size: meta[0] as usize,
        embed_dim: meta[1] as usize,
        latent_dim: meta[2] as usize,
        channels: meta[3] as usize,
        kernel: meta[4] as usize,
        downsample: meta[5] as usize,
        beta_max: meta[6],
        beta_warmup_steps: meta[7] as usize,
        stab_weight: meta[8],
    };
    let model = Vae::init(cfg, 0);
    model
        .import_tensors(&ckpt.tensors[1..])
        .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    Ok(model)
}

pub fn controller_to_checkpoint(model: &Controller) -> Checkpoint {
    let cfg = &model.cfg;
    let meta = vec![
        cfg.latent_dim as f64,
        cfg.width as f64,
        cfg.layers as f64,
        cfg.heads as f64,
        cfg.head_dim as f64,
        cfg.max_len as f64,
        cfg.time_dim as f64,
    ];
    let mut tensors = vec![("meta".to_string(), vec![meta.len()], meta)];
    tensors.extend(model.export_tensors());
    Checkpoint {
        kind: "controller".into(),
        tensors,
    }
}

pub fn controller_from_checkpoint(ckpt: &Checkpoint) -> Result<Controller, CheckpointError> {
    if ckpt.kind != "controller" {
        return Err(CheckpointError::WrongKind {
            expected: "controller".into(),
            got: ckpt.kind.clone(),
        });
    }
    let meta = ckpt.meta()?;
    if meta.len() != 7 {
        return Err(CheckpointError::Invalid(
            "controller meta must have 7 fields".into(),
        ));
    }
    let cfg = ControllerConfig {
        latent_dim: meta[0] as usize,
        width: meta[1] as usize,
        layers: meta[2] as usize,
        heads: meta[3] as usize,
        head_dim: meta[4] as usize,
        max_len: meta[5] as usize,
        time_dim: meta[6] as usize,
    };
    let model = Controller::init(cfg, 0);
    model
        .import_tensors(&ckpt.tensors[1..])
        .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    Ok(model)
}
