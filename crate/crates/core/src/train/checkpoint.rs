use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::config::NarMode;
use crate::error::{Error, Result};
use crate::kv::KvText;
use crate::model::{parameter_shapes, ArchConfig};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CVKD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Teacher,
    Student,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Teacher => "teacher",
            Stage::Student => "student",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Stage::Teacher),
            "student" => Ok(Stage::Student),
            other => Err(Error::checkpoint("stage", format!("unknown stage `{other}`"))),
        }
    }
}

/// A trained network with the configuration needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub stage: Stage,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub final_loss: f32,
    /// Reference regime the network was trained with.
    pub nar_mode: NarMode,
    pub params: ModelParams,
}

const META_KEYS: &[&str] = &["stage", "epoch", "seed", "final_loss", "nar_mode"];

impl Checkpoint {
    /// Little-endian: magic, version, config text, then the tensor table.
    pub fn encode(&self) -> Vec<u8> {
        let mut kv = KvText::default();
        self.arch.to_kv(&mut kv);
        kv.push("stage", self.stage);
        kv.push("epoch", self.epoch);
        kv.push("seed", self.seed);
        kv.push("final_loss", self.final_loss);
        kv.push("nar_mode", self.nar_mode);
        let blob = kv.render();

        let mut out = Vec::with_capacity(64 + blob.len() + 4 * self.params.numel());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.value.rank() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Validates every field before building the parameter set.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::checkpoint("magic", "not a checkpoint file (bad magic bytes)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let blob_len = r.u32("config length")? as usize;
        let blob = core::str::from_utf8(r.take(blob_len, "config")?)
            .map_err(|_| Error::checkpoint("config", "config text is not UTF-8"))?;
        let kv = KvText::parse(blob).map_err(|e| Error::checkpoint("config", e.to_string()))?;
        let mut known: Vec<&str> = ArchConfig::keys().to_vec();
        known.extend_from_slice(META_KEYS);
        kv.reject_unknown(&known).map_err(|e| Error::checkpoint("config", e.to_string()))?;
        let arch = ArchConfig::from_kv(&kv, ArchConfig::desk()).map_err(|e| Error::checkpoint("config", e.to_string()))?;
        let meta = |key: &'static str| -> Result<&str> {
            kv.get(key)
                .map(|e| e.value.as_str())
                .ok_or_else(|| Error::checkpoint("config", format!("missing key `{key}`")))
        };
        let bad = |key: &'static str| Error::checkpoint("config", format!("invalid `{key}`"));
        let stage: Stage = meta("stage")?.parse()?;
        let epoch = meta("epoch")?.parse().map_err(|_| bad("epoch"))?;
        let seed = meta("seed")?.parse().map_err(|_| bad("seed"))?;
        let final_loss = meta("final_loss")?.parse().map_err(|_| bad("final_loss"))?;
        let nar_mode = meta("nar_mode")?.parse().map_err(|_| bad("nar_mode"))?;

        let expected = parameter_shapes(&arch);
        let count = r.u32("tensor count")? as usize;
        if count != expected.len() {
            return Err(Error::checkpoint(
                "tensor count",
                format!("{count} tensors, the configuration defines {}", expected.len()),
            ));
        }
        let mut params = ModelParams::new();
        for (name, shape) in expected {
            let len = r.u16("tensor name length")? as usize;
            let found = core::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::checkpoint("tensor name", "name is not UTF-8"))?;
            if found != name {
                return Err(Error::checkpoint("tensor name", format!("expected `{name}`, found `{found}`")));
            }
            let rank = r.take(1, "tensor rank")?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("tensor dims")? as usize);
            }
            if dims != shape {
                return Err(Error::checkpoint(
                    "tensor dims",
                    format!("`{name}` has shape {dims:?}, the configuration expects {shape:?}"),
                ));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(4 * n, "tensor data")?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(&dims, data).map_err(|e| Error::checkpoint("tensor data", format!("`{name}`: {e}")))?;
            params.insert(name, t)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::checkpoint(
                "trailer",
                format!("{} unexpected bytes after the tensor table", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint {
            arch,
            stage,
            epoch,
            seed,
            final_loss,
            nar_mode,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::checkpoint(
                field,
                format!("truncated: needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}
