//! Binary checkpoint: weights, running statistics and everything needed to
//! rebuild the network and its preprocessing.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic      8 bytes  "SKFALLCK"
//! version    u32
//! header     u32 length + UTF-8 JSON (configs, topology, norm stats, epoch, run config)
//! params     u32 count, then per tensor:
//!              u32 name length, name, u32 rank, u64 dims…, f64 values…
//! bn         u32 count, then per layer:
//!              u32 name length, name, u32 channels, f64 means…, f64 variances…
//! checksum   u64 FNV-1a over every preceding byte
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::data::LabelSpace;
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::model::{BnState, FallDetectorNet, ModelConfig};
use crate::preprocess::{NormStats, PreprocessConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SKFALLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    topology: String,
    preprocess: PreprocessConfig,
    labels: LabelSpace,
    norm: NormStats,
    epoch: Option<usize>,
    run_config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub topology: SkeletonTopology,
    pub preprocess: PreprocessConfig,
    pub labels: LabelSpace,
    pub norm: NormStats,
    pub epoch: Option<usize>,
    /// Effective run configuration, echoed for provenance.
    pub run_config: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
    pub bn: Vec<BnState>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// FNV-1a over the bit patterns of every parameter and running statistic.
pub fn state_checksum(net: &FallDetectorNet) -> u64 {
    let mut bytes = Vec::new();
    for p in net.params() {
        p.value.data().iter().for_each(|x| bytes.extend_from_slice(&x.to_bits().to_le_bytes()));
    }
    for s in net.bn_states() {
        s.mean.iter().chain(&s.var).for_each(|x| bytes.extend_from_slice(&x.to_bits().to_le_bytes()));
    }
    fnv1a(&bytes)
}

impl Checkpoint {
    pub fn from_net(
        net: &FallDetectorNet,
        preprocess: PreprocessConfig,
        labels: LabelSpace,
        norm: NormStats,
        run_config: serde_json::Value,
    ) -> Self {
        Checkpoint {
            model: net.config().clone(),
            topology: net.topology().clone(),
            preprocess,
            labels,
            norm,
            epoch: None,
            run_config,
            params: net.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            bn: net.bn_states().to_vec(),
        }
    }

    /// Same metadata, weights taken from `net`.
    pub fn with_weights(&self, net: &FallDetectorNet, epoch: usize) -> Self {
        Checkpoint {
            epoch: Some(epoch),
            params: net.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            bn: net.bn_states().to_vec(),
            ..self.clone()
        }
    }

    /// Rebuilds the network; every stored tensor must match by name and shape.
    pub fn to_net(&self) -> Result<FallDetectorNet> {
        let mut net = FallDetectorNet::new(self.model.clone(), self.topology.clone())?;
        if net.params().len() != self.params.len() || net.bn_states().len() != self.bn.len() {
            return Err(bad("tensor count does not match the model configuration"));
        }
        for (p, (name, value)) in net.params_mut().iter_mut().zip(&self.params) {
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(bad(format!(
                    "stored {name} {:?} does not fit {} {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        for (s, stored) in net.bn_states_mut().iter_mut().zip(&self.bn) {
            if s.name != stored.name || s.mean.len() != stored.mean.len() {
                return Err(bad(format!("stored batch norm {} does not fit {}", stored.name, s.name)));
            }
            *s = stored.clone();
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            topology: self.topology.to_edge_list(),
            preprocess: self.preprocess,
            labels: self.labels,
            norm: self.norm,
            epoch: self.epoch,
            run_config: self.run_config.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(VERSION).unwrap();
        write_blob(&mut out, &json);
        out.write_u32::<LE>(self.params.len() as u32).unwrap();
        for (name, t) in &self.params {
            write_blob(&mut out, name.as_bytes());
            out.write_u32::<LE>(t.ndim() as u32).unwrap();
            for &d in t.shape() {
                out.write_u64::<LE>(d as u64).unwrap();
            }
            for &x in t.data() {
                out.write_f64::<LE>(x).unwrap();
            }
        }
        out.write_u32::<LE>(self.bn.len() as u32).unwrap();
        for s in &self.bn {
            write_blob(&mut out, s.name.as_bytes());
            out.write_u32::<LE>(s.mean.len() as u32).unwrap();
            for &x in s.mean.iter().chain(&s.var) {
                out.write_f64::<LE>(x).unwrap();
            }
        }
        let sum = fnv1a(&out);
        out.write_u64::<LE>(sum).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(bad("checksum mismatch; file is corrupt or truncated"));
        }
        let mut r = Cursor::new(&body[MAGIC.len()..]);
        let eof = |_| bad("truncated checkpoint");
        let version = r.read_u32::<LE>().map_err(eof)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header: Header =
            serde_json::from_slice(&read_blob(&mut r)?).map_err(|e| bad(format!("bad header: {e}")))?;
        let topology = SkeletonTopology::parse(&header.topology, Path::new("<checkpoint>"))?;
        let n = r.read_u32::<LE>().map_err(eof)? as usize;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = read_name(&mut r)?;
            let rank = r.read_u32::<LE>().map_err(eof)? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u64::<LE>().map(|d| d as usize).map_err(eof))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = read_f64s(&mut r, numel)?;
            params.push((name, Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?));
        }
        let n = r.read_u32::<LE>().map_err(eof)? as usize;
        let mut bn = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = read_name(&mut r)?;
            let c = r.read_u32::<LE>().map_err(eof)? as usize;
            let mean = read_f64s(&mut r, c)?;
            let var = read_f64s(&mut r, c)?;
            bn.push(BnState { name, mean, var });
        }
        if r.position() as usize != body.len() - MAGIC.len() {
            return Err(bad("trailing bytes after the tensors"));
        }
        Ok(Checkpoint {
            model: header.model,
            topology,
            preprocess: header.preprocess,
            labels: header.labels,
            norm: header.norm,
            epoch: header.epoch,
            run_config: header.run_config,
            params,
            bn,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_blob(out: &mut Vec<u8>, bytes: &[u8]) {
    out.write_u32::<LE>(bytes.len() as u32).unwrap();
    out.extend_from_slice(bytes);
}

fn read_blob(r: &mut Cursor<&[u8]>) -> Result<Vec<u8>> {
    let n = r.read_u32::<LE>().map_err(|_| bad("truncated checkpoint"))? as usize;
    let left = r.get_ref().len() - r.position() as usize;
    if n > left {
        return Err(bad("truncated checkpoint"));
    }
    let mut buf = vec![0; n];
    r.read_exact(&mut buf).map_err(|_| bad("truncated checkpoint"))?;
    Ok(buf)
}

fn read_name(r: &mut Cursor<&[u8]>) -> Result<String> {
    String::from_utf8(read_blob(r)?).map_err(|_| bad("tensor name is not UTF-8"))
}

fn read_f64s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    let left = r.get_ref().len() - r.position() as usize;
    if n.checked_mul(8).is_none_or(|b| b > left) {
        return Err(bad("truncated checkpoint"));
    }
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v).map_err(|_| bad("truncated checkpoint"))?;
    Ok(v)
}
