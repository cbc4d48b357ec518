//! Flat parameter storage and its checkpoint format.
//!
//! A checkpoint is the 8-byte magic `SSFLCKPT`, a little-endian `u64` header
//! length, a JSON header, then the weights, momentum and every normalization
//! layer's running mean and variance as little-endian `f64`s in that order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsflError};

const MAGIC: &[u8; 8] = b"SSFLCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<LayerSlot>,
}

impl Layout {
    pub(crate) fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let offset = self.total();
        let len = shape.iter().product();
        self.slots.push(LayerSlot { name: name.into(), offset, len, shape });
        self.slots.len() - 1
    }

    pub fn total(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Owned copy of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything a party holds and exchanges: weights, optimizer momentum and
/// batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub weights: Vec<f64>,
    pub momentum: Vec<f64>,
    pub norm_stats: Vec<NormStats>,
    pub layout: Layout,
}

impl ParameterState {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn layer(&self, slot: usize) -> &[f64] {
        let s = &self.layout.slots[slot];
        &self.weights[s.offset..s.offset + s.len]
    }

    pub fn layer_mut(&mut self, slot: usize) -> &mut [f64] {
        let s = &self.layout.slots[slot];
        &mut self.weights[s.offset..s.offset + s.len]
    }

    pub fn unflatten(&self) -> Vec<LayerTensor> {
        self.layout
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| LayerTensor { name: s.name.clone(), shape: s.shape.clone(), values: self.layer(i).to_vec() })
            .collect()
    }

    /// Concatenates per-layer tensors back into a flat weight vector.
    pub fn flatten(layout: &Layout, layers: &[LayerTensor]) -> Result<Vec<f64>> {
        if layers.len() != layout.slots.len() {
            return Err(SsflError::invalid("layer count does not match layout"));
        }
        let mut flat = Vec::with_capacity(layout.total());
        for (slot, layer) in layout.slots.iter().zip(layers) {
            if slot.name != layer.name || slot.len != layer.values.len() {
                return Err(SsflError::invalid(format!("layer {} does not match slot {}", layer.name, slot.name)));
            }
            flat.extend_from_slice(&layer.values);
        }
        Ok(flat)
    }

    pub fn check_compatible(&self, other: &ParameterState) -> Result<()> {
        let stats_match = self.norm_stats.len() == other.norm_stats.len()
            && self
                .norm_stats
                .iter()
                .zip(&other.norm_stats)
                .all(|(a, b)| a.mean.len() == b.mean.len() && a.var.len() == b.var.len());
        if self.layout != other.layout || self.momentum.len() != other.momentum.len() || !stats_match {
            return Err(SsflError::invalid("parameter states have different layouts"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.momentum).all(|v| v.is_finite())
            && self.norm_stats.iter().all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    /// Applies `f` to every scalar of `self` paired with the matching scalar
    /// of `other`: weights, momentum and running statistics alike.
    pub(crate) fn zip_apply(&mut self, other: &ParameterState, mut f: impl FnMut(&mut f64, f64)) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, &b)| f(a, b));
        self.momentum.iter_mut().zip(&other.momentum).for_each(|(a, &b)| f(a, b));
        for (sa, sb) in self.norm_stats.iter_mut().zip(&other.norm_stats) {
            sa.mean.iter_mut().zip(&sb.mean).for_each(|(a, &b)| f(a, b));
            sa.var.iter_mut().zip(&sb.var).for_each(|(a, &b)| f(a, b));
        }
    }

    pub(crate) fn map_all(&mut self, mut f: impl FnMut(&mut f64)) {
        self.weights.iter_mut().for_each(&mut f);
        self.momentum.iter_mut().for_each(&mut f);
        for s in &mut self.norm_stats {
            s.mean.iter_mut().chain(s.var.iter_mut()).for_each(&mut f);
        }
    }

    /// Order-sensitive hash of the weights, used to detect stale caches.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.weights {
            h ^= w.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ self.weights.len() as u64
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = CheckpointHeader {
            format: "ssfl-checkpoint".into(),
            version: FORMAT_VERSION,
            layout: self.layout.clone(),
            weights: self.weights.len(),
            momentum: self.momentum.len(),
            norm_stats: self.norm_stats.iter().map(|s| s.mean.len()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let stats = self.norm_stats.iter().flat_map(|s| s.mean.iter().chain(&s.var));
        for v in self.weights.iter().chain(&self.momentum).chain(stats) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let fmt = |m: &str| SsflError::Format(format!("checkpoint: {m}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(|_| fmt("truncated header length"))?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json).map_err(|_| fmt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| fmt(&e.to_string()))?;
        if header.version != FORMAT_VERSION || header.weights != header.layout.total() {
            return Err(fmt("unsupported version or inconsistent header"));
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf).map_err(|_| fmt("truncated payload"))?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let weights = read_vec(header.weights)?;
        let momentum = read_vec(header.momentum)?;
        let mut norm_stats = Vec::with_capacity(header.norm_stats.len());
        for &c in &header.norm_stats {
            let mean = read_vec(c)?;
            let var = read_vec(c)?;
            norm_stats.push(NormStats { mean, var });
        }
        Ok(Self { weights, momentum, norm_stats, layout: header.layout })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    layout: Layout,
    weights: usize,
    momentum: usize,
    norm_stats: Vec<usize>,
}
