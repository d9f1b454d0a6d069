//! Versioned binary checkpoints. Layout, all little-endian:
//!
//! ```text
//! magic "SELFCKPT"  8 bytes
//! version           u32 (currently 1)
//! num_classes       u32
//! layer count       u32, then per layer: tag u8 + two u32 fields
//! spec fingerprint  u64 (FNV-1a over the serialized layer table)
//! per trainable tensor, in param-id order: element count u32 + f32 data
//! per BN layer, in layer order: running mean then running var as f32
//! ```
//!
//! Tensor shapes are implied by the layer table, so loading rebuilds the
//! network from the spec and then overwrites every array bit-for-bit.

use std::fs;
use std::path::Path;

use selfens_core::network::{LayerSpec, Network};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SELFCKPT";
const VERSION: u32 = 1;

fn spec_bytes(spec: &[LayerSpec], num_classes: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((num_classes as u32).to_le_bytes());
    out.extend((spec.len() as u32).to_le_bytes());
    for l in spec {
        let (tag, a, b): (u8, u32, u32) = match *l {
            LayerSpec::Conv { in_ch, out_ch } => (0, in_ch as u32, out_ch as u32),
            LayerSpec::BnReluConv { in_ch, out_ch } => (1, in_ch as u32, out_ch as u32),
            LayerSpec::MaxPool => (2, 0, 0),
            LayerSpec::GlobalAvgPool => (3, 0, 0),
            LayerSpec::Dense { in_features, out } => (4, in_features as u32, out as u32),
        };
        out.push(tag);
        out.extend(a.to_le_bytes());
        out.extend(b.to_le_bytes());
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn save(path: &Path, net: &Network<f32>) -> Result<()> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    let sb = spec_bytes(net.spec(), net.num_classes());
    out.extend(&sb);
    out.extend(fnv1a(&sb).to_le_bytes());
    for id in net.param_ids() {
        let t = net.param(id);
        out.extend((t.len() as u32).to_le_bytes());
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    for (mean, var) in net.running_stats() {
        for &v in mean.iter().chain(var.iter()) {
            out.extend(v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(Error::io(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: truncated checkpoint: needed {} bytes, file has {}",
                self.path.display(),
                self.pos + n,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn load(path: &Path) -> Result<Network<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let spec_start = r.pos;
    let num_classes = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let mut spec = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let tag = r.take(1)?[0];
        let a = r.u32()? as usize;
        let b = r.u32()? as usize;
        spec.push(match tag {
            0 => LayerSpec::Conv { in_ch: a, out_ch: b },
            1 => LayerSpec::BnReluConv { in_ch: a, out_ch: b },
            2 => LayerSpec::MaxPool,
            3 => LayerSpec::GlobalAvgPool,
            4 => LayerSpec::Dense { in_features: a, out: b },
            t => {
                return Err(Error::Data(format!(
                    "{}: layer {i}: unknown layer tag {t}",
                    path.display()
                )))
            }
        });
    }
    let sb = &bytes[spec_start..r.pos];
    let stored_fp = r.u64()?;
    let fp = fnv1a(sb);
    if stored_fp != fp {
        return Err(Error::Data(format!(
            "{}: spec fingerprint mismatch: stored {stored_fp:016x}, computed {fp:016x}",
            path.display()
        )));
    }
    let mut net = Network::<f32>::from_spec(spec, 0);
    if net.num_classes() != num_classes {
        return Err(Error::Data(format!(
            "{}: class count {num_classes} does not match the dense layer",
            path.display()
        )));
    }
    for id in net.param_ids() {
        let n = r.u32()? as usize;
        let want = net.param(id).len();
        if n != want {
            return Err(Error::Data(format!(
                "{}: parameter '{}' has {n} elements, expected {want}",
                path.display(),
                net.param_name(id)
            )));
        }
        let data = r.f32s(n)?;
        net.param_mut(id).data_mut().copy_from_slice(&data);
    }
    let sizes: Vec<usize> = net.running_stats().iter().map(|(m, _)| m.len()).collect();
    let mut stats = Vec::with_capacity(sizes.len());
    for n in sizes {
        let mean = r.f32s(n)?;
        let var = r.f32s(n)?;
        stats.push((mean, var));
    }
    net.set_running_stats(&stats)?;
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after checkpoint payload",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok(net)
}
