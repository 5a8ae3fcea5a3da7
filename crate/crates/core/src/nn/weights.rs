use std::path::Path;

use super::spec::NetworkSpec;
use super::Network;
use crate::error::{Error, Result};
use crate::io::Cursor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SANW";
const VERSION: u16 = 1;

/// Magic, version, layer table (op kind, groups, dilation, stride, weight shape, bias length),
/// then every parameter as little-endian `f32` in declaration order.
pub fn encode_weights(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * net.param_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layout().len() as u32).to_le_bytes());
    for e in net.layout() {
        out.push(e.layer.op_kind.code());
        for v in [e.layer.groups, e.layer.dilation, e.layer.stride] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
        out.push(e.shape.len() as u8);
        for d in &e.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(e.layer.bias_len() as u32).to_le_bytes());
    }
    for v in net.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes weights and checks the stored layer table against `spec`.
pub fn decode_weights(bytes: &[u8], spec: &NetworkSpec) -> Result<Network<f32>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weights file".into()));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let mut net = Network::<f32>::zeros(spec.clone())?;
    let count = cur.u32()? as usize;
    if count != net.layout().len() {
        return Err(Error::Format(format!("file has {count} layers, network has {}", net.layout().len())));
    }
    for e in net.layout() {
        let code = cur.take(1)?[0];
        let hyper = [cur.u16()?, cur.u16()?, cur.u16()?];
        let ndims = cur.take(1)?[0] as usize;
        let dims = (0..ndims).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let bias = cur.u32()? as usize;
        let expected = [e.layer.groups as u16, e.layer.dilation as u16, e.layer.stride as u16];
        if code != e.layer.op_kind.code() || hyper != expected || dims != e.shape || bias != e.layer.bias_len() {
            return Err(Error::Format(format!("layer {} does not match the network spec", e.name)));
        }
    }
    for v in net.params_mut() {
        *v = cur.f32()?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after weights".into()));
    }
    Ok(net)
}

pub fn write_weights(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    std::fs::write(path, encode_weights(net))?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Network<f32>> {
    decode_weights(&std::fs::read(path)?, spec)
}
