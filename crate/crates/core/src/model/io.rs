//! Binary network container.
//!
//! All integers and reals are little-endian.
//!
//! | offset | size | field                                              |
//! |-------:|-----:|----------------------------------------------------|
//! | 0      | 4    | magic `b"RGNN"`                                    |
//! | 4      | 4    | format version, `u32` (currently 1)                |
//! | 8      | 4    | dimension `D`, `u32`                               |
//! | 12     | 4    | depth `L`, `u32`                                   |
//! | 16     | 1    | nonlinearity kind: 0 = smooth leaky-ReLU, 1 = tanh + linear |
//! | 17     | 1    | flags: bit 0 final nonlinearity, bit 1 biases on   |
//! | 18     | 2    | reserved, zero                                     |
//! | 20     | 8    | nonlinearity `alpha`, `f64`                        |
//! | 28     | 8    | nonlinearity `beta`, `f64` (0 for leaky-ReLU)      |
//! | 36     | ...  | per layer: `D·D` weights row-major then `D` biases, `f64` |

use std::io::{Read, Write};
use std::path::Path;

use super::{Layer, Network, Nonlinearity};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const MAGIC: [u8; 4] = *b"RGNN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;

const FLAG_FINAL_NONLINEARITY: u8 = 1;
const FLAG_BIAS: u8 = 2;

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let d = net.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + net.depth() * (d * d + d) * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(net.depth() as u32).to_le_bytes());
    let (kind, alpha, beta) = match net.nonlinearity() {
        Nonlinearity::SmoothLeakyRelu { alpha } => (0u8, alpha, 0.0),
        Nonlinearity::TanhPlusLinear { alpha, beta } => (1u8, alpha, beta),
    };
    let mut flags = 0u8;
    if net.apply_final_nonlinearity() {
        flags |= FLAG_FINAL_NONLINEARITY;
    }
    if net.use_bias() {
        flags |= FLAG_BIAS;
    }
    out.extend_from_slice(&[kind, flags, 0, 0]);
    out.extend_from_slice(&alpha.to_le_bytes());
    out.extend_from_slice(&beta.to_le_bytes());
    for layer in net.layers() {
        for v in layer.weight.as_slice().iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("length checked"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("length checked"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header ({} bytes)",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let d = u32_at(bytes, 8) as usize;
    let depth = u32_at(bytes, 12) as usize;
    if d == 0 || depth == 0 {
        return Err(Error::Format(format!("empty network D={d} L={depth}")));
    }
    let (kind, flags) = (bytes[16], bytes[17]);
    let alpha = f64_at(bytes, 20);
    let beta = f64_at(bytes, 28);
    let nonlinearity = match kind {
        0 => Nonlinearity::SmoothLeakyRelu { alpha },
        1 => Nonlinearity::TanhPlusLinear { alpha, beta },
        k => return Err(Error::Format(format!("unknown nonlinearity kind {k}"))),
    };
    let per_layer = d * d + d;
    let expected = HEADER_LEN + depth * per_layer * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload length {} does not match D={d}, L={depth} (expected {expected})",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let w: Vec<f64> = values.by_ref().take(d * d).collect();
        let b: Vec<f64> = values.by_ref().take(d).collect();
        layers.push(Layer {
            weight: Matrix::new(d, d, w)?,
            bias: Vector::new(b)?,
        });
    }
    Network::new(
        layers,
        nonlinearity,
        flags & FLAG_BIAS != 0,
        flags & FLAG_FINAL_NONLINEARITY != 0,
    )
}

pub fn write(net: &Network, mut w: impl Write) -> Result<()> {
    w.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn read(mut r: impl Read) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
