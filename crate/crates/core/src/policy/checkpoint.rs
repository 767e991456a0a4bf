//! Binary checkpoint layout:
//!
//! ```text
//! magic      8 bytes  "DFAPOLCY"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON {"arch": .., "seed": ..}
//! w1, b1, w2, b2 as little-endian f32, in that order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::Net;
use super::{Architecture, PolicyParams};
use crate::error::{DfaError, Result};

pub const MAGIC: &[u8; 8] = b"DFAPOLCY";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    seed: u64,
}

/// Human-readable export of every tensor.
#[derive(Serialize, Deserialize)]
pub struct JsonWeights {
    pub arch: Architecture,
    pub seed: u64,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

pub fn write<W: Write>(params: &PolicyParams, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&Header { arch: params.arch.clone(), seed: params.seed })?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for tensor in params.net.tensors() {
        let bytes: Vec<u8> = tensor.iter().flat_map(|v| v.to_le_bytes()).collect();
        out.write_all(&bytes)?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read<R: Read>(mut input: R) -> Result<PolicyParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DfaError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(DfaError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut input)? as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let Header { arch, seed } = serde_json::from_slice(&header)?;
    arch.validate()?;
    let mut net = Net::zeros(arch.input, arch.hidden, arch.output);
    for tensor in net.tensors_mut() {
        let mut bytes = vec![0u8; tensor.len() * 4];
        input.read_exact(&mut bytes).map_err(|_| DfaError::Checkpoint("truncated tensor data".into()))?;
        for (v, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(DfaError::Checkpoint("trailing bytes after tensors".into()));
    }
    if !net.all_finite() {
        return Err(DfaError::Checkpoint("non-finite weights".into()));
    }
    Ok(PolicyParams { arch, seed, net })
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn to_json(params: &PolicyParams) -> JsonWeights {
    let [w1, b1, w2, b2] = params.net.tensors().map(|t| t.clone());
    JsonWeights { arch: params.arch.clone(), seed: params.seed, w1, b1, w2, b2 }
}

pub fn from_json(weights: JsonWeights) -> Result<PolicyParams> {
    weights.arch.validate()?;
    let mut net = Net::zeros(weights.arch.input, weights.arch.hidden, weights.arch.output);
    for (dst, src) in net.tensors_mut().into_iter().zip([weights.w1, weights.b1, weights.w2, weights.b2]) {
        if dst.len() != src.len() {
            return Err(DfaError::ShapeMismatch { expected: dst.len(), got: src.len() });
        }
        *dst = src;
    }
    Ok(PolicyParams { arch: weights.arch, seed: weights.seed, net })
}

#[cfg(test)]
mod tests {
    use super::super::init;
    use super::*;
    use crate::env::Domain;

    #[test]
    fn binary_round_trip() {
        let p = init(&Architecture::for_domain(Domain::Doorkey, 16), 5).unwrap();
        let mut buf = Vec::new();
        write(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read(&buf[..]).unwrap(), p);
    }

    #[test]
    fn truncated_or_corrupt_rejected() {
        let p = init(&Architecture::for_domain(Domain::Nav2d, 4), 5).unwrap();
        let mut buf = Vec::new();
        write(&p, &mut buf).unwrap();
        assert!(read(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read(&bad[..]), Err(DfaError::Checkpoint(_))));
        buf.push(0);
        assert!(read(&buf[..]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = init(&Architecture::for_domain(Domain::Nav2d, 4), 5).unwrap();
        let text = serde_json::to_string(&to_json(&p)).unwrap();
        let back = from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
