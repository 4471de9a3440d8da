//! Versioned binary model files.
//!
//! Layout (all integers little-endian):
//!
//! | field            | encoding                                            |
//! |------------------|-----------------------------------------------------|
//! | magic            | `b"M2D1"`                                           |
//! | version          | `u16` = 1                                           |
//! | descriptor       | `u32` byte length + UTF-8 text (`kind ...` line, then the spec descriptor) |
//! | parameter count  | `u32`                                               |
//! | each parameter   | `u8` rank, rank × `u32` dims, then `f64` values     |
//! | checksum         | `u32` CRC-32 (IEEE) of every preceding byte         |

use std::fs;
use std::path::Path;

use crate::autodiff::Parameter;
use crate::codec::{write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nets::network::{NetKind, Network};
use crate::nets::spec::ModelSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"M2D1";
pub const FORMAT_VERSION: u16 = 1;

pub(crate) fn write_network(w: &mut ByteWriter, net: &Network) {
    let start = w.buf.len();
    w.bytes(MAGIC);
    w.u16(FORMAT_VERSION);
    let descriptor = format!("kind {}\n{}", net.kind(), net.spec().to_descriptor());
    w.len_prefixed(descriptor.as_bytes());
    w.u32(net.params().len() as u32);
    for p in net.params() {
        w.u8(p.tensor.rank() as u8);
        for &d in p.tensor.shape() {
            w.u32(d as u32);
        }
        for &v in p.tensor.data() {
            w.f64(v);
        }
    }
    w.crc_since(start);
}

pub(crate) fn read_magic_version(r: &mut ByteReader<'_>) -> Result<()> {
    let found = r.peek(4).map(<[u8]>::to_vec).unwrap_or_else(|| {
        let rest = r.remaining();
        r.peek(rest).unwrap_or_default().to_vec()
    });
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC.to_vec(),
            found,
        });
    }
    r.take(4, "magic")?;
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub(crate) fn read_network(r: &mut ByteReader<'_>) -> Result<Network> {
    let start = r.pos;
    read_magic_version(r)?;
    let descriptor = r.len_prefixed("descriptor")?;
    let count = r.u32("parameter count")? as usize;
    let mut raw = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let rank = r.u8("parameter rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter shape")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("parameter shape {shape:?} overflows")))?;
        let values = r.f64s(n, "parameter values")?;
        raw.push((shape, values));
    }
    r.check_crc(start, "model")?;

    let descriptor = std::str::from_utf8(descriptor)
        .map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
    let (kind_line, spec_text) = descriptor
        .split_once('\n')
        .ok_or_else(|| Error::Format("descriptor missing kind line".into()))?;
    let kind: NetKind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| Error::Format(format!("bad kind line `{kind_line}`")))?
        .parse()?;
    let spec = ModelSpec::from_descriptor(spec_text)?;
    let mut names = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.has_params() {
            let (w, b) = super::network::param_names(i);
            names.push(w);
            names.push(b);
        }
    }
    if names.len() != raw.len() {
        return Err(Error::Format(format!(
            "spec needs {} parameter tensors, file has {}",
            names.len(),
            raw.len()
        )));
    }
    let params = names
        .into_iter()
        .zip(raw)
        .map(|(name, (shape, values))| Ok(Parameter::new(name, Tensor::new(shape, values)?)))
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(spec, kind, params)
}

/// Serializes a network to bytes.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut w = ByteWriter::default();
    write_network(&mut w, net);
    w.buf
}

/// Parses a network; the whole input must be consumed.
pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = ByteReader::new(bytes);
    let net = read_network(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    Ok(net)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(net))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    from_bytes(&fs::read(path)?)
}
