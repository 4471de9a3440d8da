//! Detector bundle files.
//!
//! A bundle is the classifier model record, the encoder model record, a
//! `u32` head count, one `GHEAD` section per head and a `BTAIL` trailer:
//!
//! ```text
//! GHEAD  u32 name length, name, f64 weight, u32 K, u32 d,
//!        K × (u32 class, u64 count, d × f64 mean),
//!        d² × f64 covariance (row-major), f64 ridge,
//!        u32 CRC-32 of the section starting at the tag
//! BTAIL  u8 preprocess flag, f64 epsilon,
//!        u32 CRC-32 of the whole file up to here
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::codec::{write_atomic, ByteReader, ByteWriter};
use crate::detector::bundle::DetectorBundle;
use crate::detector::gaussian::GaussianHead;
use crate::error::{Error, Result};
use crate::nets::io::{read_network, write_network};

const HEAD_TAG: &[u8; 5] = b"GHEAD";
const TAIL_TAG: &[u8; 5] = b"BTAIL";

pub fn to_bytes(bundle: &DetectorBundle) -> Vec<u8> {
    let mut w = ByteWriter::default();
    write_network(&mut w, bundle.classifier());
    write_network(&mut w, bundle.encoder());
    w.u32(bundle.heads().len() as u32);
    for (name, head) in bundle.heads() {
        let start = w.buf.len();
        w.bytes(HEAD_TAG);
        w.len_prefixed(name.as_bytes());
        w.f64(bundle.weights()[name]);
        w.u32(head.classes().len() as u32);
        w.u32(head.dim() as u32);
        for ((class, count), mean) in head.classes().iter().zip(head.counts()).zip(head.means()) {
            w.u32(*class as u32);
            w.u64(*count);
            for &v in mean {
                w.f64(v);
            }
        }
        for &v in head.covariance() {
            w.f64(v);
        }
        w.f64(head.ridge());
        w.crc_since(start);
    }
    w.bytes(TAIL_TAG);
    w.u8(u8::from(bundle.preprocess().is_some()));
    w.f64(bundle.preprocess().unwrap_or(0.0));
    w.crc_since(0);
    w.buf
}

fn expect_tag(r: &mut ByteReader<'_>, tag: &[u8; 5]) -> Result<()> {
    let found = r.take(5, "section tag")?;
    if found != tag {
        return Err(Error::BadMagic {
            expected: tag.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<DetectorBundle> {
    let mut r = ByteReader::new(bytes);
    let classifier = read_network(&mut r)?;
    let encoder = read_network(&mut r)?;
    let n_heads = r.u32("head count")? as usize;
    let mut heads = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for _ in 0..n_heads {
        let start = r.pos;
        expect_tag(&mut r, HEAD_TAG)?;
        let name = std::str::from_utf8(r.len_prefixed("tap name")?)
            .map_err(|_| Error::Format("tap name is not UTF-8".into()))?
            .to_string();
        let weight = r.f64("ensemble weight")?;
        let k = r.u32("class count")? as usize;
        let d = r.u32("feature dim")? as usize;
        let (mut classes, mut counts, mut means) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..k {
            classes.push(r.u32("class label")? as usize);
            counts.push(r.u64("class count")?);
            means.push(r.f64s(d, "class mean")?);
        }
        let covariance = r.f64s(d.saturating_mul(d), "covariance")?;
        let ridge = r.f64("ridge")?;
        r.check_crc(start, "gaussian head")?;
        let head = GaussianHead::from_parts(classes, means, counts, covariance, ridge)?;
        if heads.insert(name.clone(), head).is_some() {
            return Err(Error::Format(format!("duplicate head for tap `{name}`")));
        }
        weights.insert(name, weight);
    }
    expect_tag(&mut r, TAIL_TAG)?;
    let flag = r.u8("preprocess flag")?;
    let eps = r.f64("preprocess epsilon")?;
    r.check_crc(0, "bundle")?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    let preprocess = match flag {
        0 => None,
        1 => Some(eps),
        other => return Err(Error::Format(format!("preprocess flag {other}"))),
    };
    DetectorBundle::new(classifier, encoder, heads, Some(weights), preprocess)
}

pub fn save(bundle: &DetectorBundle, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(bundle))
}

pub fn load(path: impl AsRef<Path>) -> Result<DetectorBundle> {
    from_bytes(&fs::read(path)?)
}
