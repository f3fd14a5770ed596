//! Flat binary checkpoint: versioned header, then one record per parameter
//! (name, trainable flag, shape, raw little-endian f64 data), then optional
//! Adam moments. Byte-for-byte deterministic for a given store, so frozen
//! weights can be compared bitwise across training runs.

use super::adam::{Adam, AdamConfig};
use super::params::ParamStore;
use super::Tensor;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TNSRCKP\x01";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Serialize a store (and optionally optimizer moments) to bytes.
pub fn to_bytes(store: &ParamStore, opt: Option<&Adam>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, store.len() as u32);
    for p in store.iter() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("parameter name too long: '{}'", p.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(p.trainable as u8);
        buf.push(p.value.shape.len() as u8);
        for &d in &p.value.shape {
            put_u32(&mut buf, d as u32);
        }
        put_f64s(&mut buf, &p.value.data);
    }
    match opt {
        Some(adam) => {
            buf.push(1);
            put_f64s(&mut buf, &[adam.cfg.lr, adam.cfg.beta1, adam.cfg.beta2, adam.cfg.eps]);
            put_u64(&mut buf, adam.step_count);
            for (idx, p) in store.iter().enumerate() {
                if p.trainable {
                    put_f64s(&mut buf, &adam.m[idx]);
                    put_f64s(&mut buf, &adam.v[idx]);
                }
            }
        }
        None => buf.push(0),
    }
    Ok(buf)
}

/// Parse checkpoint bytes back into a store and optional optimizer state.
pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, Option<Adam>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} unsupported (expected {VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?
            .to_string();
        let trainable = r.u8()? != 0;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64s(numel)?;
        store.insert(&name, Tensor::from_vec(&shape, data)?, trainable)?;
    }
    let opt = if r.u8()? == 1 {
        let hp = r.f64s(4)?;
        let cfg = AdamConfig { lr: hp[0], beta1: hp[1], beta2: hp[2], eps: hp[3] };
        let step_count = r.u64()?;
        let mut adam = Adam::new(cfg, &store);
        adam.step_count = step_count;
        for (idx, p) in store.iter().enumerate() {
            if p.trainable {
                adam.m[idx] = r.f64s(p.value.numel())?;
                adam.v[idx] = r.f64s(p.value.numel())?;
            }
        }
        Some(adam)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((store, opt))
}

pub fn save(store: &ParamStore, opt: Option<&Adam>, path: &Path) -> Result<()> {
    let bytes = to_bytes(store, opt)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Option<Adam>)> {
    let mut f = std::fs::File::open(path).map_err(|e| {
        Error::Dependency(format!("checkpoint '{}' not readable: {e}", path.display()))
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

/// Check that a loaded store matches the running configuration: same names
/// in the same order, same shapes, same trainable flags.
pub fn validate_compatible(expected: &ParamStore, loaded: &ParamStore) -> Result<()> {
    if expected.len() != loaded.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            loaded.len(),
            expected.len()
        )));
    }
    for (e, l) in expected.iter().zip(loaded.iter()) {
        if e.name != l.name {
            return Err(Error::Format(format!(
                "parameter order mismatch: '{}' vs '{}'",
                l.name, e.name
            )));
        }
        if e.value.shape != l.value.shape {
            return Err(Error::Format(format!(
                "shape mismatch for '{}': {:?} vs {:?}",
                e.name, l.value.shape, e.value.shape
            )));
        }
        if e.trainable != l.trainable {
            return Err(Error::Format(format!("trainable flag mismatch for '{}'", e.name)));
        }
    }
    Ok(())
}
