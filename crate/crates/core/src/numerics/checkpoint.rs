//! `SGWT` weight files: magic, version, count, then per parameter a
//! length-prefixed name, rank, dims and `f32` data. A flag byte follows; when
//! set, each parameter's Adam step, first and second moments are appended in
//! the same order.

use super::{Parameter, ParameterStore, Tensor};
use crate::bitstream::{Reader, Writer};
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"SGWT";
const VERSION: u8 = 1;

pub fn save_checkpoint(store: &ParameterStore<f32>, with_adam: bool) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u8(VERSION);
    w.u32(store.len() as u32);
    for (name, p) in store.iter() {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u8(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        for &x in p.value.data() {
            w.f32(x);
        }
    }
    w.u8(with_adam as u8);
    if with_adam {
        for (_, p) in store.iter() {
            w.u64(p.step);
            p.m.iter().for_each(|&x| w.f32(x));
            p.v.iter().for_each(|&x| w.f32(x));
        }
    }
    w.into_bytes()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ParameterStore<f32>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut names = Vec::with_capacity(count.min(4096));
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        r.ensure(n.saturating_mul(4))?;
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Malformed(format!("parameter `{name}`: {e}")))?;
        if store.get(&name).is_some() {
            return Err(Error::Malformed(format!("duplicate parameter `{name}`")));
        }
        store.insert(name.clone(), t);
        names.push(name);
    }
    if r.u8()? == 1 {
        for name in &names {
            let p: &mut Parameter<f32> = store.get_mut(name).expect("inserted above");
            p.step = r.u64()?;
            let n = p.value.numel();
            r.ensure(n.saturating_mul(8))?;
            p.m = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
            p.v = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
        }
    }
    if !r.is_empty() {
        return Err(Error::Malformed("trailing bytes after checkpoint".into()));
    }
    Ok(store)
}
