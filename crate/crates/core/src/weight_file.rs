//! Binary weight files.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "FSTX"  version:u32  alpha:f32  expansion:u32  bn_eps:f32  count:u32
//! count x { name_len:u32  name:utf8  rank:u32  dims:u32[rank]  data:f32[prod(dims)] }
//! ```
//!
//! Version 1 weights expect input pixels normalised as `x / 127.5 - 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NamedTensor, WeightStore};

pub const MAGIC: &[u8; 4] = b"FSTX";
pub const FORMAT_VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

pub fn write_weights<W: Write>(mut out: W, store: &WeightStore) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&store.alpha().to_le_bytes())?;
    out.write_all(&store.expansion_factor().to_le_bytes())?;
    out.write_all(&store.bn_eps().to_le_bytes())?;
    out.write_all(&len_u32(store.tensors().len())?.to_le_bytes())?;
    for t in store.tensors() {
        out.write_all(&len_u32(t.name.len())?.to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&len_u32(t.dims.len())?.to_le_bytes())?;
        for &d in &t.dims {
            out.write_all(&len_u32(d)?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("value {n} does not fit in u32")))
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated weight file reading {what}: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(what)?))
    }

    fn vec(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        (&mut self.inner)
            .take(len as u64)
            .read_to_end(&mut v)
            .map_err(|e| Error::Format(format!("reading {what}: {e}")))?;
        if v.len() != len {
            return Err(Error::Format(format!("truncated weight file reading {what}")));
        }
        Ok(v)
    }
}

pub fn read_weights<R: Read>(input: R) -> Result<WeightStore> {
    let mut c = Cursor { inner: input };
    let magic: [u8; 4] = c.bytes("magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let alpha = c.f32("alpha")?;
    let expansion = c.u32("expansion factor")?;
    let bn_eps = c.f32("bn eps")?;
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let name_len = c.u32("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Format(format!("tensor {i}: name length {name_len} too large")));
        }
        let name = String::from_utf8(c.vec(name_len as usize, "tensor name")?)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?;
        let rank = c.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("tensor `{name}`: rank {rank} too large")));
        }
        let dims = (0..rank).map(|_| c.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor `{name}`: size overflow")))?;
        let raw = c.vec(numel, &format!("payload of `{name}`"))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push(NamedTensor::new(name, dims, data)?);
    }
    let mut trailing = [0u8; 1];
    if c.inner.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    WeightStore::new(alpha, expansion, bn_eps, tensors)
}

pub fn save(path: impl AsRef<Path>, store: &WeightStore) -> Result<()> {
    let path = path.as_ref();
    write_weights(BufWriter::new(File::create(path).map_err(Error::file(path))?), store)
}

pub fn load(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    read_weights(BufReader::new(File::open(path).map_err(Error::file(path))?))
}
