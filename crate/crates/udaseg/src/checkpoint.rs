//! "UDAS" binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   b"UDAS"
//! version u32 (= 1)
//! count   u32
//! count × { name_len u32, name utf-8, rank u32, dims u64 × rank, data f64 × Π dims }
//! ```
//!
//! A run checkpoint holds all three networks with their parameter names
//! prefixed by `g.`, `d1.` and `d2.`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use udaseg_core::nets::Network;
use udaseg_core::train::Models;
use udaseg_core::Tensor;

use crate::error::{IoContext, Result, UdasError};

pub const MAGIC: &[u8; 4] = b"UDAS";
pub const VERSION: u32 = 1;

fn bad(message: impl Into<String>) -> UdasError {
    UdasError::Checkpoint(message.into())
}

pub fn encode(entries: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0; N];
        self.inner.read_exact(&mut buf).map_err(|_| bad("truncated file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        self.bytes().map(u32::from_le_bytes)
    }
}

pub fn decode(reader: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { inner: reader };
    if &r.bytes::<4>()? != MAGIC {
        return Err(bad("bad magic, not a UDAS checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let mut name = vec![0; len];
        r.inner.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.bytes().map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("{name}: shape overflows")))?;
        let data = (0..numel)
            .map(|_| r.bytes().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|_| bad("read error"))? != 0 {
        return Err(bad("trailing bytes after the last parameter"));
    }
    Ok(entries)
}

fn prefixed<'a>(prefix: &str, net: &'a Network) -> impl Iterator<Item = (String, &'a Tensor)> + 'a {
    let prefix = prefix.to_string();
    net.params
        .iter()
        .map(move |p| (format!("{prefix}.{}", p.name), &p.value))
}

pub fn save_models(path: &Path, models: &Models) -> Result<()> {
    let entries: Vec<_> = prefixed("g", &models.g)
        .chain(prefixed("d1", &models.d1))
        .chain(prefixed("d2", &models.d2))
        .collect();
    let mut file = fs::File::create(path).at(path)?;
    file.write_all(&encode(&entries)).at(path)?;
    Ok(())
}

/// Overwrites the parameters of `models` with those stored at `path`.
/// Names and shapes must match exactly.
pub fn load_models(path: &Path, models: &mut Models) -> Result<()> {
    let entries = decode(std::io::BufReader::new(fs::File::open(path).at(path)?))?;
    let expected = models.g.params.len() + models.d1.params.len() + models.d2.params.len();
    if entries.len() != expected {
        return Err(bad(format!("{} parameters stored, {expected} expected", entries.len())));
    }
    for (name, tensor) in entries {
        let (prefix, local) = name
            .split_once('.')
            .ok_or_else(|| bad(format!("unprefixed parameter {name}")))?;
        let net = match prefix {
            "g" => &mut models.g,
            "d1" => &mut models.d1,
            "d2" => &mut models.d2,
            _ => return Err(bad(format!("unknown network prefix in {name}"))),
        };
        let param = net
            .param_mut(local)
            .ok_or_else(|| bad(format!("no parameter named {name}")))?;
        if param.value.shape() != tensor.shape() {
            return Err(bad(format!(
                "{name}: stored shape {:?}, model shape {:?}",
                tensor.shape(),
                param.value.shape()
            )));
        }
        param.value = tensor;
    }
    Ok(())
}
