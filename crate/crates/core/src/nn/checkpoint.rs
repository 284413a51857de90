//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! magic "MSEPCKPT" | version | param count
//! per parameter: name length | utf-8 name | rank | dims... | f32 LE data
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Params, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSEPCKPT";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(params: &Params<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        b.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(b))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Params<f32>> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("name is not utf-8".into()))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params
            .register(name, Tensor::from_vec(&shape, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save<T: Scalar>(params: &Params<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Params<f32>> {
    let mut f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::CheckpointNotFound(path.to_owned()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Copies every checkpointed tensor into `target` by name. Names and shapes
/// must match exactly in both directions.
pub fn restore_into<T: Scalar>(target: &mut Params<T>, loaded: &Params<f32>) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} parameters, checkpoint has {}",
            target.len(),
            loaded.len()
        )));
    }
    for (_, name, t) in loaded.iter() {
        target
            .assign(name, t.cast())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..3), any::<u32>()), 1..5)
        ) {
            let mut p = Params::<f32>::new();
            for (i, (shape, bits)) in tensors.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|k| f32::from_bits(bits.wrapping_add(k as u32 * 7919) & 0x7f7f_ffff)).collect();
                p.register(format!("p{i}"), Tensor::from_vec(shape, data).unwrap()).unwrap();
            }
            let bytes = encode(&p);
            let q = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&q), bytes);
            for ((_, a, x), (_, b, y)) in p.iter().zip(q.iter()) {
                prop_assert_eq!(a, b);
                prop_assert_eq!(x.shape(), y.shape());
                let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NOTACKPT").is_err());
        let mut p = Params::<f32>::new();
        p.register("w", Tensor::zeros(&[2, 2])).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert_eq!(err.category(), "checkpoint-not-found");
    }
}
