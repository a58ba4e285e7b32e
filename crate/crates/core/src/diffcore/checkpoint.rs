//! `HVRP` parameter checkpoints: magic, u32 version, u32 tensor count, then per
//! tensor u32 name length, name bytes, u32 rank, u32 dims, f64 values.

use super::tensor::Tensor;
use crate::binfmt::{read_dims, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HVRP";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let items: Vec<_> = tensors.into_iter().collect();
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION).len_u32(items.len());
    for (name, t) in items {
        w.len_u32(name.len()).bytes(name.as_bytes()).len_u32(t.rank());
        for &d in &t.dims {
            w.len_u32(d);
        }
        w.f64s(&t.data);
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let (dims, n) = read_dims(&mut r, rank)?;
        let data = r.f64s(n)?;
        out.push((name, Tensor { dims, data }));
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = Tensor::new(vec![2, 3], (0..6).map(|i| i as f64 * 0.1).collect()).unwrap();
        let b = Tensor::new(vec![1], vec![-7.5]).unwrap();
        let bytes = encode_checkpoint([("phi.w", &a), ("b", &b)]);
        assert_eq!(&bytes[..4], b"HVRP");
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, vec![("phi.w".to_string(), a), ("b".to_string(), b)]);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
