//! `TSR1` binary tensor files.
//!
//! Layout, all little-endian: magic `TSR1`, `u32` rank, `rank × u64` dims,
//! then the `f64` payload in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSR1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Parse {
                offset: self.pos as u64,
                msg: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: "bad magic, expected TSR1".into(),
        });
    }
    let rank = cur.u32("rank")? as usize;
    let mut shape = Vec::with_capacity(rank.min(64));
    let mut numel: u64 = 1;
    for _ in 0..rank {
        let at = cur.pos as u64;
        let d = cur.u64("dimension")?;
        numel = numel.checked_mul(d).ok_or_else(|| Error::Parse {
            offset: at,
            msg: "element count overflows".into(),
        })?;
        shape.push(d as usize);
    }
    let payload_at = cur.pos as u64;
    let payload_len = numel
        .checked_mul(8)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Parse {
            offset: payload_at,
            msg: "payload size overflows".into(),
        })?;
    let payload = cur.take(payload_len, "payload")?;
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            offset: cur.pos as u64,
            msg: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tsr(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tsr(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"TSR1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 40);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&t);
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 16),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode(b"TSR"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode(b"XXXX\0\0\0\0"), Err(Error::Parse { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&Tensor::scalar(1.0));
        bytes.push(0);
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            shape in proptest::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1).rotate_left(17) & !(0x7ffu64 << 52) | (0x3ffu64 << 52)))
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
