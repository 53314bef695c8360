//! Binary checkpoint format (`.esnn`).
//!
//! All integers little-endian:
//!
//! ```text
//! "ESNN"            4 bytes magic
//! version           u32 (= 1)
//! arch kind         u8  (0 = mlp, 1 = smallconv)
//! arch fields       4 x u32 (mlp: input_dim, hidden, depth, 0;
//!                            smallconv: side, c1, c2, dense)
//! n_classes         u32
//! block count       u32 (blocks by depth, head last)
//! per block:
//!   id length       u16, then id bytes (UTF-8)
//!   tensor count    u32
//!   per tensor:     ndim u32, dims ndim x u32, payload numel x f64
//! crc32             u32, IEEE CRC-32 of every preceding byte
//! ```
//!
//! Trainable flags are run state and are not stored; a loaded model has
//! every block trainable.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::{Arch, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ESNN";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let (kind, fields) = match model.arch() {
        Arch::Mlp {
            input_dim,
            hidden,
            depth,
        } => (0u8, [input_dim, hidden, depth, 0]),
        Arch::SmallConv { side, c1, c2, dense } => (1u8, [side, c1, c2, dense]),
    };
    buf.push(kind);
    for f in fields {
        buf.extend_from_slice(&(f as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.n_classes() as u32).to_le_bytes());
    buf.extend_from_slice(&((model.n_blocks() + 1) as u32).to_le_bytes());
    for idx in 0..=model.n_blocks() {
        let block = model.block_at(idx);
        buf.extend_from_slice(&(block.id.len() as u16).to_le_bytes());
        buf.extend_from_slice(block.id.as_bytes());
        buf.extend_from_slice(&(block.params.len() as u32).to_le_bytes());
        for t in &block.params {
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 8 + 4 {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checkpoint CRC mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.take(1)?[0];
    let f = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
    let arch = match kind {
        0 => Arch::Mlp {
            input_dim: f[0],
            hidden: f[1],
            depth: f[2],
        },
        1 => Arch::SmallConv {
            side: f[0],
            c1: f[1],
            c2: f[2],
            dense: f[3],
        },
        k => return Err(Error::Format(format!("unknown arch kind {k}"))),
    };
    let n_classes = r.u32()? as usize;
    let n_blocks = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_blocks);
    let mut ids = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("block id is not UTF-8".into()))?
            .to_string();
        let n_tensors = r.u32()? as usize;
        let mut ts = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ts.push(Tensor::from_vec(&shape, data)?);
        }
        ids.push(id);
        params.push(ts);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes before CRC".into()));
    }
    let model = Model::from_params(arch, n_classes, params)?;
    if model.block_ids() != ids {
        return Err(Error::Format(format!("block ids {ids:?} do not match architecture")));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PrngStreams;

    #[test]
    fn roundtrip_preserves_parameters_bitwise() {
        for arch in [
            Arch::Mlp {
                input_dim: 5,
                hidden: 4,
                depth: 2,
            },
            Arch::SmallConv {
                side: 8,
                c1: 2,
                c2: 2,
                dense: 3,
            },
        ] {
            let m = Model::new(arch, 3, &PrngStreams::new(11)).unwrap();
            let back = decode(&encode(&m)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn header_layout_is_stable() {
        let m = Model::zeros(
            Arch::Mlp {
                input_dim: 2,
                hidden: 3,
                depth: 1,
            },
            2,
        )
        .unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"ESNN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 0);
        assert_eq!(&bytes[9..13], &[2, 0, 0, 0]);
        assert_eq!(&bytes[25..29], &[2, 0, 0, 0]);
        assert_eq!(&bytes[29..33], &[2, 0, 0, 0]);
        // block0: id "block0", 2 tensors: [2,3] and [3]; head: "head", [3,2] and [2]
        let expected_len = 33 + (2 + 6 + 4 + (4 + 8 + 48) + (4 + 4 + 24)) + (2 + 4 + 4 + (4 + 8 + 48) + (4 + 4 + 16)) + 4;
        assert_eq!(bytes.len(), expected_len);
    }

    #[test]
    fn corruption_is_detected() {
        let m = Model::new(
            Arch::Mlp {
                input_dim: 2,
                hidden: 3,
                depth: 1,
            },
            2,
            &PrngStreams::new(1),
        )
        .unwrap();
        let mut bytes = encode(&m);
        bytes[40] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bad_magic = encode(&m);
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Format(_))));
        assert!(matches!(decode(&encode(&m)[..20]), Err(Error::Format(_))));
    }
}
