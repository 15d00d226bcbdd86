//! Binary store of externally computed contextual embeddings.
//!
//! Layout (little endian): magic `PCEMB1\n`, `u32` record count, then per
//! record `u16` id length, UTF-8 id, `u32` N, `u32` d_c and `(N + 1) * d_c`
//! `f32` values with row 0 holding the `[CLS]` vector.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::ContextualEncoding;
use crate::binio::{read_exact, read_u16, read_u32};
use crate::error::{PunError, Result};
use crate::numerics::{Real, Tensor};

pub const PCEMB_MAGIC: &[u8; 7] = b"PCEMB1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub n_tokens: usize,
    pub dim: usize,
    /// `(n_tokens + 1) * dim` values, `[CLS]` first.
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedEmbeddings {
    records: BTreeMap<String, EmbeddingRecord>,
    order: Vec<String>,
}

impl PrecomputedEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, record: EmbeddingRecord) -> Result<()> {
        let id = id.into();
        if record.data.len() != (record.n_tokens + 1) * record.dim {
            return Err(PunError::Consistency(format!(
                "record {id}: {} values for N={} d_c={}",
                record.data.len(),
                record.n_tokens,
                record.dim
            )));
        }
        if let Some(d) = self.dim() {
            if d != record.dim {
                return Err(PunError::Consistency(format!(
                    "record {id} has d_c={} but the store uses {d}",
                    record.dim
                )));
            }
        }
        if self.records.contains_key(&id) {
            return Err(PunError::Consistency(format!("duplicate example id {id}")));
        }
        self.records.insert(id.clone(), record);
        self.order.push(id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.values().next().map(|r| r.dim)
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.get(id)
    }

    /// Stored matrices for `id`, checked against the sentence length.
    pub fn encode<T: Real>(&self, id: &str, n_tokens: usize) -> Result<ContextualEncoding<T>> {
        let rec = self
            .records
            .get(id)
            .ok_or_else(|| PunError::Lookup(format!("no precomputed embedding for id {id:?}")))?;
        if rec.n_tokens != n_tokens {
            return Err(PunError::Consistency(format!(
                "example {id}: stored N={} but sentence has {n_tokens} tokens",
                rec.n_tokens
            )));
        }
        let d = rec.dim;
        let cls = Tensor::<f32>::matrix(1, d, rec.data[..d].to_vec())?.cast();
        let tokens = Tensor::<f32>::matrix(n_tokens, d, rec.data[d..].to_vec())?.cast();
        Ok(ContextualEncoding { cls, tokens })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PCEMB_MAGIC)?;
        w.write_all(&(self.order.len() as u32).to_le_bytes())?;
        for id in &self.order {
            let rec = &self.records[id];
            let idb = id.as_bytes();
            let len = u16::try_from(idb.len())
                .map_err(|_| PunError::Format(format!("example id too long: {id}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(idb)?;
            w.write_all(&(rec.n_tokens as u32).to_le_bytes())?;
            w.write_all(&(rec.dim as u32).to_le_bytes())?;
            for v in &rec.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != PCEMB_MAGIC {
            return Err(PunError::Format("bad magic, not a PCEMB1 file".into()));
        }
        let count = read_u32(&mut r, "record count")?;
        let mut out = PrecomputedEmbeddings::new();
        for k in 0..count {
            let len = read_u16(&mut r, "id length")? as usize;
            let mut idb = vec![0u8; len];
            read_exact(&mut r, &mut idb, "example id")?;
            let id = String::from_utf8(idb)
                .map_err(|_| PunError::Format(format!("record {k}: id is not UTF-8")))?;
            let n_tokens = read_u32(&mut r, "N")? as usize;
            let dim = read_u32(&mut r, "d_c")? as usize;
            let count = (n_tokens + 1)
                .checked_mul(dim)
                .ok_or_else(|| PunError::Format(format!("record {id}: size overflow")))?;
            let mut bytes = vec![0u8; count * 4];
            read_exact(&mut r, &mut bytes, "embedding data")?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.insert(
                id,
                EmbeddingRecord {
                    n_tokens,
                    dim,
                    data,
                },
            )?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| PunError::path(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| PunError::path(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PrecomputedEmbeddings {
        let mut s = PrecomputedEmbeddings::new();
        s.insert(
            "b",
            EmbeddingRecord {
                n_tokens: 2,
                dim: 3,
                data: (0..9).map(|i| i as f32 * 0.5 - 1.0).collect(),
            },
        )
        .unwrap();
        s.insert(
            "a",
            EmbeddingRecord {
                n_tokens: 1,
                dim: 3,
                data: vec![f32::MIN_POSITIVE, -0.0, 1e30, 7.0, 8.0, 9.0],
            },
        )
        .unwrap();
        s
    }

    #[test]
    fn bytes_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let back = PrecomputedEmbeddings::read(&buf[..]).unwrap();
        let mut buf2 = Vec::new();
        back.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(
            back.get("a").unwrap().data[1].to_bits(),
            (-0.0f32).to_bits()
        );
    }

    #[test]
    fn encode_returns_stored_rows() {
        let s = sample();
        let e = s.encode::<f32>("b", 2).unwrap();
        assert_eq!(e.cls.data(), &[-1.0, -0.5, 0.0]);
        assert_eq!(e.tokens.shape(), &[2, 3]);
        assert_eq!(e.tokens.data(), &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn errors() {
        let s = sample();
        assert!(matches!(s.encode::<f32>("zz", 1), Err(PunError::Lookup(_))));
        assert!(matches!(
            s.encode::<f32>("b", 3),
            Err(PunError::Consistency(_))
        ));

        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            PrecomputedEmbeddings::read(truncated),
            Err(PunError::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            PrecomputedEmbeddings::read(&bad[..]),
            Err(PunError::Format(_))
        ));
    }
}
