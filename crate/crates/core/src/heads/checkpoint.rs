//! Checkpoint files.
//!
//! Layout (little endian): magic `PCKPT1\n`, `u32` tensor count, then per
//! tensor `u16` name length, UTF-8 name, `u8` rank, `rank` x `u32` dims and
//! the `f32` data; finally a `u32` length and a UTF-8 text blob holding the
//! resolved configuration followed by a `[vocab]` section, one word per line.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::PunModel;
use crate::binio::{read_exact, read_u16, read_u32};
use crate::config::RunConfig;
use crate::encoder::{PrecomputedEmbeddings, Vocabulary};
use crate::error::{PunError, Result};
use crate::numerics::{Real, Tensor};
use crate::phonodict::PhonemeInventory;

pub const PCKPT_MAGIC: &[u8; 7] = b"PCKPT1\n";
const VOCAB_MARKER: &str = "[vocab]\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub config_blob: String,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    w.write_all(PCKPT_MAGIC)?;
    w.write_all(&(ckpt.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &ckpt.tensors {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len())
            .map_err(|_| PunError::Format(format!("tensor name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(nb)?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| PunError::Format(format!("tensor {name} has too many dimensions")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let blob = ckpt.config_blob.as_bytes();
    w.write_all(&(blob.len() as u32).to_le_bytes())?;
    w.write_all(blob)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 7];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != PCKPT_MAGIC {
        return Err(PunError::Format(
            "bad magic, not a PCKPT1 checkpoint".into(),
        ));
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = read_u16(&mut r, "name length")? as usize;
        let mut nb = vec![0u8; len];
        read_exact(&mut r, &mut nb, "tensor name")?;
        let name = String::from_utf8(nb)
            .map_err(|_| PunError::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, "dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| PunError::Format(format!("tensor {name}: size overflow")))?;
        let mut bytes = vec![0u8; n * 4];
        read_exact(&mut r, &mut bytes, "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    let len = read_u32(&mut r, "config length")? as usize;
    let mut blob = vec![0u8; len];
    read_exact(&mut r, &mut blob, "config blob")?;
    let config_blob =
        String::from_utf8(blob).map_err(|_| PunError::Format("config blob is not UTF-8".into()))?;
    Ok(Checkpoint {
        tensors,
        config_blob,
    })
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| PunError::path(path, e))?;
        read_checkpoint(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| PunError::path(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        write_checkpoint(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(self, &mut buf).expect("writing to memory");
        buf
    }

    /// Splits the blob into the run configuration and the vocabulary.
    pub fn config_and_vocab(&self) -> Result<(RunConfig, Vocabulary)> {
        let (cfg, vocab) = match self.config_blob.split_once(VOCAB_MARKER) {
            Some((c, v)) => (c, Some(v)),
            None => (self.config_blob.as_str(), None),
        };
        let config = RunConfig::from_text(cfg)?;
        let vocab = match vocab {
            Some(v) => Vocabulary::from_words(v.lines().filter(|l| !l.is_empty())),
            None => Vocabulary::default(),
        };
        Ok((config, vocab))
    }
}

impl<T: Real> PunModel<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.cast::<f32>()))
            .collect();
        let mut config_blob = self.config.to_text();
        config_blob.push_str(VOCAB_MARKER);
        for w in self.vocab.words() {
            config_blob.push_str(w);
            config_blob.push('\n');
        }
        Checkpoint {
            tensors,
            config_blob,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }
}

impl PunModel<f32> {
    /// Rebuilds the architecture from the stored configuration and fills in
    /// every tensor. Names and shapes must match exactly.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        inventory: &PhonemeInventory,
        precomputed: Option<Arc<PrecomputedEmbeddings>>,
    ) -> Result<Self> {
        let (mut config, vocab) = ckpt.config_and_vocab()?;
        // stored vectors already include any phoneme initialization
        let phoneme_init = std::mem::take(&mut config.phoneme_init);
        let mut model = PunModel::new(config, vocab, inventory, precomputed)?;
        model.config.phoneme_init = phoneme_init;
        if ckpt.tensors.len() != model.params.len() {
            return Err(PunError::Consistency(format!(
                "checkpoint has {} tensors, model declares {}",
                ckpt.tensors.len(),
                model.params.len()
            )));
        }
        for (name, t) in &ckpt.tensors {
            model.params.assign(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn load(
        path: impl AsRef<Path>,
        inventory: &PhonemeInventory,
        precomputed: Option<Arc<PrecomputedEmbeddings>>,
    ) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, inventory, precomputed)
    }
}
