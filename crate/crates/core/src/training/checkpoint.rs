//! Little-endian layout:
//!
//! ```text
//! "CHAE" u32:version
//! u32:len config-json
//! u64:vocab_hash u64:step
//! [u8;32]:rng_seed u64:rng_stream u128:rng_word_pos
//! u32:n u32*n:order u64:cursor
//! f64*9:alpha u64:adam_step
//! u32:count then count blocks of u32:len name u32:rows u32:cols f64*(rows*cols)
//! u32:crc32 of everything above
//! ```
//!
//! Tensor blocks hold the parameters in store order, then `adam.m.<name>`
//! and `adam.v.<name>` for each parameter.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Result, TrainError};
use crate::codec::{EmotionLabel, Vocabulary};
use crate::model::{ModelConfig, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CHAE";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub adam_step: u64,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub vocab_hash: u64,
    pub step: u64,
    pub rng: RngState,
    /// Sampler order and position within it.
    pub order: Vec<u32>,
    pub cursor: u64,
    pub alpha: [f64; EmotionLabel::COUNT],
}

impl Checkpoint {
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let expected = vocab.hash();
        if self.vocab_hash != expected {
            return Err(TrainError::VocabMismatch {
                found: self.vocab_hash,
                expected,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        put_u32(&mut w, config.len());
        w.extend_from_slice(&config);
        w.extend_from_slice(&self.vocab_hash.to_le_bytes());
        w.extend_from_slice(&self.step.to_le_bytes());
        w.extend_from_slice(&self.rng.seed);
        w.extend_from_slice(&self.rng.stream.to_le_bytes());
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u32(&mut w, self.order.len());
        for &o in &self.order {
            w.extend_from_slice(&o.to_le_bytes());
        }
        w.extend_from_slice(&self.cursor.to_le_bytes());
        for a in self.alpha {
            w.extend_from_slice(&a.to_le_bytes());
        }
        w.extend_from_slice(&self.adam_step.to_le_bytes());

        let names = self.params.names();
        put_u32(&mut w, 3 * names.len());
        for (name, t) in self.params.iter() {
            put_tensor(&mut w, name, t);
        }
        for (name, t) in names.iter().zip(&self.adam_m) {
            put_tensor(&mut w, &format!("adam.m.{name}"), t);
        }
        for (name, t) in names.iter().zip(&self.adam_v) {
            put_tensor(&mut w, &format!("adam.v.{name}"), t);
        }
        let crc = crc32fast::hash(&w);
        w.extend_from_slice(&crc.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
            return Err(TrainError::Integrity("not a checkpoint file".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(TrainError::Integrity("checksum mismatch (truncated or corrupt)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(len)?)
            .map_err(|e| TrainError::Integrity(format!("config block: {e}")))?;
        let vocab_hash = r.u64()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let n = r.u32()? as usize;
        let order = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let cursor = r.u64()?;
        let mut alpha = [0.0; EmotionLabel::COUNT];
        for a in &mut alpha {
            *a = r.f64()?;
        }
        let adam_step = r.u64()?;

        let count = r.u32()? as usize;
        if count % 3 != 0 {
            return Err(TrainError::Integrity(format!("{count} tensor blocks is not a multiple of 3")));
        }
        let mut blocks = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        if r.pos != body.len() {
            return Err(TrainError::Integrity("trailing bytes after tensor blocks".into()));
        }
        let v_blocks = blocks.split_off(2 * count / 3);
        let m_blocks = blocks.split_off(count / 3);
        let mut params = crate::model::Model::new(config.clone(), 0)?.params().clone();
        let expect_prefix = |blocks: &[(String, Tensor)], prefix: &str| -> Result<Vec<Tensor>> {
            blocks
                .iter()
                .zip(params.names())
                .map(|((name, t), want)| {
                    if *name != format!("{prefix}{want}") {
                        return Err(TrainError::Integrity(format!("expected block {prefix}{want}, found {name}")));
                    }
                    Ok(t.clone())
                })
                .collect()
        };
        let adam_m = expect_prefix(&m_blocks, "adam.m.")?;
        let adam_v = expect_prefix(&v_blocks, "adam.v.")?;
        params.assign(blocks).map_err(TrainError::Integrity)?;
        Ok(Self {
            config,
            params,
            adam_step,
            adam_m,
            adam_v,
            vocab_hash,
            step,
            rng: RngState { seed, stream, word_pos },
            order,
            cursor,
            alpha,
        })
    }
}

fn put_u32(w: &mut Vec<u8>, n: usize) {
    w.extend_from_slice(&(u32::try_from(n).expect("fits in u32")).to_le_bytes());
}

fn put_tensor(w: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(w, name.len());
    w.extend_from_slice(name.as_bytes());
    put_u32(w, t.rows());
    put_u32(w, t.cols());
    for x in t.data() {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Integrity("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| TrainError::Integrity("tensor name is not UTF-8".into()))?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| TrainError::Integrity(format!("tensor {name}: bad shape {rows}x{cols}")))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(rows, cols, data).map_err(|e| TrainError::Integrity(e.to_string()))?;
        Ok((name, t))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
