use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::tensor::{Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors in a fixed, config-determined order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    fn push(&mut self, name: String, t: Tensor) -> ParamId {
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct EncLayerIds {
    pub attn: AttnIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayerIds {
    pub self_attn: AttnIds,
    pub norm1: NormIds,
    pub cross_attn: AttnIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: ParamId,
    pub enc_emb_norm: NormIds,
    pub dec_emb_norm: NormIds,
    pub enc: Vec<EncLayerIds>,
    pub dec: Vec<DecLayerIds>,
    pub w_voc: ParamId,
    pub b_voc: ParamId,
    pub w_p: ParamId,
    /// One `(weight, bias)` pair per emotion head.
    pub emo: Vec<(ParamId, ParamId)>,
}

struct Init {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Init {
    fn xavier(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        let t = Tensor::new(rows, cols, data).expect("sized");
        self.store.push(name, t)
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.store.push(name, Tensor::zeros(rows, cols))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.store.push(format!("{prefix}.gain"), Tensor::filled(1, d, 1.0)),
            bias: self.zeros(format!("{prefix}.bias"), 1, d),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIds {
        AttnIds {
            wq: self.xavier(format!("{prefix}.wq"), d, d),
            bq: self.zeros(format!("{prefix}.bq"), 1, d),
            wk: self.xavier(format!("{prefix}.wk"), d, d),
            bk: self.zeros(format!("{prefix}.bk"), 1, d),
            wv: self.xavier(format!("{prefix}.wv"), d, d),
            bv: self.zeros(format!("{prefix}.bv"), 1, d),
            wo: self.xavier(format!("{prefix}.wo"), d, d),
            bo: self.zeros(format!("{prefix}.bo"), 1, d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize) -> FfnIds {
        FfnIds {
            w1: self.xavier(format!("{prefix}.w1"), d, ff),
            b1: self.zeros(format!("{prefix}.b1"), 1, ff),
            w2: self.xavier(format!("{prefix}.w2"), ff, d),
            b2: self.zeros(format!("{prefix}.b2"), 1, d),
        }
    }
}

/// Xavier-uniform weights, zero biases, unit norm gains.
pub(crate) fn initialize(config: &ModelConfig, seed: u64) -> (ParamStore, Layout) {
    let mut init = Init {
        store: ParamStore::default(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = config.d_model;
    let tok_emb = init.xavier("embed.tokens".into(), config.vocab_size, d);
    let enc_emb_norm = init.norm("encoder.embed_norm", d);
    let dec_emb_norm = init.norm("decoder.embed_norm", d);
    let enc = (0..config.n_enc_layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            EncLayerIds {
                attn: init.attn(&format!("{p}.self_attn"), d),
                norm1: init.norm(&format!("{p}.norm1"), d),
                ffn: init.ffn(&format!("{p}.ffn"), d, config.d_ff),
                norm2: init.norm(&format!("{p}.norm2"), d),
            }
        })
        .collect();
    let dec = (0..config.n_dec_layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            DecLayerIds {
                self_attn: init.attn(&format!("{p}.self_attn"), d),
                norm1: init.norm(&format!("{p}.norm1"), d),
                cross_attn: init.attn(&format!("{p}.cross_attn"), d),
                norm2: init.norm(&format!("{p}.norm2"), d),
                ffn: init.ffn(&format!("{p}.ffn"), d, config.d_ff),
                norm3: init.norm(&format!("{p}.norm3"), d),
            }
        })
        .collect();
    let w_voc = init.xavier("head.w_voc".into(), d, config.vocab_size);
    let b_voc = init.zeros("head.b_voc".into(), 1, config.vocab_size);
    let w_p = init.xavier("copy.w_p".into(), 3 * d, 1);
    let emo = (0..config.k)
        .map(|i| {
            (
                init.xavier(format!("emotion.{i}.w"), d, config.n_emotions),
                init.zeros(format!("emotion.{i}.b"), 1, config.n_emotions),
            )
        })
        .collect();
    let layout = Layout {
        tok_emb,
        enc_emb_norm,
        dec_emb_norm,
        enc,
        dec,
        w_voc,
        b_voc,
        w_p,
        emo,
    };
    (init.store, layout)
}

impl ParamStore {
    /// Replaces tensor values from `(name, tensor)` pairs, checking that
    /// names and shapes line up with this store exactly.
    pub fn assign(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), String> {
        if entries.len() != self.tensors.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                entries.len()
            ));
        }
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(format!("tensor {i}: expected {:?}, found {name:?}", self.names[i]));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    self.tensors[i].shape(),
                    t.shape()
                ));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}
