//! The full recognizer: contextual encoder, pronunciation attention, fusion
//! and the two classification heads.
//!
//! The detection head reads only `[cls ; sentence]` and the location head
//! reads only the attended token rows.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, PCKPT_MAGIC};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

use std::sync::Arc;

use crate::config::{EncoderKind, LocateMode, RunConfig, Task};
use crate::data::Example;
use crate::encoder::{
    EncodedVars, PrecomputedEmbeddings, ToyTransformer, ToyTransformerConfig, Vocabulary,
};
use crate::error::{PunError, Result};
use crate::fusion::{self, SelfAttention};
use crate::numerics::{init_glorot, seeded_rng, Graph, ParamId, Params, Real, Rng64, Tensor, Var};
use crate::phonattn::{self, PhonAttn, PronunciationVars};
use crate::phonodict::{PhonemeInventory, Pronunciation, PronunciationLexicon};

/// Fully connected layer producing two logits.
#[derive(Debug, Clone, Copy)]
pub struct BinaryHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl BinaryHead {
    fn declare<T: Real>(name: &str, input: usize, params: &mut Params<T>, rng: &mut Rng64) -> Self {
        BinaryHead {
            weight: params.insert(format!("{name}.w"), init_glorot(rng, input, 2)),
            bias: params.insert(format!("{name}.b"), Tensor::zeros(&[1, 2])),
        }
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[self.weight.index()])?;
        g.add_row(y, vars[self.bias.index()])
    }
}

/// Sentence-level head over `T^J_[CLS]` (`d_C + d_J` inputs).
pub type DetectionHead = BinaryHead;
/// Token-level head over `T^J_{i,[ATT]}` (`d_J` inputs).
pub type LocationHead = BinaryHead;

#[derive(Debug, Clone)]
pub enum ContextEncoder {
    Toy(ToyTransformer),
    Precomputed(Arc<PrecomputedEmbeddings>),
}

/// A sentence ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub prons: Vec<Pronunciation>,
    pub label: usize,
    pub pun_index: Option<usize>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Train-time randomness for dropout.
pub struct DropoutCtx<'a> {
    pub rng: &'a mut Rng64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub encoded: EncodedVars,
    pub pronunciation: Option<PronunciationVars>,
    pub joint: Var,
    pub attention: SelfAttention,
    pub cls_joint: Var,
    pub detection_logits: Var,
    pub location_logits: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub label: usize,
    pub probability: [T; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location<T> {
    pub indices: Vec<usize>,
    /// Positive-class logit per token.
    pub scores: Vec<T>,
    /// Positive-class probability per token.
    pub probabilities: Vec<T>,
}

/// Everything an eval-mode pass exposes, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis<T> {
    pub detection: Detection<T>,
    pub location: Location<T>,
    /// `N x d_J` per-dimension token weights.
    pub alpha_s: Tensor<T>,
    /// Phoneme weights per token (empty without phonemes).
    pub alpha_p: Vec<Vec<T>>,
}

impl<T: Real> Analysis<T> {
    /// Mean of each token's weight vector.
    pub fn salience(&self) -> Vec<T> {
        let n = T::from_usize(self.alpha_s.cols().max(1)).expect("fits");
        (0..self.alpha_s.rows())
            .map(|i| self.alpha_s.row_slice(i).iter().copied().sum::<T>() / n)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PunModel<T> {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub params: Params<T>,
    pub encoder: ContextEncoder,
    pub phon: Option<PhonAttn>,
    pub detection_head: DetectionHead,
    pub location_head: LocationHead,
    pub d_c: usize,
    pub d_j: usize,
}

impl<T: Real> PunModel<T> {
    /// Builds a freshly initialized model. The RNG is seeded from `config.seed`.
    pub fn new(
        config: RunConfig,
        vocab: Vocabulary,
        inventory: &PhonemeInventory,
        precomputed: Option<Arc<PrecomputedEmbeddings>>,
    ) -> Result<Self> {
        let mut config = config.resolved();
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let mut params = Params::new();

        let encoder = match config.encoder {
            EncoderKind::Toy => ContextEncoder::Toy(ToyTransformer::declare(
                ToyTransformerConfig {
                    layers: config.layers,
                    heads: config.heads,
                    d_c: config.d_c,
                    max_len: config.max_len,
                    vocab_size: vocab.len(),
                    ff_width: config.ff_width,
                },
                &mut params,
                &mut rng,
            )?),
            EncoderKind::Precomputed => {
                let store = precomputed.ok_or_else(|| {
                    PunError::Validation("precomputed encoder needs an embeddings file".into())
                })?;
                config.d_c = store
                    .dim()
                    .ok_or_else(|| PunError::Validation("embeddings file is empty".into()))?;
                ContextEncoder::Precomputed(store)
            }
        };
        let d_c = config.d_c;
        let phon = if config.use_phonemes {
            Some(PhonAttn::declare(
                inventory.len(),
                config.d_p,
                config.d_a,
                config.alpha_p_variant,
                &mut params,
                &mut rng,
            )?)
        } else {
            None
        };
        let d_j = d_c + phon.as_ref().map_or(0, |p| p.d_p);
        let detection_head =
            BinaryHead::declare("head.detection", d_c + d_j, &mut params, &mut rng);
        let location_head = BinaryHead::declare("head.location", d_j, &mut params, &mut rng);

        if let (Some(p), false) = (&phon, config.phoneme_init.is_empty()) {
            let n = phonattn::load_phoneme_vectors_path(
                &config.phoneme_init,
                inventory,
                &mut params,
                p.table,
            )?;
            log::info!(
                "initialized {n} phoneme vectors from {}",
                config.phoneme_init
            );
        }
        if let (ContextEncoder::Toy(enc), true) = (&encoder, config.freeze_encoder) {
            for id in enc.param_ids() {
                params.set_frozen(id, true);
            }
        }

        Ok(PunModel {
            config,
            vocab,
            params,
            encoder,
            phon,
            detection_head,
            location_head,
            d_c,
            d_j,
        })
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> PunModel<U> {
        PunModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            phon: self.phon.clone(),
            detection_head: self.detection_head,
            location_head: self.location_head,
            d_c: self.d_c,
            d_j: self.d_j,
        }
    }

    pub fn prepare(&self, ex: &Example, lexicon: &PronunciationLexicon) -> Result<Instance> {
        if ex.tokens.is_empty() {
            return Err(PunError::arg(format!("example {} has no tokens", ex.id)));
        }
        Ok(Instance {
            id: ex.id.clone(),
            tokens: ex.tokens.clone(),
            token_ids: self.vocab.ids(&ex.tokens),
            prons: lexicon.phonemize_sentence(&ex.tokens)?,
            label: ex.label as usize,
            pun_index: ex.pun_index,
        })
    }

    pub fn prepare_all(
        &self,
        exs: &[Example],
        lexicon: &PronunciationLexicon,
    ) -> Result<Vec<Instance>> {
        exs.iter().map(|e| self.prepare(e, lexicon)).collect()
    }

    pub fn encode(&self, g: &mut Graph<T>, vars: &[Var], inst: &Instance) -> Result<EncodedVars> {
        match &self.encoder {
            ContextEncoder::Toy(enc) => enc.forward(g, vars, &inst.token_ids),
            ContextEncoder::Precomputed(store) => {
                let e = store.encode::<T>(&inst.id, inst.len())?;
                Ok(EncodedVars {
                    cls: g.constant(e.cls),
                    tokens: g.constant(e.tokens),
                })
            }
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        inst: &Instance,
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<ForwardVars> {
        let encoded = self.encode(g, vars, inst)?;
        self.forward_from_encoding(g, vars, encoded, &inst.prons, dropout)
    }

    /// Everything downstream of the contextual encoder.
    pub fn forward_from_encoding(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        encoded: EncodedVars,
        prons: &[Pronunciation],
        mut dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<ForwardVars> {
        let n = g.value(encoded.tokens).rows();
        if n != prons.len() {
            return Err(PunError::Consistency(format!(
                "{n} contextual rows but {} pronunciations",
                prons.len()
            )));
        }
        let pronunciation = match &self.phon {
            Some(p) => Some(p.embed_sentence(g, vars, prons)?),
            None => None,
        };
        let joint = match &pronunciation {
            Some(pv) => fusion::joint_concat(g, encoded.tokens, pv.embeddings)?,
            None => encoded.tokens,
        };
        let joint_in = apply_dropout(g, joint, dropout.as_deref_mut())?;
        let attention = fusion::self_attend(g, joint_in, self.config.attn_variant)?;
        let cls_joint = fusion::cls_concat(g, encoded.cls, attention.sentence)?;

        let det_in = apply_dropout(g, cls_joint, dropout.as_deref_mut())?;
        let detection_logits = self.detection_head.apply(g, vars, det_in)?;
        let loc_in = apply_dropout(g, attention.tokens, dropout)?;
        let location_logits = self.location_head.apply(g, vars, loc_in)?;
        Ok(ForwardVars {
            encoded,
            pronunciation,
            joint,
            attention,
            cls_joint,
            detection_logits,
            location_logits,
        })
    }

    /// Cross-entropy of one batch on a shared tape.
    ///
    /// Detection averages over sentences, location over every token of the
    /// batch with the gold pun token as the only positive.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        batch: &[&Instance],
        task: Task,
        mut dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(PunError::arg("empty batch"));
        }
        let mut logits = Vec::with_capacity(batch.len());
        let mut labels = Vec::new();
        for inst in batch {
            let f = self.forward(g, vars, inst, dropout.as_deref_mut())?;
            match task {
                Task::Detection => {
                    logits.push(f.detection_logits);
                    labels.push(inst.label);
                }
                Task::Location => {
                    let gold = inst.pun_index.ok_or_else(|| {
                        PunError::arg(format!("example {} has no pun index", inst.id))
                    })?;
                    logits.push(f.location_logits);
                    labels.extend((0..inst.len()).map(|i| usize::from(i == gold)));
                }
            }
        }
        let all = g.concat_rows(&logits)?;
        g.cross_entropy(all, &labels)
    }

    pub fn analyze_from_encoding(
        &self,
        encoded: crate::encoder::ContextualEncoding<T>,
        prons: &[Pronunciation],
    ) -> Result<Analysis<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let e = EncodedVars {
            cls: g.constant(encoded.cls),
            tokens: g.constant(encoded.tokens),
        };
        let f = self.forward_from_encoding(&mut g, &vars, e, prons, None)?;
        Ok(self.collect(&g, &f))
    }

    /// Eval-mode pass returning predictions and attention weights.
    pub fn analyze(&self, inst: &Instance) -> Result<Analysis<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let f = self.forward(&mut g, &vars, inst, None)?;
        Ok(self.collect(&g, &f))
    }

    fn collect(&self, g: &Graph<T>, f: &ForwardVars) -> Analysis<T> {
        let d = g.value(f.detection_logits).data();
        let detection = Detection {
            label: usize::from(d[1] > d[0]),
            probability: softmax2(d[0], d[1]),
        };
        let loc = g.value(f.location_logits);
        let scores: Vec<T> = (0..loc.rows()).map(|i| loc.get(i, 1)).collect();
        let probabilities: Vec<T> = (0..loc.rows())
            .map(|i| softmax2(loc.get(i, 0), loc.get(i, 1))[1])
            .collect();
        let indices = match self.config.locate_mode {
            LocateMode::Argmax => vec![argmax_first(&scores)],
            LocateMode::Threshold => probabilities
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > T::lit(0.5))
                .map(|(i, _)| i)
                .collect(),
        };
        let alpha_p = f
            .pronunciation
            .as_ref()
            .map(|pv| {
                pv.alphas
                    .iter()
                    .map(|&a| g.value(a).data().to_vec())
                    .collect()
            })
            .unwrap_or_default();
        Analysis {
            detection,
            location: Location {
                indices,
                scores,
                probabilities,
            },
            alpha_s: g.value(f.attention.alpha).clone(),
            alpha_p,
        }
    }

    pub fn detect(&self, inst: &Instance) -> Result<Detection<T>> {
        Ok(self.analyze(inst)?.detection)
    }

    pub fn locate(&self, inst: &Instance) -> Result<Location<T>> {
        Ok(self.analyze(inst)?.location)
    }
}

fn apply_dropout<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    ctx: Option<&mut DropoutCtx<'_>>,
) -> Result<Var> {
    match ctx {
        Some(c) => g.dropout(x, c.p, Some(&mut *c.rng)),
        None => Ok(x),
    }
}

fn softmax2<T: Real>(a: T, b: T) -> [T; 2] {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    [ea / s, eb / s]
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_first<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
