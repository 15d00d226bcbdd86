use super::{ContextualEncoding, EncodedVars};
use crate::error::{PunError, Result};
use crate::numerics::{init_glorot, Graph, ParamId, Params, Real, Rng64, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Desk-scale transformer encoder settings.
///
/// BERT-base uses 12 layers, 12 heads and 768 hidden units; the defaults
/// here are sized to train on a laptop in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyTransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_c: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub ff_width: usize,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        ToyTransformerConfig {
            layers: 2,
            heads: 4,
            d_c: 64,
            max_len: 128,
            vocab_size: 1,
            ff_width: 256,
        }
    }
}

impl ToyTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_c.is_multiple_of(self.heads) {
            return Err(PunError::Validation(format!(
                "d_c {} must be divisible by heads {}",
                self.d_c, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.ff_width == 0 {
            return Err(PunError::Validation(
                "vocab_size, max_len and ff_width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Post-norm transformer encoder over word ids with a learned `[CLS]` slot.
#[derive(Debug, Clone)]
pub struct ToyTransformer {
    pub config: ToyTransformerConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    cls_emb: ParamId,
    layers: Vec<LayerIds>,
    first: usize,
    last: usize,
}

impl ToyTransformer {
    pub fn declare<T: Real>(
        config: ToyTransformerConfig,
        params: &mut Params<T>,
        rng: &mut Rng64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_c;
        let first = params.len();
        let tok_emb = params.insert("encoder.tok_emb", init_glorot(rng, config.vocab_size, d));
        let pos_emb = params.insert("encoder.pos_emb", init_glorot(rng, config.max_len + 1, d));
        let cls_emb = params.insert("encoder.cls_emb", init_glorot(rng, 1, d));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("encoder.layer{l}");
            let mut dense = |name: &str, rows: usize, cols: usize| {
                let w = params.insert(format!("{p}.{name}.w"), init_glorot(rng, rows, cols));
                let b = params.insert(format!("{p}.{name}.b"), Tensor::zeros(&[1, cols]));
                (w, b)
            };
            let (wq, bq) = dense("q", d, d);
            let (wk, bk) = dense("k", d, d);
            let (wv, bv) = dense("v", d, d);
            let (wo, bo) = dense("o", d, d);
            let (w1, b1) = dense("ff1", d, config.ff_width);
            let (w2, b2) = dense("ff2", config.ff_width, d);
            let ln1_g = params.insert(format!("{p}.ln1.g"), Tensor::filled(&[1, d], T::one()));
            let ln1_b = params.insert(format!("{p}.ln1.b"), Tensor::zeros(&[1, d]));
            let ln2_g = params.insert(format!("{p}.ln2.g"), Tensor::filled(&[1, d], T::one()));
            let ln2_b = params.insert(format!("{p}.ln2.b"), Tensor::zeros(&[1, d]));
            layers.push(LayerIds {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                w1,
                b1,
                w2,
                b2,
                ln2_g,
                ln2_b,
            });
        }
        Ok(ToyTransformer {
            config,
            tok_emb,
            pos_emb,
            cls_emb,
            layers,
            first,
            last: params.len(),
        })
    }

    /// Every parameter this encoder owns.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (self.first..self.last).map(ParamId)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        token_ids: &[usize],
    ) -> Result<EncodedVars> {
        self.forward_traced(g, vars, token_ids).map(|(e, _)| e)
    }

    /// Like [`forward`](Self::forward), also returning the attention
    /// probability matrix of every head, grouped by layer.
    pub fn forward_traced<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        token_ids: &[usize],
    ) -> Result<(EncodedVars, Vec<Vec<Var>>)> {
        let n = token_ids.len();
        if n == 0 {
            return Err(PunError::arg("cannot encode an empty sentence"));
        }
        if n > self.config.max_len {
            return Err(PunError::Length {
                len: n,
                max: self.config.max_len,
            });
        }
        let v = |id: ParamId| vars[id.index()];
        let d = self.config.d_c;
        let heads = self.config.heads;
        let dh = d / heads;

        let toks = g.gather(v(self.tok_emb), token_ids)?;
        let seq = g.concat_rows(&[v(self.cls_emb), toks])?;
        let positions: Vec<usize> = (0..=n).collect();
        let pos = g.gather(v(self.pos_emb), &positions)?;
        let mut x = g.add(seq, pos)?;

        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = dense(g, x, v(layer.wq), v(layer.bq))?;
            let k = dense(g, x, v(layer.wk), v(layer.bk))?;
            let val = dense(g, x, v(layer.wv), v(layer.bv))?;
            let mut outs = Vec::with_capacity(heads);
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(val, h * dh, dh)?;
                let kt = g.transpose(kh);
                let s = g.matmul(qh, kt)?;
                let s = g.scale(s, T::one() / T::from_usize(dh).expect("fits").sqrt());
                let p = g.row_softmax(s);
                probs.push(p);
                outs.push(g.matmul(p, vh)?);
            }
            let cat = g.concat_cols(&outs)?;
            let attn = dense(g, cat, v(layer.wo), v(layer.bo))?;
            let res = g.add(x, attn)?;
            x = g.layer_norm(res, v(layer.ln1_g), v(layer.ln1_b), LAYER_NORM_EPS)?;
            let hid = dense(g, x, v(layer.w1), v(layer.b1))?;
            let hid = g.gelu(hid);
            let ff = dense(g, hid, v(layer.w2), v(layer.b2))?;
            let res = g.add(x, ff)?;
            x = g.layer_norm(res, v(layer.ln2_g), v(layer.ln2_b), LAYER_NORM_EPS)?;
            trace.push(probs);
        }
        let cls = g.slice_rows(x, 0, 1)?;
        let tokens = g.slice_rows(x, 1, n)?;
        Ok((EncodedVars { cls, tokens }, trace))
    }

    /// Eval-mode encoding as plain tensors.
    pub fn encode<T: Real>(
        &self,
        params: &Params<T>,
        token_ids: &[usize],
    ) -> Result<ContextualEncoding<T>> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let e = self.forward(&mut g, &vars, token_ids)?;
        Ok(ContextualEncoding {
            cls: g.value(e.cls).clone(),
            tokens: g.value(e.tokens).clone(),
        })
    }
}

fn dense<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradcheck, seeded_rng};

    fn small(seed: u64) -> (ToyTransformer, Params<f64>) {
        let cfg = ToyTransformerConfig {
            layers: 2,
            heads: 2,
            d_c: 8,
            max_len: 6,
            vocab_size: 10,
            ff_width: 16,
        };
        let mut p = Params::new();
        let enc = ToyTransformer::declare(cfg, &mut p, &mut seeded_rng(seed)).unwrap();
        (enc, p)
    }

    #[test]
    fn shapes() {
        let (enc, p) = small(1);
        let e = enc.encode(&p, &[3]).unwrap();
        assert_eq!(e.cls.shape(), &[1, 8]);
        assert_eq!(e.tokens.shape(), &[1, 8]);
        let e = enc.encode(&p, &[3, 4, 5, 1]).unwrap();
        assert_eq!(e.tokens.shape(), &[4, 8]);
    }

    #[test]
    fn deterministic() {
        let (enc, p) = small(2);
        assert_eq!(
            enc.encode(&p, &[1, 2, 3]).unwrap(),
            enc.encode(&p, &[1, 2, 3]).unwrap()
        );
    }

    #[test]
    fn context_sensitive() {
        let (enc, p) = small(3);
        let a = enc.encode(&p, &[1, 2, 3, 4]).unwrap();
        let b = enc.encode(&p, &[1, 2, 9, 4]).unwrap();
        // row 0 never saw token 2 directly, but attention mixes it in
        assert_ne!(a.tokens.row_slice(0), b.tokens.row_slice(0));
    }

    #[test]
    fn positions_matter() {
        let (enc, p) = small(4);
        let a = enc.encode(&p, &[5, 6]).unwrap();
        let b = enc.encode(&p, &[6, 5]).unwrap();
        assert_ne!(a.tokens.row_slice(0), b.tokens.row_slice(1));
    }

    #[test]
    fn length_and_empty_errors() {
        let (enc, p) = small(5);
        assert!(matches!(
            enc.encode(&p, &[1; 7]),
            Err(PunError::Length { len: 7, max: 6 })
        ));
        assert!(matches!(
            enc.encode::<f64>(&p, &[]),
            Err(PunError::Argument(_))
        ));
    }

    #[test]
    fn attention_rows_normalized() {
        let (enc, p) = small(6);
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let (_, trace) = enc.forward_traced(&mut g, &vars, &[1, 2, 3]).unwrap();
        assert_eq!(trace.len(), 2);
        for layer in trace {
            assert_eq!(layer.len(), 2);
            for head in layer {
                for row in g.value(head).to_rows() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ToyTransformerConfig {
            heads: 3,
            d_c: 8,
            ..ToyTransformerConfig::default()
        };
        let mut p = Params::<f32>::new();
        assert!(ToyTransformer::declare(cfg, &mut p, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn gradient_check() {
        let (enc, p) = small(7);
        let ids = [1, 4, 2, 8, 3];
        let rep = gradcheck::check(&p, gradcheck::DEFAULT_STEP, |g, vars| {
            let e = enc.forward(g, vars, &ids)?;
            let all = g.concat_rows(&[e.cls, e.tokens])?;
            let t = g.tanh(all);
            let sq = g.mul(t, all)?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert!(rep.passes(1e-5), "{rep:?}");
    }
}
