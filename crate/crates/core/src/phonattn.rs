//! Pronunciation embeddings: attention pooling over a word's phoneme vectors.
//!
//! For phoneme vectors `u_j` of one word, `v_j = tanh(u_j W + b)` and
//! `s_j = v_j · v_s`; the weights `alpha` normalize the scores (softmax by
//! default) and the pronunciation embedding is `sum_j alpha_j u_j`.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::config::AlphaPVariant;
use crate::error::{PunError, Result};
use crate::numerics::{init_glorot, Graph, ParamId, Params, Real, Rng64, Tensor, Var};
use crate::phonodict::{PhonemeInventory, Pronunciation};

#[derive(Debug, Clone)]
pub struct PhonAttn {
    pub d_p: usize,
    pub d_a: usize,
    pub variant: AlphaPVariant,
    pub table: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub context: ParamId,
}

/// Pronunciation embeddings of a sentence on the tape.
#[derive(Debug, Clone)]
pub struct PronunciationVars {
    /// `N x d_p`.
    pub embeddings: Var,
    /// One `1 x M_i` weight row per word.
    pub alphas: Vec<Var>,
}

impl PhonAttn {
    pub fn declare<T: Real>(
        inventory_size: usize,
        d_p: usize,
        d_a: usize,
        variant: AlphaPVariant,
        params: &mut Params<T>,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if d_p == 0 || d_a == 0 || inventory_size == 0 {
            return Err(PunError::Validation(
                "phoneme attention needs positive d_p, d_a and inventory".into(),
            ));
        }
        let table = params.insert("phon.table", init_glorot(rng, inventory_size, d_p));
        let proj_w = params.insert("phon.proj.w", init_glorot(rng, d_p, d_a));
        let proj_b = params.insert("phon.proj.b", Tensor::zeros(&[1, d_a]));
        let context = params.insert("phon.context", init_glorot(rng, d_a, 1));
        Ok(PhonAttn {
            d_p,
            d_a,
            variant,
            table,
            proj_w,
            proj_b,
            context,
        })
    }

    /// Pools one word. Returns `(1 x d_p embedding, 1 x M alpha)`.
    pub fn embed_word<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        pron: &Pronunciation,
    ) -> Result<(Var, Var)> {
        if pron.is_empty() {
            return Err(PunError::arg("pronunciation without phonemes"));
        }
        let u = g.gather(vars[self.table.index()], &pron.phoneme_ids)?;
        let h = g.matmul(u, vars[self.proj_w.index()])?;
        let h = g.add_row(h, vars[self.proj_b.index()])?;
        let v = g.tanh(h);
        let scores = g.matmul(v, vars[self.context.index()])?;
        let scores = g.transpose(scores);
        let alpha = match self.variant {
            AlphaPVariant::Softmax => g.row_softmax(scores),
            AlphaPVariant::RawRatio => g.row_normalize(scores),
        };
        let emb = g.matmul(alpha, u)?;
        Ok((emb, alpha))
    }

    pub fn embed_sentence<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        prons: &[Pronunciation],
    ) -> Result<PronunciationVars> {
        if prons.is_empty() {
            return Err(PunError::arg("cannot embed an empty sentence"));
        }
        let mut rows = Vec::with_capacity(prons.len());
        let mut alphas = Vec::with_capacity(prons.len());
        for p in prons {
            let (e, a) = self.embed_word(g, vars, p)?;
            rows.push(e);
            alphas.push(a);
        }
        let embeddings = g.concat_rows(&rows)?;
        Ok(PronunciationVars { embeddings, alphas })
    }

    /// Plain-value pooling of one word: `(T^P, alpha)`.
    pub fn pronunciation_embed<T: Real>(
        &self,
        params: &Params<T>,
        pron: &Pronunciation,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (e, a) = self.embed_word(&mut g, &vars, pron)?;
        Ok((g.value(e).data().to_vec(), g.value(a).data().to_vec()))
    }
}

/// Overwrites phoneme-table rows from a `SYMBOL v1 .. v_dP` text file.
///
/// Unknown symbols are ignored; symbols not listed keep their values.
/// Returns the number of rows replaced.
pub fn load_phoneme_vectors<T: Real, R: Read>(
    reader: R,
    inventory: &PhonemeInventory,
    params: &mut Params<T>,
    table: ParamId,
) -> Result<usize> {
    let d_p = params.get(table).cols();
    let mut replaced = 0;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(sym) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| PunError::Parse {
                    line: lineno + 1,
                    msg: format!("bad number {p:?} for phoneme {sym}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != d_p {
            return Err(PunError::Format(format!(
                "phoneme {sym}: vector has {} values, expected {d_p}",
                values.len()
            )));
        }
        let Some(id) = inventory.id(sym) else {
            continue;
        };
        let row = &mut params.get_mut(table).data_mut()[id * d_p..(id + 1) * d_p];
        for (dst, v) in row.iter_mut().zip(values) {
            *dst = T::lit(v);
        }
        replaced += 1;
    }
    Ok(replaced)
}

pub fn load_phoneme_vectors_path<T: Real>(
    path: impl AsRef<Path>,
    inventory: &PhonemeInventory,
    params: &mut Params<T>,
    table: ParamId,
) -> Result<usize> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| PunError::path(path, e))?;
    load_phoneme_vectors(f, inventory, params, table)
}
