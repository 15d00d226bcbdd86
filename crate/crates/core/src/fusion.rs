//! Joint embeddings and the self-attentive encoder over them.
//!
//! `G = softmax_rows(T Tᵀ / sqrt(d_J)) T`; the salience `alpha` is a softmax
//! of `G` across tokens taken separately for every dimension, so each token
//! gets a `d_J`-vector of weights. Attended token rows are `alpha_i ⊙ T_i`
//! and the sentence vector is their sum.

use crate::config::AttnVariant;
use crate::error::{PunError, Result};
use crate::numerics::{Graph, Real, Var};

#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    /// `N x d_J`, every column sums to 1 over tokens.
    pub alpha: Var,
    /// `N x d_J` rows `alpha_i ⊙ T_i`.
    pub tokens: Var,
    /// `1 x d_J` sum of `tokens`.
    pub sentence: Var,
}

/// Row `i` is `[contextual_i ; pronunciation_i]`.
pub fn joint_concat<T: Real>(g: &mut Graph<T>, contextual: Var, pronunciation: Var) -> Result<Var> {
    let (a, b) = (g.value(contextual).rows(), g.value(pronunciation).rows());
    if a != b {
        return Err(PunError::shape(
            "joint_concat",
            g.value(contextual).shape(),
            g.value(pronunciation).shape(),
        ));
    }
    g.concat_cols(&[contextual, pronunciation])
}

pub fn self_attend<T: Real>(
    g: &mut Graph<T>,
    joint: Var,
    variant: AttnVariant,
) -> Result<SelfAttention> {
    let (n, d) = (g.value(joint).rows(), g.value(joint).cols());
    if n == 0 || d == 0 {
        return Err(PunError::arg("self-attention over an empty sentence"));
    }
    let scores = g.scaled_dot(joint, d)?;
    let weights = g.row_softmax(scores);
    let mixed = g.matmul(weights, joint)?;
    let (alpha, tokens) = match variant {
        AttnVariant::Vector => {
            let alpha = g.col_softmax(mixed);
            (alpha, g.mul(alpha, joint)?)
        }
        AttnVariant::Scalar => {
            let per_token = g.mean_cols(mixed);
            let a = g.col_softmax(per_token);
            let tokens = g.mul_col(a, joint)?;
            // broadcast to N x d_J so both variants expose the same shape
            let cols: Vec<Var> = vec![a; d];
            (g.concat_cols(&cols)?, tokens)
        }
    };
    let sentence = g.sum_rows(tokens);
    Ok(SelfAttention {
        alpha,
        tokens,
        sentence,
    })
}

/// `[cls ; sentence]`, length `d_C + d_J`.
pub fn cls_concat<T: Real>(g: &mut Graph<T>, cls: Var, sentence: Var) -> Result<Var> {
    if g.value(cls).rows() != 1 || g.value(sentence).rows() != 1 {
        return Err(PunError::shape(
            "cls_concat",
            g.value(cls).shape(),
            g.value(sentence).shape(),
        ));
    }
    g.concat_cols(&[cls, sentence])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradcheck, init_uniform, seeded_rng, Params, Tensor};

    fn attend(
        rows: Vec<Vec<f64>>,
        variant: AttnVariant,
    ) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let mut g = Graph::new();
        let t = g.constant(Tensor::from_rows(&rows).unwrap());
        let sa = self_attend(&mut g, t, variant).unwrap();
        (
            g.value(sa.alpha).clone(),
            g.value(sa.tokens).clone(),
            g.value(sa.sentence).clone(),
        )
    }

    #[test]
    fn single_token() {
        let row = vec![0.3, -1.2, 2.0];
        let (alpha, tokens, sent) = attend(vec![row.clone()], AttnVariant::Vector);
        assert_eq!(alpha.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(tokens.data(), &row[..]);
        assert_eq!(sent.data(), &row[..]);
    }

    #[test]
    fn identical_rows_split_evenly() {
        let row = vec![0.5, 1.0, -0.25, 2.0];
        for variant in [AttnVariant::Vector, AttnVariant::Scalar] {
            let (alpha, _, sent) = attend(vec![row.clone(), row.clone()], variant);
            assert!(alpha.data().iter().all(|&a| a == 0.5));
            for (s, r) in sent.data().iter().zip(&row) {
                assert!((s - r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn concat_shapes_and_split() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = g.constant(Tensor::zeros(&[2, 3]));
        let j = joint_concat(&mut g, c, p).unwrap();
        assert_eq!(g.value(j).shape(), &[2, 5]);
        assert_eq!(g.value(j).row_slice(1), &[3.0, 4.0, 0.0, 0.0, 0.0]);
        let back = g.slice_cols(j, 0, 2).unwrap();
        assert_eq!(g.value(back), g.value(c));

        let short = g.constant(Tensor::zeros(&[1, 3]));
        assert!(joint_concat(&mut g, c, short).is_err());
    }

    #[test]
    fn cls_concat_layout() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::row(vec![1.0, 2.0]));
        let s = g.constant(Tensor::zeros(&[1, 4]));
        let out = cls_concat(&mut g, c, s).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_rejected() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(Tensor::zeros(&[0, 3]));
        assert!(self_attend(&mut g, t, AttnVariant::Vector).is_err());
    }

    #[test]
    fn gradient_check_both_variants() {
        for variant in [AttnVariant::Vector, AttnVariant::Scalar] {
            let mut p = Params::new();
            let mut rng = seeded_rng(17);
            p.insert("c", init_uniform(&mut rng, &[4, 3], 1.0));
            p.insert("p", init_uniform(&mut rng, &[4, 2], 1.0));
            p.insert("cls", init_uniform(&mut rng, &[1, 3], 1.0));
            p.insert("w", init_uniform(&mut rng, &[8, 2], 1.0));
            let rep = gradcheck::check(&p, gradcheck::DEFAULT_STEP, |g, v| {
                let j = joint_concat(g, v[0], v[1])?;
                let sa = self_attend(g, j, variant)?;
                let c = cls_concat(g, v[2], sa.sentence)?;
                let logits = g.matmul(c, v[3])?;
                let l1 = g.cross_entropy(logits, &[1])?;
                let t = g.tanh(sa.tokens);
                let l2 = g.sum_all(t);
                let both = g.concat_cols(&[l1, l2])?;
                Ok(g.sum_all(both))
            })
            .unwrap();
            assert!(rep.passes(1e-6), "{variant:?}: {rep:?}");
        }
    }
}
