//! Post-norm transformer encoder stack without attention masking.
//!
//! Per layer:
//!
//! ```text
//! x = LayerNorm1(x + SelfAttention(x))
//! x = LayerNorm2(x + Linear2(ReLU(Linear1(x))))
//! ```
//!
//! Attention rows are independent, so they are computed in parallel; each
//! row's arithmetic is the same serial sequence regardless of thread count,
//! which keeps results bit-identical.

use std::ops::Range;

use rayon::prelude::*;

use super::tensor::{dot, layer_norm, linear, relu_in_place, softmax, Matrix};
use super::weights::ModelWeights;
use super::InferenceError;

/// Optional instrumentation for a forward pass.
#[derive(Debug, Default)]
pub struct Probe {
    /// Keep every head's attention matrix (`n x n`); only sensible for
    /// short sequences.
    pub record_attention: bool,
    pub attention: Vec<Matrix>,
    /// `(name, (rows, cols))` of every intermediate, in evaluation order.
    pub shapes: Vec<(String, (usize, usize))>,
}

impl Probe {
    pub fn with_attention() -> Self {
        Self {
            record_attention: true,
            ..Self::default()
        }
    }

    pub(crate) fn record(probe: &mut Option<&mut Probe>, name: impl Into<String>, m: &Matrix) {
        if let Some(p) = probe.as_deref_mut() {
            p.shapes.push((name.into(), m.shape()));
        }
    }
}

/// Runs encoder layers `layers` over `x` (`n x d_model`).
pub fn encoder_forward(
    x: Matrix,
    weights: &ModelWeights,
    layers: Range<usize>,
    mut probe: Option<&mut Probe>,
) -> Result<Matrix, InferenceError> {
    let arch = weights.architecture();
    if x.cols() != arch.d_model {
        return Err(InferenceError::DimMismatch {
            what: "encoder input width",
            expected: arch.d_model,
            found: x.cols(),
        });
    }
    if layers.end > arch.layers {
        return Err(InferenceError::DimMismatch {
            what: "encoder layer range end",
            expected: arch.layers,
            found: layers.end,
        });
    }
    let eps = arch.layer_norm_eps;
    let mut x = x;
    for l in layers {
        let p = format!("encoder.layers.{l}.");
        let w = |name: &str| weights.data(&format!("{p}{name}"));

        let mut attended = self_attention(&x, weights, l, &mut probe);
        attended.add_assign(&x);
        layer_norm(&mut attended, w("norm1.weight"), w("norm1.bias"), eps);
        Probe::record(&mut probe, format!("{p}norm1"), &attended);

        let mut hidden = linear(&attended, w("linear1.weight"), w("linear1.bias"));
        relu_in_place(&mut hidden);
        Probe::record(&mut probe, format!("{p}linear1"), &hidden);
        let mut out = linear(&hidden, w("linear2.weight"), w("linear2.bias"));
        out.add_assign(&attended);
        layer_norm(&mut out, w("norm2.weight"), w("norm2.bias"), eps);
        Probe::record(&mut probe, format!("{p}norm2"), &out);
        x = out;
    }
    Ok(x)
}

/// Multi-head scaled dot-product self-attention for layer `l`, output
/// projection included.
fn self_attention(x: &Matrix, weights: &ModelWeights, l: usize, probe: &mut Option<&mut Probe>) -> Matrix {
    let arch = weights.architecture();
    let (n, d) = x.shape();
    let heads = arch.heads;
    let dh = arch.head_dim();
    let p = format!("encoder.layers.{l}.self_attn.");
    let qkv = linear(
        x,
        weights.data(&format!("{p}in_proj_weight")),
        weights.data(&format!("{p}in_proj_bias")),
    );
    Probe::record(probe, format!("{p}qkv"), &qkv);

    let split = |part: usize, h: usize| qkv.column_block(part * d + h * dh, dh);
    let q: Vec<Matrix> = (0..heads).map(|h| split(0, h)).collect();
    let k: Vec<Matrix> = (0..heads).map(|h| split(1, h)).collect();
    let v: Vec<Matrix> = (0..heads).map(|h| split(2, h)).collect();
    let scale = 1.0 / (dh as f64).sqrt();

    let attend_row = |h: usize, i: usize, scores: &mut [f64], out: &mut [f64]| {
        let qi = q[h].row(i);
        for (s, kj) in scores.iter_mut().zip(k[h].rows_iter()) {
            *s = dot(qi, kj) * scale;
        }
        softmax(scores);
        out.fill(0.0);
        for (&pj, vj) in scores.iter().zip(v[h].rows_iter()) {
            for (o, &vv) in out.iter_mut().zip(vj) {
                *o += pj * vv;
            }
        }
    };

    let mut concat = Matrix::zeros(n, d);
    concat
        .rows_iter_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .for_each_init(
            || vec![0.0; n],
            |scores, (i, row)| {
                for h in 0..heads {
                    attend_row(h, i, scores, &mut row[h * dh..(h + 1) * dh]);
                }
            },
        );

    if let Some(pr) = probe.as_deref_mut() {
        if pr.record_attention {
            let mut scratch = vec![0.0; dh];
            for h in 0..heads {
                let mut probs = Matrix::zeros(n, n);
                for i in 0..n {
                    attend_row(h, i, probs.row_mut(i), &mut scratch);
                }
                pr.attention.push(probs);
            }
        }
    }
    Probe::record(probe, format!("{p}heads"), &concat);

    let out = linear(
        &concat,
        weights.data(&format!("{p}out_proj.weight")),
        weights.data(&format!("{p}out_proj.bias")),
    );
    Probe::record(probe, format!("{p}out_proj"), &out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::weights::Architecture;
    use rand::Rng;

    fn weights(layers: usize) -> ModelWeights {
        ModelWeights::random(Architecture::riskmap2(3, 2, 8, layers, 2, 16), 11).unwrap()
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = crate::rng::rng_from_seed(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn zero_layers_is_identity() {
        let w = weights(2);
        let x = random_input(9, 8, 1);
        assert_eq!(encoder_forward(x.clone(), &w, 0..0, None).unwrap(), x);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let w = weights(2);
        let mut probe = Probe::with_attention();
        encoder_forward(random_input(9, 8, 2), &w, 0..2, Some(&mut probe)).unwrap();
        assert_eq!(probe.attention.len(), 4);
        for m in &probe.attention {
            for row in m.rows_iter() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let w = weights(2);
        let x = random_input(9, 8, 3);
        let perm = [4usize, 0, 8, 2, 7, 1, 3, 6, 5];
        let mut permuted = Matrix::zeros(9, 8);
        for (i, &src) in perm.iter().enumerate() {
            permuted.row_mut(i).copy_from_slice(x.row(src));
        }
        let y = encoder_forward(x, &w, 0..2, None).unwrap();
        let y_perm = encoder_forward(permuted, &w, 0..2, None).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in y_perm.row(i).iter().zip(y.row(src)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let w = weights(1);
        assert!(matches!(
            encoder_forward(random_input(4, 6, 0), &w, 0..1, None),
            Err(InferenceError::DimMismatch { .. })
        ));
        assert!(matches!(
            encoder_forward(random_input(4, 8, 0), &w, 0..2, None),
            Err(InferenceError::DimMismatch { .. })
        ));
    }

    #[test]
    fn repeated_passes_are_bit_identical() {
        let w = weights(2);
        let x = random_input(9, 8, 5);
        let a = encoder_forward(x.clone(), &w, 0..2, None).unwrap();
        let b = encoder_forward(x, &w, 0..2, None).unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
