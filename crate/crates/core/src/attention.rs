//! Luong "general" attention over a set of region annotations.
//!
//! The score of region `k` against the decoder hidden state `h` is the
//! bilinear form `hᵀ W_a a_k`. Scores are softmax-normalized into alignment
//! weights and the context vector is the weighted sum of annotation rows.

use alloc::format;

use crate::error::{contract, shape_err, Result};
use crate::params::param_struct;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// The `K×D` matrix of region features; row `k` is annotation `a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet(Tensor);

impl AnnotationSet {
    pub fn new(annotations: Tensor) -> Result<Self> {
        match annotations.shape() {
            [k, d] if *k >= 1 && *d >= 1 => Ok(AnnotationSet(annotations)),
            [0, _] => Err(contract("annotation set needs at least one region")),
            s => Err(shape_err("annotations", format!("expected K×D, got {s:?}"))),
        }
    }

    pub fn num_regions(&self) -> usize {
        self.0.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

param_struct! {
    /// The `H×D` alignment matrix.
    pub struct AttentionParams<T> {
        pub w_a,
    }
}

/// Output of [`attend`].
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    /// Context vector, length `D`.
    pub context: Var,
    /// Alignment weights, length `K`.
    pub alpha: Var,
}

/// Bilinear alignment score `hᵀ W_a a_k` as a scalar.
pub fn align_score(tape: &mut Tape, a_k: Var, h: Var, params: &AttentionParams<Var>) -> Result<Var> {
    let projected = tape.matmul(params.w_a, a_k)?;
    let prod = tape.hadamard(h, projected)?;
    tape.sum(prod)
}

/// Alignment weights and context vector for hidden state `h` over `annotations` (`K×D`).
pub fn attend(tape: &mut Tape, annotations: Var, h: Var, params: &AttentionParams<Var>) -> Result<Attended> {
    if tape.shape(annotations).first() == Some(&0) {
        return Err(contract("annotation set needs at least one region"));
    }
    // s = A (W_aᵀ h), so s_k = a_kᵀ W_aᵀ h = hᵀ W_a a_k.
    let query = tape.matvec_t(params.w_a, h)?;
    let scores = tape.matmul(annotations, query)?;
    let alpha = tape.softmax(scores)?;
    let context = tape.matvec_t(annotations, alpha)?;
    Ok(Attended { context, alpha })
}
