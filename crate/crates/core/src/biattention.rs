//! Bidirectional passage/question attention over gated multi-layer features.
//!
//! ```text
//! H  = dropout(trilinear(p, q))          [l × m]
//! Ĥ  = softmax_rows(H),  H̄ = softmax_cols(H)
//! M  = Ĥ · q                            passage-to-question   [l × D]
//! S  = Ĥ · H̄ᵀ · p                       question-to-passage   [l × D]
//! I  = [p; M; p ⊙ M; p ⊙ S]             [l × 4D]
//! ```

use crate::encoder::pair_mask;
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tensor::{Rng, Tape, Var, MASK_VALUE};

/// Similarity weights over `[p; q; p ⊙ q]`, length `3D`.
#[derive(Clone, Copy, Debug)]
pub struct TrilinearWeights {
    pub w: Var,
}

impl TrilinearWeights {
    pub fn init(store: &mut ParamStore, name: &str, width: usize, rng: &mut Rng) {
        store.insert_uniform(name, &[3 * width], 3 * width, rng);
    }

    pub fn bind(b: &Bindings, name: &str) -> Result<Self> {
        Ok(TrilinearWeights { w: b.get(name)? })
    }
}

/// Similarity matrix and everything derived from it for one example.
#[derive(Clone, Copy, Debug)]
pub struct AttentionBundle {
    /// `H`, after dropout and before masking.
    pub h: Var,
    /// `Ĥ`, row-stochastic.
    pub h_row: Var,
    /// `H̄`, column-stochastic.
    pub h_col: Var,
    pub m: Var,
    pub s: Var,
}

/// `[l × 4D]` input of the span head.
#[derive(Clone, Copy, Debug)]
pub struct FusedRepresentation {
    pub i: Var,
}

/// `H[i][j] = w · [p_i; q_j; p_i ⊙ q_j]`, followed by dropout on `H`.
pub fn similarity(
    tape: &mut Tape,
    p: Var,
    q: Var,
    w: &TrilinearWeights,
    rate: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let (_, dp) = tape.value(p).dims2()?;
    let (_, dq) = tape.value(q).dims2()?;
    let wn = tape.value(w.w).numel();
    if dp != dq || wn != 3 * dp {
        return Err(Error::dim("similarity", &[dp, dq], tape.shape(w.w)));
    }
    let w_row = tape.reshape(w.w, &[1, wn])?;
    let w_p = tape.slice_cols(w_row, 0, dp)?;
    let w_q = tape.slice_cols(w_row, dp, 2 * dp)?;
    let w_pq = tape.slice_cols(w_row, 2 * dp, 3 * dp)?;

    let p_term = tape.matmul_nt(p, w_p)?; // [l × 1]
    let q_term = tape.matmul_nt(w_q, q)?; // [1 × m]
    let pw = tape.mul(p, w_pq)?;
    let cross = tape.matmul_nt(pw, q)?; // [l × m]
    let h = tape.add(cross, p_term)?;
    let h = tape.add(h, q_term)?;
    tape.dropout(h, rate, training, rng)
}

/// Row and column softmax of `h` with padded passage rows and question
/// columns excluded.
pub fn normalize(tape: &mut Tape, h: Var, p_mask: &[bool], q_mask: &[bool]) -> Result<(Var, Var)> {
    let (l, m) = tape.value(h).dims2()?;
    if l != p_mask.len() || m != q_mask.len() {
        return Err(Error::dim("normalize", &[l, m], &[p_mask.len(), q_mask.len()]));
    }
    let masked = tape.mask_fill(h, &pair_mask(p_mask, q_mask), MASK_VALUE)?;
    let h_row = tape.softmax_rows(masked)?;
    let h_col = tape.softmax_cols(masked)?;
    Ok((h_row, h_col))
}

/// `M = Ĥ · q`: every passage row becomes a convex mix of question rows.
pub fn p2q_attention(tape: &mut Tape, h_row: Var, q: Var) -> Result<Var> {
    tape.matmul(h_row, q)
}

/// `S = Ĥ · H̄ᵀ · p`, evaluated as `Ĥ · (H̄ᵀ · p)`.
pub fn q2p_attention(tape: &mut Tape, h_row: Var, h_col: Var, p: Var) -> Result<Var> {
    if tape.shape(h_row) != tape.shape(h_col) {
        return Err(Error::dim("q2p_attention", tape.shape(h_row), tape.shape(h_col)));
    }
    let q_side = tape.matmul_tn(h_col, p)?; // [m × D]
    tape.matmul(h_row, q_side)
}

/// `I = [p; M; p ⊙ M; p ⊙ S]`.
pub fn fuse(tape: &mut Tape, p: Var, m: Var, s: Var) -> Result<FusedRepresentation> {
    for other in [m, s] {
        if tape.shape(p) != tape.shape(other) {
            return Err(Error::dim("fuse", tape.shape(p), tape.shape(other)));
        }
    }
    let pm = tape.mul(p, m)?;
    let ps = tape.mul(p, s)?;
    let i = tape.concat_cols(&[p, m, pm, ps])?;
    Ok(FusedRepresentation { i })
}

/// The whole fusion for one example: similarity, both normalizations, both
/// attention directions, and the concatenated output.
#[allow(clippy::too_many_arguments)]
pub fn bidirectional_attention(
    tape: &mut Tape,
    p: Var,
    q: Var,
    w: &TrilinearWeights,
    p_mask: &[bool],
    q_mask: &[bool],
    rate: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<(AttentionBundle, FusedRepresentation)> {
    let h = similarity(tape, p, q, w, rate, training, rng)?;
    let (h_row, h_col) = normalize(tape, h, p_mask, q_mask)?;
    let m = p2q_attention(tape, h_row, q)?;
    let s = q2p_attention(tape, h_row, h_col, p)?;
    let fused = fuse(tape, p, m, s)?;
    Ok((AttentionBundle { h, h_row, h_col, m, s }, fused))
}
