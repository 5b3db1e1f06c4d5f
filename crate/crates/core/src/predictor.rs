//! Span head, joint begin/end decoding, and the span loss.
//!
//! A span ending on the passage's last token means "no answer": every
//! passage carries a reserved final position for exactly this purpose.

use serde::{Deserialize, Serialize};

use crate::biattention::FusedRepresentation;
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tensor::{Rng, Tape, Var, MASK_VALUE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub begin: usize,
    pub end: usize,
    /// `begin_logits[begin] + end_logits[end]`.
    pub score: f64,
    pub is_unanswerable: bool,
}

/// Independent linear begin/end projections `[4D × 1]`.
#[derive(Clone, Copy, Debug)]
pub struct SpanHead {
    pub begin: Var,
    pub end: Var,
}

impl SpanHead {
    pub fn init(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut Rng) {
        store.insert_uniform(format!("{prefix}.begin"), &[width, 1], width, rng);
        store.insert_uniform(format!("{prefix}.end"), &[width, 1], width, rng);
    }

    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        Ok(SpanHead {
            begin: b.get(&format!("{prefix}.begin"))?,
            end: b.get(&format!("{prefix}.end"))?,
        })
    }
}

/// Begin and end logits of length `l`. Positions with `mask[i] == false`
/// get [`MASK_VALUE`]; the last real token must stay unmasked.
pub fn span_logits(tape: &mut Tape, fused: &FusedRepresentation, head: &SpanHead, mask: &[bool]) -> Result<(Var, Var)> {
    let (l, width) = tape.value(fused.i).dims2()?;
    if tape.value(head.begin).rows() != width || tape.value(head.end).rows() != width {
        return Err(Error::dim("span_logits", tape.shape(fused.i), tape.shape(head.begin)));
    }
    if mask.len() != l {
        return Err(Error::dim("span_logits mask", &[l], &[mask.len()]));
    }
    let excluded: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let mut out = [head.begin, head.end];
    for w in &mut out {
        let logits = tape.matmul(fused.i, *w)?;
        let logits = tape.reshape(logits, &[l])?;
        *w = tape.mask_fill(logits, &excluded, MASK_VALUE)?;
    }
    Ok((out[0], out[1]))
}

/// Best `(b, e)` with `b ≤ e < b + max_len` by `begin[b] + end[e]`.
///
/// Ties go to the smallest `b`, then the smallest `e`. A span of exactly the
/// last position is the no-answer prediction.
pub fn decode_span(begin: &[f64], end: &[f64], max_len: usize) -> Result<SpanPrediction> {
    let l = begin.len();
    if l == 0 {
        return Err(Error::EmptyInput("decode_span"));
    }
    if end.len() != l {
        return Err(Error::dim("decode_span", &[l], &[end.len()]));
    }
    if max_len == 0 {
        return Err(Error::Parameter("max answer length must be positive".into()));
    }
    let mut best = (0, 0, f64::NEG_INFINITY);
    for b in 0..l {
        let last = (b + max_len - 1).min(l - 1);
        for e in b..=last {
            let s = begin[b] + end[e];
            if s > best.2 {
                best = (b, e, s);
            }
        }
    }
    let (b, e, score) = best;
    Ok(SpanPrediction {
        begin: b,
        end: e,
        score,
        is_unanswerable: b == l - 1 && e == l - 1,
    })
}

/// Sum of begin and end cross-entropies against the gold indices.
pub fn span_loss(tape: &mut Tape, begin: Var, end: Var, gold_begin: usize, gold_end: usize) -> Result<Var> {
    let lb = tape.cross_entropy(begin, gold_begin)?;
    let le = tape.cross_entropy(end, gold_end)?;
    tape.add(lb, le)
}
