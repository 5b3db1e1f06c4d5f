//! Token embeddings, the transformer encoder stack, and the base
//! passage/question cross-attention layer.
//!
//! Every intermediate encoder output is returned, not just the last one:
//! the multi-granularity stack in [`crate::hos`] consumes all of them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tensor::{Rng, Tape, Tensor, Var, MASK_VALUE};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

const LN_EPS: f64 = 1e-5;

/// Token/id mapping. Id 0 is padding and id 1 stands in for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::new())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from regular tokens; the two special tokens are
    /// prepended and duplicates are ignored.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        for t in tokens {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Every token seen at least `min_freq` times, in lexicographic order.
    pub fn build<'a, I, S>(sequences: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        Self::from_tokens(
            counts
                .into_iter()
                .filter(|&(_, c)| c >= min_freq.max(1))
                .map(|(t, _)| t.to_string()),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(serde::de::Error::custom("vocabulary must start with <pad>, <unk>"));
        }
        Ok(Self::from_tokens(tokens.into_iter().skip(2)))
    }
}

/// Embedding weights `[V × d]` bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTable {
    pub weights: Var,
    pub d: usize,
}

impl EmbeddingTable {
    pub fn init(store: &mut ParamStore, name: &str, vocab_size: usize, d: usize, rng: &mut Rng) {
        store.insert_uniform(name, &[vocab_size, d], d, rng);
    }

    pub fn bind(tape: &Tape, b: &Bindings, name: &str) -> Result<Self> {
        let weights = b.get(name)?;
        let d = tape.value(weights).cols();
        Ok(EmbeddingTable { weights, d })
    }
}

/// Looks up one table row per token. Padding rows are all zero.
pub fn embed(tape: &mut Tape, table: &EmbeddingTable, tokens: &[usize]) -> Result<Var> {
    tape.gather_rows(table.weights, tokens, Some(PAD))
}

/// Sinusoidal position signal, `[len × d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[len, d]);
    let data = pe.data_mut();
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Encoder input: embeddings scaled by `√d` plus the position signal.
pub fn encoder_input(tape: &mut Tape, embedded: Var) -> Result<Var> {
    let (len, d) = tape.value(embedded).dims2()?;
    let scaled = tape.scale(embedded, (d as f64).sqrt());
    let pe = tape.constant(positional_encoding(len, d));
    tape.add(scaled, pe)
}

/// Entries `(i, j)` of an `rows × cols` score matrix to exclude: any pair
/// touching an invalid row or column.
pub fn pair_mask(row_valid: &[bool], col_valid: &[bool]) -> Vec<bool> {
    let mut m = Vec::with_capacity(row_valid.len() * col_valid.len());
    for &r in row_valid {
        for &c in col_valid {
            m.push(!(r && c));
        }
    }
    m
}

/// Mask that only excludes invalid columns (keys).
fn key_mask(rows: usize, col_valid: &[bool]) -> Vec<bool> {
    let mut m = Vec::with_capacity(rows * col_valid.len());
    for _ in 0..rows {
        m.extend(col_valid.iter().map(|&v| !v));
    }
    m
}

/// Scaled dot-product attention with invalid keys excluded.
fn attend(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    values: Var,
    key_valid: &[bool],
) -> Result<Var> {
    let (rows, d) = tape.value(queries).dims2()?;
    if tape.value(keys).rows() != key_valid.len() {
        return Err(Error::dim("attention mask", tape.shape(keys), &[key_valid.len()]));
    }
    let scores = tape.matmul_nt(queries, keys)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let scores = tape.mask_fill(scores, &key_mask(rows, key_valid), MASK_VALUE)?;
    let weights = tape.softmax_rows(scores)?;
    tape.matmul(weights, values)
}

/// One post-norm transformer block: single-head self-attention and a
/// two-layer ReLU feed-forward net, each wrapped in residual + layer norm.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

impl EncoderBlock {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, rng: &mut Rng) {
        for w in ["wq", "wk", "wv"] {
            store.insert_uniform(format!("{prefix}.{w}"), &[d, d], d, rng);
        }
        store.insert_uniform(format!("{prefix}.w1"), &[d, d_ff], d, rng);
        store.insert(format!("{prefix}.b1"), Tensor::zeros(&[d_ff]));
        store.insert_uniform(format!("{prefix}.w2"), &[d_ff, d], d_ff, rng);
        store.insert(format!("{prefix}.b2"), Tensor::zeros(&[d]));
        for ln in ["ln1", "ln2"] {
            store.insert(format!("{prefix}.{ln}.gamma"), Tensor::ones(&[d]));
            store.insert(format!("{prefix}.{ln}.beta"), Tensor::zeros(&[d]));
        }
    }

    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        let g = |n: &str| b.get(&format!("{prefix}.{n}"));
        Ok(EncoderBlock {
            wq: g("wq")?,
            wk: g("wk")?,
            wv: g("wv")?,
            w1: g("w1")?,
            b1: g("b1")?,
            w2: g("w2")?,
            b2: g("b2")?,
            ln1_gamma: g("ln1.gamma")?,
            ln1_beta: g("ln1.beta")?,
            ln2_gamma: g("ln2.gamma")?,
            ln2_beta: g("ln2.beta")?,
        })
    }

    /// `mask[i]` is true for real tokens; padded positions are never attended to.
    pub fn forward(&self, tape: &mut Tape, x: Var, mask: &[bool]) -> Result<Var> {
        let q = tape.matmul(x, self.wq)?;
        let k = tape.matmul(x, self.wk)?;
        let v = tape.matmul(x, self.wv)?;
        let attn = attend(tape, q, k, v, mask)?;
        let h = tape.add(x, attn)?;
        let h = tape.layer_norm(h, self.ln1_gamma, self.ln1_beta, LN_EPS)?;

        let f = tape.matmul(h, self.w1)?;
        let f = tape.add(f, self.b1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, self.w2)?;
        let f = tape.add(f, self.b2)?;
        let out = tape.add(h, f)?;
        tape.layer_norm(out, self.ln2_gamma, self.ln2_beta, LN_EPS)
    }
}

/// Runs `x` through every block and returns each block's output in order.
pub fn encode_stack(tape: &mut Tape, x: Var, blocks: &[EncoderBlock], mask: &[bool]) -> Result<Vec<Var>> {
    let len = tape.value(x).rows();
    if mask.len() != len {
        return Err(Error::dim("encode_stack mask", tape.shape(x), &[mask.len()]));
    }
    let mut outputs = Vec::with_capacity(blocks.len());
    let mut h = x;
    for block in blocks {
        h = block.forward(tape, h, mask)?;
        outputs.push(h);
    }
    Ok(outputs)
}

/// Output of the base attention layer: question-aware passage rows and
/// passage-aware question rows.
#[derive(Clone, Copy, Debug)]
pub struct BaseAttentionOutput {
    pub a_p: Var,
    pub a_q: Var,
}

/// `A_p = softmax_rows(C_p C_qᵀ / √d) C_q`, and symmetrically for `A_q`.
pub fn cross_attend(
    tape: &mut Tape,
    c_p: Var,
    c_q: Var,
    p_mask: &[bool],
    q_mask: &[bool],
) -> Result<BaseAttentionOutput> {
    if tape.value(c_p).cols() != tape.value(c_q).cols() {
        return Err(Error::dim("cross_attend", tape.shape(c_p), tape.shape(c_q)));
    }
    let a_p = attend(tape, c_p, c_q, c_q, q_mask)?;
    let a_q = attend(tape, c_q, c_p, c_p, p_mask)?;
    Ok(BaseAttentionOutput { a_p, a_q })
}
