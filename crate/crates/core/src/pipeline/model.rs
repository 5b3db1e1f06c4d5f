//! Model configuration, parameter layout, and the batched forward pass.

use serde::{Deserialize, Serialize};

use crate::biattention::{bidirectional_attention, AttentionBundle, TrilinearWeights};
use crate::data::{LoadOptions, MrcExample};
use crate::encoder::{
    cross_attend, embed, encode_stack, encoder_input, EmbeddingTable, EncoderBlock, Vocabulary, PAD,
};
use crate::error::{Error, Result};
use crate::hos::{apply_gate, build_hos, init_gate, GateInit, GateMatrix};
use crate::params::{Bindings, ParamStore};
use crate::predictor::{span_logits, span_loss, SpanHead};
use crate::tensor::{Rng, Tape, Var};

/// Which representation feeds the bidirectional attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Gated stack of every layer, width `(n + 2)·d`.
    #[default]
    Aba,
    /// Base attention output only, width `d`, no gate.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d: usize,
    pub d_ff: usize,
    /// Encoder depth.
    pub n: usize,
    /// Dropout rate on the similarity matrix.
    pub dropout: f64,
    /// Passage budget including the reserved final token.
    pub max_passage_len: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    pub gate_init: GateInit,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Aba,
            d: 64,
            d_ff: 128,
            n: 4,
            dropout: 0.1,
            max_passage_len: 384,
            max_question_len: 64,
            max_answer_len: 30,
            gate_init: GateInit::First,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("d_ff", self.d_ff),
            ("max_passage_len", self.max_passage_len),
            ("max_question_len", self.max_question_len),
            ("max_answer_len", self.max_answer_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Number of stacked layers `n + 2`.
    pub fn depth(&self) -> usize {
        self.n + 2
    }

    /// Feature width `D` entering the bidirectional attention.
    pub fn width(&self) -> usize {
        match self.kind {
            ModelKind::Aba => self.depth() * self.d,
            ModelKind::Baseline => self.d,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            max_passage_len: self.max_passage_len,
            max_question_len: self.max_question_len,
        }
    }
}

/// RNG streams derived from the configured seed.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

/// Configuration, vocabulary and parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

fn block_prefix(i: usize) -> String {
    format!("encoder.{i}")
}

impl Model {
    /// Freshly initialized parameters, in a fixed name order.
    pub fn init(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(config.seed, stream::INIT);
        let mut params = ParamStore::new();
        let d = config.d;
        EmbeddingTable::init(&mut params, "embedding", vocab.len(), d, &mut rng);
        for i in 0..config.n {
            EncoderBlock::init(&mut params, &block_prefix(i), d, config.d_ff, &mut rng);
        }
        if config.kind == ModelKind::Aba {
            let gate = init_gate(config.depth(), d, config.gate_init)?;
            params.insert("lambda_p", gate.clone());
            params.insert("lambda_q", gate);
        }
        let width = config.width();
        TrilinearWeights::init(&mut params, "trilinear", width, &mut rng);
        SpanHead::init(&mut params, "head", 4 * width, &mut rng);
        Ok(Model { config, vocab, params })
    }

    /// Fails unless `params` has exactly the names and shapes `init` creates.
    pub fn check_layout(&self) -> Result<()> {
        let expected = Model::init(self.config.clone(), self.vocab.clone())?;
        let have: Vec<(&str, &[usize])> = self.params.iter().map(|(k, v)| (k, v.shape())).collect();
        let want: Vec<(&str, &[usize])> = expected.params.iter().map(|(k, v)| (k, v.shape())).collect();
        if have != want {
            return Err(Error::Config(format!(
                "parameter layout does not match the configuration: expected {:?}, found {:?}",
                want, have
            )));
        }
        Ok(())
    }

    /// Binds every parameter onto `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<(Bindings, BoundModel)> {
        let b = self.params.bind(tape, requires_grad);
        let bound = BoundModel::new(tape, &b, &self.config)?;
        Ok((b, bound))
    }
}

/// Typed handles to the parameters on one tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub blocks: Vec<EncoderBlock>,
    /// `(λ_p, λ_q)`; absent for the baseline.
    pub gates: Option<(GateMatrix, GateMatrix)>,
    pub trilinear: TrilinearWeights,
    pub head: SpanHead,
}

impl BoundModel {
    pub fn new(tape: &Tape, b: &Bindings, config: &ModelConfig) -> Result<Self> {
        let blocks = (0..config.n)
            .map(|i| EncoderBlock::bind(b, &block_prefix(i)))
            .collect::<Result<_>>()?;
        let gates = match config.kind {
            ModelKind::Aba => Some((
                GateMatrix { values: b.get("lambda_p")? },
                GateMatrix { values: b.get("lambda_q")? },
            )),
            ModelKind::Baseline => None,
        };
        Ok(BoundModel {
            config: config.clone(),
            embedding: EmbeddingTable::bind(tape, b, "embedding")?,
            blocks,
            gates,
            trilinear: TrilinearWeights::bind(b, "trilinear")?,
            head: SpanHead::bind(b, "head")?,
        })
    }
}

/// Examples encoded against a vocabulary and padded to common lengths.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub examples: Vec<&'a MrcExample>,
    pub passage_ids: Vec<Vec<usize>>,
    pub question_ids: Vec<Vec<usize>>,
    pub passage_mask: Vec<Vec<bool>>,
    pub question_mask: Vec<Vec<bool>>,
}

fn pad(ids: Vec<usize>, len: usize) -> (Vec<usize>, Vec<bool>) {
    let mut mask = vec![true; ids.len()];
    mask.resize(len, false);
    let mut ids = ids;
    ids.resize(len, PAD);
    (ids, mask)
}

impl<'a> Batch<'a> {
    /// Pads every example to the longest passage and question in the batch.
    pub fn new(vocab: &Vocabulary, config: &ModelConfig, examples: &[&'a MrcExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        for ex in examples {
            if ex.passage_len() > config.max_passage_len || ex.question_len() > config.max_question_len {
                return Err(Error::Input(format!(
                    "lengths ({}, {}) exceed the configured maximum ({}, {})",
                    ex.passage_len(),
                    ex.question_len(),
                    config.max_passage_len,
                    config.max_question_len
                ))
                .for_example(&ex.id));
            }
            if ex.passage_len() == 0 || ex.question_len() == 0 {
                return Err(Error::EmptyInput("passage or question").for_example(&ex.id));
            }
        }
        let lp = examples.iter().map(|e| e.passage_len()).max().unwrap_or(0);
        let lq = examples.iter().map(|e| e.question_len()).max().unwrap_or(0);
        let mut batch = Batch {
            examples: examples.to_vec(),
            passage_ids: Vec::new(),
            question_ids: Vec::new(),
            passage_mask: Vec::new(),
            question_mask: Vec::new(),
        };
        for ex in examples {
            let (p, pm) = pad(vocab.encode(&ex.passage_tokens), lp);
            let (q, qm) = pad(vocab.encode(&ex.question_tokens), lq);
            batch.passage_ids.push(p);
            batch.passage_mask.push(pm);
            batch.question_ids.push(q);
            batch.question_mask.push(qm);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Per-example graph outputs. Logits have the padded passage length.
#[derive(Clone, Copy, Debug)]
pub struct ExampleOutput {
    pub begin: Var,
    pub end: Var,
    pub attention: AttentionBundle,
    /// Unpadded passage length.
    pub passage_len: usize,
}

fn forward_one(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    k: usize,
    training: bool,
    rng: &mut Rng,
) -> Result<ExampleOutput> {
    let cfg = &model.config;
    let (p_mask, q_mask) = (&batch.passage_mask[k], &batch.question_mask[k]);

    let e_p = embed(tape, &model.embedding, &batch.passage_ids[k])?;
    let e_q = embed(tape, &model.embedding, &batch.question_ids[k])?;
    let x_p = encoder_input(tape, e_p)?;
    let x_q = encoder_input(tape, e_q)?;
    let c_p = encode_stack(tape, x_p, &model.blocks, p_mask)?;
    let c_q = encode_stack(tape, x_q, &model.blocks, q_mask)?;
    // Without encoder layers the base attention reads the encoder input.
    let last_p = c_p.last().copied().unwrap_or(x_p);
    let last_q = c_q.last().copied().unwrap_or(x_q);
    let base = cross_attend(tape, last_p, last_q, p_mask, q_mask)?;

    let (p, q) = match &model.gates {
        Some((lambda_p, lambda_q)) => {
            let hos_p = build_hos(tape, e_p, &c_p, base.a_p)?;
            let hos_q = build_hos(tape, e_q, &c_q, base.a_q)?;
            let p = apply_gate(tape, &hos_p, lambda_p)?.features;
            let q = apply_gate(tape, &hos_q, lambda_q)?.features;
            (p, q)
        }
        None => (base.a_p, base.a_q),
    };

    let (attention, fused) = bidirectional_attention(
        tape,
        p,
        q,
        &model.trilinear,
        p_mask,
        q_mask,
        cfg.dropout,
        training,
        rng,
    )?;
    let (begin, end) = span_logits(tape, &fused, &model.head, p_mask)?;
    Ok(ExampleOutput {
        begin,
        end,
        attention,
        passage_len: batch.examples[k].passage_len(),
    })
}

fn run(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<ExampleOutput>> {
    (0..batch.len())
        .map(|k| forward_one(tape, model, batch, k, training, rng).map_err(|e| e.for_example(&batch.examples[k].id)))
        .collect()
}

/// Span logits and attention for every example of the batch through the
/// gated multi-layer path.
pub fn forward(tape: &mut Tape, model: &BoundModel, batch: &Batch, training: bool, rng: &mut Rng) -> Result<Vec<ExampleOutput>> {
    if model.gates.is_none() {
        return Err(Error::Config("forward needs gate parameters; use forward_baseline".into()));
    }
    run(tape, model, batch, training, rng)
}

/// As [`forward`], with the base attention output alone in place of the
/// gated stack.
pub fn forward_baseline(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<ExampleOutput>> {
    if model.gates.is_some() {
        return Err(Error::Config("forward_baseline expects a baseline model".into()));
    }
    run(tape, model, batch, training, rng)
}

/// Dispatches on the configured model kind.
pub fn forward_any(tape: &mut Tape, model: &BoundModel, batch: &Batch, training: bool, rng: &mut Rng) -> Result<Vec<ExampleOutput>> {
    run(tape, model, batch, training, rng)
}

/// Mean span loss over the batch against each example's target span.
pub fn batch_loss(tape: &mut Tape, outputs: &[ExampleOutput], batch: &Batch) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (out, ex) in outputs.iter().zip(&batch.examples) {
        let (b, e) = ex.target_span();
        let l = span_loss(tape, out.begin, out.end, b, e).map_err(|err| err.for_example(&ex.id))?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or(Error::EmptyInput("batch"))?;
    Ok(tape.scale(total, 1.0 / outputs.len() as f64))
}
