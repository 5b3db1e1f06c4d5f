//! Optimization, prediction, and the epoch loop.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss, forward_any, stream, Batch, Model, ModelConfig};
use crate::data::{references, MrcExample};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::metrics::evaluate;
use crate::predictor::{decode_span, SpanPrediction};
use crate::tensor::{Rng, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            lr: 1e-3,
            batch_size: 16,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam moments need beta in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Applies one update. `grads` follows the parameter order of `model`.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (k, (_, p)) in model.params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= c);
    }
    norm
}

/// Model plus optimizer state and the RNG streams of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub step: u64,
    adam: Adam,
    dropout_rng: Rng,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model);
        let dropout_rng = Rng::derive(model.config.seed, stream::DROPOUT);
        Ok(Trainer {
            model,
            config,
            step: 0,
            adam,
            dropout_rng,
        })
    }

    /// One optimizer step on `examples`; returns the batch loss before the update.
    pub fn train_step(&mut self, examples: &[&MrcExample]) -> Result<f64> {
        let batch = Batch::new(&self.model.vocab, &self.model.config, examples)?;
        let mut tape = Tape::new();
        let (bindings, bound) = self.model.bind(&mut tape, true)?;
        let outputs = forward_any(&mut tape, &bound, &batch, true, &mut self.dropout_rng)?;
        let loss = batch_loss(&mut tape, &outputs, &batch)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { step: self.step, loss: value });
        }
        tape.backward(loss)?;
        let mut grads: Vec<Vec<f64>> = bindings
            .iter()
            .map(|(_, v)| tape.grad_data(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
            .collect();
        let norm = clip_global_norm(&mut grads, self.config.clip_norm);
        if !norm.is_finite() {
            return Err(Error::Divergence { step: self.step, loss: norm });
        }
        self.adam.step(&mut self.model, &grads, &self.config);
        self.step += 1;
        Ok(value)
    }
}

/// Mean span loss in evaluation mode.
pub fn eval_loss(model: &Model, examples: &[&MrcExample]) -> Result<f64> {
    let batch = Batch::new(&model.vocab, &model.config, examples)?;
    let mut tape = Tape::new();
    let (_, bound) = model.bind(&mut tape, false)?;
    let outputs = forward_any(&mut tape, &bound, &batch, false, &mut Rng::new(0))?;
    let loss = batch_loss(&mut tape, &outputs, &batch)?;
    Ok(tape.value(loss).item())
}

/// Decoded span and answer text for one question.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub span: SpanPrediction,
    pub text: String,
}

/// Decodes every example in evaluation mode, keyed by id in input order.
pub fn predict(model: &Model, examples: &[MrcExample], batch_size: usize) -> Result<IndexMap<String, Prediction>> {
    let mut out = IndexMap::with_capacity(examples.len());
    let refs: Vec<&MrcExample> = examples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = Batch::new(&model.vocab, &model.config, chunk)?;
        let mut tape = Tape::new();
        let (_, bound) = model.bind(&mut tape, false)?;
        let outputs = forward_any(&mut tape, &bound, &batch, false, &mut Rng::new(0))?;
        for (o, ex) in outputs.iter().zip(chunk) {
            let l = o.passage_len;
            let begin = &tape.value(o.begin).data()[..l];
            let end = &tape.value(o.end).data()[..l];
            let span = decode_span(begin, end, model.config.max_answer_len).map_err(|e| e.for_example(&ex.id))?;
            let text = ex.span_text(span.begin, span.end);
            if out.insert(ex.id.clone(), Prediction { span, text }).is_some() {
                return Err(Error::Input(format!("duplicate question id `{}`", ex.id)));
            }
        }
    }
    Ok(out)
}

/// `{id: answer text}`, the evaluation input format.
pub fn answer_texts(predictions: &IndexMap<String, Prediction>) -> IndexMap<String, String> {
    predictions.iter().map(|(k, p)| (k.clone(), p.text.clone())).collect()
}

/// Exact match and F1 of `model` on `examples`.
pub fn score(model: &Model, examples: &[MrcExample], batch_size: usize) -> Result<(f64, f64)> {
    let preds = predict(model, examples, batch_size)?;
    let r = evaluate(&answer_texts(&preds), &references(examples))?;
    Ok((r.em, r.f1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training batch loss over the epoch.
    pub loss: f64,
    pub dev_em: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub step: u64,
    pub history: Vec<EpochRecord>,
}

/// Vocabulary over every passage and question token of `corpus`.
pub fn build_vocabulary(corpus: &[MrcExample]) -> Vocabulary {
    Vocabulary::build(
        corpus
            .iter()
            .flat_map(|ex| [ex.passage_tokens.as_slice(), ex.question_tokens.as_slice()]),
        1,
    )
}

/// Trains a fresh model on `corpus`, scoring `dev` after every epoch.
pub fn train(corpus: &[MrcExample], dev: Option<&[MrcExample]>, model: ModelConfig, config: TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, dev, model, config, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    corpus: &[MrcExample],
    dev: Option<&[MrcExample]>,
    model: ModelConfig,
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    let seed = model.seed;
    let model = Model::init(model, build_vocabulary(corpus))?;
    let mut trainer = Trainer::new(model, config)?;
    let mut shuffle_rng = Rng::derive(seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(trainer.config.epochs);

    for epoch in 1..=trainer.config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(trainer.config.batch_size) {
            let examples: Vec<&MrcExample> = idx.iter().map(|&i| &corpus[i]).collect();
            total += trainer.train_step(&examples)?;
            batches += 1;
        }
        let (dev_em, dev_f1) = match dev {
            Some(d) if !d.is_empty() => {
                let (em, f1) = score(&trainer.model, d, trainer.config.batch_size)?;
                (Some(em), Some(f1))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            loss: total / batches as f64,
            dev_em,
            dev_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dev_em {:?} dev_f1 {:?}",
            record.loss,
            record.dev_em,
            record.dev_f1
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        step: trainer.step,
        model: trainer.model,
        history,
    })
}

/// `epoch,loss,dev_em,dev_f1` rows; missing dev scores are empty fields.
pub fn history_csv(history: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Input(e.to_string()))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_atomic(path, &history_csv(history)?)
}

