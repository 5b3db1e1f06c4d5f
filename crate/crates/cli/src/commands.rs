use std::path::Path;

use aba_core::data::{generate_synthetic as synthesize, load_corpus, load_references, write_jsonl, MrcExample};
use aba_core::io::write_atomic;
use aba_core::metrics::{evaluate as score, load_predictions, write_predictions};
use aba_core::pipeline::{self, answer_texts, Checkpoint};
use aba_core::{Error, Result};

use crate::config::{load_run_config, load_synth_spec};
use crate::{DumpArgs, EvaluateArgs, PredictArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn nonempty(examples: Vec<MrcExample>, path: &Path) -> Result<Vec<MrcExample>> {
    if examples.is_empty() {
        return Err(Error::Input(format!("{} contains no usable examples", path.display())));
    }
    Ok(examples)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(g) = a.gate_init {
        cfg.model.gate_init = g.into();
    }
    if let Some(m) = a.model {
        cfg.model.kind = m.into();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;

    let opts = cfg.model.load_options();
    let corpus = nonempty(load_corpus(&a.data, opts)?, &a.data)?;
    let dev = a.dev.as_deref().map(|p| load_corpus(p, opts)).transpose()?;
    ensure_dir(&a.out)?;
    let resolved = serde_json::to_vec_pretty(&cfg).expect("config serializes");
    write_atomic(&a.out.join(CONFIG_FILE), &resolved)?;

    log::info!(
        "training {:?} model on {} examples for {} epochs",
        cfg.model.kind,
        corpus.len(),
        cfg.train.epochs
    );
    let outcome = pipeline::train(&corpus, dev.as_deref(), cfg.model, cfg.train)?;
    Checkpoint {
        model: outcome.model,
        step: outcome.step,
    }
    .save(&a.out.join(CHECKPOINT_FILE))?;
    pipeline::write_history(&a.out.join(METRICS_FILE), &outcome.history)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let predictions = load_predictions(&a.predictions)?;
    let references = load_references(&a.data)?;
    let result = score(&predictions, &references)?;
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        result.write_csv(out)?;
    }
    println!("{}", serde_json::to_string(&result.summary()).expect("summary serializes"));
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let examples = load_corpus(&a.data, model.config.load_options())?;
    ensure_parent(&a.out)?;
    let predictions = pipeline::predict(&model, &examples, a.batch_size)?;
    write_predictions(&a.out, &answer_texts(&predictions))
}

pub fn dump_attention(a: DumpArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let examples = load_corpus(&a.data, model.config.load_options())?;
    let example = examples
        .iter()
        .find(|e| e.id == a.id)
        .ok_or_else(|| Error::Input(format!("question id `{}` not found in {}", a.id, a.data.display())))?;
    ensure_parent(&a.out)?;
    pipeline::dump_attention(&model, example)?.save(&a.out)
}

pub fn generate_synthetic(a: SynthArgs) -> Result<()> {
    let mut spec = load_synth_spec(a.config.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let examples = synthesize(&spec, a.count)?;
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &examples)
}
