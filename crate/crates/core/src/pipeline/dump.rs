//! Row-normalized similarity export for one example.
//!
//! ```text
//! {"rows":l,"cols":m,"passage_tokens":[…],"question_tokens":[…],"weights":[…]}
//! ```
//!
//! `weights` is `Ĥ` in row-major order with six decimals. Each row is
//! rounded so its printed values sum to exactly 1.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{forward_any, Batch, Model};
use crate::data::MrcExample;
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::tensor::{Rng, Tape};

const SCALE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionDump {
    pub rows: usize,
    pub cols: usize,
    pub passage_tokens: Vec<String>,
    pub question_tokens: Vec<String>,
    pub weights: Vec<f64>,
}

impl AttentionDump {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    pub fn validate(&self) -> Result<()> {
        if self.passage_tokens.len() != self.rows
            || self.question_tokens.len() != self.cols
            || self.weights.len() != self.rows * self.cols
        {
            return Err(Error::Shape(format!(
                "attention dump: {}×{} with {} passage tokens, {} question tokens and {} weights",
                self.rows,
                self.cols,
                self.passage_tokens.len(),
                self.question_tokens.len(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// Serialized form with fixed six-decimal weights.
    pub fn to_json(&self) -> String {
        let strings = |xs: &[String]| serde_json::to_string(xs).expect("strings serialize");
        let mut out = format!(
            "{{\"rows\":{},\"cols\":{},\"passage_tokens\":{},\"question_tokens\":{},\"weights\":[",
            self.rows,
            self.cols,
            strings(&self.passage_tokens),
            strings(&self.question_tokens)
        );
        let mut first = true;
        for i in 0..self.rows {
            for units in round_row(self.row(i)) {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{}.{:06}", units / 1_000_000, units % 1_000_000).expect("string write");
            }
        }
        out.push_str("]}\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let dump: AttentionDump = serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        dump.validate()?;
        Ok(dump)
    }
}

/// Rounds non-negative weights to millionths, distributing the shortfall by
/// largest remainder so that a row summing to 1 rounds to exactly 1000000.
fn round_row(row: &[f64]) -> Vec<u64> {
    let scaled: Vec<f64> = row.iter().map(|w| w.max(0.0) * SCALE).collect();
    let mut units: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let target = (scaled.iter().sum::<f64>()).round() as u64;
    let have: u64 = units.iter().sum();
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(target.saturating_sub(have) as usize) {
        units[k] += 1;
    }
    units
}

/// `Ĥ` for `example` under `model`, in evaluation mode.
pub fn dump_attention(model: &Model, example: &MrcExample) -> Result<AttentionDump> {
    let batch = Batch::new(&model.vocab, &model.config, &[example])?;
    let mut tape = Tape::new();
    let (_, bound) = model.bind(&mut tape, false)?;
    let outputs = forward_any(&mut tape, &bound, &batch, false, &mut Rng::new(0))?;
    let h_row = tape.value(outputs[0].attention.h_row);
    let (rows, cols) = h_row.dims2()?;
    let dump = AttentionDump {
        rows,
        cols,
        passage_tokens: example.passage_tokens.clone(),
        question_tokens: example.question_tokens.clone(),
        weights: h_row.data().to_vec(),
    };
    dump.validate()?;
    Ok(dump)
}
