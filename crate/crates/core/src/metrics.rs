//! Exact-match and token-F1 scoring with SQuAD answer normalization.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};

/// Lowercase, strip ASCII punctuation, drop the words "a", "an", "the", and
/// collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();

    // Articles are removed as whole words, where a word is a maximal run of
    // alphanumerics and underscores.
    let mut out = String::with_capacity(no_punct.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if matches!(word.as_str(), "a" | "an" | "the") {
            out.push(' ');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in no_punct.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);

    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn max_over<F: Fn(&str) -> f64>(golds: &[String], f: F) -> f64 {
    golds.iter().map(|g| f(g)).fold(0.0, f64::max)
}

/// 1 if the normalized prediction equals any normalized gold answer.
pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_text(pred);
    max_over(golds, |g| if normalize_text(g) == p { 1.0 } else { 0.0 })
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_text(pred);
    let g = normalize_text(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt == gt { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-overlap F1 over the gold answers.
pub fn f1_score(pred: &str, golds: &[String]) -> f64 {
    max_over(golds, |g| f1_single(pred, g))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionScore {
    pub id: String,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub em: f64,
    pub f1: f64,
    pub per_question: Vec<QuestionScore>,
}

/// Gold answers for one question. An empty string marks "no answer".
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub id: String,
    pub golds: Vec<String>,
}

/// Scores every reference question. Missing predictions count as wrong.
pub fn evaluate(predictions: &IndexMap<String, String>, references: &[Reference]) -> Result<EvalResult> {
    let mut seen = HashSet::new();
    let mut per_question = Vec::with_capacity(references.len());
    for r in references {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Input(format!("duplicate question id `{}` in references", r.id)));
        }
        if r.golds.is_empty() {
            return Err(Error::Input(format!("question `{}` has no gold answers", r.id)));
        }
        let (em, f1) = match predictions.get(&r.id) {
            Some(p) => (exact_match(p, &r.golds), f1_score(p, &r.golds)),
            None => {
                log::warn!("no prediction for question `{}`", r.id);
                (0.0, 0.0)
            }
        };
        per_question.push(QuestionScore {
            id: r.id.clone(),
            em,
            f1,
        });
    }
    let n = per_question.len().max(1) as f64;
    let em = per_question.iter().map(|q| q.em).sum::<f64>() / n;
    let f1 = per_question.iter().map(|q| q.f1).sum::<f64>() / n;
    Ok(EvalResult { em, f1, per_question })
}

/// `{"exact_match": …, "f1": …}`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub exact_match: f64,
    pub f1: f64,
}

impl EvalResult {
    pub fn summary(&self) -> Summary {
        Summary {
            exact_match: self.em,
            f1: self.f1,
        }
    }

    /// Per-question `id,em,f1` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for q in &self.per_question {
            w.serialize(q).map_err(|e| Error::Input(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

/// Prediction file contents in file order; duplicate ids are rejected.
struct PredictionEntries(Vec<(String, String)>);

impl<'de> Deserialize<'de> for PredictionEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = PredictionEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping question ids to answer strings")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(PredictionEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<IndexMap<String, String>> {
    let entries: PredictionEntries = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = IndexMap::with_capacity(entries.0.len());
    for (id, answer) in entries.0 {
        if out.contains_key(&id) {
            return Err(Error::Input(format!("duplicate question id `{id}` in {}", path.display())));
        }
        out.insert(id, answer);
    }
    Ok(out)
}

/// Reads a `{"<question_id>": "<answer text>"}` file.
pub fn load_predictions(path: &Path) -> Result<IndexMap<String, String>> {
    parse_predictions(&read_to_string(path)?, path)
}

pub fn write_predictions(path: &Path, predictions: &IndexMap<String, String>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(predictions).map_err(|e| Error::Input(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
