//! Tokenization, SQuAD 2.0 ingestion, JSON-lines corpora, and synthetic
//! cue-following tasks.
//!
//! Every passage ends with the reserved [`NULL_TOKEN`]; the span `(l−1, l−1)`
//! on it is the "no answer" label and decodes to the empty string.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::metrics::{normalize_text, Reference};
use crate::tensor::Rng;

pub const NULL_TOKEN: &str = "[NULL]";

/// Lowercased word tokens with character offsets into `text`.
///
/// Alphanumeric runs form tokens, every other non-whitespace character is a
/// token of its own. Offsets count Unicode scalar values.
pub fn tokenize(text: &str) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let mut pos = 0;
    for (i, c) in text.chars().enumerate() {
        pos = i + 1;
        if c.is_alphanumeric() {
            word.get_or_insert_with(|| (i, String::new())).1.push(c);
            continue;
        }
        if let Some((start, w)) = word.take() {
            tokens.push(w.to_lowercase());
            offsets.push((start, i));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
            offsets.push((i, i + 1));
        }
    }
    if let Some((start, w)) = word {
        tokens.push(w.to_lowercase());
        offsets.push((start, pos));
    }
    (tokens, offsets)
}

fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrcExample {
    pub id: String,
    pub passage_tokens: Vec<String>,
    pub question_tokens: Vec<String>,
    pub gold_spans: Vec<(usize, usize)>,
    pub is_impossible: bool,
    pub raw_context: String,
    pub token_char_offsets: Vec<(usize, usize)>,
}

impl MrcExample {
    /// Passage length including the reserved final token.
    pub fn passage_len(&self) -> usize {
        self.passage_tokens.len()
    }

    pub fn question_len(&self) -> usize {
        self.question_tokens.len()
    }

    pub fn null_span(&self) -> (usize, usize) {
        let last = self.passage_len() - 1;
        (last, last)
    }

    /// Context text covered by tokens `b..=e`; empty for the null span.
    pub fn span_text(&self, b: usize, e: usize) -> String {
        if (b, e) == self.null_span() {
            return String::new();
        }
        char_slice(&self.raw_context, self.token_char_offsets[b].0, self.token_char_offsets[e].1)
    }

    /// Gold answer strings; `[""]` for unanswerable questions.
    pub fn gold_texts(&self) -> Vec<String> {
        self.gold_spans.iter().map(|&(b, e)| self.span_text(b, e)).collect()
    }

    /// The span used as the training target.
    pub fn target_span(&self) -> (usize, usize) {
        self.gold_spans[0]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(msg).for_example(&self.id));
        let l = self.passage_len();
        if l == 0 || self.passage_tokens[l - 1] != NULL_TOKEN {
            return bad(format!("passage must end with {NULL_TOKEN}"));
        }
        if self.question_tokens.is_empty() {
            return bad("empty question".into());
        }
        if self.token_char_offsets.len() != l {
            return bad(format!("{} offsets for {l} tokens", self.token_char_offsets.len()));
        }
        let mut prev_end = 0;
        for &(s, e) in &self.token_char_offsets {
            if s < prev_end || e < s {
                return bad("token offsets overlap or descend".into());
            }
            prev_end = e;
        }
        if self.gold_spans.is_empty() {
            return bad("no gold spans".into());
        }
        for &(b, e) in &self.gold_spans {
            if b > e || e >= l {
                return bad(format!("gold span ({b}, {e}) outside passage of length {l}"));
            }
        }
        if self.is_impossible && self.gold_spans != [self.null_span()] {
            return bad("unanswerable example must carry only the null span".into());
        }
        Ok(())
    }
}

/// Reference answers for scoring a corpus.
pub fn references(examples: &[MrcExample]) -> Vec<Reference> {
    examples
        .iter()
        .map(|ex| Reference {
            id: ex.id.clone(),
            golds: ex.gold_texts(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Passage token budget including the reserved final token.
    pub max_passage_len: usize,
    pub max_question_len: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_passage_len: 384,
            max_question_len: 64,
        }
    }
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

fn parse_squad_file(text: &str, path: &Path) -> Result<SquadFile> {
    serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let path = path.to_path_buf();
        match e.classify() {
            serde_json::error::Category::Data => Error::Schema { path, message },
            _ => Error::Parse { path, message },
        }
    })
}

/// Token span covering characters `[start, end)`, or `None` when no token
/// overlaps that range.
fn align(offsets: &[(usize, usize)], start: usize, end: usize) -> Option<(usize, usize)> {
    let b = offsets.iter().position(|&(_, e)| e > start)?;
    let e = offsets.iter().rposition(|&(s, _)| s < end)?;
    (b <= e).then_some((b, e))
}

fn build_example(qa: &SquadQa, context: &str, tokens: &[String], offsets: &[(usize, usize)], opts: LoadOptions) -> Option<MrcExample> {
    let (mut question_tokens, _) = tokenize(&qa.question);
    if question_tokens.is_empty() {
        log::warn!("question {}: empty question, dropped", qa.id);
        return None;
    }
    question_tokens.truncate(opts.max_question_len);

    let keep = tokens.len().min(opts.max_passage_len - 1);
    let mut passage_tokens = tokens[..keep].to_vec();
    let mut token_char_offsets = offsets[..keep].to_vec();
    let n_chars = context.chars().count();
    passage_tokens.push(NULL_TOKEN.to_string());
    token_char_offsets.push((n_chars, n_chars));
    let null = keep;

    let mut ex = MrcExample {
        id: qa.id.clone(),
        passage_tokens,
        question_tokens,
        gold_spans: Vec::new(),
        is_impossible: qa.is_impossible,
        raw_context: context.to_string(),
        token_char_offsets,
    };
    if qa.is_impossible {
        ex.gold_spans.push((null, null));
        return Some(ex);
    }
    for ans in &qa.answers {
        let end = ans.answer_start + ans.text.chars().count();
        let span = align(&ex.token_char_offsets[..keep], ans.answer_start, end);
        match span {
            Some((b, e)) if normalize_text(&ex.span_text(b, e)) == normalize_text(&ans.text) => {
                if !ex.gold_spans.contains(&(b, e)) {
                    ex.gold_spans.push((b, e));
                }
            }
            _ => log::warn!(
                "question {}: answer {:?} at {} does not align to tokens, dropped",
                qa.id,
                ans.text,
                ans.answer_start
            ),
        }
    }
    if ex.gold_spans.is_empty() {
        log::warn!("question {}: no usable answer, dropped", qa.id);
        return None;
    }
    Some(ex)
}

/// Parses SQuAD 2.0 JSON text into examples; `path` only labels errors.
pub fn parse_squad(text: &str, path: &Path, opts: LoadOptions) -> Result<Vec<MrcExample>> {
    if opts.max_passage_len < 1 || opts.max_question_len < 1 {
        return Err(Error::Config("maximum passage and question lengths must be positive".into()));
    }
    let file = parse_squad_file(text, path)?;
    let mut out = Vec::new();
    for article in &file.data {
        for para in &article.paragraphs {
            let (tokens, offsets) = tokenize(&para.context);
            for qa in &para.qas {
                out.extend(build_example(qa, &para.context, &tokens, &offsets, opts));
            }
        }
    }
    Ok(out)
}

pub fn load_squad(path: &Path, opts: LoadOptions) -> Result<Vec<MrcExample>> {
    parse_squad(&read_to_string(path)?, path, opts)
}

/// Original answer strings per question, `[""]` when unanswerable. Nothing
/// is dropped or aligned.
pub fn parse_squad_references(text: &str, path: &Path) -> Result<Vec<Reference>> {
    let file = parse_squad_file(text, path)?;
    let mut out = Vec::new();
    for qa in file.data.iter().flat_map(|a| &a.paragraphs).flat_map(|p| &p.qas) {
        let golds = if qa.is_impossible || qa.answers.is_empty() {
            vec![String::new()]
        } else {
            qa.answers.iter().map(|a| a.text.clone()).collect()
        };
        out.push(Reference { id: qa.id.clone(), golds });
    }
    Ok(out)
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// Examples from a `.jsonl` corpus or a SQuAD JSON file.
pub fn load_corpus(path: &Path, opts: LoadOptions) -> Result<Vec<MrcExample>> {
    if is_jsonl(path) {
        read_jsonl(path)
    } else {
        load_squad(path, opts)
    }
}

/// References from a `.jsonl` corpus or a SQuAD JSON file.
pub fn load_references(path: &Path) -> Result<Vec<Reference>> {
    if is_jsonl(path) {
        Ok(references(&read_jsonl(path)?))
    } else {
        parse_squad_references(&read_to_string(path)?, path)
    }
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<MrcExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: MrcExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MrcExample>> {
    parse_jsonl(&read_to_string(path)?, path)
}

pub fn to_jsonl(examples: &[MrcExample]) -> Vec<u8> {
    let mut out = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut out, ex).expect("examples serialize");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl(path: &Path, examples: &[MrcExample]) -> Result<()> {
    write_atomic(path, &to_jsonl(examples))
}

/// Parameters of a synthetic corpus.
///
/// Passages are filler words with one or more cue segments
/// `cue answer… end` embedded. The question names one cue; its answer is
/// the run between that cue and the following `end` marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskSpec {
    /// Distinct token types, including cues, the end marker and question words.
    pub vocab_size: usize,
    /// Inclusive range of passage lengths, not counting the reserved token.
    pub passage_len: (usize, usize),
    /// Size of the cue pool.
    pub cues: usize,
    pub answer_len: (usize, usize),
    /// Segments introduced by cues other than the asked one.
    pub distractors: usize,
    pub unanswerable_fraction: f64,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            vocab_size: 50,
            passage_len: (20, 39),
            cues: 1,
            answer_len: (1, 3),
            distractors: 0,
            unanswerable_fraction: 0.0,
            seed: 0,
        }
    }
}

const QUESTION_WORDS: [&str; 2] = ["what", "follows"];
const END_MARKER: &str = "end";

impl SynthTaskSpec {
    fn fillers(&self) -> usize {
        self.vocab_size.saturating_sub(self.cues + 1 + QUESTION_WORDS.len())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("synthetic task: {m}")));
        if !(0.0..=1.0).contains(&self.unanswerable_fraction) {
            return err("unanswerable fraction must lie in [0, 1]");
        }
        if self.cues == 0 {
            return err("at least one cue is required");
        }
        if self.fillers() < 2 {
            return err("vocabulary too small for the cue pool");
        }
        let (a_lo, a_hi) = self.answer_len;
        let (p_lo, p_hi) = self.passage_len;
        if a_lo == 0 || a_lo > a_hi || p_lo == 0 || p_lo > p_hi {
            return err("length ranges must be nonempty and positive");
        }
        if self.distractors > 0 && self.cues < 2 {
            return err("distractors need a cue pool of at least two");
        }
        if (self.distractors + 1) * (a_hi + 2) > p_lo {
            return err("shortest passage cannot hold every cue segment");
        }
        Ok(())
    }
}

fn cue(i: usize) -> String {
    format!("cue{i}")
}

/// Deterministic synthetic corpus of `count` examples.
pub fn generate_synthetic(spec: &SynthTaskSpec, count: usize) -> Result<Vec<MrcExample>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Config("synthetic corpus size must be at least 1".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let fillers = spec.fillers();
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let len = rng.range_inclusive(spec.passage_len.0, spec.passage_len.1);
        let asked = rng.below(spec.cues);
        let answerable = !rng.bernoulli(spec.unanswerable_fraction);

        // (cue index, answer tokens)
        let mut segments: Vec<(usize, Vec<String>)> = Vec::new();
        let mut make_segment = |c: usize, rng: &mut Rng| {
            let k = rng.range_inclusive(spec.answer_len.0, spec.answer_len.1);
            let answer = (0..k).map(|_| format!("t{}", rng.below(fillers))).collect();
            segments.push((c, answer));
        };
        if answerable {
            make_segment(asked, &mut rng);
        }
        for _ in 0..spec.distractors {
            let other = (asked + 1 + rng.below(spec.cues - 1)) % spec.cues;
            make_segment(other, &mut rng);
        }
        rng.shuffle(&mut segments);

        let used: usize = segments.iter().map(|(_, a)| a.len() + 2).sum();
        let free = len - used;
        // Filler counts before each segment come from sorted cut points.
        let mut cuts: Vec<usize> = (0..segments.len()).map(|_| rng.below(free + 1)).collect();
        cuts.sort_unstable();

        let mut words: Vec<String> = Vec::with_capacity(len);
        let mut gold = None;
        let mut placed = 0;
        for (i, (c, answer)) in segments.iter().enumerate() {
            while placed < cuts[i] {
                words.push(format!("t{}", rng.below(fillers)));
                placed += 1;
            }
            words.push(cue(*c));
            if *c == asked {
                gold = Some((words.len(), words.len() + answer.len() - 1));
            }
            words.extend(answer.iter().cloned());
            words.push(END_MARKER.to_string());
        }
        while placed < free {
            words.push(format!("t{}", rng.below(fillers)));
            placed += 1;
        }

        let raw_context = words.join(" ");
        let (mut passage_tokens, mut token_char_offsets) = tokenize(&raw_context);
        let n_chars = raw_context.chars().count();
        passage_tokens.push(NULL_TOKEN.to_string());
        token_char_offsets.push((n_chars, n_chars));
        let null = passage_tokens.len() - 1;

        let mut question_tokens: Vec<String> = QUESTION_WORDS.iter().map(|w| w.to_string()).collect();
        question_tokens.push(cue(asked));

        let ex = MrcExample {
            id: format!("synth-{}-{idx}", spec.seed),
            passage_tokens,
            question_tokens,
            gold_spans: vec![gold.unwrap_or((null, null))],
            is_impossible: gold.is_none(),
            raw_context,
            token_char_offsets,
        };
        debug_assert!(ex.validate().is_ok());
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
      "version": "v2.0",
      "data": [{
        "title": "Basketball",
        "paragraphs": [{
          "context": "Michael Jordan played for the Chicago Bulls in 1990s.",
          "qas": [
            {"id": "q1", "question": "Who played for the Bulls?",
             "answers": [{"text": "Michael Jordan", "answer_start": 0},
                         {"text": "Jordan", "answer_start": 8}],
             "is_impossible": false},
            {"id": "q2", "question": "Who coached?", "answers": [],
             "plausible_answers": [{"text": "Chicago", "answer_start": 30}],
             "is_impossible": true},
            {"id": "q3", "question": "When?",
             "answers": [{"text": "1990", "answer_start": 47}]},
            {"id": "q4", "question": "Which team?",
             "answers": [{"text": "Chicago Bulls", "answer_start": 30}]}
          ]
        }]
      }]
    }"#;

    fn load(text: &str) -> Result<Vec<MrcExample>> {
        parse_squad(text, Path::new("fixture.json"), LoadOptions::default())
    }

    #[test]
    fn tokenize_rules() {
        let (t, o) = tokenize("Who?");
        assert_eq!(t, ["who", "?"]);
        assert_eq!(o, [(0, 3), (3, 4)]);
        assert_eq!(tokenize(""), (vec![], vec![]));
        let (t, o) = tokenize("  Ünïcode café, x-ray 3.5 ");
        assert_eq!(t, ["ünïcode", "café", ",", "x", "-", "ray", "3", ".", "5"]);
        assert_eq!(o[0], (2, 9));
    }

    #[test]
    fn offsets_reproduce_tokens() {
        let text = "The Eiffel Tower (Tour Eiffel) is 330 m tall—really!";
        let (t, o) = tokenize(text);
        for (tok, &(s, e)) in t.iter().zip(&o) {
            assert_eq!(&char_slice(text, s, e).to_lowercase(), tok);
        }
    }

    #[test]
    fn loader_aligns_fixture() {
        let exs = load(FIXTURE).unwrap();
        // q3's answer "1990" ends inside the token "1990s" and is dropped.
        let ids: Vec<&str> = exs.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q4"]);

        let q1 = &exs[0];
        assert_eq!(q1.gold_spans, [(0, 1), (1, 1)]);
        assert_eq!(q1.gold_texts(), ["Michael Jordan", "Jordan"]);
        assert_eq!(q1.question_tokens, ["who", "played", "for", "the", "bulls", "?"]);
        assert_eq!(q1.passage_tokens.last().unwrap(), NULL_TOKEN);
        assert_eq!(q1.passage_len(), 11);

        let q2 = &exs[1];
        assert!(q2.is_impossible);
        assert_eq!(q2.gold_spans, [(10, 10)]);
        assert_eq!(q2.gold_texts(), [""]);

        assert_eq!(exs[2].gold_spans, [(5, 6)]);
        for ex in &exs {
            ex.validate().unwrap();
        }
    }

    #[test]
    fn loader_edge_cases() {
        assert!(load(r#"{"data": []}"#).unwrap().is_empty());
        match load(r#"{"data": [{"paragraphs": [{"qas": []}]}]}"#) {
            Err(Error::Schema { message, .. }) => assert!(message.contains("context")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load("{\"data\": [").unwrap_err(), Error::Parse { .. }));

        let tight = LoadOptions {
            max_passage_len: 4,
            max_question_len: 2,
        };
        let exs = parse_squad(FIXTURE, Path::new("f"), tight).unwrap();
        assert_eq!(exs[0].passage_len(), 4);
        assert_eq!(exs[0].question_tokens, ["who", "played"]);
        // q4's answer lies past the truncation point
        assert!(exs.iter().all(|e| e.id != "q4"));
    }

    #[test]
    fn references_keep_original_answers() {
        let refs = parse_squad_references(FIXTURE, Path::new("f")).unwrap();
        assert_eq!(refs.len(), 4);
        assert_eq!(refs[1].golds, [""]);
        assert_eq!(refs[2].golds, ["1990"]);
    }

    #[test]
    fn jsonl_round_trip() {
        let exs = load(FIXTURE).unwrap();
        let bytes = to_jsonl(&exs);
        let back = parse_jsonl(std::str::from_utf8(&bytes).unwrap(), Path::new("c.jsonl")).unwrap();
        assert_eq!(back, exs);
        let err = parse_jsonl("{}\n", Path::new("c.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn synthetic_structure() {
        let spec = SynthTaskSpec {
            seed: 5,
            ..SynthTaskSpec::default()
        };
        let exs = generate_synthetic(&spec, 200).unwrap();
        assert_eq!(exs, generate_synthetic(&spec, 200).unwrap());
        for ex in &exs {
            ex.validate().unwrap();
            assert!(!ex.is_impossible);
            let (b, e) = ex.target_span();
            assert_eq!(ex.passage_tokens[b - 1], ex.question_tokens[2]);
            assert_eq!(ex.passage_tokens[e + 1], END_MARKER);
            assert!(ex.passage_len() <= 40);
        }
    }

    #[test]
    fn synthetic_distractors_and_unanswerable() {
        let spec = SynthTaskSpec {
            cues: 4,
            distractors: 2,
            unanswerable_fraction: 0.3,
            seed: 9,
            ..SynthTaskSpec::default()
        };
        let exs = generate_synthetic(&spec, 500).unwrap();
        let impossible = exs.iter().filter(|e| e.is_impossible).count();
        assert!((100..=200).contains(&impossible), "{impossible}");
        for ex in &exs {
            let asked = &ex.question_tokens[2];
            let present = ex.passage_tokens.iter().filter(|t| *t == asked).count();
            assert_eq!(present, usize::from(!ex.is_impossible));
        }
        let bad = SynthTaskSpec {
            unanswerable_fraction: 1.5,
            ..SynthTaskSpec::default()
        };
        assert!(matches!(generate_synthetic(&bad, 1), Err(Error::Config(_))));
        assert!(generate_synthetic(&SynthTaskSpec::default(), 0).is_err());
    }
}
