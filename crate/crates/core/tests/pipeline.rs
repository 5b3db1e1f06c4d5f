//! Whole-model checks: a plain-loop reference forward, training steps,
//! checkpoint and attention-dump round trips.

use aba_core::data::{generate_synthetic, MrcExample, SynthTaskSpec};
use aba_core::encoder::Vocabulary;
use aba_core::hos::GateInit;
use aba_core::pipeline::{
    build_vocabulary, dump_attention, eval_loss, forward, forward_any, forward_baseline, predict, train, AttentionDump,
    Batch, Checkpoint, Model, ModelConfig, ModelKind, TrainConfig, Trainer,
};
use aba_core::{Rng, Tape, Tensor};

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vecp(model: &Model, name: &str) -> Vec<f64> {
    model.params.get(name).unwrap().data().to_vec()
}

fn matp(model: &Model, name: &str) -> Mat {
    mat(model.params.get(name).unwrap())
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            out[i][j] = (0..k).map(|t| a[i][t] * b[t][j]).sum();
        }
    }
    out
}

fn tr(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn attend(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let d = q[0].len() as f64;
    let scores: Mat = mm(q, &tr(k)).into_iter().map(|r| r.iter().map(|x| x / d.sqrt()).collect()).collect();
    let w: Mat = scores.iter().map(|r| softmax(r)).collect();
    mm(&w, v)
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(j, v)| g[j] * (v - mean) / (var + 1e-5).sqrt() + b[j]).collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

fn block(model: &Model, i: usize, x: &Mat) -> Mat {
    let p = |n: &str| format!("encoder.{i}.{n}");
    let q = mm(x, &matp(model, &p("wq")));
    let k = mm(x, &matp(model, &p("wk")));
    let v = mm(x, &matp(model, &p("wv")));
    let h = layer_norm(&add(x, &attend(&q, &k, &v)), &vecp(model, &p("ln1.gamma")), &vecp(model, &p("ln1.beta")));
    let b1 = vecp(model, &p("b1"));
    let b2 = vecp(model, &p("b2"));
    let f: Mat = mm(&h, &matp(model, &p("w1")))
        .into_iter()
        .map(|r| r.iter().zip(&b1).map(|(x, b)| (x + b).max(0.0)).collect())
        .collect();
    let f: Mat = mm(&f, &matp(model, &p("w2")))
        .into_iter()
        .map(|r| r.iter().zip(&b2).map(|(x, b)| x + b).collect())
        .collect();
    layer_norm(&add(&h, &f), &vecp(model, &p("ln2.gamma")), &vecp(model, &p("ln2.beta")))
}

/// Unbatched forward written with plain loops; returns (begin, end, Ĥ).
fn reference_forward(model: &Model, ex: &MrcExample) -> (Vec<f64>, Vec<f64>, Mat) {
    let cfg = &model.config;
    let d = cfg.d;
    let table = matp(model, "embedding");
    let lookup = |toks: &[String]| -> Mat { model.vocab.encode(toks).iter().map(|&id| table[id].clone()).collect() };
    let pos = |x: &Mat| -> Mat {
        x.iter()
            .enumerate()
            .map(|(t, r)| {
                r.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let angle = t as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                        v * (d as f64).sqrt() + if i % 2 == 0 { angle.sin() } else { angle.cos() }
                    })
                    .collect()
            })
            .collect()
    };
    let e_p = lookup(&ex.passage_tokens);
    let e_q = lookup(&ex.question_tokens);
    let mut layers_p = vec![e_p.clone()];
    let mut layers_q = vec![e_q.clone()];
    let (mut h_p, mut h_q) = (pos(&e_p), pos(&e_q));
    for i in 0..cfg.n {
        h_p = block(model, i, &h_p);
        h_q = block(model, i, &h_q);
        layers_p.push(h_p.clone());
        layers_q.push(h_q.clone());
    }
    let a_p = attend(&h_p, &h_q, &h_q);
    let a_q = attend(&h_q, &h_p, &h_p);

    let gated = |layers: &mut Vec<Mat>, a: Mat, gate: &str| -> Mat {
        layers.push(a);
        let lam = matp(model, gate);
        (0..layers[0].len())
            .map(|t| {
                layers
                    .iter()
                    .enumerate()
                    .flat_map(|(k, l)| l[t].iter().zip(&lam[k]).map(|(x, g)| x * g).collect::<Vec<_>>())
                    .collect()
            })
            .collect()
    };
    let (p, q) = match cfg.kind {
        ModelKind::Aba => (gated(&mut layers_p, a_p, "lambda_p"), gated(&mut layers_q, a_q, "lambda_q")),
        ModelKind::Baseline => (a_p, a_q),
    };

    let w = vecp(model, "trilinear");
    let width = p[0].len();
    let h: Mat = p
        .iter()
        .map(|pi| {
            q.iter()
                .map(|qj| (0..width).map(|k| w[k] * pi[k] + w[width + k] * qj[k] + w[2 * width + k] * pi[k] * qj[k]).sum())
                .collect()
        })
        .collect();
    let h_row: Mat = h.iter().map(|r| softmax(r)).collect();
    let h_col = tr(&tr(&h).iter().map(|c| softmax(c)).collect::<Mat>());
    let m = mm(&h_row, &q);
    let s = mm(&h_row, &mm(&tr(&h_col), &p));
    let fused: Mat = (0..p.len())
        .map(|i| {
            let mut r = p[i].clone();
            r.extend(&m[i]);
            r.extend(p[i].iter().zip(&m[i]).map(|(a, b)| a * b));
            r.extend(p[i].iter().zip(&s[i]).map(|(a, b)| a * b));
            r
        })
        .collect();
    let wb = vecp(model, "head.begin");
    let we = vecp(model, "head.end");
    let dot = |r: &Vec<f64>, w: &[f64]| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    (fused.iter().map(|r| dot(r, &wb)).collect(), fused.iter().map(|r| dot(r, &we)).collect(), h_row)
}

fn small_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        d: 8,
        d_ff: 12,
        n: 2,
        dropout: 0.0,
        max_passage_len: 40,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn corpus(count: usize, seed: u64) -> Vec<MrcExample> {
    let spec = SynthTaskSpec {
        cues: 3,
        distractors: 1,
        unanswerable_fraction: 0.3,
        seed,
        ..SynthTaskSpec::default()
    };
    generate_synthetic(&spec, count).unwrap()
}

/// Randomizes the gates so every stacked layer reaches the output.
fn randomize_gates(model: &mut Model, seed: u64) {
    let mut rng = Rng::new(seed);
    for name in ["lambda_p", "lambda_q"] {
        if let Some(t) = model.params.get_mut(name) {
            *t = Tensor::uniform(t.shape(), 1.0, &mut rng);
        }
    }
}

#[test]
fn batched_forward_matches_reference() {
    let exs = corpus(6, 11);
    for kind in [ModelKind::Aba, ModelKind::Baseline] {
        let mut model = Model::init(small_config(kind), build_vocabulary(&exs)).unwrap();
        randomize_gates(&mut model, 5);
        let refs: Vec<&MrcExample> = exs.iter().collect();
        let batch = Batch::new(&model.vocab, &model.config, &refs).unwrap();
        let mut tape = Tape::new();
        let (_, bound) = model.bind(&mut tape, false).unwrap();
        let outs = forward_any(&mut tape, &bound, &batch, false, &mut Rng::new(0)).unwrap();
        for (o, ex) in outs.iter().zip(&exs) {
            let (rb, re, rh) = reference_forward(&model, ex);
            let l = ex.passage_len();
            let m = ex.question_len();
            let b = &tape.value(o.begin).data()[..l];
            let e = &tape.value(o.end).data()[..l];
            for i in 0..l {
                assert!((b[i] - rb[i]).abs() <= 1e-10, "{kind:?} begin {i}: {} vs {}", b[i], rb[i]);
                assert!((e[i] - re[i]).abs() <= 1e-10, "{kind:?} end {i}");
            }
            let h_row = tape.value(o.attention.h_row);
            let cols = h_row.cols();
            for i in 0..l {
                for j in 0..m {
                    assert!((h_row.data()[i * cols + j] - rh[i][j]).abs() <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn shapes_for_small_example() {
    let ex = MrcExample {
        id: "s".into(),
        passage_tokens: ["a", "b", "c", "d", "[NULL]"].map(String::from).to_vec(),
        question_tokens: ["a", "x", "b"].map(String::from).to_vec(),
        gold_spans: vec![(1, 2)],
        is_impossible: false,
        raw_context: "a b c d".into(),
        token_char_offsets: vec![(0, 1), (2, 3), (4, 5), (6, 7), (7, 7)],
    };
    let cfg = ModelConfig { d: 4, d_ff: 6, n: 2, ..small_config(ModelKind::Aba) };
    let mut model = Model::init(cfg, build_vocabulary(std::slice::from_ref(&ex))).unwrap();
    let batch = Batch::new(&model.vocab, &model.config, &[&ex]).unwrap();

    let mut tape = Tape::new();
    let (_, bound) = model.bind(&mut tape, false).unwrap();
    let outs = forward(&mut tape, &bound, &batch, false, &mut Rng::new(0)).unwrap();
    assert_eq!(tape.shape(outs[0].begin), &[5]);
    assert_eq!(tape.shape(outs[0].end), &[5]);
    assert_eq!(model.params.get("head.begin").unwrap().shape(), &[64, 1]);

    // zero similarity weights make every Ĥ row uniform
    let w = model.params.get_mut("trilinear").unwrap();
    *w = Tensor::zeros(w.shape());
    let mut tape = Tape::new();
    let (_, bound) = model.bind(&mut tape, false).unwrap();
    let outs = forward(&mut tape, &bound, &batch, false, &mut Rng::new(0)).unwrap();
    for v in tape.value(outs[0].attention.h_row).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(forward_baseline(&mut tape, &bound, &batch, false, &mut Rng::new(0)).is_err());
}

#[test]
fn baseline_layout() {
    let exs = corpus(4, 1);
    let vocab = build_vocabulary(&exs);
    let aba = Model::init(small_config(ModelKind::Aba), vocab.clone()).unwrap();
    let base = Model::init(small_config(ModelKind::Baseline), vocab).unwrap();
    assert!(base.params.num_scalars() < aba.params.num_scalars());
    assert_eq!(base.params.get("head.begin").unwrap().shape(), &[4 * 8, 1]);

    let aba_names: Vec<&str> = aba.params.names().collect();
    let base_names: Vec<&str> = base.params.names().collect();
    let only_aba: Vec<&str> = aba_names.iter().copied().filter(|n| !base_names.contains(n)).collect();
    assert_eq!(only_aba, ["lambda_p", "lambda_q"]);
    assert!(base_names.iter().all(|n| aba_names.contains(n)));

    let g = aba.params.get("lambda_p").unwrap();
    assert_eq!(g.shape(), &[4, 8]);
    assert!(g.data()[..8].iter().all(|&x| x == 1.0) && g.data()[8..].iter().all(|&x| x == 0.0));
    let last = Model::init(ModelConfig { gate_init: GateInit::Last, ..small_config(ModelKind::Aba) }, aba.vocab.clone()).unwrap();
    assert!(last.params.get("lambda_q").unwrap().data()[24..].iter().all(|&x| x == 1.0));
}

#[test]
fn one_step_reduces_loss() {
    let exs = corpus(1, 2);
    let refs: Vec<&MrcExample> = exs.iter().collect();
    let model = Model::init(small_config(ModelKind::Aba), build_vocabulary(&exs)).unwrap();
    let before = eval_loss(&model, &refs).unwrap();
    let mut trainer = Trainer::new(model, TrainConfig::default()).unwrap();
    let reported = trainer.train_step(&refs).unwrap();
    assert_eq!(reported, before);
    let after = eval_loss(&trainer.model, &refs).unwrap();
    assert!(after < before, "{after} !< {before}");
    assert_eq!(trainer.step, 1);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let exs = corpus(8, 4);
    let refs: Vec<&MrcExample> = exs.iter().collect();
    let model = Model::init(ModelConfig { dropout: 0.1, ..small_config(ModelKind::Aba) }, build_vocabulary(&exs)).unwrap();
    let mut trainer = Trainer::new(model.clone(), TrainConfig { lr: 0.0, ..TrainConfig::default() }).unwrap();
    for _ in 0..3 {
        trainer.train_step(&refs).unwrap();
    }
    for ((_, a), (_, b)) in model.params.iter().zip(trainer.model.params.iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn training_is_deterministic_and_moves_gates() {
    let exs = corpus(24, 6);
    let dev = corpus(8, 7);
    let cfg = ModelConfig { dropout: 0.1, ..small_config(ModelKind::Aba) };
    let tc = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let a = train(&exs, Some(&dev), cfg.clone(), tc.clone()).unwrap();
    let b = train(&exs, Some(&dev), cfg, tc).unwrap();
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.step, 6);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        assert_eq!(x.dev_em, y.dev_em);
        assert_eq!(x.dev_f1, y.dev_f1);
    }
    assert_eq!(a.model, b.model);
    let lam = a.model.params.get("lambda_p").unwrap();
    assert!(lam.data()[8..].iter().any(|&x| x != 0.0));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let exs = corpus(5, 8);
    let mut model = Model::init(small_config(ModelKind::Aba), build_vocabulary(&exs)).unwrap();
    randomize_gates(&mut model, 1);
    let ck = Checkpoint { model, step: 42 };
    let bytes = ck.to_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let before = predict(&ck.model, &exs, 2).unwrap();
    let after = predict(&back.model, &exs, 2).unwrap();
    for (p, q) in before.values().zip(after.values()) {
        assert_eq!(p.span.score.to_bits(), q.span.score.to_bits());
        assert_eq!(p, q);
    }

    let mut truncated = bytes.clone();
    truncated.pop();
    assert!(Checkpoint::from_bytes(&truncated, &path).is_err());
    let other = Model::init(small_config(ModelKind::Baseline), Vocabulary::default()).unwrap();
    let mut mixed = Checkpoint { model: other, step: 0 }.to_bytes();
    let nl = mixed.iter().position(|&b| b == b'\n').unwrap();
    let header = String::from_utf8(mixed[..nl].to_vec()).unwrap().replace("\"baseline\"", "\"aba\"");
    mixed.splice(..nl, header.into_bytes());
    assert!(Checkpoint::from_bytes(&mixed, &path).is_err());
}

#[test]
fn attention_dump_round_trip() {
    let exs = corpus(3, 9);
    let mut model = Model::init(small_config(ModelKind::Aba), build_vocabulary(&exs)).unwrap();
    randomize_gates(&mut model, 2);
    let dump = dump_attention(&model, &exs[0]).unwrap();
    assert_eq!(dump.rows, exs[0].passage_len());
    assert_eq!(dump.cols, exs[0].question_len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attn.json");
    dump.save(&path).unwrap();
    let back = AttentionDump::load(&path).unwrap();
    assert_eq!(back.passage_tokens, dump.passage_tokens);
    for i in 0..back.rows {
        assert!((back.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    assert_eq!(AttentionDump::load(&path).unwrap().to_json(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn null_peaked_model_predicts_empty_text() {
    let exs = corpus(12, 10);
    let mut model = Model::init(small_config(ModelKind::Aba), build_vocabulary(&exs)).unwrap();
    // Feature 0 of the embedding block is 100 on the reserved token and 0
    // elsewhere; both heads read only that feature.
    let null_id = model.vocab.id("[NULL]");
    let d = model.config.d;
    let table = model.params.get_mut("embedding").unwrap();
    for r in 0..table.rows() {
        table.data_mut()[r * d] = if r == null_id { 100.0 } else { 0.0 };
    }
    for name in ["head.begin", "head.end"] {
        let t = model.params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
        t.data_mut()[0] = 1.0;
    }
    let preds = predict(&model, &exs, 4).unwrap();
    assert_eq!(preds.len(), exs.len());
    for ex in &exs {
        let p = &preds[&ex.id];
        assert!(p.span.is_unanswerable);
        assert_eq!((p.span.begin, p.span.end), ex.null_span());
        assert_eq!(p.text, "");
    }
}
