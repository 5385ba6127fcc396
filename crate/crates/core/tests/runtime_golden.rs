//! Compares the forward pass against logits and hidden states produced by the
//! Hugging Face GPT-2 implementation on the seeded GPT-2-small-shaped
//! checkpoint (see `tools/oracle/make_runtime_fixtures.py`).

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::Deserialize;
use tomprobe_core::corpus::{load_corpus, make_question_only, Condition};
use tomprobe_core::runtime::synthetic::{ensure_model_dir, FIXTURE_SEED};
use tomprobe_core::runtime::{capture_trial, forward, Gpt2Model, ModelSpec, TrialRunner};
use tomprobe_core::Error;

const TOLERANCE: f32 = 1e-2;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    repo().join("crates/core/tests/fixtures")
}

fn model() -> &'static Gpt2Model {
    static M: OnceLock<Gpt2Model> = OnceLock::new();
    M.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("gpt2-synthetic-{FIXTURE_SEED}"));
        ensure_model_dir(
            &dir,
            &ModelSpec::gpt2_small(),
            FIXTURE_SEED,
            &repo().join("assets/gpt2"),
        )
        .unwrap();
        Gpt2Model::load(&dir).unwrap()
    })
}

#[derive(Deserialize)]
struct Prompt {
    prompt: String,
    ids: Vec<u32>,
    top1: u32,
}

#[derive(Deserialize)]
struct Hidden {
    prompt_index: usize,
    shape: [usize; 3],
}

#[derive(Deserialize)]
struct Golden {
    vocab_size: usize,
    hidden: Hidden,
    prompts: Vec<Prompt>,
}

fn golden() -> Golden {
    let text = std::fs::read_to_string(fixtures().join("gpt2_prompts.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn read_f32(path: &Path) -> Vec<f32> {
    std::fs::read(path)
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn final_logits_match_reference_on_all_prompts() {
    let m = model();
    let g = golden();
    assert_eq!(g.prompts.len(), 50);
    let logits = read_f32(&fixtures().join("gpt2_logits.bin"));
    let v = g.vocab_size;
    assert_eq!(logits.len(), 50 * v);
    let mut worst = 0.0f32;
    for (i, p) in g.prompts.iter().enumerate() {
        let ids = m.tokenizer.encode(&p.prompt).ids;
        assert_eq!(ids, p.ids, "tokenization of {:?}", p.prompt);
        let out = forward(&m.weights, &ids, false).unwrap();
        let reference = &logits[i * v..][..v];
        let diff = max_abs_diff(&out.final_logits, reference);
        worst = worst.max(diff);
        assert!(diff <= TOLERANCE, "prompt {i} {:?}: max |Δ| = {diff}", p.prompt);
        let top1 = out
            .final_logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0 as u32;
        assert_eq!(top1, p.top1, "prompt {i} {:?}", p.prompt);
    }
    eprintln!("worst max |Δ| over 50 prompts: {worst:.2e}");
}

#[test]
fn every_capture_point_matches_reference() {
    let m = model();
    let g = golden();
    let p = &g.prompts[g.hidden.prompt_index];
    let [points, t, d] = g.hidden.shape;
    assert_eq!(points, m.spec().n_layers + 1);
    let reference = read_f32(&fixtures().join("gpt2_hidden.bin"));
    let out = forward(&m.weights, &p.ids, true).unwrap();
    assert_eq!(out.hidden.len(), points * t * d);
    for layer in 0..points {
        let a = &out.hidden[layer * t * d..][..t * d];
        let b = &reference[layer * t * d..][..t * d];
        let diff = max_abs_diff(a, b);
        assert!(diff <= TOLERANCE, "capture point {layer}: max |Δ| = {diff}");
    }
}

#[test]
fn causal_prefix_is_unchanged_by_later_tokens() {
    let m = model();
    let ids = m.tokenizer.encode("The capital of France is Paris, and").ids;
    let short = forward(&m.weights, &ids[..4], true).unwrap();
    let long = forward(&m.weights, &ids, true).unwrap();
    let d = m.spec().d_model;
    for layer in 0..=m.spec().n_layers {
        for tok in 0..4 {
            let a = &short.hidden[(layer * 4 + tok) * d..][..d];
            let b = &long.hidden[(layer * ids.len() + tok) * d..][..d];
            assert!(max_abs_diff(a, b) < 1e-4, "layer {layer} token {tok}");
        }
    }
}

#[test]
fn belief_question_span_covers_the_stem() {
    let m = model();
    let corpus = load_corpus(repo().join("data/tom_pairs.json")).unwrap();
    let trial = &corpus.pairs[1].false_trial;
    let cap = m.run(trial, &trial.belief_question, true).unwrap();
    assert_eq!(cap.capture_points(), 13);
    assert_eq!(cap.hidden.len(), 13 * cap.n_tokens * 768);
    assert_eq!(cap.final_logits.len(), 50257);
    let (s, e) = cap.question_span;
    assert_eq!(e, cap.n_tokens);
    let span_text = m.tokenizer.decode(&cap.token_ids[s..e]).unwrap();
    assert_eq!(span_text, " Ned believes that the apple is on the");
    cap.validate().unwrap();
}

#[test]
fn question_only_span_is_whole_sequence() {
    let m = model();
    let corpus = load_corpus(repo().join("data/tom_pairs.json")).unwrap();
    let qo = make_question_only(&corpus).unwrap();
    assert_eq!(qo.condition, Condition::QuestionOnly);
    for trial in qo.trials() {
        let cap = capture_trial(&m.weights, &m.tokenizer, trial, &trial.belief_question, false).unwrap();
        assert_eq!(cap.question_span, (0, cap.n_tokens));
        assert!(!cap.has_hidden());
    }
}

#[test]
fn overlong_input_is_rejected() {
    let m = model();
    let corpus = load_corpus(repo().join("data/tom_pairs.json")).unwrap();
    let mut trial = corpus.pairs[0].true_trial.clone();
    trial.statement = "word ".repeat(1100).trim_end().to_string();
    let err = m.run(&trial, &trial.fact_question, false).unwrap_err();
    assert!(matches!(err, Error::SequenceTooLong { max: 1024, .. }), "{err}");
}
