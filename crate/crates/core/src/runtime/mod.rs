//! GPT-2 forward pass on CPU with residual-stream capture.
//!
//! Capture point 0 is the input to the first block (token + position
//! embedding); capture point `l >= 1` is the output of block `l`. The final
//! layer norm only feeds the logits and is never part of a capture.

pub mod capture_io;
pub mod kernels;
pub mod synthetic;
mod weights;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{QuestionSpec, TomTrial};
use crate::error::{Error, Result};
use crate::tokenizer::{load_tokenizer, TokenSequence, Tokenizer};

pub use weights::{load_weights, load_weights_from_bytes, tensor_layout, Block, LayerNorm, Linear, Weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub layer_norm_eps: f32,
}

impl ModelSpec {
    pub fn gpt2_small() -> Self {
        ModelSpec {
            n_layers: 12,
            d_model: 768,
            n_heads: 12,
            vocab_size: 50257,
            context_len: 1024,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::ModelSpec(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::ModelSpec(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return Err(Error::ModelSpec("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Reads a Hugging Face style GPT-2 `config.json`.
    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct HfConfig {
            n_layer: usize,
            n_embd: usize,
            n_head: usize,
            vocab_size: usize,
            n_positions: Option<usize>,
            n_ctx: Option<usize>,
            #[serde(default = "default_eps")]
            layer_norm_epsilon: f32,
        }
        fn default_eps() -> f32 {
            1e-5
        }
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: HfConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let context_len = c
            .n_positions
            .or(c.n_ctx)
            .ok_or_else(|| Error::ModelSpec(format!("{}: neither n_positions nor n_ctx given", path.display())))?;
        let spec = ModelSpec {
            n_layers: c.n_layer,
            d_model: c.n_embd,
            n_heads: c.n_head,
            vocab_size: c.vocab_size,
            context_len,
            layer_norm_eps: c.layer_norm_epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The `config.json` document matching [`ModelSpec::from_config_file`].
    pub fn to_config_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model_type": "gpt2",
            "architectures": ["GPT2LMHeadModel"],
            "activation_function": "gelu_new",
            "n_layer": self.n_layers,
            "n_embd": self.d_model,
            "n_head": self.n_heads,
            "vocab_size": self.vocab_size,
            "n_positions": self.context_len,
            "n_ctx": self.context_len,
            // Round-trip through the shortest decimal so 1e-5 stays 1e-5.
            "layer_norm_epsilon": self.layer_norm_eps.to_string().parse::<f64>().unwrap_or(1e-5),
            "tie_word_embeddings": true,
        })
    }
}

/// Residual-stream states `(L+1) × T × d` and last-position logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Empty unless capture was requested.
    pub hidden: Vec<f32>,
    pub final_logits: Vec<f32>,
}

/// Runs the model over `ids`.
pub fn forward(weights: &Weights, ids: &[u32], capture: bool) -> Result<ForwardOutput> {
    let spec = &weights.spec;
    let t_len = ids.len();
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    if t_len > spec.context_len {
        return Err(Error::SequenceTooLong {
            len: t_len,
            max: spec.context_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= spec.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: spec.vocab_size,
        });
    }

    let d = spec.d_model;
    let eps = spec.layer_norm_eps;
    let mut x = vec![0.0f32; t_len * d];
    for (pos, (&id, row)) in ids.iter().zip(x.chunks_exact_mut(d)).enumerate() {
        let tok = &weights.token_embedding[id as usize * d..][..d];
        let posv = &weights.position_embedding[pos * d..][..d];
        for ((r, a), b) in row.iter_mut().zip(tok).zip(posv) {
            *r = a + b;
        }
    }

    let mut hidden = Vec::new();
    if capture {
        hidden.reserve_exact((spec.n_layers + 1) * t_len * d);
        hidden.extend_from_slice(&x);
    }

    let mut scratch = Scratch::new(t_len, d);
    for (l, block) in weights.blocks.iter().enumerate() {
        block_forward(block, spec, &mut x, &mut scratch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output of block {}", l + 1)));
        }
        if capture {
            hidden.extend_from_slice(&x);
        }
    }

    let last = &x[(t_len - 1) * d..];
    let mut normed = vec![0.0f32; d];
    kernels::layer_norm(last, d, &weights.ln_f.scale, &weights.ln_f.shift, eps, &mut normed);
    let mut final_logits = vec![0.0f32; spec.vocab_size];
    kernels::matvec(&weights.token_embedding, &normed, &mut final_logits);
    if final_logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("final logits".into()));
    }
    Ok(ForwardOutput { hidden, final_logits })
}

struct Scratch {
    normed: Vec<f32>,
    qkv: Vec<f32>,
    attn: Vec<f32>,
    proj: Vec<f32>,
    fc: Vec<f32>,
    scores: Vec<f32>,
}

impl Scratch {
    fn new(t: usize, d: usize) -> Self {
        Scratch {
            normed: vec![0.0; t * d],
            qkv: vec![0.0; t * 3 * d],
            attn: vec![0.0; t * d],
            proj: vec![0.0; t * d],
            fc: vec![0.0; t * 4 * d],
            scores: vec![0.0; t],
        }
    }
}

/// Pre-norm block: `x += attn(ln_1(x)); x += mlp(ln_2(x))`.
fn block_forward(block: &Block, spec: &ModelSpec, x: &mut [f32], s: &mut Scratch) {
    let d = spec.d_model;
    let t_len = x.len() / d;
    let eps = spec.layer_norm_eps;

    kernels::layer_norm(x, d, &block.ln_1.scale, &block.ln_1.shift, eps, &mut s.normed);
    apply(&block.attn_qkv, &s.normed, t_len, &mut s.qkv);
    causal_attention(&s.qkv, t_len, spec, &mut s.scores, &mut s.attn);
    apply(&block.attn_out, &s.attn, t_len, &mut s.proj);
    add_into(x, &s.proj);

    kernels::layer_norm(x, d, &block.ln_2.scale, &block.ln_2.shift, eps, &mut s.normed);
    apply(&block.mlp_fc, &s.normed, t_len, &mut s.fc);
    for v in s.fc.iter_mut() {
        *v = kernels::gelu(*v);
    }
    apply(&block.mlp_proj, &s.fc, t_len, &mut s.proj);
    add_into(x, &s.proj);
}

fn apply(layer: &Linear, input: &[f32], rows: usize, out: &mut [f32]) {
    kernels::linear(
        input,
        rows,
        layer.fan_in,
        &layer.weight,
        layer.fan_out,
        &layer.bias,
        out,
    );
}

fn add_into(x: &mut [f32], delta: &[f32]) {
    for (a, b) in x.iter_mut().zip(delta) {
        *a += b;
    }
}

/// Multi-head attention where position `i` sees positions `0..=i` only.
fn causal_attention(qkv: &[f32], t_len: usize, spec: &ModelSpec, scores: &mut [f32], out: &mut [f32]) {
    let d = spec.d_model;
    let dh = spec.d_head();
    let scale = 1.0 / (dh as f32).sqrt();
    out.fill(0.0);
    for h in 0..spec.n_heads {
        let q_off = h * dh;
        let k_off = d + h * dh;
        let v_off = 2 * d + h * dh;
        for i in 0..t_len {
            let q = &qkv[i * 3 * d + q_off..][..dh];
            let row = &mut scores[..=i];
            for (j, s) in row.iter_mut().enumerate() {
                *s = kernels::dot(q, &qkv[j * 3 * d + k_off..][..dh]) * scale;
            }
            kernels::causal_softmax(row, i + 1);
            let o = &mut out[i * d + q_off..][..dh];
            for (j, &w) in row.iter().enumerate() {
                let v = &qkv[j * 3 * d + v_off..][..dh];
                for (oo, vv) in o.iter_mut().zip(v) {
                    *oo += w * vv;
                }
            }
        }
    }
}

/// Hidden states for one trial and question, plus final-position logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSet {
    pub trial_id: String,
    pub n_layers: usize,
    pub n_tokens: usize,
    pub d_model: usize,
    /// `(n_layers + 1) × n_tokens × d_model`, row-major; empty when the
    /// pass ran without capture.
    pub hidden: Vec<f32>,
    pub final_logits: Vec<f32>,
    pub token_ids: Vec<u32>,
    /// Half-open token range `[start, end)` of the question.
    pub question_span: (usize, usize),
}

impl CaptureSet {
    pub fn capture_points(&self) -> usize {
        self.n_layers + 1
    }

    pub fn has_hidden(&self) -> bool {
        !self.hidden.is_empty()
    }

    /// The `d`-vector at capture point `layer` and position `token`.
    pub fn hidden_at(&self, layer: usize, token: usize) -> &[f32] {
        let d = self.d_model;
        &self.hidden[(layer * self.n_tokens + token) * d..][..d]
    }

    pub fn vocab_size(&self) -> usize {
        self.final_logits.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.question_span;
        if start >= end || end > self.n_tokens {
            return Err(Error::CaptureFormat(format!(
                "question span ({start}, {end}) invalid for {} tokens",
                self.n_tokens
            )));
        }
        if !self.token_ids.is_empty() && self.token_ids.len() != self.n_tokens {
            return Err(Error::CaptureFormat(format!(
                "{} token ids for {} tokens",
                self.token_ids.len(),
                self.n_tokens
            )));
        }
        let expect = self.capture_points() * self.n_tokens * self.d_model;
        if self.has_hidden() && self.hidden.len() != expect {
            return Err(Error::CaptureFormat(format!(
                "hidden has {} values, expected {expect}",
                self.hidden.len()
            )));
        }
        if self.hidden.iter().chain(&self.final_logits).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("capture of `{}`", self.trial_id)));
        }
        Ok(())
    }
}

/// Model input for a trial: statement, one space, question stem. Returns the
/// text and the byte offset where the question begins; the joining space
/// belongs to the question since GPT-2 attaches it to the following word.
pub fn trial_input(statement: &str, stem: &str) -> (String, usize) {
    if statement.is_empty() {
        (stem.to_string(), 0)
    } else {
        (format!("{statement} {stem}"), statement.len())
    }
}

/// Index of the first token starting at or after `byte`.
pub fn question_span(tokens: &TokenSequence, byte: usize) -> (usize, usize) {
    let start = tokens
        .offsets
        .iter()
        .position(|&(s, _)| s >= byte)
        .unwrap_or(tokens.len());
    (start, tokens.len())
}

/// Tokenises statement + question, runs the model and records the span.
pub fn capture_trial(
    weights: &Weights,
    tokenizer: &Tokenizer,
    trial: &TomTrial,
    question: &QuestionSpec,
    capture: bool,
) -> Result<CaptureSet> {
    let (text, q_byte) = trial_input(&trial.statement, &question.stem);
    let tokens = tokenizer.encode(&text);
    let span = question_span(&tokens, q_byte);
    if span.0 >= span.1 {
        return Err(Error::EmptyQuestionSpan(trial.trial_id.clone()));
    }
    let out = forward(weights, &tokens.ids, capture)?;
    Ok(CaptureSet {
        trial_id: trial.trial_id.clone(),
        n_layers: weights.spec.n_layers,
        n_tokens: tokens.len(),
        d_model: weights.spec.d_model,
        hidden: out.hidden,
        final_logits: out.final_logits,
        token_ids: tokens.ids,
        question_span: span,
    })
}

/// Produces a [`CaptureSet`] for a trial and one of its questions.
pub trait TrialRunner: Sync {
    fn run(&self, trial: &TomTrial, question: &QuestionSpec, capture: bool) -> Result<CaptureSet>;
}

/// A loaded GPT-2 model together with its tokenizer.
pub struct Gpt2Model {
    pub weights: Weights,
    pub tokenizer: Tokenizer,
    pub dir: PathBuf,
}

impl Gpt2Model {
    /// Loads `config.json`, `model.safetensors`, `vocab.json` and
    /// `merges.txt` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "model directory not found"),
            ));
        }
        let spec = ModelSpec::from_config_file(dir.join("config.json"))?;
        let tokenizer = load_tokenizer(dir.join("vocab.json"), dir.join("merges.txt"))?;
        if tokenizer.vocab_size() != spec.vocab_size {
            return Err(Error::ModelSpec(format!(
                "tokenizer has {} entries but the model expects {}",
                tokenizer.vocab_size(),
                spec.vocab_size
            )));
        }
        let weights = load_weights(dir.join("model.safetensors"), &spec)?;
        Ok(Gpt2Model {
            weights,
            tokenizer,
            dir: dir.to_path_buf(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.weights.spec
    }

    pub fn name(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    }
}

impl TrialRunner for Gpt2Model {
    fn run(&self, trial: &TomTrial, question: &QuestionSpec, capture: bool) -> Result<CaptureSet> {
        capture_trial(&self.weights, &self.tokenizer, trial, question, capture)
    }
}

/// Human-readable parameter count, e.g. `124M` or `1.5B`.
pub fn params_label(count: usize) -> String {
    let c = count as f64;
    if c >= 1e9 {
        format!("{:.1}B", c / 1e9)
    } else if c >= 1e6 {
        format!("{:.0}M", c / 1e6)
    } else {
        format!("{:.0}K", c / 1e3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_weights() -> Weights {
        let spec = ModelSpec {
            n_layers: 2,
            d_model: 16,
            n_heads: 4,
            vocab_size: 300,
            context_len: 32,
            layer_norm_eps: 1e-5,
        };
        synthetic::random_weights(&spec, 3)
    }

    #[test]
    fn spec_validation() {
        ModelSpec::gpt2_small().validate().unwrap();
        let mut s = ModelSpec::gpt2_small();
        s.n_heads = 7;
        assert!(s.validate().is_err());
        s.n_heads = 0;
        assert!(s.validate().is_err());
        assert_eq!(ModelSpec::gpt2_small().d_head(), 64);
    }

    #[test]
    fn capture_shape() {
        let w = tiny_weights();
        let out = forward(&w, &[1, 5, 9, 200], true).unwrap();
        assert_eq!(out.hidden.len(), 3 * 4 * 16);
        assert_eq!(out.final_logits.len(), 300);
        let out = forward(&w, &[1, 5], false).unwrap();
        assert!(out.hidden.is_empty());
    }

    #[test]
    fn first_capture_is_embedding_sum() {
        let w = tiny_weights();
        let out = forward(&w, &[7, 8], true).unwrap();
        for j in 0..16 {
            let expect = w.token_embedding[8 * 16 + j] + w.position_embedding[16 + j];
            assert_eq!(out.hidden[16 + j], expect);
        }
    }

    #[test]
    fn prefix_positions_are_causal() {
        let w = tiny_weights();
        let a = forward(&w, &[3, 4, 5, 6, 7, 8], true).unwrap();
        let b = forward(&w, &[3, 4, 5, 250, 7, 8], true).unwrap();
        let d = 16;
        for l in 0..3 {
            let base = l * 6 * d;
            assert_eq!(a.hidden[base..base + 3 * d], b.hidden[base..base + 3 * d]);
            assert_ne!(
                a.hidden[base + 3 * d..base + 4 * d],
                b.hidden[base + 3 * d..base + 4 * d]
            );
        }
    }

    #[test]
    fn logits_use_final_norm_of_last_state() {
        let w = tiny_weights();
        let ids = [10, 20, 30];
        let out = forward(&w, &ids, true).unwrap();
        let d = 16;
        let last = &out.hidden[(2 * 3 + 2) * d..][..d];
        let mut normed = vec![0.0; d];
        kernels::layer_norm(last, d, &w.ln_f.scale, &w.ln_f.shift, 1e-5, &mut normed);
        for v in 0..300 {
            let expect = kernels::dot(&w.token_embedding[v * d..][..d], &normed);
            assert!((out.final_logits[v] - expect).abs() < 1e-4);
        }
    }

    #[test]
    fn deterministic() {
        let w = tiny_weights();
        let a = forward(&w, &[1, 2, 3, 4], true).unwrap();
        let b = forward(&w, &[1, 2, 3, 4], true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        let w = tiny_weights();
        assert!(matches!(forward(&w, &[], false), Err(Error::EmptySequence)));
        assert!(matches!(
            forward(&w, &[1; 33], false),
            Err(Error::SequenceTooLong { len: 33, max: 32 })
        ));
        assert!(matches!(forward(&w, &[300], false), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn non_finite_reports_block() {
        let mut w = tiny_weights();
        w.blocks[1].mlp_proj.bias[0] = f32::INFINITY;
        let err = forward(&w, &[1, 2], false).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value in output of block 2");
    }

    #[test]
    fn input_joins_with_one_space() {
        assert_eq!(trial_input("A b.", "Q r"), ("A b. Q r".to_string(), 4));
        assert_eq!(trial_input("", "Q r"), ("Q r".to_string(), 0));
    }

    #[test]
    fn labels() {
        assert_eq!(params_label(124_439_808), "124M");
        assert_eq!(params_label(1_557_611_200), "1.6B");
    }

    #[test]
    fn config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let spec = ModelSpec::gpt2_small();
        std::fs::write(&path, spec.to_config_json().to_string()).unwrap();
        assert_eq!(ModelSpec::from_config_file(&path).unwrap(), spec);
        assert_eq!(spec.to_config_json()["layer_norm_epsilon"], 1e-5);
        std::fs::write(&path, r#"{"n_layer":2,"n_embd":8,"n_head":2,"vocab_size":9,"n_ctx":4}"#).unwrap();
        assert_eq!(ModelSpec::from_config_file(&path).unwrap().context_len, 4);
        std::fs::write(&path, r#"{"n_layer":2,"n_embd":8,"n_head":2,"vocab_size":9}"#).unwrap();
        assert!(ModelSpec::from_config_file(&path).is_err());
    }
}
