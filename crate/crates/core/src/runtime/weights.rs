//! GPT-2 parameters and the safetensors loader.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::ModelSpec;
use crate::error::{Error, Result};

/// Dense layer stored input-major (`in × out`), as in GPT-2 checkpoints.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln_1: LayerNorm,
    /// Fused query/key/value projection, `d × 3d`.
    pub attn_qkv: Linear,
    pub attn_out: Linear,
    pub ln_2: LayerNorm,
    pub mlp_fc: Linear,
    pub mlp_proj: Linear,
}

#[derive(Debug, Clone)]
pub struct Weights {
    pub spec: ModelSpec,
    /// `V × d`; also the (tied) output projection.
    pub token_embedding: Vec<f32>,
    /// `context_len × d`.
    pub position_embedding: Vec<f32>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

impl Weights {
    pub fn parameter_count(&self) -> usize {
        let lin = |l: &Linear| l.weight.len() + l.bias.len();
        let ln = |n: &LayerNorm| n.scale.len() + n.shift.len();
        self.token_embedding.len()
            + self.position_embedding.len()
            + ln(&self.ln_f)
            + self
                .blocks
                .iter()
                .map(|b| {
                    ln(&b.ln_1) + lin(&b.attn_qkv) + lin(&b.attn_out) + ln(&b.ln_2) + lin(&b.mlp_fc) + lin(&b.mlp_proj)
                })
                .sum::<usize>()
    }
}

/// Canonical GPT-2 tensor names with their expected shapes, in file order.
pub fn tensor_layout(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    let d = spec.d_model;
    let mut out = vec![
        ("wte.weight".to_string(), vec![spec.vocab_size, d]),
        ("wpe.weight".to_string(), vec![spec.context_len, d]),
    ];
    for l in 0..spec.n_layers {
        let p = |s: &str| format!("h.{l}.{s}");
        out.extend([
            (p("ln_1.weight"), vec![d]),
            (p("ln_1.bias"), vec![d]),
            (p("attn.c_attn.weight"), vec![d, 3 * d]),
            (p("attn.c_attn.bias"), vec![3 * d]),
            (p("attn.c_proj.weight"), vec![d, d]),
            (p("attn.c_proj.bias"), vec![d]),
            (p("ln_2.weight"), vec![d]),
            (p("ln_2.bias"), vec![d]),
            (p("mlp.c_fc.weight"), vec![d, 4 * d]),
            (p("mlp.c_fc.bias"), vec![4 * d]),
            (p("mlp.c_proj.weight"), vec![4 * d, d]),
            (p("mlp.c_proj.bias"), vec![d]),
        ]);
    }
    out.push(("ln_f.weight".to_string(), vec![d]));
    out.push(("ln_f.bias".to_string(), vec![d]));
    out
}

/// Reads a GPT-2 safetensors checkpoint and validates it against `spec`.
///
/// Names may carry a `transformer.` prefix; 16-bit tensors are widened to
/// f32.
pub fn load_weights(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Weights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_weights_from_bytes(&bytes, spec)
}

pub fn load_weights_from_bytes(bytes: &[u8], spec: &ModelSpec) -> Result<Weights> {
    spec.validate()?;
    let st =
        SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(format!("not a safetensors container: {e}")))?;
    let mut by_name: HashMap<String, TensorView<'_>> = st
        .tensors()
        .into_iter()
        .map(|(name, view)| match name.strip_prefix("transformer.") {
            Some(stripped) => (stripped.to_string(), view),
            None => (name, view),
        })
        .collect();

    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let view = by_name
            .remove(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if view.shape() != shape {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: view.shape().to_vec(),
            });
        }
        let data = to_f32(name, &view)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor `{name}` at flat index {i}")));
        }
        Ok(data)
    };

    let d = spec.d_model;
    let token_embedding = take("wte.weight", &[spec.vocab_size, d])?;
    let position_embedding = take("wpe.weight", &[spec.context_len, d])?;
    let mut blocks = Vec::with_capacity(spec.n_layers);
    for l in 0..spec.n_layers {
        let mut ln = |which: &str| -> Result<LayerNorm> {
            Ok(LayerNorm {
                scale: take(&format!("h.{l}.{which}.weight"), &[d])?,
                shift: take(&format!("h.{l}.{which}.bias"), &[d])?,
            })
        };
        let ln_1 = ln("ln_1")?;
        let ln_2 = ln("ln_2")?;
        let mut lin = |which: &str, fan_in: usize, fan_out: usize| -> Result<Linear> {
            Ok(Linear {
                weight: take(&format!("h.{l}.{which}.weight"), &[fan_in, fan_out])?,
                bias: take(&format!("h.{l}.{which}.bias"), &[fan_out])?,
                fan_in,
                fan_out,
            })
        };
        blocks.push(Block {
            ln_1,
            attn_qkv: lin("attn.c_attn", d, 3 * d)?,
            attn_out: lin("attn.c_proj", d, d)?,
            ln_2,
            mlp_fc: lin("mlp.c_fc", d, 4 * d)?,
            mlp_proj: lin("mlp.c_proj", 4 * d, d)?,
        });
    }
    let ln_f = LayerNorm {
        scale: take("ln_f.weight", &[d])?,
        shift: take("ln_f.bias", &[d])?,
    };
    Ok(Weights {
        spec: spec.clone(),
        token_embedding,
        position_embedding,
        blocks,
        ln_f,
    })
}

fn to_f32(name: &str, view: &TensorView<'_>) -> Result<Vec<f32>> {
    let raw = view.data();
    let out = match view.dtype() {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F16 => raw
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::BF16 => raw
            .chunks_exact(2)
            .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        other => {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has unsupported dtype {other:?}"
            )))
        }
    };
    Ok(out)
}
