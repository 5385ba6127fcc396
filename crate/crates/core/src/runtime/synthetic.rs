//! Seeded GPT-2-shaped checkpoints.
//!
//! Used as test and demo models when real checkpoints are not at hand. The
//! parameter scales are chosen so that attention patterns and logits are
//! far from uniform, and every bias and norm parameter is non-trivial.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::TensorView;
use safetensors::Dtype;

use super::{tensor_layout, Block, LayerNorm, Linear, ModelSpec, Weights};
use crate::error::{Error, Result};

/// Seed of the GPT-2-small-shaped model behind the committed oracle fixtures.
pub const FIXTURE_SEED: u64 = 2023;

fn normal(rng: &mut ChaCha8Rng, n: usize, mean: f32, std: f32) -> Vec<f32> {
    let dist = Normal::new(mean, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Draws every parameter from a seeded normal distribution.
pub fn random_weights(spec: &ModelSpec, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d_model;
    let token_embedding = normal(&mut rng, spec.vocab_size * d, 0.0, 0.1);
    let position_embedding = normal(&mut rng, spec.context_len * d, 0.0, 0.05);
    let ln = |rng: &mut ChaCha8Rng| LayerNorm {
        scale: normal(rng, d, 1.0, 0.1),
        shift: normal(rng, d, 0.0, 0.05),
    };
    let lin = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, std: f32| Linear {
        weight: normal(rng, fan_in * fan_out, 0.0, std),
        bias: normal(rng, fan_out, 0.0, 0.02),
        fan_in,
        fan_out,
    };
    let blocks = (0..spec.n_layers)
        .map(|_| {
            let ln_1 = ln(&mut rng);
            let attn_qkv = lin(&mut rng, d, 3 * d, 0.05);
            let attn_out = lin(&mut rng, d, d, 0.02);
            let ln_2 = ln(&mut rng);
            let mlp_fc = lin(&mut rng, d, 4 * d, 0.05);
            let mlp_proj = lin(&mut rng, 4 * d, d, 0.02);
            Block {
                ln_1,
                attn_qkv,
                attn_out,
                ln_2,
                mlp_fc,
                mlp_proj,
            }
        })
        .collect();
    let ln_f = ln(&mut rng);
    Weights {
        spec: spec.clone(),
        token_embedding,
        position_embedding,
        blocks,
        ln_f,
    }
}

/// Tensors of `weights` under canonical GPT-2 names, in layout order.
fn named_tensors(weights: &Weights) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut data: Vec<&[f32]> = vec![&weights.token_embedding, &weights.position_embedding];
    for b in &weights.blocks {
        data.extend([
            &b.ln_1.scale[..],
            &b.ln_1.shift,
            &b.attn_qkv.weight,
            &b.attn_qkv.bias,
            &b.attn_out.weight,
            &b.attn_out.bias,
            &b.ln_2.scale,
            &b.ln_2.shift,
            &b.mlp_fc.weight,
            &b.mlp_fc.bias,
            &b.mlp_proj.weight,
            &b.mlp_proj.bias,
        ]);
    }
    data.extend([&weights.ln_f.scale[..], &weights.ln_f.shift]);
    tensor_layout(&weights.spec)
        .into_iter()
        .zip(data)
        .map(|((name, shape), values)| (name, shape, values))
        .collect()
}

/// Serialises `weights` as an f32 safetensors container.
pub fn to_safetensors(weights: &Weights) -> Result<Vec<u8>> {
    let tensors = named_tensors(weights);
    let bytes: Vec<Vec<u8>> = tensors
        .iter()
        .map(|(_, _, v)| v.iter().flat_map(|x| x.to_le_bytes()).collect())
        .collect();
    let views = tensors
        .iter()
        .zip(&bytes)
        .map(|((name, shape, _), b)| {
            TensorView::new(Dtype::F32, shape.clone(), b)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, None).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes `config.json` and `model.safetensors` for a seeded model into
/// `dir`, copying `vocab.json` and `merges.txt` from `tokenizer_dir`.
pub fn write_model_dir(dir: &Path, spec: &ModelSpec, seed: u64, tokenizer_dir: &Path) -> Result<()> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for file in ["vocab.json", "merges.txt"] {
        let src = tokenizer_dir.join(file);
        std::fs::copy(&src, dir.join(file)).map_err(|e| Error::io(&src, e))?;
    }
    let config = dir.join("config.json");
    let mut text = serde_json::to_string_pretty(&spec.to_config_json()).map_err(|e| Error::json(&config, e))?;
    text.push('\n');
    std::fs::write(&config, text).map_err(|e| Error::io(&config, e))?;

    let weights = random_weights(spec, seed);
    let bytes = to_safetensors(&weights)?;
    drop(weights);
    let target = dir.join("model.safetensors");
    let tmp = dir.join(format!("model.safetensors.partial-{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
}

/// Like [`write_model_dir`], but leaves an existing complete directory alone.
/// The checkpoint is renamed into place last, so its presence marks
/// completion.
pub fn ensure_model_dir(dir: &Path, spec: &ModelSpec, seed: u64, tokenizer_dir: &Path) -> Result<()> {
    if dir.join("model.safetensors").is_file() {
        return Ok(());
    }
    write_model_dir(dir, spec, seed, tokenizer_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::load_weights_from_bytes;

    fn spec() -> ModelSpec {
        ModelSpec {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            vocab_size: 50,
            context_len: 16,
            layer_norm_eps: 1e-5,
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let w = random_weights(&spec(), 1);
        let bytes = to_safetensors(&w).unwrap();
        let back = load_weights_from_bytes(&bytes, &spec()).unwrap();
        assert_eq!(back.token_embedding, w.token_embedding);
        assert_eq!(back.blocks[1].mlp_proj.weight, w.blocks[1].mlp_proj.weight);
        assert_eq!(back.ln_f.shift, w.ln_f.shift);
        assert_eq!(back.parameter_count(), w.parameter_count());
    }

    #[test]
    fn seeds_are_reproducible() {
        let a = random_weights(&spec(), 9);
        let b = random_weights(&spec(), 9);
        let c = random_weights(&spec(), 10);
        assert_eq!(a.blocks[0].attn_qkv.weight, b.blocks[0].attn_qkv.weight);
        assert_ne!(a.blocks[0].attn_qkv.weight, c.blocks[0].attn_qkv.weight);
    }

    #[test]
    fn spec_mismatch_is_reported() {
        let bytes = to_safetensors(&random_weights(&spec(), 1)).unwrap();
        let mut wrong = spec();
        wrong.d_model = 10;
        wrong.n_heads = 2;
        let err = load_weights_from_bytes(&bytes, &wrong).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn missing_tensor_is_named() {
        let w = random_weights(&spec(), 1);
        let tensors: Vec<_> = named_tensors(&w)
            .into_iter()
            .filter(|(n, _, _)| n != "h.1.ln_2.bias")
            .collect();
        let bytes: Vec<Vec<u8>> = tensors
            .iter()
            .map(|(_, _, v)| v.iter().flat_map(|x| x.to_le_bytes()).collect())
            .collect();
        let views: Vec<_> = tensors
            .iter()
            .zip(&bytes)
            .map(|((n, s, _), b)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).unwrap()))
            .collect();
        let file = safetensors::serialize(views, None).unwrap();
        let err = load_weights_from_bytes(&file, &spec()).unwrap_err();
        assert_eq!(err.to_string(), "missing tensor `h.1.ln_2.bias`");
    }

    #[test]
    fn prefixed_and_half_precision_tensors_load() {
        let w = random_weights(&spec(), 4);
        let tensors = named_tensors(&w);
        let bytes: Vec<Vec<u8>> = tensors
            .iter()
            .map(|(_, _, v)| v.iter().flat_map(|x| half::f16::from_f32(*x).to_le_bytes()).collect())
            .collect();
        let views: Vec<_> = tensors
            .iter()
            .zip(&bytes)
            .map(|((n, s, _), b)| {
                (
                    format!("transformer.{n}"),
                    TensorView::new(Dtype::F16, s.clone(), b).unwrap(),
                )
            })
            .collect();
        let file = safetensors::serialize(views, None).unwrap();
        let back = load_weights_from_bytes(&file, &spec()).unwrap();
        for (a, b) in back.token_embedding.iter().zip(&w.token_embedding) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn non_finite_weights_rejected() {
        let mut w = random_weights(&spec(), 1);
        w.blocks[0].attn_out.weight[3] = f32::NAN;
        let bytes = to_safetensors(&w).unwrap();
        let err = load_weights_from_bytes(&bytes, &spec()).unwrap_err();
        assert!(err.to_string().contains("h.0.attn.c_proj.weight"), "{err}");
    }
}
