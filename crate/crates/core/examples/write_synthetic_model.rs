//! Writes a seeded GPT-2-small-shaped model directory.
//!
//! cargo run --release -p tomprobe-core --example write_synthetic_model -- <out-dir> [seed]

use std::path::{Path, PathBuf};

use tomprobe_core::runtime::{synthetic, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or("usage: write_synthetic_model <out-dir> [seed]")?);
    let seed = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(synthetic::FIXTURE_SEED);
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/gpt2");
    synthetic::write_model_dir(&out, &ModelSpec::gpt2_small(), seed, &assets)?;
    println!("wrote {}", out.display());
    Ok(())
}
