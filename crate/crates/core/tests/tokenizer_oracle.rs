use std::path::PathBuf;

use proptest::prelude::*;
use serde::Deserialize;
use tomprobe_core::tokenizer::{load_tokenizer, Tokenizer};

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn gpt2() -> Tokenizer {
    let dir = repo().join("assets/gpt2");
    load_tokenizer(dir.join("vocab.json"), dir.join("merges.txt")).unwrap()
}

#[derive(Deserialize)]
struct Fixture {
    text: String,
    ids: Vec<u32>,
}

fn fixtures() -> Vec<Fixture> {
    let path = repo().join("crates/core/tests/fixtures/tokenizer_oracle.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn reference_tables_load() {
    let t = gpt2();
    assert_eq!(t.vocab_size(), 50257);
    assert_eq!(t.merge_count(), 50000);
    assert_eq!(t.token_id("<|endoftext|>"), Some(50256));
}

#[test]
fn hello_world() {
    assert_eq!(gpt2().encode("Hello world").ids, vec![15496, 995]);
}

#[test]
fn matches_reference_on_every_fixture() {
    let t = gpt2();
    let fx = fixtures();
    assert_eq!(fx.len(), 1000);
    for f in &fx {
        let seq = t.encode(&f.text);
        assert_eq!(seq.ids, f.ids, "text {:?}", f.text);
        assert_eq!(t.decode(&seq.ids).unwrap(), f.text);
    }
}

#[test]
fn offsets_tile_every_fixture() {
    let t = gpt2();
    for f in fixtures() {
        let seq = t.encode(&f.text);
        let mut pos = 0;
        let mut rebuilt = Vec::new();
        for &(s, e) in &seq.offsets {
            assert_eq!(s, pos);
            assert!(e > s);
            rebuilt.extend_from_slice(&f.text.as_bytes()[s..e]);
            pos = e;
        }
        assert_eq!(pos, f.text.len());
        assert_eq!(rebuilt, f.text.as_bytes());
    }
}

#[test]
fn single_ids_decode_to_vocab_entries() {
    let t = gpt2();
    // "Ġjewelry" in vocab.json; Ġ is the byte-encoded space.
    assert_eq!(t.decode(&[22634]).unwrap(), " jewelry");
    assert_eq!(t.decode(&[13]).unwrap(), ".");
    assert_eq!(t.decode(&[198]).unwrap(), "\n");
    assert_eq!(t.decode(&[]).unwrap(), "");
    assert!(t.decode(&[50257]).is_err());
}

#[test]
fn malformed_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = repo().join("assets/gpt2/vocab.json");
    let merges = dir.path().join("merges.txt");
    std::fs::write(&merges, "#version: 0.2\nĠ t\nĠt hexyz\n").unwrap();
    let err = load_tokenizer(&vocab, &merges).unwrap_err();
    assert!(err.to_string().contains("not in the vocabulary"), "{err}");
    std::fs::write(&merges, "#version: 0.2\nĠt\n").unwrap();
    assert!(load_tokenizer(&vocab, &merges).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip_random_utf8(s in any::<String>()) {
        let t = gpt2_cached();
        let seq = t.encode(&s);
        prop_assert_eq!(t.decode(&seq.ids).unwrap(), s.clone());
        let covered: usize = seq.offsets.iter().map(|(a, b)| b - a).sum();
        prop_assert_eq!(covered, s.len());
    }
}

fn gpt2_cached() -> &'static Tokenizer {
    static T: std::sync::OnceLock<Tokenizer> = std::sync::OnceLock::new();
    T.get_or_init(gpt2)
}
