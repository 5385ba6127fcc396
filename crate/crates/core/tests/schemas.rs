//! Keeps the published JSON schemas in step with what the crate writes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde_json::Value;
use tomprobe_core::corpus::{load_corpus, make_shuffled_control};
use tomprobe_core::runtime::capture_io::{write_capture, write_manifest, Manifest, FORMAT_NAME, FORMAT_VERSION};
use tomprobe_core::runtime::CaptureSet;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn schema(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(repo().join("schemas").join(name)).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

/// Object keys must be declared and every required key present.
fn conforms(obj: &Value, node: &Value, what: &str) {
    let declared = keys(&node["properties"]);
    let present = keys(obj);
    let undeclared: Vec<_> = present.difference(&declared).collect();
    assert!(undeclared.is_empty(), "{what}: undeclared keys {undeclared:?}");
    for r in node["required"].as_array().unwrap() {
        assert!(present.contains(r.as_str().unwrap()), "{what}: missing required {r}");
    }
}

fn sample_capture() -> CaptureSet {
    let (l, t, d, v) = (2, 4, 3, 7);
    CaptureSet {
        trial_id: "t1".into(),
        n_layers: l,
        n_tokens: t,
        d_model: d,
        hidden: (0..(l + 1) * t * d).map(|i| i as f32).collect(),
        final_logits: vec![0.5; v],
        token_ids: vec![1, 2, 3, 4],
        question_span: (1, 4),
    }
}

#[test]
fn capture_header_matches_schema() {
    let s = schema("capture.schema.json");
    let tmp = tempfile::tempdir().unwrap();
    let entry = write_capture(tmp.path(), &sample_capture(), "belief").unwrap();
    let header: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(&entry.header)).unwrap()).unwrap();
    conforms(&header, &s, "capture header");
    assert_eq!(s["properties"]["format"]["const"], FORMAT_NAME);
    assert_eq!(s["properties"]["version"]["const"], FORMAT_VERSION);
    assert_eq!(header["dtype"], s["properties"]["dtype"]["const"]);
    assert_eq!(header["byte_order"], s["properties"]["byte_order"]["const"]);
    let blob = std::fs::metadata(tmp.path().join(&entry.blob)).unwrap().len();
    assert_eq!(blob, 4 * (3 * 4 * 3 + 7));
}

#[test]
fn manifest_matches_schema() {
    let s = schema("manifest.schema.json");
    let tmp = tempfile::tempdir().unwrap();
    let entry = write_capture(tmp.path(), &sample_capture(), "belief").unwrap();
    let manifest = Manifest {
        model: "m".into(),
        n_params: Some(10),
        condition: "intact".into(),
        seed: Some(0),
        corpus_fingerprint: "fp".into(),
        config: serde_json::json!({"seed": 0}),
        config_hash: "00".into(),
        captures: vec![entry],
    };
    let path = write_manifest(tmp.path(), &manifest).unwrap();
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    conforms(&v, &s, "manifest");
    conforms(
        &v["captures"][0],
        &s["properties"]["captures"]["items"],
        "manifest entry",
    );
}

#[test]
fn corpus_files_match_schema() {
    let s = schema("corpus.schema.json");
    let shipped: Value =
        serde_json::from_str(&std::fs::read_to_string(repo().join("data/tom_pairs.json")).unwrap()).unwrap();
    let corpus = load_corpus(repo().join("data/tom_pairs.json")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("shuffled.json");
    make_shuffled_control(&corpus, 7).unwrap().write(&path).unwrap();
    let written: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    for doc in [&shipped, &written] {
        conforms(doc, &s, "corpus");
        for pair in doc["pairs"].as_array().unwrap() {
            conforms(pair, &s["$defs"]["pair"], "pair");
            for side in ["true_trial", "false_trial"] {
                let trial = &pair[side];
                conforms(trial, &s["$defs"]["trial"], "trial");
                for q in ["fact_question", "belief_question"] {
                    conforms(&trial[q], &s["$defs"]["question"], "question");
                }
            }
        }
    }
    let conditions: Vec<&str> = s["properties"]["condition"]["enum"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(conditions.contains(&written["condition"].as_str().unwrap()));
}
