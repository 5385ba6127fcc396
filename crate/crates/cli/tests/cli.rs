use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus() -> String {
    repo().join("data/tom_pairs.json").to_string_lossy().into_owned()
}

fn tomprobe(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tomprobe"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("PROBE_THREADS", t),
        None => cmd.env_remove("PROBE_THREADS"),
    };
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tomprobe(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Two-layer model with the real GPT-2 vocabulary, built by `synth-model`.
fn tiny_model() -> &'static str {
    static DIR: OnceLock<String> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("tiny-model-cli");
        let dir_s = dir.to_string_lossy().into_owned();
        let tok = repo().join("assets/gpt2").to_string_lossy().into_owned();
        ok(&[
            "synth-model",
            "--out-dir",
            &dir_s,
            "--tokenizer-dir",
            &tok,
            "--seed",
            "3",
            "--layers",
            "2",
            "--d-model",
            "32",
            "--heads",
            "4",
            "--context",
            "256",
        ]);
        dir_s
    })
}

fn run_args<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--model-dir", tiny_model(), "--out-dir", out];
    v.extend_from_slice(extra);
    v
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn capture_writes_one_file_per_trial_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let c = corpus();
    let line = ok(&run_args("capture", &out, &["--corpus-path", &c]));
    assert!(line.starts_with("capture:"), "{line}");
    let manifest = read_json(tmp.path().join("captures/manifest.json"));
    assert_eq!(manifest["captures"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["condition"], "intact");
    let headers = std::fs::read_dir(tmp.path().join("captures"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bin"))
        .count();
    assert_eq!(headers, 6);
    let v = ok(&[
        "validate",
        "--captures-dir",
        &format!("{out}/captures"),
        "--corpus-path",
        &c,
    ]);
    assert!(v.contains("6 captures ok"), "{v}");
}

#[test]
fn shuffled_condition_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let c = corpus();
    ok(&run_args(
        "capture",
        &out,
        &["--corpus-path", &c, "--condition", "shuffled", "--seed", "7"],
    ));
    let m = read_json(tmp.path().join("captures/manifest.json"));
    assert_eq!(m["condition"], "shuffled");
    assert_eq!(m["seed"], 7);
    assert!(m["config"].get("threads").is_none());
}

#[test]
fn missing_model_dir_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let missing = tmp.path().join("no-such-model");
    let missing_s = missing.to_string_lossy().into_owned();
    let o = tomprobe(
        &[
            "capture",
            "--model-dir",
            &missing_s,
            "--corpus-path",
            &corpus(),
            "--out-dir",
            &out,
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&missing_s));
}

#[test]
fn prerequisites_and_bad_flags_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let c = corpus();
    let o = tomprobe(&["selectivity", "--corpus-path", &c, "--out-dir", &out], None);
    assert_eq!(o.status.code(), Some(2), "no captures yet");
    let o = tomprobe(
        &["decode", "--corpus-path", &c, "--out-dir", &out, "--alpha", "2"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    let o = tomprobe(&["eval", "--corpus-path", &c, "--out-dir", &out], None);
    assert_eq!(o.status.code(), Some(2), "model dir required");
    let o = tomprobe(&run_args("eval", &out, &["--corpus-path", &c]), Some("zero"));
    assert_eq!(o.status.code(), Some(2), "bad PROBE_THREADS");
}

#[test]
fn corrupted_blob_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    ok(&run_args("capture", &out, &["--corpus-path", &corpus()]));
    let m = read_json(tmp.path().join("captures/manifest.json"));
    let blob = tmp
        .path()
        .join("captures")
        .join(m["captures"][0]["blob"].as_str().unwrap());
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&blob, bytes).unwrap();
    let o = tomprobe(&["validate", "--captures-dir", &format!("{out}/captures")], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blob has"));
}

#[test]
fn decode_with_one_repeat_has_zero_std() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let c = corpus();
    ok(&run_args("capture", &out, &["--corpus-path", &c]));
    ok(&["decode", "--corpus-path", &c, "--out-dir", &out, "--repeats", "1"]);
    let d = read_json(tmp.path().join("decode.json"));
    let layers = d["result"]["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 3);
    for l in layers {
        assert_eq!(l["std"], 0.0);
        assert_eq!(l["accuracies"].as_array().unwrap().len(), 1);
    }
    let sep = read_json(tmp.path().join("separation.json"));
    assert!(sep["separation"].is_null() || sep["separation"].is_object());
    let csv = std::fs::read_to_string(tmp.path().join("decode.csv")).unwrap();
    assert!(csv.starts_with("layer,mean,std,repeats"));
}

#[test]
fn eval_on_two_conditions_then_report_emits_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus();
    let intact = tmp.path().join("intact").to_string_lossy().into_owned();
    let qo = tmp.path().join("qo").to_string_lossy().into_owned();
    ok(&run_args("eval", &intact, &["--corpus-path", &c]));
    ok(&run_args(
        "eval",
        &qo,
        &["--corpus-path", &c, "--condition", "question_only"],
    ));
    let report = tmp.path().join("report").to_string_lossy().into_owned();
    ok(&["report", "--runs", &intact, &qo, "--out-dir", &report]);
    let deltas = std::fs::read_to_string(tmp.path().join("report/condition_deltas.csv")).unwrap();
    let rows: Vec<&str> = deltas.lines().collect();
    assert_eq!(rows[0], "model,control,cell,delta");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.contains(",question_only,")));
    let r = read_json(tmp.path().join("report/report.json"));
    assert_eq!(r["runs"].as_array().unwrap().len(), 2);
    assert_eq!(r["runs"][0]["provenance"]["accuracy"], "../intact/accuracy.json");
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus();
    let mut outputs = Vec::new();
    for t in ["1", "3"] {
        let out = tmp.path().join("run").to_string_lossy().into_owned();
        for cmd in ["capture", "eval"] {
            let o = tomprobe(&run_args(cmd, &out, &["--corpus-path", &c]), Some(t));
            assert!(o.status.success());
        }
        let o = tomprobe(
            &["decode", "--corpus-path", &c, "--out-dir", &out, "--repeats", "5"],
            Some(t),
        );
        assert!(o.status.success());
        outputs.push(
            ["captures/manifest.json", "accuracy.json", "outcomes.csv", "decode.json"]
                .map(|f| std::fs::read(tmp.path().join("run").join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_hash_follows_config() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus();
    let mut hashes = Vec::new();
    for seed in ["1", "1", "2"] {
        let out = tmp.path().join(format!("s{seed}")).to_string_lossy().into_owned();
        ok(&run_args("capture", &out, &["--corpus-path", &c, "--seed", seed]));
        hashes.push(read_json(tmp.path().join(format!("s{seed}/captures/manifest.json")))["config_hash"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_ne!(hashes[0], hashes[2]);
}

#[test]
fn fit_needs_three_positive_points() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus();
    let out = tmp.path().join("r").to_string_lossy().into_owned();
    ok(&run_args("capture", &out, &["--corpus-path", &c]));
    ok(&run_args("eval", &out, &["--corpus-path", &c]));
    ok(&["selectivity", "--corpus-path", &c, "--out-dir", &out]);
    let fit_dir = tmp.path().join("fit").to_string_lossy().into_owned();
    let o = tomprobe(&["fit", "--runs", &out, "--out-dir", &fit_dir], None);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
