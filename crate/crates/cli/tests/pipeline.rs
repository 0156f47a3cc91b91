//! End-to-end runs of the `sdoh` binary against mock backends.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FILLER: &[&str] = &[
    "Blood pressure was stable overnight.",
    "Denies chest pain or shortness of breath.",
    "Tolerating a regular diet.",
    "Ambulating in the hallway with a walker.",
    "Follow up with cardiology in two weeks.",
];

fn notes() -> String {
    let mut out = String::new();
    for i in 0..8 {
        let mut hpi: Vec<String> = FILLER.iter().map(|s| s.replace('.', &format!(" on day {i}."))).collect();
        let social = match i {
            0 => "Patient lives in a shelter downtown.",
            1 => "Currently staying at a homeless shelter with her son.",
            2 => "He lost his job at the warehouse last month.",
            3 => "Unemployed since the plant closed.",
            _ => "Lives with spouse.",
        };
        hpi.push(format!("Smokes {i} cigarettes a day."));
        let text = format!("HPI:\n{}\nSocial History:\n{social} Drinks socially.\n", hpi.join(" "));
        out.push_str(&serde_json::json!({ "note_id": format!("n{i}"), "text": text }).to_string());
        out.push('\n');
    }
    out
}

const ANNOTATIONS: &str = r#"{"note_id":"n0","code_id":"homelessness","evidence_text":"lives in a shelter"}
{"note_id":"n1","code_id":"homelessness","evidence_text":"homeless shelter"}
{"note_id":"n2","code_id":"unemployment","evidence_text":"lost his job"}
{"note_id":"n3","code_id":"unemployment","evidence_text":"Unemployed since"}
"#;

const CONFIG: &str = r#"
[paths]
corpus = "notes.jsonl"
annotations = "annotations.jsonl"
backends = "backends.toml"

[[codes]]
code_id = "homelessness"
keyword_phrase = "homelessness"

[[codes]]
code_id = "unemployment"
keyword_phrase = "unemployment"

[params]
seed = 11
negatives_per_code = 30
generator = "mock/good"
trained_at = "2024-01-01T00:00:00Z"
baseline = "mock/bad"
"#;

const BACKENDS: &str = r#"
[[backends]]
model = "mock/good"
kind = "mock"
[backends.mock]
default_reply = "No"
[[backends.mock.rules]]
contains = ["Determine whether", "evidence of homelessness", "shelter"]
reply = "Yes, the patient has no stable housing."
[[backends.mock.rules]]
contains = ["Determine whether", "evidence of unemployment", "job"]
reply = "Yes"
[[backends.mock.rules]]
contains = ["Determine whether", "evidence of unemployment", "Unemployed"]
reply = "Yes"
[[backends.mock.rules]]
contains = ["Does the following sentence contain evidence of homelessness", "shelter"]
reply = "Yes"
[[backends.mock.rules]]
contains = ["new, distinct sentences"]
reply = "Sleeps at the Main Street shelter, visit {call}.\nStays in a shelter most nights, visit {call}."

[[backends]]
model = "mock/bad"
kind = "mock"
[backends.mock]
default_reply = "No"
"#;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("notes.jsonl"), notes()).unwrap();
        fs::write(root.join("annotations.jsonl"), ANNOTATIONS).unwrap();
        fs::write(root.join("sdoh.toml"), CONFIG).unwrap();
        fs::write(root.join("backends.toml"), BACKENDS).unwrap();
        Workspace { _dir: dir, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sdoh"))
            .current_dir(&self.root)
            .args(args)
            .env_remove("SDOH_LOG")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.root.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn pipeline(&self) {
        self.ok(&["ingest"]);
        self.ok(&["gen-synth", "--code", "homelessness", "--target", "4"]);
        self.ok(&["assemble"]);
        self.ok(&["eval"]);
        self.ok(&["train-router"]);
        self.ok(&["report"]);
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn lines(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const ARTIFACTS: &[&str] = &[
    "datasets/gold/homelessness.jsonl",
    "datasets/negatives/homelessness.jsonl",
    "synthetic/homelessness.jsonl",
    "synthetic/homelessness.stats.json",
    "datasets/homelessness.jsonl",
    "datasets/unemployment.jsonl",
    "eval/matrix.jsonl",
    "routing_table.jsonl",
    "reports/best_models.csv",
    "reports/comparison.csv",
    "reports/summary.json",
    "reports/series.json",
];

#[test]
fn full_pipeline() {
    let ws = Workspace::new();
    ws.pipeline();

    assert_eq!(lines(&ws.read("datasets/gold/homelessness.jsonl")).len(), 2);
    let stats: Value = serde_json::from_str(&ws.read("synthetic/homelessness.stats.json")).unwrap();
    assert_eq!(stats["kept"], 4);
    assert_eq!(stats["generator"], "mock/good");
    assert_eq!(stats["verifier"], "mock/good");

    let ds = lines(&ws.read("datasets/homelessness.jsonl"));
    let pos = ds.iter().filter(|r| r["label"] == true).count();
    assert_eq!((pos, ds.len()), (6, 18));

    let table = lines(&ws.read("routing_table.jsonl"));
    assert_eq!(table.len(), 2);
    for r in &table {
        assert_eq!(r["model"], "mock/good");
        assert_eq!(r["training_accuracy"], 1.0);
        assert_eq!(r["trained_at"], "2024-01-01T00:00:00Z");
    }
    let matrix = lines(&ws.read("eval/matrix.jsonl"));
    assert_eq!(matrix.len(), 4);
    assert!(ws.read("reports/comparison.csv").contains("mock/bad"));
    let summary: Value = serde_json::from_str(&ws.read("reports/summary.json")).unwrap();
    assert_eq!(summary["mean_accuracy"], 1.0);

    let out = ws.ok(&["classify", "--code", "Homelessness", "--sentence", "Sleeps in a shelter."]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["label"], "positive");
    assert_eq!(v["model"], "mock/good");
    assert!(v.get("raw_response").is_none());

    let out = ws.ok(&["code-note", "--text", "Social History:\nLost his job in May. Lives in a shelter."]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["evidence"]["homelessness"][0]["text"], "Lives in a shelter.");
    assert_eq!(v["evidence"]["unemployment"][0]["sentence_index"], 0);
    assert_eq!(v["errors"].as_array().unwrap().len(), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = Workspace::new();
    let b = Workspace::new();
    a.pipeline();
    b.pipeline();
    for f in ARTIFACTS {
        assert_eq!(a.read(f), b.read(f), "{f}");
    }
}

#[test]
fn note_level_matrix() {
    let ws = Workspace::new();
    ws.ok(&["ingest"]);
    ws.ok(&["assemble"]);
    ws.ok(&["eval", "--note-level", "--model", "mock/good"]);
    let notes = lines(&ws.read("eval/matrix.notes.jsonl"));
    assert_eq!(notes.len(), 2);
    assert!(notes.iter().all(|r| r["fp"] == 0 && r["fn"] == 0));
}

#[test]
fn usage_errors_exit_1() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["--help"])), 0);
    assert_eq!(code(&ws.run(&["--version"])), 0);
    assert_eq!(code(&ws.run(&["ingest", "--bogus"])), 1);
    assert_eq!(code(&ws.run(&["--config", "missing.toml", "ingest"])), 1);
    assert_eq!(code(&ws.run(&["classify", "--code", "nope", "--sentence", "x"])), 1);
    assert_eq!(code(&ws.run(&["--max-in-flight", "0", "ingest"])), 1);
    fs::write(ws.root.join("bad.toml"), "[params]\napi_key = \"secret\"\n").unwrap();
    assert_eq!(code(&ws.run(&["--config", "bad.toml", "ingest"])), 1);
}

#[test]
fn data_errors_exit_2() {
    let ws = Workspace::new();
    // no gold yet
    let out = ws.run(&["gen-synth", "--code", "homelessness", "--target", "2"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));

    ws.ok(&["ingest"]);
    fs::write(ws.root.join("datasets/gold/homelessness.jsonl"), "").unwrap();
    assert_eq!(code(&ws.run(&["gen-synth", "--code", "homelessness", "--target", "2"])), 2);

    fs::create_dir_all(ws.root.join("eval")).unwrap();
    fs::write(ws.root.join("eval/matrix.jsonl"), "{\"model\":\"a/b\"}\n").unwrap();
    assert_eq!(code(&ws.run(&["train-router"])), 2);
    assert_eq!(code(&ws.run(&["eval", "--code", "unemployment"])), 2);
}

#[test]
fn unreachable_target_exits_2_and_keeps_partial_batch() {
    let ws = Workspace::new();
    ws.ok(&["ingest"]);
    let out = ws.run(&["gen-synth", "--code", "unemployment", "--target", "3"]);
    assert_eq!(code(&out), 2);
    let stats: Value = serde_json::from_str(&ws.read("synthetic/unemployment.stats.json")).unwrap();
    assert_eq!(stats["kept"], 0);
    assert_eq!(stats["rounds"], 20);
}

#[test]
fn auth_failure_exits_3() {
    let ws = Workspace::new();
    ws.pipeline();
    let backends = r#"
[[backends]]
model = "mock/good"
kind = "mock"
[backends.mock]
[[backends.mock.rules]]
status = 401
"#;
    fs::write(ws.root.join("backends.toml"), backends).unwrap();
    let out = ws.run(&["classify", "--code", "homelessness", "--sentence", "x"]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&ws.run(&["eval", "--model", "mock/good"])), 3);
}

#[test]
fn credentials_come_from_the_environment() {
    let ws = Workspace::new();
    ws.pipeline();
    let backends = r#"
[[backends]]
model = "mock/good"
endpoint_url = "http://127.0.0.1:9/v1/chat/completions"
auth_token_env = "SDOH_TEST_UNSET_TOKEN"
"#;
    fs::write(ws.root.join("backends.toml"), backends).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sdoh"))
        .current_dir(&ws.root)
        .args(["classify", "--code", "homelessness", "--sentence", "x"])
        .env_remove("SDOH_TEST_UNSET_TOKEN")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("SDOH_TEST_UNSET_TOKEN"));

    let inline = "[[backends]]\nmodel = \"x/y\"\nendpoint_url = \"http://h\"\napi_key = \"secret\"\n";
    fs::write(ws.root.join("backends.toml"), inline).unwrap();
    assert_eq!(code(&ws.run(&["classify", "--code", "homelessness", "--sentence", "x"])), 1);
}

#[test]
fn serve_refuses_stale_datasets() {
    let ws = Workspace::new();
    ws.pipeline();
    let path: &Path = &ws.root.join("datasets/unemployment.jsonl");
    let mut text = fs::read_to_string(path).unwrap();
    text = text.replacen("Unemployed", "Jobless", 1);
    fs::write(path, text).unwrap();
    let out = ws.run(&["serve", "--bind", "127.0.0.1:0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-fingerprint-mismatch"));
}

#[test]
fn restrict_without_social_history_warns() {
    let ws = Workspace::new();
    let note = serde_json::json!({"note_id": "n0", "text": "HPI:\nStable. Lives in a shelter.\n"});
    fs::write(ws.root.join("notes.jsonl"), format!("{note}\n")).unwrap();
    let out = ws.run(&["--restrict-social-history", "ingest"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Social History"));
    assert_eq!(ws.read("datasets/gold/homelessness.jsonl"), "");
    assert_eq!(ws.read("datasets/negatives/homelessness.jsonl"), "");
}

#[test]
fn zero_target_is_an_empty_batch() {
    let ws = Workspace::new();
    ws.ok(&["ingest"]);
    ws.ok(&["gen-synth", "--code", "homelessness", "--target", "0"]);
    assert_eq!(ws.read("synthetic/homelessness.jsonl"), "");
    let stats: Value = serde_json::from_str(&ws.read("synthetic/homelessness.stats.json")).unwrap();
    assert_eq!(stats["generated"], 0);
}

#[test]
fn parse_errors_name_the_line() {
    let ws = Workspace::new();
    let mut notes = notes();
    notes.push_str("{not json}\n");
    fs::write(ws.root.join("notes.jsonl"), notes).unwrap();
    let out = ws.run(&["ingest"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("notes.jsonl:9:"));
}
