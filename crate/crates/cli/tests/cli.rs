use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_structreward"));
    c.env_remove("STRUCTREWARD_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const REF: &str = "A red cup is on a wooden table. A man lifts the cup. Then the man sits.";

#[test]
fn text_to_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ref.txt"), REF).unwrap();
    std::fs::write(d.join("gen.txt"), "A blue cup is on a wooden table. A man lifts the cup.").unwrap();

    let o = run_in(d, &["parse", "--input", "ref.txt", "--out", "ref.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run_in(d, &["score", "--gen", "ref.txt", "--ref", "ref.json", "--out", "same.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let same = json(&d.join("same.json"));
    assert_eq!(same["R"], 0.75);
    assert_eq!(same["q_sg"], 1.0);

    let o = run_in(d, &["score", "--gen", "gen.txt", "--ref", "ref.txt", "--out", "diff.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let diff = json(&d.join("diff.json"));
    assert!(diff["R"].as_f64().unwrap() < 0.75);

    let m = json(&d.join("diff.json.manifest.json"));
    assert_eq!(m["command"], "score");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert!(m["finished_at"].is_string());
    let digests = m["input_digests"].as_object().unwrap();
    assert_eq!(digests.len(), 2);
    assert!(digests.values().all(|v| v.as_str().unwrap().len() == 64));
}

#[test]
fn world_render_parse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        vec!["gen-world", "--seed", "11", "--out", "w.json"],
        vec!["render", "--world", "w.json", "--out", "ref.txt"],
        vec!["score", "--gen", "ref.txt", "--ref", "ref.txt", "--verifier", "world:w.json", "--out", "s.json"],
    ] {
        let o = run_in(d, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(json(&d.join("w.json"))["rng_seed"], 11);
    let s = json(&d.join("s.json"));
    assert_eq!(s["q_temp"], 1.0);
    assert_eq!(s["q_vqa"], 1.0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["parse", "--input", "x.txt", "--out", "y.json", "--frobnicate"],
        vec!["parse", "--input", "x.txt"],
        vec!["teleport"],
        vec!["score", "--gen", "a.txt", "--ref", "b.txt", "--verifier", "oracle", "--out", "s.json"],
    ] {
        std::fs::write(dir.path().join("a.txt"), REF).unwrap();
        std::fs::write(dir.path().join("b.txt"), REF).unwrap();
        let o = run_in(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(run_in(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn dangling_anchor_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let ir = r#"{"objects":[{"id":"cup_1","head":"cup","phrase":"cup","clause":0}],
                 "attributes":[{"object":"box_1","value":"red","clause":0}]}"#;
    std::fs::write(dir.path().join("bad.json"), ir).unwrap();
    let o = run_in(dir.path(), &["parse", "--input", "bad.json", "--out", "o.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("DanglingAnchor"), "{}", stderr(&o));
    assert!(!dir.path().join("o.json").exists());
    // The attempt is still recorded, without a finish time.
    let m = json(&dir.path().join("o.json.manifest.json"));
    assert!(m["finished_at"].is_null());
}

#[test]
fn parse_errors_name_their_type() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "A cup is on a table. A zorbl is present.").unwrap();
    let o = run_in(dir.path(), &["parse", "--input", "c.txt", "--out", "o.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UnknownToken: `zorbl` in clause 1"), "{}", stderr(&o));
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (text, name) in [
        ("reward.gamma = 1\n", "UnknownKey"),
        ("reward.rho = \"two\"\n", "TypeMismatch"),
        ("[reward]\nalpha_obj = 0.5\nalpha_attr = 0.5\nalpha_rel = 0.5\n", "TypeMismatch"),
    ] {
        std::fs::write(dir.path().join("c.toml"), text).unwrap();
        let o = run_in(dir.path(), &["--config", "c.toml", "gen-world", "--out", "w.json"]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(name), "{}", stderr(&o));
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "seed = 5\n").unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| {
        let mut c = bin();
        c.current_dir(d);
        if let Some(v) = env {
            c.env("STRUCTREWARD_SEED", v);
        }
        let o = c.args(extra).args(["gen-world", "--out", "w.json"]).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        json(&d.join("w.json.manifest.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[], None), 0);
    assert_eq!(seed_of(&[], Some("9")), 9);
    assert_eq!(seed_of(&["--config", "c.toml"], Some("9")), 5);
    assert_eq!(seed_of(&["--config", "c.toml", "--seed", "7"], Some("9")), 7);
}

#[test]
fn batch_scoring_is_ordered_and_job_independent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lines: Vec<String> = (0..6)
        .map(|i| {
            let gen = if i % 2 == 0 { REF } else { "A blue cup is on a table." };
            serde_json::json!({ "id": format!("p{i}"), "gen": gen, "ref": REF }).to_string()
        })
        .collect();
    std::fs::write(d.join("pairs.jsonl"), lines.join("\n")).unwrap();
    let one = run_in(d, &["--jobs", "1", "score", "--pairs", "pairs.jsonl", "--out", "a.jsonl"]);
    let two = run_in(d, &["--jobs", "2", "score", "--pairs", "pairs.jsonl", "--out", "b.jsonl"]);
    assert!(one.status.success() && two.status.success(), "{}", stderr(&one));
    let a = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.jsonl")).unwrap());
    let ids: Vec<String> = a.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["id"].to_string()).collect();
    assert_eq!(ids, (0..6).map(|i| format!("\"p{i}\"")).collect::<Vec<_>>());
}

#[test]
fn audit_from_records_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let recs = [(true, true, true), (true, false, true), (false, false, false), (true, true, false)]
        .iter()
        .enumerate()
        .map(|(i, (r, a, e))| serde_json::json!({ "sample_id": i.to_string(), "c_r": r, "c_a": a, "c_e": e }).to_string())
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(d.join("r.jsonl"), recs).unwrap();
    let o = run_in(d, &["audit", "--records", "r.jsonl", "--out", "a.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = &json(&d.join("a.json"))["summary"];
    assert_eq!(s["rra"], 0.75);
    assert_eq!(s["aca"], 0.666667);
    assert_eq!(s["eca"], 0.5);

    let o = run_in(d, &["gen-world", "--seed", "2", "--out", "w.json"]);
    assert!(o.status.success());
    let o = run_in(d, &["render", "--world", "w.json", "--out", "ref.txt"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(d.join("ref.txt")).unwrap();
    let line = serde_json::json!({ "sample_id": "s", "caption": text.trim(), "world": "w.json" });
    std::fs::write(d.join("s.jsonl"), line.to_string()).unwrap();
    let o = run_in(d, &["audit", "--samples", "s.jsonl", "--out", "b.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = json(&d.join("b.json"));
    assert_eq!(b["records"][0], serde_json::json!({ "sample_id": "s", "c_r": true, "c_a": true, "c_e": true }));
}

#[test]
fn overlap_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("train.txt"), "clips/a.mp4\nb.mp4\n").unwrap();
    std::fs::write(d.join("eval.txt"), "c.mp4\nd.avi\n").unwrap();
    std::fs::write(d.join("other.txt"), "B.MKV\ne\n").unwrap();
    let o = run_in(d, &["overlap", "--train", "train.txt", "--eval", "eval.txt", "--eval", "held=other.txt", "--out", "o.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&d.join("o.json"));
    assert_eq!(v["lines"], serde_json::json!(["eval: 0/2", "held: 1/2", "union: 1/4"]));
}

#[test]
fn train_writes_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "[trainer]\nsteps = 3\nbatch_size = 4\neval_every = 2\neval_worlds = 6\nbaseline = \"moving_average\"\n",
    )
    .unwrap();
    let o = run_in(d, &["--config", "c.toml", "--seed", "4", "train", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(d.join("run/history.jsonl")).unwrap();
    let records: Vec<Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    assert!(records[0]["mean_R"].is_null() && records[0]["rra"].is_number());
    assert!(records[3]["mean_R"].is_number() && records[3]["eca"].is_number());
    assert!(json(&d.join("run/policy.json"))["logits"].is_object());
    let m = json(&d.join("run/manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 4);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ref.txt"), REF).unwrap();
    std::fs::write(d.join("gen.txt"), "A red cup is on a table. A man sits. Then the man lifts the cup.").unwrap();
    let mut outs = Vec::new();
    for name in ["x.json", "y.json"] {
        let o = run_in(d, &["--seed", "3", "score", "--gen", "gen.txt", "--ref", "ref.txt", "--out", name]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(std::fs::read(d.join(name)).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let (a, b) = (json(&d.join("x.json.manifest.json")), json(&d.join("y.json.manifest.json")));
    assert_eq!(a["config_digest"], b["config_digest"]);
    assert_eq!(a["input_digests"], b["input_digests"]);
}
