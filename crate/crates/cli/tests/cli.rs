use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use fidbench_core::image::{save_image, SaveFormat};
use fidbench_core::study::TrapAnswer;
use fidbench_core::{jsonl, synth, FidelityScore, PairRecord};
use serde_json::Value;

fn fidbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fidbench"))
        .arg("--data-dir")
        .arg(dir)
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// Two pairs: p0 identical images, p1 a different SR.
fn image_pairs(dir: &Path) {
    save_image(&synth::natural_image(48, 48, 1), dir.join("gt.png"), SaveFormat::Png).unwrap();
    save_image(&synth::natural_image(48, 48, 2), dir.join("sr.png"), SaveFormat::Png).unwrap();
    let pairs = vec![
        PairRecord::new("p0", "gt.png", "gt.png", "m"),
        PairRecord::new("p1", "gt.png", "sr.png", "m"),
    ];
    jsonl::write(dir.join("manifest.jsonl"), &pairs).unwrap();
}

#[test]
fn degrade_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir_all(d.join("gt")).unwrap();
    for i in 0..3 {
        save_image(&synth::natural_image(32, 24, i), d.join(format!("gt/g{i}.png")), SaveFormat::Png).unwrap();
    }
    let o = fidbench(d, &["--seed", "5", "degrade", "--gt-dir", "gt", "--out-dir", "lr", "--severity", "mild"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(d.join("lr"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["g0.png", "g0.recipe.json", "g1.png", "g1.recipe.json", "g2.png", "g2.recipe.json"]
    );
    let recipe: Value = serde_json::from_slice(&std::fs::read(d.join("lr/g1.recipe.json")).unwrap()).unwrap();
    assert!(recipe["blur_sigma"].as_f64().unwrap() <= 1.0);

    std::fs::create_dir_all(d.join("empty")).unwrap();
    assert_eq!(code(&fidbench(d, &["degrade", "--gt-dir", "empty", "--out-dir", "o"])), 0);
    assert_eq!(code(&fidbench(d, &["degrade", "--gt-dir", "missing", "--out-dir", "o"])), 2);
    assert_eq!(code(&fidbench(d, &["degrade", "--gt-dir", "gt", "--out-dir", "o", "--severity", "extreme"])), 2);
}

#[test]
fn score_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    image_pairs(d);
    let o = fidbench(d, &["score", "--manifest", "manifest.jsonl", "--metrics", "psnr,ssim,vif", "--out", "s.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = lines(&d.join("s.jsonl"));
    assert_eq!(recs.len(), 6);
    assert_eq!(recs[0]["pair_id"], "p0");
    assert_eq!(recs[0]["metric"], "psnr");
    assert_eq!(recs[0]["infinite"], true);
    assert_eq!(recs[1]["metric"], "ssim");
    assert_eq!(recs[1]["value"], 1.0);
    assert!(recs[4]["value"].as_f64().unwrap() < 1.0);

    let mut pairs: Vec<PairRecord> = jsonl::read(d.join("manifest.jsonl")).unwrap();
    pairs.push(PairRecord::new("p2", "gt.png", "gone.png", "m"));
    jsonl::write(d.join("m2.jsonl"), &pairs).unwrap();
    let o = fidbench(d, &["score", "--manifest", "m2.jsonl", "--metrics", "ssim", "--out", "s2.jsonl"]);
    assert_eq!(code(&o), 1);
    let recs = lines(&d.join("s2.jsonl"));
    assert_eq!(recs.len(), 3);
    assert!(recs[2]["error"].as_str().unwrap().contains("gone.png"));

    assert_eq!(code(&fidbench(d, &["score", "--manifest", "manifest.jsonl", "--metrics", "lpips"])), 2);
}

#[test]
fn hlf_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    image_pairs(d);
    let spec = fixtures().join("gap3.spec.json");
    let o = fidbench(d, &["hlf", "--manifest", "manifest.jsonl", "--model", spec.to_str().unwrap(), "--out", "h.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = lines(&d.join("h.jsonl"));
    assert_eq!(recs.len(), 2);
    assert!(recs[0]["change_score"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(recs[0]["model_name"], "gap3");

    let bad = fixtures().join("gap3_wrong_dim.spec.json");
    assert_eq!(code(&fidbench(d, &["hlf", "--manifest", "manifest.jsonl", "--model", bad.to_str().unwrap()])), 2);

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = fidbench(d, &["hlf", "--manifest", "empty.jsonl", "--model", spec.to_str().unwrap(), "--out", "e.jsonl"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(d.join("e.jsonl")).unwrap(), "");
}

#[test]
fn select_quotas_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cands: Vec<PairRecord> = (0..1000)
        .map(|i| PairRecord {
            similarity: i as f64 / 999.0,
            ..PairRecord::new(format!("c{i:04}"), "g", "s", "m")
        })
        .collect();
    jsonl::write(d.join("cands.jsonl"), &cands).unwrap();
    let args = ["select", "--candidates", "cands.jsonl", "--total", "723", "--bins", "5", "--out", "sel.jsonl"];
    assert_eq!(code(&fidbench(d, &args)), 0);
    let first = std::fs::read(d.join("sel.jsonl")).unwrap();
    let sel = lines(&d.join("sel.jsonl"));
    let per_bin: Vec<usize> = (0..5).map(|b| sel.iter().filter(|p| p["bin"] == b).count()).collect();
    assert_eq!(per_bin, [145, 145, 145, 144, 144]);
    assert_eq!(code(&fidbench(d, &args)), 0);
    assert_eq!(std::fs::read(d.join("sel.jsonl")).unwrap(), first);
    assert_eq!(code(&fidbench(d, &["select", "--candidates", "cands.jsonl", "--total", "1001"])), 2);
}

/// Manifest with 13 pairs across two models plus one trap; 13 annotators
/// answer everything, `bad` fails the trap.
fn study(d: &Path) {
    let mut pairs: Vec<PairRecord> = (0..13)
        .map(|i| PairRecord::new(format!("p{i:02}"), "g", "s", if i % 2 == 0 { "A" } else { "B" }))
        .collect();
    let mut trap = PairRecord::new("trap", "g", "s", "A");
    trap.is_trap = true;
    trap.trap_expected = Some(TrapAnswer::No);
    pairs.push(trap);
    jsonl::write(d.join("manifest.jsonl"), &pairs).unwrap();
    let mut text = String::new();
    let mut n = 0;
    for a in 0..13 {
        for (i, p) in pairs.iter().enumerate() {
            let answer = if p.is_trap { false } else { (i + a) % 3 == 0 };
            text += &format!(
                "{{\"event_id\":\"e{n}\",\"annotator_id\":\"a{a:02}\",\"pair_id\":\"{}\",\"answer\":{answer},\"presented_at\":\"2024-01-01T00:00:00Z\",\"latency_ms\":10}}\n",
                p.pair_id
            );
            n += 1;
        }
    }
    std::fs::write(d.join("events.jsonl"), text).unwrap();
}

#[test]
fn aggregate_split_correlate_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    study(d);
    let o = fidbench(d, &["aggregate", "--events", "events.jsonl", "--out", "scores.jsonl", "--statuses", "st.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scores: Vec<FidelityScore> = jsonl::read(d.join("scores.jsonl")).unwrap();
    assert_eq!(scores.len(), 13);
    for (i, s) in scores.iter().enumerate() {
        let yes = (0..13).filter(|a| (i + a) % 3 == 0).count();
        assert_eq!(s.score, Some(yes as f64 / 13.0));
        assert!(s.is_final);
    }
    assert_eq!(lines(&d.join("st.jsonl")).len(), 13);

    let split_args = ["--seed", "3", "split", "--scores", "scores.jsonl", "--fraction", "0.8", "--out", "split.jsonl"];
    assert_eq!(code(&fidbench(d, &split_args)), 0);
    let a = std::fs::read(d.join("split.jsonl")).unwrap();
    assert_eq!(code(&fidbench(d, &split_args)), 0);
    assert_eq!(std::fs::read(d.join("split.jsonl")).unwrap(), a, "deterministic rerun");
    let split = lines(&d.join("split.jsonl"));
    assert_eq!(split.iter().filter(|p| p["split"] == "test").count(), 3);
    assert_eq!(split.iter().find(|p| p["pair_id"] == "trap").unwrap()["split"], "unassigned");

    // A scorer that equals the human score.
    let mut series = String::from("{\"scorer_name\":\"oracle\",\"orientation\":\"lower_is_better\"}\n");
    for s in &scores {
        series += &format!("{{\"pair_id\":\"{}\",\"value\":{}}}\n", s.pair_id, s.score.unwrap());
    }
    std::fs::write(d.join("oracle.jsonl"), series).unwrap();
    let o = fidbench(
        d,
        &["correlate", "--scores", "scores.jsonl", "--series", "oracle.jsonl", "--split", "all", "--out", "r.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("Metric") && table.contains("oracle"));
    let report: Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert!((report["rows"][0]["srcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    // Train split needs the split manifest.
    let o = fidbench(
        d,
        &["correlate", "--scores", "scores.jsonl", "--series", "oracle.jsonl", "--split", "train", "--manifest", "split.jsonl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = fidbench(d, &["report", "--scores", "scores.jsonl", "--buckets", "10", "--out", "hist.json"]);
    assert_eq!(code(&o), 0);
    let hist: Value = serde_json::from_slice(&std::fs::read(d.join("hist.json")).unwrap()).unwrap();
    assert_eq!(hist["overall"]["n"], 13);
    assert!(hist["per_model"]["A"].is_object() && hist["per_model"]["B"].is_object());
}

#[test]
fn malformed_input_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    study(d);
    let mut text = std::fs::read_to_string(d.join("events.jsonl")).unwrap();
    text.insert_str(0, "{\"event_id\":\"x\"}\n");
    std::fs::write(d.join("bad.jsonl"), text).unwrap();
    let o = fidbench(d, &["aggregate", "--events", "bad.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(d.join("s.jsonl"), "{\"pair_id\":\"p\",\"n_valid\":1,\"score\":0.5,\"final\":true}\noops\n").unwrap();
    let o = fidbench(d, &["report", "--scores", "s.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn serve_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), "{\"bind_address\": 1}").unwrap();
    assert_eq!(code(&fidbench(d, &["serve", "--config", "bad.json"])), 2);

    study(d);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = format!(
        "{{\"bind_address\":\"127.0.0.1:{port}\",\"data_dir\":\".\",\"admin_token\":\"t\",\"images_dir\":\".\"}}"
    );
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_fidbench"))
        .args(["--log-level", "warn", "--data-dir"])
        .arg(d)
        .args(["serve", "--config", "cfg.json"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}/api/progress");
    let deadline = Instant::now() + Duration::from_secs(20);
    let body = loop {
        if let Ok(r) = ureq::get(&url).call() {
            break r.into_string().unwrap();
        }
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["events"], 13 * 14);

    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(20);
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "no shutdown after SIGINT");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(exit.code(), Some(0));
}
