use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ltp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ltp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec![
        "simulate",
        "--topics",
        "10",
        "--categories",
        "5",
        "--vocab-size",
        "300",
        "--queries-per-topic",
        "8",
        "--out",
        d,
    ];
    args.extend_from_slice(extra);
    if !extra.contains(&"--personalized") {
        args.extend_from_slice(&["--personalized", "2"]);
    }
    if !extra.contains(&"--seed") {
        args.extend_from_slice(&["--seed", "4"]);
    }
    ok(&args);
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error record");
    serde_json::from_str(line).expect("machine-readable error")
}

#[test]
fn simulate_learn_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    for f in [
        "observations.jsonl",
        "items.jsonl",
        "topic_maps.jsonl",
        "topics.json",
        "ground_truth.json",
    ] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let truth = json(&sim.join("ground_truth.json"));
    assert_eq!(truth["z_true"].as_object().unwrap().len(), 80);

    let learned = tmp.path().join("learned");
    let (obs, maps, l) = (
        sim.join("observations.jsonl"),
        sim.join("topic_maps.jsonl"),
        learned.to_str().unwrap().to_string(),
    );
    ok(&[
        "learn",
        "--observations",
        obs.to_str().unwrap(),
        "--topic-maps",
        maps.to_str().unwrap(),
        "--out",
        &l,
    ]);
    let profile = json(&learned.join("profile.json"));
    assert_eq!(profile["eta_tilde"].as_array().unwrap().len(), 10);
    assert!(!profile["elbo_trace"].as_array().unwrap().is_empty());
    assert_eq!(profile["lambda"], 0.9);
    assert_eq!(profile["mu"], 10.0);
    assert_eq!(profile["phi"].as_object().unwrap().len(), 80);
    let tau = profile["tau_mean"].as_f64().unwrap();
    assert!(tau > 0.0 && tau < 1.0);

    let report_dir = tmp.path().join("report");
    ok(&[
        "evaluate",
        "--profile",
        learned.join("profile.json").to_str().unwrap(),
        "--ground-truth",
        sim.join("ground_truth.json").to_str().unwrap(),
        "--observations",
        obs.to_str().unwrap(),
        "--topic-maps",
        maps.to_str().unwrap(),
        "--repeats",
        "2",
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    let report = json(&report_dir.join("report.json"));
    for k in ["1", "3", "5"] {
        assert!(report["metrics"]["p_at"][k].is_number());
    }
    for k in ["1", "3"] {
        assert!(report["metrics"]["p_plus"][k].is_number());
    }
    assert!(report["metrics"]["r_precision"].is_number());
    assert!(report["metrics"]["average_precision"].is_number());
    assert!(report["disambiguation_accuracy"].is_number());
    let md = std::fs::read_to_string(report_dir.join("report.md")).unwrap();
    assert!(md.contains("R-pre"));

    let ev_dir = tmp.path().join("evidence");
    ok(&[
        "evidence",
        "--profile",
        learned.join("profile.json").to_str().unwrap(),
        "--observations",
        obs.to_str().unwrap(),
        "--topic-maps",
        maps.to_str().unwrap(),
        "--top",
        "5",
        "--out",
        ev_dir.to_str().unwrap(),
    ]);
    assert!(
        json(&ev_dir.join("evidence.json"))
            .as_array()
            .unwrap()
            .len()
            <= 5
    );
}

#[test]
fn em_learning_writes_a_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let out = tmp.path().join("em");
    ok(&[
        "learn",
        "--observations",
        sim.join("observations.jsonl").to_str().unwrap(),
        "--topic-maps",
        sim.join("topic_maps.jsonl").to_str().unwrap(),
        "--topics",
        "10",
        "--em",
        "--out",
        out.to_str().unwrap(),
    ]);
    let profile = json(&out.join("profile.json"));
    let trace = profile["em_trace"].as_array().unwrap();
    assert!(!trace.is_empty());
    let lambda = profile["lambda"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&lambda));
}

#[test]
fn learning_is_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "--threads",
            threads,
            "learn",
            "--observations",
            sim.join("observations.jsonl").to_str().unwrap(),
            "--topic-maps",
            sim.join("topic_maps.jsonl").to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        std::fs::read(out.join("profile.json")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_eq!(a, c);

    // Simulation is deterministic too.
    let sim2 = tmp.path().join("sim2");
    simulate(&sim2, &["--threads", "2"]);
    for f in [
        "observations.jsonl",
        "topic_maps.jsonl",
        "ground_truth.json",
        "items.jsonl",
    ] {
        assert_eq!(
            std::fs::read(sim.join(f)).unwrap(),
            std::fs::read(sim2.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn disambiguate_and_classify_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let u1 = tmp.path().join("u1");
    let u2 = tmp.path().join("u2");
    simulate(
        &u1,
        &["--personalizer", "deterministic", "--personalized", "1"],
    );
    // Same seed, so both users share the world and queries; their profiles
    // differ in the number of personalized topics.
    simulate(
        &u2,
        &["--personalizer", "deterministic", "--personalized", "3"],
    );
    assert_eq!(
        std::fs::read(u1.join("topic_maps.jsonl")).unwrap(),
        std::fs::read(u2.join("topic_maps.jsonl")).unwrap()
    );
    let out = tmp.path().join("dis");
    ok(&[
        "disambiguate",
        "--observations",
        u1.join("observations.jsonl").to_str().unwrap(),
        "--topic-maps",
        u1.join("topic_maps.jsonl").to_str().unwrap(),
        "--repeats",
        "3",
        "--mixture",
        "--out",
        out.to_str().unwrap(),
    ]);
    let dis = json(&out.join("disambiguation.json"));
    assert!(dis["accuracies"].as_array().unwrap().len() <= 3);

    let out = tmp.path().join("cls");
    let a = format!("alice={}", u1.join("observations.jsonl").display());
    let b = format!("bob={}", u2.join("observations.jsonl").display());
    ok(&[
        "classify",
        "--user",
        &a,
        "--user",
        &b,
        "--topic-maps",
        u1.join("topic_maps.jsonl").to_str().unwrap(),
        "--repeats",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let cls = json(&out.join("classification.json"));
    for acc in cls["accuracies"].as_array().unwrap() {
        let acc = acc.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let single = ltp(&[
        "classify",
        "--user",
        &a,
        "--topic-maps",
        u1.join("topic_maps.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!single.status.success());
    assert_eq!(error_record(&single)["error"]["kind"], "invalid_parameter");
}

#[test]
fn fit_topics_writes_maps_for_every_item() {
    let tmp = tempfile::tempdir().unwrap();
    let items = tmp.path().join("items.jsonl");
    std::fs::write(
        &items,
        "{\"item_id\":\"a\",\"text\":\"apple banana apple cherry\"}\n\
         {\"item_id\":\"b\",\"text\":\"banana apple cherry apple\"}\n\
         {\"item_id\":\"c\",\"text\":\"rocket orbit rocket launch\"}\n\
         {\"item_id\":\"d\",\"text\":\"orbit launch rocket orbit\"}\n",
    )
    .unwrap();
    let out = tmp.path().join("topics");
    ok(&[
        "fit-topics",
        "--items",
        items.to_str().unwrap(),
        "--topics",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let model = json(&out.join("topics.json"));
    assert_eq!(model["T"], 2);
    let maps = std::fs::read_to_string(out.join("topic_maps.jsonl")).unwrap();
    assert_eq!(maps.lines().count(), 4);
}

#[test]
fn failures_are_reported_with_distinct_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let maps = sim.join("topic_maps.jsonl");
    let maps = maps.to_str().unwrap();

    let missing = ltp(&[
        "learn",
        "--observations",
        "/nonexistent/obs.jsonl",
        "--topic-maps",
        maps,
        "--out",
        out,
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(error_record(&missing)["error"]["kind"], "file_not_found");

    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"query_id\":\"q\",\"vanilla\":[\"d00001\"],\"personalized\":[\"d00001\"]}\nnot json\n",
    )
    .unwrap();
    let schema = ltp(&[
        "learn",
        "--observations",
        bad.to_str().unwrap(),
        "--topic-maps",
        maps,
        "--out",
        out,
    ]);
    assert_eq!(schema.status.code(), Some(4));
    let rec = error_record(&schema);
    assert_eq!(rec["error"]["kind"], "schema_violation");
    assert!(rec["error"]["message"].as_str().unwrap().contains("line 2"));

    let obs = sim.join("observations.jsonl");
    let mismatch = ltp(&[
        "learn",
        "--observations",
        obs.to_str().unwrap(),
        "--topic-maps",
        maps,
        "--topics",
        "7",
        "--out",
        out,
    ]);
    assert_eq!(mismatch.status.code(), Some(5));
    assert_eq!(
        error_record(&mismatch)["error"]["kind"],
        "topic_count_mismatch"
    );
}
