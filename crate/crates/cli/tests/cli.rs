use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use boffin_core::benchmark::{median, parse_trace_csv, BenchmarkSummary, Strategy};
use boffin_core::corpus::{Utterance, UtteranceManifest};
use boffin_core::tuner::{parse_incumbent_csv, History};
use serde_json::Value;
use tempfile::TempDir;

fn boffin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boffin"))
        .args(args)
        .env_remove("BOFFIN_TIMEOUT_S")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = boffin(args);
    assert!(
        out.status.success(),
        "boffin {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn manifest(prefix: &str, n: usize) -> UtteranceManifest {
    UtteranceManifest::new(
        (0..n)
            .map(|i| Utterance {
                utterance_id: format!("{prefix}_{i:03}"),
                speaker_id: prefix.to_string(),
                audio_path: format!("audio/{prefix}_{i:03}.wav"),
                text: format!("sentence {i}"),
                duration_s: Some(2.5),
                origin: None,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn tune_writes_reparseable_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    ok(&["tune", "--strategy", "bo", "--objective", "branin", "--budget", "30", "--seed", "7", "--out", p(&out)]);

    let history = History::from_jsonl(&read(&out.join("trials.jsonl"))).unwrap();
    assert_eq!(history.len(), 30);
    let trace = parse_incumbent_csv(&read(&out.join("incumbent.csv"))).unwrap();
    assert_eq!(trace.len(), 30);
    assert_eq!(trace.iter().map(|t| t.1).collect::<Vec<_>>(), history.incumbent_trace());
    assert_eq!(read(&out.join("timings.csv")).lines().count(), 31);

    let summary: Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["trial_count"], 30);
    assert_eq!(summary["strategy"], "bo");
    assert_eq!(summary["best_score"].as_f64(), history.final_incumbent());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let runs: [&[&str]; 3] = [
        &["tune", "--strategy", "bo", "--objective", "hartmann6", "--budget", "15", "--seed", "3"],
        &["random-search", "--objective", "surrogate", "--speaker", "4", "--budget", "15", "--seed", "3"],
        &["baseline", "--objective", "surrogate", "--baseline-config", "boffin-preset", "--seed", "3"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let a = dir.path().join(format!("{k}a"));
        let b = dir.path().join(format!("{k}b"));
        for d in [&a, &b] {
            let mut full = args.to_vec();
            full.extend(["--out", p(d)]);
            ok(&full);
        }
        assert_eq!(fs::read(a.join("trials.jsonl")).unwrap(), fs::read(b.join("trials.jsonl")).unwrap());
    }
}

#[test]
fn baseline_requires_a_config() {
    let dir = TempDir::new().unwrap();
    let out = boffin(&["tune", "--strategy", "baseline", "--objective", "surrogate", "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--baseline-config"));
}

#[test]
fn argument_validation() {
    let dir = TempDir::new().unwrap();
    let d = p(dir.path());
    let cases: [&[&str]; 5] = [
        &["tune", "--objective", "branin", "--space", "boffin-preset", "--out", d],
        &["tune", "--objective", "nope", "--out", d],
        &["tune", "--objective", "branin", "--speaker", "1", "--out", d],
        &["tune", "--objective", "external", "--out", d],
        &["tune", "--objective", "branin", "--budget", "5", "--n-init", "6", "--out", d],
    ];
    for args in cases {
        assert!(!boffin(args).status.success(), "{args:?} should fail");
    }
    assert!(stderr(&boffin(&["tune", "--objective", "branin"])).contains("--out"));
}

#[test]
fn config_file_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"objective": "branin", "budget": 12, "n_init": 4, "seed": 3, "out": "from_file"}"#).unwrap();
    ok(&["tune", "--config", p(&cfg)]);
    let summary: Value = serde_json::from_str(&read(&dir.path().join("from_file/summary.json"))).unwrap();
    assert_eq!((summary["budget"].as_u64(), summary["seed"].as_u64()), (Some(12), Some(3)));

    let out = dir.path().join("flags");
    ok(&["tune", "--config", p(&cfg), "--budget", "8", "--out", p(&out)]);
    let summary: Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["trial_count"], 8);
    assert_eq!(summary["n_init"], 4);

    // inline space and baseline in the config file
    let cfg2 = dir.path().join("cfg2.json");
    fs::write(
        &cfg2,
        r#"{"objective": "surrogate", "space": {"params": [
              {"name": "x", "kind": "continuous", "low": 0.0, "high": 1.0},
              {"name": "k", "kind": "integer", "low": 1, "high": 4}]},
            "baseline_config": {"x": 0.5, "k": 2}}"#,
    )
    .unwrap();
    let out = dir.path().join("inline");
    ok(&["baseline", "--config", p(&cfg2), "--out", p(&out)]);
    let h = History::from_jsonl(&read(&out.join("trials.jsonl"))).unwrap();
    assert_eq!(h.trials()[0].config.get_f64("x"), Some(0.5));
}

#[test]
fn invalid_config_file_is_reported() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"objective": "branin", "budgett": 3}"#).unwrap();
    let out = boffin(&["tune", "--config", p(&cfg), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("invalid config file"), "{}", stderr(&out));
}

#[test]
fn external_objective_and_timeout() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ext");
    ok(&[
        "random-search",
        "--objective",
        "external",
        "--command",
        r#"echo '{"score": 42}' > {result}"#,
        "--budget",
        "3",
        "--out",
        p(&out),
    ]);
    let h = History::from_jsonl(&read(&out.join("trials.jsonl"))).unwrap();
    assert!(h.trials().iter().all(|t| t.score == Some(42.0)));
    let req: Value = serde_json::from_str(&read(&out.join("trials/trial_0001/config.json"))).unwrap();
    assert_eq!(req["trial_index"], 1);
    assert_eq!(req["hints"]["trainable_modules"][0], "speaker_embedding");

    let slow = dir.path().join("slow");
    let r = Command::new(env!("CARGO_BIN_EXE_boffin"))
        .args(["random-search", "--objective", "external", "--command", "sleep 5", "--budget", "1", "--out", p(&slow)])
        .env("BOFFIN_TIMEOUT_S", "0.3")
        .output()
        .unwrap();
    assert!(!r.status.success());
    let h = History::from_jsonl(&read(&slow.join("trials.jsonl"))).unwrap();
    assert!(h.trials()[0].error.as_deref().unwrap().contains("timed out"), "{:?}", h.trials()[0].error);
}

#[test]
fn benchmark_accounting_and_consistency() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench");
    ok(&["benchmark", "--strategies", "bo,rs", "--speakers", "3", "--seeds", "5", "--budget", "50", "--out", p(&out)]);

    let mut run_dirs = 0;
    for s in ["bo", "rs"] {
        for sp in 0..3 {
            for seed in 0..5 {
                let d = out.join(format!("{s}/speaker_{sp:03}/seed_{seed:03}"));
                assert!(d.join("trials.jsonl").is_file(), "{}", d.display());
                run_dirs += 1;
            }
        }
    }
    assert_eq!(run_dirs, 30);

    let summary: BenchmarkSummary = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary.total_cells, 30);
    for strat in &summary.strategies {
        for sp in &strat.speakers {
            let finals: Vec<f64> = (0..5)
                .map(|seed| {
                    let path = out.join(format!("{}/speaker_{:03}/seed_{seed:03}/trials.jsonl", strat.strategy, sp.speaker));
                    History::from_jsonl(&read(&path)).unwrap().final_incumbent().unwrap()
                })
                .collect();
            assert_eq!(sp.median, median(&finals));
        }
    }
    let bo = summary.strategy(Strategy::Bo).unwrap().median_final_incumbent.unwrap();
    let rs = summary.strategy(Strategy::Rs).unwrap().median_final_incumbent.unwrap();
    assert!(bo < rs, "bo {bo} vs rs {rs}");

    let rows = parse_trace_csv(&read(&out.join("trace_bo.csv"))).unwrap();
    assert_eq!(rows.len(), 3 * 50);
    assert!(rows.iter().all(|r| r.runs == 5));
}

#[test]
fn benchmark_rejects_other_objectives() {
    let dir = TempDir::new().unwrap();
    let out = boffin(&["benchmark", "--objective", "branin", "--out", p(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn split_and_mix() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("target.jsonl");
    manifest("tgt", 100).save(&m).unwrap();
    let split_dir = dir.path().join("split");
    ok(&["split", "--manifest", p(&m), "--fraction", "0.2", "--seed", "5", "--out", p(&split_dir)]);
    assert_eq!(read(&split_dir.join("train.jsonl")).lines().count(), 80);
    assert_eq!(read(&split_dir.join("validation.jsonl")).lines().count(), 20);

    let base = dir.path().join("base.csv");
    manifest("base", 300).save(&base).unwrap();
    let mixed = dir.path().join("mixed.jsonl");
    ok(&["mix-corpus", "--target", p(&m), "--base", p(&base), "--ratio", "0", "--out", p(&mixed)]);
    assert_eq!(read(&mixed), read(&m));

    let mixed_csv = dir.path().join("mixed.csv");
    ok(&["mix-corpus", "--target", p(&m), "--base", p(&base), "--ratio", "0.5", "--out", p(&mixed_csv)]);
    let mixed = UtteranceManifest::load(&mixed_csv).unwrap();
    assert_eq!(mixed.len(), 200);
}

#[test]
fn malformed_manifest_line_is_named() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.jsonl");
    let text = manifest("tgt", 30).to_jsonl();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[16] = "{\"utterance_id\": ";
    fs::write(&m, lines.join("\n")).unwrap();
    let out = boffin(&["split", "--manifest", p(&m), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 17"), "{}", stderr(&out));
}
