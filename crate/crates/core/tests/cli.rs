use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdm_core::behavior::predict_profile;
use hdm_core::config::{parse_config, parse_config_str, ExperimentSpec, Mode};
use hdm_core::estimation::FitResult;
use hdm_core::fog::FogScenario;
use hdm_core::{BehavioralModel, NormalFormGame};
use tempfile::TempDir;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn hdm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HDM_OUT_DIR")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_writes_traces_summary_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let config = write(
        tmp.path(),
        "sim.json",
        r#"{"scenario": {"M": 4, "B": 100}, "experiment": {"seeds": [1, 2], "noise_sweep": [0, 0.05], "averaging_sweep": [true]}}"#,
    );
    let out = tmp.path().join("out");
    let o = hdm(&["simulate", &config], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = read_dir_sorted(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        vec![
            "manifest.json",
            "summary.json",
            "trace_0.05_avg_1.csv",
            "trace_0.05_avg_2.csv",
            "trace_0_avg_1.csv",
            "trace_0_avg_2.csv",
        ]
    );
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert_eq!(summary[0]["noise_rho"], 0.0);
    assert_eq!(summary[0]["converged"], true);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failed"], 0);
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 4);

    // rows = rounds x M for every trace
    for run in manifest["runs"].as_array().unwrap() {
        let file = out.join(run["file"].as_str().unwrap());
        let rows = csv::Reader::from_path(file).unwrap().records().count();
        assert_eq!(rows as u64, run["rounds"].as_u64().unwrap() * 4);
    }
}

#[test]
fn simulate_is_byte_identical_across_runs_and_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let config = repo().join("configs/noise_sweep.json");
    let config = config.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(hdm(&["simulate", config, "--workers", "1"], &a).status.success());
    assert!(hdm(&["simulate", config, "--workers", "4"], &b).status.success());
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
}

#[test]
fn out_dir_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let config = write(tmp.path(), "sim.json", r#"{"experiment": {"seeds": [3]}}"#);
    let env_out = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_hdm"))
        .args(["simulate", &config])
        .env("HDM_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join("trace_0_raw_3.csv").exists());
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let bad_init = write(
        tmp.path(),
        "bad.json",
        r#"{"scenario": {"M": 2, "c_lower": [1, 1], "c_init": [0.5, 1]}, "experiment": {"seeds": [1]}}"#,
    );
    let o = hdm(&["simulate", &bad_init], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c_init"), "{}", stderr(&o));

    let unknown = write(tmp.path(), "unknown.json", r#"{"scenario": {"bogus": 1}, "experiment": {"seeds": [1]}}"#);
    let o = hdm(&["simulate", &unknown], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));

    let no_seeds = write(tmp.path(), "none.json", r#"{"experiment": {}}"#);
    assert_eq!(hdm(&["simulate", &no_seeds], &out).status.code(), Some(2));
    assert_eq!(hdm(&["simulate", "/nonexistent/config.json"], &out).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_runtime_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    // a file where the output directory should be
    fs::write(&out, "").unwrap();
    let config = write(tmp.path(), "sim.json", r#"{"experiment": {"seeds": [1]}}"#);
    assert_eq!(hdm(&["simulate", &config], &out).status.code(), Some(3));
}

#[test]
fn resolved_config_dump_round_trips() {
    let tmp = TempDir::new().unwrap();
    let config = write(
        tmp.path(),
        "minimal.json",
        r#"{"scenario": {"M": 4, "B": 100}, "experiment": {"seeds": [5]}}"#,
    );
    let out = tmp.path().join("out");
    let o = hdm(&["simulate", &config, "--dump-resolved-config"], &out);
    assert!(o.status.success());
    assert!(!out.exists(), "dumping must not run anything");
    let dumped = String::from_utf8(o.stdout).unwrap();
    let spec: ExperimentSpec = serde_json::from_str(&dumped).unwrap();
    assert_eq!(spec.scenario, FogScenario::default_four_node());
    assert_eq!(spec, parse_config(&config, Some(Mode::Simulate)).unwrap());
    assert_eq!(parse_config_str(&dumped, tmp.path(), None).unwrap(), spec);
}

#[test]
fn predict_matches_the_library() {
    let tmp = TempDir::new().unwrap();
    let config = repo().join("configs/predict_level_k.json");
    let o = hdm(&["predict", config.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let again = hdm(&["predict", config.to_str().unwrap()], tmp.path());
    assert_eq!(again.stdout, o.stdout);
    let printed: Vec<Vec<f64>> = serde_json::from_slice(&o.stdout).unwrap();

    let spec = parse_config(&config, Some(Mode::Predict)).unwrap();
    let game: NormalFormGame =
        serde_json::from_str(&fs::read_to_string(repo().join("data/games/stag_hunt.json")).unwrap()).unwrap();
    let expected = predict_profile(spec.model.as_ref().unwrap(), &game).unwrap();
    assert_eq!(printed.len(), 2);
    for (p, e) in printed.iter().zip(&expected) {
        assert_eq!(p.as_slice(), e.weights());
    }
}

#[test]
fn predict_simple_models() {
    let tmp = TempDir::new().unwrap();
    let game = r#"{"action_counts": [2, 2], "payoffs": {"0": [3, 0, 5, 1], "1": [3, 5, 0, 1]}}"#;
    let run = |model: &str| {
        let text = format!(r#"{{"model": {model}, "experiment": {{"game": {game}}}}}"#);
        let config = write(tmp.path(), "p.json", &text);
        let o = hdm(&["predict", &config], tmp.path());
        (o.status.code(), String::from_utf8(o.stdout).unwrap())
    };
    assert_eq!(
        run(r#"{"model": "logit_qbr", "params": {"lambda": 0}}"#),
        (Some(0), "[[0.5,0.5],[0.5,0.5]]\n".into())
    );
    assert_eq!(run(r#"{"model": "best_response"}"#), (Some(0), "[[0.0,1.0],[0.0,1.0]]\n".into()));
    assert_eq!(run(r#"{"model": "logit_qbr", "params": {"lambda": -1}}"#).0, Some(2));
}

#[test]
fn fit_recovers_the_shipped_dataset() {
    let tmp = TempDir::new().unwrap();
    let config = repo().join("configs/fit_qbr.json");
    let o = hdm(&["fit", config.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: FitResult = serde_json::from_slice(&o.stdout).unwrap();
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(repo().join("data/qbr_lambda2.meta.json")).unwrap()).unwrap();
    let model: BehavioralModel = serde_json::from_value(meta["model"].clone()).unwrap();
    let BehavioralModel::LogitQbr { lambda: truth } = model else {
        panic!("unexpected model {model:?}")
    };
    assert_eq!(fit.param_names, vec!["lambda"]);
    assert!((fit.params[0] - truth).abs() <= 0.3, "lambda {}", fit.params[0]);
    assert!(fit.cv_score.is_some());
    let written: FitResult = serde_json::from_slice(&fs::read(tmp.path().join("fit_result.json")).unwrap()).unwrap();
    assert_eq!(written, fit);
}

#[test]
fn fit_rejects_bad_datasets() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let fit_config = |dataset: &str, folds: usize| {
        let text = format!(
            r#"{{"model": {{"model": "logit_qbr", "params": {{"lambda": 1}}}}, "experiment": {{"dataset": "{dataset}", "folds": {folds}}}}}"#
        );
        write(tmp.path(), "fit.json", &text)
    };

    write(tmp.path(), "empty.jsonl", "");
    let o = hdm(&["fit", &fit_config("empty.jsonl", 2)], &out);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("empty dataset"), "{}", stderr(&o));

    let shipped = fs::read_to_string(repo().join("data/qbr_lambda2.jsonl")).unwrap();
    let four: Vec<&str> = shipped.lines().take(4).collect();
    write(tmp.path(), "four.jsonl", &(four.join("\n") + "\n"));
    let o = hdm(&["fit", &fit_config("four.jsonl", 5)], &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("folds"));

    write(tmp.path(), "broken.jsonl", &format!("{}\n{{\"game\": 1}}\n{}\nxx\n", four[0], four[1]));
    let o = hdm(&["fit", &fit_config("broken.jsonl", 2)], &out);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 2") && msg.contains("line 4"), "{msg}");

    let o = hdm(&["fit", &fit_config("missing.jsonl", 2)], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset"));
}
