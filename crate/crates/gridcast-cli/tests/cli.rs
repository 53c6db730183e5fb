//! End-to-end runs of the `gridcast` binary: argument plumbing, config
//! layering, exit codes, and the files each subcommand leaves behind.

use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridcast::pipeline::sha256_hex;

fn gridcast<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_gridcast"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn arg(path: &Path) -> &str {
    path.to_str().expect("test paths are utf-8")
}

#[test]
fn pipeline_honors_config_file_and_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config_path = dir.path().join("run.toml");
    fs::write(
        &config_path,
        format!(
            "input_csv = \"{}\"\nweather_csv = \"{}\"\nout_dir = \"{}\"\n\
             seed = 7\naugmenter = \"replicate\"\ntarget_rows = 336\n",
            data("household.csv").display(),
            data("nextday_weather.csv").display(),
            out.display(),
        ),
    )
    .unwrap();

    let run = gridcast(["pipeline", "--config", arg(&config_path), "--seed", "11"]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    let text = stdout_of(&run);
    assert!(text.contains("done:"), "missing summary line: {text}");

    // Flag beats the config file.
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("effective_config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["seed"], 11);

    // Every manifest entry must exist and hash to the recorded digest.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["augmenter"], "replicate");
    assert_eq!(manifest["benchmark_rows"], 8);
    let entries = manifest["entries"].as_array().unwrap();
    let names: Vec<&str> = entries.iter().map(|e| e["path"].as_str().unwrap()).collect();
    for expected in [
        "eval_report.csv",
        "augmented.csv",
        "dispatch_summary.json",
        "fidelity/pca.svg",
    ] {
        assert!(names.contains(&expected), "{expected} missing from manifest");
    }
    for entry in entries {
        let bytes = fs::read(out.join(entry["path"].as_str().unwrap())).unwrap();
        assert_eq!(sha256_hex(&bytes), entry["sha256"].as_str().unwrap(), "{}", entry["path"]);
    }

    assert!(!out.join(".gridcast.lock").exists(), "lock not released");
}

/// The bundled demo config, run as shipped (only the output directory is
/// redirected). Slow: trains the diffusion model at its default budget.
#[test]
fn bundled_config_runs_the_full_demo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = Command::new(env!("CARGO_BIN_EXE_gridcast"))
        .current_dir(repo_root())
        .args(["pipeline", "--config", "config.example.toml", "--out", arg(&out)])
        .output()
        .expect("binary should spawn");
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["benchmark_rows"].as_u64().unwrap() >= 12);
    let entries = manifest["entries"].as_array().unwrap();
    let count = |kind: &str| entries.iter().filter(|e| e["kind"] == kind).count();
    assert!(count("plot") >= 9, "only {} plots", count("plot"));
    assert_eq!(count("schedule"), 1);
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("busy");
    fs::create_dir(&out).unwrap();
    fs::write(out.join(".gridcast.lock"), b"").unwrap();

    let run = gridcast(["ingest", "--input", arg(&data("household.csv")), "--out", arg(&out)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr_of(&run).contains("owned by another run"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let run = gridcast(["pipeline", "--frobnicate"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr_of(&run).contains("--frobnicate"));
}

#[test]
fn missing_input_exits_with_data_code_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let run = gridcast(["ingest", "--input", arg(&missing)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr_of(&run).contains("nope.csv"));
}

#[test]
fn ingest_prints_row_count_and_provenance() {
    let run = gridcast(["ingest", "--input", arg(&data("household.csv"))]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    let text = stdout_of(&run);
    assert!(text.contains("168 rows (original)"), "unexpected: {text}");
    assert!(text.contains("2024-04-16 00:00:00 .. 2024-04-22 23:00:00"), "unexpected: {text}");
}

#[test]
fn dispatch_flat_profile_matches_closed_form_cost() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.csv");
    let mut body = String::from("hour,load_kw,pv_max_kw\n");
    for t in 0..24 {
        body.push_str(&format!("{t},10,4\n"));
    }
    fs::write(&profile, body).unwrap();
    let out = dir.path().join("out");

    let run = gridcast(["dispatch", "--profile", arg(&profile), "--out", arg(&out)]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    let text = stdout_of(&run);
    // 24h of 10 kW load, 4 kW PV at 0.4 $/kWh, remainder from grid at 1.0.
    assert!(text.contains("total cost 182.4000"), "unexpected: {text}");
    assert!(text.contains("grid 144.0000 kWh"), "unexpected: {text}");
    assert!(text.contains("pv 96.0000 kWh"), "unexpected: {text}");
    for name in ["dispatch_schedule.csv", "dispatch_summary.json", "dispatch.svg"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn augment_replicate_hits_target_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = gridcast([
        "augment",
        "--input",
        arg(&data("household.csv")),
        "--out",
        arg(&out),
        "--augmenter",
        "replicate",
        "--target-rows",
        "336",
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    let text = stdout_of(&run);
    assert!(
        text.contains("augmented: 336 rows via replicate from 111 training windows"),
        "unexpected: {text}"
    );
    let csv = fs::read_to_string(out.join("augmented.csv")).unwrap();
    assert_eq!(csv.lines().count(), 337); // header + rows
    assert!(csv.lines().nth(1).unwrap().ends_with(",replicated"));
}

/// Chronological 134/34 split of the bundled week, written as two CSVs.
fn split_sample(dir: &Path) -> (PathBuf, PathBuf) {
    let text = fs::read_to_string(data("household.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let rows: Vec<&str> = lines.collect();
    let train_path = dir.join("train.csv");
    let test_path = dir.join("test.csv");
    let write = |path: &Path, rows: &[&str]| {
        fs::write(path, format!("{header}\n{}\n", rows.join("\n"))).unwrap();
    };
    write(&train_path, &rows[..134]);
    write(&test_path, &rows[134..]);
    (train_path, test_path)
}

#[test]
fn evaluate_reports_every_model_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = split_sample(dir.path());
    let out = dir.path().join("out");

    let run = gridcast([
        "evaluate",
        "--train",
        arg(&train),
        "--test",
        arg(&test),
        "--out",
        arg(&out),
        "--seed",
        "5",
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    let text = stdout_of(&run);
    for model in ["extratrees", "random_forest", "gbdt", "gbdt_deep"] {
        assert!(text.contains(model), "{model} missing from report:\n{text}");
    }

    let csv = fs::read_to_string(out.join("eval_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5); // header + 4 models x 1 variant
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 5);
    assert_eq!(json["test_size"], 34);
}

#[test]
fn evaluate_rejects_train_test_timestamp_overlap() {
    let sample = data("household.csv");
    let run = gridcast([
        "evaluate",
        "--train",
        arg(&sample),
        "--test",
        arg(&sample),
    ]);
    assert_eq!(run.status.code(), Some(2));
    let err = stderr_of(&run);
    assert!(err.contains("shares") && err.contains("timestamps"), "unexpected: {err}");
}

#[test]
fn train_forecaster_writes_checkpoint_and_rejects_unknown_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = gridcast([
        "train-forecaster",
        "--train",
        arg(&data("household.csv")),
        "--out",
        arg(&out),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    assert!(stdout_of(&run).contains("extratrees: trained on 168 rows"));
    let checkpoint = fs::read(out.join("forecaster.gckp")).unwrap();
    assert!(!checkpoint.is_empty());

    let bad = gridcast([
        "train-forecaster",
        "--train",
        arg(&data("household.csv")),
        "--out",
        arg(&dir.path().join("other")),
        "--model",
        "bogus",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let err = stderr_of(&bad);
    assert!(err.contains("unknown model") && err.contains("extratrees"), "unexpected: {err}");
}

#[test]
fn diagnose_writes_the_fidelity_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let aug_dir = dir.path().join("aug");
    let run = gridcast([
        "augment",
        "--input",
        arg(&data("household.csv")),
        "--out",
        arg(&aug_dir),
        "--augmenter",
        "replicate",
        "--target-rows",
        "336",
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));

    let out = dir.path().join("fidelity");
    let run = gridcast([
        "diagnose",
        "--original",
        arg(&data("household.csv")),
        "--generated",
        arg(&aug_dir.join("augmented.csv")),
        "--out",
        arg(&out),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    let text = stdout_of(&run);
    assert!(text.contains("original"), "unexpected: {text}");
    assert!(text.contains("replicated"), "unexpected: {text}");
    assert!(text.contains("wrote 19 files under"), "unexpected: {text}");
    // stats.csv, pca.{svg,csv}, and svg+csv per feature column, lock released.
    assert_eq!(fs::read_dir(&out).unwrap().count(), 19);
}
