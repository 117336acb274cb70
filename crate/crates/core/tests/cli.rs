use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ubknn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubknn"))
        .args(args)
        .env_remove("UBKNN_K")
        .output()
        .expect("binary runs")
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_seconds") && k != "seconds");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn generate(dir: &Path) -> String {
    let path = dir.join("moons.csv");
    let p = path.to_str().unwrap().to_string();
    let out = ubknn(&["generate", "--synth", "moons:n_major=1500,n_minor=60,noise=0.2", "--seed", "5", "--out", &p]);
    assert!(out.status.success());
    p
}

#[test]
fn generated_csv_round_trips_through_fit_eval() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generate(dir.path());
    let report = json_out(&ubknn(&[
        "fit-eval", "--data", &csv, "--method", "underbag-knn", "--k", "5", "--rounds", "4", "--folds", "3",
    ]));
    assert_eq!(report["dataset"]["class_counts"], serde_json::json!([1500, 60]));
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    let am = report["summary"]["am"]["mean"].as_f64().unwrap();
    assert!(am > 0.8 && am <= 1.0, "am {am}");
    assert_eq!(report["rng"]["generator"], ubknn::rng::RNG_NAME);

    let synth = json_out(&ubknn(&[
        "fit-eval", "--synth", "moons:n_major=1500,n_minor=60,noise=0.2,seed=5",
        "--method", "underbag-knn", "--k", "5", "--rounds", "4", "--folds", "3",
    ]));
    assert_eq!(synth["dataset"]["fingerprint"], report["dataset"]["fingerprint"]);
}

#[test]
fn reports_are_deterministic_apart_from_timings() {
    let args = [
        "fit-eval", "--synth", "moons:n_major=800,n_minor=40", "--method", "knn", "--tune-k", "6",
        "--folds", "3", "--repeats", "2", "--seed", "11",
    ];
    let mut a = json_out(&ubknn(&args));
    let mut b = json_out(&ubknn(&args));
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "1"]);
    let mut c = json_out(&ubknn(&with_threads));
    for v in [&mut a, &mut b, &mut c] {
        strip_timings(v);
        v.as_object_mut().unwrap().remove("threads");
    }
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generate(dir.path());
    assert_eq!(ubknn(&["fit-eval", "--data", "/no/such/file.csv"]).status.code(), Some(3));
    assert_eq!(ubknn(&["fit-eval", "--data", &csv, "--method", "svm"]).status.code(), Some(2));
    assert_eq!(ubknn(&["fit-eval", "--data", &csv, "--s-frac", "1.5"]).status.code(), Some(2));
    assert_eq!(ubknn(&["fit-eval", "--data", &csv, "--synth", "moons"]).status.code(), Some(2));
    assert_eq!(ubknn(&["fit-eval"]).status.code(), Some(2));
    assert_eq!(ubknn(&["fit-eval", "--data", &csv, "--label-column", "nope"]).status.code(), Some(3));

    let single = dir.path().join("single.csv");
    std::fs::write(&single, "x,label\n1,a\n2,a\n3,a\n").unwrap();
    let out = ubknn(&["fit-eval", "--data", single.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("single class"));

    assert_eq!(ubknn(&["oracle-check", "--quick"]).status.code(), Some(0));
}

#[test]
fn env_overrides_flags() {
    let out = Command::new(env!("CARGO_BIN_EXE_ubknn"))
        .args(["fit-eval", "--synth", "moons:n_major=400,n_minor=30", "--method", "knn", "--folds", "2"])
        .env("UBKNN_K", "7")
        .output()
        .unwrap();
    let report = json_out(&out);
    assert_eq!(report["config"]["k"], 7);
    assert!(report["folds"].as_array().unwrap().iter().all(|f| f["k"] == 7));
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sweep.csv");
    let out = ubknn(&[
        "sweep", "--synth", "moons:n_major=600,n_minor=40", "--rounds-grid", "1,3", "--k-max", "4",
        "--folds", "2", "--format", "csv", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "s_frac,rounds,k,am");
    assert_eq!(lines.len(), 1 + 2 * 4);

    let out = ubknn(&[
        "fit-eval", "--synth", "moons:n_major=600,n_minor=40", "--folds", "2", "--format", "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 1 + 2 + 2);
    assert!(rows[3].starts_with("mean,") && rows[4].starts_with("sd,"));
}

#[test]
fn bench_and_regret_run_small() {
    let b = json_out(&ubknn(&[
        "bench", "--n-grid", "2000,4000", "--queries", "100", "--repeats", "1",
    ]));
    assert_eq!(b["results"]["rows"].as_array().unwrap().len(), 4);
    let r = json_out(&ubknn(&[
        "regret", "--n-grid", "500,1000", "--seeds", "2", "--eval-points", "2000",
    ]));
    let pts = r["points"].as_array().unwrap();
    assert_eq!(pts.len(), 4);
    assert!(pts.iter().all(|p| p["estimate"]["regret"].as_f64().unwrap() >= 0.0));
}
