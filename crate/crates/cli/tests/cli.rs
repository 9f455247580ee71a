use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aopnpl"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to launch aopnpl")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn generate(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut all = vec!["generate", "--out", path.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = run(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn solve_noise_free_file_recovers_ground_truth() {
    let dir = TempDir::new().unwrap();
    let file = generate(dir.path(), "scene.json", &["--points", "100", "--seed", "3"]);
    let out = stdout_json(&run(&["solve", file.to_str().unwrap()]));
    let err = &out["ground_truth_error"];
    assert!(f(&err["rotation_fro"]) < 1e-6);
    assert!(f(&err["translation"]) < 1e-6);
    assert_eq!(out["mode"], "point");
    assert_eq!(out["diagnostics"]["refined"], true);

    // rotation is emitted row-major and is orthonormal with det +1
    let r: Vec<Vec<f64>> = serde_json::from_value(out["rotation"].clone()).unwrap();
    let m = nalgebra::Matrix3::from_fn(|i, j| r[i][j]);
    assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-9);
    assert!((m.determinant() - 1.0).abs() < 1e-9);
    let truth: Vec<Vec<f64>> = serde_json::from_value(
        serde_json::from_str::<Value>(&std::fs::read_to_string(&file).unwrap()).unwrap()["ground_truth"]["rotation"]
            .clone(),
    )
    .unwrap();
    assert!((r[0][1] - truth[0][1]).abs() < 1e-6 && (r[1][0] - truth[1][0]).abs() < 1e-6);
}

#[test]
fn no_refine_is_not_better_on_average() {
    let dir = TempDir::new().unwrap();
    let mut refined = 0.0;
    let mut first = 0.0;
    for seed in 0..8 {
        let file = generate(
            dir.path(),
            &format!("s{seed}.json"),
            &["--points", "60", "--lines", "60", "--sigma-px", "3", "--seed", &seed.to_string()],
        );
        let two = stdout_json(&run(&["solve", file.to_str().unwrap()]));
        let one = stdout_json(&run(&["solve", file.to_str().unwrap(), "--no-refine"]));
        assert_eq!(one["diagnostics"]["refined"], false);
        let e2 = &two["ground_truth_error"];
        let e1 = &one["ground_truth_error"];
        refined += f(&e2["rotation_fro"]).powi(2) + f(&e2["translation"]).powi(2);
        first += f(&e1["rotation_fro"]).powi(2) + f(&e1["translation"]).powi(2);
        assert_eq!(f(&e1["rotation_fro"]), f(&e2["first_step_rotation_fro"]));
    }
    assert!(refined <= first, "{refined} vs {first}");
}

#[test]
fn sigma2_override_and_out_file() {
    let dir = TempDir::new().unwrap();
    let file = generate(dir.path(), "scene.json", &["--points", "30", "--lines", "20", "--sigma-px", "1"]);
    let out_path = dir.path().join("result.json");
    let out = run(&[
        "solve",
        file.to_str().unwrap(),
        "--sigma2",
        "2.5e-6",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(f(&v["sigma2_hat"]), 2.5e-6);
    assert_eq!(v["mode"], "combined");
}

#[test]
fn underdetermined_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let file = generate(dir.path(), "small.json", &["--points", "5", "--lines", "4"]);
    let out = run(&["solve", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "underdetermined");
}

#[test]
fn malformed_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"intrinsics\": [[1, 0], [0, 1]]}").unwrap();
    let out = run(&["solve", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "parse");

    let missing = run(&["solve", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "{\"intrinsics\": [[800, 0, 320], [0, 800, 240], [0, 0, 1]]}").unwrap();
    let out = run(&["solve", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_4() {
    // ten copies of one point make the Gram matrix rank deficient
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("degenerate.json");
    let point = "{\"X\": [0.1, 0.2, 5.0], \"x_px\": [336.0, 272.0]}";
    let points = vec![point; 10].join(",");
    std::fs::write(
        &path,
        format!("{{\"intrinsics\": [[800, 0, 320], [0, 800, 240], [0, 0, 1]], \"points\": [{points}]}}"),
    )
    .unwrap();
    let out = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"], "numerical");
}

#[test]
fn crb_follows_variance_and_sample_size() {
    let dir = TempDir::new().unwrap();
    let file = generate(dir.path(), "scene.json", &["--points", "50", "--lines", "50", "--seed", "1"]);
    let path = file.to_str().unwrap();
    let one = stdout_json(&run(&["crb", path, "--sigma-px", "1"]));
    let two = stdout_json(&run(&["crb", path, "--sigma-px", "2"]));
    assert!((f(&two["trace"]) / f(&one["trace"]) - 4.0).abs() < 1e-9);
    let sum = f(&one["rotation_block_trace"]) + f(&one["translation_block_trace"]);
    assert!((sum - f(&one["trace"])).abs() < 1e-12 * sum);

    // inline pose equal to the ground truth gives the same bound
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    let gt = &v["ground_truth"];
    let mut nums: Vec<String> = Vec::new();
    for row in gt["rotation"].as_array().unwrap() {
        for x in row.as_array().unwrap() {
            nums.push(format!("{:e}", f(x)));
        }
    }
    for x in gt["translation"].as_array().unwrap() {
        nums.push(format!("{:e}", f(x)));
    }
    let inline = stdout_json(&run(&["crb", path, "--pose", &nums.join(","), "--sigma-px", "1"]));
    assert!((f(&inline["trace"]) - f(&one["trace"])).abs() < 1e-12 * f(&one["trace"]));

    let pose_file = dir.path().join("pose.json");
    std::fs::write(&pose_file, gt.to_string()).unwrap();
    let from_file = stdout_json(&run(&["crb", path, "--pose", pose_file.to_str().unwrap()]));
    assert_eq!(from_file, one);

    // four times the data gives about a quarter of the bound
    let mut small = 0.0;
    let mut large = 0.0;
    for seed in 0..5 {
        let s = seed.to_string();
        let a = generate(dir.path(), &format!("a{seed}.json"), &["--points", "40", "--lines", "40", "--seed", &s]);
        let b = generate(dir.path(), &format!("b{seed}.json"), &["--points", "160", "--lines", "160", "--seed", &s]);
        small += f(&stdout_json(&run(&["crb", a.to_str().unwrap()]))["trace"]);
        large += f(&stdout_json(&run(&["crb", b.to_str().unwrap()]))["trace"]);
    }
    let ratio = large / small;
    assert!((0.75 * 0.25..=1.25 * 0.25).contains(&ratio), "{ratio}");
}

#[test]
fn crb_output_schema_is_the_same_for_every_mode() {
    let dir = TempDir::new().unwrap();
    let mut keys = Vec::new();
    for (name, args) in [
        ("p.json", vec!["--points", "20"]),
        ("l.json", vec!["--points", "0", "--lines", "20"]),
        ("c.json", vec!["--points", "20", "--lines", "20"]),
    ] {
        let file = generate(dir.path(), name, &args);
        let v = stdout_json(&run(&["crb", file.to_str().unwrap()]));
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        keys.push(k);
    }
    assert_eq!(keys[0], keys[1]);
    assert_eq!(keys[1], keys[2]);
    assert!(keys[0].contains(&"trace".to_string()));
}

#[test]
fn crb_rejects_bad_pose_arguments() {
    let dir = TempDir::new().unwrap();
    let file = generate(dir.path(), "scene.json", &["--points", "20"]);
    let out = run(&["crb", file.to_str().unwrap(), "--pose", "1,2,3"]);
    assert_eq!(out.status.code(), Some(2));
    let not_rotation = "2,0,0,0,1,0,0,0,1,0,0,0";
    let out = run(&["crb", file.to_str().unwrap(), "--pose", not_rotation]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn crb_singular_projected_fisher_exits_4() {
    let dir = TempDir::new().unwrap();
    let file = generate(dir.path(), "one.json", &["--points", "1"]);
    let out = run(&["crb", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn bench_writes_one_row_per_grid_point_and_variant() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "bench",
        "--experiment",
        "variance",
        "--grid",
        "10,30,100",
        "--k",
        "50",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(out_dir.join("variance.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "size_n", "size_m", "sigma_px", "variant", "mse_r", "mse_t", "bias_r", "bias_t", "sigma2_mse",
            "crb_trace", "time_s", "failures"
        ]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let mut per_variant = std::collections::BTreeMap::new();
    for r in &rows {
        *per_variant.entry(r[3].to_string()).or_insert(0) += 1;
    }
    assert!(per_variant.values().all(|&c| c == 3), "{per_variant:?}");

    let json: Value = serde_json::from_str(&read(&out_dir.join("variance.json"))).unwrap();
    assert_eq!(json["config"]["trials"], 50);
    assert_eq!(json["config"]["grid"], serde_json::json!([10, 30, 100]));
    assert_eq!(json["rows"].as_array().unwrap().len(), rows.len());
}

#[test]
fn bench_is_reproducible_with_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let mut csvs = Vec::new();
    for run_id in 0..2 {
        let out_dir = dir.path().join(format!("run{run_id}"));
        let out = run(&[
            "bench",
            "--experiment",
            "bias",
            "--grid",
            "10,20",
            "--k",
            "10",
            "--seed",
            "42",
            "--omit-timing",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        csvs.push(read(&out_dir.join("bias.csv")));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn bench_default_mse_grid_and_bad_config() {
    // only the configuration echo is checked; --k 1 keeps the run short
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("mse");
    let out = run(&["bench", "--experiment", "mse", "--k", "1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let json: Value = serde_json::from_str(&read(&out_dir.join("mse.json"))).unwrap();
    assert_eq!(json["config"]["grid"], serde_json::json!([10, 30, 100, 300, 1000]));

    assert_eq!(run(&["bench", "--experiment", "speed"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--family", "planes", "--k", "1"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--grid", "0", "--k", "1"]).status.code(), Some(2));
}

#[test]
fn bench_runtime_reports_scaling() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("rt");
    let out = run(&[
        "bench",
        "--experiment",
        "runtime",
        "--grid",
        "50,100",
        "--k",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let json: Value = serde_json::from_str(&read(&out_dir.join("runtime.json"))).unwrap();
    let rt = &json["runtime"][0];
    assert_eq!(rt["family"], "points");
    assert_eq!(rt["report"]["rows"].as_array().unwrap().len(), 2);
    assert!(rt["report"]["slope"].is_number());
}
