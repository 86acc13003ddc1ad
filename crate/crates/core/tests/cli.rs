use std::process::{Command, Output};

use serde_json::Value;

fn jointage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointage"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error(out: &Output, code: i32) -> Value {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["code"], code);
    v
}

const PS: [&str; 6] = ["--discipline", "ps", "--lambdas", "0.5,0.5", "--mu", "1"];

#[test]
fn analyze_ps_correlation() {
    let mut args = vec!["analyze"];
    args.extend(PS);
    args.extend(["--corr", "1,2"]);
    let v = report(&jointage(&args));
    assert!((v["correlation"].as_f64().unwrap() + 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(v["mean"][0], 4.0);
    assert_eq!(v["cross_moment"], 14.0);
}

#[test]
fn analyze_mgf_at_zero() {
    let v = report(&jointage(&[
        "analyze",
        "--discipline",
        "np",
        "--lambdas",
        "0.3,0.9",
        "--mu",
        "1.5",
        "--s-bar",
        "0,0",
    ]));
    assert!((v["mgf"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["region"]["valid"], true);
}

#[test]
fn analyze_errors() {
    let v = error(&jointage(&["analyze", "--discipline", "ps", "--lambdas", "0.5,0.5"]), 2);
    assert_eq!(v["error"]["field"], "mu");
    let mut args = vec!["analyze"];
    args.extend(PS);
    args.extend(["--s-bar", "0.9"]);
    let v = error(&jointage(&args), 3);
    assert_eq!(v["error"]["kind"], "outside_region");
    let mut args = vec!["analyze"];
    args.extend(PS);
    args.extend(["--s", "0.1", "--s-bar", "0.1"]);
    error(&jointage(&args), 2);
}

#[test]
fn solve_matches_analyze() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["np", "ps", "sa"] {
        let file = dir.path().join(format!("{d}.json"));
        let file = file.to_str().unwrap();
        let build = jointage(&[
            "build-model",
            "--discipline",
            d,
            "--lambdas",
            "0.4,0.7,0.2",
            "--mu",
            "1.3",
            "--output",
            file,
        ]);
        assert_eq!(build.status.code(), Some(0));
        let a = report(&jointage(&[
            "analyze",
            "--discipline",
            d,
            "--lambdas",
            "0.4,0.7,0.2",
            "--mu",
            "1.3",
            "--corr",
            "1,3",
            "--k",
            "1,3",
            "--s",
            "0.05,-0.1",
        ]));
        let rel = |x: &Value, y: &Value| (x.as_f64().unwrap() - y.as_f64().unwrap()).abs() / y.as_f64().unwrap().abs();
        let mean = report(&jointage(&["solve", "--model", file, "--k", "1", "--m", "1"]));
        assert!(rel(&mean["mean"], &a["mean"][0]) < 1e-9);
        let sq = report(&jointage(&["solve", "--model", file, "--k", "3", "--m", "2"]));
        assert!(rel(&sq["second_moment"], &a["second_moment"][1]) < 1e-9);
        let cross = report(&jointage(&[
            "solve", "--model", file, "--k", "1,3", "--m", "1,1", "--corr", "1,3",
        ]));
        assert!(rel(&cross["cross_moment"], &a["cross_moment"]) < 1e-9);
        assert!(rel(&cross["correlation"], &a["correlation"]) < 1e-9);
        let mgf = report(&jointage(&["solve", "--model", file, "--k", "1,3", "--s", "0.05,-0.1"]));
        assert!(rel(&mgf["mgf"], &a["mgf"]) < 1e-9);
        assert!(mgf["max_eig_real"].as_f64().unwrap() < 0.0);
        assert_eq!(mgf["stationary_distribution"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn solve_errors() {
    let dir = tempfile::tempdir().unwrap();
    let disconnected = dir.path().join("disc.json");
    std::fs::write(
        &disconnected,
        r#"{"num_states": 4, "age_dim": 1, "transitions": [
            {"id":1,"source":0,"target":1,"rate":1.0,"reset":[null]},
            {"id":2,"source":1,"target":0,"rate":1.0,"reset":[0]},
            {"id":3,"source":2,"target":3,"rate":1.0,"reset":[null]},
            {"id":4,"source":3,"target":2,"rate":1.0,"reset":[0]}]}"#,
    )
    .unwrap();
    let v = error(
        &jointage(&[
            "solve",
            "--model",
            disconnected.to_str().unwrap(),
            "--k",
            "0",
            "--m",
            "1",
        ]),
        4,
    );
    assert!(v["error"]["message"].as_str().unwrap().contains("chain not ergodic"));

    let model = dir.path().join("ps.json");
    let mut args = vec!["build-model"];
    args.extend(PS);
    args.extend(["--output", model.to_str().unwrap()]);
    assert_eq!(jointage(&args).status.code(), Some(0));
    error(
        &jointage(&[
            "solve",
            "--model",
            model.to_str().unwrap(),
            "--k",
            "1,1",
            "--s",
            "0.1,0.1",
        ]),
        2,
    );
    error(
        &jointage(&["solve", "--model", model.to_str().unwrap(), "--k", "1", "--s", "0.9"]),
        3,
    );

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"num_states\": 2}").unwrap();
    error(&jointage(&["solve", "--model", broken.to_str().unwrap()]), 2);
}

#[test]
fn simulate_is_seeded_and_checked() {
    let mut args = vec!["simulate"];
    args.extend(PS);
    args.extend(["--corr", "1,2", "--events", "20000", "--reps", "4", "--seed", "42"]);
    let a = jointage(&args);
    let b = jointage(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["estimates"][0]["analytic"].as_f64().is_some());
    assert!(v["stderr"]["correlation"].as_f64().unwrap() > 0.0);

    let mut args = vec!["simulate"];
    args.extend(PS);
    args.extend(["--k", "1", "--s", "0.9", "--events", "1000000000000"]);
    error(&jointage(&args), 3);
}

#[test]
fn simulate_default_budget_passes() {
    let mut args = vec!["simulate"];
    args.extend(PS);
    args.extend(["--corr", "1,2", "--seed", "7"]);
    let v = report(&jointage(&args));
    assert_eq!(v["verdict"], "pass", "{v}");
}

#[test]
fn sweep_csv() {
    let out = jointage(&["sweep", "--var", "rho", "--min", "0.1", "--max", "5", "--steps", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,corr_np,corr_ps,corr_sa"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r[2] < 0.0 && r[3] < 0.0));
    let changes: Vec<usize> = (1..rows.len())
        .filter(|&i| rows[i - 1][1] < 0.0 && rows[i][1] >= 0.0)
        .collect();
    assert_eq!(changes.len(), 1);
    let i = changes[0];
    assert!(rows[i - 1][0] < 2.2143 && rows[i][0] > 2.2143);

    let fig7 = jointage(&[
        "sweep",
        "--var",
        "lambda_1",
        "--min",
        "0.1",
        "--max",
        "3",
        "--steps",
        "30",
        "--disciplines",
        "ps,sa",
    ]);
    let text = String::from_utf8(fig7.stdout).unwrap();
    assert!(text.starts_with("x,corr_ps,corr_sa\n"));
    for l in text.lines().skip(1) {
        let c: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(c[2].abs() <= c[1].abs());
    }

    let rm = jointage(&[
        "sweep",
        "--var",
        "rho_minus",
        "--min",
        "0.05",
        "--max",
        "0.95",
        "--steps",
        "10",
        "--n",
        "4",
    ]);
    assert_eq!(rm.status.code(), Some(0));

    error(
        &jointage(&["sweep", "--var", "rho", "--min", "1", "--max", "0.5", "--steps", "10"]),
        2,
    );
    error(
        &jointage(&["sweep", "--var", "rho", "--min", "0.1", "--max", "1", "--steps", "1"]),
        2,
    );
    error(
        &jointage(&[
            "sweep",
            "--var",
            "rho_minus",
            "--min",
            "0",
            "--max",
            "0.5",
            "--steps",
            "3",
        ]),
        2,
    );
}
