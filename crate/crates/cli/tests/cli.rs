use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> String {
    root().join("data").join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floquet"))
        .args(args)
        .output()
        .expect("spawn floquet")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema(name: &str) -> JSONSchema {
    let path = root().join("schemas").join(format!("{name}.schema.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let value: Value = serde_json::from_str(&text).unwrap();
    JSONSchema::compile(&value).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_valid(name: &str, instance: &Value) {
    let compiled = schema(name);
    let msgs: Vec<String> = match compiled.validate(instance) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("{name} schema rejects output: {msgs:?}");
}

fn re(v: &Value) -> f64 {
    v["re"].as_f64().unwrap()
}

fn im(v: &Value) -> f64 {
    v["im"].as_f64().unwrap()
}

fn error_of(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_valid("error", &err);
    assert_eq!(err["error"]["exit_code"], code);
    err
}

#[test]
fn monodromy_of_free_operator_at_zero_is_a_shear() {
    let v = stdout_json(&run(&["monodromy", "--op", &data("free_hill.json"), "--lambda", "0,0"]));
    assert_valid("monodromy", &v);
    let expected = [[1.0, 1.0], [0.0, 1.0]];
    for (r, row) in expected.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            let z = &v["monodromy"][r][c];
            assert!((re(z) - want).abs() < 1e-8 && im(z).abs() < 1e-8, "U[{r}][{c}] = {z}");
        }
    }
    let entries = v["multiplicators"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert!((re(&entries[0]["rho"]) - 1.0).abs() < 1e-8);
    assert_eq!(entries[0]["algebraic_mult"], 2);
    assert_eq!(entries[0]["block_orders"], serde_json::json!([2]));
    assert_eq!(v["l"], 2);
}

#[test]
fn bands_of_free_operator() {
    let v = stdout_json(&run(&[
        "bands",
        "--op",
        &data("free_hill.json"),
        "--min",
        "-1",
        "--max",
        "40",
        "--res",
        "512",
    ]));
    assert_valid("bands", &v);
    let bands = v["bands"].as_array().unwrap();
    assert_eq!(bands.len(), 1);
    assert!(bands[0]["lo"].as_f64().unwrap().abs() < 1e-6);
    assert!((bands[0]["hi"].as_f64().unwrap() - 40.0).abs() < 1e-9);
    let pi2 = std::f64::consts::PI.powi(2);
    let touchings: Vec<f64> = v["edges"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "touching")
        .map(|e| e["lambda"].as_f64().unwrap())
        .collect();
    assert_eq!(touchings.len(), 2, "{touchings:?}");
    assert!((touchings[0] - pi2).abs() < 1e-6);
    assert!((touchings[1] - 4.0 * pi2).abs() < 1e-6);
}

#[test]
fn certify_band_interior_point() {
    let v = stdout_json(&run(&[
        "certify",
        "--op",
        &data("cos_hill.json"),
        "--pert",
        &data("decay3.json"),
        "--lambda",
        "1.0,0",
    ]));
    assert_valid("certificate", &v);
    assert_eq!(v["verdict"]["kind"], "certified_no_eigenvalue");
    assert_eq!(v["l"], 1);
    assert_eq!(v["multiplicator_precondition"], true);
}

#[test]
fn certify_reports_slow_decay_as_inconclusive_or_violated() {
    let v = stdout_json(&run(&[
        "certify",
        "--op",
        &data("cos_hill.json"),
        "--pert",
        &data("wigner_von_neumann.json"),
        "--lambda",
        "1.0,0",
    ]));
    assert_valid("certificate", &v);
    assert_ne!(v["verdict"]["kind"], "certified_no_eigenvalue");
}

#[test]
fn classify_matches_monodromy() {
    let c = stdout_json(&run(&["classify", "--op", &data("cos_hill.json"), "--lambda", "1"]));
    assert_valid("classify", &c);
    let m = stdout_json(&run(&["monodromy", "--op", &data("cos_hill.json"), "--lambda", "1,0"]));
    assert_eq!(c["l"], m["l"]);
    assert_eq!(c["hill"]["class"], "interior");
    assert_eq!(c["hill"]["l"], c["l"]);
}

#[test]
fn classify_non_hill_operator_has_no_hill_point() {
    let c = stdout_json(&run(&["classify", "--op", &data("third_order.json"), "--lambda", "1,0"]));
    assert_valid("classify", &c);
    assert!(c["hill"].is_null());
}

#[test]
fn resolve_meets_residual_contract() {
    let v = stdout_json(&run(&[
        "resolve",
        "--op",
        &data("free_hill.json"),
        "--lambda",
        "2.4674011002723395,0",
        "--rhs-bump",
        "1,3",
    ]));
    assert_valid("resolve", &v);
    assert!(v["residual"].as_f64().unwrap() <= 1e-4);
    assert_eq!(v["step"].as_f64().unwrap(), 1.0 / 256.0);
}

#[test]
fn resolve_accepts_truncated_expression() {
    let v = stdout_json(&run(&[
        "resolve",
        "--op",
        &data("cos_hill.json"),
        "--lambda",
        "1,0",
        "--rhs",
        "exp(-t)",
        "--support",
        "2.999",
    ]));
    assert_valid("resolve", &v);
    assert!(v["residual"].as_f64().unwrap() <= v["threshold"].as_f64().unwrap());
}

#[test]
fn resolve_csv_profile() {
    let out = run(&[
        "resolve",
        "--op",
        &data("free_hill.json"),
        "--lambda",
        "2.4674011002723395,0",
        "--rhs-bump",
        "1,3",
        "--length",
        "4",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,re_u,im_u,residual"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 256 + 1);
    assert!(rows.iter().all(|r| r.len() == 4));
    // The solution vanishes beyond the support.
    let last = rows.last().unwrap();
    assert_eq!(last[1].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn rcheck_respects_bound() {
    let v = stdout_json(&run(&["rcheck", "--lambda", "0.5,2", "--tau", "1.5", "--trials", "20"]));
    assert_valid("rcheck", &v);
    assert_eq!(v["pass"], true);
    assert_eq!(v["violations"], 0);
    let shifted = stdout_json(&run(&["rcheck", "--lambda", "0.5,2", "--tau", "1.5", "--trials", "20", "--shifted"]));
    assert_valid("rcheck", &shifted);
    assert_eq!(shifted["bound"].as_f64().unwrap(), 2.0);
}

#[test]
fn hunt_small_domains() {
    let args = [
        "hunt",
        "--op",
        &data("free_hill.json"),
        "--pert",
        &data("decay2.json"),
        "--window",
        "-3,-0.01,-0.5,0.5",
        "--lengths",
        "8,12,16",
        "--step",
        "0.03125",
    ];
    let v = stdout_json(&run(&args));
    assert_valid("hunt", &v);
    assert_eq!(v["domain_lengths"], serde_json::json!([8.0, 12.0, 16.0]));
    assert!(v["label"].as_str().unwrap().contains("not a verification"));
    assert!(v["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["classification"] != "genuine"));
}

#[test]
fn hunt_csv_has_profile_columns() {
    let out = run(&[
        "hunt",
        "--op",
        &data("free_hill.json"),
        "--pert",
        &data("decay2.json"),
        "--window",
        "-3,-0.01,-0.5,0.5",
        "--lengths",
        "8,12,16",
        "--step",
        "0.03125",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("candidate,length,t,re_v,im_v"));
}

#[test]
fn monodromy_csv_lists_entries() {
    let out = run(&["monodromy", "--op", &data("free_hill.json"), "--lambda", "0,0", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,col,re,im");
    assert_eq!(lines.len(), 5);
    assert!(lines[2].starts_with("0,1,1,"));
}

#[test]
fn bands_csv_is_the_discriminant_curve() {
    let out = run(&[
        "bands",
        "--op",
        &data("free_hill.json"),
        "--min",
        "-1",
        "--max",
        "40",
        "--res",
        "64",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda,discriminant"));
    for line in lines {
        let (l, d) = line.split_once(',').unwrap();
        let (l, d): (f64, f64) = (l.parse().unwrap(), d.parse().unwrap());
        let expected = if l >= 0.0 {
            2.0 * l.sqrt().cos()
        } else {
            2.0 * (-l).sqrt().cosh()
        };
        assert!((d - expected).abs() < 1e-8, "Δ({l}) = {d}, expected {expected}");
    }
}

#[test]
fn out_flag_writes_file() {
    let dir = std::env::temp_dir().join(format!("floquet-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("mono.json");
    let out = run(&[
        "monodromy",
        "--op",
        &data("free_hill.json"),
        "--lambda",
        "0,0",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let written = std::fs::read(&path).unwrap();
    let direct = run(&["monodromy", "--op", &data("free_hill.json"), "--lambda", "0,0"]);
    assert_eq!(written, direct.stdout);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identical_invocations_are_byte_identical() {
    let cases: Vec<Vec<String>> = vec![
        vec!["rcheck", "--lambda", "1,0.5", "--tau", "1", "--trials", "10"],
        vec!["bands", "--op", &data("cos_hill.json"), "--min", "-1", "--max", "12", "--res", "128"],
        vec!["certify", "--op", &data("cos_hill.json"), "--pert", &data("decay3.json"), "--lambda", "1,0"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = run(&args);
        let b = run(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn seed_controls_sampled_checks() {
    let base = ["rcheck", "--lambda", "1,0.5", "--tau", "1", "--trials", "10"];
    let a = stdout_json(&run(&[&base[..], &["--seed", "1"]].concat()));
    let b = stdout_json(&run(&[&base[..], &["--seed", "2"]].concat()));
    assert_ne!(a["max_ratio"], b["max_ratio"]);
}

#[test]
fn threads_flag_does_not_change_results() {
    let base = ["bands", "--op", &data("cos_hill.json"), "--min", "-1", "--max", "12", "--res", "128"];
    let one = run(&[&base[..], &["--threads", "1"]].concat());
    let two = run(&[&base[..], &["--threads", "2"]].concat());
    assert!(one.status.success());
    assert_eq!(one.stdout, two.stdout);
}

#[test]
fn floats_carry_at_most_twelve_significant_digits() {
    let out = run(&["monodromy", "--op", &data("cos_hill.json"), "--lambda", "1,0.25"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for token in text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')) {
        let mantissa = token.split('e').next().unwrap();
        let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
        let significant = digits.trim_start_matches('0');
        assert!(significant.len() <= 12, "{token}");
    }
}

#[test]
fn missing_file_is_a_validation_error() {
    let err = error_of(&run(&["monodromy", "--op", "no/such/file.json", "--lambda", "0,0"]), 1);
    assert_eq!(err["error"]["kind"], "invalid_input");
}

#[test]
fn malformed_lambda_is_a_validation_error() {
    error_of(&run(&["monodromy", "--op", &data("free_hill.json"), "--lambda", "x"]), 1);
}

#[test]
fn unknown_subcommand_is_a_validation_error() {
    error_of(&run(&["frobnicate"]), 1);
}

#[test]
fn bad_expression_is_a_validation_error() {
    let dir = std::env::temp_dir().join(format!("floquet-cli-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"order": 2, "period": 1, "coefficients": ["cos(", "0", "1"]}"#).unwrap();
    error_of(&run(&["monodromy", "--op", path.to_str().unwrap(), "--lambda", "0,0"]), 1);
    std::fs::write(&path, r#"{"order": 2, "period": 1, "coefficients": ["0", "1"]}"#).unwrap();
    error_of(&run(&["monodromy", "--op", path.to_str().unwrap(), "--lambda", "0,0"]), 1);
    std::fs::write(&path, r#"{"order": 2, "period": 1, "coefficients": ["0", "0", "1"], "extra": 3}"#).unwrap();
    error_of(&run(&["monodromy", "--op", path.to_str().unwrap(), "--lambda", "0,0"]), 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn csv_for_structured_verdicts_is_rejected() {
    error_of(
        &run(&[
            "certify",
            "--op",
            &data("cos_hill.json"),
            "--pert",
            &data("decay3.json"),
            "--lambda",
            "1,0",
            "--format",
            "csv",
        ]),
        1,
    );
}

#[test]
fn resolvent_below_spectrum_is_a_numerical_failure() {
    let err = error_of(
        &run(&["resolve", "--op", &data("free_hill.json"), "--lambda", "-1,0", "--rhs-bump", "1,3"]),
        2,
    );
    assert_eq!(err["error"]["kind"], "precondition_violated");
}

#[test]
fn oversized_hunt_is_a_numerical_failure() {
    let err = error_of(
        &run(&[
            "hunt",
            "--op",
            &data("free_hill.json"),
            "--pert",
            &data("decay2.json"),
            "--window",
            "-1,0,-1,1",
            "--lengths",
            "40,48,56",
            "--step",
            "0.015625",
            "--cap",
            "1000",
        ]),
        2,
    );
    assert_eq!(err["error"]["kind"], "memory_budget_exceeded");
}

#[test]
fn help_and_version_succeed() {
    let help = run(&["--help"]);
    assert!(help.status.success());
    let text = String::from_utf8(help.stdout).unwrap();
    for cmd in ["monodromy", "bands", "classify", "resolve", "certify", "hunt", "rcheck"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
    assert!(run(&["--version"]).status.success());
}

#[test]
fn shipped_data_files_match_input_schemas() {
    let operator = schema("operator");
    let perturbation = schema("perturbation");
    for entry in std::fs::read_dir(root().join("data")).unwrap() {
        let path = entry.unwrap().path();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let compiled = if v.get("coefficients").is_some() {
            &operator
        } else {
            &perturbation
        };
        assert!(compiled.is_valid(&v), "{} fails its schema", path.display());
    }
}

#[test]
fn input_schemas_reject_malformed_files() {
    let operator = schema("operator");
    assert!(!operator.is_valid(&serde_json::json!({"order": 2, "period": 1})));
    assert!(!operator.is_valid(&serde_json::json!({"order": 2, "period": -1, "coefficients": ["0", "0", "1"]})));
    let perturbation = schema("perturbation");
    assert!(!perturbation.is_valid(&serde_json::json!({"order": 2, "b": ["0"], "k": ["0"], "delta": 1, "domain": "circle"})));
}
