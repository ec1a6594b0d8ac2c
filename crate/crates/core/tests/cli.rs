use std::process::Command;

use multising::cli::run;
use serde_json::Value;

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["multising"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn csv_records(text: &str) -> Vec<Vec<String>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn scgf_at_zero_coupling_is_log_cosh() {
    let (code, out, _) = call(&["scgf", "--f", "s[1]*s[2]", "--beta", "0", "--J", "1", "--t", "-2:2:0.5"]);
    assert_eq!(code, 0);
    let rows = csv_records(&out);
    assert_eq!(rows.len(), 9);
    for r in rows {
        let t: f64 = r[0].parse().unwrap();
        let f: f64 = r[1].parse().unwrap();
        let fp: f64 = r[2].parse().unwrap();
        assert!((f - t.cosh().ln()).abs() < 1e-9, "t = {t}");
        assert!((fp - t.tanh()).abs() < 1e-7, "t = {t}");
    }
}

#[test]
fn free_energy_route_agrees_at_zero_field() {
    let args = ["--f", "s[1]*s[2]", "--beta", "1", "--J", "0.7", "--t", "-1,0.3,1.5", "--format", "json"];
    let series: Value = serde_json::from_str(&call(&[&["scgf"][..], &args].concat()).1).unwrap();
    let fe: Value =
        serde_json::from_str(&call(&[&["scgf", "--route", "free-energy"][..], &args].concat()).1).unwrap();
    for (a, b) in series["F"].as_array().unwrap().iter().zip(fe["F"].as_array().unwrap()) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn entropy_all_modes() {
    let (code, out, _) = call(&["entropy", "--beta", "1", "--J", "1", "--mode", "all"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    for key in ["series", "formula", "closed_h0"] {
        assert!((v[key].as_f64().unwrap() - 0.5292405178).abs() < 1e-9, "{key}");
    }
    let (_, out, _) = call(&["entropy", "--beta", "1", "--J", "1", "--h", "0.5"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["closed_h0"].is_null());
    assert!((v["series"].as_f64().unwrap() - v["formula"].as_f64().unwrap()).abs() < 1e-10);
}

#[test]
fn kie_weights_for_two_primes() {
    let (code, out, _) = call(&["kie-weights", "--primes", "2,3"]);
    assert_eq!(code, 0);
    let rows = csv_records(&out);
    assert_eq!(rows[0][..2], ["1", "1"]);
    assert!((rows[0][2].parse::<f64>().unwrap() - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(rows[1][1], "2");
    assert_eq!(rows[2][1], "3");
}

#[test]
fn invariance_report() {
    let (code, out, _) = call(&["invariance", "--indices", "1,2", "--m", "3", "--beta", "1", "--J", "1"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["invariant"], Value::Bool(true));
    let (_, out, _) = call(&["invariance", "--indices", "1,2", "--m", "2", "--beta", "1", "--J", "1", "--h", "0.5"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["invariant"], Value::Bool(false));
}

fn error_of(stderr: &str) -> Value {
    let v: Value = serde_json::from_str(stderr.trim()).unwrap();
    v["error"].clone()
}

#[test]
fn parse_errors_are_structured() {
    let (code, out, err) = call(&["scgf", "--f", "s[0]*s[1]", "--t", "0", "--beta", "1", "--J", "1"]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    let e = error_of(&err);
    assert_eq!(e["exit_code"], 2);
    assert!(e["kind"] == "parse" || e["kind"] == "invalid_input");

    let (code, _, err) = call(&["scgf", "--f", "s[1]*", "--t", "0", "--beta", "1", "--J", "1"]);
    assert_eq!(code, 2);
    assert_eq!(error_of(&err)["kind"], "parse");
}

#[test]
fn usage_errors_exit_two() {
    let (code, _, err) = call(&["no-such-command"]);
    assert_eq!(code, 2);
    assert_eq!(error_of(&err)["kind"], "usage");
    let (code, _, err) = call(&["entropy", "--beta", "1"]);
    assert_eq!(code, 2);
    assert!(error_of(&err)["message"].as_str().unwrap().contains("--J"));
    let (code, _, err) = call(&["entropy", "--beta", "nan"]);
    assert_eq!(code, 2);
    assert_eq!(error_of(&err)["exit_code"], 2);
    let (code, out, _) = call(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("entropy"));
}

#[test]
fn closed_form_with_field_is_a_precondition_failure() {
    let (code, _, err) = call(&["entropy", "--beta", "1", "--J", "1", "--h", "0.5", "--mode", "closed-h0"]);
    assert_eq!(code, 3);
    assert_eq!(error_of(&err)["kind"], "precondition");
}

#[test]
fn oversized_region_is_infeasible() {
    let (code, _, err) = call(&["kie-pressure", "--f", "s[1]*s[1073741824]", "--primes", "2", "--t", "0.5", "--beta", "1", "--J", "1", "--tol", "1e-8"]);
    assert_eq!(code, 4, "{err}");
    assert_eq!(error_of(&err)["kind"], "infeasible");
}

#[test]
fn verify_runs_selected_criteria() {
    let (code, out, _) = call(&["verify", "--criteria", "5,6"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let (code, _, _) = call(&["verify", "--criteria", "11"]);
    assert_eq!(code, 2);
}

#[test]
fn config_file_with_flag_precedence_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "# model\n[model]\nbeta = 1\nJ = 1\nh = 0.5\nmode = series\n").unwrap();
    let out = dir.path().join("entropy.json");
    let (code, _, err) =
        call(&["entropy", "--config", cfg.to_str().unwrap(), "--h", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((v["series"].as_f64().unwrap() - 0.5292405178).abs() < 1e-9);
    assert_eq!(v.as_object().unwrap().len(), 1);

    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("entropy.json.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "entropy");
    assert_eq!(meta["config"]["h"], 0.0);
    assert_eq!(meta["config"]["beta"], 1.0);

    std::fs::write(&cfg, "beta = 1\ntemperature = 3\n").unwrap();
    let (code, _, err) = call(&["entropy", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(error_of(&err)["message"].as_str().unwrap().contains("temperature"));
}

#[test]
fn binary_samples_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    let args = ["sample", "--n", "64", "--count", "5", "--seed", "9", "--beta", "1", "--J", "0.8", "--h", "0.1"];
    let (code, _, _) = call(&[&args[..], &["--format", "bin", "--out", path.to_str().unwrap()]].concat());
    assert_eq!(code, 0);
    let batch = multising::gibbs::SampleBatch::read_binary(&mut std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!((batch.n, batch.seed, batch.configurations.len()), (64, 9, 5));
    let (_, csv_out, _) = call(&args);
    let mut from_bin = Vec::new();
    batch.write_csv(&mut from_bin).unwrap();
    assert_eq!(String::from_utf8(from_bin).unwrap(), csv_out);
}

fn binary_output(threads: &str, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_multising"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn output_is_identical_across_runs_and_thread_counts() {
    let commands: [&[&str]; 3] = [
        &["sample", "--n", "200", "--count", "40", "--seed", "42", "--beta", "1", "--J", "1", "--h", "0.3"],
        &["smb", "--n", "128", "--count", "200", "--seed", "7", "--beta", "1", "--J", "1", "--format", "csv"],
        &["scgf", "--f", "s[1]*s[2] + 0.5*s[1]*s[4]", "--beta", "1", "--J", "0.5", "--t", "-1:1:0.25"],
    ];
    for args in commands {
        let one = binary_output("1", args);
        assert!(!one.is_empty());
        assert_eq!(one, binary_output("1", args));
        assert_eq!(one, binary_output("4", args));
    }
}
