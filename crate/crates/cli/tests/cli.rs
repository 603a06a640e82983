use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn centipede(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_centipede"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    let o = centipede(dir, &["--seed", seed, "--out-dir", "sim", "simulate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulated_data_has_the_standard_design_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "4");
    let csv = fs::read_to_string(tmp.path().join("sim/data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 282);
    let o = centipede(
        tmp.path(),
        &["--out-dir", "v", "validate", "--data", "sim/data.csv"],
    );
    assert_eq!(code(&o), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("v/validation.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], true);
    for name in ["truth.json", "design.json", "manifest-simulate.json"] {
        assert!(tmp.path().join("sim").join(name).exists(), "{name}");
    }
}

#[test]
fn broken_design_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "4");
    let csv = fs::read_to_string(tmp.path().join("sim/data.csv")).unwrap();
    let dropped: Vec<&str> = csv
        .lines()
        .enumerate()
        .filter(|(i, _)| *i != 5)
        .map(|(_, l)| l)
        .collect();
    fs::write(tmp.path().join("bad.csv"), dropped.join("\n") + "\n").unwrap();
    let o = centipede(
        tmp.path(),
        &["--out-dir", "v", "validate", "--data", "bad.csv"],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "1");
    for args in [
        &["fit", "--data", "sim/data.csv", "--model", "nonsense"][..],
        &["fit", "--data", "sim/data.csv", "--model", "random-effects"],
        &["randtest", "--data", "sim/data.csv", "--stat", "f-sessions"],
        &["mcmc", "--data", "sim/data.csv", "--model", "probit"],
        &[
            "mcmc",
            "--data",
            "sim/data.csv",
            "--model",
            "hetero",
            "--iters",
            "100",
            "--burn",
            "200",
        ],
        &["frobnicate"],
    ] {
        let o = centipede(tmp.path(), args);
        assert_eq!(
            code(&o),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn missing_data_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = centipede(
        tmp.path(),
        &["fit", "--data", "absent.csv", "--model", "hetero"],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
}

#[test]
fn fit_all_ranks_hetero_first_on_hetero_data() {
    let tmp = tempfile::tempdir().unwrap();
    let mut best = Vec::new();
    for seed in ["1", "2", "3", "4", "5"] {
        simulate(tmp.path(), seed);
        let o = centipede(
            tmp.path(),
            &["--out-dir", "fit", "fit", "--data", "sim/data.csv", "--all"],
        );
        assert_eq!(code(&o), 0);
        let csv = fs::read_to_string(tmp.path().join("fit/comparison.csv")).unwrap();
        best.push(
            csv.lines()
                .nth(1)
                .unwrap()
                .split(',')
                .next()
                .unwrap()
                .to_string(),
        );
    }
    let hetero = best.iter().filter(|m| *m == "hetero").count();
    assert!(hetero >= 4, "{best:?}");
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "7");
    let runs: [&[&str]; 3] = [
        &[
            "--out-dir",
            "a",
            "fit",
            "--data",
            "sim/data.csv",
            "--all",
            "--curves",
            "10",
        ],
        &[
            "--seed",
            "5",
            "--out-dir",
            "a",
            "mcmc",
            "--data",
            "sim/data.csv",
            "--model",
            "hetero",
            "--iters",
            "3000",
            "--burn",
            "1000",
            "--thin",
            "4",
        ],
        &[
            "--seed",
            "9",
            "--out-dir",
            "a",
            "randtest",
            "--data",
            "sim/data.csv",
            "--stat",
            "slope",
            "--nperm",
            "99",
            "--corrected",
        ],
    ];
    for args in runs {
        let o = centipede(tmp.path(), args);
        assert_eq!(
            code(&o),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for cmd in ["fit", "mcmc", "randtest"] {
        let manifest = format!("a/manifest-{cmd}.json");
        let o = centipede(
            tmp.path(),
            &["--out-dir", &format!("b-{cmd}"), "replay", &manifest],
        );
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stdout));
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(tmp.path().join(&manifest)).unwrap()).unwrap();
        let outputs = m["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty());
        for f in outputs {
            let name = f["path"].as_str().unwrap();
            let a = fs::read(tmp.path().join("a").join(name)).unwrap();
            let b = fs::read(tmp.path().join(format!("b-{cmd}")).join(name)).unwrap();
            assert!(a == b, "{name} differs");
        }
    }
}

#[test]
fn manifest_records_inputs_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "2");
    let o = centipede(
        tmp.path(),
        &[
            "--seed",
            "17",
            "--out-dir",
            "r",
            "randtest",
            "--data",
            "sim/data.csv",
            "--stat",
            "f-players-a",
            "--nperm",
            "20",
        ],
    );
    assert_eq!(code(&o), 0);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("r/manifest-randtest.json")).unwrap())
            .unwrap();
    assert_eq!(m["seed"], 17);
    assert_eq!(m["command"], "randtest");
    assert_eq!(m["inputs"][0]["path"], "sim/data.csv");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let r: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("r/randtest-f-players-a.json")).unwrap())
            .unwrap();
    assert_eq!(r["n"], 20);
    assert!(r.get("p_value_corrected").is_none());
}

#[test]
fn ppc_reads_mcmc_draws() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "3");
    let o = centipede(
        tmp.path(),
        &[
            "--out-dir",
            "m",
            "mcmc",
            "--data",
            "sim/data.csv",
            "--model",
            "hetero",
            "--iters",
            "2000",
            "--burn",
            "500",
            "--thin",
            "10",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = centipede(
        tmp.path(),
        &[
            "--out-dir",
            "p",
            "ppc",
            "--data",
            "sim/data.csv",
            "--samples",
            "m/samples.csv",
            "--stat",
            "slope",
            "f-sessions",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for stat in ["slope", "f-sessions"] {
        let r: serde_json::Value = serde_json::from_slice(
            &fs::read(tmp.path().join(format!("p/ppc-{stat}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(r["n"], 150);
        let p = r["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert!(!tmp.path().join("p/ppc-f-players-a.json").exists());
}
