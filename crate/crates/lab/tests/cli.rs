use std::fs;
use std::path::{Path, PathBuf};

use impulse_lab::run_command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> (i32, String) {
    let mut err = Vec::new();
    let argv = std::iter::once("impulse-lab").chain(args.iter().copied());
    let code = run_command(argv, &mut err);
    (code, String::from_utf8(err).unwrap())
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn solve_tp2_writes_a_unit_first_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let (code, err) = run(&[
        "solve",
        "--config",
        &config("tp2.toml"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = read_csv(&out.join("layer0.csv"));
    assert_eq!(header, ["x0", "u"]);
    assert_eq!(rows.len(), 161);
    assert!(rows.iter().all(|r| r[1] == "1"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["file"].as_str().unwrap())
        .collect();
    for f in fs::read_dir(&out).unwrap() {
        let name = f.unwrap().file_name().into_string().unwrap();
        assert!(
            name == "manifest.json" || listed.contains(&name.as_str()),
            "{name} not listed"
        );
    }
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err) = run(&[
        "solve",
        "--config",
        "missing.cfg",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("missing.cfg"), "{err}");
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(run(&["frobnicate", "--config", "x"]).0, 64);
    assert_eq!(run(&["solve", "--config", "x", "--bogus"]).0, 64);
    assert_eq!(run(&["solve"]).0, 64);
}

#[test]
fn failed_assumption_check_exits_2_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg =
        impulse_lab::Config::parse(&fs::read_to_string(config("tp1.toml")).unwrap()).unwrap();
    cfg.problem = impulse_lab::config::ProblemConfig::Inline(impulse_core::ProblemSpec {
        cost_floor: 0.2,
        ..impulse_core::ProblemSpec::tp1()
    });
    let cfg = cfg.to_toml();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, cfg).unwrap();
    let out = tmp.path().join("o");
    let (code, err) = run(&[
        "solve",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("cost-floor"), "{err}");
    assert!(out.join("validation.json").exists());
}

#[test]
fn verify_tp1_passes_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let (code, err) = run(&[
        "verify",
        "--config",
        &config("tp1.toml"),
        "--lambda",
        "0.25",
        "--rho",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(out.join("verdicts.jsonl")).unwrap();
    let verdicts: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(verdicts.len(), 9);
    assert!(verdicts.iter().all(|v| v["pass"] == true));
    assert!(verdicts
        .iter()
        .any(|v| v["check"] == "strict-supersolution(lambda=0.25)"));
}

#[test]
fn exported_layers_reproduce_the_act_region() {
    // Recompute u - Mu from values.csv with an independent lattice scan.
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(
        run(&[
            "solve",
            "--config",
            &config("tp1.toml"),
            "--out",
            out.to_str().unwrap()
        ])
        .0,
        0
    );
    let (header, rows) = read_csv(&out.join("values.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (ck, cu, cact) = (col("k"), col("u"), col("act"));
    let last: Vec<&Vec<String>> = rows.iter().filter(|r| r[ck] == "80").collect();
    let u: Vec<f64> = last.iter().map(|r| r[cu].parse().unwrap()).collect();
    let h = 8.0 / 160.0;
    let interp = |y: f64| {
        let s = ((y + 4.0) / h).clamp(0.0, 160.0);
        let i = (s.floor() as usize).min(159);
        u[i] + (s - i as f64) * (u[i + 1] - u[i])
    };
    let dz = 76.0 / 320.0;
    let mut acts = 0;
    for (i, r) in last.iter().enumerate() {
        let x = -4.0 + i as f64 * h;
        let mu = (0..321)
            .map(|j| -38.0 + j as f64 * dz)
            .map(|z| interp(x + z) - 0.1 - 0.05 * z.abs())
            .fold(f64::NEG_INFINITY, f64::max);
        let act = r[cact] == "1";
        acts += act as usize;
        assert_eq!(act, u[i] <= mu + 1e-9, "node {i}: u {} mu {mu}", u[i]);
        if act {
            assert!(x.cos() <= mu + 1e-9);
        }
    }
    assert!(acts > 0);
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_byte_identical_across_runs_and_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("tp1.toml");
    let mut runs = Vec::new();
    for (tag, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = tmp.path().join(tag);
        let (code, err) = run(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert_eq!(code, 0, "{err}");
        runs.push(outputs(&out));
    }
    assert!(runs[0].len() >= 3);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("tp1.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).0,
        0
    );
    assert_eq!(
        run(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            b.to_str().unwrap(),
            "--seed",
            "8"
        ])
        .0,
        0
    );
    assert_ne!(
        fs::read(a.join("gain.csv")).unwrap(),
        fs::read(b.join("gain.csv")).unwrap()
    );
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 8);
}
