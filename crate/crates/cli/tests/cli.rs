use std::path::{Path, PathBuf};
use std::process::Command;

use bnnsim::{modelfile, uvgg};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir()
        .join(format!("bnnsim-cli-{}", std::process::id()))
        .join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// Writes a config next to the output directory, pointing at the bundled toy data.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let data = root().join("data");
    let text = format!(
        "network = {:?}\ndataset = {:?}\n{extra}",
        data.join("toy.xnemodel"),
        data.join("toy-test.toml")
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn bnnsim(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bnnsim"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn run_ok(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        cmd,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(extra);
    let (code, _, err) = bnnsim(&args);
    assert_eq!(code, 0, "{cmd}: {err}");
}

/// CSV rows after the provenance comment and header, as column-name maps.
fn table(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(
        text.starts_with("# bnnsim "),
        "missing provenance in {}",
        path.display()
    );
    assert!(text.lines().next().unwrap().contains("config_sha256="));
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn summary(out: &Path) -> serde_json::Value {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    v["summary"].clone()
}

#[test]
fn infer_without_faults_matches_oracle() {
    let d = tmp("infer0");
    let cfg = config(&d, "trials = 2\n");
    run_ok("infer", &cfg, &d.join("out"), &[]);
    let s = summary(&d.join("out"));
    assert_eq!(s["mean_accuracy"], s["oracle_accuracy"]);
    let rows = table(&d.join("out/predictions.csv"));
    assert_eq!(rows.len(), 2000);
    assert!(rows
        .iter()
        .all(|r| r["prediction"] == r["oracle_prediction"]));
}

#[test]
fn infer_at_half_ber_is_chance() {
    let d = tmp("infer-half");
    let cfg = config(&d, "seed = 3\n[fault]\nber = 0.5\n");
    run_ok("infer", &cfg, &d.join("out"), &[]);
    let acc = summary(&d.join("out"))["mean_accuracy"].as_f64().unwrap();
    assert!((acc - 0.1).abs() <= 0.05, "{acc}");
}

#[test]
fn seed_flag_overrides_config() {
    let d = tmp("seed");
    let cfg = config(&d, "seed = 1\nsamples = 200\n[fault]\nber = 0.05\n");
    run_ok("infer", &cfg, &d.join("a"), &[]);
    run_ok("infer", &cfg, &d.join("b"), &["--seed", "2"]);
    run_ok("infer", &cfg, &d.join("c"), &["--seed", "1"]);
    let read = |n: &str| std::fs::read(d.join(n).join("predictions.csv")).unwrap();
    assert_ne!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn sweep_ber_zero_row_has_no_spread() {
    let d = tmp("sweep-ber");
    let cfg = config(
        &d,
        "trials = 4\nsamples = 300\n[sweep]\nber = [0.0, 1e-2]\n",
    );
    run_ok("sweep-ber", &cfg, &d.join("out"), &[]);
    let rows = table(&d.join("out/sweep_ber.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["std_acc"], "0");
    assert_eq!(rows[0]["trials"], "4");
}

#[test]
fn sweep_voltage_rows_sorted_with_rising_power() {
    let d = tmp("sweep-v");
    let cfg = config(
        &d,
        "trials = 2\nsamples = 200\n[sweep]\nvoltages = [0.8, 0.5, 0.62, 0.42]\n",
    );
    run_ok("sweep-voltage", &cfg, &d.join("out"), &[]);
    let rows = table(&d.join("out/sweep_voltage.csv"));
    let v: Vec<f64> = rows.iter().map(|r| r["v"].parse().unwrap()).collect();
    assert_eq!(v, vec![0.42, 0.5, 0.62, 0.8]);
    let p: Vec<f64> = rows
        .iter()
        .map(|r| r["power_uw"].parse().unwrap())
        .collect();
    assert!(p.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(rows[1]["ber"], "6.93e-6");
    assert_eq!(rows[2]["ber"].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn selftest_rows() {
    let d = tmp("selftest");
    let cfg = config(&d, "[selftest]\nvoltages = [0.42, 0.70]\niterations = 2\n");
    run_ok("selftest", &cfg, &d.join("out"), &[]);
    let rows = table(&d.join("out/selftest.csv"));
    let est: f64 = rows[0]["estimate"].parse().unwrap();
    assert!((est / 1.723e-3 - 1.0).abs() <= 0.05, "{est}");
    assert!(rows[1]["estimate"].starts_with("< "));
    assert_eq!(rows[1]["bit_errors"], "0");
}

#[test]
fn selftest_long_campaign_bit_count() {
    let d = tmp("selftest-long");
    let cfg = config(&d, "[selftest]\nber = [0.0]\niterations = 1800\n");
    run_ok("selftest", &cfg, &d.join("out"), &[]);
    let rows = table(&d.join("out/selftest.csv"));
    assert_eq!(rows[0]["bits_observed"], "6606028800");
}

#[test]
fn power_report_tables() {
    let d = tmp("power");
    let cfg = config(&d, "[power]\nvoltages = [0.44]\n");
    run_ok("power-report", &cfg, &d.join("out"), &[]);
    let anchors = table(&d.join("out/anchors.csv"));
    assert_eq!(anchors.len(), 10);
    let interp = table(&d.join("out/interpolated.csv"));
    let lo = &anchors[0];
    let hi = &anchors[1];
    for col in ["f_max_mhz", "soc_total", "ma_leak", "energy_pj_per_op"] {
        let x: f64 = interp[0][col].parse().unwrap();
        let a: f64 = lo[col].parse().unwrap();
        let b: f64 = hi[col].parse().unwrap();
        assert!(
            x >= a.min(b) && x <= a.max(b),
            "{col}: {x} outside [{a}, {b}]"
        );
    }
    assert_eq!(summary(&d.join("out"))["min_energy_voltage"], 0.5);
}

#[test]
fn bundled_config_resolves_relative_paths() {
    let d = tmp("bundled");
    let cfg = root().join("configs/toy.toml");
    run_ok("infer", &cfg, &d, &["--trials", "1"]);
    assert!(d.join("predictions.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let d = tmp("exit2");
    for extra in [
        "trials = 0\n",
        "bogus = 1\n",
        "[fault]\nber = 1.5\n",
        "[sweep]\nvoltages = [0.3]\n",
    ] {
        let cfg = config(&d, extra);
        let (code, _, err) = bnnsim(&["infer", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2, "{extra:?}: {err}");
    }
    let (code, _, _) = bnnsim(&["infer", "--policy", "nowhere"]);
    assert_eq!(code, 2);
}

#[test]
fn malformed_anchor_table_reports_location() {
    let d = tmp("anchors");
    let bad = d.join("bad.csv");
    let good = std::fs::read_to_string(root().join("data/anchors.csv")).unwrap();
    std::fs::write(
        &bad,
        good.replacen("674.8", "x", 1)
            .replacen(",292.1,", ",abc,", 1),
    )
    .unwrap();
    let cfg = config(&d, &format!("anchors = {bad:?}\n"));
    let (code, _, err) = bnnsim(&[
        "power-report",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d.join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("soc_total"), "{err}");
}

#[test]
fn missing_files_exit_4() {
    let d = tmp("exit4");
    let (code, _, _) = bnnsim(&["infer", "--config", d.join("absent.toml").to_str().unwrap()]);
    assert_eq!(code, 4);
    let cfg = d.join("exp.toml");
    std::fs::write(
        &cfg,
        "network = \"nope.xnemodel\"\ndataset = \"nope.toml\"\n",
    )
    .unwrap();
    let (code, _, err) = bnnsim(&["infer", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn shape_and_allocation_errors_exit_3() {
    let d = tmp("exit3");
    let model = d.join("uvgg.xnemodel");
    modelfile::save(&uvgg::random_network(1).unwrap(), &model).unwrap();
    let data = root().join("data/toy-test.toml");
    let cfg = d.join("exp.toml");
    std::fs::write(&cfg, format!("network = {model:?}\ndataset = {data:?}\n")).unwrap();
    let (code, _, err) = bnnsim(&["infer", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("match"), "{err}");
}

#[test]
fn oversized_network_under_scm_exec_exits_3() {
    let d = tmp("alloc");
    let cfg = config(&d, "instruction_bytes = 16000\n");
    let (code, _, err) = bnnsim(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        "scm-exec",
        "--out",
        d.join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
}
