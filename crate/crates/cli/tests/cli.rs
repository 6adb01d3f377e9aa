use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINYNET_SHA256: &str = "13fd7c316f933e793f7e546db5a5a349e00df790bfeb8dd71fca013fe1b2f953";
const SPANS_SHA256: &str = "72c419b523ec1e7eb300d91fe60901d081abd2c9e632e953307662d855ff19bd";

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn config(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_owned()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynprec"))
        .current_dir(dir)
        .env_remove("DYNPREC_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn row<'a>(rows: &'a [Vec<String>], network: &str, layer: &str, engine: &str) -> &'a [String] {
    rows.iter()
        .find(|r| r[0] == network && r[1] == layer && r[2] == engine)
        .unwrap_or_else(|| panic!("no row {network}/{layer}/{engine}"))
}

#[test]
fn fixed_seed_gives_pinned_checksums() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(
        d.path(),
        &[
            "gen-trace",
            "--net",
            &config("tinynet.toml"),
            "--out",
            "a.dsta",
        ],
    );
    assert!(out.contains(TINYNET_SHA256), "{out}");
    let out = ok(
        d.path(),
        &["gen-trace", "--synthetic", &config("spans.toml")],
    );
    assert!(out.contains(SPANS_SHA256), "{out}");
    // the checked-in fixture is the same trace
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/spans.dsta");
    assert_eq!(
        std::fs::read(fixture).unwrap(),
        std::fs::read(d.path().join("spans.dsta")).unwrap()
    );
    let other = ok(
        d.path(),
        &[
            "gen-trace",
            "--net",
            &config("tinynet.toml"),
            "--seed",
            "8",
            "--out",
            "b.dsta",
        ],
    );
    assert!(!other.contains(TINYNET_SHA256));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let d = tempfile::tempdir().unwrap();
    let spec = config("spans.toml");
    std::fs::write(d.path().join("spans.dsta"), b"keep").unwrap();
    let err = fails(d.path(), &["gen-trace", "--synthetic", &spec]);
    assert!(
        err.contains("spans.dsta") && err.contains("--force"),
        "{err}"
    );
    assert_eq!(std::fs::read(d.path().join("spans.dsta")).unwrap(), b"keep");
    ok(d.path(), &["gen-trace", "--synthetic", &spec, "--force"]);
    assert_ne!(std::fs::read(d.path().join("spans.dsta")).unwrap(), b"keep");
}

#[test]
fn output_directory_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dynprec"))
        .current_dir(d.path())
        .env("DYNPREC_OUT_DIR", "out/traces")
        .args(["gen-trace", "--synthetic", &config("spans.toml")])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("out/traces/spans.dsta").is_file());
}

#[test]
fn invalid_inputs_exit_non_zero_and_name_the_file() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "layers = 3").unwrap();
    std::fs::write(
        d.path().join("wide.toml"),
        "[[layers]]\nname = \"x\"\ndims = [1, 1, 4, 4]\nspans = [{ span = 17 }]\n",
    )
    .unwrap();
    let err = fails(d.path(), &["gen-trace", "--synthetic", "bad.toml"]);
    assert!(err.contains("bad.toml"), "{err}");
    let err = fails(d.path(), &["gen-trace", "--synthetic", "wide.toml"]);
    assert!(
        err.contains("wide.toml") && err.contains("span 17"),
        "{err}"
    );
    let err = fails(d.path(), &["gen-trace", "--net", "bad.toml"]);
    assert!(err.contains("bad.toml"), "{err}");
    let err = fails(d.path(), &["profile", "--net", "missing.toml"]);
    assert!(err.contains("missing.toml"), "{err}");
    let err = fails(d.path(), &["simulate", "--trace", "missing.dsta"]);
    assert!(err.contains("missing.dsta"), "{err}");
    fails(
        d.path(),
        &["simulate", "--trace", "x.dsta", "--engine", "tpu"],
    );
    fails(
        d.path(),
        &["simulate", "--trace", "x.dsta", "--shifter-reach", "9"],
    );
    assert!(!d.path().join("spans.dsta").exists());
}

#[test]
fn settings_are_checked_before_any_work() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-trace", "--synthetic", &config("spans.toml")],
    );
    let err = fails(
        d.path(),
        &["simulate", "--trace", "spans.dsta", "--subgroup-size", "48"],
    );
    assert!(err.contains("subgroup size 48"), "{err}");
    std::fs::write(d.path().join("p.toml"), "mode = \"msp2\"\ntarget = \"exact\"\naccuracy = 1.0\nbaseline_accuracy = 1.0\nlayers = []\n").unwrap();
    let err = fails(
        d.path(),
        &["simulate", "--trace", "spans.dsta", "--profile", "p.toml"],
    );
    assert!(err.contains("p.toml"), "{err}");
    let err = fails(
        d.path(),
        &["simulate", "--trace", "spans.dsta", "--trace", "spans.dsta"],
    );
    assert!(err.contains("spans"), "{err}");
}

#[test]
fn a_profile_missing_a_layer_names_the_trace() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-trace", "--synthetic", &config("spans.toml")],
    );
    std::fs::write(
        d.path().join("p.toml"),
        "mode = \"fixed-point\"\ntarget = \"exact\"\naccuracy = 1.0\nbaseline_accuracy = 1.0\n\
         [[layers]]\nname = \"narrow\"\nn_high = 15\nn_low = 0\n",
    )
    .unwrap();
    let err = fails(
        d.path(),
        &["simulate", "--trace", "spans.dsta", "--profile", "p.toml"],
    );
    assert!(err.contains("spans.dsta") && err.contains("wide"), "{err}");
}

#[test]
fn uniform_span_eight_is_twice_as_fast_as_bit_parallel() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("eight.toml"),
        "seed = 4\n[[layers]]\nname = \"only\"\ndims = [1, 16, 16, 16]\nspans = [{ span = 8 }]\n",
    )
    .unwrap();
    ok(d.path(), &["gen-trace", "--synthetic", "eight.toml"]);
    let rows = csv_rows(&ok(d.path(), &["simulate", "--trace", "eight.dsta"]));
    assert_eq!(row(&rows, "eight", "TOTAL", "dynamic")[5], "2.00");
    assert_eq!(row(&rows, "eight", "only", "dynamic")[5], "2.00");
    // an engine against itself
    assert_eq!(row(&rows, "eight", "TOTAL", "dadn")[5], "1.00");
    assert_eq!(row(&rows, "eight", "TOTAL", "stripes")[6], "1.00");
}

#[test]
fn dynamic_is_never_slower_than_stripes_with_the_envelope() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-trace", "--synthetic", &config("spans.toml")],
    );
    ok(d.path(), &["gen-trace", "--net", &config("tinynet.toml")]);
    let rows = csv_rows(&ok(
        d.path(),
        &[
            "simulate",
            "--trace",
            "spans.dsta",
            "--trace",
            "tinynet.dsta",
            "--engine",
            "dynamic",
        ],
    ));
    assert!(rows.iter().all(|r| r[2] == "dynamic"));
    for r in &rows {
        assert!(r[6].parse::<f64>().unwrap() >= 1.0, "{r:?}");
    }
    assert!(rows.iter().any(|r| r[0] == "GeoMean"));
}

#[test]
fn csv_and_json_carry_the_same_numbers() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-trace", "--synthetic", &config("spans.toml")],
    );
    ok(d.path(), &["gen-trace", "--net", &config("tinynet.toml")]);
    let args = [
        "simulate",
        "--trace",
        "spans.dsta",
        "--trace",
        "tinynet.dsta",
        "--shifter-reach",
        "2",
    ];
    let csv = csv_rows(&ok(d.path(), &[&args[..], &["--format", "csv"]].concat()));
    let json: serde_json::Value =
        serde_json::from_str(&ok(d.path(), &[&args[..], &["--format", "json"]].concat())).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), csv.len());
    let engines = [
        ("bit-parallel", "dadn"),
        ("stripes-per-layer", "stripes"),
        ("dynamic-stripes", "dynamic"),
        ("essential-bits", "essential"),
    ];
    for (j, c) in rows.iter().zip(&csv) {
        assert_eq!(j["network"], c[0].as_str());
        assert_eq!(j["layer"], c[1].as_str());
        let engine = engines.iter().find(|e| j["engine"] == e.0).unwrap().1;
        assert_eq!(engine, c[2]);
        for (key, col) in [("cycles", 3), ("pallets", 4)] {
            let want = j[key].as_u64().map_or(String::new(), |v| v.to_string());
            assert_eq!(want, c[col]);
        }
        for (key, col) in [("vs_dadn", 5), ("vs_str", 6)] {
            let v = j[key].as_f64().unwrap();
            assert_eq!(v, c[col].parse::<f64>().unwrap(), "{key} in {c:?}");
            assert_eq!(format!("{v:.2}"), c[col]);
        }
    }
}

#[test]
fn report_merges_runs_into_the_same_geomean() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-trace", "--synthetic", &config("spans.toml")],
    );
    ok(d.path(), &["gen-trace", "--net", &config("tinynet.toml")]);
    for t in ["spans", "tinynet"] {
        ok(
            d.path(),
            &[
                "simulate",
                "--trace",
                &format!("{t}.dsta"),
                "--format",
                "json",
                "--out",
                &format!("{t}.json"),
            ],
        );
    }
    let merged = ok(
        d.path(),
        &["report", "--input", "spans.json", "--input", "tinynet.json"],
    );
    let together = ok(
        d.path(),
        &[
            "simulate",
            "--trace",
            "spans.dsta",
            "--trace",
            "tinynet.dsta",
        ],
    );
    assert_eq!(merged, together);

    ok(
        d.path(),
        &[
            "simulate",
            "--trace",
            "spans.dsta",
            "--subgroup-size",
            "256",
            "--format",
            "json",
            "--out",
            "coarse.json",
        ],
    );
    let err = fails(
        d.path(),
        &[
            "report",
            "--input",
            "tinynet.json",
            "--input",
            "coarse.json",
        ],
    );
    assert!(err.contains("coarse.json"), "{err}");
    let err = fails(
        d.path(),
        &["report", "--input", "spans.json", "--input", "spans.json"],
    );
    assert!(err.contains("repeats network"), "{err}");
}

#[test]
fn profile_and_msp2_budgets_feed_the_simulation() {
    let d = tempfile::tempdir().unwrap();
    let net = config("tinynet.toml");
    ok(d.path(), &["gen-trace", "--net", &net]);
    ok(
        d.path(),
        &[
            "profile",
            "--net",
            &net,
            "--target",
            "1",
            "--out",
            "fixed.toml",
        ],
    );
    ok(
        d.path(),
        &[
            "profile",
            "--net",
            &net,
            "--mode",
            "msp2",
            "--target",
            "1",
            "--base",
            "fixed.toml",
            "--out",
            "msp2.toml",
        ],
    );
    let fixed = std::fs::read_to_string(d.path().join("fixed.toml")).unwrap();
    assert!(fixed.contains("mode = \"fixed-point\"") && fixed.contains("conv3"));
    let budgets = std::fs::read_to_string(d.path().join("msp2.toml")).unwrap();
    assert!(budgets.contains("msp2_budget"));

    let plain = csv_rows(&ok(
        d.path(),
        &[
            "simulate",
            "--trace",
            "tinynet.dsta",
            "--profile",
            "fixed.toml",
        ],
    ));
    let budgeted = csv_rows(&ok(
        d.path(),
        &[
            "simulate",
            "--trace",
            "tinynet.dsta",
            "--profile",
            "fixed.toml",
            "--msp2-profile",
            "msp2.toml",
        ],
    ));
    let cycles =
        |rows: &[Vec<String>], e| row(rows, "tinynet", "TOTAL", e)[3].parse::<u64>().unwrap();
    assert!(cycles(&budgeted, "essential") <= cycles(&plain, "essential"));
    assert_eq!(cycles(&budgeted, "dynamic"), cycles(&plain, "dynamic"));

    let err = fails(
        d.path(),
        &["profile", "--net", &net, "--base", "fixed.toml"],
    );
    assert!(err.contains("--base"), "{err}");
    let err = fails(
        d.path(),
        &[
            "simulate",
            "--trace",
            "tinynet.dsta",
            "--msp2-profile",
            "fixed.toml",
        ],
    );
    assert!(err.contains("fixed.toml"), "{err}");
}
