use std::path::Path;
use std::process::{Command, Output};

fn solvit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solvit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const NOISELESS: &str = r#"{"n":2,"sensors":[[0,10],[10,0],[0,-10],[-10,0],[7,7]],"source":[1,5],
"noise":{"sigma2":0,"f0":1000,"c":340},"seed":1}"#;

#[test]
fn solve_recovers_noiseless_source() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "sc.json", NOISELESS);
    for kind in ["rangediff", "range"] {
        let sim = solvit(&["simulate", "--scenario", "sc.json", "--kind", kind, "--out", "m.csv"], d);
        assert!(sim.status.success());
        let out = solvit(
            &["solve", "--sensors", "sc.json", "--measurements", "m.csv", "--tol", "1e-12", "--trace", "t.csv"],
            d,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let est = v["estimate"].as_array().unwrap();
        assert!((est[0].as_f64().unwrap() - 1.0).abs() < 1e-6, "{v}");
        assert!((est[1].as_f64().unwrap() - 5.0).abs() < 1e-6, "{v}");
        let rows = std::fs::read_to_string(d.join("t.csv")).unwrap().lines().count();
        assert_eq!(rows as u64, v["iterations"].as_u64().unwrap() + 2);
    }
}

#[test]
fn init_reports_point_and_route() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "sc.json", NOISELESS);
    solvit(&["simulate", "--scenario", "sc.json", "--out", "m.csv"], d);
    let out = solvit(&["init", "--sensors", "sc.json", "--measurements", "m.csv", "--seed", "4"], d);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["x0"].as_array().unwrap().len(), 2);
    assert!(v["method"]["hyperbola"].is_array());
}

#[test]
fn bench_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "cfg.json",
        r#"{"scenario": {"kind": "generate",
                         "array": {"geometry": "random", "m": 5, "lo": -50, "hi": 50, "n": 2},
                         "source": {"kind": "random", "lo": -10, "hi": 10}},
            "snr_grid": [-10, -5, 0], "freq_grid": [1000], "trials": 40, "seed": 11}"#,
    );
    let a = solvit(&["bench", "--config", "cfg.json", "--out", "a.csv"], d);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = solvit(&["bench", "--config", "cfg.json", "--out", "b.csv", "--threads", "1", "--trace-dir", "tr"], d);
    assert!(b.status.success());
    let ca = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(ca, std::fs::read(d.join("b.csv")).unwrap());
    assert!(String::from_utf8(ca).unwrap().starts_with("sweep,rmse,crlb,failed\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("a.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert!(d.join("tr/trace_proposed.csv").exists() && d.join("tr/trace_random.csv").exists());

    let p = solvit(&["plot", "--input", "a.csv", "--out", "a.svg", "--gnuplot", "a.gp"], d);
    assert!(p.status.success());
    assert!(std::fs::read_to_string(d.join("a.svg")).unwrap().contains("<svg"));
    assert!(std::fs::read_to_string(d.join("a.gp")).unwrap().contains("plot 'a.csv'"));
}

#[test]
fn crlb_on_two_collinear_sensors_is_inf() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "col.json",
        r#"{"n":2,"sensors":[[0,0],[10,0]],"source":[3,4],"noise":{"sigma2":1,"f0":1000,"c":340},"seed":1}"#,
    );
    let out = solvit(&["crlb", "--scenario", "col.json"], d);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rmse_bound"], "inf");
    assert_eq!(v["cov_rank"], 1);
}

#[test]
fn tdoa_reads_signal_files() {
    use solvit_core::scenario::anechoic_array;
    use solvit_core::tdoa::{synthesize_tones, write_signals_csv, write_signals_raw, ToneConfig};
    use solvit_core::Position;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tone = ToneConfig {
        duration: 0.2,
        ..Default::default()
    };
    let sigs = synthesize_tones(&anechoic_array(), &Position::xy(1.0, 0.5), &tone).unwrap();
    write_signals_csv(&sigs, std::fs::File::create(d.join("s.csv")).unwrap()).unwrap();
    write_signals_raw(&sigs, d.join("s.f64"), d.join("s.json")).unwrap();
    let a = solvit(&["tdoa", "--signals", "s.csv"], d);
    let b = solvit(&["tdoa", "--raw", "s.f64", "--sidecar", "s.json"], d);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("i,j,r_ij\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn errors_are_single_line_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "bad.json", r#"{"n":2,"sensors":[[0,0],[0,0]],"source":[1,1],"noise":{"sigma2":1,"f0":1,"c":1},"seed":0}"#);
    let cases: [(&[&str], &str); 4] = [
        (&["crlb", "--scenario", "missing.json"], "error: io: "),
        (&["crlb", "--scenario", "bad.json"], "error: json: "),
        (&["bogus"], "error: usage: "),
        (&["plot", "--input", "x.csv"], "error: invalid-argument: "),
    ];
    for (args, prefix) in cases {
        let out = solvit(args, d);
        assert!(!out.status.success());
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(prefix), "{args:?}: {err}");
    }
}
