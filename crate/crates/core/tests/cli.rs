//! The command line, driven in-process through `main_with`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elliptic_bias::cli::{main_with, FitReport, EXIT_ERROR, EXIT_OK, EXIT_PARTIAL};
use elliptic_bias::sim::SimReport;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with(
        std::iter::once("elliptic-bias").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `y = 1 + 2x + noise` with two gross outliers.
fn write_linear(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut text = String::from("y,x1\n");
    for i in 0..40 {
        let x = i as f64 / 4.0;
        let mut y = 1.0 + 2.0 * x + rng.random_range(-1.0..1.0);
        if i % 17 == 5 {
            y += 25.0;
        }
        text.push_str(&format!("{y},{x}\n"));
    }
    let path = dir.join("linear.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn preset(name: &str) -> String {
    format!("{}/presets/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn fit_writes_text_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_linear(dir.path());
    let r = run(&["fit", "--model", "linear", "--data", path_str(&data)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(
        r.out.contains("MLE") && r.out.contains("BR") && r.out.contains("AICc"),
        "{}",
        r.out
    );

    let out = dir.path().join("fit.csv");
    let r = run(&[
        "fit",
        "--model",
        "linear",
        "--family",
        "student-t",
        "--nu",
        "4",
        "--data",
        path_str(&data),
        "--format",
        "csv",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("student-t(nu=4)"));
    let records = FitReport::read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    let get = |e: &str, q: &str, p: &str| {
        records
            .iter()
            .find(|r| r.estimator == e && r.quantity == q && r.parameter == p)
            .unwrap()
            .value
    };
    for e in ["mle", "bc", "br"] {
        assert_eq!(get(e, "converged", ""), 1.0);
        assert!((get(e, "estimate", "beta1") - 2.0).abs() < 0.2);
    }
    let (ll, p, n) = (get("mle", "loglik", ""), 3.0, 40.0);
    assert!((get("mle", "aic", "") - (-2.0 * ll + 2.0 * p)).abs() < 1e-9);
    assert!((get("mle", "bic", "") - (-2.0 * ll + p * f64::ln(n))).abs() < 1e-9);
    assert!((get("mle", "aicc", "") - (-2.0 * ll + 2.0 * p + 2.0 * p * (p + 1.0) / (n - p - 1.0))).abs() < 1e-9);
}

#[test]
fn heavy_tails_fit_outlying_data_better() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_linear(dir.path());
    let aic = |family: &[&str]| {
        let mut args = vec![
            "fit",
            "--model",
            "linear",
            "--data",
            path_str(&data),
            "--format",
            "csv",
            "--estimators",
            "mle",
        ];
        args.extend_from_slice(family);
        let r = run(&args);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        let records = FitReport::read_csv(r.out.as_bytes()).unwrap();
        records.iter().find(|r| r.quantity == "aic").unwrap().value
    };
    assert!(aic(&["--family", "student-t", "--nu", "3"]) < aic(&["--family", "normal"]));
}

#[test]
fn partial_convergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_linear(dir.path());
    let r = run(&[
        "fit",
        "--model",
        "linear",
        "--family",
        "cauchy",
        "--data",
        path_str(&data),
        "--max-iter",
        "1",
    ]);
    assert_eq!(r.code, EXIT_PARTIAL, "{}", r.err);
    assert!(r.err.contains("not converged"));
}

#[test]
fn malformed_input_is_reported_with_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,x1\n1,2\n2,3\n3,four\n").unwrap();
    let r = run(&["fit", "--model", "linear", "--data", path_str(&path)]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("row 3") && r.err.contains("four"), "{}", r.err);

    let r = run(&[
        "fit",
        "--model",
        "linear",
        "--data",
        path_str(&dir.path().join("missing.csv")),
    ]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("missing.csv"));
}

#[test]
fn invalid_family_parameters_exit_with_one() {
    for args in [
        &["psi-table", "--family", "student-t", "--nu", "-1"][..],
        &["psi-table", "--family", "student-t", "--nu", "0"],
        &["psi-table", "--family", "student-t"],
        &["psi-table", "--family", "laplace"],
        &["fit", "--model", "quadratic", "--data", "x.csv"],
    ] {
        let r = run(args);
        assert_eq!(r.code, EXIT_ERROR, "{args:?}");
        assert!(!r.err.is_empty());
    }
    let r = run(&["psi-table", "--family", "power-exponential", "--lambda", "0.2"]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("lambda > 1/4"), "{}", r.err);
    // q ≥ 2 has no side condition.
    assert_eq!(
        run(&[
            "psi-table",
            "--family",
            "power-exponential",
            "--lambda",
            "0.2",
            "--q-min",
            "2"
        ])
        .code,
        EXIT_OK
    );
}

#[test]
fn psi_table_values() {
    let r = run(&["psi-table", "--format", "csv", "--q-max", "3"]);
    assert_eq!(r.code, EXIT_OK);
    let mut rd = csv::Reader::from_reader(r.out.as_bytes());
    let rows: Vec<Vec<f64>> = rd
        .records()
        .map(|x| x.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    // Normal, q = 1: ψ21 = 1/4, ψ22 = 3/4, ψ32 = −3/8, ψ33 = −15/8.
    assert_eq!(&rows[0][..5], &[1.0, 0.25, 0.75, -0.375, -1.875]);

    let r = run(&["psi-table", "--family", "student-t", "--nu", "4", "--q-max", "1"]);
    assert!(r.out.contains("0.178571"), "{}", r.out); // 5/28
}

#[test]
fn simulate_smoke_preset_is_quick() {
    let start = Instant::now();
    let r = run(&["simulate", &preset("smoke.toml")]);
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("sigma2"));
}

#[test]
fn simulate_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let r = run(&[
        "simulate",
        &preset("smoke.toml"),
        "--n",
        "8,12",
        "--reps",
        "20",
        "--seed",
        "3",
        "--threads",
        "2",
        "--estimators",
        "mle,bc",
        "--format",
        "csv",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let rows = SimReport::read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 2);
    assert!(rows.iter().all(|r| r.used + r.failed == 20));

    let r = run(&["simulate"]);
    assert_eq!(r.code, EXIT_ERROR);
    let r = run(&["simulate", "--model", "linear", "--reps", "0"]);
    assert_eq!(r.code, EXIT_ERROR);
}

#[test]
fn every_model_schema_fits_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut noise = move |s: f64| s * (rng.random::<f64>() - 0.5) * 3.4;
    let write = |name: &str, text: String| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let mut nonlinear = String::from("y,x\n");
    let mut logsym = String::from("t,x1,w1\n");
    let mut eiv = String::from("X1,X2,tau1,tau2\n");
    let mut mixed = String::from("subject,y,x1\n");
    for i in 0..60 {
        let x = (i % 20) as f64 * 5.0;
        nonlinear.push_str(&format!(
            "{},{x}\n",
            50.0 + 500.0 / (1.0 + 0.5 * (x / 10.0).powi(2)) + noise(10.0)
        ));
        let u = i as f64 / 60.0;
        logsym.push_str(&format!("{},{u},{}\n", (1.0 + u + noise(0.3)).exp(), (i % 3) as f64));
        let xi = 70.0 + noise(15.0);
        eiv.push_str(&format!(
            "{},{},1.0,2.0\n",
            0.7 + 0.4 * xi + noise(5.0),
            xi + noise(1.0)
        ));
        let b = noise(2.0);
        for t in 0..3 {
            mixed.push_str(&format!("{i},{},{t}\n", 10.0 + b + 2.0 * t as f64 + noise(1.0)));
        }
    }
    for (model, path) in [
        ("nonlinear", write("nl.csv", nonlinear)),
        ("log-symmetric", write("ls.csv", logsym)),
        ("eiv", write("eiv.csv", eiv)),
        ("mixed", write("mixed.csv", mixed)),
    ] {
        let r = run(&[
            "fit",
            "--model",
            model,
            "--data",
            path_str(&path),
            "--estimators",
            "mle,bc",
        ]);
        assert_eq!(r.code, EXIT_OK, "{model}: {}{}", r.out, r.err);
    }
}
