//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see them on success).
//!
//! Two sub-checks are expected to fail and are left failing deliberately;
//! their assertion messages carry the analysis:
//!   - criterion 2, m = 5: the exact expected-log gap is 0.2208 dB; the
//!     quoted "0.2 dB or less" bound rounds that value;
//!   - criterion 3, K = 10 dB: the envelope-variance curve evaluates to
//!     3.994 dB^2 (two independent routes agree), outside the transcribed
//!     [2.5, 3.5] dB^2 band.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use fadesim::config::RunConfig;
use fadesim::validate::{
    check_closed_form_vs_quadrature, check_ensemble_regression, check_figure_shapes,
    check_log_gaps, check_mc_vs_analytic, check_ricean_curve,
};

fn announce(criterion: &str, passed: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} — {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fadesim-acc-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fadesim"))
}

#[test]
fn criterion_1_closed_form_vs_quadrature() {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let outcome = check_closed_form_vs_quadrature(&cfg);
    let elapsed = start.elapsed();
    let detail = format!("{} in {elapsed:.2?} (budget 10 s)", outcome.detail);
    announce(
        "criterion 1 (closed form vs quadrature)",
        outcome.passed,
        &detail,
    );
    assert!(outcome.passed, "{detail}");
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "runtime budget exceeded: {elapsed:.2?}"
    );
}

#[test]
fn criterion_2_expected_log_gaps() {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let outcomes = check_log_gaps(&cfg);
    let elapsed = start.elapsed();
    let passed = outcomes.iter().all(|c| c.passed);
    let detail = outcomes
        .iter()
        .map(|c| format!("{} [{}]", c.detail, if c.passed { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join("; ");
    announce(
        "criterion 2 (expected-log gaps at 1e7 draws)",
        passed,
        &format!("{detail}; {elapsed:.2?} (budget 30 s)"),
    );
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "runtime budget exceeded: {elapsed:.2?}"
    );
    assert!(
        passed,
        "expected-log gap bounds not met: {detail}. The m=5 bound (<= 0.2 dB) is \
         unattainable: the exact gap is (10/ln 10)(ln 10 - psi(10)) = 0.2208 dB, which \
         the stated \"0.2 dB or less\" rounds; Monte Carlo and the digamma closed form \
         agree to < 0.001 dB, so no faithful implementation can land below 0.200."
    );
}

#[test]
fn criterion_3_ricean_endpoints_and_fit() {
    let cfg = RunConfig::default();
    let outcomes = check_ricean_curve(&cfg);
    let passed = outcomes.iter().all(|c| c.passed);
    let detail = outcomes
        .iter()
        .map(|c| format!("{} [{}]", c.detail, if c.passed { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join("; ");
    announce(
        "criterion 3 (variance-curve endpoints and fit)",
        passed,
        &detail,
    );
    assert!(
        passed,
        "variance-curve criterion not met: {detail}. The upper endpoint band \
         [2.5, 3.5] dB^2 is unattainable: with R_dB = 20 log10 of the envelope and \
         K = |v_bar|^2 / affected power (both pinned conventions), the curve evaluates \
         to 3.994 dB^2 at K = 10 dB — density quadrature and a 1e7-draw Monte Carlo \
         agree to < 0.01 dB^2, and the high-K asymptote (10/ln10)^2 * 2/K = 3.77 dB^2 \
         confirms the scale. The curve reaches 3.0 dB^2 only near K = 11.3 dB."
    );
}

#[test]
fn criterion_4_ensemble_regression() {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let outcome = check_ensemble_regression(&cfg);
    let elapsed = start.elapsed();
    let detail = format!("{} in {elapsed:.2?} (budget 5 min)", outcome.detail);
    announce(
        "criterion 4 (variance vs affected-power regression)",
        outcome.passed,
        &detail,
    );
    assert!(outcome.passed, "{detail}");
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "runtime budget exceeded: {elapsed:.2?}"
    );
}

#[test]
fn criterion_5_monte_carlo_vs_analytic() {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let outcomes = check_mc_vs_analytic(&cfg);
    let elapsed = start.elapsed();
    let passed = outcomes.iter().all(|c| c.passed);
    let detail = outcomes
        .iter()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    announce(
        "criterion 5 (empirical vs analytic affected power)",
        passed,
        &format!("{detail}; {elapsed:.2?} (budget 2 min)"),
    );
    assert!(passed, "{detail}");
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "runtime budget exceeded: {elapsed:.2?}"
    );
}

#[test]
fn criterion_6_figure_shapes() {
    let cfg = RunConfig::default();
    let outcomes = check_figure_shapes(&cfg);
    let passed = outcomes.iter().all(|c| c.passed);
    let detail = outcomes
        .iter()
        .map(|c| {
            format!(
                "{}: {} [{}]",
                c.name,
                c.detail,
                if c.passed { "ok" } else { "FAIL" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    announce("criterion 6 (surface and cut shapes)", passed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_7_synthetic_round_trip() {
    let dir = tmpdir("roundtrip");
    let status = bin()
        .args(["simulate", "--seed", "1234"])
        .arg("--out")
        .arg(&dir)
        .status()
        .expect("run simulate");
    assert!(status.success(), "simulate failed");
    for name in [
        "measurements.csv",
        "survey.csv",
        "sim_meta.json",
        "ensemble_report.json",
    ] {
        assert!(dir.join(name).exists(), "missing {name}");
    }

    let status = bin()
        .arg("ingest")
        .arg("--measurements")
        .arg(dir.join("measurements.csv"))
        .arg("--survey")
        .arg(dir.join("survey.csv"))
        .arg("--sim-meta")
        .arg(dir.join("sim_meta.json"))
        .arg("--out")
        .arg(&dir)
        .status()
        .expect("run ingest");
    assert!(status.success(), "ingest failed");

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("comparison_report.json")).expect("report exists"),
    )
    .expect("valid report JSON");
    let spearman = report["comparison"]["spearman"].as_f64().expect("spearman");
    let joint = report["comparison"]["joint_bins"]
        .as_u64()
        .expect("joint bins");
    let passed = spearman > 0.7;
    announce(
        "criterion 7 (synthetic measurement round trip)",
        passed,
        &format!("spearman rank correlation {spearman:.4} over {joint} joint bins (threshold 0.7)"),
    );
    std::fs::remove_dir_all(&dir).ok();
    assert!(passed, "spearman {spearman} <= 0.7");
}

#[test]
fn criterion_8_validate_determinism() {
    let dir = tmpdir("determinism");
    // Reduced sizes: determinism must hold at any scale, and this keeps the
    // three binary runs quick.
    let cfg = serde_json::json!({
        "seed": 7,
        "validate": {
            "geometries": 25,
            "log_gap_draws": 100_000,
            "var_mc_draws": 100_000,
            "ensemble_positions": 6,
            "ensemble_realizations": 30,
            "ensemble_samples": 40,
            "mc_etap_fields": 150,
            "shape_grid_step": 0.2
        }
    });
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    // All runs share one output path so only seed/workers could possibly
    // differ; bytes are captured between sequential runs.
    let out = dir.join("out");
    let report = out.join("validation_report.json");
    let run = |workers: &str| {
        let status = bin()
            .arg("validate")
            .arg("--config")
            .arg(&cfg_path)
            .args(["--seed", "7", "--workers", workers])
            .arg("--out")
            .arg(&out)
            .arg("--report")
            .arg(&report)
            .status()
            .expect("run validate");
        // Reduced sizes may legitimately fail statistical checks; only the
        // bytes matter here.
        assert!(
            status.code() == Some(0) || status.code() == Some(1),
            "unexpected exit code {:?}",
            status.code()
        );
        std::fs::read(&report).expect("report written")
    };

    let a = run("1");
    let b = run("1");
    let c = run("4");
    let passed = a == b && a == c;
    announce(
        "criterion 8 (validate report determinism)",
        passed,
        &format!(
            "{} bytes; repeat-run identical: {}, workers 1 vs 4 identical: {}",
            a.len(),
            a == b,
            a == c
        ),
    );
    std::fs::remove_dir_all(&dir).ok();
    assert!(passed, "validation reports are not byte-identical");
}
