//! Command-level pipeline tests on a downsized problem: artifact layout,
//! determinism of rerun outputs, and binary exit codes.

use std::path::Path;
use std::process::Command;

use opinf_sfom::burgers::BurgersConfig;
use opinf_sfom_cli::commands::{cmd_decompose, cmd_generate, cmd_infer, cmd_simulate, Mode};
use opinf_sfom_cli::config::{
    burgers_preset, BasisRule, DataSection, PipelineConfig, SimulationSection,
};

/// A small, fast variant of the reference problem.
fn small_config() -> PipelineConfig {
    let mut cfg = burgers_preset();
    cfg.data = DataSection::Burgers(BurgersConfig {
        dz: 0.05,
        horizon: 4.0,
        ..BurgersConfig::default()
    });
    cfg.train_split = Some(2.0);
    cfg.basis = BasisRule::FixedRank(6);
    cfg.simulation = Some(SimulationSection {
        t0: 0.0,
        dt: 0.025,
        steps: 160,
        initial_state: None,
    });
    cfg
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_pipeline_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();

    cmd_generate(&cfg, &dir.path().join("gen")).unwrap();
    assert!(dir.path().join("gen/snapshots.fmat").exists());
    assert!(dir.path().join("gen/times.csv").exists());
    assert!(dir.path().join("gen/config_echo.json").exists());

    cmd_decompose(&cfg, &dir.path().join("dd")).unwrap();
    let dd_text = std::fs::read_to_string(dir.path().join("dd/dd.json")).unwrap();
    assert!(dd_text.contains("interface_ids"));

    cmd_infer(&cfg, &dir.path().join("run"), Mode::Coupled, 3).unwrap();
    for artifact in [
        "run/model/manifest.json",
        "run/model/dd.json",
        "run/model/basis.fmat",
        "run/model/rom/A.fmat",
        "run/model/rom/Hc.fmat",
        "run/model/rom/A_RI.fmat",
        "run/model/fom/manifest.json",
        "run/model/fom/coefficients.fmat",
        "run/report.json",
        "run/lcurve_opinf.csv",
        "run/lcurve_sfom.csv",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }
    // 20 L-curve points per model, plus the header.
    let lcurve = std::fs::read_to_string(dir.path().join("run/lcurve_opinf.csv")).unwrap();
    assert_eq!(lcurve.lines().count(), 21);
    let lcurve = std::fs::read_to_string(dir.path().join("run/lcurve_sfom.csv")).unwrap();
    assert_eq!(lcurve.lines().count(), 21);

    cmd_simulate(&cfg, &dir.path().join("run/model"), &dir.path().join("sim")).unwrap();
    assert!(dir.path().join("sim/states.fmat").exists());
    assert!(dir.path().join("sim/times.csv").exists());
    assert!(dir.path().join("sim/error_per_step.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sim/simulate_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["columns"], 160);
    assert!(report["frobenius_error_test"].as_f64().unwrap() > 0.0);
}

#[test]
fn rerun_is_byte_identical_except_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    cmd_infer(&cfg, &dir.path().join("a"), Mode::Coupled, 11).unwrap();
    cmd_infer(&cfg, &dir.path().join("b"), Mode::Coupled, 11).unwrap();

    for artifact in [
        "model/basis.fmat",
        "model/singular_values.fmat",
        "model/rom/A.fmat",
        "model/rom/Hc.fmat",
        "model/rom/A_RI.fmat",
        "model/rom/H_RII.fmat",
        "model/rom/H_RRI.fmat",
        "model/fom/coefficients.fmat",
        "model/fom/manifest.json",
        "model/dd.json",
        "lcurve_opinf.csv",
        "lcurve_sfom.csv",
    ] {
        assert_eq!(
            read_bytes(&dir.path().join("a").join(artifact)),
            read_bytes(&dir.path().join("b").join(artifact)),
            "artifact {artifact} differs between identical runs"
        );
    }

    // Reports agree on everything but the timing field.
    let strip = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("training_seconds");
        v
    };
    assert_eq!(
        strip(&dir.path().join("a/report.json")),
        strip(&dir.path().join("b/report.json"))
    );

    // A different pooling seed changes the inferred sparse coefficients.
    cmd_infer(&cfg, &dir.path().join("c"), Mode::Coupled, 12).unwrap();
    assert_ne!(
        read_bytes(&dir.path().join("a/model/fom/coefficients.fmat")),
        read_bytes(&dir.path().join("c/model/fom/coefficients.fmat"))
    );
}

#[test]
fn global_modes_write_their_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();

    cmd_infer(&cfg, &dir.path().join("rom"), Mode::GlobalOpinf, 0).unwrap();
    assert_eq!(
        opinf_sfom::model_io::bundle_kind(&dir.path().join("rom/model")).unwrap(),
        "reduced"
    );
    assert!(dir.path().join("rom/model/rom/A.fmat").exists());
    assert!(dir.path().join("rom/model/basis.fmat").exists());
    assert!(!dir.path().join("rom/model/fom").exists());
    cmd_simulate(&cfg, &dir.path().join("rom/model"), &dir.path().join("rom_sim")).unwrap();

    cmd_infer(&cfg, &dir.path().join("fom"), Mode::GlobalSfom, 0).unwrap();
    assert_eq!(
        opinf_sfom::model_io::bundle_kind(&dir.path().join("fom/model")).unwrap(),
        "sparse"
    );
    assert!(dir.path().join("fom/model/fom/coefficients.fmat").exists());
    assert!(!dir.path().join("fom/model/rom").exists());
    cmd_simulate(&cfg, &dir.path().join("fom/model"), &dir.path().join("fom_sim")).unwrap();
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_opinf-sfom");

    // Missing config: configuration error, exit 2.
    let out = Command::new(bin).args(["infer"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unreadable config path: i/o error, exit 4.
    let out = Command::new(bin)
        .args(["--config", "/nonexistent/config.json", "generate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    // Malformed config: exit 2.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"version\": 1}").unwrap();
    let out = Command::new(bin)
        .args(["--config", bad.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Cost point evaluation prints the expected speedup and exits 0.
    let out = Command::new(bin)
        .args([
            "cost",
            "--n",
            "500",
            "--n-fom",
            "250",
            "--n-interface",
            "2",
            "--r",
            "10",
            "--r-global",
            "10",
            "--stencil",
            "3",
            "--poly-order",
            "2",
            "--n-train",
            "360",
            "--n-steps",
            "720",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let json: serde_json::Value =
        serde_json::from_str(text.trim()).expect("cost output parses as JSON");
    let speedup = json["online_speedup"].as_f64().unwrap();
    assert!((speedup - 1.2195).abs() < 1e-3, "speedup {speedup}");
}
