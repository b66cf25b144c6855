//! End-to-end behavior of the laboratory: reproducibility of the study
//! outputs, the small-step behavior of the projected distance, degenerate
//! studies, and the binary's exit codes.

use std::process::Command;

use bondlab_cli::config::StudyConfig;
use bondlab_cli::study::{run_convergence_study, StudyOptions};

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("bondlab_study_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let cfg = StudyConfig::default_desk();
    let d1 = tmp_dir("det1");
    let d2 = tmp_dir("det2");
    for (dir, threads) in [(&d1, 1usize), (&d2, 3usize)] {
        run_convergence_study(
            &cfg,
            &StudyOptions {
                threads,
                deterministic: true,
                out_dir: Some(dir.clone()),
            },
        )
        .unwrap();
    }
    for name in [
        "study.csv",
        "refinement.csv",
        "limit.csv",
        "thin_0.csv",
        "trotter_4.csv",
    ] {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn zero_data_study_has_zero_distances() {
    let mut cfg = StudyConfig::default_desk();
    cfg.loads.g = None;
    cfg.initial.kind = "zero".into();
    cfg.sequence.count = 3;
    let report = run_convergence_study(&cfg, &StudyOptions::default()).unwrap();
    for row in &report.rows {
        assert_eq!(row.sup_trotter, 0.0);
        assert_eq!(row.sup_normgap, 0.0);
    }
    assert!(report.verdicts.passed());
}

#[test]
fn single_step_distance_first_order_in_tau() {
    // thin state initialized to (compatible data near) P_n X(0): after one
    // step of size tau the distance is O(tau)
    let mut cfg = StudyConfig::default_desk();
    cfg.sequence.count = 1;
    cfg.initial.kind = "random".into();
    cfg.initial.amplitude = Some(0.5);
    let mut dist_at_tau = Vec::new();
    for k in [4u32, 5, 6, 7] {
        let tau = 1.0 / (1 << k) as f64;
        cfg.time.tau.value = tau;
        cfg.time.t_final.value = tau; // single step
        let report = run_convergence_study(&cfg, &StudyOptions::default()).unwrap();
        let rows = &report.per_n[0].rows;
        assert_eq!(rows.len(), 2);
        // subtract the initial mismatch: the growth over one step is the
        // relevant O(tau) quantity
        dist_at_tau.push((rows[1].distance - rows[0].distance).abs());
    }
    for w in dist_at_tau.windows(2) {
        assert!(
            w[1] < w[0],
            "single-step distance growth did not shrink with tau: {dist_at_tau:?}"
        );
    }
    // first-order behavior once the fast modes are resolved
    let last = dist_at_tau[dist_at_tau.len() - 1] / dist_at_tau[dist_at_tau.len() - 2];
    assert!(
        last <= 0.6,
        "final halving ratio {last:.3} too large: {dist_at_tau:?}"
    );
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_bondlab");
    // validate on the default config: exit 0
    let ok = Command::new(bin).arg("validate").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));

    // a config violating the heavy-layer hypothesis: exit 2
    let mut cfg = StudyConfig::default_desk();
    cfg.sequence.rho.exponent = 0.0;
    let dir = tmp_dir("cfg");
    let path = dir.join("bad.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let bad = Command::new(bin)
        .args(["validate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    // converge refuses to start on the same config: exit 2
    let refuse = Command::new(bin)
        .args(["converge", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(refuse.status.code(), Some(2));

    // selftest: exit 0
    let st = Command::new(bin).arg("selftest").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
}

#[test]
fn remaining_verbs_smoke() {
    let bin = env!("CARGO_BIN_EXE_bondlab");
    let dir = tmp_dir("verbs");

    let build = Command::new(bin)
        .args(["build", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(build.status.code(), Some(0));
    let head = String::from_utf8_lossy(&build.stdout);
    assert!(head.starts_with("n,eps,bulk_nodes"), "{head}");
    assert!(dir.join("bulk_0.csv").exists());
    let dump = std::fs::read_to_string(dir.join("bulk_0.csv")).unwrap();
    assert!(dump.starts_with("# mesh bulk dim 2 nodes "), "{dump}");

    let project = Command::new(bin).arg("project").output().unwrap();
    assert_eq!(project.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&project.stdout);
    assert!(csv.starts_with("case,n,eps,norm_proj"), "{csv}");
    // ten random cases plus the constant closed-form case, five rows each
    assert_eq!(csv.lines().count(), 1 + 11 * 5);

    let sim = Command::new(bin)
        .args(["simulate-limit", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(sim.status.code(), Some(0));
    assert!(dir.join("limit.csv").exists());

    let thin = Command::new(bin)
        .args(["simulate-thin", "--index", "2", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(thin.status.code(), Some(0));
    assert!(dir.join("thin_2.csv").exists());
    assert!(dir.join("thin_2_u_final.csv").exists());

    // out-of-range sequence index is rejected
    let bad = Command::new(bin)
        .args(["simulate-thin", "--index", "9"])
        .output()
        .unwrap();
    assert_ne!(bad.status.code(), Some(0));

    let pc = Command::new(bin).arg("print-config").output().unwrap();
    assert_eq!(pc.status.code(), Some(0));
    let text = String::from_utf8_lossy(&pc.stdout);
    bondlab_cli::config::StudyConfig::from_json(&text).unwrap();
}

#[test]
fn default_study_regression_values() {
    // guard the default study's headline numbers against semantic drift
    // (all randomness is seeded; loose windows absorb platform rounding)
    let cfg = StudyConfig::default_desk();
    let report = run_convergence_study(
        &cfg,
        &StudyOptions {
            threads: 1,
            deterministic: true,
            out_dir: None,
        },
    )
    .unwrap();
    let d: Vec<f64> = report.rows.iter().map(|r| r.sup_trotter).collect();
    let expected = [
        1.436915753100e-3,
        6.505612501319e-4,
        2.307738586810e-4,
        1.187985387599e-4,
        6.493471879617e-5,
    ];
    for (got, want) in d.iter().zip(expected) {
        assert!(
            (got - want).abs() <= 1e-6 * want,
            "distance drifted: {got:.12e} vs {want:.12e}"
        );
    }
    assert!(report.verdicts.passed());
}
