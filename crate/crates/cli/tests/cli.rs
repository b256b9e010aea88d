use std::process::Command;

use star_fri::experiments::read_metrics;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_star-fri"))
}

#[test]
fn sweep_writes_metrics_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--trials", "3", "--snr-db", "10,20", "--methods", "m2,fft", "--workers", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.trials == 3));
    let snrs: Vec<_> = rows.iter().map(|r| r.snr_db).collect();
    assert!(snrs.contains(&Some(10.0)) && snrs.contains(&Some(20.0)));
    assert!(dir.path().join("run.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("M2"));
}

#[test]
fn flags_take_precedence_over_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "experiment = \"snr_sweep\"\ntrials = 7\nt_s = 64\nseed = 5\n").unwrap();
    let out = bin().args(["snr", "--print-config", "--trials", "2", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("trials = 2"), "{text}");
    assert!(text.contains("t_s = 64"), "{text}");
    assert!(text.contains("seed = 5"), "{text}");
}

#[test]
fn mismatched_or_invalid_configs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "experiment = \"timing\"\n").unwrap();
    let out = bin().args(["snr", "--print-config", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    std::fs::write(&cfg, "experiment = \"snr_sweep\"\nbogus = 1\n").unwrap();
    let out = bin().args(["snr", "--print-config", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["sweep", "--print-config", "--scenario", "3"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario"));
}

#[test]
fn help_documents_full_space_scoring() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("180 - theta"));
    for sub in ["spectrum", "sweep", "convergence", "snr", "timing", "aperture"] {
        assert!(text.contains(sub), "missing {sub}");
    }
}
