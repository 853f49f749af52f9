use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epbs-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--blocks", "40", "--seed", "5", "--attack-users", "30", "--out", out.to_str().unwrap()]);
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(csv_rows(&a.join("slots.csv")).len(), 41);
}

#[test]
fn invalid_counts_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["simulate", "--attack-builders", "60", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--attack-builders"));
}

#[test]
fn benign_pos_captures_no_producer_mev() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["simulate", "--mode", "pos", "--attack-validators", "0", "--attack-users", "50", "--blocks", "60", "--out", d]);
    let rows = csv_rows(&dir.path().join("slots.csv"));
    let c = column(&rows, "mev_producer");
    assert!(rows[1..].iter().all(|r| r[c] == "0"));
}

#[test]
fn sweep_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&[
        "sweep", "--blocks", "15", "--attack-users-grid", "0,50,100", "--attack-builders-grid", "0,25,50",
        "--jobs", "4", "--out", d,
    ]);
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 10);
    assert_eq!(fs::read_dir(dir.path().join("cells")).unwrap().count(), 9);

    let single = dir.path().join("single");
    ok(&[
        "sweep", "--mode", "pos", "--blocks", "15", "--attack-users-grid", "0", "--attack-validators-grid", "0",
        "--out", single.to_str().unwrap(),
    ]);
    let rows = csv_rows(&single.join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][..3], ["0", "0", "pos"]);
}

#[test]
fn empty_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = bin(&["sweep", "--attack-users-grid", "0", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    let out = bin(&["sweep", "--attack-users-grid", "", "--attack-builders-grid", "0", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: &str| {
        let out = dir.path().join(jobs);
        ok(&[
            "sweep", "--blocks", "15", "--seed", "8", "--attack-users-grid", "0,100", "--attack-builders-grid", "0,50",
            "--replicates", "2", "--jobs", jobs, "--out", out.to_str().unwrap(),
        ]);
        out
    };
    let (a, b) = (run("1"), run("8"));
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    for cell in fs::read_dir(a.join("cells")).unwrap() {
        let name = cell.unwrap().file_name();
        let m = |root: &Path| fs::read(root.join("cells").join(&name).join("manifest.json")).unwrap();
        assert_eq!(m(&a), m(&b));
    }
}

#[test]
fn restake_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "restake", "--mode", "pos", "--blocks", "30", "--attack-validators", "25", "--target-eth", "1",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(stdout.starts_with("cohort,agents,mean_blocks_to_target"));
    for f in ["stakes.csv", "targets.csv", "slots.csv", "agents.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(csv_rows(&dir.path().join("stakes.csv")).len(), 1 + 30 * 50);
}

#[test]
fn probe_values() {
    let phi = ok(&["probe", "--phi", "--theta", "0.5", "--omega", "1,3"]);
    assert_eq!(phi, "theta,omega,phi\n0.5,1,0.5\n0.5,3,0.75\n");

    let growth = ok(&["probe", "--growth", "builder", "--f", "0.5", "--pi", "0.5"]);
    let rate: f64 = growth.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    // 1 + v(1 - f pi)/S + f pi v / s with s = 32e9, S = 320e9, v = 1e9
    let want = 1.0 + 1e9 * 0.75 / 320e9 + 0.25 * 1e9 / 32e9;
    assert!((rate - want).abs() / want < 1e-12, "{rate}");

    let bad = bin(&["probe", "--phi", "--omega", "0.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(bad.stdout.is_empty());
}

#[test]
fn help_lists_flags_and_defaults() {
    let cases: [(&str, &[&str]); 4] = [
        ("simulate", &["--mode", "--blocks", "--seed", "--attack-builders", "--out", "[default: epbs]"]),
        ("sweep", &["--attack-users-grid", "--attack-builders-grid", "--replicates", "--jobs", "[default: 1]"]),
        ("restake", &["--initial-stakes", "--target-eth", "[default: 100]"]),
        ("probe", &["--phi", "--theta", "--omega", "--growth", "--gamma", "[default: 0.5]"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for f in flags {
            assert!(help.contains(f), "{cmd} help lacks {f}");
        }
    }
}
