use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn wedflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wedflow")).args(args).output().unwrap()
}

fn run_config(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    wedflow(&args)
}

fn with_mode(name: &str, mode: &str, dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs().join(name)).unwrap();
    let path = dir.join(format!("{mode}.toml"));
    fs::write(&path, text.replace("mode = \"solve\"", &format!("mode = \"{mode}\""))).unwrap();
    path
}

/// `(t, value)` rows of a single-node, single-species trajectory CSV.
fn scalar_series(path: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            (cols[0], cols[cols.len() - 1])
        })
        .collect()
}

#[test]
fn missing_horizon_exits_with_parse_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = fs::read_to_string(configs().join("scalar_quadratic.toml")).unwrap();
    fs::write(&path, text.replace("T = 1.0", "")).unwrap();
    let out = run_config(&path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing field `T`"), "{stderr}");
}

#[test]
fn unreadable_config_exits_with_parse_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(&dir.path().join("absent.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nonconvergence_exits_with_status_three_and_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("prey_predator.toml")).unwrap();
    let path = dir.path().join("tight.toml");
    fs::write(&path, text.replace("steps = 64", "steps = 64\nmax_fp_iterations = 2")).unwrap();
    let out_dir = dir.path().join("out");
    let out = run_config(&path, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("solution_failure_history.csv").exists());
    assert!(out_dir.join("manifest.csv").exists());
}

#[test]
fn verify_mode_passes_on_shipped_prey_predator_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = with_mode("prey_predator.toml", "verify", dir.path());
    let out_dir = dir.path().join("out");
    let out = run_config(&config, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0));
    for name in ["verify_energy.csv", "verify_reaction.csv"] {
        let csv = fs::read_to_string(out_dir.join(name)).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert!(!rows.is_empty());
        for row in rows {
            assert!(row.ends_with(",true"), "{name}: {row}");
        }
    }
}

#[test]
fn scalar_solve_tracks_geometric_decay() {
    let dir = tempfile::tempdir().unwrap();
    let solve_dir = dir.path().join("solve");
    let out = run_config(&configs().join("scalar_quadratic.toml"), &solve_dir, &[]);
    assert_eq!(out.status.code(), Some(0));
    let oracle = with_mode("scalar_quadratic.toml", "oracle", dir.path());
    let oracle_dir = dir.path().join("oracle");
    assert_eq!(run_config(&oracle, &oracle_dir, &[]).status.code(), Some(0));

    // oracle: (1 + dt)^{-n} on 8 × 512 steps
    let fine = scalar_series(&oracle_dir.join("oracle.csv"));
    let dt = 1.0 / 4096.0;
    for (n, (_, value)) in fine.iter().enumerate() {
        assert!((value - (1.0f64 + dt).powi(-(n as i32))).abs() < 1e-12);
    }
    // eps = 0.0125: within C·eps^{1/2} of the restricted oracle
    let solution = scalar_series(&solve_dir.join("solution.csv"));
    let coarse = scalar_series(&oracle_dir.join("oracle_restricted.csv"));
    assert_eq!(solution.len(), 513);
    let gap = solution.iter().zip(&coarse).map(|(a, b)| (a.1 - b.1).abs()).fold(0.0, f64::max);
    assert!(gap < 0.02, "gap {gap}");
}

#[test]
fn manifest_hashes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    assert_eq!(run_config(&configs().join("scalar_rate.toml"), &out_dir, &[]).status.code(), Some(0));
    let manifest = fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    let listed: Vec<Vec<&str>> = manifest.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let mut on_disk: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.csv")
        .collect();
    on_disk.sort();
    let mut names: Vec<String> = listed.iter().map(|r| r[0].to_string()).collect();
    names.sort();
    assert_eq!(names, on_disk);
    let config_hash = listed[0][2];
    for row in &listed {
        let bytes = fs::read(out_dir.join(row[0])).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), row[1]);
        assert_eq!(row[2], config_hash);
    }
    let rate = fs::read_to_string(out_dir.join("rate.csv")).unwrap();
    let slope: f64 = rate.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(slope >= 0.45, "slope {slope}");
}

#[test]
fn parallel_sweep_is_deterministic_and_seed_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("scalar_rate.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_config(&config, &a, &["--parallel", "3"]).status.code(), Some(0));
    assert_eq!(run_config(&config, &b, &["--parallel", "3"]).status.code(), Some(0));
    for name in ["sweep.csv", "monitors.csv", "solution_eps4.csv", "manifest.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert_eq!(run_config(&config, &c, &["--seed", "99"]).status.code(), Some(0));
    let hash = |dir: &Path| fs::read_to_string(dir.join("manifest.csv")).unwrap().lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    assert_ne!(hash(&a), hash(&c));
}

#[test]
fn catalog_and_schema_subcommands() {
    let out = wedflow(&["list-models"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("prey_predator") && text.contains("A=5 B=1 C=1 D=1 E=0.1 K=1"));
    assert!(text.contains("combustion") && text.contains("saturates"));
    assert!(text.contains("p_dirichlet_m_power") && text.contains("1 < q < m"));

    let out = wedflow(&["print-config-schema"]);
    assert!(out.status.success());
    let schema = String::from_utf8(out.stdout).unwrap();
    assert!(schema.contains("[problem]") && schema.contains("[solver]") && schema.contains("[run]"));
}
