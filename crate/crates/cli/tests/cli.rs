use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_i3d"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn csv_column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn missing_scene_is_a_usage_error_naming_the_field() {
    let out = run(bin().args(["train", "--iterations", "1"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`scene`"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "scene = \"missing/transforms.json\"\n").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`scene`"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "scene = \"toy:sphere\"\n[field]\nlearning_rte = 1.0\n").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn inverted_config_needs_the_override_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "scene = \"toy:sphere\"\n[toy]\nviews = 1\ntest_views = 0\nimage_size = 8\n[field]\ndensity_table_size = 1024\ncolor_table_size = 4096\niterations = 1\nbatch_size = 8\nsamples_per_ray = 4\n",
    )
    .unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["train", "--allow-inverted", "--config"]).arg(&cfg).arg("--out").arg(dir.path()));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn default_toy_run_reduces_smoothed_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["train", "--scene", "toy:sphere", "--iterations", "200", "--out"]).arg(dir.path()));
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    let loss: Vec<f64> = csv_column(&csv, "loss").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(loss.len(), 200);
    let blocks: Vec<f64> = loss.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{blocks:?}");
}

#[test]
fn fixed_seed_runs_write_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run(bin().args(["train", "--config"]).arg(fixture("tiny.toml")).args(["--iterations", "5", "--out"]).arg(d.path()));
        assert!(out.status.success());
    }
    for f in ["train.csv", "summary.csv", "field.bin"] {
        assert_eq!(fs::read(dirs[0].path().join(f)).unwrap(), fs::read(dirs[1].path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn trace_command_reproduces_checked_in_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.i3dt");
    let out = run(bin().args(["trace", "--config"]).arg(fixture("tiny.toml")).arg("--out").arg(&t));
    assert!(out.status.success());
    assert_eq!(fs::read(&t).unwrap(), fs::read(fixture("tiny.i3dt")).unwrap());
}

#[test]
fn simulate_matches_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("sim.csv");
    let out = run(bin().args(["simulate", "--trace"]).arg(fixture("tiny.i3dt")).arg("--report").arg(&report));
    assert!(out.status.success());
    let got = fs::read_to_string(&report).unwrap();
    assert_eq!(got, fs::read_to_string(fixture("tiny_sim.csv")).unwrap());
    let total = got.lines().last().unwrap().split(',').nth(2).unwrap();
    assert_eq!(total, "4596");
}

#[test]
fn simulate_switches_do_not_slow_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut grid = Vec::new();
    for flags in [&["--no-frm", "--no-bum"][..], &["--no-bum"][..], &[][..]] {
        let report = dir.path().join("r.csv");
        let out = run(bin().args(["simulate", "--trace"]).arg(fixture("tiny.i3dt")).arg("--report").arg(&report).args(flags));
        assert!(out.status.success());
        let csv = fs::read_to_string(&report).unwrap();
        let cycles: u64 = csv
            .lines()
            .filter(|l| l.contains(",grid_"))
            .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
            .sum();
        grid.push(cycles);
    }
    assert!(grid[1] <= grid[0] && grid[2] <= grid[1], "{grid:?}");
}

#[test]
fn truncated_trace_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = fs::read(fixture("tiny.i3dt")).unwrap();
    let cut = dir.path().join("cut.i3dt");
    fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let out = run(bin().args(["analyze", "--trace"]).arg(&cut).arg("--out").arg(dir.path().join("a")));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offset"), "{err}");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&cut, &bad).unwrap();
    let out = run(bin().args(["simulate", "--trace"]).arg(&cut).arg("--report").arg(dir.path().join("r.csv")));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_identical_addresses_gives_unit_windows() {
    use instant3d::trace::{AccessKind, AccessRecord, AccessTrace};
    use instant3d::{Branch, DecomposedFieldConfig, Phase};
    let dir = tempfile::tempdir().unwrap();
    let mut t = AccessTrace::new(DecomposedFieldConfig::default().trace_header());
    for p in 0..500u32 {
        for corner in 0..8u8 {
            t.records.push(AccessRecord {
                iteration: 0,
                phase: Phase::Forward,
                branch: Branch::Density,
                level: 0,
                point_id: p,
                corner,
                address: 42,
                kind: AccessKind::Read,
            });
        }
    }
    let path = dir.path().join("same.i3dt");
    t.save(&path).unwrap();
    let out = run(bin().args(["analyze", "--window", "100", "--trace"]).arg(&path).arg("--out").arg(dir.path().join("a")));
    assert!(out.status.success());
    let windows = fs::read_to_string(dir.path().join("a/windows.csv")).unwrap();
    let unique = csv_column(&windows, "unique");
    assert_eq!(unique.len(), 40);
    assert!(unique.iter().all(|u| u == "1"));
}

#[test]
fn compare_tabulates_both_configs() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cmp.csv");
    let out = run(bin()
        .args(["compare", "--simulate", "--baseline"])
        .arg(fixture("baseline.toml"))
        .arg("--decomposed")
        .arg(fixture("decomposed.toml"))
        .arg("--out")
        .arg(&table));
    assert!(out.status.success());
    let csv = fs::read_to_string(&table).unwrap();
    let color: Vec<u64> = csv_column(&csv, "color_updates").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(color[1] * 2, color[0]);
    let entries: Vec<u64> = csv_column(&csv, "color_entries").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(entries[1] * 4, entries[0]);
    let grid: Vec<u64> = csv_column(&csv, "grid_phase_cycles").iter().map(|v| v.parse().unwrap()).collect();
    assert!(grid[1] < grid[0], "{grid:?}");

    let same = dir.path().join("same.csv");
    let out = run(bin().args(["compare", "--baseline"]).arg(fixture("baseline.toml")).arg("--decomposed").arg(fixture("baseline.toml")).arg("--out").arg(&same));
    assert!(out.status.success());
    let csv = fs::read_to_string(&same).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn compare_rejects_different_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("other.toml");
    let text = fs::read_to_string(fixture("decomposed.toml")).unwrap().replace("toy:sphere", "toy:spheres");
    fs::write(&other, text).unwrap();
    let out = run(bin().args(["compare", "--baseline"]).arg(fixture("baseline.toml")).arg("--decomposed").arg(&other).arg("--out").arg(dir.path().join("c.csv")));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different scenes"));
}
