use std::process::Command;

use lod_elasticity::experiment::parse_csv;

fn binary() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lod-elasticity"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run_constant(dir: &std::path::Path) -> Vec<u8> {
    let status = binary()
        .args(["run", "--case", "constant", "--fine", "16", "--coarse", "2,4,8", "--plots", "--out"])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.join("constant.svg").exists());
    std::fs::read(dir.join("constant.csv")).unwrap()
}

#[test]
fn csv_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_constant(a.path());
    assert_eq!(first, run_constant(b.path()));
    let rows = parse_csv(std::str::from_utf8(&first).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), [1, 1, 2]);
    assert!(rows.windows(2).all(|w| w[1].err_gfem < w[0].err_gfem));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "# decay study\ncase = decay\nfine = 32\ncoarse = 2\n").unwrap();
    let status = binary()
        .args(["run", "--coarse", "4", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "case = constant\nfine = 16\ncoarse = 3\n").unwrap();
    let out = binary().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty() || !out.stdout.is_empty());

    let unknown = binary().args(["run", "--case", "nonsense", "--fine", "8", "--coarse", "2"]).output().unwrap();
    assert!(!unknown.status.success());
}
