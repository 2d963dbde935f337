use std::fs;
use std::process::Command;

fn fluxdg(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fluxdg")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').nth(col).unwrap().to_string())
        .collect()
}

#[test]
fn constants_reports_xi2() {
    let (code, out, _) = fluxdg(&["constants"]);
    assert_eq!(code, 0);
    let xi2: f64 = column(&out, "xi2")[0].parse().unwrap();
    assert!((xi2 - 0.1).abs() <= 1e-15);
    assert_eq!(column(&out, "beta")[0], "-4.0000000000000002e-1");
}

#[test]
fn solve_zero_source() {
    let (code, out, _) = fluxdg(&["solve", "--set", "problem=zero", "--set", "nx=4", "--set", "ny=4"]);
    assert_eq!(code, 0);
    let max: f64 = column(&out, "max_abs_coeff")[0].parse().unwrap();
    assert!(max <= 1e-12);
}

#[test]
fn converge_three_rows() {
    let (code, out, _) = fluxdg(&["converge"]);
    assert_eq!(code, 0);
    let l2: Vec<f64> = column(&out, "l2_error").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(l2.len(), 3);
    assert!(l2[1] < l2[0] && l2[2] < l2[1]);
}

#[test]
fn config_file_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let outdir = dir.path().join("out");
    fs::write(
        &cfg,
        "schema_version = 1\nnx = 4\nny = 4\nproblem = \"c\"\nvtk_resolution = 8\ndump_matrix = true\n\n[solver]\nmethod = \"direct\"\n",
    )
    .unwrap();
    let (code, _, err) = fluxdg(&["solve", "--config", cfg.to_str().unwrap(), "--output-dir", outdir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for f in ["solve.csv", "solution.vtk", "mesh.txt", "matrix.txt", "rhs.txt"] {
        assert!(outdir.join(f).exists(), "{f} missing");
    }
    let vtk = fs::read_to_string(outdir.join("solution.vtk")).unwrap();
    assert!(vtk.contains("DIMENSIONS 8 8 1"));
    let matrix = fs::read_to_string(outdir.join("matrix.txt")).unwrap();
    assert!(matrix.starts_with("# 144 144 "));
    // Case c lies in the p = 2 space: the solve reproduces it.
    let solve = fs::read_to_string(outdir.join("solve.csv")).unwrap();
    let l2: f64 = column(&solve, "l2_error")[0].parse().unwrap();
    assert!(l2 < 1e-11, "{l2}");
}

#[test]
fn conserve_gate_passes() {
    let (code, out, _) = fluxdg(&["conserve", "--set", "problem=b", "--set", "nx=4", "--set", "ny=4"]);
    assert_eq!(code, 0);
    assert_eq!(column(&out, "residual").len(), 16);
}

#[test]
fn errors_exit_one() {
    let (code, _, err) = fluxdg(&["solve", "--set", "sigma=-1"]);
    assert_eq!(code, 1);
    assert!(err.contains("sigma"), "{err}");
    let (code, _, _) = fluxdg(&["solve", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code, 1);
    let (code, _, err) = fluxdg(&["lemmas"]);
    assert_eq!(code, 1);
    assert!(err.contains("seed"));
    let (code, _, _) = fluxdg(&["infsup", "--set", "nx=40", "--set", "ny=40"]);
    assert_eq!(code, 1);
}

#[test]
fn failed_gate_exits_two() {
    // M_h exceeds the flat-exponent continuity bound M = 3 from 8x8 on.
    let (code, out, _) = fluxdg(&["infsup", "--set", "nx=8", "--set", "ny=8"]);
    assert_eq!(code, 2);
    assert_eq!(column(&out, "continuity_holds")[0], "false");
}

#[test]
fn lemmas_deterministic_with_seed() {
    let args = ["lemmas", "--set", "nx=2", "--set", "ny=2", "--set", "seed=9", "--set", "samples=20"];
    let (c1, a, _) = fluxdg(&args);
    let (c2, b, _) = fluxdg(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
}
