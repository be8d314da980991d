use std::path::{Path, PathBuf};
use std::process::Command;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn run(args: &[&str], out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_flatzoom"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

#[test]
fn od_solve_on_uprime_squared_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("od_uprime2.json");
    assert_eq!(
        run(
            &["od-solve", "--input", input.to_str().unwrap()],
            dir.path()
        ),
        0
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("od-solve.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], true);
    assert!(dir.path().join("od-solve.csv").exists());
}

#[test]
fn conformal_check_on_hyperbolic_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("hyperbolic.json");
    assert_eq!(
        run(
            &["conformal-check", "--input", input.to_str().unwrap()],
            dir.path()
        ),
        0
    );
}

#[test]
fn naive_alpinist_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["alpinist", "--naive"], dir.path()), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("alpinist.json")).unwrap())
            .unwrap();
    assert_eq!(report["details"]["divergent"], true);
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"eps\": ").unwrap();
    assert_eq!(
        run(&["od-solve", "--input", bad.to_str().unwrap()], dir.path()),
        1
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(
        run(&["radii", "--input", missing.to_str().unwrap()], dir.path()),
        1
    );
    assert_eq!(run(&["alpinist", "--grid", "8"], dir.path()), 1);
    assert_eq!(
        run(
            &[
                "od-solve",
                "--horizon",
                "1",
                "--input",
                data("od_uprime2.json").to_str().unwrap()
            ],
            dir.path()
        ),
        1
    );
    assert_eq!(run(&["no-such-command"], dir.path()), 1);
}

#[test]
fn failing_certificate_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data("flatzoom_hyperbolic.json")).unwrap())
            .unwrap();
    file["certificate"]["P"][0]["coeff"] = "1".into();
    let path = dir.path().join("weak.json");
    std::fs::write(&path, file.to_string()).unwrap();
    assert_eq!(
        run(&["flatzoom", "--input", path.to_str().unwrap()], dir.path()),
        2
    );
}

#[test]
fn reports_are_byte_identical_for_a_fixed_seed() {
    let cases: [(&str, Option<&str>); 4] = [
        ("od-solve", Some("od_uprime2.json")),
        ("lorentz", None),
        ("curvature", Some("hyperbolic.json")),
        ("radii", Some("radii_cylinder.json")),
    ];
    for (cmd, input) in cases {
        let outs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut args = vec![cmd.to_string(), "--seed".into(), "11".into()];
                if let Some(f) = input {
                    args.push("--input".into());
                    args.push(data(f).to_str().unwrap().to_string());
                }
                let args: Vec<&str> = args.iter().map(String::as_str).collect();
                run(&args, dir.path());
                (
                    std::fs::read(dir.path().join(format!("{cmd}.json"))).unwrap(),
                    std::fs::read(dir.path().join(format!("{cmd}.csv"))).unwrap(),
                )
            })
            .collect();
        assert_eq!(outs[0], outs[1], "{cmd} output differs between runs");
    }
}
