use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arrowtopos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("arrowtopos-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn solve_pullback() {
    let o = run(&["solve", fixture("pullback.diagram").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("vertex P = { (x1,y1), (x1,y2) }"), "{s}");
}

#[test]
fn solve_cube_reports_six_faces() {
    let o = run(&["solve", fixture("cube.diagram").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches(": commutes").count(), 6);
}

#[test]
fn validate_and_altered_square() {
    let good = fixture("square.diagram");
    assert_eq!(run(&["validate", good.to_str().unwrap()]).status.code(), Some(0));

    let text = std::fs::read_to_string(&good).unwrap();
    let altered = text.replace("i3 -> j2", "i3 -> j1");
    assert_ne!(altered, text, "fixture changed shape");
    let path = scratch("altered.diagram");
    std::fs::write(&path, altered).unwrap();
    let o = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("at i3"), "{}", stdout(&o));
}

#[test]
fn input_errors_exit_two() {
    let path = scratch("bad.diagram");
    std::fs::write(&path, "set X = {a}\nfn f : X -> Y {a -> b}\n").unwrap();
    let o = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(run(&["validate", "/nonexistent/file.diagram"]).status.code(), Some(2));
    assert_eq!(run(&["laws", "--tolerance", "nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["equivariance", "--n", "0"]).status.code(), Some(2));
}

#[test]
fn classify_and_expo() {
    let o = run(&["classify", fixture("classify.diagram").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("b -> 1/2"), "{s}");
    assert!(s.contains("recovers the subobject: true"));

    let o = run(&["expo", fixture("expo.diagram").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("|E| = 1, |F| = 2"));
}

#[test]
fn force_agrees_with_oracle() {
    let file = fixture("force.diagram");
    let o = run(&["force", file.to_str().unwrap(), "(or (in x S) (not (in x S)))"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("at x = (b, p): false"), "{s}");
    assert!(s.contains("disagrees at 0 of them"));

    let o = run(&["force", file.to_str().unwrap(), "(in nope S)"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn laws_pass_and_write_csv() {
    let out = scratch("laws.csv");
    let o = run(&["laws", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("name,status,deviation,tolerance\n"));
    assert!(!csv.contains(",fail,"));
}

#[test]
fn equivariance_tolerance_override_fails() {
    let ok = run(&["equivariance", "--trials", "10"]);
    assert_eq!(ok.status.code(), Some(0));
    let strict = run(&["equivariance", "--trials", "10", "--tolerance", "equivariance=1e-20"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(stdout(&strict).contains("fail"));
}

#[test]
fn train_is_deterministic() {
    let file = fixture("train.diagram");
    let (a, b) = (scratch("trace-a.csv"), scratch("trace-b.csv"));
    for out in [&a, &b] {
        let o = run(&["train", file.to_str().unwrap(), "--seed", "7", "--steps", "200", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 202);
}
