use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
name = "cli"
kind = "interacting"
seed = 5
[grid]
steps = 8
[sizes]
ns = [2, 4, 8]
reps = 8
batch = 64
min_scenarios = 0
cloud_size = 64
reference_cloud = 256
[study]
n = 4
"#;

fn chaoslab(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chaoslab"));
    cmd.args(args).env_remove("CHAOSLAB_SEED");
    if let Some(s) = seed_env {
        cmd.env("CHAOSLAB_SEED", s);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn seed_flag_and_environment_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SCENARIO);
    let base = stdout(&chaoslab(&["validate", "--scenario", &sc], None));
    assert!(base.contains("seed = 5"));
    let env = stdout(&chaoslab(&["validate", "--scenario", &sc], Some("11")));
    assert!(env.contains("seed = 11"));
    assert_ne!(base.lines().next(), env.lines().next());
    let flag = stdout(&chaoslab(&["validate", "--scenario", &sc, "--seed", "12"], Some("11")));
    assert!(flag.contains("seed = 12"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SCENARIO);
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "3", "1"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = chaoslab(
            &["rate-study", "--scenario", &sc, "--out", out.to_str().unwrap(), "--threads", threads],
            None,
        );
        let csv = stdout(&o).lines().next().unwrap().to_string();
        csvs.push(std::fs::read(csv).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
    assert!(String::from_utf8_lossy(&csvs[0]).starts_with("n,estimate,stderr,reference\n"));
}

#[test]
fn failures_exit_nonzero_with_an_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "name = \"x\"\nkind = \"interacting\"\n[rates]\np = 2.0\nq = 2.0\n");
    let o = chaoslab(&["rate-study", "--scenario", &bad, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("E_VALIDATION"));

    let tails = write(dir.path(), "t.toml", &format!("{SCENARIO}tail_epsilons = [50.0]\n"));
    let o = chaoslab(&["tails", "--scenario", &tails, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("E_PRECONDITION"));

    let o = chaoslab(&["simulate", "--scenario", "/nonexistent.toml"], None);
    assert!(!o.status.success());
}

#[test]
fn distance_between_csv_clouds() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "x\n0\n1\n2\n");
    let b = write(dir.path(), "b.csv", "x\n3\n1\n2\n");
    for metric in ["line", "exact"] {
        let d: f64 = stdout(&chaoslab(&["distance", &a, &b, "--metric", metric, "--p", "1"], None))
            .trim()
            .parse()
            .unwrap();
        assert!((d - 1.0).abs() < 1e-12, "{metric}: {d}");
    }
    let e: f64 = stdout(&chaoslab(&["distance", &a, &b, "--metric", "entropic", "--p", "1", "--reg", "0.01"], None))
        .trim()
        .parse()
        .unwrap();
    assert!(e >= 1.0 - 1e-9 && e < 1.1, "{e}");

    let pa = write(dir.path(), "pa.csv", "0,0\n1,1\n");
    let pb = write(dir.path(), "pb.csv", "0,0.5\n1,1\n");
    let s: f64 = stdout(&chaoslab(&["distance", &pa, &pb, "--metric", "sup", "--nodes", "2", "--p", "1"], None))
        .trim()
        .parse()
        .unwrap();
    assert!((s - 0.25).abs() < 1e-12, "{s}");

    let c = write(dir.path(), "c.csv", "0\n1\n");
    assert!(!chaoslab(&["distance", &a, &c], None).status.success());
}

#[test]
fn bundle_dumps_have_the_expected_size() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SCENARIO);
    let bin = dir.path().join("b.bin");
    stdout(&chaoslab(
        &["dump-bundle", "--scenario", &sc, "--n", "3", "--systems", "2", "--format", "bin", "--output", bin.to_str().unwrap()],
        None,
    ));
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), 3 * 2 * 8 * 8);
    let csv = dir.path().join("b.csv");
    stdout(&chaoslab(
        &["dump-bundle", "--scenario", &sc, "--n", "3", "--systems", "2", "--output", csv.to_str().unwrap()],
        None,
    ));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 8);
    assert!(text.starts_with("path,stream,step,dw_0\n"));
}
