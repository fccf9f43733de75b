use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcafuse")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data", &s(&dir.path().join("nowhere")), "--out", &s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn unknown_flag_exits_with_two() {
    assert_eq!(run(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run(&["synth", "--out", &s(d.path()), "--seed", "4", "--n-per-class", "3", "--preset", "pause-only"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 6 * 3 + 1);
    assert!(fa == fb);
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--seeds", "2", "--coords", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("model:gca"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn validate_flags_a_bad_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&["synth", "--out", &s(&data), "--n-per-class", "2"]).status.success());
    assert_eq!(run(&["validate", "--data", &s(&data)]).status.code(), Some(0));

    let manifest = data.join("S001").join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("\"dim\": 64", "\"dim\": 65")).unwrap();
    let o = run(&["validate", "--data", &s(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("S001/manifest.json\tinvalid"));
}

#[test]
fn full_pipeline_with_explain_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let p = |x: &str| s(&dir.path().join(x));
    std::fs::write(dir.path().join("run.toml"), "[train]\nmax_epochs = 3\nwarmup_epochs = 1\n").unwrap();
    let steps: [Vec<String>; 6] = [
        vec!["synth".into(), "--out".into(), p("data"), "--n-per-class".into(), "6".into()],
        vec!["align".into(), "--data".into(), p("data"), "--out".into(), p("aligned")],
        vec!["train".into(), "--data".into(), p("aligned"), "--out".into(), p("run"), "--config".into(), p("run.toml"), "--protocol".into(), "kfold3".into()],
        vec!["eval".into(), "--checkpoint".into(), p("run/model.cgna"), "--data".into(), p("aligned")],
        vec!["explain".into(), "--checkpoint".into(), p("run/model.cgna"), "--data".into(), p("aligned"), "--subject".into(), "S003".into(), "--steps".into(), "32".into(), "--out".into(), p("attr.txt"), "--html".into(), p("attr.html")],
        vec!["stats".into(), "--data".into(), p("data")],
    ];
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run(&args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let report = std::fs::read_to_string(dir.path().join("attr.txt")).unwrap();
    assert!(report.starts_with("# subject\tS003"));
    let stats = run(&["stats", "--data", &p("data")]);
    assert!(String::from_utf8_lossy(&stats.stdout).starts_with("class\tsubjects"));
    for f in ["run/report.json", "run/metrics.tsv", "run/history.json", "run/model.cgna", "attr.html"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
