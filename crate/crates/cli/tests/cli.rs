use std::path::Path;
use std::process::{Command, Output};

fn drnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn drnet")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const SMALL: &str = "\
# tiny classification run
task = cls
points = 48
k = 4
d_max = 3
train_per_class = 3
test_per_class = 1
epochs = 2
batch = 4
";

fn small_run(dir: &Path) {
    std::fs::write(dir.join("run.cfg"), SMALL).unwrap();
    let out = drnet(dir, &["gen", "--config", "run.cfg"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out = drnet(dir, &["train", "--config", "run.cfg"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_run(dir.path());
    assert!(dir.path().join("data/manifest.txt").is_file());
    let log = std::fs::read_to_string(dir.path().join("run/train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,lr,ce,er1,er2,er3,er4,train_acc,val_metric");
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("run/last.ckpt").is_file());

    let out = drnet(dir.path(), &["eval", "--config", "run.cfg", "--csv", "m.csv"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("metric,value\n"));
    assert!(csv.contains("overall_acc,"));
    let again = drnet(dir.path(), &["eval", "--config", "run.cfg"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_run(a.path());
    std::fs::write(b.path().join("run.cfg"), SMALL).unwrap();
    assert!(drnet(b.path(), &["gen", "--config", "run.cfg"]).status.success());
    assert!(drnet(b.path(), &["train", "--config", "run.cfg", "--stop-after", "1"]).status.success());
    assert!(drnet(b.path(), &["train", "--config", "run.cfg", "--resume"]).status.success());
    for f in ["run/train_log.csv", "run/last.ckpt", "run/best.ckpt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn dilation_dump_has_a_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    small_run(dir.path());
    let out = drnet(
        dir.path(),
        &["dilation-dump", "--config", "run.cfg", "--checkpoint", "run/best.ckpt", "--cloud", "data/test/00000.txt"],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("x,y,z,dilation_factor,gate"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 48);
    for r in rows {
        let f: Vec<f64> = r.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f.len(), 5);
        assert!((1.0..=3.0).contains(&f[3]) && f[3].fract() == 0.0);
        assert!(f[4] > 0.5 && f[4] < 5.5);
    }
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = drnet(dir.path(), &["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("gradient checks passed"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(drnet(p, &["--help"]).status.code(), Some(0));
    assert_eq!(drnet(p, &["frobnicate"]).status.code(), Some(1));

    let out = drnet(p, &["gen", "--set", "colour=blue"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("colour"));
    assert_eq!(drnet(p, &["gen", "--set", "points=10"]).status.code(), Some(1));

    let out = drnet(p, &["eval", "--checkpoint", "missing.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).starts_with("error: "));
    assert_eq!(drnet(p, &["train"]).status.code(), Some(2));

    std::fs::write(p.join("bad.txt"), "1 2\n").unwrap();
    std::fs::write(p.join("junk.ckpt"), "DRNC").unwrap();
    let out = drnet(p, &["dilation-dump", "--checkpoint", "junk.ckpt", "--cloud", "bad.txt"]);
    assert_eq!(out.status.code(), Some(2));
}
