use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vts_core::retrieval::{write_code_set, BinaryCode, BinaryCodeSet};

fn vts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vts")).args(args).output().expect("run vts")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const MINI_PROTOCOL: &str = r#"{"name": "mini", "rule": {"kind": "per_class", "train_per_class": 6, "query_per_class": 3, "database": "rest"}, "cutoff": 40}"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        std::fs::write(f.path("mini.json"), MINI_PROTOCOL).unwrap();
        let out = vts(&["make-synth", "--out", f.s("data.vtsd"), "--classes", "4", "--per-class", "15", "--image-size", "16"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> &str {
        Box::leak(self.path(name).to_string_lossy().into_owned().into_boxed_str())
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train", "--data", self.s("data.vtsd"), "--protocol", self.s("mini.json"), "--objective", "greedyhash",
            "--bits", "16", "--seed", "7", "--eval-every", "1", "--batch-size", "8", "--out", self.s(out),
        ];
        if !extra.contains(&"--epochs") {
            args.extend_from_slice(&["--epochs", "2"]);
        }
        args.extend_from_slice(extra);
        vts(&args)
    }
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let f = Fixture::new();
    let out = f.train("m.vtsw", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("best mAP@40 = "), "{}", stdout(&out));
    assert!(f.path("m.vtsw").is_file() && f.path("m.vtsw.json").is_file());
    let csv = std::fs::read_to_string(f.path("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config: {") && lines[0].contains("\"greedyhash\"") && lines[0].contains("\"mini\""));
    assert_eq!(lines[1], "epoch,split,loss,map");
    assert_eq!(lines.len(), 6);
    assert!(lines[2].starts_with("1,train,") && lines[3].starts_with("1,query,,"));

    let again = f.train("m2.vtsw", &["--metrics", f.s("m.csv.2")]);
    assert_eq!(code(&again), 0);
    let csv2 = std::fs::read_to_string(f.path("m.csv.2")).unwrap();
    assert_eq!(csv.lines().skip(1).collect::<Vec<_>>(), csv2.lines().skip(1).collect::<Vec<_>>());
    assert_eq!(std::fs::read(f.path("m.vtsw")).unwrap(), std::fs::read(f.path("m2.vtsw")).unwrap());

    let inspect = vts(&["inspect-weights", f.s("m.vtsw")]);
    assert_eq!(code(&inspect), 0);
    assert!(stdout(&inspect).contains("block1.attn.w_q") && stdout(&inspect).contains("sidecar"));
}

#[test]
fn config_file_precedence_and_validation() {
    let f = Fixture::new();
    std::fs::write(f.path("cfg.json"), r#"{"bits": 32, "epochs": 1, "objective": "dpn"}"#).unwrap();
    let out = f.train("c.vtsw", &["--config", f.s("cfg.json"), "--epochs", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(f.path("c.csv")).unwrap();
    // --objective and --bits flags beat the file
    assert!(csv.contains("\"objective\":\"greedyhash\"") && csv.contains("\"bits\":16"));

    std::fs::write(f.path("bad.json"), r#"{"bitz": 32}"#).unwrap();
    let out = f.train("d.vtsw", &["--config", f.s("bad.json")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bitz"));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let out = vts(&["train", "--bits", "0"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = vts(&["train", "--data", f.s("no/such/dir"), "--protocol", "cifar10@54000", "--out", f.s("x.vtsw")]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).lines().count() == 1);
    let out = vts(&["train", "--protocol", "cifar10@54000", "--out", f.s("x.vtsw")]);
    assert_eq!(code(&out), 3);
    let out = f.train("n.vtsw", &["--lr", "1e30", "--epochs", "3"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = vts(&["train", "--objective", "nope"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn encode_inspect_and_determinism() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("m.vtsw", &["--epochs", "1"])), 0);
    let enc = |split: &str, out: &str| {
        vts(&["encode", "--weights", f.s("m.vtsw"), "--split", split, "--data", f.s("data.vtsd"), "--protocol", f.s("mini.json"), "--seed", "7", "--out", f.s(out)])
    };
    for (split, n) in [("query", 12), ("database", 24)] {
        let out = enc(split, &format!("{split}.vtsc"));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let inspect = vts(&["inspect-weights", f.s(&format!("{split}.vtsc"))]);
        assert!(stdout(&inspect).contains(&format!("code set: {n} items, 16 bits")), "{}", stdout(&inspect));
    }
    assert_eq!(code(&enc("database", "db2.vtsc")), 0);
    assert_eq!(std::fs::read(f.path("database.vtsc")).unwrap(), std::fs::read(f.path("db2.vtsc")).unwrap());

    let out = vts(&["eval", "--query", f.s("query.vtsc"), "--database", f.s("database.vtsc"), "--pr-out", f.s("pr.csv")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("mAP@24 = "));
    let pr = std::fs::read_to_string(f.path("pr.csv")).unwrap();
    assert_eq!(pr.lines().count(), 22);
    assert_eq!(pr.lines().next(), Some("recall,precision"));

    let mut bytes = std::fs::read(f.path("m.vtsw")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(f.path("m.vtsw"), bytes).unwrap();
    let out = enc("query", "q3.vtsc");
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("m.vtsw"));
}

fn write_codes(path: &Path, bits: usize, rows: &[(u64, u32, &str)]) {
    let mut set = BinaryCodeSet::new(bits);
    for &(id, label, code) in rows {
        set.push(id, &[label], &BinaryCode::parse(code).unwrap()).unwrap();
    }
    write_code_set(path, &set).unwrap();
}

#[test]
fn eval_identical_unique_codes_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.vtsc");
    write_codes(&p, 4, &[(0, 0, "0000"), (1, 1, "0011"), (2, 2, "1100"), (3, 3, "1111")]);
    let p = p.to_str().unwrap();
    let out = vts(&["eval", "--query", p, "--database", p]);
    assert_eq!(stdout(&out).trim(), "mAP@4 = 1.000000");
    let pr = vts(&["pr-curve", "--query", p, "--database", p]);
    assert_eq!(code(&pr), 0);
    assert_eq!(stdout(&pr).lines().count(), 22);

    let q = dir.path().join("q8.vtsc");
    write_codes(&q, 8, &[(0, 0, "00000000")]);
    let out = vts(&["eval", "--query", q.to_str().unwrap(), "--database", p]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("full.vtsw", &["--epochs", "2"])), 0);
    let out = f.train("part.vtsw", &["--epochs", "1", "--checkpoint", f.s("ck.vtsw")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // the checkpoint's saved config (1 epoch) wins, so extend it through a config edit
    let side = f.path("ck.vtsw.json");
    let text = std::fs::read_to_string(&side).unwrap().replace("\"epochs\": 1", "\"epochs\": 2");
    std::fs::write(&side, text).unwrap();
    let out = f.train("part.vtsw", &["--resume", f.s("ck.vtsw")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = |p: &str| std::fs::read_to_string(f.path(p)).unwrap().lines().skip(1).map(String::from).collect::<Vec<_>>();
    assert_eq!(rows("full.csv"), rows("part.csv"));
}

#[test]
fn help_lists_defaults() {
    let out = vts(&["train", "--help"]);
    let text = stdout(&out);
    for flag in ["--model", "--objective", "--bits", "--protocol", "--seed", "--epochs", "--lr", "--config", "--out"] {
        assert!(text.contains(flag), "{flag} missing");
    }
    assert!(text.contains("[default: 150]") && text.contains("[default: 1e-5]"));
    for cmd in ["encode", "eval", "pr-curve", "make-synth", "inspect-weights"] {
        assert_eq!(code(&vts(&[cmd, "--help"])), 0);
    }
}
