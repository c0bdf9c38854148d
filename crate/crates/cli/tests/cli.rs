use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
strategy = "grid"
n_tuples = 120
n_holdout = 9
seed = 7
[fgn]
hidden = [16]
epochs = 2
pairs_per_epoch = 2000
[bgn]
encoder_hidden = [16]
decoder_hidden = [16]
latent = 4
batch_size = 16
epochs = 1
examples_per_epoch = 64
[eval]
samples = 20
gradient_suite = false
embed = ["normal"]
"#;

fn gaitnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.toml"), config).unwrap();
        Self { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run_ok(&self, args: &[&str]) -> Output {
        let o = gaitnet(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    }

    fn generate(&self, out: &str) {
        let cfg = self.p("cfg.toml");
        self.run_ok(&["generate", "--config", s(&cfg), "--out", s(&self.p(out))]);
    }

    fn train_all(&self) {
        self.generate("train.bgnd");
        let cfg = self.p("cfg.toml");
        self.run_ok(&[
            "train-forward",
            "--config",
            s(&cfg),
            "--data",
            s(&self.p("train.bgnd")),
            "--out",
            s(&self.p("fgn.bgnw")),
        ]);
        self.run_ok(&[
            "train-backward",
            "--config",
            s(&cfg),
            "--data",
            s(&self.p("train.bgnd")),
            "--fgn",
            s(&self.p("fgn.bgnw")),
            "--out",
            s(&self.p("experts.bgnb")),
        ]);
    }
}

#[test]
fn generate_is_byte_identical_on_rerun() {
    let w = Workspace::new(TINY);
    w.generate("a.bgnd");
    w.generate("b.bgnd");
    let read = |n: &str| std::fs::read(w.p(n)).unwrap();
    assert_eq!(read("a.bgnd"), read("b.bgnd"));
    assert_eq!(read("a.holdout.bgnd"), read("b.holdout.bgnd"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let w = Workspace::new("[data]\nstrategy = \"corners\"\n");
    let o = gaitnet(&["generate", "--config", s(&w.p("cfg.toml")), "--out", s(&w.p("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strategy"), "{}", stderr(&o));

    let w = Workspace::new("[data]\nn_tuplez = 3\n");
    let o = gaitnet(&["generate", "--config", s(&w.p("cfg.toml")), "--out", s(&w.p("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_tuplez"));

    let o = gaitnet(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_generation_warns_but_succeeds() {
    let w = Workspace::new("[data]\nn_tuples = 0\nn_holdout = 0\n");
    let o = w.run_ok(&["generate", "--config", s(&w.p("cfg.toml")), "--out", s(&w.p("e.bgnd"))]);
    assert!(stderr(&o).contains("warning"));
    assert!(w.p("e.bgnd").exists());
}

#[test]
fn backward_training_without_forward_weights_names_the_missing_file() {
    let w = Workspace::new(TINY);
    w.generate("train.bgnd");
    let o = gaitnet(&[
        "train-backward",
        "--data",
        s(&w.p("train.bgnd")),
        "--fgn",
        s(&w.p("absent.bgnw")),
        "--out",
        s(&w.p("experts.bgnb")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    assert!(e.contains("absent.bgnw") && e.contains("forward"), "{e}");
}

#[test]
fn full_pipeline_is_reproducible() {
    let w = Workspace::new(TINY);
    w.train_all();

    // Final CSV row matches the reported final loss.
    let out = w.run_ok(&[
        "train-forward",
        "--config",
        s(&w.p("cfg.toml")),
        "--data",
        s(&w.p("train.bgnd")),
        "--out",
        s(&w.p("fgn2.bgnw")),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let reported: f64 = stdout
        .split("final loss ")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let csv = std::fs::read_to_string(w.p("fgn2.bgnw.loss.csv")).unwrap();
    let last: f64 = csv.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(reported, last);
    assert_eq!(
        std::fs::read(w.p("fgn.bgnw")).unwrap(),
        std::fs::read(w.p("fgn2.bgnw")).unwrap()
    );

    // Predict: observation from the holdout, seeded output.
    w.run_ok(&[
        "export-gait",
        "--data",
        s(&w.p("train.holdout.bgnd")),
        "--index",
        "1",
        "--out",
        s(&w.p("obs.bgno")),
    ]);
    for dir in ["p1", "p2"] {
        w.run_ok(&[
            "--deterministic",
            "predict",
            "--bundle",
            s(&w.p("experts.bgnb")),
            "--gait",
            s(&w.p("obs.bgno")),
            "--samples",
            "25",
            "--out-dir",
            s(&w.p(dir)),
        ]);
    }
    let samples = std::fs::read_to_string(w.p("p1/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 26);
    assert_eq!(samples, std::fs::read_to_string(w.p("p2/samples.csv")).unwrap());

    // Evaluate twice with different thread counts.
    for (dir, threads) in [("r1", "1"), ("r2", "3")] {
        w.run_ok(&[
            "--threads",
            threads,
            "--deterministic",
            "evaluate",
            "--config",
            s(&w.p("cfg.toml")),
            "--bundle",
            s(&w.p("experts.bgnb")),
            "--holdout",
            s(&w.p("train.holdout.bgnd")),
            "--fgn",
            s(&w.p("fgn.bgnw")),
            "--out-dir",
            s(&w.p(dir)),
        ]);
    }
    let summary = std::fs::read_to_string(w.p("r1/summary.txt")).unwrap();
    for id in 1..=10 {
        assert!(
            summary.lines().any(|l| l.contains(&format!("] {id:>2} "))),
            "criterion {id} missing from\n{summary}"
        );
    }
    for name in ["summary.txt", "forward_cases.csv", "realizability.csv", "coverage.csv", "embedding_normal.svg"] {
        assert_eq!(
            std::fs::read(w.p("r1").join(name)).unwrap(),
            std::fs::read(w.p("r2").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn evaluate_lists_every_missing_artifact() {
    let w = Workspace::new(TINY);
    let o = gaitnet(&[
        "evaluate",
        "--bundle",
        s(&w.p("nope.bgnb")),
        "--holdout",
        s(&w.p("nope.bgnd")),
        "--out-dir",
        s(&w.p("r")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    assert!(e.contains("nope.bgnb") && e.contains("nope.bgnd"), "{e}");
}

#[test]
fn malformed_gait_file_reports_byte_offset() {
    let w = Workspace::new(TINY);
    w.train_all();
    w.run_ok(&["export-gait", "--preset", "crouch", "--out", s(&w.p("ok.bgno"))]);
    let mut bytes = std::fs::read(w.p("ok.bgno")).unwrap();
    bytes.truncate(bytes.len() - 12);
    std::fs::write(w.p("bad.bgno"), bytes).unwrap();
    let o = gaitnet(&[
        "predict",
        "--bundle",
        s(&w.p("experts.bgnb")),
        "--gait",
        s(&w.p("bad.bgno")),
        "--out-dir",
        s(&w.p("pp")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("byte offset"), "{}", stderr(&o));
}

#[test]
fn shipped_config_spells_out_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = gaitnet_core::pipeline::PipelineConfig::load(&path).unwrap();
    let default = gaitnet_core::pipeline::PipelineConfig::default();
    assert_eq!(cfg.to_toml(), default.to_toml());
}
