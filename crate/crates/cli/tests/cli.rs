use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use zcnas::archspace::SearchSpaceSpec;
use zcnas::io::{read_file, Checkpoint};
use zcnas::supernet::SupernetWeights;

const SPACE: &str = "\
embed_dim = [8, 16, 8]
qkv_dim = [8, 16, 8]
mlp_ratio = [1.0, 2.0, 1.0]
heads = [1, 2, 1]
depth = [1, 2, 1]
patch_size = 2
image_resolution = 4
num_classes = 10
in_channels = 1
";

fn run_config(steps: usize) -> String {
    format!(
        "version = 1
space = \"micro.toml\"
seed = 3

[dataset]
kind = \"synthetic\"
classes = 10
train = 200
eval = 100
resolution = 4
channels = 1
margin = 1.0
seed = 0

[select]
saliency_batch = 32

[train]
steps = {steps}
batch_size = 16
lr_init = 1e-3
lr_final = 1e-5

[eval]
batch_size = 50
"
    )
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new(steps: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("micro.toml"), SPACE).unwrap();
        std::fs::write(dir.path().join("run.toml"), run_config(steps)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn zcnas(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_zcnas"))
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(args)
            .env_remove("ZCNAS_OUT_DIR")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.zcnas(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn out_dir(s: &Sandbox, name: &str) -> String {
    s.path(name).to_str().unwrap().to_string()
}

#[test]
fn malformed_config_exits_2() {
    let s = Sandbox::new(5);
    std::fs::write(s.path("run.toml"), "version = 1\nspace = \"micro.toml\"\nbogus = 1\n").unwrap();
    let out = s.zcnas(&["select"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn unknown_preset_exits_2() {
    let s = Sandbox::new(5);
    assert_eq!(code(&s.zcnas(&["enumerate", "--space", "huge"])), 2);
}

#[test]
fn missing_preferred_space_exits_3() {
    let s = Sandbox::new(5);
    let out = s.zcnas(&["train", "--out-dir", &out_dir(&s, "o")]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("zcnas select"));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let s = Sandbox::new(5);
    let o = out_dir(&s, "o");
    s.ok(&["select", "--out-dir", &o]);
    zero_classifier_checkpoint(&s.path("o/supernet.ckpt"));
    let mut bytes = read_file(&s.path("o/supernet.ckpt")).unwrap();
    bytes[200] ^= 1;
    std::fs::write(s.path("o/supernet.ckpt"), bytes).unwrap();
    let out = s.zcnas(&["eval", "--out-dir", &o]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn enumerate_writes_summary() {
    let s = Sandbox::new(5);
    let stdout = s.ok(&["enumerate", "--out-dir", &out_dir(&s, "o")]);
    // 2 widths x (8 + 64) block assignments
    assert!(stdout.contains("architectures: 144"), "{stdout}");
    let csv = std::fs::read_to_string(s.path("o/isomers.csv")).unwrap();
    assert!(csv.starts_with("embed_dim,depth,total_qkv_dim,total_mlp_ratio,total_heads,count,params,flops\n"));
}

#[test]
fn select_is_deterministic() {
    let s = Sandbox::new(5);
    s.ok(&["select", "--out-dir", &out_dir(&s, "a")]);
    s.ok(&["select", "--out-dir", &out_dir(&s, "b")]);
    for f in ["preferred.json", "preferred.csv", "saliency.ckpt"] {
        assert_eq!(
            read_file(&s.path(&format!("a/{f}"))).unwrap(),
            read_file(&s.path(&format!("b/{f}"))).unwrap(),
            "{f}"
        );
    }
    s.ok(&["select", "--out-dir", &out_dir(&s, "c"), "--seed", "4"]);
    assert_ne!(
        read_file(&s.path("a/saliency.ckpt")).unwrap(),
        read_file(&s.path("c/saliency.ckpt")).unwrap()
    );
}

#[test]
fn out_dir_from_environment() {
    let s = Sandbox::new(5);
    let out = Command::new(env!("CARGO_BIN_EXE_zcnas"))
        .args(["--config", s.path("run.toml").to_str().unwrap(), "select"])
        .env("ZCNAS_OUT_DIR", s.path("env"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(s.path("env/preferred.json").is_file());
    assert!(!s.path("out").exists());
}

#[test]
fn out_dir_defaults_next_to_config() {
    let s = Sandbox::new(5);
    s.ok(&["select"]);
    assert!(s.path("out/preferred.json").is_file());
}

#[test]
fn zero_step_train_round_trips_init() {
    let s = Sandbox::new(5);
    let o = out_dir(&s, "o");
    s.ok(&["select", "--out-dir", &o]);
    s.ok(&["train", "--out-dir", &o]);
    let trained = read_file(&s.path("o/supernet.ckpt")).unwrap();
    let steps = std::fs::read_to_string(s.path("o/steps.csv")).unwrap();
    assert_eq!(steps.lines().next(), Some("step,arch_id,loss,lr"));
    assert_eq!(steps.lines().count(), 6);

    std::fs::copy(s.path("o/supernet.ckpt"), s.path("init.ckpt")).unwrap();
    let p = out_dir(&s, "p");
    s.ok(&[
        "train",
        "--out-dir",
        &p,
        "--steps",
        "0",
        "--init",
        &out_dir(&s, "init.ckpt"),
        "--preferred",
        &format!("{o}/preferred.json"),
    ]);
    let again = read_file(&s.path("p/supernet.ckpt")).unwrap();
    // identical except for the stored step counter
    let header = 8 + 4 + 4 + 32 + 8;
    assert_eq!(trained[..header], again[..header]);
    assert_eq!(trained[header + 8..trained.len() - 4], again[header + 8..again.len() - 4]);
    let ck = Checkpoint::from_bytes(&again).unwrap();
    assert_eq!(ck.aux, 0);
}

fn zero_classifier_checkpoint(path: &Path) {
    let spec = SearchSpaceSpec::from_toml_str(SPACE).unwrap();
    let mut w = SupernetWeights::<f32>::init(&spec, 1).unwrap();
    w.zero_classifier();
    std::fs::write(path, Checkpoint::from_weights(&w, 0).to_bytes()).unwrap();
}

#[test]
fn zero_classifier_scores_chance() {
    let s = Sandbox::new(5);
    zero_classifier_checkpoint(&s.path("zero.ckpt"));
    let o = out_dir(&s, "o");
    s.ok(&[
        "eval",
        "--out-dir",
        &o,
        "--checkpoint",
        &out_dir(&s, "zero.ckpt"),
        "--arch",
        "e8-d1:q8r1h1",
        "--arch",
        "e16-d2:q16r2h2:q8r1h1",
    ]);
    let csv = std::fs::read_to_string(s.path("o/eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("arch_id,params,flops,top1"));
    let top1: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(top1, vec![0.1, 0.1]);
}

#[test]
fn malformed_arch_id_exits_2() {
    let s = Sandbox::new(5);
    zero_classifier_checkpoint(&s.path("zero.ckpt"));
    let out = s.zcnas(&[
        "eval",
        "--out-dir",
        &out_dir(&s, "o"),
        "--checkpoint",
        &out_dir(&s, "zero.ckpt"),
        "--arch",
        "banana",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pareto_of_a_hand_written_table() {
    let s = Sandbox::new(5);
    std::fs::write(
        s.path("eval.csv"),
        "arch_id,params,flops,top1\na,10,100,0.5\nb,20,50,0.4\nc,30,300,0.7\nd,30,10,0.6\ne,40,400,0.7\n",
    )
    .unwrap();
    let o = out_dir(&s, "o");
    let stdout = s.ok(&["pareto", "--out-dir", &o, "--input", &out_dir(&s, "eval.csv")]);
    assert_eq!(stdout, "arch_id,params,flops,top1\na,10,100,0.5\nc,30,300,0.7\n");
    let flops = s.ok(&["pareto", "--out-dir", &o, "--input", &out_dir(&s, "eval.csv"), "--metric", "flops"]);
    assert_eq!(flops, "arch_id,params,flops,top1\nd,30,10,0.6\nc,30,300,0.7\n");
    let json: serde_json::Value =
        serde_json::from_slice(&read_file(&s.path("o/pareto.json")).unwrap()).unwrap();
    assert_eq!(json["metric"], "flops");
    assert_eq!(json["frontier"].as_array().unwrap().len(), 2);
}

#[test]
fn kendall_and_mbr_from_score_file() {
    let s = Sandbox::new(5);
    // two isomer groups of two members each
    std::fs::write(
        s.path("eval.csv"),
        "arch_id,params,flops,top1\n\
         e16-d2:q16r1h1:q8r1h1,1,1,0.2\ne16-d2:q8r1h1:q16r1h1,1,1,0.4\n\
         e16-d2:q8r2h1:q8r1h1,1,1,0.1\ne16-d2:q8r1h1:q8r2h1,1,1,0.3\n",
    )
    .unwrap();
    std::fs::write(
        s.path("scores.csv"),
        "arch_id,score\n\
         e16-d2:q16r1h1:q8r1h1,1\ne16-d2:q8r1h1:q16r1h1,3\n\
         e16-d2:q8r2h1:q8r1h1,2\ne16-d2:q8r1h1:q8r2h1,4\n",
    )
    .unwrap();
    let o = out_dir(&s, "o");
    let common = ["--out-dir", &o, "--input", &out_dir(&s, "eval.csv")];
    let scores = out_dir(&s, "scores.csv");
    s.ok(&[&["kendall"], &common[..], &["--scores", &scores]].concat());
    let k: serde_json::Value =
        serde_json::from_slice(&read_file(&s.path("o/kendall.json")).unwrap()).unwrap();
    assert_eq!(k["n"], 4);
    assert!((k["tau"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    s.ok(&[&["mbr"], &common[..], &["--scores", &scores]].concat());
    let m: serde_json::Value = serde_json::from_slice(&read_file(&s.path("o/mbr.json")).unwrap()).unwrap();
    assert_eq!(m["groups"], 2);
    assert_eq!(m["mbr"], 0.0);
}

#[test]
fn isomer_evaluation_feeds_mbr() {
    let s = Sandbox::new(5);
    let o = out_dir(&s, "o");
    s.ok(&["select", "--out-dir", &o]);
    s.ok(&["train", "--out-dir", &o]);
    s.ok(&["eval", "--out-dir", &o]);
    assert_eq!(code(&s.zcnas(&["mbr", "--out-dir", &o])), 3);
    let before = std::fs::read_to_string(s.path("o/eval.csv")).unwrap().lines().count();
    s.ok(&["eval", "--out-dir", &o, "--isomers", "2"]);
    let after = std::fs::read_to_string(s.path("o/eval.csv")).unwrap().lines().count();
    assert!(after > before, "{before} -> {after}");
    s.ok(&["mbr", "--out-dir", &o]);
    let m: serde_json::Value = serde_json::from_slice(&read_file(&s.path("o/mbr.json")).unwrap()).unwrap();
    let v = m["mbr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));
    assert!(m["groups"].as_u64().unwrap() >= 1);
}
