//! End-to-end runs of the `gated-reid` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gated_reid::checkpoint::save_checkpoint;
use gated_reid::data::load_dataset;
use gated_reid::training::TrainState;
use gated_reid::{CMCCurve, FusionMode, NetworkParams, RunConfig, TrainingLog};

const LEAN: &str = "\
net.height = 28
net.width = 12
net.conv1_out = 8
net.conv1_of_out = 8
net.gate_hidden = 16
net.state_dim = 32
net.feature_dim = 32
net.conv2_out = 12
net.conv3_out = 16
net.kernel_size = 3
train.crop_height = 28
train.crop_width = 12
train.subseq_len = 8
train.epochs = 2
data.num_identities = 6
data.height = 32
data.width = 16
data.min_frames = 12
data.max_frames = 20
";

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lean.cfg"), LEAN).unwrap();
        Sandbox { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gated-reid"));
        cmd.current_dir(self.dir.path());
        if !args.contains(&"--config") {
            cmd.args(["--config", "lean.cfg"]);
        }
        cmd.args(args);
        cmd.env_remove("GATED_REID_OUT_DIR").env_remove("GATED_REID_THREADS");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// (width, height, pixels) of a binary greyscale image.
fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    assert_eq!(fields[0], "P5");
    assert_eq!(fields[3], "255");
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    let pixels = bytes[pos + 1..].to_vec();
    assert_eq!(pixels.len(), w * h);
    (w, h, pixels)
}

#[test]
fn generate_is_byte_identical_and_loadable() {
    let s = Sandbox::new();
    s.ok(&["--out", "a", "generate", "--identities", "20"]);
    s.ok(&["--out", "b", "generate", "--identities", "20"]);
    assert_eq!(tree(&s.path("a/dataset")), tree(&s.path("b/dataset")));
    let dirs = fs::read_dir(s.path("a/dataset")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 40);
    let ds = load_dataset(&s.path("a/dataset")).unwrap();
    assert_eq!(ds.identities().len(), 20);
    s.ok(&["--out", "c", "generate", "--identities", "20", "--seed", "9"]);
    assert_ne!(tree(&s.path("a/dataset")), tree(&s.path("c/dataset")));
}

#[test]
fn resolved_config_reproduces_the_run_config() {
    let s = Sandbox::new();
    s.ok(&["--out", "o", "--set", "train.margin=3", "generate"]);
    let echoed = RunConfig::load(&s.path("o/resolved_config.txt")).unwrap();
    let mut want = RunConfig::load(&s.path("lean.cfg")).unwrap();
    want.train.margin = 3.0;
    want.output_dir = "o".into();
    want.dataset_dir = Some("o/dataset".into());
    assert_eq!(echoed, want);
    assert_eq!(echoed.network.fusion, FusionMode::F4);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let s = Sandbox::new();
    s.ok(&["--out", "o", "generate"]);
    s.ok(&["--out", "o", "train"]);
    for f in ["checkpoint/manifest.txt", "checkpoint/training_log.tsv", "training_log.tsv", "resolved_config.txt"] {
        assert!(s.path("o").join(f).is_file(), "{f}");
    }
    let log = TrainingLog::parse(&fs::read_to_string(s.path("o/training_log.tsv")).unwrap()).unwrap();
    assert_eq!(log.records.len(), 2);
    assert!(log.records.iter().all(|r| r.mean_gate.is_some()));
    let manifest = fs::read_to_string(s.path("o/checkpoint/manifest.txt")).unwrap();
    assert!(manifest.contains("config.fusion = f4"));

    s.ok(&["--out", "n", "--set", "dataset_dir=o/dataset", "train", "--gate-mode", "none", "--no-regularizer"]);
    let text = fs::read_to_string(s.path("n/training_log.tsv")).unwrap();
    let log = TrainingLog::parse(&text).unwrap();
    assert!(log.records.iter().all(|r| r.mean_gate.is_none() && r.loss.l_gate_i == 0.0));
    let manifest = fs::read_to_string(s.path("n/checkpoint/manifest.txt")).unwrap();
    assert!(manifest.contains("config.gate_mode = none") && manifest.contains("train.use_regularizer = false"));
}

#[test]
fn resume_continues_bit_identically() {
    let s = Sandbox::new();
    s.ok(&["--out", "o", "generate"]);
    s.ok(&["--out", "full", "--set", "dataset_dir=o/dataset", "train", "--epochs", "4"]);
    s.ok(&["--out", "half", "--set", "dataset_dir=o/dataset", "train", "--epochs", "2"]);
    s.ok(&["--out", "rest", "--set", "dataset_dir=o/dataset", "train", "--epochs", "4", "--resume", "half/checkpoint"]);
    assert_eq!(tree(&s.path("full/checkpoint")), tree(&s.path("rest/checkpoint")));
    assert_eq!(fs::read(s.path("full/training_log.tsv")).unwrap(), fs::read(s.path("rest/training_log.tsv")).unwrap());
}

fn table(s: &Sandbox, out: &str) -> CMCCurve {
    CMCCurve::parse_table(&fs::read_to_string(s.path(out).join("cmc.tsv")).unwrap()).unwrap()
}

#[test]
fn eval_tables_and_repeats() {
    let s = Sandbox::new();
    s.ok(&["--out", "o", "generate"]);
    s.ok(&["--out", "o", "train"]);
    let stdout = s.ok(&["--out", "o", "eval"]);
    assert!(stdout.starts_with("rank\tmatch_percent\n"));
    let single = table(&s, "o");
    assert!(single.is_monotone());
    assert_eq!(*single.ranks.last().unwrap(), 100.0);

    let common = ["--set", "dataset_dir=o/dataset", "--set", "checkpoint_dir=o/checkpoint"];
    let mut args = common.to_vec();
    args.extend(["--out", "r", "eval", "--repeats", "3"]);
    s.ok(&args);
    let mut curves = Vec::new();
    for seed in 0..3 {
        let out = format!("s{seed}");
        let set = format!("split_seed={seed}");
        let mut args = common.to_vec();
        args.extend(["--set", &set, "--out", &out, "eval"]);
        s.ok(&args);
        curves.push(table(&s, &out));
        assert_eq!(
            fs::read(s.path(&out).join("cmc.tsv")).unwrap(),
            fs::read(s.path(&format!("r/cmc_split{seed}.tsv"))).unwrap()
        );
    }
    let mean = CMCCurve::mean(&curves).unwrap();
    let repeated = table(&s, "r");
    assert_eq!(mean.ranks.len(), repeated.ranks.len());
    for (a, b) in mean.ranks.iter().zip(&repeated.ranks) {
        // tables carry four decimals
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

/// Checkpoint with all-zero network parameters for the lean geometry.
fn zero_checkpoint(s: &Sandbox, fusion: FusionMode, dir: &str) {
    let cfg = RunConfig::load(&s.path("lean.cfg")).unwrap();
    let ds = load_dataset(&s.path("o/dataset")).unwrap();
    let mut net = cfg.network.clone();
    net.fusion = fusion;
    let mut state = TrainState::<f32>::init(&net, &cfg.train, &ds).unwrap();
    state.network.params = NetworkParams::zeros(&net).unwrap();
    save_checkpoint(&state, &cfg.train, &s.path(dir)).unwrap();
}

#[test]
fn gate_images_of_a_zero_network_are_mid_grey() {
    let s = Sandbox::new();
    s.ok(&["--out", "o", "generate"]);
    zero_checkpoint(&s, FusionMode::F4, "z4");
    zero_checkpoint(&s, FusionMode::F3, "z3");
    s.ok(&["--out", "v4", "--set", "dataset_dir=o/dataset", "visualize-gates", "--checkpoint", "z4", "--frames", "3"]);
    s.ok(&["--out", "v3", "--set", "dataset_dir=o/dataset", "visualize-gates", "--checkpoint", "z3", "--frames", "3"]);
    for t in 0..3 {
        for kind in ["color", "flow", "fused"] {
            let name = format!("p0000_c0_t{t:03}_{kind}.pgm");
            let (w, h, px) = read_pgm(&s.path("v4/gates").join(&name));
            assert_eq!((w, h), (6, 14));
            let want = if kind == "fused" { 191 } else { 128 };
            assert!(px.iter().all(|&p| p == want), "{name}");
            if kind == "fused" {
                assert_eq!(
                    fs::read(s.path("v4/gates").join(&name)).unwrap(),
                    fs::read(s.path("v3/gates").join(&name)).unwrap()
                );
            }
        }
        let (w, h, _) = read_pgm(&s.path(&format!("v4/gates/p0000_c0_t{t:03}_input.pgm")));
        assert_eq!((w, h), (12, 28));
    }
    let sidecar = fs::read_to_string(s.path("v4/gates/gates.txt")).unwrap();
    assert!(sidecar.starts_with("file\tkind\tvalue_lo\tvalue_hi"));
    assert_eq!(sidecar.lines().count(), 1 + 3 * 4);
    assert!(sidecar.lines().skip(1).filter(|l| !l.contains("\tinput\t")).all(|l| !l.ends_with("\t-")));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let s = Sandbox::new();
    let stdout = s.ok(&["--out", "g", "gradcheck", "--max-coords", "10"]);
    assert!(stdout.contains("conv2d_same\t") && stdout.contains("end_to_end\t"));
    assert!(!stdout.contains("FAIL"));
    let out = s.run(&["--out", "g", "gradcheck", "--skip-network", "--corrupt", "dense:1.01"]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("dense\t") && l.ends_with("FAIL")));
    assert_eq!(s.run(&["gradcheck", "--corrupt", "nonsense:2"]).status.code(), Some(1));
}

#[test]
fn exit_codes_and_environment() {
    let s = Sandbox::new();
    assert_eq!(s.run(&["--set", "bogus=1", "generate"]).status.code(), Some(1));
    assert_eq!(s.run(&["--set", "train.crop_width=14", "train"]).status.code(), Some(1));
    assert_eq!(s.run(&["--no-such-flag", "generate"]).status.code(), Some(1));
    assert_eq!(s.run(&["eval", "--repeats", "0"]).status.code(), Some(1));
    assert_eq!(s.run(&["--out", "empty", "eval"]).status.code(), Some(2));
    assert_eq!(s.run(&["--out", "empty", "train"]).status.code(), Some(2));
    assert_eq!(s.run(&["--config", "missing.cfg", "generate"]).status.code(), Some(2));
    assert_eq!(s.run_env(&["generate"], &[("GATED_REID_THREADS", "zero")]).status.code(), Some(1));

    let out = s.run_env(&["generate"], &[("GATED_REID_OUT_DIR", "envout"), ("GATED_REID_THREADS", "3")]);
    assert!(out.status.success());
    let echoed = RunConfig::load(&s.path("envout/resolved_config.txt")).unwrap();
    assert_eq!(echoed.threads, 3);
    // an explicit --out wins over the environment
    assert!(s.run_env(&["--out", "flag", "generate"], &[("GATED_REID_OUT_DIR", "envout2")]).status.success());
    assert!(s.path("flag/dataset/dataset.txt").is_file() && !s.path("envout2").exists());
}
