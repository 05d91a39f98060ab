use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::Args;
use gated_reid::checkpoint::{checkpoint_precision, load_checkpoint, save_checkpoint};
use gated_reid::data::{generate_dataset, ground_truth_gate, load_dataset, save_dataset, train_test_split, GateMask};
use gated_reid::evaluation::TEST_FRAME_CAP;
use gated_reid::gradcheck::{network_suite, operator_suite};
use gated_reid::losses::LossBreakdown;
use gated_reid::training::{train_with, TrainState};
use gated_reid::{
    compute_cmc, CMCCurve, Dataset, GradCheckOptions, NetworkConfig, OpKind, Precision, Real, RunConfig, Tensor,
    TrainConfig, TrainingLog,
};

use crate::{pgm, Failure};

const LOG_FILE: &str = "training_log.tsv";

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, fallback: PathBuf) -> PathBuf {
    flag.or_else(|| configured.clone()).unwrap_or(fallback)
}

fn load(dir: &Path) -> Result<Dataset, Failure> {
    if !dir.join("dataset.txt").is_file() {
        return Err(Failure::Runtime(format!("no dataset at {}", dir.display())));
    }
    Ok(load_dataset(dir)?)
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Destination directory (default: `dataset_dir`, else `<out>/dataset`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn generate(mut cfg: RunConfig, args: GenerateArgs) -> Result<(), Failure> {
    if let Some(n) = args.identities {
        cfg.generator.num_identities = n;
    }
    if let Some(s) = args.seed {
        cfg.generator.seed = s;
    }
    cfg.generator.validate()?;
    let dir = pick(args.dataset, &cfg.dataset_dir, cfg.output_dir.join("dataset"));
    cfg.dataset_dir = Some(dir.clone());
    cfg.echo_to(&cfg.output_dir)?;
    let ds = generate_dataset(&cfg.generator)?;
    save_dataset(&ds, &dir)?;
    eprintln!("wrote {} clips of {} identities to {}", ds.clips.len(), ds.identities().len(), dir.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint destination (default: `checkpoint_dir`, else `<out>/checkpoint`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint. Its network and training settings are
    /// kept; only the epoch target comes from the current configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// fused, color_only, flow_only, concat_single or none.
    #[arg(long)]
    gate_mode: Option<String>,
    /// f1, f2, f3 or f4.
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    no_regularizer: bool,
    /// Drop the previous state from the recurrence input.
    #[arg(long)]
    no_prev_state: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn train(mut cfg: RunConfig, args: TrainArgs) -> Result<(), Failure> {
    if let Some(g) = &args.gate_mode {
        cfg.set("net.gate_mode", g)?;
    }
    if let Some(f) = &args.fusion {
        cfg.set("net.fusion", f)?;
    }
    if args.no_regularizer {
        cfg.train.use_regularizer = false;
    }
    if args.no_prev_state {
        cfg.network.use_prev_state = false;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.train.rng_seed = s;
    }
    cfg.validate()?;
    let data_dir = pick(args.dataset, &cfg.dataset_dir, cfg.output_dir.join("dataset"));
    let ckpt_dir = pick(args.checkpoint, &cfg.checkpoint_dir, cfg.output_dir.join("checkpoint"));
    cfg.dataset_dir = Some(data_dir.clone());
    cfg.checkpoint_dir = Some(ckpt_dir.clone());
    let precision = match &args.resume {
        Some(dir) => checkpoint_precision(dir)?,
        None => cfg.precision,
    };
    let ds = load(&data_dir)?;
    let (train_split, _) = train_test_split(&ds, cfg.split_fraction, cfg.split_seed)?;
    cfg.echo_to(&cfg.output_dir)?;
    match precision {
        Precision::F32 => train_as::<f32>(&cfg, &train_split, args.resume.as_deref(), &ckpt_dir),
        Precision::F64 => train_as::<f64>(&cfg, &train_split, args.resume.as_deref(), &ckpt_dir),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, train: &Dataset, resume: Option<&Path>, ckpt_dir: &Path) -> Result<(), Failure> {
    let (mut state, train_cfg, mut log) = match resume {
        Some(dir) => {
            let ck = load_checkpoint::<T>(dir)?;
            let train_cfg = TrainConfig { epochs: cfg.train.epochs, ..ck.train_config };
            let log_path = dir.join(LOG_FILE);
            let log = match fs::read_to_string(&log_path) {
                Ok(text) => TrainingLog::parse(&text)?,
                Err(_) => TrainingLog::default(),
            };
            eprintln!("resuming at epoch {} of {}", ck.state.epochs_done, train_cfg.epochs);
            (ck.state, train_cfg, log)
        }
        None => (TrainState::<T>::init(&cfg.network, &cfg.train, train)?, cfg.train.clone(), TrainingLog::default()),
    };
    let result = train_with(&mut state, train, &train_cfg, &mut log, |s, records| {
        let loss = LossBreakdown::mean(&records.iter().map(|r| r.loss).collect::<Vec<_>>());
        let acc = records.iter().map(|r| r.accuracy).sum::<f64>() / records.len().max(1) as f64;
        let gate = log_gate(records.iter().filter_map(|r| r.mean_gate));
        eprintln!("epoch {} loss {:.4} gate {gate} accuracy {acc:.3}", s.epochs_done, loss.total);
        ControlFlow::Continue(())
    });
    let tsv = log.to_tsv();
    write_file(&cfg.output_dir.join(LOG_FILE), &tsv)?;
    result?;
    save_checkpoint(&state, &train_cfg, ckpt_dir)?;
    write_file(&ckpt_dir.join(LOG_FILE), &tsv)?;
    eprintln!("saved checkpoint to {}", ckpt_dir.display());
    Ok(())
}

fn log_gate(gates: impl Iterator<Item = f64>) -> String {
    let g: Vec<f64> = gates.collect();
    if g.is_empty() {
        "-".into()
    } else {
        format!("{:.3}", g.iter().sum::<f64>() / g.len() as f64)
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Average over this many splits with seeds `split_seed`, `split_seed + 1`, ...
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

pub fn eval(cfg: RunConfig, args: EvalArgs) -> Result<(), Failure> {
    cfg.validate()?;
    if args.repeats == 0 {
        return Err(Failure::Invalid("--repeats must be at least 1".into()));
    }
    let data_dir = pick(args.dataset, &cfg.dataset_dir, cfg.output_dir.join("dataset"));
    let ckpt_dir = pick(args.checkpoint, &cfg.checkpoint_dir, cfg.output_dir.join("checkpoint"));
    let ds = load(&data_dir)?;
    cfg.echo_to(&cfg.output_dir)?;
    let curves = match checkpoint_precision(&ckpt_dir)? {
        Precision::F32 => eval_as::<f32>(&cfg, &ds, &ckpt_dir, args.repeats)?,
        Precision::F64 => eval_as::<f64>(&cfg, &ds, &ckpt_dir, args.repeats)?,
    };
    if curves.len() > 1 {
        for (i, c) in curves.iter().enumerate() {
            let seed = cfg.split_seed + i as u64;
            write_file(&cfg.output_dir.join(format!("cmc_split{seed}.tsv")), &c.to_table())?;
        }
    }
    let mean = CMCCurve::mean(&curves)?;
    let table = mean.to_table();
    write_file(&cfg.output_dir.join("cmc.tsv"), &table)?;
    print!("{table}");
    eprintln!("{} ({} split{})", mean.summary(), curves.len(), if curves.len() == 1 { "" } else { "s" });
    Ok(())
}

fn eval_as<T: Real>(cfg: &RunConfig, ds: &Dataset, ckpt_dir: &Path, repeats: usize) -> Result<Vec<CMCCurve>, Failure> {
    let ck = load_checkpoint::<T>(ckpt_dir)?;
    let mut curves = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let (_, test) = train_test_split(ds, cfg.split_fraction, cfg.split_seed + i as u64)?;
        let e = compute_cmc(&test, &ck.state.network, &ck.state.stats)?;
        if !e.cmc.is_monotone() {
            return Err(Failure::Runtime("CMC curve is not monotone".into()));
        }
        curves.push(e.cmc);
    }
    Ok(curves)
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Person id (default: the first identity in the dataset).
    #[arg(long)]
    person: Option<usize>,
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Number of leading frames to render.
    #[arg(long)]
    frames: Option<usize>,
}

pub fn visualize_gates(cfg: RunConfig, args: VisualizeArgs) -> Result<(), Failure> {
    let data_dir = pick(args.dataset.clone(), &cfg.dataset_dir, cfg.output_dir.join("dataset"));
    let ckpt_dir = pick(args.checkpoint.clone(), &cfg.checkpoint_dir, cfg.output_dir.join("checkpoint"));
    let ds = load(&data_dir)?;
    let person = match args.person {
        Some(p) => p,
        None => *ds.identities().first().ok_or_else(|| Failure::Runtime("dataset has no clips".into()))?,
    };
    let clip = ds
        .clip(person, args.camera)
        .ok_or_else(|| Failure::Invalid(format!("no clip for person {person} under camera {}", args.camera)))?;
    cfg.echo_to(&cfg.output_dir)?;
    let dir = cfg.output_dir.join("gates");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let rows = match checkpoint_precision(&ckpt_dir)? {
        Precision::F32 => render::<f32>(&ckpt_dir, clip, &args, &dir)?,
        Precision::F64 => render::<f64>(&ckpt_dir, clip, &args, &dir)?,
    };
    write_file(&dir.join("gates.txt"), &rows.sidecar)?;
    match rows.mean_overlap {
        Some(o) => {
            eprintln!("wrote {} frames to {}; mean gate overlap with the person {o:.4}", rows.frames, dir.display())
        }
        None => eprintln!("wrote {} frames to {}", rows.frames, dir.display()),
    }
    Ok(())
}

struct Rendered {
    frames: usize,
    sidecar: String,
    mean_overlap: Option<f64>,
}

fn render<T: Real>(
    ckpt_dir: &Path,
    clip: &gated_reid::VideoClip,
    args: &VisualizeArgs,
    dir: &Path,
) -> Result<Rendered, Failure> {
    let ck = load_checkpoint::<T>(ckpt_dir)?;
    let net = &ck.state.network;
    let (h, w) = (net.config.height, net.config.width);
    if h > clip.height || w > clip.width {
        return Err(Failure::Invalid(format!("network input {h}x{w} exceeds frame {}x{}", clip.height, clip.width)));
    }
    let t = args.frames.unwrap_or(clip.len()).min(clip.len()).clamp(1, TEST_FRAME_CAP);
    let view = clip.subclip(0, t).crop((clip.height - h) / 2, (clip.width - w) / 2, h, w)?;
    let inf = net.infer(&ck.state.stats.normalize::<T>(&view)?)?;
    let masks: Option<Vec<GateMask>> = ground_truth_gate(&view).ok();
    let fused_range = net.config.fusion.range();

    let mut sidecar = String::from("file\tkind\tvalue_lo\tvalue_hi\twidth\theight\tmean\toverlap\n");
    let mut overlaps = Vec::new();
    let stem = format!("p{:04}_c{}", clip.person_id, clip.camera_id);
    for (i, g) in inf.gates.iter().enumerate() {
        let frame = view.frame(i);
        let luma: Vec<u8> = frame
            .chunks(3)
            .map(|p| pgm::to_pixel(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64, 0.0, 1.0))
            .collect();
        let name = format!("{stem}_t{i:03}_input.pgm");
        pgm::write(&dir.join(&name), w, h, &luma).map_err(|e| io_err(&dir.join(&name), e))?;
        let _ = writeln!(sidecar, "{name}\tinput\t0\t1\t{w}\t{h}\t-\t-");
        // single-gate modes report their applied gate as `fused`, which lies in [0, 1]
        let single = net.config.gate_mode != gated_reid::GateMode::Fused;
        for (kind, map, (lo, hi)) in [
            ("color", &g.color, (0.0, 1.0)),
            ("flow", &g.flow, (0.0, 1.0)),
            ("fused", &g.fused, if single { (0.0, 1.0) } else { fused_range }),
        ] {
            let Some(map) = map else { continue };
            let values: &Tensor<T> = &map.values;
            let (gh, gw) = (values.shape()[0], values.shape()[1]);
            let px: Vec<u8> = values.data().iter().map(|v| pgm::to_pixel(v.f64(), lo, hi)).collect();
            let name = format!("{stem}_t{i:03}_{kind}.pgm");
            pgm::write(&dir.join(&name), gw, gh, &px).map_err(|e| io_err(&dir.join(&name), e))?;
            let vals: Vec<f64> = values.data().iter().map(|v| v.f64()).collect();
            let overlap = masks.as_ref().map(|m| m[i].overlap_score(&vals));
            if kind == "fused" {
                overlaps.extend(overlap);
            }
            let _ = writeln!(
                sidecar,
                "{name}\t{kind}\t{lo}\t{hi}\t{gw}\t{gh}\t{:.6}\t{}",
                map.mean(),
                overlap.map_or("-".into(), |o| format!("{o:.6}"))
            );
        }
    }
    let mean_overlap = (!overlaps.is_empty()).then(|| overlaps.iter().sum::<f64>() / overlaps.len() as f64);
    Ok(Rendered { frames: inf.gates.len(), sidecar, mean_overlap })
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip length of the end-to-end check.
    #[arg(long, default_value_t = 2)]
    frames: usize,
    /// Check at most this many coordinates per input.
    #[arg(long)]
    max_coords: Option<usize>,
    /// Scale the adjoint of one operator kind, e.g. `conv2d:1.01`.
    #[arg(long, value_name = "OP:FACTOR")]
    corrupt: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Only run the per-operator checks.
    #[arg(long)]
    skip_network: bool,
}

fn parse_corrupt(s: &str) -> Result<(OpKind, f64), Failure> {
    let bad = || Failure::Invalid(format!("--corrupt expects OP:FACTOR, got '{s}'"));
    let (op, f) = s.split_once(':').ok_or_else(bad)?;
    let op = OpKind::parse(op.trim()).ok_or_else(|| Failure::Invalid(format!("unknown operator '{op}'")))?;
    Ok((op, f.trim().parse().map_err(|_| bad())?))
}

pub fn gradcheck(cfg: RunConfig, args: GradcheckArgs) -> Result<(), Failure> {
    if args.frames == 0 {
        return Err(Failure::Invalid("--frames must be at least 1".into()));
    }
    let opts = GradCheckOptions {
        max_coords_per_input: args.max_coords,
        seed: args.seed,
        corrupt: args.corrupt.as_deref().map(parse_corrupt).transpose()?,
        ..Default::default()
    };
    cfg.echo_to(&cfg.output_dir)?;
    let net = NetworkConfig {
        fusion: cfg.network.fusion,
        gate_mode: cfg.network.gate_mode,
        use_prev_state: cfg.network.use_prev_state,
        ..NetworkConfig::tiny()
    };
    let mut report = String::from("check\tmax_rel_error\tmax_abs_error\tcoords\tstatus\n");
    let mut failed = Vec::new();
    let mut row = |name: &str, r: &gated_reid::GradCheckReport| {
        let ok = r.passes(args.tolerance);
        if !ok {
            failed.push(name.to_string());
        }
        let status = if ok { "ok" } else { "FAIL" };
        let _ = writeln!(
            report,
            "{name}\t{:.3e}\t{:.3e}\t{}\t{status}",
            r.max_rel_error, r.max_abs_error, r.coords_checked
        );
    };
    for c in operator_suite(args.seed, &opts)? {
        row(c.op.name(), &c.report);
    }
    if !args.skip_network {
        let (_, r) = network_suite(&net, args.frames, args.seed, &opts)?;
        row("end_to_end", &r);
    }
    print!("{report}");
    write_file(&cfg.output_dir.join("gradcheck.tsv"), &report)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check above {:e}: {}", args.tolerance, failed.join(", "))))
    }
}
