//! Command-line front end: `pretrain`, `transfer`, `train`, `eval`, `synth`,
//! `inspect` and `gradcheck`.
//!
//! Every subcommand resolves its settings as flag > `--config` file >
//! built-in default (plus, for `transfer` and `eval`, the network settings
//! stored next to the checkpoint) and echoes the result.

pub mod settings;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_dataset, save_dataset, synth_generate, SkeletonDataset, SynthConfig};
use crate::diagnostics::{gradcheck_suite, GRADCHECK_TOLERANCE};
use crate::error::{Error, Result};
use crate::graph::{build_skeleton_graph, Layout, PartitionedAdjacency};
use crate::network::{Network, NetworkConfig, DEFAULT_STRIDES, DEFAULT_WIDTHS, DESK_WIDTHS};
use crate::spatial::SpatialVariant;
use crate::temporal::TemporalVariant;
use crate::training::{
    evaluate_topk, load_checkpoint, transfer_setup, train, write_csv, AugmentConfig, Checkpoint, TrainConfig, TrainMode,
};
pub use settings::Settings;
use settings::join;

pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";
pub const LOG_CSV: &str = "log.csv";
pub const BEST_CHECKPOINT: &str = "best.skck";
pub const PAD_SWEEP_CSV: &str = "pad_sweep.csv";
pub const PAD_SWEEP_HEADER: &str = "pad_frames,best_epoch,val_top1,val_top5,final_loss";

const NETWORK_KEYS: [&str; 5] = ["spatial", "temporal", "widths", "strides", "persons"];

#[derive(Parser, Debug)]
#[command(name = "skefi", version, about = "Skeleton action recognition with adaptive graph convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a source-domain model.
    Pretrain(TrainArgs),
    /// Fine-tune a pretrained checkpoint with its first blocks frozen.
    Transfer(TransferArgs),
    /// Train from scratch on the target data.
    Train(TrainArgs),
    /// Top-1 and top-5 accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write a synthetic SKDS dataset.
    Synth(SynthArgs),
    /// Print layouts, adjacency matrices and parameter counts.
    Inspect(InspectArgs),
    /// Run finite-difference gradient checks on every layer type.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Flat key = value settings file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NetworkArgs {
    /// Spatial layer: stgc, agc or tcagc.
    #[arg(long)]
    spatial: Option<String>,
    /// Temporal layer: sst, mst or espmst.
    #[arg(long)]
    temporal: Option<String>,
    /// Ten block widths, or `canonical` / `desk`.
    #[arg(long)]
    widths: Option<String>,
    /// Ten temporal strides.
    #[arg(long)]
    strides: Option<String>,
    /// Person slots; defaults to the dataset's.
    #[arg(long)]
    persons: Option<String>,
}

impl NetworkArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("spatial", self.spatial.clone()),
            ("temporal", self.temporal.clone()),
            ("widths", self.widths.clone()),
            ("strides", self.strides.clone()),
            ("persons", self.persons.clone()),
        ]
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Training dataset (SKDS).
    #[arg(long)]
    data: Option<String>,
    /// Validation dataset; the training set is evaluated when absent.
    #[arg(long)]
    val: Option<String>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<String>,
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long)]
    lr: Option<String>,
    /// Comma-separated epochs at which the LR is multiplied by gamma.
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Maximum rotation angle in radians for training augmentation.
    #[arg(long)]
    augment_angle: Option<String>,
    /// Maximum translation per axis for training augmentation.
    #[arg(long)]
    augment_shift: Option<String>,
    /// Zero-pad clips to this many frames; several values run a sweep.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pad_frames: Option<Vec<String>>,
    /// Worker threads for data preparation (0 = all cores).
    #[arg(long)]
    workers: Option<String>,
}

impl TrainArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        let mut f = vec![
            ("data", self.data.clone()),
            ("val", self.val.clone()),
            ("out", self.out.clone()),
            ("lr", self.lr.clone()),
            ("milestones", self.milestones.clone()),
            ("gamma", self.gamma.clone()),
            ("momentum", self.momentum.clone()),
            ("weight_decay", self.weight_decay.clone()),
            ("batch_size", self.batch_size.clone()),
            ("epochs", self.epochs.clone()),
            ("seed", self.seed.clone()),
            ("augment_angle", self.augment_angle.clone()),
            ("augment_shift", self.augment_shift.clone()),
            ("pad_frames", self.pad_frames.as_ref().map(|v| v.join(","))),
            ("workers", self.workers.clone()),
        ];
        f.extend(self.net.flags());
        f
    }
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Pretrained checkpoint (SKCK).
    #[arg(long)]
    pretrained: Option<String>,
    /// Number of leading blocks to freeze.
    #[arg(long)]
    freeze_k: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(short, long)]
    out: Option<String>,
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    pad_frames: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    per_class: Option<String>,
    #[arg(long)]
    frames: Option<String>,
    /// Gaussian coordinate jitter.
    #[arg(long)]
    sigma: Option<String>,
    /// Frame-loss probability.
    #[arg(long)]
    drop: Option<String>,
    /// Length of each lost burst in frames.
    #[arg(long)]
    burst: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// First class family, for drawing disjoint class sets.
    #[arg(long)]
    class_offset: Option<String>,
    #[arg(long)]
    primary_amplitude: Option<String>,
    #[arg(long)]
    secondary_amplitude: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Output SKDS file.
    #[arg(short, long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    classes: Option<String>,
    #[command(flatten)]
    net: NetworkArgs,
    /// Also list the entries of this checkpoint.
    #[arg(long)]
    checkpoint: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    tolerance: Option<String>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage and configuration errors,
/// 2 for I/O and format errors.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Pretrain(a) => run_training(TrainMode::Pretrain, &a, None),
        Command::Train(a) => run_training(TrainMode::Scratch, &a, None),
        Command::Transfer(a) => run_training(TrainMode::Finetune, &a.train, Some(&a)),
        Command::Eval(a) => run_eval(&a),
        Command::Synth(a) => run_synth(&a),
        Command::Inspect(a) => run_inspect(&a),
        Command::Gradcheck(a) => run_gradcheck(&a),
    }
}

fn network_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("spatial", SpatialVariant::TcAgc.name().into()),
        ("temporal", TemporalVariant::EspMst.name().into()),
        ("widths", "canonical".into()),
        ("strides", join(&DEFAULT_STRIDES)),
        ("persons", String::new()),
    ]
}

fn train_defaults(mode: TrainMode) -> Vec<(&'static str, String)> {
    let t = match mode {
        TrainMode::Pretrain => TrainConfig::pretrain(),
        TrainMode::Finetune | TrainMode::Scratch => TrainConfig::transfer(),
    };
    let mut d = vec![
        ("data", String::new()),
        ("val", String::new()),
        ("out", "runs".into()),
        ("lr", t.base_lr.to_string()),
        ("milestones", join(&t.milestones)),
        ("gamma", t.gamma.to_string()),
        ("momentum", t.momentum.to_string()),
        ("weight_decay", t.weight_decay.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("epochs", t.max_epochs.to_string()),
        ("seed", t.seed.to_string()),
        ("augment_angle", "0".into()),
        ("augment_shift", "0".into()),
        ("pad_frames", String::new()),
        ("workers", "0".into()),
    ];
    if mode == TrainMode::Finetune {
        d.push(("pretrained", String::new()));
        d.push(("freeze_k", "6".into()));
    }
    d.extend(network_defaults());
    d
}

fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

/// Network settings saved next to a checkpoint, if present.
fn read_sidecar(checkpoint: &Path) -> Result<Vec<(String, String)>> {
    let path = sidecar_path(checkpoint);
    if !path.exists() {
        return Ok(Vec::new());
    }
    Settings::parse_text(&fs::read_to_string(path)?)
}

fn resolve(
    defaults: Vec<(&str, String)>,
    checkpoint_key: Option<(&str, Option<&String>)>,
    config: &ConfigArg,
    flags: Vec<(&'static str, Option<String>)>,
) -> Result<Settings> {
    let mut s = Settings::with_defaults(&defaults);
    let mut file = None;
    if let Some(path) = &config.config {
        let mut probe = s.clone();
        probe.merge_file(path)?;
        file = Some(probe);
    }
    // the checkpoint's sidecar sits between defaults and the config file
    if let Some((key, flag)) = checkpoint_key {
        let from_file = file.as_ref().and_then(|f| f.optional(key).map(str::to_string));
        if let Some(ckpt) = flag.cloned().or(from_file) {
            s.merge_keys(&read_sidecar(Path::new(&ckpt))?, &NETWORK_KEYS)?;
        }
    }
    if let Some(path) = &config.config {
        s.merge_file(path)?;
    }
    s.apply_flags(flags)?;
    Ok(s)
}

fn required<'a>(s: &'a Settings, key: &str) -> Result<&'a str> {
    s.optional(key).ok_or_else(|| Error::config(format!("missing required setting {key} (flag --{})", key.replace('_', "-"))))
}

fn network_config(s: &Settings, class_count: usize, persons: usize) -> Result<NetworkConfig> {
    let widths = match s.raw("widths") {
        "canonical" => DEFAULT_WIDTHS.to_vec(),
        "desk" => DESK_WIDTHS.to_vec(),
        _ => s.list("widths")?,
    };
    Ok(NetworkConfig {
        spatial: s.get("spatial")?,
        temporal: s.get("temporal")?,
        block_channels: widths,
        block_strides: s.list("strides")?,
        in_channels: 3,
        persons,
        class_count,
    })
}

fn persons_for(s: &Settings, ds: &SkeletonDataset) -> Result<usize> {
    match s.optional("persons") {
        Some(_) => s.get("persons"),
        None => Ok(ds.dims[3]),
    }
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let (angle, shift): (f64, f64) = (s.get("augment_angle")?, s.get("augment_shift")?);
    let cfg = TrainConfig {
        base_lr: s.get("lr")?,
        milestones: s.list("milestones")?,
        gamma: s.get("gamma")?,
        momentum: s.get("momentum")?,
        weight_decay: s.get("weight_decay")?,
        batch_size: s.get("batch_size")?,
        max_epochs: s.get("epochs")?,
        seed: s.get("seed")?,
        augment: (angle != 0.0 || shift != 0.0).then_some(AugmentConfig { max_angle: angle, max_shift: shift }),
        stop_at_top1: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn with_workers<T>(s: &Settings, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    let workers: usize = s.get("workers")?;
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn prepare(ds: SkeletonDataset, pad: Option<usize>, persons: usize) -> Result<SkeletonDataset> {
    let ds = match pad {
        Some(p) => ds.padded(p)?,
        None => ds,
    };
    if ds.dims[3] == persons {
        Ok(ds)
    } else {
        ds.with_persons(persons)
    }
}

struct RunResult {
    best_epoch: usize,
    val_top1: f64,
    val_top5: f64,
    final_loss: f64,
}

fn run_training(mode: TrainMode, args: &TrainArgs, transfer: Option<&TransferArgs>) -> Result<i32> {
    let mut flags = args.flags();
    if let Some(t) = transfer {
        flags.push(("pretrained", t.pretrained.clone()));
        flags.push(("freeze_k", t.freeze_k.clone()));
    }
    let ckpt_key = transfer.map(|t| ("pretrained", t.pretrained.as_ref()));
    let s = resolve(train_defaults(mode), ckpt_key, &args.cfg, flags)?;
    print!("{}", s.render());
    with_workers(&s, || {
        let out = PathBuf::from(s.raw("out"));
        fs::create_dir_all(&out)?;
        s.write(&out.join(EFFECTIVE_CONFIG))?;
        let pads: Vec<usize> = s.list("pad_frames")?;
        if pads.len() <= 1 {
            train_once(mode, &s, pads.first().copied(), &out)?;
            return Ok(0);
        }
        let mut rows = Vec::new();
        for &p in &pads {
            println!("pad_frames {p}");
            let dir = out.join(format!("pad{p}"));
            fs::create_dir_all(&dir)?;
            let mut sub = s.clone();
            sub.set("pad_frames", p.to_string())?;
            sub.set("out", dir.display().to_string())?;
            sub.write(&dir.join(EFFECTIVE_CONFIG))?;
            rows.push((p, train_once(mode, &sub, Some(p), &dir)?));
        }
        let mut w = BufWriter::new(File::create(out.join(PAD_SWEEP_CSV))?);
        writeln!(w, "{PAD_SWEEP_HEADER}")?;
        for (p, r) in rows {
            writeln!(w, "{p},{},{},{},{}", r.best_epoch, r.val_top1, r.val_top5, r.final_loss)?;
        }
        w.flush()?;
        println!("wrote {}", out.join(PAD_SWEEP_CSV).display());
        Ok(0)
    })
}

fn train_once(mode: TrainMode, s: &Settings, pad: Option<usize>, out: &Path) -> Result<RunResult> {
    let cfg = train_config(s)?;
    let raw = load_dataset(Path::new(required(s, "data")?))?;
    let persons = persons_for(s, &raw)?;
    let train_ds = prepare(raw, pad, persons)?;
    let val_ds = s.optional("val").map(|p| prepare(load_dataset(Path::new(p))?, pad, persons)).transpose()?;
    let graph = build_skeleton_graph(train_ds.layout);
    let mut net = match mode {
        TrainMode::Finetune => {
            let ckpt = load_checkpoint(Path::new(required(s, "pretrained")?))?;
            let config = network_config(s, ckpt.class_count, persons)?;
            transfer_setup(&ckpt, &config, &graph, train_ds.class_count, s.get("freeze_k")?, cfg.seed)?
        }
        TrainMode::Pretrain | TrainMode::Scratch => {
            Network::build(&network_config(s, train_ds.class_count, persons)?, &graph, cfg.seed)?
        }
    };
    println!("{} parameters, mode {mode}", net.parameter_count());
    let outcome = train(&mut net, &train_ds, val_ds.as_ref(), &cfg, mode, |l| {
        println!(
            "epoch {:>3}  lr {:.6}  loss {:.4}  train_top1 {:.4}  val_top1 {:.4}  val_top5 {:.4}",
            l.epoch, l.lr, l.loss, l.train_top1, l.val_top1, l.val_top5
        );
    })?;
    let mut w = BufWriter::new(File::create(out.join(LOG_CSV))?);
    write_csv(&outcome.log, &mut w)?;
    w.flush()?;
    let ckpt_path = out.join(BEST_CHECKPOINT);
    write_checkpoint_with_sidecar(&outcome.best, &ckpt_path, s, &net.config)?;
    let best = outcome.best_log();
    println!("best epoch {}: val_top1 {:.4}, checkpoint {}", outcome.best_epoch, best.val_top1, ckpt_path.display());
    Ok(RunResult {
        best_epoch: outcome.best_epoch,
        val_top1: best.val_top1,
        val_top5: best.val_top5,
        final_loss: outcome.log.last().map_or(f64::NAN, |l| l.loss),
    })
}

fn write_checkpoint_with_sidecar(ckpt: &Checkpoint, path: &Path, s: &Settings, net: &NetworkConfig) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.write(&mut w)?;
    w.flush()?;
    let mut side = String::new();
    side.push_str(&format!("spatial = {}\n", net.spatial));
    side.push_str(&format!("temporal = {}\n", net.temporal));
    side.push_str(&format!("widths = {}\n", join(&net.block_channels)));
    side.push_str(&format!("strides = {}\n", join(&net.block_strides)));
    side.push_str(&format!("persons = {}\n", net.persons));
    side.push_str(&format!("classes = {}\n", ckpt.class_count));
    side.push_str(&format!("seed = {}\n", s.raw("seed")));
    fs::write(sidecar_path(path), side)?;
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<i32> {
    let mut defaults = vec![
        ("checkpoint", String::new()),
        ("data", String::new()),
        ("out", String::new()),
        ("batch_size", "64".into()),
        ("pad_frames", String::new()),
        ("workers", "0".into()),
    ];
    defaults.extend(network_defaults());
    let mut flags = vec![
        ("checkpoint", a.checkpoint.clone()),
        ("data", a.data.clone()),
        ("out", a.out.clone()),
        ("batch_size", a.batch_size.clone()),
        ("pad_frames", a.pad_frames.clone()),
        ("workers", a.workers.clone()),
    ];
    flags.extend(a.net.flags());
    let s = resolve(defaults, Some(("checkpoint", a.checkpoint.as_ref())), &a.cfg, flags)?;
    print!("{}", s.render());
    with_workers(&s, || {
        let ckpt = load_checkpoint(Path::new(required(&s, "checkpoint")?))?;
        let raw = load_dataset(Path::new(required(&s, "data")?))?;
        let persons = persons_for(&s, &raw)?;
        let pad = s.optional("pad_frames").map(|_| s.get("pad_frames")).transpose()?;
        let ds = prepare(raw, pad, persons)?;
        let graph = build_skeleton_graph(ds.layout);
        let mut net = Network::build(&network_config(&s, ckpt.class_count, persons)?, &graph, 0)?;
        ckpt.apply(&mut net)?;
        let ks: Vec<usize> = [1, 5].into_iter().filter(|&k| k <= ckpt.class_count).collect();
        let acc = evaluate_topk(&net, &ds, &ks, s.get("batch_size")?)?;
        for (k, a) in ks.iter().zip(&acc) {
            println!("top{k} = {a:.6}");
        }
        if let Some(out) = s.optional("out") {
            let out = PathBuf::from(out);
            fs::create_dir_all(&out)?;
            s.write(&out.join(EFFECTIVE_CONFIG))?;
            let header: Vec<String> = ks.iter().map(|k| format!("top{k}")).collect();
            fs::write(out.join("eval.csv"), format!("samples,{}\n{},{}\n", header.join(","), ds.len(), join(&acc)))?;
        }
        Ok(0)
    })
}

fn run_synth(a: &SynthArgs) -> Result<i32> {
    let d = SynthConfig::default();
    let defaults = vec![
        ("classes", d.class_count.to_string()),
        ("per_class", d.samples_per_class.to_string()),
        ("frames", d.frames.to_string()),
        ("sigma", d.sigma.to_string()),
        ("drop", d.drop_prob.to_string()),
        ("burst", d.burst_len.to_string()),
        ("seed", d.seed.to_string()),
        ("class_offset", d.class_offset.to_string()),
        ("primary_amplitude", d.primary_amplitude.to_string()),
        ("secondary_amplitude", d.secondary_amplitude.to_string()),
        ("workers", "0".into()),
        ("out", String::new()),
    ];
    let flags = vec![
        ("classes", a.classes.clone()),
        ("per_class", a.per_class.clone()),
        ("frames", a.frames.clone()),
        ("sigma", a.sigma.clone()),
        ("drop", a.drop.clone()),
        ("burst", a.burst.clone()),
        ("seed", a.seed.clone()),
        ("class_offset", a.class_offset.clone()),
        ("primary_amplitude", a.primary_amplitude.clone()),
        ("secondary_amplitude", a.secondary_amplitude.clone()),
        ("workers", a.workers.clone()),
        ("out", a.out.clone()),
    ];
    let s = resolve(defaults, None, &a.cfg, flags)?;
    print!("{}", s.render());
    let cfg = SynthConfig {
        class_count: s.get("classes")?,
        samples_per_class: s.get("per_class")?,
        frames: s.get("frames")?,
        sigma: s.get("sigma")?,
        drop_prob: s.get("drop")?,
        burst_len: s.get("burst")?,
        seed: s.get("seed")?,
        class_offset: s.get("class_offset")?,
        primary_amplitude: s.get("primary_amplitude")?,
        secondary_amplitude: s.get("secondary_amplitude")?,
    };
    let out = PathBuf::from(required(&s, "out")?);
    let ds = with_workers(&s, || synth_generate(&cfg))?;
    save_dataset(&ds, &out)?;
    s.write(&sidecar_path(&out))?;
    println!("wrote {} samples ({} classes, dims {:?}) to {}", ds.len(), ds.class_count, ds.dims, out.display());
    Ok(0)
}

fn run_inspect(a: &InspectArgs) -> Result<i32> {
    let mut defaults = vec![
        ("layout", Layout::Kinetics18.name().into()),
        ("classes", "400".into()),
        ("checkpoint", String::new()),
    ];
    defaults.extend(network_defaults());
    let mut flags = vec![("layout", a.layout.clone()), ("classes", a.classes.clone()), ("checkpoint", a.checkpoint.clone())];
    flags.extend(a.net.flags());
    let s = resolve(defaults, None, &a.cfg, flags)?;
    print!("{}", s.render());
    let layout: Layout = s.get("layout")?;
    let graph = build_skeleton_graph(layout);
    println!("\nlayout {layout}: {} joints, center {}", graph.joint_count, graph.center);
    for (i, name) in layout.joint_names().iter().enumerate() {
        println!("  {i:>2} {name}");
    }
    let edges: Vec<String> = graph.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    println!("edges: {}", edges.join(" "));
    let mirror: Vec<String> = layout.mirror_pairs().iter().map(|(a, b)| format!("{a}<->{b}")).collect();
    println!("mirror pairs: {}", mirror.join(" "));
    let adjacency = PartitionedAdjacency::build(&graph);
    for (k, a) in adjacency.subsets.iter().enumerate() {
        println!("\nA_{k} (normalised, epsilon {}):", adjacency.epsilon);
        for row in a.data().chunks(graph.joint_count) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:7.4}")).collect();
            println!("  {}", cells.join(" "));
        }
    }
    let classes: usize = s.get("classes")?;
    let persons = s.optional("persons").map(|_| s.get("persons")).transpose()?.unwrap_or(1);
    println!("\nparameter counts ({classes} classes, {persons} person(s)):");
    for spatial in [SpatialVariant::Stgc, SpatialVariant::Agc, SpatialVariant::TcAgc] {
        for temporal in [TemporalVariant::Sst, TemporalVariant::Mst, TemporalVariant::EspMst] {
            let mut cfg = network_config(&s, classes, persons)?;
            cfg.spatial = spatial;
            cfg.temporal = temporal;
            let net = Network::build(&cfg, &graph, 0)?;
            println!("  {spatial:>6} + {temporal:<7} {:>10}", net.parameter_count());
        }
    }
    if let Some(path) = s.optional("checkpoint") {
        let ckpt = load_checkpoint(Path::new(path))?;
        let hex: String = ckpt.fingerprint.iter().map(|b| format!("{b:02x}")).collect();
        println!("\ncheckpoint {path}: version {}, {} classes, fingerprint {hex}", ckpt.version, ckpt.class_count);
        for e in &ckpt.entries {
            println!("  {:<48} {:?}{}", e.name, e.value.shape(), if e.frozen { " frozen" } else { "" });
        }
    }
    Ok(0)
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let defaults = vec![("seed", "0".into()), ("tolerance", GRADCHECK_TOLERANCE.to_string())];
    let flags = vec![("seed", a.seed.clone()), ("tolerance", a.tolerance.clone())];
    let s = resolve(defaults, None, &a.cfg, flags)?;
    print!("{}", s.render());
    let tolerance: f64 = s.get("tolerance")?;
    let mut worst = 0.0f64;
    for (name, r) in gradcheck_suite(s.get("seed")?)? {
        let at = r.worst.as_ref().map_or(String::new(), |(p, i)| format!("{p}[{i}]"));
        println!("{name:<16} max_rel_error {:.3e}  coordinates {:>5}  worst {at}", r.max_rel_error, r.coordinates);
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error: {worst:.3e} (tolerance {tolerance:e})");
    Ok(if worst > tolerance { 1 } else { 0 })
}
