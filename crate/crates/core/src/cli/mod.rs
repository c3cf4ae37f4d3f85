//! Configuration files and the `gen` / `train` / `eval` / `ablate` commands.
//!
//! A config file is TOML with four tables, every key optional except
//! `train.seeds` and `train.output_dir`:
//!
//! ```toml
//! [scene]   # SceneConfig
//! [sensor]  # SensorSpec
//! [data]    # total_scans, labelled_fraction, strategy, split_seed
//! [train]   # TrainConfig
//! ```

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::prototypes::EmMode;
use crate::projection::SensorSpec;
use crate::scanio::{read_scan, write_scan, SceneConfig, SplitStrategy};
use crate::trainer::{
    ablate, ablation_csv, assign_roles, evaluate, generate_scans, metrics_jsonl, summarize, train, Dataset,
    EvalReport, IouReport, Protocol, Role, TrainConfig, TrainOutcome, Variant,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub total_scans: usize,
    pub labelled_fraction: f64,
    pub strategy: SplitStrategy,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            total_scans: 200,
            labelled_fraction: 0.05,
            strategy: SplitStrategy::Uniform,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.sensor.validate()?;
        self.train.validate()?;
        if self.data.total_scans == 0 {
            return Err(Error::Config("data.total_scans must be positive".into()));
        }
        if self.train.seeds.is_empty() {
            return Err(Error::Config("train.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Applies the global `--seed`: scene and split seeds for generation,
    /// the seed list for training.
    pub fn with_seed(mut self, seed: Option<u64>) -> CliConfig {
        if let Some(s) = seed {
            self.scene.rng_seed = s;
            self.data.split_seed = s;
            self.train.seeds = vec![s];
        }
        self
    }
}

fn one_line(s: impl std::fmt::Display) -> String {
    s.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_config(text: &str) -> Result<CliConfig> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(one_line(e)))?;
    let train = raw
        .get("train")
        .and_then(|t| t.as_table())
        .ok_or_else(|| Error::Config("missing [train] table".into()))?;
    for key in ["seeds", "output_dir"] {
        if !train.contains_key(key) {
            return Err(Error::Config(format!("missing train.{key}")));
        }
    }
    let cfg: CliConfig = raw.try_into().map_err(|e| Error::Config(one_line(e)))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<CliConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sensor: SensorSpec,
    pub scene: SceneConfig,
    pub data: DataConfig,
    pub scans: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self, role: Role) -> usize {
        self.scans.iter().filter(|e| e.role == role).count()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `total_scans` scan files and a manifest of their roles. Unlabelled
/// scans are stored without labels.
pub fn cmd_gen(cfg: &CliConfig, out_dir: &Path) -> Result<Manifest> {
    let d = &cfg.data;
    let scans = generate_scans(&cfg.scene, d.total_scans)?;
    let roles = assign_roles(d.total_scans, d.labelled_fraction, d.strategy, d.split_seed)?;
    create_dir(out_dir)?;
    let mut entries = Vec::with_capacity(scans.len());
    for (i, (scan, role)) in scans.into_iter().zip(roles).enumerate() {
        let file = format!("scan_{i:05}.it2s");
        let scan = if role == Role::Unlabelled { scan.stripped() } else { scan };
        write_scan(&scan, out_dir.join(&file))?;
        entries.push(ManifestEntry { file, role });
    }
    let manifest = Manifest {
        sensor: cfg.sensor.clone(),
        scene: cfg.scene.clone(),
        data: cfg.data.clone(),
        scans: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(data_dir: &Path) -> Result<Manifest> {
    let path = data_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Domain(format!("{}: {}", path.display(), one_line(e))))
}

/// The dataset described by a generated directory.
pub fn load_dataset(data_dir: &Path) -> Result<(Manifest, Dataset)> {
    let manifest = read_manifest(data_dir)?;
    let (mut lab, mut unl, mut held) = (Vec::new(), Vec::new(), Vec::new());
    for e in &manifest.scans {
        let scan = read_scan(data_dir.join(&e.file))?;
        match e.role {
            Role::Labelled => lab.push(scan),
            Role::Unlabelled => unl.push(scan),
            Role::Heldout => held.push(scan),
        }
    }
    let data = Dataset::new(manifest.sensor.clone(), lab, unl, held)?;
    Ok((manifest, data))
}

pub fn checkpoint_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("checkpoint-s{seed}.it2m"))
}

pub fn metrics_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("metrics-s{seed}.jsonl"))
}

fn pool_map<T: Send, R: Send>(items: Vec<T>, threads: usize, f: impl Fn(T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| items.into_par_iter().map(f).collect())
    } else {
        items.into_iter().map(f).collect()
    }
}

/// Trains once per seed, writing a checkpoint and a metrics log for each.
pub fn cmd_train(cfg: &CliConfig, data_dir: &Path, out_dir: &Path, threads: usize) -> Result<Vec<(u64, TrainOutcome)>> {
    let (_, data) = load_dataset(data_dir)?;
    create_dir(out_dir)?;
    let runs = pool_map(cfg.train.seeds.clone(), threads, |seed| {
        train(&cfg.train, &data, seed).map(|o| (seed, o))
    })?;
    for (seed, outcome) in &runs {
        let ckpt = Checkpoint {
            model: outcome.model.clone(),
            bank: Some(outcome.bank.clone()),
        };
        write_checkpoint(&checkpoint_path(out_dir, *seed), &ckpt)?;
        write_file(&metrics_path(out_dir, *seed), metrics_jsonl(&outcome.records).as_bytes())?;
    }
    Ok(runs)
}

/// Held-out IoU of a checkpoint.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path, protocol: Protocol) -> Result<EvalReport> {
    let ckpt = read_checkpoint(checkpoint)?;
    let (_, data) = load_dataset(data_dir)?;
    if data.heldout.is_empty() {
        return Err(Error::Domain(format!("{} has no held-out scans", data_dir.display())));
    }
    evaluate(&ckpt.model, &data.heldout, protocol)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.12}"))
}

/// Per-class IoU table, one column per view, `mIoU` last.
pub fn iou_table(report: &EvalReport, fuse: bool) -> String {
    let mut cols: Vec<(&str, &IouReport)> = vec![("range", &report.range), ("voxel", &report.voxel)];
    if fuse {
        cols.push(("fused", &report.fused));
    }
    let mut out = format!("{:<6}", "class");
    for (name, _) in &cols {
        out.push_str(&format!(" {name:>14}"));
    }
    out.push('\n');
    for c in 0..report.range.per_class.len() {
        out.push_str(&format!("{c:<6}"));
        for (_, r) in &cols {
            out.push_str(&format!(" {:>14}", cell(r.per_class[c])));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<6}", "mIoU"));
    for (_, r) in &cols {
        out.push_str(&format!(" {:>14}", cell(r.miou)));
    }
    out.push('\n');
    out
}

/// Runs the four ablation rows over the configured seeds and writes the CSV.
pub fn cmd_ablate(cfg: &CliConfig, data_dir: &Path, out_dir: &Path, threads: usize) -> Result<String> {
    let (_, data) = load_dataset(data_dir)?;
    let rows = ablate(&cfg.train, &Variant::ALL, &data, &cfg.train.seeds, threads)?;
    let csv = ablation_csv(&rows);
    create_dir(out_dir)?;
    write_file(&out_dir.join(ABLATION_FILE), csv.as_bytes())?;
    let mut summary = String::new();
    for (config, view, mean, sd) in summarize(&rows) {
        summary.push_str(&format!("{config:<14} {view:<6} {mean:.4} +- {sd:.4}\n"));
    }
    Ok(summary)
}

#[derive(Debug, Parser)]
#[command(name = "it2", version, about = "Peer range/voxel semi-supervised LiDAR segmentation")]
pub struct Cli {
    /// Overrides scene, split and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs; 1 keeps everything sequential.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen { config: PathBuf, out: PathBuf },
    /// Train on a generated dataset.
    Train {
        config: PathBuf,
        data: PathBuf,
        /// Defaults to train.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Normalize the M-step by the set size instead of the responsibility mass.
        #[arg(long)]
        em_literal: bool,
    },
    /// Evaluate a checkpoint on the held-out scans.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long, default_value = "global")]
        protocol: String,
        /// Also report the fused prediction.
        #[arg(long)]
        fuse: bool,
    },
    /// Run the component ablation.
    Ablate {
        config: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        em_literal: bool,
    },
}

fn load(path: &Path, seed: Option<u64>, em_literal: bool) -> Result<CliConfig> {
    let mut cfg = read_config(path)?.with_seed(seed);
    if em_literal {
        cfg.train.em_mode = EmMode::Literal;
    }
    Ok(cfg)
}

fn out_dir(cfg: &CliConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.train.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory".into()))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let put = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::Gen { config, out: dir } => {
            let cfg = load(&config, cli.seed, false)?;
            let m = cmd_gen(&cfg, &dir)?;
            let line = format!(
                "wrote {} scans ({} labelled, {} unlabelled, {} held out) to {}\n",
                m.scans.len(),
                m.count(Role::Labelled),
                m.count(Role::Unlabelled),
                m.count(Role::Heldout),
                dir.display()
            );
            put(out, &line)
        }
        Command::Train {
            config,
            data,
            out: dir,
            em_literal,
        } => {
            let cfg = load(&config, cli.seed, em_literal)?;
            let dir = out_dir(&cfg, dir)?;
            for (seed, o) in cmd_train(&cfg, &data, &dir, cli.threads)? {
                let line = match o.records.last() {
                    Some(r) => format!(
                        "seed {seed}: {} epochs, mIoU range {} voxel {} fused {}\n",
                        o.records.len(),
                        cell(r.miou_range),
                        cell(r.miou_voxel),
                        cell(r.miou_fused)
                    ),
                    None => format!("seed {seed}: 0 epochs\n"),
                };
                put(out, &line)?;
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            protocol,
            fuse,
        } => {
            let protocol: Protocol = protocol.parse()?;
            let report = cmd_eval(&checkpoint, &data, protocol)?;
            put(out, &iou_table(&report, fuse))
        }
        Command::Ablate {
            config,
            data,
            out: dir,
            em_literal,
        } => {
            let cfg = load(&config, cli.seed, em_literal)?;
            let dir = out_dir(&cfg, dir)?;
            let summary = cmd_ablate(&cfg, &data, &dir, cli.threads)?;
            put(out, &summary)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code,
/// printing a one-line diagnostic on failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{first}");
            return Error::Usage(String::new()).exit_code();
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            e.exit_code()
        }
    }
}
