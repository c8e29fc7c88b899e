use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::info;
use tracing_subscriber::EnvFilter;

use mots::config::parse_image_size;
use mots::io::{self, EmbeddingSidecar, SequenceInput};
use mots::metrics::{evaluate, MetricsReport, TrackRow, DEFAULT_IOU_GATE};
use mots::stage2::{CosineProvider, PrecomputedProvider, SimilarityProvider};
use mots::synth::{self, SyntheticConfig};
use mots::{run_sequence, ProviderKind, SequenceOutput, Stage1Mode, TrackerConfig};

#[derive(Parser)]
#[command(name = "mots", version, about = "Two-stage online multi-object tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one sequence of MOT-format detections.
    Track(TrackArgs),
    /// Score a result file against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic sequence, track it and report metrics and timing.
    Bench(BenchArgs),
    /// Compare the B, B&MA, B&SA and B&SA&MA configurations.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage1Flag {
    Adaptive,
    Hungarian,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage2Flag {
    Cosine,
    Precomputed,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Clone, Default)]
struct TrackerFlags {
    /// Flat key = value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image size as WxH (otherwise read from seqinfo.ini).
    #[arg(long)]
    image_size: Option<String>,
    #[arg(long, value_enum)]
    stage1: Option<Stage1Flag>,
    #[arg(long, value_enum)]
    stage2: Option<Stage2Flag>,
    #[arg(long, value_enum)]
    mv_aware: Option<Switch>,
    /// Precomputed pairwise score table (frame_a,det_a,frame_b,det_b,score).
    #[arg(long)]
    scores: Option<PathBuf>,
}

impl TrackerFlags {
    fn resolve(&self) -> Result<TrackerConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrackerConfig::from_file(p)?,
            None => TrackerConfig::default(),
        };
        if let Some(s) = &self.image_size {
            cfg.lifecycle.image_size = Some(parse_image_size(s)?);
        }
        if let Some(m) = self.stage1 {
            cfg.stage1_mode = match m {
                Stage1Flag::Adaptive => Stage1Mode::Adaptive,
                Stage1Flag::Hungarian => Stage1Mode::Hungarian,
                Stage1Flag::Off => Stage1Mode::Off,
            };
        }
        if let Some(p) = self.stage2 {
            cfg.provider = match p {
                Stage2Flag::Cosine => ProviderKind::Cosine,
                Stage2Flag::Precomputed => ProviderKind::Precomputed,
                Stage2Flag::Off => ProviderKind::None,
            };
        }
        if let Some(s) = self.mv_aware {
            cfg.lifecycle.mv_aware = matches!(s, Switch::On);
        }
        if let Some(p) = &self.scores {
            cfg.scores_path = Some(p.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrackArgs {
    /// MOT detection file (frame,-1,x,y,w,h,conf,...).
    #[arg(long)]
    dets: PathBuf,
    /// Embedding sidecar (.treid) for the detections.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Ground truth; when given, metrics are printed after tracking.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Result file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tracker: TrackerFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Tracker result file.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_GATE)]
    iou_gate: f64,
    /// Also write the metrics as name=value lines here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SynthFlags {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    targets: usize,
    #[arg(long, default_value_t = 300)]
    frames: u32,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 4)]
    max_gap: u32,
    #[arg(long, default_value_t = 128)]
    embedding_dim: usize,
}

impl SynthFlags {
    fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            num_targets: self.targets,
            num_frames: self.frames,
            dropout: self.dropout,
            max_gap: self.max_gap,
            embedding_dim: self.embedding_dim,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    synth: SynthFlags,
    /// Write dets.txt, gt.txt, embeddings.treid, seqinfo.ini, results.txt and metrics.txt here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    tracker: TrackerFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Detections to use instead of a synthetic sequence (needs --gt and --embeddings).
    #[arg(long, requires_all = ["gt", "embeddings"])]
    dets: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<String>,
    #[command(flatten)]
    synth: SynthFlags,
    /// Timing repeats per configuration; the fastest run is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Also run the Hungarian stage-1 baseline rows.
    #[arg(long)]
    with_hungarian: bool,
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("MOTS_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn load_sequence(dets: &Path, embeddings: Option<&Path>, image_size: Option<(f64, f64)>) -> Result<SequenceInput> {
    let mut input = io::load_mot_detections(dets)?;
    if let Some(info_path) = io::find_seqinfo(dets) {
        let info = io::load_seqinfo(&info_path)?;
        input.image_size = info.image_size;
        input.frame_rate = info.frame_rate;
        if let Some(name) = info.name {
            input.name = name;
        }
    }
    if image_size.is_some() {
        input.image_size = image_size;
    }
    if let Some(p) = embeddings {
        let sidecar = EmbeddingSidecar::read(p)?;
        let attached = sidecar.attach(&mut input);
        info!(attached, total = input.num_detections(), "embeddings attached");
    }
    Ok(input)
}

enum LoadedProvider {
    Cosine(CosineProvider),
    Precomputed(PrecomputedProvider),
    None,
}

impl LoadedProvider {
    fn load(cfg: &TrackerConfig) -> Result<Self> {
        Ok(match cfg.provider {
            ProviderKind::Cosine => LoadedProvider::Cosine(CosineProvider),
            ProviderKind::Precomputed => {
                let path = cfg
                    .scores_path
                    .as_ref()
                    .context("stage 2 provider 'precomputed' needs --scores or stage2.scores_path")?;
                LoadedProvider::Precomputed(io::load_scores(path)?)
            }
            ProviderKind::None => LoadedProvider::None,
        })
    }

    fn as_dyn(&self) -> Option<&dyn SimilarityProvider> {
        match self {
            LoadedProvider::Cosine(p) => Some(p),
            LoadedProvider::Precomputed(p) => Some(p),
            LoadedProvider::None => None,
        }
    }
}

fn report(gt: &[TrackRow], out: &SequenceOutput) -> Result<MetricsReport> {
    Ok(evaluate(gt, &out.rows, DEFAULT_IOU_GATE)?
        .with_coverage(out.coverage())
        .with_fps(out.fps()))
}

fn cmd_track(args: TrackArgs) -> Result<()> {
    let cfg = args.tracker.resolve()?;
    let input = load_sequence(&args.dets, args.embeddings.as_deref(), cfg.lifecycle.image_size)?;
    let provider = LoadedProvider::load(&cfg)?;
    let out = run_sequence(&input, &cfg, provider.as_dyn())
        .with_context(|| format!("tracking {}", args.dets.display()))?;
    io::write_results(&out.rows, &args.out)?;
    info!(rows = out.rows.len(), tracks = out.tracks_created, "wrote {}", args.out.display());
    if let Some(gt_path) = &args.gt {
        let gt = io::load_mot_tracks(gt_path)?;
        println!("{}", report(&gt, &out)?);
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gt = io::load_mot_tracks(&args.gt)?;
    let hyp = io::load_mot_tracks(&args.results)?;
    let r = evaluate(&gt, &hyp, args.iou_gate)?;
    println!("{r}");
    if let Some(p) = &args.out {
        fs::write(p, r.to_key_values()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn write_bench_files(dir: &Path, seq: &synth::SyntheticSequence, out: &SequenceOutput, r: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    io::write_detections(&seq.input.frames, &dir.join("dets.txt"))?;
    io::write_ground_truth(&seq.gt, &dir.join("gt.txt"))?;
    seq.sidecar().write(&dir.join("embeddings.treid"))?;
    let (w, h) = seq.input.image_size.unwrap_or_default();
    fs::write(
        dir.join("seqinfo.ini"),
        format!(
            "[Sequence]\nname={}\nframeRate=30\nseqLength={}\nimWidth={w}\nimHeight={h}\n",
            seq.input.name,
            seq.input.frames.len()
        ),
    )?;
    io::write_results(&out.rows, &dir.join("results.txt"))?;
    fs::write(dir.join("metrics.txt"), r.to_key_values())?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = args.tracker.resolve()?;
    let seq = synth::generate(&args.synth.config());
    let provider = LoadedProvider::load(&cfg)?;
    let out = run_sequence(&seq.input, &cfg, provider.as_dyn())?;
    let r = report(&seq.gt, &out)?;
    println!(
        "{}: {} frames, {} detections, {} gt boxes, {} tracks created",
        seq.input.name,
        out.frames,
        seq.input.num_detections(),
        seq.gt.len(),
        out.tracks_created
    );
    println!("{r}");
    if let Some(dir) = &args.out_dir {
        write_bench_files(dir, &seq, &out, &r)?;
    }
    Ok(())
}

struct AblationRow {
    label: &'static str,
    report: MetricsReport,
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let (input, gt) = match &args.dets {
        Some(dets) => {
            let size = args.image_size.as_deref().map(parse_image_size).transpose()?;
            let input = load_sequence(dets, args.embeddings.as_deref(), size)?;
            let gt = io::load_mot_tracks(args.gt.as_ref().expect("clap requires --gt"))?;
            (input, gt)
        }
        None => {
            let seq = synth::generate(&args.synth.config());
            (seq.input, seq.gt)
        }
    };
    if input.image_size.is_none() {
        bail!("ablation needs the image size (--image-size or seqinfo.ini)");
    }

    let mut variants: Vec<(&'static str, Stage1Mode, bool)> = vec![
        ("B", Stage1Mode::Off, false),
        ("B&MA", Stage1Mode::Off, true),
        ("B&SA", Stage1Mode::Adaptive, false),
        ("B&SA&MA", Stage1Mode::Adaptive, true),
    ];
    if args.with_hungarian {
        variants.push(("B&H", Stage1Mode::Hungarian, false));
        variants.push(("B&H&MA", Stage1Mode::Hungarian, true));
    }

    let mut rows = Vec::new();
    for (label, mode, mv) in variants {
        let mut cfg = TrackerConfig {
            stage1_mode: mode,
            ..Default::default()
        };
        cfg.lifecycle.mv_aware = mv;
        cfg.lifecycle.image_size = input.image_size;
        let mut best: Option<SequenceOutput> = None;
        for _ in 0..args.repeats.max(1) {
            let out = run_sequence(&input, &cfg, Some(&CosineProvider))?;
            if best.as_ref().is_none_or(|b| out.association_time < b.association_time) {
                best = Some(out);
            }
        }
        let out = best.expect("at least one repeat");
        rows.push(AblationRow {
            label,
            report: report(&gt, &out)?,
        });
    }

    let table: Vec<String> = rows.iter().map(|r| r.report.to_string()).collect();
    println!("{:<10}{}", "config", table[0].lines().next().unwrap_or_default());
    for (r, text) in rows.iter().zip(&table) {
        println!("{:<10}{}", r.label, text.lines().nth(1).unwrap_or_default());
    }
    Ok(())
}

fn main() -> Result<()> {
    init_logging();
    match Cli::parse().command {
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}
