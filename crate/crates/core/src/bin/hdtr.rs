use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hdtr_core::inference::{bench, evaluate_dir, ReferencePolicy, RestoreSession};
use hdtr_core::metrics::{aggregate, render_table, MetricReport};
use hdtr_core::training::checkpoint::Checkpoint;
use hdtr_core::training::{self, generator_from_checkpoint, synthesize_faces, synthesize_video, TrainConfig, SEED_ENV};
use hdtr_core::{Generator, ImageF32, LandmarkSet, ModelConfig};

/// Mouth-region restoration for talking-face video.
#[derive(Parser)]
#[command(name = "hdtr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/discriminator pair from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Restore a directory of frames, writing same-named outputs and one JSON metric
    /// record per frame to stdout.
    Restore(RestoreArgs),
    /// Score frames with the eight sharpness metrics.
    Evaluate {
        #[arg(long)]
        frames: PathBuf,
        /// Second directory scored alongside for comparison.
        #[arg(long)]
        against: Option<PathBuf>,
        /// Score only the aligned mouth crops.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Write per-frame records here as JSON lines.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time single-frame generator forwards.
    Bench {
        /// Without a checkpoint, a freshly initialized default generator is timed.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Write a synthetic face video with landmark sidecars.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        /// Independent faces instead of one slowly moving face.
        #[arg(long)]
        independent: bool,
        /// Repeat the first frame.
        #[arg(long, conflicts_with = "independent")]
        identical: bool,
        /// Frame indices written with an empty landmark file.
        #[arg(long, value_delimiter = ',')]
        drop_landmarks: Vec<usize>,
    },
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// previous_output, self or fixed_frame.
    #[arg(long, default_value = "previous_output")]
    ref_policy: String,
    /// Reference still for fixed_frame: a 96x96 crop, or a frame with --ref-landmarks.
    #[arg(long)]
    ref_image: Option<PathBuf>,
    #[arg(long, requires = "ref_image")]
    ref_landmarks: Option<PathBuf>,
    /// Feather width in pixels at the crop border.
    #[arg(long, default_value_t = 0)]
    blend_width: u32,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<hdtr_core::Error>()
                .map(|e| e.kind())
                .unwrap_or("cli");
            let line = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::from(if kind == "config" || kind == "cli" { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let (_, last) = training::train(&cfg, &Device::Cpu)?;
            println!("{}", serde_json::to_string(&last)?);
            Ok(())
        }
        Command::Restore(args) => restore(args),
        Command::Evaluate {
            frames,
            against,
            landmarks,
            report,
        } => {
            let mut dirs = vec![("frames", frames)];
            if let Some(a) = against {
                dirs.push(("against", a));
            }
            let mut all = Vec::new();
            let mut rows = Vec::new();
            for (label, dir) in &dirs {
                let reports = evaluate_dir(dir, landmarks.as_deref())?;
                rows.push((label.to_string(), aggregate(&reports)?));
                all.extend(reports);
            }
            if let Some(path) = report {
                write_reports(&path, &all)?;
            }
            let table: Vec<_> = rows.iter().map(|(l, a)| (l.as_str(), a)).collect();
            print!("{}", render_table(&table));
            Ok(())
        }
        Command::Bench { ckpt, iters, warmup } => {
            let generator = match ckpt {
                Some(p) => generator_from_checkpoint(&Checkpoint::load(&p, &Device::Cpu)?, &Device::Cpu)?,
                None => Generator::new(&ModelConfig::default(), 0, DType::F32, &Device::Cpu)?,
            };
            let stats = bench(&generator, iters, warmup)?;
            println!("{}", serde_json::to_string(&stats)?);
            Ok(())
        }
        Command::Synth {
            out,
            frames,
            size,
            seed,
            independent,
            identical,
            drop_landmarks,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut video = if independent {
                synthesize_faces(frames, size, size, &mut rng)?
            } else {
                synthesize_video(frames, size, size, &mut rng)?
            };
            if identical {
                let first = video.first().cloned().context("--frames must be at least 1")?;
                video.iter_mut().for_each(|f| *f = first.clone());
            }
            let (fd, ld) = (out.join("frames"), out.join("landmarks"));
            std::fs::create_dir_all(&fd)?;
            std::fs::create_dir_all(&ld)?;
            for (i, f) in video.iter().enumerate() {
                f.image.save(&fd.join(format!("{i:05}.png")))?;
                let text = if drop_landmarks.contains(&i) {
                    String::new()
                } else {
                    f.landmarks.to_text()
                };
                std::fs::write(ld.join(format!("{i:05}.txt")), text)?;
            }
            Ok(())
        }
    }
}

fn restore(args: RestoreArgs) -> anyhow::Result<()> {
    let policy: ReferencePolicy = args.ref_policy.parse()?;
    let mut session = RestoreSession::from_checkpoint(&args.ckpt, policy)?.with_blend_width(args.blend_width);
    match (&args.ref_image, policy) {
        (Some(img), _) => {
            let lm = match &args.ref_landmarks {
                Some(p) => Some(LandmarkSet::load(p)?.context("reference landmark file is empty")?),
                None => None,
            };
            session = session.with_fixed_reference(ImageF32::load(img)?, lm.as_ref())?;
        }
        (None, ReferencePolicy::FixedFrame) => bail!(hdtr_core::Error::Config(
            "--ref-policy fixed_frame needs --ref-image".into()
        )),
        _ => {}
    }
    let reports = session.restore_video(&args.frames, &args.landmarks, &args.out)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for r in &reports {
        writeln!(lock, "{}", serde_json::to_string(r)?)?;
    }
    if let Some(path) = &args.report {
        write_reports(path, &reports)?;
    }
    Ok(())
}

fn write_reports(path: &Path, reports: &[MetricReport]) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in reports {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    Ok(())
}
