use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asemm::datasynth::{Dataset, RasterImage, SynthConfig};
use asemm::harness::{self, Phase, RunConfig, Task, Variant};
use asemm::perception::extract_stats;
use asemm::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "asemm", version, about = "Synthetic dot-pattern defect classification lab")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Skip the augmented training copies.
        #[arg(long)]
        no_augment: bool,
    },
    /// Warm-up, alignment and fusion; resumes after the last finished phase.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory for checkpoints and the stage log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split and write metrics.csv and summary.json.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "multi")]
        task: Task,
        /// Defaults to <run>/metrics-<task>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant under several seeds and compare.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Subset of pfa5, pfa3, direct, none, concat, nosigmoid, tda-off.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Write pooled image embeddings of every sample as CSV.
    Embed {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// warmup, pfa or final.
        #[arg(long, default_value = "final")]
        stage: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print statistics recovered from PGM images, one JSON object per line.
    ExtractStats {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> asemm::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> asemm::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> asemm::Result<()> {
    match cli.command {
        Command::Synth { common, out, no_augment } => {
            let mut cfg = load_config(&common)?;
            if no_augment {
                cfg.synth.augment = false;
            }
            let data = harness::synthesize(&cfg)?;
            data.write(&out)?;
            println!("wrote {} samples to {}", data.samples.len(), out.display());
        }
        Command::Train { common, data, out } => {
            let mut cfg = load_config(&common)?;
            let dir = data.or_else(|| cfg.dataset.clone()).ok_or_else(|| {
                Error::Config("no dataset given; pass --data DIR (create one with `asemm synth --out DIR`)".into())
            })?;
            let dataset = Dataset::load(&dir)?;
            if dataset.config.canvas != cfg.model.canvas {
                return Err(Error::Config(format!(
                    "dataset canvas {} does not match model.canvas {}",
                    dataset.config.canvas, cfg.model.canvas
                )));
            }
            cfg.dataset = Some(dir);
            let outcome = harness::train(&cfg, &dataset, Some(&out))?;
            for p in &outcome.resumed {
                println!("phase {p:?} already done, skipped");
            }
            println!("checkpoints in {}", out.display());
        }
        Command::Eval { run, data, task, out } => {
            let (cfg, model) = harness::load_model(&run, Phase::Fusion)?;
            let dataset = Dataset::load(&data)?;
            let report = harness::evaluate(&model, &dataset, task)?;
            let dir = out.unwrap_or_else(|| run.join(format!("metrics-{}", task.as_str())));
            report.write(&dir, &cfg.header())?;
            println!("{} macro f1 {:.4}; metrics in {}", task.as_str(), report.macro_f1, dir.display());
        }
        Command::Ablate { common, out, seeds, variants } => {
            let cfg = load_config(&common)?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| Variant::parse(v)).collect::<asemm::Result<_>>()?
            };
            let table = harness::ablate(&cfg, &variants, &seeds)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write(&out.join("ablation.csv"), &table.to_csv(&cfg.header()))?;
            write(&out.join("ablation.json"), &table.to_json(&cfg.header()))?;
            for d in &table.directions {
                println!("{:<12} {} {}", d.name, if d.holds { "holds " } else { "fails " }, d.detail);
            }
        }
        Command::Embed { run, data, stage, out } => {
            let phase = Phase::from_tag(&stage)?;
            let (cfg, model) = harness::load_model(&run, phase)?;
            let dataset = Dataset::load(&data)?;
            let csv = harness::export_embeddings(&model, &dataset, &format!("{} stage={stage}", cfg.header()))?;
            write(&out, &csv)?;
        }
        Command::ExtractStats { common, images } => {
            let cfg = load_config(&common)?;
            let rings = cfg.synth.rings()?;
            let defaults = SynthConfig::default();
            for path in images {
                let image = RasterImage::read_pgm(&path, defaults.extent, defaults.dot_radius)?;
                let stats = extract_stats(&image, &rings)?;
                let line = serde_json::json!({ "path": path.display().to_string(), "stats": stats });
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
