use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepclust::features::FeatureKind;
use deepclust::metrics::{write_table, TABLE_HEADER};
use deepclust::pipeline::{self, ClusterMethod, PipelineConfig, Workspace, CONFIG_FILE};
use deepclust::synth::{shapes_fixture, write_fixture, FixtureFormat, ShapesConfig};
use deepclust::{Error, Result};

#[derive(Parser)]
#[command(name = "deepclust", version, about = "Unsupervised clustering of monochrome image collections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Workdir {
    /// Workspace directory holding config.json and every stage output.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a directory of DICOM or PGM files into split manifests and a pixel cache.
    Ingest {
        #[arg(long)]
        input_dir: PathBuf,
        /// CSV with columns id,modality,anatomical_region.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        dir: Workdir,
        /// Configuration to start from instead of the workspace's config.json.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        /// Proportions such as 80/20 or 70/10/20.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the convolutional autoencoder on the training split.
    TrainCae(Workdir),
    /// Write autoencoder embeddings for every split.
    Embed(Workdir),
    /// Compute fixed descriptors for every split.
    Features {
        #[command(flatten)]
        dir: Workdir,
        #[arg(long, value_delimiter = ',', default_value = "pca,hog,lbp")]
        kind: Vec<FeatureKind>,
    },
    /// Fit one clustering pipeline and score it on the evaluation split.
    Cluster {
        #[command(flatten)]
        dir: Workdir,
        #[arg(long)]
        method: ClusterMethod,
        #[arg(long, default_value = "cae")]
        features: FeatureKind,
    },
    /// Repeat all six pipelines over consecutive seeds and tabulate mean and variance.
    Evaluate {
        #[command(flatten)]
        dir: Workdir,
        /// Defaults to the configured number of runs.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// t-SNE projection of a clustered pipeline's embedding.
    Project {
        #[command(flatten)]
        dir: Workdir,
        #[arg(long)]
        method: ClusterMethod,
        #[arg(long, default_value = "cae")]
        features: FeatureKind,
    },
    /// Generate the labelled synthetic shapes corpus.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        modalities: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "pgm")]
        format: Format,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Pgm,
    Dicom,
}

fn ingest_config(out: &Path, config: Option<&Path>) -> Result<PipelineConfig> {
    match config {
        Some(path) => PipelineConfig::load(path),
        None if out.join(CONFIG_FILE).exists() => PipelineConfig::load(&out.join(CONFIG_FILE)),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            input_dir,
            labels,
            dir,
            config,
            size,
            split,
            seed,
        } => {
            let mut cfg = ingest_config(&dir.out, config.as_deref())?;
            if let Some(s) = size {
                cfg.size = s;
            }
            if let Some(s) = split {
                cfg.split = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ws = Workspace::create(&dir.out, cfg)?;
            let s = pipeline::ingest(&ws, &input_dir, labels.as_deref())?;
            println!("split,records");
            println!("train,{}\nvalidation,{}\ntest,{}\nexcluded,{}", s.train, s.validation, s.test, s.excluded);
        }
        Command::TrainCae(dir) => {
            let ws = Workspace::open(&dir.out)?;
            let log = pipeline::train_cae(&ws)?;
            if let Some(last) = log.last() {
                println!("epochs,train_loss,val_loss");
                let val = last.val_loss.map_or(String::new(), |v| format!("{v:.6}"));
                println!("{},{:.6},{val}", log.len(), last.train_loss);
            }
        }
        Command::Embed(dir) => {
            let ws = Workspace::open(&dir.out)?;
            println!("split,rows,dimension");
            for art in pipeline::embed(&ws)? {
                println!("{},{},{}", art.meta.split, art.matrix.rows(), art.matrix.cols());
            }
        }
        Command::Features { dir, kind } => {
            let ws = Workspace::open(&dir.out)?;
            pipeline::features(&ws, &kind)?;
        }
        Command::Cluster { dir, method, features } => {
            let ws = Workspace::open(&dir.out)?;
            let s = pipeline::cluster(&ws, method, features)?;
            let v = s.scores.values();
            println!("{TABLE_HEADER}");
            println!(
                "{method}+{features},{:.6},{:.6},{:.6},{:.6},{:.6}",
                v[0], v[1], v[2], v[3], v[4]
            );
        }
        Command::Evaluate { dir, runs } => {
            let ws = Workspace::open(&dir.out)?;
            let runs = runs.unwrap_or(ws.config().runs);
            let reports = pipeline::evaluate(&ws, runs)?;
            let mut out = std::io::stdout().lock();
            write_table(&mut out, &reports, false)?;
        }
        Command::Project { dir, method, features } => {
            let ws = Workspace::open(&dir.out)?;
            let r = pipeline::project(&ws, method, features)?;
            println!("iteration,kl");
            for (it, kl) in &r.kl_trace {
                println!("{it},{kl:.6}");
            }
        }
        Command::Fixture {
            out,
            count,
            size,
            modalities,
            noise,
            seed,
            format,
        } => {
            let images = shapes_fixture(&ShapesConfig {
                count,
                size,
                modalities,
                noise,
                seed,
            })?;
            let format = match format {
                Format::Pgm => FixtureFormat::Pgm,
                Format::Dicom => FixtureFormat::Dicom,
            };
            write_fixture(&out, &images, format)?;
        }
    }
    Ok(())
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = Error::Config(e.kind().to_string());
            eprintln!("{}", e.render());
            eprintln!("{}", error_json("usage", &err.to_string(), err.exit_code()));
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            ExitCode::from(code as u8)
        }
    }
}
