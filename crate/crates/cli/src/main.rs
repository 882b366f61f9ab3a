use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdc_core::encode::CentroidMode;

mod commands;
mod config;
mod error;
mod render;

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "kdc", version, about = "KeyCentroid / MaskCentroid pose and instance segmentation on dense fields")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the config file, which overrides the defaults.
#[derive(Debug, Default, Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    radius: Option<f64>,
    #[arg(long, global = true)]
    sigma_hvk: Option<f64>,
    #[arg(long, global = true)]
    sigma_lvk: Option<f64>,
    #[arg(long, global = true)]
    sigma_instance: Option<f64>,
    #[arg(long, global = true)]
    sigma_igo: Option<f64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<CentroidMode>,
    /// Offset and KeyCentroid noise σ (pixels).
    #[arg(long, global = true)]
    noise: Option<f64>,
    #[arg(long, global = true)]
    heatmap_noise: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    persons: Option<usize>,
    #[arg(long, global = true)]
    count: Option<usize>,
    #[arg(long, global = true)]
    canvas: Option<usize>,
    /// Target fraction of the second person hidden behind the first.
    #[arg(long, global = true)]
    occlude: Option<f64>,
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    warmup: Option<usize>,
    /// Number of seeds per ablation setting.
    #[arg(long, global = true)]
    seeds: Option<usize>,
}

fn parse_mode(s: &str) -> Result<CentroidMode, String> {
    s.parse().map_err(|e: kdc_core::KdcError| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes as a COCO-style dataset with previews.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a dataset into KDCF target fields.
    Encode {
        /// dataset.json written by `gen`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode (optionally perturbed) fields into keypoint and mask results.
    Decode {
        /// Directory written by `encode`.
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score results against ground truth.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory written by `decode`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the full decode single-threaded and in parallel.
    Bench {
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a KDCF channel or segmentation results as PGM.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Image to draw from a results file; defaults to the first one.
        #[arg(long)]
        image_id: Option<u64>,
    },
    /// Run the centroid-mode, disk-radius and IGO sweeps.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config,
}

impl Overrides {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        set!(
            radius => c.radius,
            sigma_hvk => c.sigma_hvk,
            sigma_lvk => c.sigma_lvk,
            sigma_instance => c.sigma_instance,
            sigma_igo => c.sigma_igo,
            threshold => c.threshold,
            mode => c.mode,
            noise => c.noise,
            heatmap_noise => c.heatmap_noise,
            seed => c.seed,
            workers => c.workers,
            persons => c.persons,
            count => c.count,
            canvas => c.canvas,
            iters => c.bench_iters,
            warmup => c.bench_warmup,
            seeds => c.ablation.seeds,
        );
        if self.occlude.is_some() {
            c.occlude = self.occlude;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.overrides.resolve()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| CliError::config(e.to_string()))?;
    log::debug!("config: {cfg:?}");
    match cli.command {
        Command::Gen { out } => commands::gen(&cfg, &out),
        Command::Encode { dataset, out } => commands::encode(&cfg, &dataset, &out),
        Command::Decode { fields, out } => commands::decode(&cfg, &fields, &out),
        Command::Eval { dataset, results, out } => commands::eval(&dataset, &results, &out),
        Command::Bench { out } => commands::bench(&cfg, out.as_deref()),
        Command::Render {
            input,
            out,
            channel,
            image_id,
        } => commands::render(&input, &out, channel, image_id),
        Command::Ablate { out } => commands::ablate(&cfg, &out),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KDC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
