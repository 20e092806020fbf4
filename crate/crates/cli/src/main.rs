//! `rmsh`: file-based pipeline for robust multilevel semantic hashing.
//!
//! ```text
//! rmsh gen    --out-dir data
//! rmsh bounds --labels data/train.labels --k 32
//! rmsh train  --data-dir data --out-dir run
//! rmsh encode --checkpoint run/model.ckpt --features data/query.image.feat --modality image
//! rmsh eval   --queries ... --query-labels ... --database ... --database-labels ...
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rmsh_core::bounds::NeighborMode;
use rmsh_core::data::Modality;
use rmsh_core::eval::Task;
use rmsh_core::trainer::DeltaSetting;

mod commands;
mod config;
mod manifest;

use commands::{BoundsArgs, Ctx, EncodeArgs, EvalArgs, SearchArgs};
use config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "rmsh",
    version,
    about = "Robust multilevel semantic hashing: bounds, training, retrieval and evaluation"
)]
struct Cli {
    /// Overrides the generator and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file; see config.example.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Suppress log lines on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Effective delta interval for a label file.
    Bounds {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long, value_parser = commands::parse_neighbor_mode)]
        mode: Option<NeighborMode>,
    },
    /// Synthetic train/query splits.
    Gen {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_query: Option<usize>,
        #[arg(long)]
        tags: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit a model on `<prefix>.{image.feat,text.feat,labels}`.
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "train")]
        prefix: String,
        #[arg(long)]
        k: Option<usize>,
        /// Integer or "auto".
        #[arg(long)]
        delta: Option<DeltaSetting>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Binary codes for a feature file.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        modality: Modality,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the relaxed code vectors as CSV.
        #[arg(long)]
        relaxed: Option<PathBuf>,
        /// Reject checkpoints whose code length differs.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Hamming top-k for selected query codes.
    Search {
        #[arg(long)]
        database: PathBuf,
        /// Defaults to the database file.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long, conflicts_with = "ids")]
        all: bool,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// NDCG and precision-recall for a query/database pair of code files.
    Eval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        query_labels: PathBuf,
        #[arg(long)]
        database: PathBuf,
        #[arg(long)]
        database_labels: PathBuf,
        #[arg(long, default_value = "i2t")]
        task: Task,
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        /// Also write Hamming distance histograms per similarity level.
        #[arg(long)]
        distance_hist: bool,
    },
    /// Train and evaluate over a grid of one parameter and several seeds.
    Sweep {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        param: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        cutoff: Option<usize>,
    },
}

fn run(cli: Cli) -> rmsh_core::Result<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    }
    .with_seed(cli.seed);

    match &cli.command {
        Command::Gen {
            n_train,
            n_query,
            tags,
            theta,
            noise,
        } => {
            let g = &mut config.gen;
            g.n_train = n_train.unwrap_or(g.n_train);
            g.n_query = n_query.unwrap_or(g.n_query);
            g.tags = tags.unwrap_or(g.tags);
            g.theta = theta.unwrap_or(g.theta);
            g.noise = noise.unwrap_or(g.noise);
        }
        Command::Train {
            k, delta, epochs, ..
        } => {
            let t = &mut config.train;
            t.k = k.unwrap_or(t.k);
            t.delta = delta.unwrap_or(t.delta);
            t.epochs = epochs.unwrap_or(t.epochs);
            t.validate()?;
        }
        Command::Sweep {
            param,
            values,
            seeds,
            cutoff,
            ..
        } => {
            let s = &mut config.sweep;
            if let Some(p) = param {
                s.param = p.clone();
            }
            if let Some(v) = values {
                s.values = v.clone();
            }
            if let Some(v) = seeds {
                s.seeds = v.clone();
            }
            s.cutoff = cutoff.unwrap_or(s.cutoff);
        }
        _ => {}
    }

    std::fs::create_dir_all(&cli.out_dir).map_err(|e| commands::io_err(&cli.out_dir, e))?;
    let ctx = Ctx {
        config,
        out_dir: cli.out_dir,
        quiet: cli.quiet,
        seed: cli.seed,
    };

    match cli.command {
        Command::Bounds {
            labels,
            k,
            confidence,
            mode,
        } => commands::bounds(
            &ctx,
            BoundsArgs {
                labels,
                k,
                confidence,
                mode,
            },
        ),
        Command::Gen { .. } => commands::gen(&ctx),
        Command::Train {
            data_dir, prefix, ..
        } => commands::train(&ctx, &data_dir, &prefix),
        Command::Encode {
            checkpoint,
            features,
            modality,
            output,
            relaxed,
            k,
        } => commands::encode(
            &ctx,
            EncodeArgs {
                checkpoint,
                features,
                modality,
                output,
                relaxed,
                k,
            },
        ),
        Command::Search {
            database,
            queries,
            ids,
            all,
            k,
        } => commands::search(
            &ctx,
            SearchArgs {
                database,
                queries,
                ids,
                all,
                k,
            },
        ),
        Command::Eval {
            queries,
            query_labels,
            database,
            database_labels,
            task,
            cutoffs,
            distance_hist,
        } => commands::eval(
            &ctx,
            EvalArgs {
                queries,
                query_labels,
                database,
                database_labels,
                task,
                cutoffs,
                distance_hist,
            },
        ),
        Command::Sweep { data_dir, .. } => commands::sweep(&ctx, &data_dir),
    }
}

fn report_error(code: &str, message: &str) {
    let body = serde_json::json!({ "error": { "code": code, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.code(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
