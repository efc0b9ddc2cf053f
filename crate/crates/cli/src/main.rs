use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use qdec_core::nn::write_history_csv;
use qdec_core::search::exact_knn;
use qdec_core::serialize::{load, save, Model};
use qdec_core::vecs::{write_fvecs, write_ivecs};

use qdec_cli::data::{load_base_query, load_train_val, read_matrix};
use qdec_cli::drivers::{
    run_preliminary_experiment, run_recall_experiment, run_rerank_sweep, run_sensitivity_sweep,
};
use qdec_cli::pipeline::{fit_decoder, EncoderModel, FitData};
use qdec_cli::{load_dataset, CliError, DecoderKind, ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "qdec",
    version,
    about = "Compact codes, decoders and nearest-neighbor search"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration: one `key = value` per line.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured encoder on the training split.
    TrainEncoder {
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a vector file with a trained encoder.
    Encode {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a decoder on the codes of the training split.
    FitDecoder {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        kind: DecoderKind,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV, for the neural decoder.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Recall over all seeds for every configured decoder.
    Eval,
    /// Accuracy and time of shortlist re-ranking.
    RerankSweep,
    /// Reconstruction MSE against training-set size for 16-bit codes.
    Prelim,
    /// One-factor-at-a-time decoder training sweep.
    Sensitivity,
    /// Write synthetic train/base/query files and their ground truth.
    GenSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Exact nearest neighbors of the queries, as `.ivecs`.
    Groundtruth {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
}

fn load_encoder(path: &Path) -> Result<EncoderModel> {
    EncoderModel::from_model(load(path)?)
}

fn write_knn(
    base: &qdec_core::DenseMatrix,
    query: &qdec_core::DenseMatrix,
    k: usize,
    out: &Path,
) -> Result<()> {
    let k = k.min(base.rows());
    let res = exact_knn(base, query, k)?;
    let ids: Vec<i32> = res
        .iter()
        .flat_map(|r| r.ids.iter().map(|&i| i as i32))
        .collect();
    write_ivecs(out, k, &ids)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::TrainEncoder { out } => {
            let (train, _) = load_train_val(&cfg)?;
            let seed = cfg.seeds[0];
            let enc = EncoderModel::train(&cfg, &train, seed)?;
            save(&out, &enc.to_model())?;
            info!("encoder written to {}", out.display());
        }
        Command::Encode {
            encoder,
            input,
            out,
        } => {
            let enc = load_encoder(&encoder)?;
            let x = read_matrix(&input, None)?;
            save(&out, &Model::Codes(enc.encode(&x)?))?;
        }
        Command::FitDecoder {
            encoder,
            kind,
            out,
            history,
        } => {
            let enc = load_encoder(&encoder)?;
            let (train, val) = load_train_val(&cfg)?;
            let (ct, cv) = (enc.encode(&train)?, enc.encode(&val)?);
            let data = FitData {
                codes_train: &ct,
                x_train: &train,
                codes_val: &cv,
                x_val: &val,
            };
            let mut tc = cfg.train.clone();
            tc.seed = cfg.seeds[0];
            let fit = fit_decoder(kind, &enc, &data, cfg.aq_lambda, &tc)?;
            let dec = fit.decoder.as_decoder(&enc);
            info!(
                "{kind}: train MSE {:.6}, validation MSE {:.6}",
                dec.decode(&ct)?.mse(&train)?,
                dec.decode(&cv)?.mse(&val)?
            );
            save(&out, &fit.decoder.to_model(&enc))?;
            if let Some(h) = history {
                write_history_csv(BufWriter::new(File::create(h)?), &fit.history)?;
            }
        }
        Command::Eval => {
            let ds = load_dataset(&cfg)?;
            for row in run_recall_experiment(&cfg, &ds)? {
                println!(
                    "{} R@{}: {:.4} ± {:.4}",
                    row.config, row.r, row.recall, row.recall_std
                );
            }
        }
        Command::RerankSweep => {
            let ds = load_dataset(&cfg)?;
            for row in run_rerank_sweep(&cfg, &ds)? {
                println!(
                    "L={} R@{}: {:.4}  scan {:.3} ms  rerank {:.4} ms",
                    row.l, row.r, row.recall, row.scan_ms, row.rerank_ms
                );
            }
        }
        Command::Prelim => {
            let ds = load_dataset(&cfg)?;
            for row in run_preliminary_experiment(&cfg, &ds)? {
                println!(
                    "{} {} {}: train {:.6} val {:.6}",
                    row.ntrain, row.encoder, row.decoder, row.train_mse, row.val_mse
                );
            }
        }
        Command::Sensitivity => {
            let ds = load_dataset(&cfg)?;
            for row in run_sensitivity_sweep(&cfg, &ds)? {
                println!(
                    "{}={}: final val {:.6}, beats natural at epoch {:?}",
                    row.factor,
                    row.value,
                    row.last().val_mse,
                    row.epochs_to_beat_natural
                );
            }
        }
        Command::GenSynthetic { out_dir } => {
            if cfg.train_path.is_some() {
                return Err(CliError::Config(
                    "gen-synthetic ignores file inputs; unset train/base/query".into(),
                ));
            }
            std::fs::create_dir_all(&out_dir)?;
            let (train, val) = load_train_val(&cfg)?;
            let (base, query) = load_base_query(&cfg)?;
            // validation rows go last, where the file loader looks for them
            write_fvecs(out_dir.join("train.fvecs"), &train.vstack(&val)?)?;
            write_fvecs(out_dir.join("base.fvecs"), &base)?;
            write_fvecs(out_dir.join("query.fvecs"), &query)?;
            let k = cfg.recall_at.iter().copied().max().unwrap_or(1);
            write_knn(&base, &query, k, &out_dir.join("groundtruth.ivecs"))?;
            info!("synthetic data written to {}", out_dir.display());
        }
        Command::Groundtruth {
            base,
            query,
            out,
            k,
        } => {
            let base = read_matrix(&base, None)?;
            let query = read_matrix(&query, None)?;
            write_knn(&base, &query, k, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
