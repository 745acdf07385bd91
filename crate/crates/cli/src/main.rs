use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rwkv_ts::bench::{BenchOptions, DEFAULT_LENGTHS};
use rwkv_ts::block::Mode;
use rwkv_ts::commands;
use rwkv_ts::config::{Overrides, RunConfig};
use rwkv_ts::numeric::{Activation, OpKind, Precision};
use rwkv_ts::Error;

#[derive(Parser)]
#[command(name = "rwkv-ts", version, about = "RWKV time-series forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch and write the best-epoch checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Test-split MSE and MAE of a checkpoint, in standardized units.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast the steps after the last window of a CSV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with a timestamp column and the model's channels.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Latency and memory scaling over the patch count.
    Bench {
        /// Comma-separated patch counts.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Time forward plus backward.
        #[arg(long)]
        backward: bool,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        n_heads: Option<usize>,
        #[arg(long)]
        n_layers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare parallel and streaming forecasts on random models.
    CheckEquivalence {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Defaults to 1e-9 at f64 and 1e-4 at f32.
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every parameter gradient (64-bit).
    CheckGradients {
        /// Corrupt one backward rule to confirm the check can fail.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        precision: common.precision,
        mode: common.mode,
        out: common.out.clone(),
    })?;
    Ok(cfg)
}

fn parse_op(name: &str) -> Result<OpKind, Error> {
    Ok(match name {
        "matmul" => OpKind::MatMul,
        "add" => OpKind::Add,
        "mul" => OpKind::Mul,
        "add-row" => OpKind::AddRow,
        "sigmoid" => OpKind::Activation(Activation::Sigmoid),
        "silu" => OpKind::Activation(Activation::Silu),
        "sq-relu" => OpKind::Activation(Activation::SqRelu),
        "group-norm" => OpKind::GroupNorm,
        "token-shift" => OpKind::TokenShift,
        "wkv" => OpKind::Wkv,
        "reshape" => OpKind::Reshape,
        "scale-rows" => OpKind::ScaleRows,
        "mse" => OpKind::Mse,
        other => return Err(Error::Config(format!("unknown operation {other:?}"))),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let out = commands::cmd_train(&cfg, &mut |line| println!("{line}"))?;
            println!(
                "best_epoch={} best_val_mse={:.9} stop={:?} parameters={}",
                out.report.best_epoch, out.report.best_val_mse, out.report.stop_reason, out.parameters
            );
            if let Some(t) = out.test {
                println!("test {t}");
            }
            if let Some(p) = out.persistence {
                println!("persistence {p}");
            }
            println!("checkpoint={} report={}", out.checkpoint.display(), cfg.report_path().display());
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            horizon,
            common,
        } => {
            let r = commands::cmd_evaluate(&checkpoint, dataset.as_deref(), horizon, common.precision, common.mode)?;
            let line = format!("{}\n", r.metrics);
            print!("{line}");
            println!("persistence {}", r.persistence);
            if let Some(out) = &common.out {
                write_text(out, &line)?;
            }
        }
        Command::Predict {
            checkpoint,
            input,
            common,
        } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Config("predict needs --out <path>".into()))?;
            let ts = commands::cmd_predict(&checkpoint, &input, &out, common.mode)?;
            println!("wrote {} steps x {} channels to {}", ts.len(), ts.channels(), out.display());
        }
        Command::Bench {
            lengths,
            repeats,
            backward,
            d_model,
            n_heads,
            n_layers,
            common,
        } => {
            let mut cfg = load_config(&Common {
                out: None,
                ..common.clone()
            })?
            .model();
            cfg.d_model = d_model.unwrap_or(cfg.d_model);
            cfg.n_heads = n_heads.unwrap_or(cfg.n_heads);
            cfg.n_layers = n_layers.unwrap_or(cfg.n_layers);
            let lengths = lengths.unwrap_or_else(|| DEFAULT_LENGTHS.to_vec());
            let opts = BenchOptions {
                repeats,
                backward,
                ..BenchOptions::default()
            };
            let report = commands::cmd_bench(&cfg, &lengths, &opts, common.out.as_deref())?;
            print!("{}", report.to_lines());
        }
        Command::CheckEquivalence {
            trials,
            tolerance,
            common,
        } => {
            let precision = common.precision.unwrap_or(Precision::F64);
            let tol = tolerance.unwrap_or(match precision {
                Precision::F64 => 1e-9,
                Precision::F32 => 1e-4,
            });
            let r = commands::cmd_check_equivalence(common.seed.unwrap_or(0), trials, tol, precision)?;
            for t in &r.trials {
                println!(
                    "seed={} d_model={} n_heads={} n_layers={} n_patches={} channels={} max_dev={:.3e}",
                    t.seed, t.d_model, t.n_heads, t.n_layers, t.n_patches, t.channels, t.max_deviation
                );
            }
            println!(
                "{} max_dev={:.3e} tolerance={:.1e} worst_seed={}",
                if r.passed { "PASS" } else { "FAIL" },
                r.max_deviation,
                r.tolerance,
                r.worst_seed
            );
            if let Some(out) = &common.out {
                commands::write_json(out, &r)?;
            }
            if !r.passed {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::CheckGradients { corrupt, common } => {
            let fault = corrupt.as_deref().map(parse_op).transpose()?;
            let r = commands::cmd_grad_check(common.seed.unwrap_or(0), fault)?;
            for g in &r.groups {
                println!("group={} max_rel_error={:.3e}", g.group, g.max_rel_error);
            }
            println!(
                "{} max_rel_error={:.3e} threshold={:.0e} worst_group={}",
                if r.passed { "PASS" } else { "FAIL" },
                r.max_rel_error,
                r.threshold,
                r.worst_group
            );
            if let Some(out) = &common.out {
                commands::write_json(out, &r)?;
            }
            if !r.passed {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
