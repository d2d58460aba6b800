use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use axum::http::HeaderValue;
use clap::{Parser, Subcommand, ValueEnum};
use flowscope_core::env::GridConfig;
use flowscope_core::policy::{EstimatorConfig, TrainConfig};
use flowscope_server::analyze::{analyze, AnalyzeOptions};
use flowscope_server::api::{router, AppState};
use flowscope_server::report::{write_report, ReportOptions};
use flowscope_server::run::{run_training, EnvSpec, RunConfig};

#[derive(Parser)]
#[command(name = "flowscope", version, about = "Train, analyze and explore GFlowNet sampling runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvName {
    Grid,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with trajectory balance, logging every trajectory.
    Train {
        #[arg(long, env = "GFLOWSTATE_DB")]
        db: PathBuf,
        #[arg(long, value_enum, default_value = "grid", env = "GFLOWSTATE_ENV")]
        env: EnvName,
        #[arg(long, default_value_t = 20, env = "GFLOWSTATE_HEIGHT")]
        height: u32,
        #[arg(long, default_value_t = 1000, env = "GFLOWSTATE_ITERATIONS")]
        iterations: u64,
        #[arg(long, default_value_t = 16, env = "GFLOWSTATE_BATCH_SIZE")]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3, env = "GFLOWSTATE_LR")]
        lr: f64,
        #[arg(long, default_value_t = 0.1, env = "GFLOWSTATE_LOG_Z_LR")]
        log_z_lr: f64,
        #[arg(long, default_value_t = 0.05, env = "GFLOWSTATE_EPSILON")]
        epsilon: f64,
        #[arg(long, default_value_t = 0, env = "GFLOWSTATE_SEED")]
        seed: u64,
        #[arg(long, default_value_t = 64, env = "GFLOWSTATE_HIDDEN")]
        hidden: usize,
        /// JSONL validation set; defaults to every state of the environment.
        #[arg(long, env = "GFLOWSTATE_VALIDATION")]
        validation: Option<PathBuf>,
        /// Replace an existing database file.
        #[arg(long)]
        force: bool,
        /// Run the analyze pass right after training.
        #[arg(long)]
        analyze: bool,
    },
    /// Build the truncated DAG and estimate log P_T(x) for samples and the validation set.
    Analyze {
        #[arg(long, env = "GFLOWSTATE_DB")]
        db: PathBuf,
        /// Importance-sample with this many backward trajectories instead of the exact computation.
        #[arg(long, env = "GFLOWSTATE_ESTIMATOR_K")]
        estimator_k: Option<usize>,
        #[arg(long, default_value_t = 0, env = "GFLOWSTATE_ESTIMATOR_SEED")]
        estimator_seed: u64,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, env = "GFLOWSTATE_DB")]
        db: PathBuf,
        #[arg(long, default_value_t = 8080, env = "GFLOWSTATE_PORT")]
        port: u16,
        #[arg(long, default_value = "127.0.0.1", env = "GFLOWSTATE_HOST")]
        host: std::net::IpAddr,
        /// Restrict CORS to this origin (default: any).
        #[arg(long, env = "GFLOWSTATE_CORS_ORIGIN")]
        cors_origin: Option<String>,
    },
    /// Write report.json and report.svg summarizing ranking, projection and transitions.
    Report {
        #[arg(long, env = "GFLOWSTATE_DB")]
        db: PathBuf,
        #[arg(long, default_value = "report", env = "GFLOWSTATE_OUT")]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long, default_value_t = 20)]
        resolution: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<(), Box<dyn std::error::Error>> {
    match cmd {
        Command::Train {
            db,
            env: EnvName::Grid,
            height,
            iterations,
            batch_size,
            lr,
            log_z_lr,
            epsilon,
            seed,
            hidden,
            validation,
            force,
            analyze: then_analyze,
        } => {
            let cfg = RunConfig {
                env: EnvSpec::Grid(GridConfig::with_height(height)),
                train: TrainConfig {
                    iterations,
                    batch_size,
                    learning_rate: lr,
                    log_z_learning_rate: log_z_lr,
                    exploration_epsilon: epsilon,
                    seed,
                    hidden,
                },
            };
            let summary = run_training(&db, &cfg, validation.as_deref(), force)?;
            log::info!(
                "trained {} iterations ({} samples, {} distinct objects) in {:.1}s; final loss {:?}, log Z {:.4}",
                summary.iterations,
                summary.samples,
                summary.distinct_terminal_states,
                summary.wall_time_secs,
                summary.final_mean_loss,
                summary.log_z
            );
            if then_analyze {
                let r = analyze(&db, &AnalyzeOptions::default())?;
                log::info!("analyzed: {} DAG nodes, {} edges, {} estimates ({})", r.dag_nodes, r.dag_edges, r.estimated_states, r.method);
            }
        }
        Command::Analyze { db, estimator_k, estimator_seed } => {
            let opts = AnalyzeOptions { estimator: estimator_k.map(|k| EstimatorConfig { k, seed: estimator_seed }) };
            let r = analyze(&db, &opts)?;
            log::info!("analyzed: {} DAG nodes, {} edges, {} estimates ({})", r.dag_nodes, r.dag_edges, r.estimated_states, r.method);
        }
        Command::Serve { db, port, host, cors_origin } => {
            let state = AppState::open(&db)?;
            let origin = cors_origin.map(|o| HeaderValue::from_str(&o)).transpose()?;
            let app = router(state, origin);
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("serving {} on http://{addr}", db.display());
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
        Command::Report { db, out, top, resolution } => {
            let opts = ReportOptions { top_n: top, resolution, ..Default::default() };
            let (j, s) = write_report(&db, &out, &opts)?;
            log::info!("wrote {} and {}", j.display(), s.display());
        }
    }
    Ok(())
}
