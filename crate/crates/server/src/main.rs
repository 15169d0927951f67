mod commands;
mod config;
mod http;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use bigthick_core::ml::Family;
use bigthick_core::service::Service;
use bigthick_core::sim::Policy;
use bigthick_core::time::Timestamp;
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{ReportArgs, SimulateArgs, TrainArgs};
use crate::config::ServerConfig;

/// Orchestrate Big-Thick data collection experiments.
#[derive(Parser)]
#[command(name = "bigthick", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Fixed,
    Adaptive,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Fixed => Policy::Fixed,
            PolicyArg::Adaptive => Policy::Adaptive,
        }
    }
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Server config file (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory holding the STM and LTM logs; overrides the config file.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ServerConfig> {
        let mut cfg = match &self.config {
            Some(p) => ServerConfig::load(p)?,
            None => ServerConfig::default(),
        };
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Listen address, e.g. 127.0.0.1:8080 (port 0 picks a free port).
        #[arg(long)]
        listen: Option<String>,
        /// Directory served under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Honor `now` sent by clients instead of the wall clock (simulation and testing).
        #[arg(long)]
        client_clock: bool,
        /// Seconds between background ticks.
        #[arg(long)]
        tick_seconds: Option<u64>,
    },
    /// Simulate a cohort against a fresh data directory.
    Simulate {
        /// Cohort config file (JSON); the seeded default cohort when omitted.
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Plan document (JSON); a daily diary plan when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "adaptive")]
        policy: PolicyArg,
        /// Override the cohort's number of days.
        #[arg(long)]
        days: Option<u32>,
        /// Override the cohort's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the cohort size.
        #[arg(long)]
        size: Option<usize>,
        /// Output directory; the data directory is created under `<out>/data`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train busy-period classifiers on a data directory and install a model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Family to train (random_forest, decision_tree, logistic_regression, gaussian_nb,
        /// neural_net) or `all`.
        #[arg(long, default_value = "random_forest")]
        family: String,
        /// Family to install when several are trained; defaults to the first.
        #[arg(long)]
        install: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Training instant (RFC 3339); defaults to the latest LTM record.
        #[arg(long)]
        now: Option<Timestamp>,
        /// Write the metrics table as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export per-participant summaries and comparison series as CSV.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// First day (inclusive); defaults to the earliest plan start.
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Last day (exclusive); defaults to the latest plan end.
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Build a dashboard-ready data directory from the seeded cohort under the adaptive policy.
    Demo {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn family(s: &str) -> anyhow::Result<Family> {
    Family::parse(s).with_context(|| format!("unknown family {s:?}"))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve { config, listen, ui_dir, client_clock, tick_seconds } => {
            let mut cfg = config.load()?;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            if ui_dir.is_some() {
                cfg.ui_dir = ui_dir;
            }
            if let Some(t) = tick_seconds {
                cfg.tick_seconds = t;
            }
            cfg.service.client_clock |= client_clock;
            serve(cfg)
        }
        Command::Simulate { cohort, plan, policy, days, seed, size, out } => {
            let s = commands::simulate(&SimulateArgs { cohort, plan, policy: policy.into(), days, seed, size, out })?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }
        Command::Train { config, family: f, install, seed, now, report } => {
            let families = if f == "all" { Family::ALL.to_vec() } else { vec![family(&f)?] };
            let install = install.as_deref().map(family).transpose()?;
            commands::train(&TrainArgs { config: config.load()?, families, install, seed, now, report })?;
            Ok(())
        }
        Command::Report { config, out, from, to } => {
            for p in commands::report(&ReportArgs { config: config.load()?, out, from, to })? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Demo { out, size, days, seed } => {
            let s = commands::simulate(&SimulateArgs {
                cohort: None,
                plan: None,
                policy: Policy::Adaptive,
                days,
                seed,
                size,
                out: out.clone(),
            })?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            println!("tokens in {}", out.join("tokens.json").display());
            println!("serve with: bigthick serve --config {}", out.join("server.json").display());
            Ok(())
        }
    }
}

fn serve(cfg: ServerConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    let service = Service::open(&cfg.data_dir, cfg.service.clone())
        .with_context(|| format!("opening {}", cfg.data_dir.display()))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen).await.with_context(|| format!("binding {}", cfg.listen))?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(tokio::sync::Mutex::new(service));
        if !cfg.service.client_clock {
            tokio::spawn(http::ticker(shared.clone(), Duration::from_secs(cfg.tick_seconds)));
        }
        let app = http::router(shared.clone(), cfg.ui_dir.clone());
        // the first stdout line announces the bound address
        println!("listening on http://{addr}");
        log::info!("experiment {} serving {} on {addr}", cfg.experiment_id, cfg.data_dir.display());
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        let mut s = shared.lock().await;
        if let Err(e) = s.flush() {
            bail!("flushing stores on shutdown: {e}");
        }
        Ok(())
    })
}
