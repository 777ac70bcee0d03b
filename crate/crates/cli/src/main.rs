//! `qisp`: serve the network, validate configs, and run the field-test
//! reproduction offline.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use qisp_core::analysis::{compensation_grid, run_dispersion_sweep};
use qisp_core::export::{write_events_bin, write_events_csv, write_sweep_csv};
use qisp_core::fabric::UserId;
use qisp_core::scenario::{Scenario, ScenarioDoc};
use qisp_core::topology::logical_graph;
use qisp_core::QispConfig;
use qisp_service::{Service, ServiceOptions};

#[derive(Debug, Parser)]
#[command(name = "qisp", version, about = "Reconfigurable quantum internet service provider")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArg {
    /// Network config file; the bundled campus network when omitted.
    #[arg(long, env = "QISP_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides the config port; 0 picks a free one.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Validate a config and report logical connectivity.
    Check {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Dispersion-compensation sweep on the field-test layout.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = -22.0, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        step: f64,
        /// Emitted pairs per grid point.
        #[arg(long, default_value_t = 100_000)]
        pairs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// User receiving both photons.
        #[arg(long, default_value_t = 1)]
        user: u8,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate detection streams and export the time tags.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Acquisition time in seconds.
        #[arg(long)]
        duration: f64,
        /// Scenario file; the field-test layout for user 1 when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Print the live status of a running service.
    Status {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long, env = "QISP_TOKEN")]
        token: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

enum Failure {
    Usage(String),
    Failed(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Failed(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(arg: &ConfigArg) -> anyhow::Result<QispConfig> {
    match &arg.config {
        None => Ok(QispConfig::default_inquire()),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            QispConfig::parse(&text).with_context(|| format!("{}", path.display()))
        }
    }
}

fn output(out: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn serve(config: &ConfigArg, port: Option<u16>, bind: &str) -> Outcome {
    let cfg = load_config(config)?;
    let port = port.unwrap_or(cfg.port);
    tracing_subscriber::fmt().with_writer(io::stderr).with_target(false).init();
    let runtime = tokio::runtime::Runtime::new().context("cannot start runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((bind, port))
            .await
            .with_context(|| format!("cannot bind {bind}:{port}"))?;
        let service = Service::start(cfg, ServiceOptions::default()).context("cannot open journal")?;
        println!("listening on http://{}", listener.local_addr()?);
        io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service.serve(listener, shutdown).await.context("server failed")?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}

fn check(config: &ConfigArg) -> Outcome {
    let cfg = load_config(config)?;
    let terminals = cfg.topology.terminal_users();
    println!(
        "topology: {} nodes ({} hubs, {} terminals), {} links",
        cfg.topology.nodes().len(),
        cfg.topology.hub_count(),
        terminals.len(),
        cfg.topology.links().len()
    );
    println!(
        "fabric: {} EPS channels, {} SPD channels, {} correlated pairs",
        cfg.fabric.eps_channels.len(),
        cfg.fabric.spd_channels.len(),
        cfg.fabric.correlated_pairs().len()
    );
    let graph = logical_graph(&cfg.topology, &cfg.fabric);
    let n = terminals.len();
    let complete = n * n.saturating_sub(1) / 2;
    if graph.is_empty() {
        println!("logical graph: EMPTY");
        return Err(Failure::Failed(anyhow!("no terminal pair can share entanglement")));
    }
    if graph.len() < complete {
        println!("logical graph: INCOMPLETE ({} of {complete} pairs over {n} terminals)", graph.len());
        return Err(Failure::Failed(anyhow!("logical graph is not complete")));
    }
    println!("logical graph: complete over {n} terminals ({complete} pairs)");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(config: &ConfigArg, from: f64, to: f64, step: f64, pairs: u64, seed: u64, user: u8, out: Option<&Path>) -> Outcome {
    let grid = compensation_grid(from, to, step).map_err(|e| Failure::Usage(e.to_string()))?;
    if pairs < 1000 {
        return Err(Failure::Usage(format!("--pairs must be at least 1000, got {pairs}")));
    }
    let user = UserId::new(user).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = load_config(config)?;
    let scenario = Scenario::field_test(&cfg, user)?;
    let result = run_dispersion_sweep(&scenario, &cfg.analysis, &grid, pairs, seed)?;
    let mut w = output(out)?;
    write_sweep_csv(&mut w, &result)?;
    w.flush()?;
    drop(w);

    let summary = match result.best().and_then(|p| p.fit.as_ref().map(|f| (p.compensation_ps_nm, f))) {
        Some((c, f)) => format!(
            "argmin ≈ {c} ps/nm, minimum FWHM {:.1} ± {:.1} ps",
            f.fwhm_ps, f.fwhm_uncertainty_ps
        ),
        None => "argmin: no converged fit".to_string(),
    };
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn simulate(config: &ConfigArg, duration: f64, scenario: Option<&Path>, out: &Path, seed: u64, format: Format) -> Outcome {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Failure::Usage(format!("--duration must be a non-negative number of seconds, got {duration}")));
    }
    let cfg = load_config(config)?;
    let scenario = match scenario {
        None => Scenario::field_test(&cfg, UserId::new(1).expect("user 1"))?,
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            ScenarioDoc::parse(&text)
                .and_then(|d| d.resolve(&cfg))
                .with_context(|| format!("{}", p.display()))?
        }
    };
    let events = scenario.simulate(duration, seed).context("simulation failed")?.merged();
    let mut w = output(Some(out))?;
    match format {
        Format::Csv => write_events_csv(&mut w, &events)?,
        Format::Bin => write_events_bin(&mut w, &events)?,
    }
    w.flush()?;
    println!("{} detection events written to {}", events.len(), out.display());
    Ok(())
}

fn status(url: &str, token: &str) -> Outcome {
    let url = format!("{}/api/status", url.trim_end_matches('/'));
    let resp = reqwest::blocking::Client::new()
        .get(&url)
        .bearer_auth(token)
        .send()
        .with_context(|| format!("cannot reach {url}"))?;
    if !resp.status().is_success() {
        return Err(Failure::Failed(anyhow!("{url}: {}", resp.status())));
    }
    let frame: serde_json::Value = resp.json().context("bad status frame")?;
    println!("at {} ms", frame["timestamp_ms"]);
    for node in frame["nodes"].as_array().into_iter().flatten() {
        let user = node["user"].as_u64().map(|u| format!(" (user {u})")).unwrap_or_default();
        println!("  {}{user}: {}", node["id"].as_str().unwrap_or("?"), node["state"].as_str().unwrap_or("?"));
    }
    for flow in frame["flows"].as_array().into_iter().flatten() {
        println!(
            "  flow {} -> {}: {} channel {} (r{})",
            flow["source"].as_str().unwrap_or("?"),
            flow["dest"].as_str().unwrap_or("?"),
            flow["kind"].as_str().unwrap_or("?"),
            flow["channel"],
            flow["reservation"]
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Serve { config, port, bind } => serve(config, *port, bind),
        Command::Check { config } => check(config),
        Command::Sweep {
            config,
            from,
            to,
            step,
            pairs,
            seed,
            user,
            out,
        } => sweep(config, *from, *to, *step, *pairs, *seed, *user, out.as_deref()),
        Command::Simulate {
            config,
            duration,
            scenario,
            out,
            seed,
            format,
        } => simulate(config, *duration, scenario.as_deref(), out, *seed, *format),
        Command::Status { url, token } => status(url, token),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
