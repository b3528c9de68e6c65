use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use infersim::{CliError, Format, CATALOG_ENV};

#[derive(Parser)]
#[command(
    name = "infersim",
    version,
    about = "Analytical roofline simulator for LLM inference hardware"
)]
struct Cli {
    /// Catalog TOML merged over the built-in catalog.
    #[arg(long, global = true, env = CATALOG_ENV)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one scenario config.
    Estimate {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Evaluate a config at each value of one numeric field; CSV output.
    Sweep {
        config: PathBuf,
        /// `path=v1,v2,...`, e.g. `request.batch=1,2,4,8`.
        #[arg(long)]
        axis: String,
    },
    /// Pareto set of sharding plans.
    Explore {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Log-linear price fit on a price-history CSV.
    FitTrend {
        csv: PathBuf,
        /// Inclusive `START,END` years.
        #[arg(long, default_value = "2022,2025")]
        window: String,
        /// Skip malformed rows instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Catalog inspection.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Run the JSON-over-HTTP service.
    Serve {
        #[arg(long, default_value_t = 8731)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    /// Print devices, HBM generations and nodes as JSON.
    List,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let catalog = || infersim::load_catalog(cli.catalog.as_deref());
    match &cli.command {
        Command::Estimate { config, format } => {
            infersim::estimate(&infersim::read_file(config)?, &catalog()?, *format)
        }
        Command::Sweep { config, axis } => {
            infersim::sweep(&infersim::read_file(config)?, &catalog()?, axis)
        }
        Command::Explore { config, format } => {
            infersim::explore(&infersim::read_file(config)?, &catalog()?, *format)
        }
        Command::FitTrend {
            csv,
            window,
            lenient,
        } => infersim::fit_trend(
            &infersim::read_file(csv)?,
            infersim::parse_window(window)?,
            *lenient,
        ),
        Command::Catalog {
            action: CatalogAction::List,
        } => Ok(infersim::catalog_list(&catalog()?)),
        Command::Serve { port } => {
            let cat = catalog()?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io {
                path: "runtime".into(),
                reason: e.to_string(),
            })?;
            rt.block_on(infersim::serve(*port, cat))
                .map_err(|e| CliError::Io {
                    path: format!("127.0.0.1:{port}"),
                    reason: e.to_string(),
                })?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Scenario(s) = &e {
                eprintln!("{}", s.to_json());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
