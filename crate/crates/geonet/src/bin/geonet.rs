//! Thin command-line front end: scenario runs, net verification, exports.
//! Exit codes: 0 success, 2 schema/parse problems, 3 pipeline-stage errors,
//! 4 verification failures (the report is still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geonet::error::GeonetError;
use geonet::report::to_json_string;
use geonet::scenario::{
    export_net_file, load_scenario, probe_seed, run_scenario, verify_net_file, Tolerances,
};

#[derive(Parser)]
#[command(name = "geonet", version, about = "Stationary geodesic net constructions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (eyeglass / figure-eight, single tilt or sweep).
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (defaults to the scenario's `out_dir`, else
        /// `geonet-out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for tilt sweeps.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a stored net against a stored metric spec.
    Verify {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        metric: PathBuf,
    },
    /// Convert a stored net to json | obj-polyline | csv.
    Export {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, GeonetError> {
    match cli.command {
        Command::Run { scenario, out, jobs } => {
            let sc = load_scenario(&scenario)?;
            let out_dir = out
                .or_else(|| sc.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("geonet-out"));
            let report = run_scenario(&sc, &out_dir, jobs, probe_seed())?;
            println!("{}", to_json_string(&report)?);
            if report.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "verification failure: {} (report written to {:?})",
                    report.failures.join("; "),
                    out_dir.join("report.json")
                );
                Ok(ExitCode::from(4))
            }
        }
        Command::Verify { net, metric } => {
            let report = verify_net_file(&net, &metric, &Tolerances::default())?;
            println!("{}", to_json_string(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { net, format, out } => {
            let path = export_net_file(&net, &format, out.as_deref())?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
