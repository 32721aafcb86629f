use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dualmesh::results::Format;
use dualmesh_cli::{cmd_compare, cmd_list, cmd_oracle_check, cmd_run, cmd_sweep, cmd_validate, OracleLimits, Options};

#[derive(Parser)]
#[command(name = "dualmesh", version, about = "Dual-band WiFi-Direct mesh simulator")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Overrides the scenario seed (oracle-check: first seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Which result files to write: csv, summary or all.
    #[arg(long, global = true, default_value = "all")]
    format: Format,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run { scenario: String },
    /// Run scenarios and their single-band twins; one comparison row each.
    Compare {
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
    /// Run a scenario once per value of a dotted parameter path.
    Sweep {
        scenario: String,
        parameter: String,
        /// Values, comma separated or repeated.
        #[arg(required = true, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Compare the rate solver against the brute-force oracle on random scenarios.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 6)]
        max_nodes: usize,
        #[arg(long, default_value_t = 6)]
        max_flows: usize,
    },
    /// Parse and validate a scenario.
    Validate { scenario: String },
    /// List bundled scenarios.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options { out: cli.out, seed: cli.seed, format: cli.format, quiet: cli.quiet };
    let code = match cli.command {
        Command::Run { scenario } => cmd_run(&scenario, &opts),
        Command::Compare { scenarios } => cmd_compare(&scenarios, &opts),
        Command::Sweep { scenario, parameter, values } => cmd_sweep(&scenario, &parameter, &values, &opts),
        Command::OracleCheck { seeds, max_nodes, max_flows } => cmd_oracle_check(OracleLimits { max_nodes, max_flows }, seeds, &opts),
        Command::Validate { scenario } => cmd_validate(&scenario, &opts),
        Command::List => cmd_list(&opts),
    };
    ExitCode::from(code as u8)
}
