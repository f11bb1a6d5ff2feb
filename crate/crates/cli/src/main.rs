use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cohentropy_cli::config::ScenarioConfig;
use cohentropy_cli::output::write_all;
use cohentropy_cli::scenarios::{run_scenario, RunError};
use cohentropy_cli::verify::{verify_all, VerifyOptions};

#[derive(Parser)]
#[command(name = "cohentropy", version, about = "Entropy production and coherence scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for randomized scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true, env = "COHENTROPY_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario from a TOML config.
    Run { config: PathBuf },
    /// Run the built-in acceptance suite.
    Verify {
        #[arg(long, hide = true)]
        inject_failure: Option<u8>,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match cli.command {
        Command::Run { config } => run(&config, cli.out, cli.seed),
        Command::Verify { inject_failure } => verify(cli.out, cli.seed, inject_failure),
    }
}

fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let cfg = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let outcome = match run_scenario(&cfg, seed) {
        Ok(o) => o,
        Err(e @ RunError::Config(_)) | Err(e @ RunError::Core(_)) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e @ RunError::Invariant(_)) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_INVARIANT);
        }
    };
    let dir = out.or(cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let prefix = cfg.output.prefix.clone().unwrap_or_else(|| outcome.scenario.name().to_string());
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("serializable") + "\n";
    let files = [
        (dir.join(format!("{prefix}.csv")), outcome.csv),
        (dir.join(format!("{prefix}_summary.json")), summary),
    ];
    if let Err(e) = write_all(&files) {
        eprintln!("cannot write output: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    if outcome.failures > 0 {
        eprintln!("{} invariant check(s) failed", outcome.failures);
        return ExitCode::from(EXIT_INVARIANT);
    }
    ExitCode::SUCCESS
}

fn verify(out: Option<PathBuf>, seed: Option<u64>, inject_failure: Option<u8>) -> ExitCode {
    let opts = VerifyOptions {
        seed: seed.unwrap_or(0),
        inject_failure,
    };
    let report = verify_all(&opts);
    print!("{}", report.text());
    if let Some(dir) = out {
        if let Err(e) = write_all(&[(dir.join("verify_summary.json"), report.json() + "\n")]) {
            eprintln!("cannot write output: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    }
}
