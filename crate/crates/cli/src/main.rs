use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use harqlab::sweep::{run_sweep, SweepConfig, SweepOptions};
use harqlab::verify::{run_selected, Suite, VerifyOptions, CRITERIA};
use harqlab::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "harqlab", version, about = "Throughput vs. decoding-time sweeps and checks for BRQ, EMS and HARQ-INR")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Fast,
    Full,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a sweep described by a JSON config and write its CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Write slot-level traces of a few episodes per row.
        #[arg(long)]
        dump_traces: bool,
        /// Write the W and M solutions of EMS rows.
        #[arg(long)]
        dump_kernels: bool,
        /// Write the value function and power policy of power-adapted rows.
        #[arg(long)]
        dump_policy: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        suite: SuiteArg,
        /// Episodes per Monte Carlo check, overriding the suite default.
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Bias the BRQ throughput prediction by this fraction (mutation check).
        #[arg(long, default_value_t = 0.0)]
        tamper_brq: f64,
        /// Run only these criteria (comma separated, 1-based).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<usize>,
        /// Print the report as JSON after the summary lines.
        #[arg(long)]
        json: bool,
    },
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Sweep { config, out, dump_traces, dump_kernels, dump_policy, workers, seed } => {
            let cfg = match SweepConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("harqlab: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let opts = SweepOptions { out_dir: out, workers, seed, dump_traces, dump_kernels, dump_policy };
            let summary = match run_sweep(&cfg, &opts) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("harqlab: {e}");
                    return ExitCode::from(exit_for(&e));
                }
            };
            for r in summary.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} at snr={} T={}: {}", r.protocol, r.snr_db, r.target_t, r.error.as_deref().unwrap_or(""));
            }
            println!(
                "wrote {} ({} rows, {} failed verdicts, {} errors)",
                summary.csv.display(),
                summary.rows.len(),
                summary.failures(),
                summary.errors()
            );
            if summary.errors() > 0 {
                ExitCode::from(EXIT_NUMERIC)
            } else if summary.failures() > 0 {
                ExitCode::from(EXIT_VERIFY)
            } else {
                ExitCode::SUCCESS
            }
        }
        Cmd::Verify { suite, episodes, seed, workers, tamper_brq, criteria, json } => {
            let suite = match suite {
                SuiteArg::Fast => Suite::Fast,
                SuiteArg::Full => Suite::Full,
            };
            let mut o = VerifyOptions::suite(suite);
            if let Some(n) = episodes {
                if n == 0 {
                    eprintln!("harqlab: --episodes must be positive");
                    return ExitCode::from(EXIT_CONFIG);
                }
                o.episodes = n;
            }
            if let Some(s) = seed {
                o.seed = s;
            }
            o.workers = workers;
            o.tamper_brq = tamper_brq;
            let ids: Vec<usize> = if criteria.is_empty() { (1..=CRITERIA.len()).collect() } else { criteria };
            if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > CRITERIA.len()) {
                eprintln!("harqlab: no criterion {bad} (valid: 1-{})", CRITERIA.len());
                return ExitCode::from(EXIT_CONFIG);
            }
            let report = run_selected(&o, &ids, |c| println!("{}", c.line()));
            let failed = report.criteria.iter().filter(|c| !c.pass).count();
            println!("{} of {} criteria passed", report.criteria.len() - failed, report.criteria.len());
            if json {
                println!("{}", report.to_json());
            }
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
    }
}
