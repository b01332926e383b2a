use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nppsim::orchestrator::{self, report, SimConfig};
use nppsim::qkd::{self, EvePolicy};
use nppsim::Error;

#[derive(Parser)]
#[command(name = "nppsim", version, about = "Federated contamination-monitoring robot fleet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full multi-session simulation and write its reports.
    Simulate {
        /// JSON config; the built-in two-plant scenario is used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render table.txt from the metrics CSVs of a previous run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run one BB84 exchange and print its statistics.
    QkdDemo {
        #[arg(long, default_value_t = 20_000)]
        n_qubits: usize,
        /// Fraction of qubits intercepted and resent.
        #[arg(long, default_value_t = 0.0)]
        eve: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Channel bit-flip probability.
        #[arg(long, default_value_t = 0.0)]
        flip: f64,
    },
    /// Check the ChaCha20 implementation against the RFC 8439 vectors.
    CryptoVectors,
    /// Print the built-in config as JSON.
    DefaultConfig,
}

fn simulate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let mut cfg = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    report::preflight_output_dir(&out)?;
    let started = Instant::now();
    let run = orchestrator::run_simulation(&cfg)?;
    let files = report::emit_report(&run, &out)?;
    let table = std::fs::read_to_string(out.join(report::TABLE_FILE)).context("reading rendered table")?;
    print!("{table}");
    let (aborted, total) = run.gate_counts();
    println!(
        "\n{} sessions, model v{}, {aborted}/{total} key exchanges aborted, {} files in {} ({:.1}s)",
        run.rounds.len(),
        run.final_model.version,
        files.len(),
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn qkd_demo(n_qubits: usize, eve: f64, seed: u64, flip: f64) -> Result<()> {
    let policy = EvePolicy::new(eve).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = qkd::bb84_exchange(n_qubits, &policy, flip, &mut rng).map_err(|e| Error::Config(e.to_string()))?;
    let decision = qkd::keygate(&outcome.estimate, qkd::DEFAULT_ABORT_THRESHOLD);
    let key_bits = match decision {
        qkd::GateDecision::Accept => qkd::reconcile(&outcome).0.len(),
        qkd::GateDecision::Abort => 0,
    };
    println!("qubits sent       {}", outcome.raw_len());
    println!("sifted fraction   {:.4}", outcome.sifted_fraction());
    println!(
        "qber              {:.4} ({}/{})",
        outcome.estimate.ratio, outcome.estimate.errors, outcome.estimate.total
    );
    println!("eve information   {:.4} bits", outcome.eve_information());
    println!("decision          {decision:?}");
    println!("final key bits    {key_bits}");
    Ok(())
}

fn crypto_vectors() -> Result<bool> {
    let results = nppsim::chacha::vectors::check_all();
    for (name, ok) in &results {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    Ok(results.iter().all(|(_, ok)| *ok))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Invariant(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, seed, out } => simulate(config, seed, out),
        Command::Report { input } => report::rerender_from_dir(&input)
            .map(|table| print!("{table}"))
            .map_err(Into::into),
        Command::QkdDemo {
            n_qubits,
            eve,
            seed,
            flip,
        } => qkd_demo(n_qubits, eve, seed, flip),
        Command::CryptoVectors => match crypto_vectors() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
        Command::DefaultConfig => {
            println!("{}", SimConfig::default().to_json());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
