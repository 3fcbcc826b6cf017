use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ballbowl_core::protocol::generate_protocol;
use ballbowl_session::analysis::{analyze_archive, write_analysis};
use ballbowl_session::cohort::{plan_cohort, plan_single, protocol_table, run_cohort, write_runs};
use ballbowl_session::config::SessionConfig;
use ballbowl_session::serve;
use ballbowl_session::{Result, SessionError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ballbowl", version, about = "Ball-in-bowl reaching task: simulate, analyse, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run synthetic subjects through the protocol and write an archive.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Simulate a cohort of this many subjects per group instead of the
        /// single configured subject.
        #[arg(long)]
        subjects_per_group: Option<usize>,
        /// Cohort seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute metrics, spectra and ANOVA tables from an archive.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host a live session over WebSocket.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Overrides `serve.archive_dir`.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Print the trial order for a protocol seed.
    Protocol {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => SessionConfig::load(p),
        None => Ok(SessionConfig::default()),
    }
}

fn simulate(config: Option<&Path>, out: &Path, per_group: Option<usize>, seed: u64) -> Result<()> {
    let config = load_config(config)?;
    let (plans, cohort_seed) = match per_group {
        Some(n) => (plan_cohort(&config, n, seed)?, Some(seed)),
        None => (vec![plan_single(&config)?], None),
    };
    let runs = run_cohort(&config, &plans)?;
    let manifest = write_runs(out, &config, cohort_seed, &runs)?;
    let invalid = runs.iter().flat_map(|r| &r.logs).filter(|l| !l.valid).count();
    println!(
        "wrote {} trials for {} subjects to {} ({invalid} invalid)",
        manifest.trial_count(),
        manifest.subjects.len(),
        out.display()
    );
    Ok(())
}

fn analyze(input: &Path, out: &Path) -> Result<()> {
    let analysis = analyze_archive(input)?;
    for w in &analysis.warnings {
        eprintln!("warning: {w}");
    }
    let files = write_analysis(out, &analysis)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn serve_live(config_path: Option<&Path>, host: IpAddr, port: u16, archive: Option<PathBuf>) -> Result<()> {
    let config = load_config(config_path)?;
    let archive = archive
        .or_else(|| config.serve.archive_dir.clone())
        .unwrap_or_else(|| config_path.and_then(Path::parent).unwrap_or(Path::new(".")).join("serve-archive"));
    let runtime = tokio::runtime::Runtime::new().map_err(SessionError::io(&archive))?;
    runtime.block_on(async {
        let server = serve::bind(config, &archive, SocketAddr::new(host, port)).await?;
        println!("listening on ws://{}/ws, archive {}", server.local_addr(), archive.display());
        let stop = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        server.run_until(stop).await.map_err(SessionError::io(&archive))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, subjects_per_group, seed } => {
            simulate(config.as_deref(), &out, subjects_per_group, seed)
        }
        Command::Analyze { input, out } => analyze(&input, &out),
        Command::Serve { config, port, host, archive } => serve_live(config.as_deref(), host, port, archive),
        Command::Protocol { seed } => {
            print!("{}", protocol_table(&generate_protocol(seed)));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
