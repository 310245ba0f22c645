mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;

/// Transversal dynamics, splittings and shadowing probes for Hamiltonian flows.
#[derive(Parser)]
#[command(name = "hamshade", version)]
struct Cli {
    #[command(flatten)]
    shared: SharedFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct SharedFlags {
    /// `builtin:NAME` or a path to a system definition document.
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// JSON config document; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Report directory [default: $HAMSHADE_OUTPUT_DIR or .]
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for concurrent jobs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a system, optionally evaluated at a point.
    Describe(commands::DescribeFlags),
    /// Integrate a trajectory and write it as CSV.
    Flow(commands::FlowFlags),
    /// Transversal Lyapunov spectrum with pairing diagnostics.
    Lyap(commands::LyapFlags),
    /// Periodic orbit search and monodromy classification.
    Orbit(commands::OrbitFlags),
    /// Estimate and test a dominated splitting along an orbit.
    Splitting(commands::SplittingFlags),
    /// Shadowing search for a pseudo-orbit document.
    Shadow(commands::ShadowFlags),
    /// Weak (set-wise) shadowing search for a pseudo-orbit document.
    Weakshadow(commands::ShadowFlags),
    /// Expansiveness probe around a point.
    Expansive(commands::ExpansiveFlags),
    /// Weak specification check for two orbit arcs.
    Spec(commands::SpecFlags),
    /// Cat-map suspension flow and its non-mixing slab witness.
    Suspend(commands::SuspendFlags),
    /// Run the embedded acceptance suite.
    Selftest(commands::SelftestFlags),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(Outcome { ok, summary }) => {
            println!("{summary}");
            ExitCode::from(if ok { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for input and configuration problems, 3 for numerical breakdowns.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<hamshade::Error>() {
        Some(err) if !err.is_input() => 3,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<Outcome> {
    let ctx = commands::Context::new(&cli.shared)?;
    match &cli.command {
        Command::Describe(f) => commands::describe(&ctx, f),
        Command::Flow(f) => commands::flow(&ctx, f),
        Command::Lyap(f) => commands::lyap(&ctx, f),
        Command::Orbit(f) => commands::orbit(&ctx, f),
        Command::Splitting(f) => commands::splitting(&ctx, f),
        Command::Shadow(f) => commands::shadow(&ctx, f, false),
        Command::Weakshadow(f) => commands::shadow(&ctx, f, true),
        Command::Expansive(f) => commands::expansive(&ctx, f),
        Command::Spec(f) => commands::spec(&ctx, f),
        Command::Suspend(f) => commands::suspend(&ctx, f),
        Command::Selftest(f) => commands::selftest(&ctx, f),
    }
}
