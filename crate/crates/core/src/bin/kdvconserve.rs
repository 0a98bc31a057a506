//! Command-line driver: convergence studies, conservation runs, single
//! trajectories and the property suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use kdvconserve::experiments::harness::{self, RunError};
use kdvconserve::experiments::output::{self, config_hash, Meta, Table};
use kdvconserve::experiments::Config;
use kdvconserve::selftest;

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;

#[derive(Parser)]
#[command(name = "kdvconserve", version, about = "Conservative DG solvers for gKdV and Hirota-Satsuma KdV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Parallel sweep members
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// L2 errors and observed orders over the (k, N) sweep
    Converge { config: PathBuf },
    /// Mass, energy and Hamiltonian time series
    Conserve { config: PathBuf },
    /// Single trajectory with field snapshots
    Run { config: PathBuf },
    /// Property suite of the discretization
    Selftest,
}

fn load(path: &Path) -> Result<Config, ExitCode> {
    Config::load(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn finish<S: Serialize>(
    cli: &Cli,
    cfg: &Config,
    command: &str,
    kind: &str,
    table: &Table,
    wall_seconds: f64,
    details: S,
    error: Option<RunError>,
) -> ExitCode {
    let meta = Meta {
        command,
        config_sha256: config_hash(cfg),
        config: cfg,
        status: if error.is_some() { "failed" } else { "ok" },
        error: error.as_ref().map(|e| e.to_string()),
        wall_seconds,
        details,
    };
    match output::write_outputs(&cli.out, &cfg.out_prefix, kind, table, &meta) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: cannot write outputs to {}: {e}", cli.out.display());
            return ExitCode::from(EXIT_SOLVER);
        }
    }
    match error {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn converge(cli: &Cli, path: &Path) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let (table, err) = match harness::run_convergence(&cfg, workers) {
        Ok(t) => (t, None),
        Err((t, e)) => (t, Some(e)),
    };
    let out = output::convergence_table(&table);
    print!("{}", out.to_text());
    let stats: Vec<_> = table.rows.iter().map(|r| (r.k, r.n, &r.stats)).collect();
    #[derive(Serialize)]
    struct Details<'a> {
        probe_residual: f64,
        members: Vec<(usize, usize, &'a harness::RunStats)>,
    }
    let details = Details {
        probe_residual: table.probe_residual,
        members: stats,
    };
    finish(cli, &cfg, "converge", "converge", &out, table.wall_seconds, details, err)
}

fn conserve(cli: &Cli, path: &Path) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let (ts, err) = match harness::run_conservation(&cfg) {
        Ok(t) => (t, None),
        Err((t, e)) => (t, Some(e)),
    };
    let out = output::conservation_table(&ts);
    print!("{}", out.to_text());
    let rel = ts.max_relative_deviation();
    println!(
        "max relative deviation: mass {}  energy {}  hamiltonian {}",
        output::fmt_e(rel[0]),
        output::fmt_e(rel[1]),
        output::fmt_e(rel[2])
    );
    #[derive(Serialize)]
    struct Details<'a> {
        k: usize,
        n: usize,
        max_relative_deviation: [f64; 3],
        max_state_constraint: f64,
        stats: &'a harness::RunStats,
    }
    let details = Details {
        k: ts.k,
        n: ts.n,
        max_relative_deviation: rel,
        max_state_constraint: ts.max_state_constraint,
        stats: &ts.stats,
    };
    finish(cli, &cfg, "conserve", "conserve", &out, ts.wall_seconds, details, err)
}

fn run(cli: &Cli, path: &Path) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let start = std::time::Instant::now();
    let (tr, err) = match harness::run_trajectory(&cfg) {
        Ok(t) => (t, None),
        Err((t, e)) => (t, Some(e)),
    };
    let out = output::snapshot_table(&tr);
    let summary = Table {
        header: ["k", "N", "snapshots", "steps"]
            .iter()
            .map(|s| s.to_string())
            .chain(tr.fields.iter().map(|f| format!("err_{f}")))
            .collect(),
        rows: vec![[tr.k, tr.n, tr.snapshots.len(), tr.stats.steps]
            .iter()
            .map(|&i| output::Cell::Int(i))
            .chain(
                tr.final_errors
                    .iter()
                    .map(|&e| output::Cell::Real(e))
                    .chain(std::iter::repeat(output::Cell::Missing))
                    .take(tr.fields.len()),
            )
            .collect()],
    };
    print!("{}", summary.to_text());
    #[derive(Serialize)]
    struct Details<'a> {
        k: usize,
        n: usize,
        final_errors: &'a [f64],
        stats: &'a harness::RunStats,
    }
    let details = Details {
        k: tr.k,
        n: tr.n,
        final_errors: &tr.final_errors,
        stats: &tr.stats,
    };
    let wall = start.elapsed().as_secs_f64();
    finish(cli, &cfg, "run", "snapshots", &out, wall, details, err)
}

fn run_selftest() -> ExitCode {
    let checks = selftest::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SOLVER)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match &cli.command {
        Command::Converge { config } => converge(&cli, config),
        Command::Conserve { config } => conserve(&cli, config),
        Command::Run { config } => run(&cli, config),
        Command::Selftest => run_selftest(),
    }
}
