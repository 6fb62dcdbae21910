use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use roadfl::harness::{
    compare, compare_sweep, plot_rmse, prepare_output_dir, read_report, reproduce, run_grid,
    run_scenario, write_comparison, write_report, write_sweep, Figure, Scenario, Series,
    COMPARISON_CSV,
};

/// Road traffic and roadside-unit federated learning under poisoning attacks.
#[derive(Parser)]
#[command(name = "roadfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its metrics directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare metrics directories against the first one.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario over an inclusive seed range.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range such as `1..10`.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Re-run a figure's bundled reference scenarios.
    Reproduce {
        /// fig2, fig3, fig4 or fig5.
        figure: String,
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let (a, b) = spec
        .split_once("..")
        .with_context(|| format!("seed range {spec:?} must look like a..b"))?;
    let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
    if a > b {
        bail!("seed range {spec:?} is empty");
    }
    Ok((a..=b).collect())
}

fn run(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut scenario = Scenario::load(config)?;
    if let Some(s) = seed {
        scenario = scenario.with_seed(s);
    }
    prepare_output_dir(out)?;
    let report = run_scenario(&scenario)?;
    write_report(&report, out)?;
    let traces = [
        Series::from_trace(report.name.clone(), &report.rmse_trace()),
        Series::from_trace("centralized", &report.centralized),
    ];
    plot_rmse(&out.join("rmse.svg"), &report.name, &traces)?;
    println!(
        "{} seed {}: final RMSE {:.4} km/h, converged after {}",
        report.name,
        report.seed,
        report.final_rmse,
        report.rounds_to_convergence.map_or("-".to_string(), |r| format!("{r} rounds"))
    );
    Ok(())
}

fn compare_dirs(dirs: &[PathBuf], out: &Path) -> Result<()> {
    prepare_output_dir(out)?;
    let reports = dirs
        .iter()
        .map(|d| read_report(d).with_context(|| format!("reading {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare(&reports)?;
    write_comparison(&rows, &out.join(COMPARISON_CSV))?;
    let series: Vec<Series> =
        reports.iter().map(|r| Series::from_trace(r.name.clone(), &r.rmse_trace())).collect();
    plot_rmse(&out.join("rmse.svg"), "held-out RMSE", &series)?;
    println!("{:<24} {:>6} {:>14} {:>12} {:>8}", "name", "seed", "final_rmse", "delta", "rounds");
    for r in rows {
        println!(
            "{:<24} {:>6} {:>14.6} {:>12.6} {:>8}",
            r.name,
            r.seed,
            r.final_rmse_kmh,
            r.delta_rmse_kmh,
            r.rounds_to_convergence.map_or("-".to_string(), |n| n.to_string())
        );
    }
    Ok(())
}

fn sweep(config: &Path, seeds: &str, out: &Path) -> Result<()> {
    let scenario = Scenario::load(config)?;
    let seeds = parse_seeds(seeds)?;
    prepare_output_dir(out)?;
    let grid = run_grid(std::slice::from_ref(&scenario), &seeds)?;
    for r in &grid[0] {
        write_report(r, &out.join(format!("seed-{}", r.seed)))?;
    }
    let rows = compare_sweep(&grid)?;
    write_sweep(&rows, &out.join("sweep.csv"))?;
    println!(
        "{}: {} seeds, mean final RMSE {:.4} km/h",
        rows[0].name, rows[0].seeds, rows[0].mean_final_rmse_kmh
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, seed, out } => run(&config, seed, &out),
        Command::Compare { reports, out } => compare_dirs(&reports, &out),
        Command::Sweep { config, seeds, out } => sweep(&config, &seeds, &out),
        Command::Reproduce { figure, seeds, out } => {
            let fig: Figure = figure.parse()?;
            let seeds = parse_seeds(&seeds)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("repro-{fig}")));
            let rows = reproduce(fig, &seeds, &out)?;
            println!(
                "{:<16} {:>6} {:>12} {:>12} {:>5} {:>9} {:>10}",
                "scenario", "seeds", "mean_rmse", "mean_delta", "wins", "sign_p", "adv_sel"
            );
            for r in rows {
                println!(
                    "{:<16} {:>6} {:>12.5} {:>12.5} {:>5} {:>9.4} {:>10}",
                    r.name,
                    r.seeds,
                    r.mean_final_rmse_kmh,
                    r.mean_delta_rmse_kmh,
                    r.wins,
                    r.sign_test_p,
                    r.adversary_selection.map_or("-".to_string(), |f| format!("{f:.3}"))
                );
            }
            println!("outputs in {}", out.display());
            Ok(())
        }
    }
}
