use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use olc::bench::{
    mean_regret_per_step, regret_study, render_table, run_seeds, spearman, sweep_slalom, table_experiment, write_episode_csv,
    write_policy_trace_csv, write_regret_csv, write_runs_csv, write_sweep_csv, write_table_csv, RunConfig, Update,
};
use olc::{Error, Result};

#[derive(Parser)]
#[command(name = "olc", version, about = "Online learning controller for obstacle avoidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes for one configuration.
    Run(Common),
    /// Controllers × disturbance profiles summary.
    Table(Common),
    /// Slalom failure-rate grid.
    Sweep(Common),
    /// Empirical regret across horizons.
    Regret(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Half-open range `a..b`, or inclusive `a..=b`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedRange>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    update: Option<UpdateArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    Fpl,
    Gd,
}

#[derive(Clone)]
struct SeedRange(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedRange, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected `a..b`, got `{s}`"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    let end = if inclusive { b.checked_add(1).ok_or("range overflow")? } else { b };
    if end <= a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(SeedRange((a..end).collect()))
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.olc.seeds = vec![s];
    }
    if let Some(s) = &common.seeds {
        cfg.olc.seeds = s.0.clone();
    }
    if let Some(u) = common.update {
        cfg.olc.update = match u {
            UpdateArg::Fpl => Update::Fpl,
            UpdateArg::Gd => Update::Gd,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Returns whether any run hit a solver failure.
fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let eps = run_seeds(&cfg, &cfg.olc.seeds)?;
            let rows: Vec<_> = eps.iter().map(|e| e.row.clone()).collect();
            write_runs_csv(&rows, create(&c.out, "runs.csv")?)?;
            for e in &eps {
                write_episode_csv(&e.steps, create(&c.out, &format!("episode_seed{}.csv", e.row.seed))?)?;
                write_policy_trace_csv(&e.snapshots, create(&c.out, &format!("policy_seed{}.csv", e.row.seed))?)?;
                if let Some(err) = &e.error {
                    eprintln!("seed {}: {err}", e.row.seed);
                }
            }
            for r in &rows {
                println!(
                    "seed {:>4}  collisions {:>3}/{:<3}  fraction {:.3}  lq {:.4}  left {} right {}{}",
                    r.seed,
                    r.collided_obstacles,
                    r.obstacles,
                    r.collision_fraction,
                    r.lq_cost,
                    r.pass_left,
                    r.pass_right,
                    r.regret.map(|g| format!("  regret {g:.4}")).unwrap_or_default()
                );
            }
            Ok(rows.iter().any(|r| r.solver_failed))
        }
        Command::Table(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let profiles = cfg.study.profiles.iter().map(|p| cfg.profile_named(p)).collect::<Result<Vec<_>>>()?;
            let cells = table_experiment(&cfg, &profiles, &cfg.study.controllers)?;
            write_table_csv(&cells, create(&c.out, "table.csv")?)?;
            let text = render_table(&cells);
            fs::write(c.out.join("table.txt"), &text)?;
            print!("{text}");
            Ok(cells.iter().any(|c| c.solver_failures > 0))
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let grid = sweep_slalom(&cfg, &cfg.sweep)?;
            write_sweep_csv(&grid, create(&c.out, "sweep.csv")?)?;
            for (w, row) in grid.widths.iter().zip(&grid.failure) {
                let cells: Vec<String> = row.iter().map(|f| format!("{f:.2}")).collect();
                println!("width {w:>8}: {}", cells.join(" "));
            }
            if let Some(rho) = grid.failure.first().and_then(|row| spearman(&grid.offsets, row)) {
                println!("spearman(offset, failure) at widest gate: {rho:.3}");
            }
            let mid = (grid.offsets.len() - 1) / 2;
            let narrow: Vec<f64> = grid.widths.iter().map(|w| -w).collect();
            let col: Vec<f64> = grid.failure.iter().map(|row| row[mid]).collect();
            if let Some(rho) = spearman(&narrow, &col) {
                println!("spearman(narrowness, failure) at offset {}: {rho:.3}", grid.offsets[mid]);
            }
            Ok(false)
        }
        Command::Regret(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let horizons = cfg.study.horizons.clone();
            let rows = regret_study(&cfg, &horizons)?;
            write_regret_csv(&rows, create(&c.out, "regret.csv")?)?;
            for (t, m) in horizons.iter().zip(mean_regret_per_step(&rows, &horizons)) {
                println!("T {t:>5}  mean Reg_T/T {m:.6}");
            }
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Contract(_) => 2,
                Error::SolverFailure { .. } | Error::StabilizationFailed(_) | Error::ReconstructionUnavailable(_) => 3,
                Error::Io(_) | Error::Csv(_) => 1,
            })
        }
    }
}
