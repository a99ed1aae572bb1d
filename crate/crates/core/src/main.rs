use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use bte_dg::constants::default_silicon;
use bte_dg::io::{run, tables_dump, DeviceChoice, RunConfig};
use bte_dg::mesh::{Preset, Resolution};
use bte_dg::poisson::{manufactured_1d, manufactured_2d, manufactured_slab, ConvergenceRow};

#[derive(Parser)]
#[command(name = "bte-dg", version, about = "DG Boltzmann-Poisson solver for silicon diodes and double-gate MOSFETs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a transient simulation from a config file or a preset.
    Run {
        /// TOML run config.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in device with default settings (see `presets`).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        cfl: Option<f64>,
        #[arg(long)]
        wmax: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Use the reduced preset grid.
        #[arg(long)]
        ci: bool,
        /// Stop after this many steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Convergence table for the manufactured Poisson problems.
    PoissonTest {
        /// Comma-separated cell counts per direction.
        #[arg(long, value_delimiter = ',', default_values_t = vec![32, 64, 128])]
        cells: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Problem::All)]
        problem: Problem,
    },
    /// Print the energy and angle quadrature tables of a preset grid.
    TablesDump {
        #[arg(long, default_value = "diode400")]
        preset: String,
        #[arg(long)]
        ci: bool,
        #[arg(long)]
        wmax: Option<f64>,
        /// Write to a file instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// List the built-in devices.
    Presets,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Problem {
    OneD,
    TwoD,
    Slab,
    All,
}

fn print_table(name: &str, rows: &[ConvergenceRow]) {
    println!("{name}");
    println!("{:>8} {:>14} {:>8}", "cells", "L2 error", "order");
    for r in rows {
        let order = r.order.map_or("-".to_string(), |o| format!("{o:.3}"));
        println!("{:>8} {:>14.6e} {:>8}", r.cells, r.error, order);
    }
}

fn preset_config(name: &str, ci: bool) -> anyhow::Result<RunConfig> {
    let p = Preset::parse(name)?;
    let mut cfg = RunConfig::preset(p);
    if ci {
        cfg.grid.resolution = Resolution::Ci;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, preset, t_end, cfl, wmax, out_dir, ci, max_steps } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => RunConfig::load(&path)?,
                (None, Some(name)) => preset_config(&name, ci)?,
                (None, None) => bail!("run needs --config or --preset"),
            };
            if ci && matches!(cfg.device, DeviceChoice::Spec(_)) {
                bail!("--ci applies to preset devices only");
            }
            if ci {
                cfg.grid.resolution = Resolution::Ci;
            }
            if let Some(t) = t_end {
                cfg.t_end = t;
            }
            if let Some(c) = cfl {
                cfg.cfl = c;
            }
            if let Some(w) = wmax {
                cfg.w_max = w;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if max_steps.is_some() {
                cfg.output.max_steps = max_steps;
            }
            cfg.validate()?;
            let report = run(&cfg, &mut std::io::stderr())?;
            eprintln!("finished at t = {} after {} steps", report.state.t, report.state.step);
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::PoissonTest { cells, problem } => {
            if cells.is_empty() || cells.contains(&0) {
                bail!("--cells needs positive counts");
            }
            if matches!(problem, Problem::OneD | Problem::All) {
                print_table("1D  sin(pi x)", &manufactured_1d(&cells)?);
            }
            if matches!(problem, Problem::TwoD | Problem::All) {
                print_table("2D  sin(pi x) cos(pi y / 2)", &manufactured_2d(&cells)?);
            }
            if matches!(problem, Problem::Slab | Problem::All) {
                print_table("2D  two-dielectric slab", &manufactured_slab(&cells)?);
            }
        }
        Command::TablesDump { preset, ci, wmax, output } => {
            let mut cfg = preset_config(&preset, ci)?;
            if let Some(w) = wmax {
                cfg.w_max = w;
            }
            let grid = cfg.build_grid()?;
            let text = tables_dump(&grid, &default_silicon());
            match output {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Presets => {
            for p in Preset::ALL {
                let cfg = RunConfig::preset(p);
                let grid = cfg.build_grid()?;
                let dims = if grid.is_2d() {
                    format!("{}x{} x {}x{}x{}", grid.nx(), grid.ny(), grid.nw(), grid.nmu(), grid.nphi())
                } else {
                    format!("{} x {}x{}", grid.nx(), grid.nw(), grid.nmu())
                };
                println!("{:<9} grid {dims}  scheme {:?}  t_end {}", p.name(), cfg.scheme, cfg.t_end);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
