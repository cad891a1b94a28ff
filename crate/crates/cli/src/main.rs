//! `kwlab` command line: every subcommand reads one experiment config JSON
//! and writes its artifacts under the config's output directory.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use kwlab::pipeline::{self, ExperimentConfig};
use kwlab::{blowup, functional, greens, io, solver, FunctionalContext, ScalarField};

#[derive(Parser)]
#[command(name = "kwlab", version, about = "Mean-field equation solver on conformal tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// experiment config JSON
    #[arg(short, long)]
    config: PathBuf,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// overrides the config output directory
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize J at one epsilon
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
    },
    /// Continuation over the config schedule
    Continue {
        #[command(flatten)]
        common: Common,
    },
    /// Green function and Robin constant at a pole
    Green {
        #[command(flatten)]
        common: Common,
        /// pole position "x,y" in [0,1)²
        #[arg(long, default_value = "0,0")]
        at: String,
    },
    /// Robin landscape, C0 and the DJLW check
    Thresholds {
        #[command(flatten)]
        common: Common,
    },
    /// Blow-up report for a stored field
    Analyze {
        #[command(flatten)]
        common: Common,
        /// binary field file
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Glued bubble/Green field with peak height lambda
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value = "0,0")]
        at: String,
    },
    /// Test-function family and the J < C0 check
    Upperbound {
        #[command(flatten)]
        common: Common,
    },
    /// Full run: thresholds, continuation, diagnostics, upper bound
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// CSV plot data from a finished pipeline directory
    PlotData {
        dir: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    Ok(config)
}

fn context(config: &ExperimentConfig, eps: f64) -> Result<FunctionalContext> {
    let grid = config.grid.build()?;
    let h = config.weight.build(grid)?;
    Ok(FunctionalContext::new(h, eps)?)
}

fn parse_point(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("expected \"x,y\", got `{s}`");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve { common, eps } => {
            let config = load(&common)?;
            let ctx = context(&config, eps)?;
            let init = pipeline::initial_field(&config, ctx.grid().clone());
            let state = solver::minimize_at_eps(&ctx, &init, &config.solver)?;
            let summary = state.summary(&ctx)?;
            let dir = &config.output_dir;
            pipeline::write_json(&dir.join("solve.json"), &summary)?;
            io::write_field(&dir.join("solve.bin"), ctx.grid().n(), state.u.values(), "u")?;
            info!("solve: {} iterations, J = {:.12e}", state.iter, state.j_value);
            print_json(&summary)?;
            Ok(if state.converged() { 0 } else { 1 })
        }
        Command::Continue { common } => {
            let config = load(&common)?;
            let schedule = config.validate()?;
            let ctx = context(&config, schedule[0])?;
            let init = pipeline::initial_field(&config, ctx.grid().clone());
            let (traj, failure) =
                solver::continue_recording(&ctx, &schedule, Some(&init), &config.solver, &config.diagnostics)?;
            let dir = &config.output_dir;
            fs::create_dir_all(dir.join("stages"))?;
            solver::write_trajectory_csv(&traj, &dir.join("trajectory.csv"))?;
            for stage in &traj.stages {
                pipeline::write_stage(&dir.join("stages"), &ctx.with_eps(stage.state.eps)?, stage)?;
                info!("{} eps={:.4e} {:.3}s", pipeline::stage_name(stage.index), stage.state.eps, stage.elapsed_secs);
            }
            print_json(&traj.metrics())?;
            if let Some(e) = failure {
                bail!("continuation stopped: {e}");
            }
            Ok(0)
        }
        Command::Green { common, at } => {
            let config = load(&common)?;
            let grid = config.grid.build()?;
            let (x, y) = parse_point(&at)?;
            let green = greens::solve_green(&grid, grid.nearest_node(x, y));
            let dir = &config.output_dir;
            pipeline::write_json(&dir.join("green.json"), &green.summary())?;
            io::write_field(&dir.join("green.bin"), grid.n(), green.g.values(), "G")?;
            print_json(&green.summary())?;
            Ok(0)
        }
        Command::Thresholds { common } => {
            let config = load(&common)?;
            let ctx = context(&config, 0.0)?;
            let (report, samples) = functional::thresholds(&ctx, config.lattice)?;
            let dir = &config.output_dir;
            pipeline::write_json(&dir.join("thresholds.json"), &report)?;
            pipeline::write_json(&dir.join("landscape.json"), &samples)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Analyze { common, field, eps } => {
            let config = load(&common)?;
            let ctx = context(&config, eps)?;
            let (n, values) = io::read_field(&field)?;
            if n != ctx.grid().n() {
                bail!("field has N = {n}, config grid has N = {}", ctx.grid().n());
            }
            let u = ScalarField::new(ctx.grid().clone(), values)?;
            let c0 = functional::thresholds(&ctx, config.lattice).ok().map(|(r, _)| r.c0);
            let report = blowup::analyze(&ctx, &u, c0, &config.diagnostics)?;
            pipeline::write_json(&config.output_dir.join("analysis.json"), &report)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Synth { common, lambda, at } => {
            let config = load(&common)?;
            let ctx = context(&config, 0.0)?;
            let (x, y) = parse_point(&at)?;
            let pole = ctx.grid().nearest_node(x, y);
            let green = greens::solve_green(ctx.grid(), pole);
            let u = blowup::synthesize_family(ctx.grid(), &green, ctx.h().at(pole), lambda, &config.diagnostics)?;
            io::write_field(&config.output_dir.join("synth.bin"), ctx.grid().n(), u.values(), "u")?;
            let report = blowup::analyze(&ctx, &u, None, &config.diagnostics)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Upperbound { common } => {
            let config = load(&common)?;
            let ctx = context(&config, 0.0)?;
            let (report, _) = functional::thresholds(&ctx, config.lattice)?;
            let result = pipeline::upper_bound(&ctx, &report, &config)?;
            pipeline::write_json(&config.output_dir.join("upper_bound.json"), &result)?;
            print_json(&result)?;
            Ok(if result.passed { 0 } else { 1 })
        }
        Command::Pipeline { common } => {
            let config = load(&common)?;
            let outcome = pipeline::run_pipeline(&config)?;
            info!("artifacts in {}", outcome.dir.display());
            print_json(&outcome.summary)?;
            Ok(outcome.exit_code().clamp(0, 255) as u8)
        }
        Command::PlotData { dir } => {
            for path in pipeline::emit_plot_data(&dir)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
