//! Experiment runner for sublinear-scale geometry on pointed balls:
//! scale-function audits, Cayley-ball construction, gauge and center
//! searches, boundary atlases with visual quasimetrics, dimension and
//! distortion estimates, equivalence fitting, and a cross-module
//! verification suite. Every run writes its artifacts plus a manifest
//! under --out and is reproducible from the config and seed.

mod config;
mod report;
mod runs;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{CliResult, Ctx, FileConfig};
use report::RunOutput;

#[derive(Parser)]
#[command(name = "subatlas", version, about = "sublinear-scale geometry experiments")]
struct Cli {
    /// RNG seed for every sampled computation
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the manifest
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for suite batteries (module code stays serial)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit a scale function: admissibility grid and strict sublinearity
    KappaCheck(runs::KappaCheckArgs),
    /// Build a pointed ball and dump its vertices and edges
    BuildSpace(runs::BuildSpaceArgs),
    /// Estimate empirical gauges over (q,Q) quasigeodesic families
    MorseGauge(runs::MorseGaugeArgs),
    /// Measure slim deltas of random trusted triangles
    Slim(runs::SlimArgs),
    /// List the K-centers of one triangle
    Centers(runs::CentersArgs),
    /// Fraction of trusted vertices witnessed as centers
    Exhaustiveness(runs::ExhaustivenessArgs),
    /// Sample a boundary atlas and its products
    Boundary(runs::BoundaryArgs),
    /// Visual quasimetric of a boundary atlas
    Visual(runs::BoundaryArgs),
    /// Scan for a uniform perfectness constant
    Perfectness(runs::PerfectnessArgs),
    /// Covering-based dimension estimates
    Dimension(runs::DimensionArgs),
    /// Warp a metric through the scale antiderivative
    Warp(runs::WarpArgs),
    /// Quasisymmetric distortion profile between two metrics
    Distortion(runs::DistortionArgs),
    /// Scale-step subdivision of one geodesic
    Subdivide(runs::SubdivideArgs),
    /// Fit multiplicative and additive constants to a vertex map
    SbeEstimate(runs::SbeEstimateArgs),
    /// Extend a boundary matching to a vertex map
    Extend(runs::ExtendArgs),
    /// Run every module battery; nonzero exit on any violation
    VerifySuite(suite::SuiteArgs),
}

fn dispatch(cli: &Cli, ctx: &Ctx) -> CliResult<RunOutput> {
    match &cli.cmd {
        Command::KappaCheck(a) => runs::kappa_check(ctx, a),
        Command::BuildSpace(a) => runs::build_space_cmd(ctx, a),
        Command::MorseGauge(a) => runs::morse_gauge(ctx, a),
        Command::Slim(a) => runs::slim(ctx, a),
        Command::Centers(a) => runs::centers(ctx, a),
        Command::Exhaustiveness(a) => runs::exhaustiveness(ctx, a),
        Command::Boundary(a) => runs::boundary(ctx, a),
        Command::Visual(a) => runs::visual(ctx, a),
        Command::Perfectness(a) => runs::perfectness(ctx, a),
        Command::Dimension(a) => runs::dimension(ctx, a),
        Command::Warp(a) => runs::warp(ctx, a),
        Command::Distortion(a) => runs::distortion(ctx, a),
        Command::Subdivide(a) => runs::subdivide(ctx, a),
        Command::SbeEstimate(a) => runs::sbe_estimate(ctx, a),
        Command::Extend(a) => runs::extend(ctx, a),
        Command::VerifySuite(a) => suite::verify_suite(ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        out: cli
            .out
            .clone()
            .or_else(|| cfg.out.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out")),
        threads: cli.threads.or(cfg.threads).unwrap_or(1),
        cfg,
    };
    let start = Instant::now();
    match dispatch(&cli, &ctx) {
        Ok(run) => {
            let wall_ms = start.elapsed().as_millis();
            if let Err(e) = report::emit(&ctx.out, &run, ctx.seed, wall_ms) {
                eprintln!("error: writing artifacts to {}: {e}", ctx.out.display());
                return ExitCode::from(2);
            }
            if run.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
